"""Per-scenario courtesy range: 0.1/0.9 quantile regression on a frozen encoder."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .core import Observation, Scenario
from .courtesy import LabeledSample, group_by_scenario
from .nn import Mlp, Node
from .predictor import FEATURE_VERSION, SceneArrays

log = logging.getLogger(__name__)

TAUS = (0.1, 0.9)


@dataclass(frozen=True)
class CourtesyRange:
    psi_lo: float
    psi_hi: float

    def __post_init__(self):
        if self.psi_lo > self.psi_hi:
            raise ValueError(f"range is inverted: {self.psi_lo} > {self.psi_hi}")


@dataclass
class RangeTrainConfig:
    hidden: int = 64
    steps: int = 3000
    batch_size: int = 128
    lr: float = 2e-3
    seed: int = 0
    log_every: int = 50


def pinball_loss(psi, psi_hat, tau: float) -> Node:
    """Quantile loss ``(tau - 1)(psi - psi_hat)`` below the prediction, ``tau (psi - psi_hat)`` otherwise."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return nn.pinball(nn.as_node(psi) - psi_hat, tau)


def quantile_to_courtesy(rng: CourtesyRange, q: float) -> float:
    """Affine map sending 0.1 to psi_lo and 0.9 to psi_hi, extended linearly over [0, 1]."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile must lie in [0, 1], got {q}")
    lo_q, hi_q = TAUS
    return rng.psi_lo + (q - lo_q) / (hi_q - lo_q) * (rng.psi_hi - rng.psi_lo)


class RangeModel:
    def __init__(self, encoder: Mlp, head: Mlp):
        if head.in_dim != encoder.out_dim or head.out_dim != 2:
            raise nn.ShapeError("quantile head must map the embedding to two outputs")
        self.encoder = encoder
        self.head = head
        self.train_log: list[dict] = []

    @classmethod
    def init(cls, encoder: Mlp, hidden: int = 64, seed: int = 0) -> "RangeModel":
        rng = np.random.default_rng([seed, 4])
        return cls(encoder.copy(name="encoder"), Mlp.init([encoder.out_dim, hidden, 2], rng, name="range"))

    @property
    def params(self) -> list[Node]:
        return self.head.params

    def embed(self, arrays: SceneArrays) -> np.ndarray:
        return self.encoder(arrays.feats["B"]).value

    def raw(self, arrays: SceneArrays) -> np.ndarray:
        return self.head(self.embed(arrays)).value

    def predict(self, arrays: SceneArrays) -> np.ndarray:
        """(N, 2) ordered ranges."""
        return np.sort(self.raw(arrays), axis=1)

    def header(self) -> dict:
        return {
            "kind": "range",
            "taus": list(TAUS),
            "feature_version": FEATURE_VERSION,
            "encoder": self.encoder.arch(),
            "head": self.head.arch(),
        }

    def save(self, path, meta: dict | None = None) -> None:
        nn.save_checkpoint(path, self.header(), self.encoder.params + self.head.params, meta)

    @classmethod
    def load(cls, path) -> "RangeModel":
        data = nn.load_checkpoint(path)
        arch, flat = data["arch"], data["params"]
        if arch.get("kind") != "range":
            raise ValueError(f"{path}: not a range checkpoint")
        n_enc = 2 * len(arch["encoder"])
        enc = Mlp.from_dict({"arch": arch["encoder"], "params": flat[:n_enc]}, name="encoder")
        head = Mlp.from_dict({"arch": arch["head"], "params": flat[n_enc:]}, name="range")
        return cls(enc, head)


def ordered_range(lo: float, hi: float) -> CourtesyRange:
    # the two heads are trained independently and may cross
    return CourtesyRange(min(lo, hi), max(lo, hi))


def predict_range(model: RangeModel, x: Observation) -> CourtesyRange:
    arrays = SceneArrays.build([x], 2)
    lo, hi = model.raw(arrays)[0]
    return ordered_range(float(lo), float(hi))


def train_range(
    labeled: Sequence[LabeledSample], scenarios: Sequence[Scenario], encoder: Mlp, config: RangeTrainConfig | None = None
) -> RangeModel:
    """Fit the two quantile outputs with pinball loss over every labeled sample; encoder frozen."""
    config = config or RangeTrainConfig()
    groups = group_by_scenario(labeled)
    by_id = {s.id: s for s in scenarios}
    ids = [sid for sid in groups if sid in by_id]
    if not ids:
        raise ValueError("no labeled samples match the given scenarios")
    if all(len(groups[sid]) < 2 for sid in ids):
        warnings.warn("every scenario has a single courtesy label; quantiles will be degenerate", stacklevel=2)
    model = RangeModel.init(encoder, config.hidden, config.seed)
    arrays = SceneArrays.build([by_id[sid].observation for sid in ids], 2)
    emb = model.embed(arrays)
    rows = np.concatenate([np.full(len(groups[sid]), i) for i, sid in enumerate(ids)])
    psi = np.concatenate([[s.psi for s in groups[sid]] for sid in ids])
    rng = np.random.default_rng([config.seed, 5])
    opt = nn.Adam(lr=config.lr)
    params = model.params
    n = len(psi)
    bs = min(config.batch_size, n)
    for step in range(config.steps):
        idx = rng.choice(n, size=bs, replace=False)
        out = model.head(emb[rows[idx]])
        loss = (pinball_loss(psi[idx], out[:, 0], TAUS[0]) + pinball_loss(psi[idx], out[:, 1], TAUS[1])).mean()
        if not np.isfinite(loss.value):
            raise nn.TrainingError(f"range loss diverged at step {step}")
        grads = nn.backward(loss, params)
        opt.lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
        opt.step(params, grads)
        if step % config.log_every == 0 or step == config.steps - 1:
            model.train_log.append({"step": step, "loss": float(loss.value)})
    return model


def coverage(model: RangeModel, labeled: Sequence[LabeledSample], scenarios: Sequence[Scenario]) -> dict:
    """Fraction of labels below each predicted quantile, and inside the interval."""
    groups = group_by_scenario(labeled)
    by_id = {s.id: s for s in scenarios}
    ids = [sid for sid in groups if sid in by_id]
    ranges = model.predict(SceneArrays.build([by_id[sid].observation for sid in ids], 2))
    below_lo = below_hi = inside = total = 0
    for (lo, hi), sid in zip(ranges, ids):
        psi = np.array([s.psi for s in groups[sid]])
        below_lo += int((psi <= lo).sum())
        below_hi += int((psi <= hi).sum())
        inside += int(((psi >= lo) & (psi <= hi)).sum())
        total += len(psi)
    return {"below_lo": below_lo / total, "below_hi": below_hi / total, "inside": inside / total, "n": total}


def write_range_csv(model: RangeModel, labeled: Sequence[LabeledSample], scenarios: Sequence[Scenario], path) -> None:
    """One row per scenario: id, predicted range, and its labeled courtesy values separated by ``;``."""
    groups = group_by_scenario(labeled)
    ranges = model.predict(SceneArrays.build([s.observation for s in scenarios], 2)) if scenarios else []
    with open(path, "w") as fh:
        fh.write("scenario_id,psi_lo,psi_hi,psi_labels\n")
        for s, (lo, hi) in zip(scenarios, ranges):
            psis = ";".join(repr(x.psi) for x in groups.get(s.id, []))
            fh.write(f"{s.id},{float(lo)!r},{float(hi)!r},{psis}\n")
