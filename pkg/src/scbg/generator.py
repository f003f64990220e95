"""Courtesy-conditioned trajectory generator for agent B and its training loop."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .core import Observation, Scenario, Trajectory
from .courtesy import GROUND_TRUTH, LabeledSample, RewardSpec, expected_reward, group_by_scenario
from .nn import Mlp, Node
from .predictor import RES_SCALE, FEATURE_VERSION, PredictorModel, SceneArrays

log = logging.getLogger(__name__)

PSI_SCALE = 2.0  # m/s; psi is divided by this before entering the decoder


@dataclass
class ScbgTrainConfig:
    alpha: float = 0.5
    beta: float = 0.1
    huber_delta: float = 1.0
    M: int = 4
    split_threshold: float = 2.0
    batch_size: int = 32
    steps: int = 3000
    lr: float = 1e-3
    hidden: int = 128
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.M < 0:
            raise ValueError("M must be non-negative")


class GeneratorModel:
    """Frozen scene encoder (copied from the predictor) plus a trainable decoder.

    The decoder sees ``[embedding, psi / PSI_SCALE]`` and emits one trajectory
    as a residual over B's constant-velocity extrapolation.
    """

    def __init__(self, encoder: Mlp, decoder: Mlp, T: int, H: int, dt: float = 0.5, psi_scale: float = PSI_SCALE):
        if decoder.in_dim != encoder.out_dim + 1:
            raise nn.ShapeError("decoder input must be the embedding plus one courtesy feature")
        if decoder.out_dim != 2 * T:
            raise nn.ShapeError(f"decoder must emit 2T={2 * T} values, got {decoder.out_dim}")
        self.encoder = encoder
        self.decoder = decoder
        self.T, self.H, self.dt = T, H, dt
        self.psi_scale = psi_scale
        self.train_log: list[dict] = []
        self.validation_loss: tuple[float, float] | None = None

    @classmethod
    def from_predictor(cls, predictor: PredictorModel, hidden: int = 128, seed: int = 0) -> "GeneratorModel":
        rng = np.random.default_rng([seed, 2])
        encoder = predictor.scene_encoder.copy(name="encoder")
        embed = encoder.out_dim
        decoder = Mlp.init([embed + 1, hidden, hidden, 2 * predictor.T], rng, final="linear", name="gen")
        # start from the constant-velocity extrapolation
        last = decoder.layers[-1]
        last.weight.value = last.weight.value * 0.1
        return cls(encoder, decoder, predictor.T, predictor.H, predictor.dt)

    @property
    def params(self) -> list[Node]:
        return self.decoder.params

    def embed(self, arrays: SceneArrays) -> np.ndarray:
        # encoder is frozen: evaluate once, no graph
        return self.encoder(arrays.feats["B"]).value

    def decode(self, embedding: np.ndarray, cv_b: np.ndarray, psi) -> Node:
        psi = nn.as_node(psi)
        n = embedding.shape[0]
        h = nn.concat([embedding, nn.reshape(psi * (1.0 / self.psi_scale), (n, 1))], axis=-1)
        resid = nn.reshape(self.decoder(h), (n, self.T, 2))
        return resid * RES_SCALE + cv_b

    def generate_batch(self, arrays: SceneArrays, psi) -> Node:
        return self.decode(self.embed(arrays), arrays.cv["B"], psi)

    def header(self) -> dict:
        return {
            "kind": "generator",
            "T": self.T,
            "H": self.H,
            "dt": self.dt,
            "psi_scale": self.psi_scale,
            "feature_version": FEATURE_VERSION,
            "encoder": self.encoder.arch(),
            "decoder": self.decoder.arch(),
        }

    def save(self, path, meta: dict | None = None) -> None:
        nn.save_checkpoint(path, self.header(), self.encoder.params + self.decoder.params, meta)

    @classmethod
    def load(cls, path) -> "GeneratorModel":
        data = nn.load_checkpoint(path)
        arch, flat = data["arch"], data["params"]
        if arch.get("kind") != "generator":
            raise ValueError(f"{path}: not a generator checkpoint")
        n_enc = 2 * len(arch["encoder"])
        enc = Mlp.from_dict({"arch": arch["encoder"], "params": flat[:n_enc]}, name="encoder")
        dec = Mlp.from_dict({"arch": arch["decoder"], "params": flat[n_enc:]}, name="gen")
        return cls(enc, dec, arch["T"], arch["H"], arch["dt"], arch["psi_scale"])


def generate(model: GeneratorModel, x: Observation, psi: float) -> Trajectory:
    arrays = SceneArrays.build([x], model.T)
    out = model.generate_batch(arrays, np.array([float(psi)]))
    return Trajectory(out.value[0], model.dt)


# ---------------------------------------------------------------------------
# losses


def _points(t):
    return t.points if isinstance(t, Trajectory) else t


def huber(a, b, delta: float = 1.0) -> Node:
    """Mean Huber penalty over points and coordinates; batched over leading dims."""
    a, b = nn.as_node(_points(a)), nn.as_node(_points(b))
    if a.shape[-2:] != b.shape[-2:]:
        raise nn.ShapeError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return nn.huber(a - b, delta).mean(axis=(-2, -1))


def traj_loss(gt: LabeledSample, aug: Sequence[LabeledSample], preds: Sequence, alpha: float, delta: float = 1.0) -> Node:
    """Ground-truth term plus ``alpha`` times the augmented terms; ``preds[0]`` matches ``gt``."""
    if len(preds) != 1 + len(aug):
        raise ValueError(f"{len(preds)} generated trajectories for {1 + len(aug)} labeled samples")
    loss = huber(gt.trajectory, preds[0], delta)
    for sample, pred in zip(aug, preds[1:]):
        loss = loss + alpha * huber(sample.trajectory, pred, delta)
    return loss


def courtesy_loss(
    x: Observation, samples: Sequence[LabeledSample], preds: Sequence, predictor: PredictorModel, reward: RewardSpec = RewardSpec()
) -> Node:
    """Sum over samples of (labeled psi - courtesy of the generated trajectory)^2."""
    if len(preds) != len(samples):
        raise ValueError(f"{len(preds)} generated trajectories for {len(samples)} labeled samples")
    n = len(samples)
    arrays = SceneArrays.build([x], predictor.T).take(np.zeros(n, dtype=int))
    y = nn.concat([nn.reshape(nn.as_node(_points(p)), (1, predictor.T, 2)) for p in preds], axis=0)
    target = np.array([s.psi for s in samples])
    realized = _courtesy_rows(predictor, arrays, y, reward)
    return nn.square(realized - target).sum()


def _courtesy_rows(predictor: PredictorModel, arrays: SceneArrays, y_b: Node, reward: RewardSpec, marginal=None) -> Node:
    # the marginal term does not depend on y_b, so it enters as a constant
    if marginal is None:
        marginal = expected_reward(predictor.marginal(arrays, "A"), reward).value
    return expected_reward(predictor.conditional(arrays, y_b), reward) - marginal


def total_loss(traj, court, beta: float) -> Node:
    return nn.as_node(traj) + beta * nn.as_node(court)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingData:
    """Labeled samples arranged as dense arrays: row n is a scenario, column m a sample."""

    scenario_ids: list[str]
    arrays: SceneArrays
    traj: np.ndarray  # (N, 1+M, T, 2)
    psi: np.ndarray  # (N, 1+M)
    marginal_reward: np.ndarray  # (N,)

    @classmethod
    def build(cls, labeled: Sequence[LabeledSample], scenarios: Sequence[Scenario], predictor: PredictorModel, M: int, reward: RewardSpec) -> "TrainingData":
        groups = group_by_scenario(labeled)
        by_id = {s.id: s for s in scenarios}
        ids = [sid for sid in groups if sid in by_id]
        missing = [sid for sid in groups if sid not in by_id]
        if missing:
            raise ValueError(f"labeled samples refer to unknown scenarios, e.g. {missing[:3]}")
        if not ids:
            raise ValueError("no labeled samples")
        for sid in ids:
            g = groups[sid]
            if g[0].source != GROUND_TRUTH or len(g) < M + 1:
                raise ValueError(f"scenario {sid}: need a ground-truth sample and {M} augmented ones, have {len(g)}")
        arrays = SceneArrays.build([by_id[sid].observation for sid in ids], predictor.T)
        traj = np.stack([np.stack([s.trajectory.points for s in groups[sid][: M + 1]]) for sid in ids])
        psi = np.array([[s.psi for s in groups[sid][: M + 1]] for sid in ids])
        marg = expected_reward(predictor.marginal(arrays, "A"), reward).value
        return cls(ids, arrays, traj, psi, marg)

    def __len__(self) -> int:
        return len(self.scenario_ids)


def stratified_batches(psi0: np.ndarray, threshold: float, batch_size: int, rng: np.random.Generator):
    """Yield index batches with half the rows from ``|psi0| >= threshold`` and half from below.

    Falls back to uniform sampling (with a warning) when either stratum is empty.
    """
    high = np.flatnonzero(np.abs(psi0) >= threshold)
    low = np.flatnonzero(np.abs(psi0) < threshold)
    n = len(psi0)
    if len(high) == 0 or len(low) == 0:
        warnings.warn(
            f"courtesy stratum empty (high={len(high)}, low={len(low)}); sampling batches uniformly", stacklevel=2
        )
        while True:
            yield rng.choice(n, size=min(batch_size, n), replace=False)
    n_high = (batch_size + 1) // 2
    n_low = batch_size // 2
    while True:
        h = rng.choice(high, size=n_high, replace=n_high > len(high))
        l = rng.choice(low, size=n_low, replace=n_low > len(low))
        yield np.concatenate([h, l])


def batch_losses(model: GeneratorModel, predictor: PredictorModel, data: TrainingData, idx: np.ndarray, embedding: np.ndarray, config: ScbgTrainConfig, reward: RewardSpec):
    """(L_traj, L_court, L) averaged over the scenarios in ``idx``."""
    M1 = config.M + 1
    nb = len(idx)
    rows = np.repeat(idx, M1)
    psi = data.psi[idx].reshape(-1)
    cv = data.arrays.cv["B"][rows]
    pred = model.decode(embedding[rows], cv, psi)
    target = data.traj[idx].reshape(nb * M1, model.T, 2)
    weights = np.tile(np.r_[1.0, np.full(config.M, config.alpha)], nb)
    l_traj = (huber(target, pred, config.huber_delta) * weights).sum() * (1.0 / nb)
    if config.beta > 0:
        realized = _courtesy_rows(predictor, data.arrays.take(rows), pred, reward, data.marginal_reward[rows])
        l_court = nn.square(realized - psi).sum() * (1.0 / nb)
    else:
        l_court = Node(0.0)
    return l_traj, l_court, total_loss(l_traj, l_court, config.beta)


def train_scbg(
    labeled: Sequence[LabeledSample],
    scenarios: Sequence[Scenario],
    predictor: PredictorModel,
    config: ScbgTrainConfig | None = None,
    reward: RewardSpec = RewardSpec(),
    validation: tuple[Sequence[LabeledSample], Sequence[Scenario]] | None = None,
) -> GeneratorModel:
    """Train the decoder on labeled samples; the predictor stays frozen throughout."""
    config = config or ScbgTrainConfig()
    data = TrainingData.build(labeled, scenarios, predictor, config.M, reward)
    model = GeneratorModel.from_predictor(predictor, config.hidden, config.seed)
    embedding = model.embed(data.arrays)
    val_data, val_emb = data, embedding
    if validation is not None:
        val_data = TrainingData.build(validation[0], validation[1], predictor, config.M, reward)
        val_emb = model.embed(val_data.arrays)
    all_val = np.arange(len(val_data))

    def val_loss() -> float:
        return float(batch_losses(model, predictor, val_data, all_val, val_emb, config, reward)[2].value)

    init = val_loss()
    rng = np.random.default_rng([config.seed, 3])
    batches = stratified_batches(data.psi[:, 0], config.split_threshold, config.batch_size, rng)
    opt = nn.Adam(lr=config.lr)
    params = model.params
    for step in range(config.steps):
        idx = next(batches)
        l_traj, l_court, loss = batch_losses(model, predictor, data, idx, embedding, config, reward)
        if not np.isfinite(loss.value):
            raise nn.TrainingError(f"generator loss diverged at step {step}")
        grads = nn.backward(loss, params)
        opt.lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
        opt.step(params, grads)
        if step % config.log_every == 0 or step == config.steps - 1:
            model.train_log.append(
                {"step": step, "L_traj": float(l_traj.value), "L_court": float(l_court.value), "L": float(loss.value)}
            )
    final = val_loss()
    model.validation_loss = (init, final)
    log.info("generator validation loss %.4f -> %.4f", init, final)
    return model


def write_train_log(rows: Sequence[dict], path, fields: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
