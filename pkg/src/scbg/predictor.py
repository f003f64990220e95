"""Dual-mode GMM trajectory predictor.

One network serves both modes. The scene encoder embeds the observation; in
conditional mode a future encoder embeds agent B's planned future and the two
embeddings are summed. In marginal mode the future embedding is exact zeros,
so the decoder sees the bare scene embedding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .core import DatasetSplit, Observation, Scenario, Trajectory
from .nn import Mlp, Node

log = logging.getLogger(__name__)

FEATURE_VERSION = 1
POS_SCALE = 10.0  # m; divides local coordinates before they enter a network
RES_SCALE = 5.0  # m; scale of decoder residuals over constant velocity
VAR_FLOOR = 1e-3  # m^2
MAX_EXTRA = 2
MAX_POLYLINES = 4
MAP_TAGS = ("lane_center", "road_edge", "stop_line")
TARGETS = ("A", "B")


def feature_dim(H: int) -> int:
    return 4 * H + len(TARGETS) + 5 * MAX_EXTRA + 4 * MAX_POLYLINES + len(MAP_TAGS)


# ---------------------------------------------------------------------------
# featurization


def _nearest_on_polyline(point: np.ndarray, pts: np.ndarray) -> np.ndarray:
    if len(pts) == 1:
        return pts[0]
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    t = np.clip(((point - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return proj[np.argmin(((proj - point) ** 2).sum(axis=1))]


def _velocity(points: np.ndarray, dt: float) -> np.ndarray:
    k = min(3, len(points) - 1)
    return (points[-1] - points[-1 - k]) / (k * dt)


def featurize(obs: Observation, target: str) -> np.ndarray:
    """Origin-centred feature vector (origin = A's current position)."""
    if target not in TARGETS:
        raise ValueError(f"target must be one of {TARGETS}, got {target!r}")
    origin = obs.history_a.points[-1]
    dt = obs.dt
    parts = [
        ((obs.history_a.points - origin) / POS_SCALE).ravel(),
        ((obs.history_b.points - origin) / POS_SCALE).ravel(),
        np.array([target == "A", target == "B"], dtype=np.float64),
    ]
    extras = sorted(obs.extra_agents, key=lambda t: float(np.linalg.norm(t.points[-1] - origin)))[:MAX_EXTRA]
    block = np.zeros((MAX_EXTRA, 5))
    for i, agent in enumerate(extras):
        block[i, :2] = (agent.points[-1] - origin) / POS_SCALE
        block[i, 2:4] = _velocity(agent.points, dt) / POS_SCALE
        block[i, 4] = 1.0
    parts.append(block.ravel())
    lines = np.zeros((MAX_POLYLINES, 4))
    for i, poly in enumerate(obs.map_polylines[:MAX_POLYLINES]):
        lines[i, :2] = (_nearest_on_polyline(origin, poly.points) - origin) / POS_SCALE
        pb = obs.history_b.points[-1]
        lines[i, 2:] = (_nearest_on_polyline(pb, poly.points) - pb) / POS_SCALE
    parts.append(lines.ravel())
    tags = [p.tag for p in obs.map_polylines]
    parts.append(np.array([tags.count(t) / MAX_POLYLINES for t in MAP_TAGS]))
    return np.concatenate(parts)


def cv_baseline(history: Trajectory, T: int) -> np.ndarray:
    """Constant-velocity extrapolation of a history, (T, 2) in world coordinates."""
    v = _velocity(history.points, history.dt)
    steps = np.arange(1, T + 1, dtype=np.float64)[:, None] * history.dt
    return history.points[-1] + steps * v


@dataclass
class SceneArrays:
    """Stacked per-scenario inputs, computed once and reused across training steps."""

    feats: dict  # target -> (N, F)
    origin: np.ndarray  # (N, 2)
    cv: dict  # target -> (N, T, 2), world frame
    T: int
    dt: float

    @classmethod
    def build(cls, observations: Sequence[Observation], T: int) -> "SceneArrays":
        feats = {t: np.stack([featurize(o, t) for o in observations]) for t in TARGETS}
        origin = np.stack([o.history_a.points[-1] for o in observations])
        cv = {
            "A": np.stack([cv_baseline(o.history_a, T) for o in observations]),
            "B": np.stack([cv_baseline(o.history_b, T) for o in observations]),
        }
        return cls(feats, origin, cv, T, observations[0].dt)

    def take(self, idx) -> "SceneArrays":
        idx = np.asarray(idx)
        return SceneArrays(
            {k: v[idx] for k, v in self.feats.items()},
            self.origin[idx],
            {k: v[idx] for k, v in self.cv.items()},
            self.T,
            self.dt,
        )

    def __len__(self) -> int:
        return len(self.origin)


# ---------------------------------------------------------------------------
# distributions


@dataclass
class GmmTrajectoryDistribution:
    """Mixture over trajectories; leading dims (if any) index a batch.

    Shapes: ``weights`` (..., K); ``means`` and ``variances`` (..., K, T, 2).
    """

    weights: Node
    means: Node
    variances: Node
    log_weights: Node
    dt: float = 0.5

    @classmethod
    def from_arrays(cls, weights, means, variances, dt: float = 0.5) -> "GmmTrajectoryDistribution":
        w = np.asarray(weights, dtype=np.float64)
        return cls(Node(w), Node(means), Node(variances), Node(np.log(w)), dt)

    @property
    def K(self) -> int:
        return self.weights.shape[-1]

    @property
    def T(self) -> int:
        return self.means.shape[-2]

    def __getitem__(self, i) -> "GmmTrajectoryDistribution":
        return GmmTrajectoryDistribution(
            self.weights[i], self.means[i], self.variances[i], self.log_weights[i], self.dt
        )

    def top_mean(self) -> np.ndarray:
        """Mean trajectory of the highest-weight component, (..., T, 2)."""
        k = np.argmax(self.weights.value, axis=-1)
        return np.take_along_axis(self.means.value, k[..., None, None, None], axis=-3)[..., 0, :, :]


def gmm_nll(dist: GmmTrajectoryDistribution, traj) -> Node:
    """Negative log-likelihood of trajectories under the mixture, one value per batch entry.

    ``traj`` is a :class:`Trajectory`, an array, or a Node of shape (..., T, 2).
    """
    y = traj.points if isinstance(traj, Trajectory) else traj
    y = nn.as_node(y)
    if y.shape[-2:] != dist.means.shape[-2:]:
        raise nn.ShapeError(f"trajectory shape {y.shape} does not match mixture {dist.means.shape}")
    diff = dist.means - nn.reshape(y, y.shape[:-2] + (1,) + y.shape[-2:])
    per_dim = nn.square(diff) / dist.variances + nn.log(dist.variances * (2.0 * math.pi))
    comp = dist.log_weights - 0.5 * per_dim.sum(axis=(-2, -1))
    return -nn.logsumexp(comp, axis=-1)


def sample_trajectories(dist: GmmTrajectoryDistribution, m: int, seed) -> list[Trajectory]:
    """Draw ``m`` trajectories: component by weight, then independent Gaussians per coordinate."""
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    if dist.weights.ndim != 1:
        raise ValueError("sample_trajectories expects a single (unbatched) distribution")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [Trajectory(p, dist.dt) for p in sample_array(dist.weights.value, dist.means.value, dist.variances.value, m, rng)]


PER_STEP = "per_step"
COHERENT = "coherent"


def sample_array(weights, means, variances, m: int, rng: np.random.Generator, noise: str = PER_STEP) -> np.ndarray:
    """Draw ``m`` trajectories. ``coherent`` reuses one standard-normal offset across all steps of a draw."""
    w = weights / weights.sum()
    comps = rng.choice(len(w), size=m, p=w)
    if noise == PER_STEP:
        noise = rng.standard_normal((m,) + means.shape[1:])
    elif noise == COHERENT:
        noise = rng.standard_normal((m, 1, means.shape[-1]))
    else:
        raise ValueError(f"unknown noise mode {noise!r}")
    return means[comps] + noise * np.sqrt(variances[comps])


# ---------------------------------------------------------------------------
# model


@dataclass
class PredictorConfig:
    K: int = 4
    hidden: int = 64
    embed: int = 64
    steps: int = 6000
    batch_size: int = 64
    lr: float = 3e-3
    cond_ratio: float = 0.5
    seed: int = 0
    log_every: int = 100


class PredictorModel:
    def __init__(self, scene_encoder: Mlp, future_encoder: Mlp, decoder: Mlp, K: int, T: int, H: int, dt: float = 0.5):
        if decoder.out_dim != K * (1 + 4 * T):
            raise nn.ShapeError(f"decoder emits {decoder.out_dim} values, need K*(1+4T) = {K * (1 + 4 * T)}")
        if scene_encoder.out_dim != future_encoder.out_dim or scene_encoder.out_dim != decoder.in_dim:
            raise nn.ShapeError("encoder/decoder embedding sizes disagree")
        self.scene_encoder = scene_encoder
        self.future_encoder = future_encoder
        self.decoder = decoder
        self.K, self.T, self.H, self.dt = K, T, H, dt
        self.train_log: list[dict] = []

    @classmethod
    def init(cls, K: int, T: int, H: int, dt: float, hidden: int = 64, embed: int = 64, seed: int = 0) -> "PredictorModel":
        rng = np.random.default_rng(seed)
        scene = Mlp.init([feature_dim(H), hidden, embed], rng, final="tanh", name="scene")
        future = Mlp.init([2 * T, hidden, embed], rng, final="linear", name="future")
        decoder = Mlp.init([embed, 2 * hidden, K * (1 + 4 * T)], rng, final="linear", name="decoder")
        return cls(scene, future, decoder, K, T, H, dt)

    @property
    def params(self) -> list[Node]:
        return self.scene_encoder.params + self.future_encoder.params + self.decoder.params

    def header(self) -> dict:
        return {
            "kind": "predictor",
            "K": self.K,
            "T": self.T,
            "H": self.H,
            "dt": self.dt,
            "feature_version": FEATURE_VERSION,
            "scene_encoder": self.scene_encoder.arch(),
            "future_encoder": self.future_encoder.arch(),
            "decoder": self.decoder.arch(),
        }

    def save(self, path, meta: dict | None = None) -> None:
        nn.save_checkpoint(path, self.header(), self.params, meta)

    @classmethod
    def load(cls, path) -> "PredictorModel":
        data = nn.load_checkpoint(path)
        return cls.from_checkpoint(data)

    @classmethod
    def from_checkpoint(cls, data: dict) -> "PredictorModel":
        arch = data["arch"]
        if arch.get("kind") != "predictor" or arch.get("feature_version") != FEATURE_VERSION:
            raise ValueError("not a predictor checkpoint for this feature layout")
        flat = data["params"]
        mlps = []
        offset = 0
        for name in ("scene_encoder", "future_encoder", "decoder"):
            n = 2 * len(arch[name])
            mlps.append(Mlp.from_dict({"arch": arch[name], "params": flat[offset : offset + n]}, name=name))
            offset += n
        return cls(*mlps, K=arch["K"], T=arch["T"], H=arch["H"], dt=arch["dt"])

    # -- forward ------------------------------------------------------------

    def scene_embedding(self, arrays: SceneArrays, target: str) -> Node:
        return self.scene_encoder(arrays.feats[target])

    def future_embedding(self, arrays: SceneArrays, y_b) -> Node:
        y_b = nn.as_node(y_b)
        if y_b.shape[-2:] != (self.T, 2):
            raise nn.ShapeError(f"y_b must have shape (T={self.T}, 2), got {y_b.shape[-2:]}")
        resid = (y_b - arrays.cv["B"]) * (1.0 / RES_SCALE)
        return self.future_encoder(nn.reshape(resid, (len(arrays), 2 * self.T)))

    def decode(self, embedding: Node, cv: np.ndarray) -> GmmTrajectoryDistribution:
        n = embedding.shape[0]
        K, T = self.K, self.T
        out = nn.reshape(self.decoder(embedding), (n, K, 1 + 4 * T))
        logits = out[:, :, 0]
        resid = nn.reshape(out[:, :, 1 : 1 + 2 * T], (n, K, T, 2))
        raw_var = nn.reshape(out[:, :, 1 + 2 * T :], (n, K, T, 2))
        means = resid * RES_SCALE + cv[:, None, :, :]
        variances = nn.softplus(raw_var) + VAR_FLOOR
        log_w = logits - nn.reshape(nn.logsumexp(logits, axis=-1), (n, 1))
        return GmmTrajectoryDistribution(nn.softmax(logits, axis=-1), means, variances, log_w, self.dt)

    def marginal(self, arrays: SceneArrays, target: str = "A") -> GmmTrajectoryDistribution:
        emb = self.scene_embedding(arrays, target)
        zeros = np.zeros(emb.shape)
        return self.decode(emb + zeros, arrays.cv[target])

    def conditional(self, arrays: SceneArrays, y_b) -> GmmTrajectoryDistribution:
        emb = self.scene_embedding(arrays, "A")
        return self.decode(emb + self.future_embedding(arrays, y_b), arrays.cv["A"])


def predict_marginal(model: PredictorModel, x: Observation, target: str = "A") -> GmmTrajectoryDistribution:
    return model.marginal(SceneArrays.build([x], model.T), target)[0]


def predict_conditional(model: PredictorModel, x: Observation, y_b) -> GmmTrajectoryDistribution:
    """Mixture over A's future given B's future ``y_b`` (Trajectory, array, or Node of shape (T, 2))."""
    if isinstance(y_b, Trajectory):
        y_b = y_b.points
    y_b = nn.as_node(y_b)
    if y_b.shape != (model.T, 2):
        raise nn.ShapeError(f"y_b must have shape ({model.T}, 2), got {y_b.shape}")
    arrays = SceneArrays.build([x], model.T)
    return model.conditional(arrays, nn.reshape(y_b, (1, model.T, 2)))[0]


# ---------------------------------------------------------------------------
# training


def _gt(scenarios: Sequence[Scenario], agent: str) -> np.ndarray:
    return np.stack([(s.future_a if agent == "A" else s.future_b).points for s in scenarios])


def batch_nll(model: PredictorModel, arrays: SceneArrays, gt_a, gt_b, mode: str, targets=None) -> Node:
    if mode == "conditional":
        return nn.mean(gmm_nll(model.conditional(arrays, gt_b), gt_a))
    # marginal: each row predicts either A or B
    if targets is None:
        return nn.mean(gmm_nll(model.marginal(arrays, "A"), gt_a))
    losses = []
    for t, gt in (("A", gt_a), ("B", gt_b)):
        idx = np.flatnonzero(targets == t)
        if len(idx):
            losses.append(gmm_nll(model.marginal(arrays.take(idx), t), gt[idx]).sum())
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    return total * (1.0 / len(targets))


def validation_nll(model: PredictorModel, scenarios: Sequence[Scenario]) -> dict:
    arrays = SceneArrays.build([s.observation for s in scenarios], model.T)
    gt_a, gt_b = _gt(scenarios, "A"), _gt(scenarios, "B")
    return {
        "marginal_a": float(nn.mean(gmm_nll(model.marginal(arrays, "A"), gt_a)).value),
        "marginal_b": float(nn.mean(gmm_nll(model.marginal(arrays, "B"), gt_b)).value),
        "conditional_a": float(nn.mean(gmm_nll(model.conditional(arrays, gt_b), gt_a)).value),
    }


def train_predictor(split: DatasetSplit, config: PredictorConfig | None = None) -> PredictorModel:
    """Fit both modes jointly, alternating marginal and conditional minibatches."""
    config = config or PredictorConfig()
    train = split.train
    if not train:
        raise ValueError("training set is empty")
    T, H, dt = train[0].T, train[0].observation.H, train[0].dt
    model = PredictorModel.init(config.K, T, H, dt, config.hidden, config.embed, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    arrays = SceneArrays.build([s.observation for s in train], T)
    gt_a, gt_b = _gt(train, "A"), _gt(train, "B")
    val = split.validation or train
    init_nll = validation_nll(model, val)
    opt = nn.Adam(lr=config.lr)
    params = model.params
    n = len(train)
    bs = min(config.batch_size, n)
    for step in range(config.steps):
        idx = rng.choice(n, size=bs, replace=False)
        batch = arrays.take(idx)
        if rng.uniform() < config.cond_ratio:
            mode, targets = "conditional", None
        else:
            mode, targets = "marginal", np.where(rng.uniform(size=bs) < 0.5, "A", "B")
        loss = batch_nll(model, batch, gt_a[idx], gt_b[idx], mode, targets)
        if not np.isfinite(loss.value):
            raise nn.TrainingError(f"predictor loss diverged at step {step} ({mode} batch)")
        grads = nn.backward(loss, params)
        # cosine decay keeps late steps from bouncing
        opt.lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
        opt.step(params, grads)
        if step % config.log_every == 0 or step == config.steps - 1:
            model.train_log.append({"step": step, "mode": mode, "loss": float(loss.value)})
    final_nll = validation_nll(model, val)
    model.train_log.append({"step": config.steps, "mode": "validation", "init": init_nll, "final": final_nll})
    log.info("predictor validation NLL %s -> %s", init_nll, final_nll)
    return model


# ---------------------------------------------------------------------------
# metrics


def _ade(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return np.linalg.norm(pred - gt, axis=-1).mean(axis=-1)


def prediction_metrics(model: PredictorModel, scenarios: Sequence[Scenario], target: str = "A", mode: str = "marginal") -> dict:
    """ADE of the top-weight mean; minADE/minFDE over all component means."""
    if not scenarios:
        raise ValueError("no scenarios to evaluate")
    arrays = SceneArrays.build([s.observation for s in scenarios], model.T)
    gt = _gt(scenarios, target)
    if mode == "conditional":
        if target != "A":
            raise ValueError("conditional mode predicts agent A only")
        dist = model.conditional(arrays, _gt(scenarios, "B"))
    else:
        dist = model.marginal(arrays, target)
    means = dist.means.value
    ade = _ade(dist.top_mean(), gt)
    comp_ade = _ade(means, gt[:, None])
    comp_fde = np.linalg.norm(means[:, :, -1] - gt[:, None, -1], axis=-1)
    return {
        "ade": float(ade.mean()),
        "min_ade": float(comp_ade.min(axis=1).mean()),
        "min_fde": float(comp_fde.min(axis=1).mean()),
        "n": len(scenarios),
    }


def constant_velocity_ade(scenarios: Sequence[Scenario], target: str = "A") -> float:
    errs = []
    for s in scenarios:
        hist = s.observation.history_a if target == "A" else s.observation.history_b
        fut = s.future_a if target == "A" else s.future_b
        errs.append(_ade(cv_baseline(hist, s.T), fut.points))
    return float(np.mean(errs))
