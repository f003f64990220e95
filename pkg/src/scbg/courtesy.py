"""Courtesy of agent B's future: the shift it causes in agent A's expected reward.

``psi(y_b) = E[r(Y_A) | x, y_b] - E[r(Y_A) | x]``, with both expectations taken
under the predictor's mixtures. The default estimator weights the reward of
each component mean, which keeps the label differentiable in ``y_b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import nn
from .core import Observation, Scenario, Trajectory
from .nn import Node
from .predictor import COHERENT, GmmTrajectoryDistribution, PredictorModel, SceneArrays, sample_array

AVERAGE_SPEED = "AVERAGE_SPEED"
GROUND_TRUTH = "GROUND_TRUTH"
AUGMENTED = "AUGMENTED"


@dataclass(frozen=True)
class RewardSpec:
    kind: str = AVERAGE_SPEED
    eps: float = 1e-12  # m^2, smooths the norm at zero displacement

    def __post_init__(self):
        if self.kind != AVERAGE_SPEED:
            raise ValueError(f"unknown reward kind {self.kind!r}")

    def __call__(self, points, dt: float) -> Node:
        return average_speed_node(points, dt, self.eps)


@dataclass(frozen=True)
class MonteCarlo:
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Monte-Carlo sample count must be at least 1, got {self.n}")


MEANS = "MEANS"


def average_speed_node(points, dt: float, eps: float = 1e-12) -> Node:
    """Path length over duration for trajectories of shape (..., T, 2)."""
    p = nn.as_node(points)
    T = p.shape[-2]
    step = p[..., 1:, :] - p[..., :-1, :]
    dist = nn.sqrt(nn.square(step).sum(axis=-1) + eps)
    return dist.sum(axis=-1) * (1.0 / ((T - 1) * dt))


def reward_average_speed(traj: Trajectory) -> float:
    steps = np.diff(traj.points, axis=0)
    return float(np.linalg.norm(steps, axis=1).sum() / ((traj.T - 1) * traj.dt))


def expected_reward(dist: GmmTrajectoryDistribution, reward: RewardSpec = RewardSpec(), mode=MEANS) -> Node:
    """Expected reward under ``dist``; batched over any leading dims.

    ``MEANS`` returns ``sum_k w_k r(mu_k)`` and is differentiable.
    ``MonteCarlo(n, seed)`` averages the reward over ``n`` draws (a constant
    Node, meant as an evaluation oracle).
    """
    if isinstance(mode, MonteCarlo):
        if dist.weights.ndim != 1:
            raise ValueError("Monte-Carlo expectation expects a single (unbatched) distribution")
        rng = np.random.default_rng(mode.seed)
        total, done = 0.0, 0
        while done < mode.n:
            chunk = min(10_000, mode.n - done)
            draws = sample_array(dist.weights.value, dist.means.value, dist.variances.value, chunk, rng)
            total += float(reward(draws, dist.dt).value.sum())
            done += chunk
        return Node(total / mode.n)
    if mode != MEANS:
        raise ValueError(f"unknown expectation mode {mode!r}")
    return (dist.weights * reward(dist.means, dist.dt)).sum(axis=-1)


def courtesy_from_distributions(
    conditional: GmmTrajectoryDistribution, marginal: GmmTrajectoryDistribution, reward: RewardSpec = RewardSpec()
) -> Node:
    return expected_reward(conditional, reward) - expected_reward(marginal, reward)


def courtesy_batch(model: PredictorModel, arrays: SceneArrays, y_b, reward: RewardSpec = RewardSpec()) -> Node:
    """Courtesy of each row's ``y_b`` (N, T, 2); differentiable in ``y_b``, parameters held fixed."""
    return courtesy_from_distributions(model.conditional(arrays, y_b), model.marginal(arrays, "A"), reward)


def courtesy_label(model: PredictorModel, x: Observation, y_b, reward: RewardSpec = RewardSpec()) -> Node:
    """Scalar courtesy of ``y_b`` (Trajectory, array, or Node of shape (T, 2)) in scene ``x``."""
    if isinstance(y_b, Trajectory):
        y_b = y_b.points
    y_b = nn.as_node(y_b)
    if y_b.shape != (model.T, 2):
        raise nn.ShapeError(f"y_b must have shape ({model.T}, 2), got {y_b.shape}")
    arrays = SceneArrays.build([x], model.T)
    return courtesy_batch(model, arrays, nn.reshape(y_b, (1, model.T, 2)), reward)[0]


def courtesy_values(
    model: PredictorModel, arrays: SceneArrays, rows: np.ndarray, y_b: np.ndarray, reward: RewardSpec = RewardSpec()
) -> np.ndarray:
    """Numeric courtesy for ``y_b[i]`` in scene ``rows[i]``.

    Rows are evaluated one at a time so a value never depends on what else is in
    the batch: relabeling the same trajectory reproduces its label bit for bit.
    """
    out = np.empty(len(rows))
    for i, (r, y) in enumerate(zip(rows, y_b)):
        out[i] = courtesy_batch(model, arrays.take([r]), y[None], reward).value[0]
    return out


# ---------------------------------------------------------------------------
# labeling


@dataclass(frozen=True)
class LabeledSample:
    scenario_id: str
    m: int
    trajectory: Trajectory
    psi: float
    source: str

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "m": self.m,
            "source": self.source,
            "psi": self.psi,
            "trajectory": self.trajectory.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, dt: float) -> "LabeledSample":
        if d["source"] not in (GROUND_TRUTH, AUGMENTED):
            raise ValueError(f"unknown sample source {d['source']!r}")
        psi = float(d["psi"])
        if not np.isfinite(psi):
            raise ValueError(f"non-finite psi for {d['scenario_id']}/{d['m']}")
        return cls(d["scenario_id"], int(d["m"]), Trajectory(np.asarray(d["trajectory"]), dt), psi, d["source"])


def save_labels(samples: Iterable[LabeledSample], path, meta: dict | None = None) -> None:
    """One JSON object per line; ``meta`` keys are appended to every line."""
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps({**s.to_dict(), **(meta or {})}) + "\n")


def load_labels(path, dt: float = 0.5) -> list[LabeledSample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(LabeledSample.from_dict(json.loads(line), dt))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad labeled sample: {exc}") from None
    return out


def augment(
    model: PredictorModel,
    scenarios: Sequence[Scenario],
    m: int,
    seed: int,
    arrays: SceneArrays | None = None,
    noise: str = COHERENT,
) -> np.ndarray:
    """``m`` draws of B's future per scenario from the marginal predictor, (N, m, T, 2).

    ``noise=COHERENT`` shifts a whole drawn trajectory by one scaled offset, which keeps it as
    smooth as the component mean; ``PER_STEP`` samples every step independently.
    """
    if arrays is None:
        arrays = SceneArrays.build([s.observation for s in scenarios], model.T)
    out = np.empty((len(scenarios), m, model.T, 2))
    if m == 0:
        return out
    dist = model.marginal(arrays, "B")
    w, mu, var = dist.weights.value, dist.means.value, dist.variances.value
    for i in range(len(scenarios)):
        rng = np.random.default_rng([seed, i])
        out[i] = sample_array(w[i], mu[i], var[i], m, rng, noise)
    return out


def label_dataset(
    model: PredictorModel,
    scenarios: Sequence[Scenario],
    reward: RewardSpec = RewardSpec(),
    m: int = 4,
    seed: int = 0,
    noise: str = COHERENT,
) -> list[LabeledSample]:
    """Ground-truth future of B plus ``m`` marginal samples per scenario, each with its courtesy."""
    if m < 0:
        raise ValueError(f"augmentation count must be non-negative, got {m}")
    if not scenarios:
        return []
    arrays = SceneArrays.build([s.observation for s in scenarios], model.T)
    aug = augment(model, scenarios, m, seed, arrays, noise)
    trajs = np.concatenate([np.stack([s.future_b.points for s in scenarios])[:, None], aug], axis=1)
    n = len(scenarios)
    rows = np.repeat(np.arange(n), m + 1)
    psi = courtesy_values(model, arrays, rows, trajs.reshape(n * (m + 1), model.T, 2), reward).reshape(n, m + 1)
    dt = model.dt
    samples = []
    for i, s in enumerate(scenarios):
        for j in range(m + 1):
            samples.append(
                LabeledSample(s.id, j, Trajectory(trajs[i, j], dt), float(psi[i, j]), GROUND_TRUTH if j == 0 else AUGMENTED)
            )
    return samples


def group_by_scenario(samples: Iterable[LabeledSample]) -> dict[str, list[LabeledSample]]:
    groups: dict[str, list[LabeledSample]] = {}
    for s in samples:
        groups.setdefault(s.scenario_id, []).append(s)
    for g in groups.values():
        g.sort(key=lambda s: s.m)
    return groups


def courtesy_histogram(samples, bins: int = 21) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-width bin counts over [min, max]; accepts LabeledSamples or raw values."""
    values = np.array([s.psi if isinstance(s, LabeledSample) else s for s in samples], dtype=np.float64)
    if values.size == 0:
        raise ValueError("histogram of an empty sample")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return np.array([values.size]), np.array([lo - 0.5, hi + 0.5])
    return np.histogram(values, bins=bins, range=(lo, hi))


def mode_bin(counts: np.ndarray, edges: np.ndarray) -> tuple[float, float]:
    k = int(np.argmax(counts))
    return float(edges[k]), float(edges[k + 1])
