"""Controllability and realism metrics, courtesy input strategies, and the ablation table.

Metrics take a *generator callable* ``gen(scenario, psis) -> (len(psis), T, 2)``
so that trained models and hand-built oracles are scored by the same code.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Scenario
from .courtesy import LabeledSample, RewardSpec, courtesy_values, group_by_scenario
from .courtesy_range import CourtesyRange, RangeModel, ordered_range, quantile_to_courtesy
from .generator import GeneratorModel, ScbgTrainConfig, train_scbg
from .predictor import PredictorModel, SceneArrays

log = logging.getLogger(__name__)

DATA = "DATA"
RANGE = "RANGE"
ARBITRARY = "ARBITRARY"

Generator = Callable[[Scenario, np.ndarray], np.ndarray]


class UndefinedCorrelation(ValueError):
    pass


@dataclass(frozen=True)
class PsiStrategy:
    kind: str
    delta: float | None = None  # quantile step for RANGE, courtesy step for ARBITRARY

    def __post_init__(self):
        if self.kind == RANGE:
            if self.delta is None or not 0.0 < self.delta <= 0.8:
                raise ValueError(f"RANGE quantile step must lie in (0, 0.8], got {self.delta}")
        elif self.kind == ARBITRARY:
            if self.delta is not None and not self.delta > 0:
                raise ValueError(f"ARBITRARY courtesy step must be positive, got {self.delta}")
        elif self.kind != DATA:
            raise ValueError(f"unknown strategy {self.kind!r}")

    @property
    def label(self) -> str:
        return self.kind.lower()


def default_strategies() -> list[PsiStrategy]:
    return [PsiStrategy(DATA), PsiStrategy(RANGE, 0.2), PsiStrategy(ARBITRARY)]


@dataclass(frozen=True)
class DatasetStats:
    psi_min: float
    psi_max: float

    @classmethod
    def from_labels(cls, labels: Sequence[LabeledSample]) -> "DatasetStats":
        # ground-truth and augmented labels both count
        psi = np.array([s.psi for s in labels])
        return cls(float(psi.min()), float(psi.max()))

    def grid(self, step: float | None = None, points: int = 9) -> np.ndarray:
        if step is None:
            return np.linspace(self.psi_min, self.psi_max, points)
        n = int(np.floor((self.psi_max - self.psi_min) / step + 1e-9))
        return self.psi_min + step * np.arange(n + 1)


def quantile_grid(delta: float) -> np.ndarray:
    n = int(round(0.8 / delta))
    grid = 0.1 + delta * np.arange(n + 1)
    return grid[grid <= 0.9 + 1e-9]


def build_psi_set(
    strategy: PsiStrategy,
    scenario: Scenario,
    labels: Sequence[LabeledSample] | None = None,
    courtesy_range: CourtesyRange | None = None,
    stats: DatasetStats | None = None,
) -> np.ndarray:
    """Courtesy inputs at which one scenario is evaluated."""
    if strategy.kind == DATA:
        if not labels:
            raise ValueError(f"DATA strategy needs labeled samples for scenario {scenario.id}")
        return np.array([s.psi for s in sorted(labels, key=lambda s: s.m)])
    if strategy.kind == RANGE:
        if courtesy_range is None:
            raise ValueError("RANGE strategy needs a predicted courtesy range")
        return np.array([quantile_to_courtesy(courtesy_range, float(q)) for q in quantile_grid(strategy.delta)])
    if stats is None:
        raise ValueError("ARBITRARY strategy needs dataset courtesy extremes")
    return stats.grid(strategy.delta)


# ---------------------------------------------------------------------------
# generator adapters


def model_generator(model: GeneratorModel) -> Generator:
    def gen(scenario: Scenario, psis: np.ndarray) -> np.ndarray:
        psis = np.asarray(psis, dtype=np.float64)
        arrays = SceneArrays.build([scenario.observation], model.T).take(np.zeros(len(psis), dtype=int))
        return model.generate_batch(arrays, psis).value

    return gen


class ReplayGenerator:
    """Returns the labeled trajectory whose courtesy equals the requested value (nearest if none matches)."""

    def __init__(self, labels: Sequence[LabeledSample]):
        self.groups = group_by_scenario(labels)

    def __call__(self, scenario: Scenario, psis: np.ndarray) -> np.ndarray:
        group = self.groups[scenario.id]
        values = np.array([s.psi for s in group])
        return np.stack([group[int(np.argmin(np.abs(values - p)))].trajectory.points for p in psis])


class OffsetGenerator:
    """Wraps another generator and shifts every point by a fixed vector."""

    def __init__(self, base: Generator, offset):
        self.base = base
        self.offset = np.asarray(offset, dtype=np.float64)

    def __call__(self, scenario: Scenario, psis: np.ndarray) -> np.ndarray:
        return self.base(scenario, psis) + self.offset


# ---------------------------------------------------------------------------
# metrics


def _realized(predictor: PredictorModel, scenario: Scenario, trajs: np.ndarray, reward: RewardSpec) -> np.ndarray:
    arrays = SceneArrays.build([scenario.observation], predictor.T)
    return courtesy_values(predictor, arrays, np.zeros(len(trajs), dtype=int), trajs, reward)


@dataclass
class ScenarioRows:
    """Per-scenario metric values for one model, in scenario order."""

    ids: list[str] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def summary(self) -> tuple[float, float]:
        v = np.array(self.values)
        return float(v.mean()), float(v.std())


def courtesy_mse(
    gen: Generator,
    predictor: PredictorModel,
    scenarios: Sequence[Scenario],
    strategy: PsiStrategy,
    reward: RewardSpec = RewardSpec(),
    labels: Sequence[LabeledSample] | None = None,
    range_model: RangeModel | None = None,
    stats: DatasetStats | None = None,
) -> ScenarioRows:
    """Mean squared gap between commanded courtesy and the auto-labeled courtesy of the output."""
    if not scenarios:
        raise ValueError("courtesy_mse needs at least one scenario")
    groups = group_by_scenario(labels) if labels is not None else {}
    ranges = _ranges(range_model, scenarios) if strategy.kind == RANGE else {}
    rows = ScenarioRows()
    for s in scenarios:
        psis = build_psi_set(strategy, s, groups.get(s.id), ranges.get(s.id), stats)
        realized = _realized(predictor, s, gen(s, psis), reward)
        rows.ids.append(s.id)
        rows.values.append(float(np.mean((psis - realized) ** 2)))
    return rows


def _ranges(range_model: RangeModel | None, scenarios: Sequence[Scenario]) -> dict[str, CourtesyRange]:
    if range_model is None:
        raise ValueError("RANGE strategy needs a range model")
    raw = range_model.raw(SceneArrays.build([s.observation for s in scenarios], 2))
    return {s.id: ordered_range(float(lo), float(hi)) for s, (lo, hi) in zip(scenarios, raw)}


def ground_truth_courtesy(predictor: PredictorModel, scenarios: Sequence[Scenario], reward: RewardSpec = RewardSpec()) -> np.ndarray:
    arrays = SceneArrays.build([s.observation for s in scenarios], predictor.T)
    y_b = np.stack([s.future_b.points for s in scenarios])
    return courtesy_values(predictor, arrays, np.arange(len(scenarios)), y_b, reward)


def traj_ade(
    gen: Generator,
    predictor: PredictorModel,
    scenarios: Sequence[Scenario],
    reward: RewardSpec = RewardSpec(),
    psi0: np.ndarray | None = None,
) -> ScenarioRows:
    """ADE between B's ground truth and the trajectory generated at the ground truth's own courtesy."""
    if psi0 is None:
        psi0 = ground_truth_courtesy(predictor, scenarios, reward)
    rows = ScenarioRows()
    for s, p in zip(scenarios, psi0):
        out = gen(s, np.array([p]))[0]
        rows.ids.append(s.id)
        rows.values.append(float(np.linalg.norm(out - s.future_b.points, axis=-1).mean()))
    return rows


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if len(x) < 2 or x.std() == 0 or y.std() == 0:
        raise UndefinedCorrelation("correlation undefined for a constant or single-point pool")
    return float(np.corrcoef(x, y)[0, 1])


def quantile_sweep_correlation(
    gen: Generator,
    predictor: PredictorModel,
    range_model: RangeModel,
    scenarios: Sequence[Scenario],
    quantiles: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
    reward: RewardSpec = RewardSpec(),
    threshold: float = 2.0,
    psi0: np.ndarray | None = None,
) -> dict:
    """Pearson r between commanded quantile and realized courtesy, pooled over scenarios.

    Also reports r on the subset with ``|psi0| >= threshold``, where ``psi0`` is
    the courtesy of the ground-truth future.
    """
    q = np.asarray(quantiles, dtype=np.float64)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("quantiles must lie in [0, 1]")
    if psi0 is None:
        psi0 = ground_truth_courtesy(predictor, scenarios, reward)
    ranges = _ranges(range_model, scenarios)
    pooled_q, pooled_psi, high = [], [], []
    for s, p0 in zip(scenarios, psi0):
        psis = np.array([quantile_to_courtesy(ranges[s.id], float(v)) for v in q])
        realized = _realized(predictor, s, gen(s, psis), reward)
        pooled_q.append(q)
        pooled_psi.append(realized)
        high.append(np.full(len(q), abs(p0) >= threshold))
    qs, ps, hi = np.concatenate(pooled_q), np.concatenate(pooled_psi), np.concatenate(high)
    out = {"r": pearson(qs, ps), "n_scenarios": len(scenarios), "n_high": int(hi.sum() // len(q)), "threshold": threshold}
    out["r_high"] = pearson(qs[hi], ps[hi]) if hi.sum() >= 2 * len(q) else None
    out["per_quantile_mean"] = [float(ps[qs == v].mean()) for v in q]
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    name: str
    courtesy_mse: dict = field(default_factory=dict)  # strategy -> {"mean", "std", "n"}
    traj_ade: dict = field(default_factory=dict)
    correlation: dict | None = None
    histogram: dict | None = None
    per_scenario: dict = field(default_factory=dict)  # metric -> list of values
    scenario_ids: list[str] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_generator(
    name: str,
    gen: Generator,
    predictor: PredictorModel,
    scenarios: Sequence[Scenario],
    labels: Sequence[LabeledSample],
    range_model: RangeModel | None,
    stats: DatasetStats,
    strategies: Sequence[PsiStrategy] | None = None,
    reward: RewardSpec = RewardSpec(),
    quantiles: Sequence[float] | None = None,
    threshold: float = 2.0,
) -> EvalReport:
    strategies = list(strategies or default_strategies())
    report = EvalReport(name, scenario_ids=[s.id for s in scenarios])
    psi0 = ground_truth_courtesy(predictor, scenarios, reward)
    for strat in strategies:
        if strat.kind == RANGE and range_model is None:
            continue
        rows = courtesy_mse(gen, predictor, scenarios, strat, reward, labels, range_model, stats)
        mean, std = rows.summary()
        report.courtesy_mse[strat.label] = {"mean": mean, "std": std, "n": len(rows.values)}
        report.per_scenario[f"courtesy_mse_{strat.label}"] = rows.values
    rows = traj_ade(gen, predictor, scenarios, reward, psi0)
    mean, std = rows.summary()
    report.traj_ade = {"mean": mean, "std": std, "n": len(rows.values)}
    report.per_scenario["traj_ade"] = rows.values
    report.per_scenario["psi0"] = psi0.tolist()
    if quantiles is not None and range_model is not None:
        report.correlation = quantile_sweep_correlation(
            gen, predictor, range_model, scenarios, quantiles, reward, threshold, psi0
        )
    return report


VARIANTS = {
    "baseline": {"M": 0, "alpha": 0.0, "beta": 0.0},
    "augmentation": {"beta": 0.0},
    "full": {},
}


def variant_configs(base: ScbgTrainConfig) -> dict[str, ScbgTrainConfig]:
    """The three ablation rows: baseline, +augmentation, +courtesy loss."""
    out = {}
    for name, overrides in VARIANTS.items():
        cfg = asdict(base)
        cfg.update(overrides)
        out[name] = ScbgTrainConfig(**cfg)
    return out


def ablation_harness(
    train_labels: Sequence[LabeledSample],
    train_scenarios: Sequence[Scenario],
    val_labels: Sequence[LabeledSample],
    val_scenarios: Sequence[Scenario],
    predictor: PredictorModel,
    configs: Mapping[str, ScbgTrainConfig],
    range_model: RangeModel | None = None,
    reward: RewardSpec = RewardSpec(),
    strategies: Sequence[PsiStrategy] | None = None,
    quantiles: Sequence[float] | None = None,
) -> tuple[list[EvalReport], dict[str, GeneratorModel]]:
    """Train each configuration on the same data and seed, then score it on the validation split.

    A failing cell is reported with its error and does not stop the others.
    """
    stats = DatasetStats.from_labels(list(train_labels) + list(val_labels))
    reports, models = [], {}
    for name, cfg in configs.items():
        try:
            model = train_scbg(train_labels, train_scenarios, predictor, cfg, reward)
        except Exception as exc:  # noqa: BLE001 - reported per cell
            log.exception("variant %s failed", name)
            reports.append(EvalReport(name, error=f"{type(exc).__name__}: {exc}"))
            continue
        models[name] = model
        reports.append(
            evaluate_generator(
                name, model_generator(model), predictor, val_scenarios, val_labels, range_model, stats, strategies, reward, quantiles
            )
        )
    return reports, models


def format_table(reports: Sequence[EvalReport], strategies: Sequence[str] = ("data", "range", "arbitrary")) -> str:
    header = ["model"] + [f"CourtesyMSE[{s}]" for s in strategies] + ["TrajADE (m)"]
    lines = [" | ".join(header), " | ".join("---" for _ in header)]
    for r in reports:
        if r.error:
            lines.append(" | ".join([r.name] + ["error"] * (len(header) - 1)))
            continue
        cells = [r.name]
        for s in strategies:
            m = r.courtesy_mse.get(s)
            cells.append(f"{m['mean']:.3f} ± {m['std']:.3f}" if m else "n/a")
        cells.append(f"{r.traj_ade['mean']:.3f} ± {r.traj_ade['std']:.3f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines)


def write_report_json(reports: Sequence[EvalReport], path, extra: dict | None = None) -> None:
    payload = dict(extra or {})
    payload["reports"] = [r.to_dict() for r in reports]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_per_scenario_csv(report: EvalReport, path) -> None:
    keys = sorted(report.per_scenario)
    with open(path, "w") as fh:
        fh.write(",".join(["scenario_id"] + keys) + "\n")
        for i, sid in enumerate(report.scenario_ids):
            fh.write(",".join([sid] + [repr(float(report.per_scenario[k][i])) for k in keys]) + "\n")
