"""Command-line pipeline: data generation, training stages, labeling, evaluation and rendering.

Exit codes: 0 success, 1 I/O failure, 2 missing upstream artifact, 3 training divergence,
4 validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .core import YIELD, DatasetSplit, Scenario, SynthConfig, ValidationError, load_dataset, save_dataset, synth_split
from .courtesy import (
    COHERENT,
    LabeledSample,
    RewardSpec,
    courtesy_histogram,
    courtesy_values,
    label_dataset,
    load_labels,
    mode_bin,
    save_labels,
)
from .courtesy_range import (
    RangeModel,
    RangeTrainConfig,
    coverage,
    predict_range,
    quantile_to_courtesy,
    train_range,
    write_range_csv,
)
from .evaluation import (
    ARBITRARY,
    DATA,
    RANGE,
    DatasetStats,
    PsiStrategy,
    ablation_harness,
    evaluate_generator,
    format_table,
    ground_truth_courtesy,
    model_generator,
    variant_configs,
    write_per_scenario_csv,
    write_report_json,
)
from .generator import GeneratorModel, ScbgTrainConfig, train_scbg, write_train_log
from .predictor import PredictorConfig, PredictorModel, SceneArrays, prediction_metrics, train_predictor

log = logging.getLogger("scbg")

EXIT_OK, EXIT_IO, EXIT_MISSING, EXIT_DIVERGED, EXIT_INVALID = 0, 1, 2, 3, 4


class MissingArtifact(Exception):
    """An upstream artifact is absent or unreadable."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class LabelConfig:
    m: int = 4
    seed: int = 1
    noise: str = COHERENT


@dataclass
class EvalConfig:
    strategies: tuple[str, ...] = ("data", "range", "arbitrary")
    range_delta: float = 0.2
    quantiles: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7, 0.9)
    threshold: float = 2.0
    ablation: bool = True
    render_quantiles: tuple[float, ...] = (0.1, 0.5, 0.9)
    render_count: int = 3


@dataclass
class Paths:
    out: str = "runs/default"
    data: str | None = None  # defaults to <out>/data
    checkpoints: str | None = None  # defaults to <out>

    def resolve(self) -> "ResolvedPaths":
        out = Path(self.out)
        return ResolvedPaths(out, Path(self.data) if self.data else out / "data", Path(self.checkpoints) if self.checkpoints else out)


@dataclass(frozen=True)
class ResolvedPaths:
    out: Path
    data: Path
    ckpt: Path

    @property
    def predictor(self) -> Path:
        return self.ckpt / "predictor.json"

    @property
    def scbg(self) -> Path:
        return self.ckpt / "scbg.json"

    @property
    def range(self) -> Path:
        return self.ckpt / "range.json"

    def labels(self, part: str) -> Path:
        return self.out / f"labels_{part}.jsonl"


@dataclass
class PipelineConfig:
    seed: int = 7
    n_train: int = 1000
    n_validation: int = 500
    paths: Paths = field(default_factory=Paths)
    synth: SynthConfig = field(default_factory=SynthConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    scbg: ScbgTrainConfig = field(default_factory=ScbgTrainConfig)
    range: RangeTrainConfig = field(default_factory=RangeTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """Digest of every setting except file locations, so relocating a run keeps its hash."""
        d = self.to_dict()
        d.pop("paths")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def meta(self) -> dict:
        return {"seed": self.seed, "config_hash": self.hash()}


def _build(cls, values: dict, where: str):
    """Instantiate dataclass ``cls`` from a dict, rejecting unknown keys and coercing lists to tuples."""
    if not isinstance(values, dict):
        raise ValidationError(f"config section {where!r} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise ValidationError(f"config section {where!r}: unknown keys {unknown}")
    defaults = cls()
    kwargs = {}
    for name, value in values.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}" if where else name)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return dataclasses.replace(defaults, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config section {where!r}: {exc}") from None


def load_config(path: str | None, overrides: Sequence[str] = ()) -> PipelineConfig:
    """Read a JSON config (all keys optional) and apply ``section.key=value`` overrides."""
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValidationError(f"override {item!r} is not of the form section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    cfg = _build(PipelineConfig, data, "")
    cfg.synth.validate()
    if cfg.n_train < 1 or cfg.n_validation < 0:
        raise ValidationError("n_train must be positive and n_validation non-negative")
    for s in cfg.eval.strategies:
        if s.upper() not in (DATA, RANGE, ARBITRARY):
            raise ValidationError(f"unknown strategy {s!r}")
    return cfg


# ---------------------------------------------------------------------------
# artifact helpers


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `scbg {producer}` first")
    return path


def _load(loader, path: Path, producer: str):
    _require(path, producer)
    try:
        return loader(path)
    except (json.JSONDecodeError, KeyError, ValueError, TypeError, IndexError) as exc:
        raise MissingArtifact(f"{path} is unreadable ({type(exc).__name__}: {exc}); rerun `scbg {producer}`") from None


def _dataset(paths: ResolvedPaths) -> DatasetSplit:
    _require(paths.data / "train.json", "gen-data")
    return _load(load_dataset, paths.data, "gen-data")


def _predictor(paths: ResolvedPaths) -> PredictorModel:
    return _load(PredictorModel.load, paths.predictor, "train-predictor")


def _labels(paths: ResolvedPaths, part: str, dt: float) -> list[LabeledSample]:
    return _load(lambda p: load_labels(p, dt), paths.labels(part), "label")


def _log_csv(rows: list[dict], path: Path, fields: Sequence[str], cfg: PipelineConfig) -> None:
    meta = cfg.meta()
    write_train_log([{**r, **meta} for r in rows], path, list(fields) + ["seed", "config_hash"])


# ---------------------------------------------------------------------------
# stages


def cmd_gen_data(cfg: PipelineConfig) -> int:
    paths = cfg.paths.resolve()
    split = synth_split(cfg.synth, cfg.seed, cfg.n_train, cfg.n_validation)
    save_dataset(split, paths.data, meta=cfg.meta())
    print(f"wrote {len(split.train)} train and {len(split.validation)} validation scenarios to {paths.data}")
    return EXIT_OK


def cmd_train_predictor(cfg: PipelineConfig) -> int:
    paths = cfg.paths.resolve()
    split = _dataset(paths)
    model = train_predictor(split, cfg.predictor)
    *steps, summary = model.train_log
    paths.ckpt.mkdir(parents=True, exist_ok=True)
    model.save(paths.predictor, {**cfg.meta(), "validation_nll": {"init": summary["init"], "final": summary["final"]}})
    _log_csv(steps, paths.ckpt / "predictor_log.csv", ["step", "mode", "loss"], cfg)
    init, final = summary["init"]["marginal_a"], summary["final"]["marginal_a"]
    print(f"predictor: validation marginal NLL {init:.3f} -> {final:.3f}; wrote {paths.predictor}")
    return EXIT_OK


def cmd_label(cfg: PipelineConfig) -> int:
    paths = cfg.paths.resolve()
    predictor = _predictor(paths)
    split = _dataset(paths)
    reward = RewardSpec()
    everything = []
    for part, scenarios, offset in (("train", split.train, 0), ("validation", split.validation, 1)):
        samples = label_dataset(predictor, scenarios, reward, cfg.label.m, cfg.label.seed + offset, cfg.label.noise)
        save_labels(samples, paths.labels(part), cfg.meta())
        everything += samples
        print(f"labeled {len(samples)} samples from {len(scenarios)} {part} scenarios")
    if everything:
        counts, edges = courtesy_histogram(everything)
        lo, hi = mode_bin(counts, edges)
        print("courtesy histogram (m/s):")
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            print(f"  [{a:7.3f}, {b:7.3f}) {c:6d}")
        print(f"mode bin [{lo:.3f}, {hi:.3f}] {'contains' if lo <= 0.0 <= hi else 'excludes'} 0")
    return EXIT_OK


def cmd_train_scbg(cfg: PipelineConfig) -> int:
    paths = cfg.paths.resolve()
    predictor = _predictor(paths)
    split = _dataset(paths)
    labels = _labels(paths, "train", predictor.dt)
    validation = None
    if split.validation and paths.labels("validation").exists():
        validation = (_labels(paths, "validation", predictor.dt), split.validation)
    model = train_scbg(labels, split.train, predictor, cfg.scbg, validation=validation)
    init, final = model.validation_loss
    model.save(paths.scbg, {**cfg.meta(), "validation_loss": {"init": init, "final": final}})
    _log_csv(model.train_log, paths.ckpt / "scbg_log.csv", ["step", "L_traj", "L_court", "L"], cfg)
    print(f"scbg: validation loss {init:.4f} -> {final:.4f}; wrote {paths.scbg}")
    return EXIT_OK


def cmd_train_range(cfg: PipelineConfig) -> int:
    paths = cfg.paths.resolve()
    predictor = _predictor(paths)
    split = _dataset(paths)
    labels = _labels(paths, "train", predictor.dt)
    model = train_range(labels, split.train, predictor.scene_encoder, cfg.range)
    model.save(paths.range, cfg.meta())
    _log_csv(model.train_log, paths.ckpt / "range_log.csv", ["step", "loss"], cfg)
    print(f"range: wrote {paths.range}")
    return EXIT_OK


def _strategies(cfg: PipelineConfig) -> list[PsiStrategy]:
    out = []
    for s in cfg.eval.strategies:
        kind = s.upper()
        delta = cfg.eval.range_delta if kind == RANGE else None
        out.append(PsiStrategy(kind, delta))
    return out


def cmd_eval(cfg: PipelineConfig) -> int:
    paths = cfg.paths.resolve()
    predictor = _predictor(paths)
    split = _dataset(paths)
    if not split.validation:
        raise ValidationError("validation split is empty; nothing to evaluate")
    generator = _load(GeneratorModel.load, paths.scbg, "train-scbg")
    range_model = _load(RangeModel.load, paths.range, "train-range")
    train_labels = _labels(paths, "train", predictor.dt)
    val_labels = _labels(paths, "validation", predictor.dt)
    strategies = _strategies(cfg)
    stats = DatasetStats.from_labels(train_labels + val_labels)
    quantiles = cfg.eval.quantiles

    reports = []
    if cfg.eval.ablation:
        configs = variant_configs(cfg.scbg)
        configs.pop("full")
        reports, _ = ablation_harness(
            train_labels, split.train, val_labels, split.validation, predictor, configs, range_model, strategies=strategies, quantiles=quantiles
        )
    full = evaluate_generator(
        "full", model_generator(generator), predictor, split.validation, val_labels, range_model, stats, strategies, quantiles=quantiles,
        threshold=cfg.eval.threshold,
    )
    reports.append(full)

    marginal_b = prediction_metrics(predictor, split.validation, "B")
    cov = coverage(range_model, val_labels, split.validation)
    counts, edges = courtesy_histogram(train_labels + val_labels)
    extra = {
        **cfg.meta(),
        "table": format_table(reports, [s.label for s in strategies]),
        "predictor_marginal_b": marginal_b,
        "range_coverage": cov,
        "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
        "dataset_stats": asdict(stats),
    }
    paths.out.mkdir(parents=True, exist_ok=True)
    write_report_json(reports, paths.out / "report.json", extra)
    write_per_scenario_csv(full, paths.out / "report.csv")
    write_range_csv(range_model, val_labels, split.validation, paths.out / "range.csv")
    print(extra["table"])
    if full.correlation:
        r, rh = full.correlation["r"], full.correlation["r_high"]
        print(f"quantile/courtesy correlation r={r:.3f}, high-|psi0| r={rh if rh is None else round(rh, 3)}")
    print(f"range coverage below 0.1: {cov['below_lo']:.3f}, below 0.9: {cov['below_hi']:.3f}")
    print(f"marginal predictor top-1 ADE for B: {marginal_b['ade']:.3f} m")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rendering


def _ramp(t: float) -> str:
    """Blue (t=0) to red (t=1)."""
    lo, hi = np.array([40, 90, 200]), np.array([210, 50, 40])
    r, g, b = np.rint(lo + (hi - lo) * float(np.clip(t, 0.0, 1.0))).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _pts(points: np.ndarray) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


def render_svg(scenario: Scenario, trajectories: np.ndarray, quantiles: Sequence[float], psis: Sequence[float], meta: dict) -> str:
    """Map, A's ground-truth future and one generated B trajectory per quantile, y axis pointing up."""
    obs = scenario.observation
    focus = np.concatenate(
        [obs.history_a.points, obs.history_b.points, scenario.future_a.points, trajectories.reshape(-1, 2)]
    )
    margin = 10.0
    x0, y0 = focus.min(axis=0) - margin
    x1, y1 = focus.max(axis=0) + margin
    w, h = x1 - x0, y1 - y0
    scale = 600.0 / max(w, h)
    width, height = w * scale, h * scale
    legend_h = 18 * (len(quantiles) + 2)

    def to_px(p: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(p)
        return np.column_stack([(p[:, 0] - x0) * scale, (y1 - p[:, 1]) * scale])

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height + legend_h:.0f}" '
        f'viewBox="0 0 {width:.2f} {height + legend_h:.2f}">',
        f"<metadata>scenario={scenario.id} seed={meta['seed']} config_hash={meta['config_hash']}</metadata>",
        f'<title>{scenario.id} ({scenario.family})</title>',
        f'<rect x="0" y="0" width="{width:.2f}" height="{height:.2f}" fill="#ffffff" stroke="#cccccc"/>',
        f'<clipPath id="frame"><rect x="0" y="0" width="{width:.2f}" height="{height:.2f}"/></clipPath>',
        '<g clip-path="url(#frame)">',
    ]
    for line in obs.map_polylines:
        dash = ' stroke-dasharray="6 4"' if line.tag == "lane_center" else ""
        out.append(
            f'<polyline class="map" data-tag="{line.tag}" points="{_pts(to_px(line.points))}" fill="none" stroke="#999999" stroke-width="1"{dash}/>'
        )
    out.append(f'<polyline class="history" points="{_pts(to_px(obs.history_a.points))}" fill="none" stroke="#333333" stroke-width="2" stroke-dasharray="2 2"/>')
    out.append(f'<polyline class="history" points="{_pts(to_px(obs.history_b.points))}" fill="none" stroke="#333333" stroke-width="2" stroke-dasharray="2 2"/>')
    out.append(f'<polyline class="ground-truth" data-agent="A" points="{_pts(to_px(scenario.future_a.points))}" fill="none" stroke="#2a9d3a" stroke-width="3"/>')
    span = max(quantiles) - min(quantiles) if len(quantiles) > 1 else 1.0
    for q, psi, traj in zip(quantiles, psis, trajectories):
        color = _ramp((q - min(quantiles)) / span if span else 0.0)
        out.append(
            f'<polyline class="generated" data-agent="B" data-quantile="{q:.2f}" data-psi="{psi:.3f}" '
            f'points="{_pts(to_px(traj))}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
    out.append("</g>")
    y = height + 16
    out.append(f'<text x="8" y="{y:.0f}" font-family="sans-serif" font-size="12" fill="#2a9d3a">A ground truth</text>')
    for q, psi in zip(quantiles, psis):
        y += 18
        color = _ramp((q - min(quantiles)) / span if span else 0.0)
        out.append(f'<rect x="8" y="{y - 10:.0f}" width="14" height="10" fill="{color}"/>')
        out.append(
            f'<text class="legend" x="28" y="{y:.0f}" font-family="sans-serif" font-size="12">'
            f"B q={q:.2f} realized ψ={psi:+.3f} m/s</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _render_one(scenario: Scenario, generator: GeneratorModel, range_model: RangeModel, predictor: PredictorModel, quantiles, meta) -> str:
    rng = predict_range(range_model, scenario.observation)
    commanded = np.array([quantile_to_courtesy(rng, q) for q in quantiles])
    trajs = model_generator(generator)(scenario, commanded)
    arrays = SceneArrays.build([scenario.observation], predictor.T)
    realized = courtesy_values(predictor, arrays, np.zeros(len(quantiles), dtype=int), trajs, RewardSpec())
    return render_svg(scenario, trajs, quantiles, realized.tolist(), meta)


def default_render_ids(cfg: PipelineConfig, predictor: PredictorModel, validation: Sequence[Scenario]) -> list[str]:
    """Validation YIELD scenarios with the largest ground-truth |psi|."""
    yields = [s for s in validation if s.family == YIELD]
    if not yields or cfg.eval.render_count <= 0:
        return []
    psi0 = np.abs(ground_truth_courtesy(predictor, yields))
    order = np.argsort(-psi0, kind="stable")[: cfg.eval.render_count]
    return [yields[i].id for i in order]


def cmd_render(cfg: PipelineConfig, scenario_ids: Sequence[str] | None = None, quantiles: Sequence[float] | None = None) -> int:
    paths = cfg.paths.resolve()
    predictor = _predictor(paths)
    split = _dataset(paths)
    generator = _load(GeneratorModel.load, paths.scbg, "train-scbg")
    range_model = _load(RangeModel.load, paths.range, "train-range")
    quantiles = tuple(quantiles or cfg.eval.render_quantiles)
    if any(not 0.0 <= q <= 1.0 for q in quantiles):
        raise ValidationError(f"quantiles must lie in [0, 1], got {quantiles}")
    by_id = {s.id: s for s in split.train + split.validation}
    ids = list(scenario_ids) if scenario_ids else default_render_ids(cfg, predictor, split.validation)
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValidationError(f"unknown scenario id(s): {', '.join(missing)}")
    out_dir = paths.out / "render"
    out_dir.mkdir(parents=True, exist_ok=True)
    for sid in ids:
        svg = _render_one(by_id[sid], generator, range_model, predictor, quantiles, cfg.meta())
        (out_dir / f"{sid}.svg").write_text(svg, encoding="utf-8")
        print(f"wrote {out_dir / f'{sid}.svg'}")
    return EXIT_OK


def cmd_pipeline(cfg: PipelineConfig) -> int:
    for stage in (cmd_gen_data, cmd_train_predictor, cmd_label, cmd_train_scbg, cmd_train_range, cmd_eval, cmd_render):
        code = stage(cfg)
        if code != EXIT_OK:
            return code
    paths = cfg.paths.resolve()
    settings = {k: v for k, v in cfg.to_dict().items() if k != "paths"}
    (paths.out / "config.json").write_text(json.dumps({**settings, **cfg.meta()}, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; every key is optional")
    common.add_argument("--seed", type=int, help="global seed (drives data generation)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="scbg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="synthesize train/validation scenarios")
    g.add_argument("--n", type=int, help="number of training scenarios")
    g.add_argument("--n-validation", type=int)
    t = sub.add_parser("train-predictor", parents=[common], help="fit the marginal/conditional predictor")
    t.add_argument("--steps", type=int)
    lab = sub.add_parser("label", parents=[common], help="auto-label courtesy with augmentation")
    lab.add_argument("--m", type=int, help="augmented samples per scenario")
    s = sub.add_parser("train-scbg", parents=[common], help="train the courtesy-conditioned generator")
    s.add_argument("--steps", type=int)
    s.add_argument("--beta", type=float)
    s.add_argument("--alpha", type=float)
    r = sub.add_parser("train-range", parents=[common], help="train the courtesy range predictor")
    r.add_argument("--steps", type=int)
    e = sub.add_parser("eval", parents=[common], help="score controllability and realism")
    e.add_argument("--strategies", help="comma list from data,range,arbitrary")
    e.add_argument("--no-ablation", action="store_true", help="evaluate only the trained generator")
    rd = sub.add_parser("render", parents=[common], help="draw generated trajectories per courtesy quantile as SVG")
    rd.add_argument("--scenario", action="append", help="scenario id (repeatable); default picks YIELD examples")
    rd.add_argument("--quantiles", help="comma list of quantiles in [0, 1]")
    sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    return p


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _overrides(args: argparse.Namespace) -> list[str]:
    out = list(args.set)
    flag_map = {
        ("seed", None): "seed",
        ("out", None): "paths.out",
        ("n", "gen-data"): "n_train",
        ("n_validation", "gen-data"): "n_validation",
        ("steps", "train-predictor"): "predictor.steps",
        ("m", "label"): "label.m",
        ("steps", "train-scbg"): "scbg.steps",
        ("beta", "train-scbg"): "scbg.beta",
        ("alpha", "train-scbg"): "scbg.alpha",
        ("steps", "train-range"): "range.steps",
    }
    for (attr, command), key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None and command in (None, args.command):
            out.append(f"{key}={json.dumps(value)}")
    if getattr(args, "strategies", None):
        out.append(f"eval.strategies={json.dumps(args.strategies.split(','))}")
    if getattr(args, "no_ablation", False):
        out.append("eval.ablation=false")
    return out


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "render":
                quantiles = _floats(args.quantiles) if args.quantiles else None
                return cmd_render(cfg, args.scenario, quantiles)
            commands = {
                "gen-data": cmd_gen_data,
                "train-predictor": cmd_train_predictor,
                "label": cmd_label,
                "train-scbg": cmd_train_scbg,
                "train-range": cmd_train_range,
                "eval": cmd_eval,
                "pipeline": cmd_pipeline,
            }
            return commands[args.command](cfg)
    except MissingArtifact as exc:
        print(f"scbg {args.command}: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except nn.TrainingError as exc:
        print(f"scbg {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"scbg {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"scbg {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
