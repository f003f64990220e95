"""Domain types, the dataset JSON format, and a synthetic two-agent scenario generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MERGE = "MERGE"
YIELD = "YIELD"
FAMILIES = (MERGE, YIELD)

DATASET_VERSION = 1


class ValidationError(ValueError):
    pass


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    points: np.ndarray
    dt: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"trajectory points must be (T, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValidationError(f"trajectory needs at least 2 points, got {pts.shape[0]}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("trajectory has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def T(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.T

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Polyline:
    tag: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polyline):
            return NotImplemented
        return self.tag == other.tag and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True)
class Observation:
    history_a: Trajectory
    history_b: Trajectory
    extra_agents: tuple[Trajectory, ...] = ()
    map_polylines: tuple[Polyline, ...] = ()

    @property
    def H(self) -> int:
        return self.history_a.T

    @property
    def dt(self) -> float:
        return self.history_a.dt


@dataclass(frozen=True)
class Scenario:
    id: str
    observation: Observation
    future_a: Trajectory
    future_b: Trajectory
    family: str
    # Ground-truth maneuver of agent B in [-1, 1] (-1 assertive, +1 yielding);
    # only known for synthetic data.
    b_maneuver: float | None = None

    @property
    def T(self) -> int:
        return self.future_a.T

    @property
    def dt(self) -> float:
        return self.observation.dt


@dataclass
class DatasetSplit:
    train: list[Scenario] = field(default_factory=list)
    validation: list[Scenario] = field(default_factory=list)

    def __post_init__(self):
        overlap = {s.id for s in self.train} & {s.id for s in self.validation}
        if overlap:
            raise ValidationError(f"ids present in both train and validation: {sorted(overlap)[:5]}")


def validate_scenario(s: Scenario, v_max: float | None = None) -> None:
    """Raise :class:`ValidationError` naming the scenario and field on any broken invariant."""
    obs = s.observation
    if s.family not in FAMILIES:
        raise ValidationError(f"scenario {s.id}: family must be one of {FAMILIES}, got {s.family!r}")
    H = obs.history_a.T
    if obs.history_b.T != H:
        raise ValidationError(f"scenario {s.id}: history_b has {obs.history_b.T} points, history_a has {H}")
    if s.future_b.T != s.future_a.T:
        raise ValidationError(
            f"scenario {s.id}: future_b has {s.future_b.T} points, future_a has {s.future_a.T}"
        )
    dt = obs.history_a.dt
    named = {"history_b": obs.history_b, "future_a": s.future_a, "future_b": s.future_b}
    named.update({f"extra_agents[{i}]": t for i, t in enumerate(obs.extra_agents)})
    for name, traj in named.items():
        if traj.dt != dt:
            raise ValidationError(f"scenario {s.id}: {name} has dt={traj.dt}, expected {dt}")
    if v_max is not None:
        for agent, hist, fut in (("a", obs.history_a, s.future_a), ("b", obs.history_b, s.future_b)):
            gap = float(np.linalg.norm(fut.points[0] - hist.points[-1]))
            if gap > v_max * dt:
                raise ValidationError(f"scenario {s.id}: future_{agent} starts {gap:.2f} m from its history")


# ---------------------------------------------------------------------------
# JSON interchange


def _pts(traj: Trajectory) -> list:
    return traj.points.tolist()


def scenario_to_dict(s: Scenario) -> dict:
    out = {
        "id": s.id,
        "family": s.family,
        "history_a": _pts(s.observation.history_a),
        "history_b": _pts(s.observation.history_b),
        "future_a": _pts(s.future_a),
        "future_b": _pts(s.future_b),
        "extra_agents": [_pts(t) for t in s.observation.extra_agents],
        "map_polylines": [{"tag": p.tag, "points": p.points.tolist()} for p in s.observation.map_polylines],
    }
    if s.b_maneuver is not None:
        out["b_maneuver"] = s.b_maneuver
    return out


def scenario_from_dict(d: dict, dt: float) -> Scenario:
    sid = str(d.get("id", "<missing id>"))

    def traj(key, value=None):
        raw = d[key] if value is None else value
        try:
            return Trajectory(np.asarray(raw, dtype=np.float64), dt)
        except (ValidationError, ValueError) as exc:
            raise ValidationError(f"scenario {sid}: {key}: {exc}") from None

    try:
        obs = Observation(
            history_a=traj("history_a"),
            history_b=traj("history_b"),
            extra_agents=tuple(traj(f"extra_agents[{i}]", t) for i, t in enumerate(d.get("extra_agents", []))),
            map_polylines=tuple(Polyline(p["tag"], p["points"]) for p in d.get("map_polylines", [])),
        )
        s = Scenario(
            id=sid,
            observation=obs,
            future_a=traj("future_a"),
            future_b=traj("future_b"),
            family=d["family"],
            b_maneuver=d.get("b_maneuver"),
        )
    except KeyError as exc:
        raise ValidationError(f"scenario {sid}: missing field {exc.args[0]!r}") from None
    validate_scenario(s)
    return s


def save_scenarios(scenarios: list[Scenario], path, dt: float | None = None, meta: dict | None = None) -> None:
    if dt is None:
        dt = scenarios[0].dt if scenarios else 0.5
    payload = {"version": DATASET_VERSION, "dt": dt, "scenarios": [scenario_to_dict(s) for s in scenarios]}
    if meta:
        payload["meta"] = meta
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_scenarios(path) -> list[Scenario]:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if text.splitlines() else ""
        raise DatasetParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}: {line[:80]!r}") from None
    if data.get("version") != DATASET_VERSION:
        raise DatasetParseError(f"{path}: unsupported dataset version {data.get('version')!r}")
    dt = float(data["dt"])
    return [scenario_from_dict(d, dt) for d in data["scenarios"]]


def save_dataset(split: DatasetSplit, path, meta: dict | None = None) -> None:
    """Write ``train.json`` and ``validation.json`` into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    save_scenarios(split.train, path / "train.json", meta=meta)
    save_scenarios(split.validation, path / "validation.json", meta=meta)


def load_dataset(path) -> DatasetSplit:
    """Load a split directory, or a single file as the train part."""
    path = Path(path)
    if path.is_dir():
        train = load_scenarios(path / "train.json")
        val_path = path / "validation.json"
        validation = load_scenarios(val_path) if val_path.exists() else []
        return DatasetSplit(train, validation)
    if not path.exists():
        raise FileNotFoundError(path)
    return DatasetSplit(load_scenarios(path), [])


# ---------------------------------------------------------------------------
# synthetic scenarios


@dataclass(frozen=True)
class SynthConfig:
    history_steps: int = 10
    future_steps: int = 16
    dt: float = 0.5
    speed_a: tuple[float, float] = (7.0, 11.0)
    speed_b: tuple[float, float] = (6.0, 10.0)
    noise: float = 0.05
    substeps: int = 5
    v_max: float = 30.0
    world_offset: float = 100.0
    interactive_fraction: float = 0.6

    def validate(self) -> None:
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.future_steps < 2 or self.history_steps < 2:
            raise ValidationError("history_steps and future_steps must be at least 2")
        if self.substeps < 1:
            raise ValidationError("substeps must be at least 1")
        if not 0.0 <= self.interactive_fraction <= 1.0:
            raise ValidationError("interactive_fraction must lie in [0, 1]")
        if self.noise < 0:
            raise ValidationError("noise must be non-negative")
        for name in ("speed_a", "speed_b"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi < self.v_max:
                raise ValidationError(f"{name} range {lo, hi} invalid")


@dataclass(frozen=True)
class Idm:
    """Intelligent driver model acceleration law."""

    max_accel: float = 1.5
    comfort_decel: float = 2.0
    min_gap: float = 2.0
    headway: float = 1.2
    exponent: int = 4

    def accel(self, v: float, v_desired: float, gap: float = math.inf, dv: float = 0.0) -> float:
        free = 1.0 - (v / v_desired) ** self.exponent
        if math.isinf(gap):
            return self.max_accel * free
        s_star = self.min_gap + max(0.0, v * self.headway + v * dv / (2.0 * math.sqrt(self.max_accel * self.comfort_decel)))
        gap = max(gap, 0.1)
        return self.max_accel * (free - (s_star / gap) ** 2)


IDM = Idm()
ZONE_HALF = 4.0  # half-width of the crossing conflict zone, m
CAR_HALF = 2.0
LANE_WIDTH = 3.5


def _integrate(v: float, a: float, h: float, a_min: float = -8.0) -> tuple[float, float]:
    a = max(a, a_min)
    v_new = max(0.0, v + a * h)
    return v_new, 0.5 * (v + v_new) * h


def _simulate_yield(rng: np.random.Generator, cfg: SynthConfig, u: float, interactive: bool):
    """A drives +x on y=0, B drives +y on x=0; they share the zone around the origin.

    B follows an open-loop speed profile set by ``u`` (-1 proceeds, +1 stops at
    its line). A runs IDM and treats the zone entry as a stationary obstacle
    whenever B occupies the zone or will reach it first.
    """
    v_a = v_a0 = rng.uniform(*cfg.speed_a)
    v_b = v_b0 = rng.uniform(*cfg.speed_b)
    v_des_a = v_a + rng.uniform(0.5, 2.5)
    v_des_b = min(cfg.v_max - 1.0, v_b + rng.uniform(1.0, 3.0))
    x_a = -rng.uniform(12.0, 40.0)
    y_b = -rng.uniform(10.0, 35.0) if interactive else -rng.uniform(80.0, 120.0)
    stop_line = -ZONE_HALF - 2.0
    lam = 0.5 * (u + 1.0)
    h = cfg.dt / cfg.substeps

    xs_a, ys_b = [x_a], [y_b]
    for _ in range(cfg.future_steps):
        for _ in range(cfg.substeps):
            # B: blend of "go" and "stop at line" accelerations
            a_go = IDM.accel(v_b, v_des_b)
            to_line = stop_line - y_b
            if to_line > 0.5:
                a_stop = -v_b * v_b / (2.0 * to_line)
            elif to_line > -CAR_HALF:
                a_stop = -6.0 if v_b > 0 else 0.0
            else:
                a_stop = a_go
            a_b = (1.0 - lam) * a_go + lam * a_stop
            # A: yield if B is in the zone, or is not braking and wins the race to it
            a_entry = -ZONE_HALF - CAR_HALF
            gap = math.inf
            if x_a < a_entry + 0.5:
                b_in_zone = -ZONE_HALF - CAR_HALF < y_b < ZONE_HALF + CAR_HALF
                b_first = False
                if y_b <= -ZONE_HALF - CAR_HALF and a_b > -0.5:
                    ttz_b = (-ZONE_HALF - CAR_HALF - y_b) / max(v_b, 0.5)
                    ttz_a = (a_entry - x_a) / max(v_a, 0.5)
                    b_first = ttz_b < ttz_a + 1.5
                if b_in_zone or b_first:
                    gap = max(a_entry - x_a + IDM.min_gap, 0.1)
            a_a = IDM.accel(v_a, v_des_a, gap, v_a)
            v_b, d_b = _integrate(v_b, a_b, h)
            v_a, d_a = _integrate(v_a, a_a, h)
            y_b += d_b
            x_a += d_a
        xs_a.append(x_a)
        ys_b.append(y_b)
    xs_a, ys_b = np.array(xs_a), np.array(ys_b)
    traj_a = np.stack([xs_a, np.zeros_like(xs_a)], axis=1)
    traj_b = np.stack([np.zeros_like(ys_b), ys_b], axis=1)
    return traj_a, traj_b, np.array([v_a0, 0.0]), np.array([0.0, v_b0])


def _simulate_merge(rng: np.random.Generator, cfg: SynthConfig, u: float, interactive: bool):
    """A drives +x in lane y=0; B starts in lane y=LANE_WIDTH and merges into A's lane.

    ``u < 0``: B accelerates and cuts in ahead of A, then settles at its own
    (lower) desired speed. ``u >= 0``: B brakes, waits until it is behind A,
    and only then merges.
    """
    v_a = rng.uniform(*cfg.speed_a)
    v_des_a = v_a + rng.uniform(0.5, 2.5)
    v_b = v_a + rng.uniform(-1.0, 1.0)
    v0 = (np.array([v_a, 0.0]), np.array([v_b, 0.0]))
    v_des_b = max(2.0, v_des_a - rng.uniform(2.0, 5.0))
    x_a = 0.0
    x_b = rng.uniform(-2.0, 12.0) if interactive else -rng.uniform(30.0, 45.0)
    y_b = LANE_WIDTH
    t_merge = rng.uniform(0.5, 2.0)
    merge_time = 3.0
    h = cfg.dt / cfg.substeps

    merge_start: float | None = None
    t = 0.0
    pts_a, pts_b = [(x_a, 0.0)], [(x_b, y_b)]
    for _ in range(cfg.future_steps):
        for _ in range(cfg.substeps):
            if merge_start is None:
                if u < 0 and t >= t_merge:
                    merge_start = t
                elif u >= 0 and x_b < x_a - 2 * CAR_HALF - 4.0:
                    merge_start = t
            if merge_start is None:
                if u < 0:
                    a_b = 2.0 * (-u)
                else:
                    a_b = -2.5 * u
            else:
                lead_gap = x_a - x_b - 2 * CAR_HALF if x_a > x_b else math.inf
                a_b = IDM.accel(v_b, v_des_b, lead_gap, v_b - v_a) if lead_gap < math.inf else IDM.accel(v_b, v_des_b)
            # A follows B once B is mostly in its lane and ahead
            gap = math.inf
            if y_b < 0.6 * LANE_WIDTH and x_b > x_a:
                gap = x_b - x_a - 2 * CAR_HALF
            a_a = IDM.accel(v_a, v_des_a, gap, v_a - v_b)
            v_b, d_b = _integrate(v_b, a_b, h)
            v_a, d_a = _integrate(v_a, a_a, h)
            x_b += d_b
            x_a += d_a
            t += h
            if merge_start is not None:
                s = min(1.0, (t - merge_start) / merge_time)
                y_b = LANE_WIDTH * (1.0 - (3 * s * s - 2 * s**3))
        pts_a.append((x_a, 0.0))
        pts_b.append((x_b, y_b))
    return np.array(pts_a), np.array(pts_b), *v0


def _history(rng: np.random.Generator, start: np.ndarray, velocity: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    # constant-velocity past ending at the current position
    steps = np.arange(-(cfg.history_steps - 1), 1, dtype=np.float64)[:, None]
    return start[None, :] + steps * cfg.dt * velocity[None, :]


def _map_polylines(family: str, origin: np.ndarray) -> tuple[Polyline, ...]:
    xs = np.arange(-60.0, 181.0, 10.0)
    if family == MERGE:
        lines = [
            ("lane_center", np.stack([xs, np.zeros_like(xs)], 1)),
            ("lane_center", np.stack([xs, np.full_like(xs, LANE_WIDTH)], 1)),
            ("road_edge", np.stack([xs, np.full_like(xs, -LANE_WIDTH / 2)], 1)),
            ("road_edge", np.stack([xs, np.full_like(xs, 1.5 * LANE_WIDTH)], 1)),
        ]
    else:
        lines = [
            ("lane_center", np.stack([xs, np.zeros_like(xs)], 1)),
            ("lane_center", np.stack([np.zeros_like(xs), xs], 1)),
            ("stop_line", np.array([[-LANE_WIDTH / 2, -ZONE_HALF - 2.0], [LANE_WIDTH / 2, -ZONE_HALF - 2.0]])),
            ("road_edge", np.stack([xs, np.full_like(xs, -LANE_WIDTH / 2)], 1)),
        ]
    return tuple(Polyline(tag, pts + origin) for tag, pts in lines)


def synth_scenario(cfg: SynthConfig, seed: int, index: int, maneuver: float | None = None) -> Scenario:
    """Scenario ``index`` of the stream defined by ``seed``; independent of how many are drawn.

    ``maneuver`` overrides B's sampled maneuver while keeping every other draw
    (initial state, noise) unchanged, for counterfactual rollouts.
    """
    rng = np.random.default_rng([seed, index])
    family = MERGE if index % 2 == 0 else YIELD
    u = float(rng.uniform(-1.0, 1.0))
    interactive = bool(rng.uniform() < cfg.interactive_fraction)
    if maneuver is not None:
        u = float(np.clip(maneuver, -1.0, 1.0))
    simulate = _simulate_merge if family == MERGE else _simulate_yield
    # row 0 of each future is the current state (t=0); the past runs at the initial velocity
    fut_a, fut_b, vel_a, vel_b = simulate(rng, cfg, u, interactive)
    hist_a = _history(rng, fut_a[0], vel_a, cfg)
    hist_b = _history(rng, fut_b[0], vel_b, cfg)

    origin = rng.uniform(-cfg.world_offset, cfg.world_offset, size=2)
    extras = []
    n_extra = int(rng.integers(0, 3))
    for _ in range(n_extra):
        start = np.array([rng.uniform(-40.0, 60.0), -LANE_WIDTH * rng.uniform(1.5, 3.0)])
        vel = np.array([-rng.uniform(3.0, 12.0), 0.0])
        extras.append(_history(rng, start, vel, cfg))

    def noisy(pts):
        return Trajectory(pts + origin + rng.normal(0.0, cfg.noise, size=pts.shape), cfg.dt)

    obs = Observation(
        history_a=noisy(hist_a),
        history_b=noisy(hist_b),
        extra_agents=tuple(noisy(e) for e in extras),
        map_polylines=_map_polylines(family, origin),
    )
    return Scenario(
        id=f"s{seed}-{index:05d}",
        observation=obs,
        future_a=noisy(fut_a[1:]),
        future_b=noisy(fut_b[1:]),
        family=family,
        b_maneuver=u,
    )


def synth_scenarios(config: SynthConfig, seed: int, n: int) -> list[Scenario]:
    config.validate()
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    return [synth_scenario(config, seed, i) for i in range(n)]


def synth_split(config: SynthConfig, seed: int, n_train: int, n_validation: int) -> DatasetSplit:
    """Train and validation drawn from disjoint seed streams."""
    train = synth_scenarios(config, seed, n_train)
    validation = synth_scenarios(config, seed + 1_000_003, n_validation) if n_validation else []
    return DatasetSplit(train, validation)


def average_speed(points: np.ndarray, dt: float) -> float:
    steps = np.diff(points, axis=0)
    return float(np.linalg.norm(steps, axis=1).sum() / ((len(points) - 1) * dt))
