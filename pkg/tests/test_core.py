import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scbg.core import (
    MERGE,
    YIELD,
    DatasetParseError,
    DatasetSplit,
    Observation,
    Polyline,
    Scenario,
    SynthConfig,
    Trajectory,
    ValidationError,
    average_speed,
    load_dataset,
    save_dataset,
    synth_scenario,
    synth_scenarios,
    synth_split,
    validate_scenario,
)

from .oracles import path_speed

CFG = SynthConfig()


def straight(n, start=0.0, step=1.0, dt=0.5):
    xs = start + step * np.arange(n)
    return Trajectory(np.stack([xs, np.zeros(n)], 1), dt)


def tiny_scenario(sid="a", T=4):
    obs = Observation(straight(3), straight(3, 100.0), (), (Polyline("lane_center", [[0, 0], [10, 0]]),))
    return Scenario(sid, obs, straight(T, 3.0), straight(T, 103.0), YIELD)


def test_trajectory_invariants():
    with pytest.raises(ValidationError):
        Trajectory(np.zeros((1, 2)), 0.5)
    with pytest.raises(ValidationError):
        Trajectory(np.zeros((3, 2)), 0.0)
    with pytest.raises(ValidationError):
        Trajectory(np.array([[0.0, 0.0], [np.nan, 1.0]]), 0.5)
    t = straight(3)
    with pytest.raises(ValueError):
        t.points[0, 0] = 5.0


def test_split_ids_must_be_disjoint():
    with pytest.raises(ValidationError):
        DatasetSplit([tiny_scenario("x")], [tiny_scenario("x")])


def test_synthesis_is_deterministic():
    a = synth_scenarios(CFG, 7, 100)
    b = synth_scenarios(CFG, 7, 100)
    assert a == b
    assert synth_scenarios(CFG, 8, 3) != a[:3]


def test_families_alternate():
    s = synth_scenarios(CFG, 7, 100)
    assert [x.family for x in s[:4]] == [MERGE, YIELD, MERGE, YIELD]
    assert sum(x.family == MERGE for x in s) == 50
    assert sum(x.family == YIELD for x in s) == 50


def test_futures_are_contiguous_with_histories():
    for s in synth_scenarios(CFG, 3, 200):
        validate_scenario(s, v_max=CFG.v_max)
        assert s.T == CFG.future_steps and s.observation.H == CFG.history_steps


def test_invalid_config_rejected():
    with pytest.raises(ValidationError):
        synth_scenarios(SynthConfig(dt=0.0), 0, 2)
    with pytest.raises(ValidationError):
        synth_scenarios(SynthConfig(future_steps=1), 0, 2)


def test_yielding_b_lets_a_go_faster():
    # 1000 draws -> 500 YIELD scenarios
    yields = [s for s in synth_scenarios(CFG, 11, 1000) if s.family == YIELD]
    assert len(yields) == 500
    u = np.array([s.b_maneuver for s in yields])
    speed = np.array([path_speed(s.future_a.points, s.dt) for s in yields])
    assert speed[u > 0.5].mean() > speed[u < -0.5].mean()
    slope = np.polyfit(u, speed, 1)[0]
    assert slope > 0


def test_reactivity_slope_over_both_families():
    s = synth_scenarios(CFG, 12, 600)
    u = np.array([x.b_maneuver for x in s])
    speed = np.array([average_speed(x.future_a.points, x.dt) for x in s])
    assert np.polyfit(u, speed, 1)[0] > 0


def test_counterfactual_maneuver_keeps_history():
    a = synth_scenario(CFG, 5, 1, maneuver=-1.0)
    b = synth_scenario(CFG, 5, 1, maneuver=1.0)
    assert a.observation == b.observation
    assert path_speed(b.future_a.points, b.dt) >= path_speed(a.future_a.points, a.dt)


def test_round_trip(tmp_path):
    split = synth_split(CFG, 1, 6, 4)
    save_dataset(split, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.train == split.train and back.validation == split.validation


def test_empty_split_round_trip(tmp_path):
    save_dataset(DatasetSplit(), tmp_path / "e")
    back = load_dataset(tmp_path / "e")
    assert back.train == [] and back.validation == []


def test_single_file_loads_as_train(tmp_path):
    save_dataset(DatasetSplit([tiny_scenario("a"), tiny_scenario("b")]), tmp_path)
    split = load_dataset(tmp_path / "train.json")
    assert [s.id for s in split.train] == ["a", "b"] and split.validation == []


def test_schema_keys(tmp_path):
    save_dataset(DatasetSplit([tiny_scenario()]), tmp_path)
    data = json.loads((tmp_path / "train.json").read_text())
    assert data["version"] == 1 and data["dt"] == 0.5
    keys = set(data["scenarios"][0])
    assert {"id", "family", "history_a", "history_b", "future_a", "future_b", "extra_agents", "map_polylines"} <= keys
    assert data["scenarios"][0]["map_polylines"][0]["tag"] == "lane_center"


def test_length_mismatch_names_the_scenario(tmp_path):
    save_dataset(DatasetSplit([tiny_scenario("bad-one", T=16)]), tmp_path)
    path = tmp_path / "train.json"
    data = json.loads(path.read_text())
    data["scenarios"][0]["future_a"] = data["scenarios"][0]["future_a"][:15]
    path.write_text(json.dumps(data))
    with pytest.raises(ValidationError, match="bad-one"):
        load_dataset(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "version": 1,\n "dt": 0.5,\n "scenarios": [ oops ]\n}\n')
    with pytest.raises(DatasetParseError, match=":4:"):
        load_dataset(path)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=8, max_size=8))
def test_coordinates_survive_round_trip(tmp_path_factory, coords):
    pts = np.array([float(f"{c:.15g}") for c in coords]).reshape(4, 2)
    s = tiny_scenario()
    s = Scenario(s.id, s.observation, Trajectory(pts, 0.5), Trajectory(pts[::-1].copy(), 0.5), s.family)
    d = tmp_path_factory.mktemp("rt")
    save_dataset(DatasetSplit([s]), d)
    back = load_dataset(d).train[0]
    assert np.array_equal(back.future_a.points, pts)
