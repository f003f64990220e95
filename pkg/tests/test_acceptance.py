"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from scbg import cli, nn
from scbg.core import YIELD, SynthConfig, synth_scenario, synth_split
from scbg.courtesy import MEANS, MonteCarlo, RewardSpec, courtesy_label, expected_reward, label_dataset
from scbg.courtesy_range import pinball_loss
from scbg.evaluation import DATA, OffsetGenerator, PsiStrategy, ReplayGenerator, courtesy_mse, traj_ade
from scbg.generator import GeneratorModel, ScbgTrainConfig, TrainingData, batch_losses, huber
from scbg.predictor import GmmTrajectoryDistribution, PredictorModel, gmm_nll

from .oracles import finite_difference, max_rel_error

CFG = SynthConfig()
T, H = CFG.future_steps, CFG.history_steps


@pytest.fixture
def verdict(capsys):
    def check(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return check


def tiny_predictor(seed: int) -> PredictorModel:
    return PredictorModel.init(2, T, H, CFG.dt, hidden=8, embed=6, seed=seed)


def ablate_future(model: PredictorModel) -> PredictorModel:
    last = model.future_encoder.layers[-1]
    last.weight.value = np.zeros_like(last.weight.value)
    last.bias.value = np.zeros_like(last.bias.value)
    return model


def _grad_errors() -> dict[str, list[float]]:
    errs = {"gmm_nll": [], "huber": [], "pinball": [], "courtesy": [], "scbg_loss": []}
    rng = np.random.default_rng(0)
    for i in range(10):
        w_logits = nn.Node(rng.normal(size=3))
        # components overlap the target so that no responsibility, and no gradient entry, vanishes
        mu = nn.Node(rng.normal(scale=0.5, size=(3, 3, 2)))
        log_var = nn.Node(rng.normal(scale=0.3, size=(3, 3, 2)))
        y = rng.normal(scale=0.5, size=(3, 2))

        def nll():
            log_w = w_logits - nn.logsumexp(w_logits, axis=-1)
            dist = GmmTrajectoryDistribution(nn.exp(log_w), mu, nn.exp(log_var), log_w)
            return gmm_nll(dist, y)

        grads = nn.backward(nll(), [w_logits, mu, log_var])
        errs["gmm_nll"].append(max(max_rel_error(g, finite_difference(lambda: float(nll().value), p)) for g, p in zip(grads, (w_logits, mu, log_var))))

        a = nn.Node(rng.normal(scale=1.5, size=(T, 2)))
        b = rng.normal(size=(T, 2))
        a.value[np.abs(a.value - b) - 1.0 < 1e-3] += 0.01  # keep clear of the kink

        (g,) = nn.backward(huber(a, b), [a])
        errs["huber"].append(max_rel_error(g, finite_difference(lambda: float(huber(a, b).value), a)))

        psi_hat = nn.Node(rng.normal(size=4))
        psi = psi_hat.value + rng.choice([-1, 1], 4) * rng.uniform(0.1, 1.0, 4)
        tau = float(rng.uniform(0.05, 0.95))

        def pin():
            return pinball_loss(psi, psi_hat, tau).sum()

        (g,) = nn.backward(pin(), [psi_hat])
        errs["pinball"].append(max_rel_error(g, finite_difference(lambda: float(pin().value), psi_hat)))

        model = tiny_predictor(i)
        s = synth_split(CFG, 100 + i, 1, 0).train[0]
        y_b = nn.Node(s.future_b.points.copy())
        (g,) = nn.backward(courtesy_label(model, s.observation, y_b), [y_b])
        errs["courtesy"].append(max_rel_error(g, finite_difference(lambda: float(courtesy_label(model, s.observation, y_b).value), y_b)))

        split = synth_split(CFG, 200 + i, 3, 0)
        labels = label_dataset(model, split.train, m=2, seed=i)
        gen = GeneratorModel.from_predictor(model, hidden=4, seed=i)
        data = TrainingData.build(labels, split.train, model, 2, RewardSpec())
        emb = gen.embed(data.arrays)
        cfg = ScbgTrainConfig(M=2, alpha=float(rng.uniform(0.1, 1.0)), beta=float(rng.uniform(0.1, 1.0)))
        idx = np.array([0, 2])

        def loss():
            return batch_losses(gen, model, data, idx, emb, cfg, RewardSpec())[2]

        grads = nn.backward(loss(), gen.params)
        errs["scbg_loss"].append(max(max_rel_error(g, finite_difference(lambda: float(loss().value), p)) for g, p in zip(grads, gen.params)))
    return errs


def test_criterion_01_gradient_integrity(verdict):
    start = time.perf_counter()
    errs = _grad_errors()
    seconds = time.perf_counter() - start
    worst = {k: max(v) for k, v in errs.items()}
    ok = all(len(v) >= 10 for v in errs.values()) and max(worst.values()) < 1e-4 and seconds < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {seconds:.1f} s"
    verdict(1, "gradients match central differences", ok, detail)


def test_criterion_02_courtesy_zero_law(verdict):
    rng = np.random.default_rng(1)
    psis = []
    for k, s in enumerate(synth_split(CFG, 300, 50, 0).train):
        model = ablate_future(tiny_predictor(k % 5))
        for _ in range(2):
            y_b = s.future_b.points + rng.normal(scale=5.0, size=(T, 2))
            psis.append(float(courtesy_label(model, s.observation, y_b).value))
    ok = len(psis) == 100 and all(p == 0.0 for p in psis)
    verdict(2, "ablated future encoder gives psi == 0", ok, f"{sum(p == 0.0 for p in psis)}/{len(psis)} exactly zero")


def _line(speed: float, heading: float) -> np.ndarray:
    s = speed * CFG.dt * np.arange(T)
    return np.stack([s * np.cos(heading), s * np.sin(heading)], 1)


def test_criterion_03_expectation_oracle(verdict):
    rng = np.random.default_rng(2)
    gaps = []
    for i in range(20):
        K = int(rng.integers(1, 5))
        w = rng.dirichlet(np.ones(K))
        means = np.stack([_line(v, h) for v, h in zip(rng.uniform(2.0, 15.0, K), rng.uniform(-np.pi, np.pi, K))])
        means = means + rng.normal(scale=0.2, size=means.shape)
        sigma = rng.uniform(0.01, 0.1, size=means.shape)
        dist = GmmTrajectoryDistribution.from_arrays(w, means, sigma**2)
        mc = float(expected_reward(dist, mode=MonteCarlo(100_000, i)).value)
        gaps.append(abs(float(expected_reward(dist, mode=MEANS).value) - mc))
    exact = []
    for i in range(20):
        mean = _line(rng.uniform(2.0, 15.0), rng.uniform(-np.pi, np.pi))[None]
        dist = GmmTrajectoryDistribution.from_arrays(np.ones(1), mean, np.zeros_like(mean))
        mc = float(expected_reward(dist, mode=MonteCarlo(100_000, i)).value)
        exact.append(abs(float(expected_reward(dist, mode=MEANS).value) - mc))
    ok = max(gaps) < 0.05 and max(exact) <= 1e-10
    verdict(3, "MEANS agrees with Monte Carlo", ok, f"max gap {max(gaps):.4f} m/s (sigma <= 0.1), zero-variance max {max(exact):.1e}")


def test_criterion_04_causal_signal(trained, verdict):
    stop, go = [], []
    for index in range(1, 401, 2):  # odd indices are YIELD scenarios
        for u, bucket in ((1.0, stop), (-1.0, go)):
            s = synth_scenario(CFG, 2024, index, maneuver=u)
            assert s.family == YIELD
            bucket.append(float(courtesy_label(trained.predictor, s.observation, s.future_b).value))
    gap = float(np.mean(stop) - np.mean(go))
    n_train = len(trained.split.train)
    ok = gap > 0 and n_train >= 500 and trained.seconds < 600
    detail = f"yield {np.mean(stop):+.3f} vs assert {np.mean(go):+.3f} m/s (gap {gap:+.3f}); {n_train} train scenarios; pipeline {trained.seconds:.0f} s"
    verdict(4, "yielding maneuvers earn higher courtesy", ok, detail)


def test_criterion_05_controllability(trained, verdict):
    corr = trained.variant("full")["correlation"]
    r, r_high = corr["r"], corr["r_high"]
    ok = corr["n_scenarios"] >= 200 and r >= 0.6 and r_high is not None and r_high > r
    high = "undefined" if r_high is None else f"{r_high:.3f}"
    detail = f"r = {r:.3f} over {corr['n_scenarios']} scenarios, r_high = {high} over {corr['n_high']} with |psi0| >= {corr['threshold']}"
    verdict(5, "quantile sweep controls courtesy", ok, detail)


def _ordering(report: dict) -> tuple[bool, str]:
    rows = {r["name"]: r for r in report["reports"]}
    mse = [rows[n]["courtesy_mse"]["data"]["mean"] for n in ("full", "augmentation", "baseline")]
    ade = [rows[n]["traj_ade"]["mean"] for n in ("full", "baseline")]
    ok = mse[0] <= mse[1] <= mse[2] and ade[0] <= ade[1]
    return ok, f"seed {report['seed']}: MSE full {mse[0]:.3f} <= aug {mse[1]:.3f} <= base {mse[2]:.3f}; ADE full {ade[0]:.3f} <= base {ade[1]:.3f}"


def test_criterion_06_ablation_ordering(trained, tmp_path, verdict):
    ok, detail = _ordering(trained.report)
    details = [detail]
    if not ok:  # one retry on a fresh seed
        out = tmp_path / "retry"
        assert cli.main(["pipeline", "--seed", str(trained.report["seed"] + 1), "--out", str(out)]) == 0
        ok, detail = _ordering(json.loads((out / "report.json").read_text()))
        details.append(detail)
    verdict(6, "ablation ordering", ok, " | ".join(details))


def test_criterion_07_range_value(trained, verdict):
    mse = trained.variant("full")["courtesy_mse"]
    ratio = mse["arbitrary"]["mean"] / mse["range"]["mean"]
    verdict(7, "ARBITRARY >= 5x RANGE", ratio >= 5.0, f"{mse['arbitrary']['mean']:.3f} / {mse['range']['mean']:.3f} = {ratio:.1f}x")


def test_criterion_08_realism(trained, verdict):
    full = trained.variant("full")["traj_ade"]["mean"]
    marginal = trained.report["predictor_marginal_b"]["ade"]
    verdict(8, "full TrajADE <= marginal top-1 ADE", full <= marginal, f"{full:.3f} m vs {marginal:.3f} m")


def test_criterion_09_quantile_calibration(trained, verdict):
    cov = trained.report["range_coverage"]
    ok = 0.05 <= cov["below_lo"] <= 0.15 and 0.85 <= cov["below_hi"] <= 0.95
    verdict(9, "range quantile coverage", ok, f"below 0.1-quantile {cov['below_lo']:.3f}, below 0.9-quantile {cov['below_hi']:.3f}")


def test_criterion_10_metric_exactness(trained, verdict):
    val, labels, pred = trained.split.validation, trained.val_labels, trained.predictor
    replay = ReplayGenerator(labels)
    mse = courtesy_mse(replay, pred, val, PsiStrategy(DATA), labels=labels).summary()[0]
    ade = traj_ade(replay, pred, val).summary()[0]
    offset = traj_ade(OffsetGenerator(replay, [1.0, 0.0]), pred, val).summary()[0]
    ok = mse == 0.0 and ade == 0.0 and offset == 1.0
    verdict(10, "replay and offset oracles", ok, f"replay CourtesyMSE {mse!r}, replay TrajADE {ade!r}, 1 m offset TrajADE {offset!r}")


SMALL = {
    "n_train": 60,
    "n_validation": 20,
    "predictor": {"K": 2, "hidden": 16, "embed": 16, "steps": 80, "batch_size": 16},
    "scbg": {"steps": 40, "hidden": 16, "batch_size": 8},
    "range": {"steps": 40, "hidden": 8},
    "eval": {"render_count": 2},
}


def test_criterion_11_determinism(tmp_path, verdict):
    config = tmp_path / "small.json"
    config.write_text(json.dumps(SMALL))
    runs = [tmp_path / "a", tmp_path / "b"]
    for out in runs:
        assert cli.main(["pipeline", "--config", str(config), "--seed", "5", "--out", str(out)]) == 0
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    same_set = files == sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
    differ = [str(f) for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    kinds = {f.suffix for f in files}
    ok = same_set and not differ and {".json", ".jsonl", ".csv", ".svg"} <= kinds
    detail = f"{len(files)} files compared ({', '.join(sorted(kinds))}); differing: {differ or 'none'}"
    verdict(11, "pipeline reruns are byte-identical", ok, detail)
