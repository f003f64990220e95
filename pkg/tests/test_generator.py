import numpy as np
import pytest

from scbg import nn
from scbg.core import YIELD, SynthConfig, Trajectory, synth_split
from scbg.courtesy import GROUND_TRUTH, LabeledSample, RewardSpec, courtesy_label, courtesy_values, label_dataset
from scbg.courtesy_range import predict_range, quantile_to_courtesy
from scbg.generator import (
    GeneratorModel,
    ScbgTrainConfig,
    TrainingData,
    batch_losses,
    courtesy_loss,
    generate,
    huber,
    stratified_batches,
    total_loss,
    traj_loss,
    train_scbg,
)
from scbg.predictor import PredictorModel, SceneArrays

from .oracles import finite_difference, max_rel_error

CFG = SynthConfig()
T, H = CFG.future_steps, CFG.history_steps


def tiny_predictor(seed=0):
    return PredictorModel.init(2, T, H, CFG.dt, hidden=10, embed=6, seed=seed)


@pytest.fixture(scope="module")
def small():
    predictor = tiny_predictor()
    split = synth_split(CFG, 31, 30, 10)
    labels = label_dataset(predictor, split.train, m=2, seed=0)
    val_labels = label_dataset(predictor, split.validation, m=2, seed=1)
    return predictor, split, labels, val_labels


def sample(traj, psi=0.0, m=0):
    return LabeledSample("s", m, Trajectory(np.asarray(traj, float), 0.5), psi, GROUND_TRUTH)


def test_huber_branches():
    z = np.zeros((T, 2))
    assert float(huber(z, z).value) == 0.0
    assert float(huber(np.full((T, 2), 0.5), z, 1.0).value) == pytest.approx(0.125)
    assert float(huber(np.full((T, 2), 2.0), z, 1.0).value) == pytest.approx(1.5)
    with pytest.raises(nn.ShapeError):
        huber(np.zeros((T, 2)), np.zeros((T - 1, 2)))


def test_traj_loss_arithmetic():
    z = np.zeros((4, 2))
    gt, aug = sample(z), [sample(z, m=1), sample(z, m=2)]
    offsets = [np.full((4, 2), np.sqrt(2 * v)) for v in (0.1, 0.2, 0.3)]  # huber = 0.5 e^2
    assert float(traj_loss(gt, aug, offsets, alpha=1.0).value) == pytest.approx(0.6)
    assert float(traj_loss(gt, aug, offsets, alpha=0.0).value) == pytest.approx(0.1)
    assert float(traj_loss(gt, aug, [z, z, z], alpha=0.7).value) == 0.0
    with pytest.raises(ValueError):
        traj_loss(gt, aug, [z], alpha=1.0)


def test_courtesy_loss_zero_when_labels_match(small):
    predictor, split, _, _ = small
    s = split.train[0]
    preds = [s.future_b.points, s.future_b.points + 0.7]
    samples = [sample(p, float(courtesy_label(predictor, s.observation, p).value), m) for m, p in enumerate(preds)]
    assert float(courtesy_loss(s.observation, samples, preds, predictor).value) == pytest.approx(0.0, abs=1e-20)


def test_courtesy_loss_with_ablated_predictor():
    predictor = tiny_predictor()
    last = predictor.future_encoder.layers[-1]
    last.weight.value = np.zeros_like(last.weight.value)
    last.bias.value = np.zeros_like(last.bias.value)
    s = synth_split(CFG, 32, 1, 0).train[0]
    preds = [s.future_b.points, s.future_b.points * 1.1]
    samples = [sample(preds[0], 1.0), sample(preds[1], -1.0, 1)]
    assert float(courtesy_loss(s.observation, samples, preds, predictor).value) == 2.0


def test_total_loss_combination():
    assert float(total_loss(nn.Node(1.0), nn.Node(2.0), 0.5).value) == 2.0
    traj = nn.Node(3.0)
    assert float(total_loss(traj, nn.Node(9.0), 0.0).value) == 3.0


def test_total_loss_gradient_is_weighted_sum(small):
    predictor, split, labels, _ = small
    model = GeneratorModel.from_predictor(predictor, hidden=8, seed=1)
    data = TrainingData.build(labels, split.train, predictor, 2, RewardSpec())
    emb = model.embed(data.arrays)
    cfg = ScbgTrainConfig(M=2, beta=0.3)
    idx = np.arange(4)
    lt, lc, l = batch_losses(model, predictor, data, idx, emb, cfg, RewardSpec())
    g_traj = nn.backward(batch_losses(model, predictor, data, idx, emb, cfg, RewardSpec())[0], model.params)
    g_court = nn.backward(batch_losses(model, predictor, data, idx, emb, cfg, RewardSpec())[1], model.params)
    g_total = nn.backward(l, model.params)
    for a, b, t in zip(g_traj, g_court, g_total):
        np.testing.assert_allclose(a + 0.3 * b, t, rtol=1e-10, atol=1e-13)


def test_beta_zero_total_equals_trajectory_loss(small):
    predictor, split, labels, _ = small
    model = GeneratorModel.from_predictor(predictor, hidden=8)
    data = TrainingData.build(labels, split.train, predictor, 2, RewardSpec())
    lt, _, l = batch_losses(model, predictor, data, np.arange(5), model.embed(data.arrays), ScbgTrainConfig(M=2, beta=0.0), RewardSpec())
    assert float(l.value) == float(lt.value)


def test_full_loss_gradient_matches_finite_differences(small):
    predictor, split, labels, _ = small
    model = GeneratorModel.from_predictor(predictor, hidden=6, seed=2)
    data = TrainingData.build(labels, split.train, predictor, 2, RewardSpec())
    emb = model.embed(data.arrays)
    cfg = ScbgTrainConfig(M=2, beta=0.5)
    idx = np.array([0, 3])

    def loss():
        return batch_losses(model, predictor, data, idx, emb, cfg, RewardSpec())[2]

    grads = nn.backward(loss(), model.params)
    for p, g in zip(model.params, grads):
        fd = finite_difference(lambda: float(loss().value), p)
        assert max_rel_error(g, fd) < 1e-4


def test_generate_is_deterministic_with_length_t(small):
    predictor, split, _, _ = small
    model = GeneratorModel.from_predictor(predictor)
    x = split.train[0].observation
    a, b = generate(model, x, 1.5), generate(model, x, 1.5)
    assert a == b and a.T == T


def test_decoder_layout_checked():
    predictor = tiny_predictor()
    model = GeneratorModel.from_predictor(predictor, hidden=8)
    with pytest.raises(nn.ShapeError):
        GeneratorModel(model.encoder, predictor.decoder, T, H)


def test_stratified_batches_are_balanced():
    psi0 = np.r_[np.full(30, 3.0), np.full(70, 0.5), [-2.0, -4.0]]
    gen = stratified_batches(psi0, 2.0, 7, np.random.default_rng(0))
    for _ in range(150):
        idx = next(gen)
        high = np.abs(psi0[idx]) >= 2.0
        assert high.sum() == 4 and (~high).sum() == 3


def test_empty_stratum_warns_and_falls_back():
    with pytest.warns(UserWarning, match="stratum"):
        gen = stratified_batches(np.zeros(10), 2.0, 4, np.random.default_rng(0))
        idx = next(gen)
    assert len(idx) == 4 and len(set(idx.tolist())) == 4


def test_training_is_reproducible_and_keeps_predictor_frozen(small, tmp_path):
    predictor, split, labels, val_labels = small
    before = [p.value.copy() for p in predictor.params]
    cfg = ScbgTrainConfig(M=2, steps=40, hidden=16, batch_size=8, seed=3)
    with pytest.warns(UserWarning):  # the untrained predictor labels are all small
        a = train_scbg(labels, split.train, predictor, cfg, validation=(val_labels, split.validation))
        b = train_scbg(labels, split.train, predictor, cfg, validation=(val_labels, split.validation))
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert all(np.array_equal(x, p.value) for x, p in zip(before, predictor.params))
    for enc, src in zip(a.encoder.params, predictor.scene_encoder.params):
        assert np.array_equal(enc.value, src.value)
    init, final = a.validation_loss
    assert final < init
    assert a.train_log[0]["step"] == 0 and a.train_log[-1]["step"] == 39


def test_baseline_variant_uses_ground_truth_only(small):
    predictor, split, labels, _ = small
    gt_only = [s for s in labels if s.m == 0]
    cfg = ScbgTrainConfig(M=0, alpha=0.0, beta=0.0, steps=20, hidden=8, batch_size=4)
    with pytest.warns(UserWarning):
        a = train_scbg(labels, split.train, predictor, cfg)
        b = train_scbg(gt_only, split.train, predictor, cfg)
    for x, y in zip(a.params, b.params):
        assert np.array_equal(x.value, y.value)


def test_checkpoint_round_trip(small, tmp_path):
    predictor, split, _, _ = small
    model = GeneratorModel.from_predictor(predictor, hidden=8)
    model.save(tmp_path / "g.json")
    back = GeneratorModel.load(tmp_path / "g.json")
    x = split.train[1].observation
    assert generate(model, x, -0.5) == generate(back, x, -0.5)


# -- trained-model behavior --------------------------------------------------


def test_trained_outputs_continue_the_history(trained):
    model = trained.generator
    for s in trained.split.validation[:100]:
        out = generate(model, s.observation, 0.0)
        gap = np.linalg.norm(out.points[0] - s.observation.history_b.points[-1])
        assert gap <= CFG.v_max * CFG.dt


def test_courtesy_rises_along_the_range_on_yield_scenarios(trained):
    pred, gen = trained.predictor, trained.generator
    yields = [s for s in trained.split.validation if s.family == YIELD]
    psi0 = np.array([float(courtesy_label(pred, s.observation, s.future_b).value) for s in yields])
    q = np.linspace(0.1, 0.9, 9)
    for i in np.argsort(-np.abs(psi0))[:5]:
        s = yields[i]
        rng = predict_range(trained.range_model, s.observation)
        psis = np.array([quantile_to_courtesy(rng, v) for v in q])
        arrays = SceneArrays.build([s.observation], T)
        out = gen.generate_batch(arrays.take(np.zeros(9, dtype=int)), psis).value
        realized = courtesy_values(pred, arrays, np.zeros(9, dtype=int), out)
        rank = np.corrcoef(np.argsort(np.argsort(realized)), np.arange(9))[0, 1]
        assert rank > 0
