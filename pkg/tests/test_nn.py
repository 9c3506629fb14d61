import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbrs_sense.errors import EmptyTrainingSet, InvalidConfig, NonFiniteLoss, ShapeMismatch
from cbrs_sense.eval import ScoredSet, froc_auc_normalized
from cbrs_sense.io import load_model, save_model
from cbrs_sense.nn import (
    NetDetector,
    Params,
    TrainConfig,
    channel_average_pool,
    channel_average_pool_backward,
    cnn3_forward,
    forward_logit,
    grad_check,
    init_params,
    linear_grad_check,
    loss_and_grad,
    lstm_forward,
    predict_logits,
    predict_proba,
    train,
    truncated_normal,
)
from cbrs_sense.nn.kernels import avg_pool
from cbrs_sense.nn.model import dropout_mask
from cbrs_sense.nn.sweep import curve_on_grid, multi_init_sweep


def separable_set(seed=0, n=10):
    """Flat noise against the same noise plus a bright 10-column stripe."""
    rng = np.random.default_rng(seed)
    X = rng.normal(-92.0, 1.5, size=(n, 134, 46))
    y = np.arange(n) % 2
    X[y == 1, :, 18:28] += 30.0
    return X, y


def random_input(rng):
    return rng.uniform(-95.0, -60.0, size=(134, 46))


# ------------------------------------------------------------------ init


@pytest.mark.parametrize("kind", ["cnn3", "lstm"])
def test_init_is_deterministic(kind):
    a = init_params(kind, 7, hidden=16)
    b = init_params(kind, 7, hidden=16)
    assert np.array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, init_params(kind, 8, hidden=16).flat)


@pytest.mark.parametrize("kind", ["cnn3", "lstm"])
def test_init_biases_zero(kind):
    p = init_params(kind, 3, hidden=16)
    for name in p.names:
        if name.endswith("_b"):
            assert np.all(p[name] == 0.0), name


def test_truncated_normal_statistics():
    w = truncated_normal(np.random.default_rng(0), (100_000,))
    assert np.abs(w).max() <= 2.0
    assert abs(w.mean()) < 0.02
    # truncated at two sigma the variance is about 0.774
    assert w.std() == pytest.approx(0.8796, abs=0.01)


def test_xavier_bounds():
    p = init_params("cnn3", 0)
    lim = math.sqrt(6.0 / (9 + 9 * 20))
    assert np.abs(p["conv_w"]).max() <= lim
    assert np.abs(p["conv_w"]).max() > 0.8 * lim
    q = init_params("lstm", 0, hidden=8)
    glim = math.sqrt(6.0 / (46 + 8 + 8))
    assert np.abs(q["lstm_wx"]).max() <= glim
    assert np.abs(q["lstm_wh"]).max() <= glim


def test_params_shapes():
    p = init_params("cnn3", 0)
    assert p["conv_w"].shape == (3, 3, 20)
    assert p["fc1_w"].shape == (231, 150)
    assert p["fc2_w"].shape == (150,)
    q = init_params("lstm", 0)
    assert q["lstm_wx"].shape == (46, 256)
    assert q["fc1_w"].shape == (64, 50)


def test_params_invalid():
    with pytest.raises(InvalidConfig):
        Params.zeros("gru")
    with pytest.raises(InvalidConfig):
        Params.zeros("lstm", hidden=0)


# ------------------------------------------------------------------ channel-average pool


def test_channel_pool_identity_for_one_channel(rng):
    a = rng.normal(size=(4, 5, 1))
    assert np.array_equal(channel_average_pool(a), a[:, :, 0])


def test_channel_pool_two_channels():
    a = np.empty((3, 3, 2))
    a[..., 0] = 1.0
    a[..., 1] = 3.0
    assert np.all(channel_average_pool(a) == 2.0)


def test_channel_pool_gradient_is_one_over_c():
    g = channel_average_pool_backward(np.ones((11, 21)), 20)
    assert np.allclose(g, 1 / 20)


@given(st.floats(-100, 100), st.integers(1, 6), st.integers(0, 2**31))
def test_channel_pool_commutes_with_scaling(s, C, seed):
    a = np.random.default_rng(seed).normal(size=(5, 4, C))
    assert np.allclose(channel_average_pool(s * a), s * channel_average_pool(a), atol=1e-9)


def test_avg_pool_drops_trailing_rows():
    x = np.zeros((134, 46))
    x[130:] = 1000.0
    p = avg_pool(x, 10, 2)
    assert p.shape == (13, 23)
    assert np.all(p == 0.0)


# ------------------------------------------------------------------ forward passes


@pytest.mark.parametrize("kind", ["cnn3", "lstm"])
def test_zero_params_give_half(kind, rng):
    p = Params.zeros(kind, hidden=8)
    fwd = cnn3_forward if kind == "cnn3" else lstm_forward
    assert fwd(p, random_input(rng)) == 0.5


def test_cnn_handcrafted_constant_input():
    p = Params.zeros("cnn3", center_input=False)
    p["conv_w"][1, 1, 0] = 1.0
    w1, w2, c = 0.01, 0.02, 3.0
    p["fc1_w"][...] = w1
    p["fc2_w"][...] = w2
    x = np.full((134, 46), c)
    # one live filter of twenty, so the averaged map is c/20 in each of 231 cells
    want = 1 / (1 + math.exp(-150 * w2 * max(231 * c * w1 / 20, 0.0)))
    assert cnn3_forward(p, x) == pytest.approx(want, rel=1e-12)
    assert forward_logit(p, x) == pytest.approx(150 * w2 * 231 * c * w1 / 20, rel=1e-12)


def test_cnn_handcrafted_negative_is_cut_by_relu():
    p = Params.zeros("cnn3", center_input=False)
    p["conv_w"][1, 1, 0] = 1.0
    p["fc1_w"][...] = 1.0
    p["fc2_w"][...] = 1.0
    assert cnn3_forward(p, np.full((134, 46), -80.0)) == 0.5


def test_cnn_shape_errors():
    p = Params.zeros("cnn3")
    with pytest.raises(ShapeMismatch):
        cnn3_forward(p, np.zeros((133, 46)))
    with pytest.raises(ShapeMismatch):
        predict_logits(p, np.zeros((2, 134, 45)))


def test_wrong_kind_rejected():
    with pytest.raises(InvalidConfig):
        cnn3_forward(Params.zeros("lstm", hidden=4), np.zeros((134, 46)))
    with pytest.raises(InvalidConfig):
        lstm_forward(Params.zeros("cnn3"), np.zeros((134, 46)))


@pytest.mark.parametrize("xv,w", [(0.3, 2.0), (0.9, 1.0), (0.05, 10.0)])
def test_lstm_saturated_gates(xv, w):
    p = Params.zeros("lstm", hidden=1, residual=False, center_input=False)
    b = p["lstm_b"]
    b[0], b[1], b[2] = 50.0, -50.0, 50.0  # input open, forget shut, output open
    p["lstm_wx"][0, 3] = w
    p["fc1_w"][0, 0] = 1.0
    p["fc2_w"][0] = 1.0
    x = np.zeros((134, 46))
    x[:, 0] = np.linspace(-1, 1, 134)
    x[-1, 0] = xv
    # forget shut means only the last row survives: c = tanh(x*w), h = tanh(c)
    want = math.tanh(math.tanh(xv * w))
    assert forward_logit(p, x) == pytest.approx(want, abs=1e-12)


def test_lstm_residual_irrelevant_with_zero_cell_weights(rng):
    a = init_params("lstm", 1, hidden=8, residual=True)
    for name in ("lstm_wx", "lstm_wh", "lstm_b"):
        a[name][...] = 0.0
    b = Params("lstm", a.flat.copy(), 8, residual=False)
    X = np.stack([random_input(rng) for _ in range(3)])
    assert np.array_equal(predict_logits(a, X), predict_logits(b, X))


def test_lstm_residual_sums_step_outputs():
    p = Params.zeros("lstm", hidden=1, residual=True, center_input=False)
    p["lstm_b"][:3] = [50.0, -50.0, 50.0]
    p["lstm_b"][3] = 0.5
    p["fc1_w"][0, 0] = 1.0
    p["fc2_w"][0] = 1.0
    # constant candidate, forget shut: every step emits tanh(tanh(0.5))
    assert forward_logit(p, np.zeros((134, 46))) == pytest.approx(134 * math.tanh(math.tanh(0.5)), rel=1e-12)


@pytest.mark.parametrize("kind", ["cnn3", "lstm"])
def test_inference_is_pure(kind, rng):
    p = init_params(kind, 4, hidden=8)
    x = random_input(rng)
    before = p.flat.copy()
    assert forward_logit(p, x) == forward_logit(p, x.copy())
    assert np.array_equal(p.flat, before)
    assert NetDetector(p)(x) == pytest.approx(forward_logit(p, x), rel=1e-12)


@pytest.mark.parametrize("kind", ["cnn3", "lstm"])
def test_batch_matches_single(kind, rng):
    p = init_params(kind, 5, hidden=8)
    X = np.stack([random_input(rng) for _ in range(4)])
    assert np.allclose(predict_logits(p, X), [forward_logit(p, x) for x in X], rtol=1e-12)


def test_probability_strictly_inside_unit_interval():
    p = Params.zeros("cnn3")
    p["fc2_b"][0] = 1e6
    x = np.zeros((134, 46))
    assert 0.0 < cnn3_forward(p, x) < 1.0
    p["fc2_b"][0] = -1e6
    assert 0.0 < cnn3_forward(p, x) < 1.0
    pr = predict_proba(p, x[None])
    assert 0.0 < pr[0] < 1.0
    loss, g = loss_and_grad(p, x, 1.0)
    assert math.isfinite(loss) and np.all(np.isfinite(g))


def test_dropout_mode_changes_output_reproducibly(rng):
    p = init_params("cnn3", 2)
    x = random_input(rng)
    a = cnn3_forward(p, x, train_mode=True, dropout_seed=9)
    assert a == cnn3_forward(p, x, train_mode=True, dropout_seed=9)
    assert a != cnn3_forward(p, x)


def test_dropout_expectation():
    v = np.linspace(0.5, 3.0, 150)
    rng = np.random.default_rng(0)
    masks = dropout_mask(rng, (10_000, 150), 0.5)
    assert set(np.unique(masks)) == {0.0, 2.0}
    mean = (masks * v).mean(axis=0)
    assert np.abs(mean.sum() / v.sum() - 1) < 0.02
    assert np.all(np.abs(mean / v - 1) < 0.1)


# ------------------------------------------------------------------ gradients


def test_linear_grad_check(rng):
    for label in (0.0, 1.0):
        err = linear_grad_check(rng.normal(size=30) * 0.1, 0.2, rng.normal(size=30), label)
        assert err < 1e-7


@pytest.mark.parametrize("kind,hidden", [("cnn3", 64), ("lstm", 8)])
def test_grad_check_twenty_draws(kind, hidden):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for d in range(20):
        p = init_params(kind, int(rng.integers(2**63)), hidden=hidden)
        r = grad_check(p, random_input(rng), float(d % 2))
        assert r.n_params == p.size
        assert r.n_skipped < 0.01 * p.size
        worst = max(worst, r.max_rel_error)
    assert worst < 1e-3


def test_grad_check_residual_off():
    rng = np.random.default_rng(5)
    p = init_params("lstm", 11, hidden=8, residual=False)
    assert grad_check(p, random_input(rng), 1.0).max_rel_error < 1e-3


def test_grad_check_without_centering():
    rng = np.random.default_rng(6)
    p = init_params("cnn3", 3, center_input=False)
    p.flat[:] *= 0.01
    x = rng.uniform(-1, 1, size=(134, 46))
    assert grad_check(p, x, 0.0).max_rel_error < 1e-3


def test_grad_check_catches_a_wrong_gradient(monkeypatch):
    import cbrs_sense.nn.model as M

    real = M.loss_and_grad

    def broken(params, ch, label, keep=None):
        loss, g = real(params, ch, label, keep)
        g[params.slices()["fc2_b"]] *= 1.5
        return loss, g

    monkeypatch.setattr(M, "loss_and_grad", broken)
    p = init_params("cnn3", 1)
    assert M.grad_check(p, random_input(np.random.default_rng(0)), 1.0).max_rel_error > 0.1


# ------------------------------------------------------------------ training


@pytest.mark.parametrize("kind,hidden", [("cnn3", 64), ("lstm", 8)])
def test_overfits_separable_set(kind, hidden):
    X, y = separable_set()
    cfg = TrainConfig(optimizer="adagrad", learning_rate=1e-3, epochs=500, seed=0, hidden=hidden)
    r = train(kind, X, y, cfg)
    assert len(r.loss_history) == 500
    assert np.mean((predict_logits(r.params, X) > 0) == (y == 1)) == 1.0
    assert r.loss_history[-1] < r.loss_history[0]


def test_uninformative_output_loss_is_ln2():
    # zero output layer: every example scores 0.5
    X, y = separable_set(1, 8)
    p = init_params("cnn3", 0)
    p["fc2_w"][...] = 0.0
    r = train("cnn3", X, y, TrainConfig(epochs=1, learning_rate=1e-12), params=p)
    assert r.loss_history[0] == pytest.approx(math.log(2), abs=1e-6)


def test_fresh_init_loss_is_finite_and_not_tiny():
    X, y = separable_set(2, 20)
    for kind, h in (("cnn3", 64), ("lstm", 8)):
        r = train(kind, X, y, TrainConfig(epochs=1, learning_rate=1e-12, seed=3, hidden=h))
        assert math.isfinite(r.loss_history[0])
        assert r.loss_history[0] > 0.3


@pytest.mark.parametrize("opt", ["sgd", "adagrad", "adam"])
def test_training_is_deterministic(opt):
    X, y = separable_set(3, 6)
    cfg = TrainConfig(optimizer=opt, epochs=4, seed=12, hidden=8)
    for kind in ("cnn3", "lstm"):
        a = train(kind, X, y, cfg)
        b = train(kind, X, y, cfg)
        assert a.loss_history == b.loss_history
        assert np.array_equal(a.params.flat, b.params.flat)


def test_training_does_not_touch_given_params():
    X, y = separable_set(4, 4)
    p = init_params("cnn3", 0)
    before = p.flat.copy()
    train("cnn3", X, y, TrainConfig(epochs=2), params=p)
    assert np.array_equal(p.flat, before)


def test_training_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(InvalidConfig):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(InvalidConfig):
        TrainConfig(dropout_p=1.0)


def test_training_input_errors():
    X, y = separable_set(0, 4)
    with pytest.raises(EmptyTrainingSet):
        train("cnn3", X[:0], y[:0], TrainConfig(epochs=1))
    with pytest.raises(ShapeMismatch):
        train("cnn3", X, y[:3], TrainConfig(epochs=1))
    with pytest.raises(InvalidConfig):
        train("cnn3", X, y + 1, TrainConfig(epochs=1))


def test_non_finite_loss_aborts():
    X, y = separable_set(0, 4)
    X[1, 0, 0] = np.nan
    with pytest.raises(NonFiniteLoss):
        train("cnn3", X, y, TrainConfig(epochs=1, center_input=False))


def test_on_epoch_callback():
    X, y = separable_set(0, 4)
    seen = []
    train("lstm", X, y, TrainConfig(epochs=3, hidden=4), on_epoch=lambda e, loss, p: seen.append(e))
    assert seen == [0, 1, 2]


@pytest.mark.parametrize("kind", ["cnn3", "lstm"])
def test_params_roundtrip(kind, tmp_path, rng):
    p = init_params(kind, 9, hidden=12, residual=False) if kind == "lstm" else init_params(kind, 9)
    save_model(tmp_path / "m.cbrs", p)
    q = load_model(tmp_path / "m.cbrs")
    assert isinstance(q, Params)
    assert (q.kind, q.hidden, q.residual, q.center_input) == (p.kind, p.hidden, p.residual, p.center_input)
    assert np.array_equal(q.flat, p.flat)
    x = random_input(rng)
    assert forward_logit(q, x) == forward_logit(p, x)


# ------------------------------------------------------------------ multi-init sweep


@pytest.fixture(scope="module")
def sweep_data():
    X, y = separable_set(7, 12)
    rng = np.random.default_rng(8)
    tX = rng.normal(-92.0, 1.5, size=(24, 134, 46))
    ty = np.arange(24) % 3 == 0
    tX[ty, :, 20:26] += rng.uniform(1, 8, size=(int(ty.sum()), 1, 1))
    ids = [f"s{i // 4}" for i in range(24)]
    scored = ScoredSet(ids, [3550.0 + 10 * (i % 4) for i in range(24)], np.zeros(24), ty)
    return X, y, tX, scored


def test_sweep_selects_max(sweep_data):
    X, y, tX, scored = sweep_data
    r = multi_init_sweep("cnn3", X, y, tX, scored, TrainConfig(epochs=3, seed=1), n_inits=5)
    aucs = [i.froc_auc for i in r.inits]
    assert len(aucs) == 5
    assert r.best.froc_auc == max(aucs)
    assert len({i.seed for i in r.inits}) == 5
    best_scores = ScoredSet(scored.ids, scored.channels, predict_logits(r.best_params, tX), scored.labels)
    from cbrs_sense.eval import froc_curve

    assert froc_auc_normalized(froc_curve(best_scores)) == r.best.froc_auc
    assert np.all(r.lower <= r.curves + 1e-12)
    assert np.all(r.curves <= r.upper + 1e-12)


def test_sweep_single_init_envelope(sweep_data):
    X, y, tX, scored = sweep_data
    r = multi_init_sweep("lstm", X, y, tX, scored, TrainConfig(epochs=2, seed=2, hidden=4), n_inits=1)
    c = r.inits[0].curve
    assert np.array_equal(r.lower, r.upper)
    assert np.allclose(r.lower, curve_on_grid(c, r.grid))
    assert np.allclose(np.interp(c.mean_fp, r.grid, r.lower)[-1], c.fraction[-1])


def test_sweep_errors(sweep_data):
    X, y, tX, scored = sweep_data
    with pytest.raises(InvalidConfig):
        multi_init_sweep("cnn3", X, y, tX, scored, n_inits=0)
    with pytest.raises(InvalidConfig):
        multi_init_sweep("cnn3", X, y, tX[:3], scored, n_inits=1)


@settings(max_examples=10)
@given(st.integers(0, 2**31))
def test_forward_always_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    p = init_params("cnn3", seed)
    p.flat[:] *= rng.uniform(0.1, 100)
    pr = cnn3_forward(p, rng.uniform(-120, 0, size=(134, 46)))
    assert 0.0 < pr < 1.0
