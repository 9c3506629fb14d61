import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cbrs_sense.errors import DimensionMismatch, EmptyTrainingSet, InvalidConfig
from cbrs_sense.ml import (
    Kernel,
    _component_loglik,
    gmm_decide,
    gmm_em,
    gmm_fit,
    gmm_posteriors,
    gmm_score,
    knn_decide,
    knn_fit,
    knn_neighbors,
    knn_score,
    svm_decide,
    svm_fit,
    svm_score,
)


def brute_neighbors(T, q, k):
    d = ((T - q) ** 2).sum(axis=1)
    return np.lexsort((np.arange(len(T)), d))[:k]


def test_knn_tie_rule():
    X = np.array([[1.0], [-1.0], [2.0], [-2.0], [10.0]])
    y = np.array([1, 0, 1, 0, 1])
    m = knn_fit(X, y, k=4)
    assert knn_score(m, np.array([0.0])) == 0.5
    assert not knn_decide(m, np.array([0.0]))


@given(st.integers(0, 2**31), st.sampled_from([2, 5, 9, 12]))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    # integer grid forces distance ties
    T = rng.integers(-3, 4, size=(30, 3)).astype(float)
    y = rng.integers(0, 2, 30)
    Q = rng.integers(-3, 4, size=(8, 3)).astype(float)
    m = knn_fit(T, y, k)
    nb = knn_neighbors(m, Q)
    for q, row in zip(Q, nb):
        assert row.tolist() == brute_neighbors(T, q, k).tolist()
    s = knn_score(m, Q)
    assert np.all(np.isin(np.round(s * k), np.arange(k + 1)))


def test_knn_separable_training_scores(rng):
    X = np.r_[rng.normal(0, 1, (40, 5)), rng.normal(8, 1, (40, 5))]
    y = np.r_[np.zeros(40), np.ones(40)]
    m = knn_fit(X, y, 9)
    assert np.all(knn_score(m, X[40:]) >= 5 / 9)


def test_knn_errors():
    with pytest.raises(EmptyTrainingSet):
        knn_fit(np.zeros((0, 3)), [], 1)
    m = knn_fit(np.zeros((5, 3)), [0, 1, 0, 1, 0], 2)
    with pytest.raises(DimensionMismatch):
        knn_score(m, np.zeros(4))
    with pytest.raises(InvalidConfig):
        knn_fit(np.zeros((3, 2)), [0, 1, 0], 5)


def test_model_names():
    assert knn_fit(np.zeros((3, 2)), [0, 1, 0], 1, feature_mode="full").name == "KNN6164"
    m = svm_fit(np.array([[0.0, 0], [1, 1], [2, 2], [3, 3]]), [0, 0, 1, 1], feature_mode="center2")
    assert m.name == "SVM268"


TOY = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 3.0], [4.0, 3.0]])
TOY_Y = np.array([0, 0, 1, 1])


@pytest.mark.parametrize("solver", ["primal", "smo"])
def test_svm_toy(solver):
    m = svm_fit(TOY, TOY_Y, solver=solver, C=10.0)
    s = svm_score(m, TOY)
    assert np.array_equal(s > 0, TOY_Y == 1)
    assert np.all(np.abs(s) > 0.5)


def test_svm_hyperplane_zero():
    m = svm_fit(TOY, TOY_Y, solver="smo", C=10.0)
    w = m.weight_vector()
    # a point on the plane: center + v with w.v = -bias
    v = -m.bias * w / (w @ w)
    assert svm_score(m, m.center + v) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("solver", ["primal", "smo"])
def test_svm_duplicates_keep_boundary(solver, rng):
    X = np.r_[rng.normal(0, 1, (30, 2)), rng.normal(4, 1, (30, 2))]
    y = np.r_[np.zeros(30), np.ones(30)]
    grid = np.stack(np.meshgrid(np.linspace(-2, 6, 15), np.linspace(-2, 6, 15)), -1).reshape(-1, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = svm_decide(svm_fit(X, y, solver=solver, C=1.0, max_epochs=2000, tol=1e-6), grid)
    # doubling the data with C halved is the same optimization problem
        b = svm_decide(svm_fit(np.r_[X, X], np.r_[y, y], solver=solver, C=0.5, max_epochs=2000, tol=1e-6), grid)
    assert np.mean(a == b) >= (0.97 if solver == "primal" else 1.0)


def test_svm_duplicates_separable_same_c():
    grid = np.stack(np.meshgrid(np.linspace(-1, 5, 13), np.linspace(-1, 4, 11)), -1).reshape(-1, 2)
    a = svm_decide(svm_fit(TOY, TOY_Y, solver="smo", C=100.0), grid)
    b = svm_decide(svm_fit(np.r_[TOY, TOY], np.r_[TOY_Y, TOY_Y], solver="smo", C=100.0), grid)
    assert np.array_equal(a, b)


def test_svm_smo_dual_bounds(rng):
    X = rng.normal(0, 1, (50, 3))
    y = (X[:, 0] + 0.5 * rng.normal(size=50) > 0).astype(int)
    for kind in ("linear", "rbf", "poly", "sigmoid"):
        m = svm_fit(X, y, kernel=kind, C=2.0, solver="smo")
        alpha = np.abs(m.dual_coef)
        assert alpha.size >= 1
        assert np.all(alpha <= 2.0 + 1e-9) and np.all(alpha > 0)
        assert abs(m.dual_coef.sum()) < 1e-6


@given(st.integers(0, 2**31), st.floats(0, 1))
def test_linear_svm_affine(seed, a):
    rng = np.random.default_rng(seed)
    m = svm_fit(TOY, TOY_Y, solver="smo")
    x1, x2 = rng.normal(0, 3, 2), rng.normal(0, 3, 2)
    lhs = svm_score(m, a * x1 + (1 - a) * x2)
    rhs = a * svm_score(m, x1) + (1 - a) * svm_score(m, x2)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_smo_matches_primal_objective(rng):
    X = np.r_[rng.normal(0, 1, (40, 4)), rng.normal(1.5, 1, (40, 4))]
    y = np.r_[np.zeros(40), np.ones(40)]
    from cbrs_sense.ml import svm_objective

    d = svm_fit(X, y, solver="smo", C=1.0, tol=1e-6)
    p = svm_fit(X, y, solver="primal", C=1.0, max_epochs=3000, tol=1e-7)
    t = np.where(y == 1, 1.0, -1.0)
    od = svm_objective(X - d.center, t, d.weight_vector(), d.bias, 1.0)
    op = svm_objective(X - p.center, t, p.w, p.bias, 1.0)
    assert od <= op + 1e-6
    assert op <= od * 1.05


@pytest.mark.parametrize("seed", range(10))
def test_gmm_two_clusters(rng, seed):
    a = rng.normal(0, 0.5, 50)
    b = rng.normal(10, 0.5, 50)
    X = np.r_[a, b][:, None]
    y = np.r_[np.zeros(50), np.ones(50)]
    m = gmm_fit(X, y, seed=seed)
    pos = m.means[m.positive_component, 0]
    neg = m.means[1 - m.positive_component, 0]
    assert abs(pos - b.mean()) < 0.3 and abs(neg - a.mean()) < 0.3
    assert np.allclose(m.weights.sum(), 1.0) and np.all(m.weights > 0)
    assert np.all(gmm_decide(m, X) == (y == 1))


def test_gmm_symmetric_point():
    X = np.r_[np.full(10, -1.0), np.full(10, 1.0)][:, None] + np.tile([-0.1, 0.1], 10)[:, None]
    y = np.r_[np.zeros(10), np.ones(10)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = gmm_fit(X, y, seed=1)
    m.weights = np.array([0.5, 0.5])
    m.variances = np.array([[0.2], [0.2]])
    m.means = np.array([[-1.0], [1.0]])
    assert gmm_score(m, np.array([0.0])) == pytest.approx(0.5, abs=1e-15)


@given(st.integers(0, 2**31))
def test_gmm_posteriors_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (40, 3))
    X[20:] += 3
    y = np.r_[np.zeros(20), np.ones(20)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m = gmm_fit(X, y, seed=seed)
    P = gmm_posteriors(m, rng.normal(1.5, 3, (10, 3)))
    assert np.all(P[:, 0] + P[:, 1] == 1.0)
    assert np.all((P >= 0) & (P <= 1))
    assert np.all(m.variances >= 1e-6)


@given(st.integers(0, 2**31))
def test_em_monotone(seed):
    rng = np.random.default_rng(seed)
    X = np.r_[rng.normal(0, 1, (30, 2)), rng.normal(2, 0.5, (25, 2))]
    _, _, _, hist, _, _ = gmm_em(X, seed=seed, max_iter=200, tol=0.0)
    assert np.all(np.diff(hist) >= -1e-9)


def test_gmm_accepts_all_modes(rng):
    from cbrs_sense.spectrogram import feature_matrix

    X = rng.normal(-90, 3, (12, 134, 46))
    X[6:, :, 20:26] += 15
    y = np.r_[np.zeros(6), np.ones(6)]
    for mode in ("full", "timeagg", "center2"):
        F = feature_matrix(X, mode)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            g = gmm_fit(F, y, feature_mode=mode)
        s = svm_fit(F, y, feature_mode=mode)
        k = knn_fit(F, y, 2, feature_mode=mode)
        for model, score in ((g, gmm_score), (s, svm_score), (k, knn_score)):
            assert np.asarray(score(model, F)).shape == (12,)


def test_component_loglik_matches_direct():
    X = np.array([[0.5, -1.0]])
    w = np.array([0.3, 0.7])
    mu = np.array([[0.0, 0.0], [1.0, -1.0]])
    var = np.array([[1.0, 2.0], [0.5, 0.5]])
    L = _component_loglik(X, w, mu, var)
    for c in range(2):
        dens = np.prod(np.exp(-((X[0] - mu[c]) ** 2) / (2 * var[c])) / np.sqrt(2 * np.pi * var[c]))
        assert L[0, c] == pytest.approx(np.log(w[c] * dens))


def test_kernel_gamma_default():
    k = Kernel("rbf").resolved(4)
    assert k.gamma == 0.25
    with pytest.raises(InvalidConfig):
        Kernel("cubic")
