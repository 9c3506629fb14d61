"""KNN, SVM and two-component GMM detectors over flat feature vectors."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import (
    DegenerateComponentWarning,
    DegenerateLabels,
    DimensionMismatch,
    EmptyTrainingSet,
    InvalidConfig,
    NoConvergenceWarning,
)
from .spectrogram import FeatureMode

KNN_K_VALUES = (2, 5, 9, 12)


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).ravel()
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training samples")
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} samples but {y.shape[0]} labels")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidConfig("labels must be 0 or 1")
    return np.ascontiguousarray(X), y.astype(np.int8)


def _check_query(X, d: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != d:
        raise DimensionMismatch(f"model expects {d} features, got {X.shape[1]}")
    return X, single


def _mode_suffix(mode) -> str:
    return "" if mode is None else FeatureMode(mode).subscript


# --------------------------------------------------------------------------- KNN


@dataclass
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int
    feature_mode: str | None = None

    @property
    def name(self) -> str:
        return "KNN" + _mode_suffix(self.feature_mode)


def knn_fit(X, y, k: int = 9, feature_mode=None) -> KnnModel:
    X, y = _check_xy(X, y)
    if not 1 <= k <= X.shape[0]:
        raise InvalidConfig(f"k={k} must lie in [1, {X.shape[0]}]")
    return KnnModel(X, y, int(k), None if feature_mode is None else FeatureMode(feature_mode).value)


def knn_neighbors(model: KnnModel, X, chunk: int = 256) -> np.ndarray:
    """Indices of the k nearest training points per query, ties to the lower index.

    Distances are screened with the dot-product expansion and the few
    candidates near the k-th distance are re-measured exactly before ranking.
    """
    Q, _ = _check_query(X, model.X.shape[1])
    T = model.X
    tn = np.einsum("ij,ij->i", T, T)
    k = model.k
    out = np.empty((Q.shape[0], k), dtype=np.int64)
    for c0 in range(0, Q.shape[0], chunk):
        q = Q[c0:c0 + chunk]
        d2 = tn[None, :] - 2.0 * (q @ T.T) + np.einsum("ij,ij->i", q, q)[:, None]
        for r in range(q.shape[0]):
            row = d2[r]
            kth = np.partition(row, k - 1)[k - 1]
            slack = 1e-9 * max(abs(kth), tn.max(), 1.0)
            cand = np.flatnonzero(row <= kth + slack)
            exact = ((T[cand] - q[r]) ** 2).sum(axis=1)
            order = np.lexsort((cand, exact))
            out[c0 + r] = cand[order[:k]]
    return out


def knn_score(model: KnnModel, X) -> np.ndarray | float:
    """Fraction of the k nearest neighbors labeled positive."""
    Q, single = _check_query(X, model.X.shape[1])
    s = model.y[knn_neighbors(model, Q)].sum(axis=1) / model.k
    return float(s[0]) if single else s


def knn_decide(model: KnnModel, X):
    return np.asarray(knn_score(model, X)) > 0.5


# --------------------------------------------------------------------------- SVM


@dataclass(frozen=True)
class Kernel:
    """``kind`` is linear, rbf, poly or sigmoid. ``gamma=None`` means 1/n_features."""

    kind: str = "linear"
    gamma: float | None = None
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "rbf", "poly", "sigmoid"):
            raise InvalidConfig(f"unknown kernel {self.kind!r}")

    def resolved(self, n_features: int) -> "Kernel":
        return Kernel(self.kind, 1.0 / n_features if self.gamma is None else self.gamma, self.degree, self.coef0)

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        g = self.gamma if self.gamma is not None else 1.0 / A.shape[1]
        dots = A @ B.T
        if self.kind == "linear":
            return dots
        if self.kind == "poly":
            return (g * dots + self.coef0) ** self.degree
        if self.kind == "sigmoid":
            return np.tanh(g * dots + self.coef0)
        an = np.einsum("ij,ij->i", A, A)
        bn = np.einsum("ij,ij->i", B, B)
        return np.exp(-g * np.maximum(an[:, None] + bn[None, :] - 2.0 * dots, 0.0))


@dataclass
class SvmModel:
    """Either a weight vector (primal linear fit) or a support-vector expansion.

    Inputs are shifted by ``center`` (the training mean) before the decision
    function is applied; with an unregularized bias this does not change the
    optimum, it only keeps the optimization well scaled for raw dBm features.
    """

    kernel: Kernel
    C: float
    center: np.ndarray
    bias: float
    w: np.ndarray | None = None
    support_vectors: np.ndarray | None = None
    dual_coef: np.ndarray | None = None  # alpha_i * y_i
    converged: bool = True
    n_iter: int = 0
    feature_mode: str | None = None
    objective_history: list = field(default_factory=list)

    @property
    def name(self) -> str:
        return "SVM" + _mode_suffix(self.feature_mode)

    @property
    def n_features(self) -> int:
        return self.center.size

    def weight_vector(self) -> np.ndarray:
        """Primal weights; for a linear kernel expansion these are sum(alpha*y*sv)."""
        if self.w is not None:
            return self.w
        if self.kernel.kind != "linear":
            raise InvalidConfig("weight vector only exists for the linear kernel")
        return self.dual_coef @ self.support_vectors


def _svm_targets(y: np.ndarray) -> np.ndarray:
    if y.min() == y.max():
        raise DegenerateLabels("SVM needs both classes")
    return np.where(y == 1, 1.0, -1.0)


def svm_fit(X, y, kernel: Kernel | str = "linear", C: float = 1.0, solver: str | None = None,
            max_epochs: int = 200, tol: float = 1e-3, seed: int = 0, feature_mode=None) -> SvmModel:
    """Fit a soft-margin SVM on 0/1 labels.

    The linear kernel defaults to stochastic primal subgradient descent;
    ``solver="smo"`` (the only choice for other kernels) solves the dual.
    """
    X, y = _check_xy(X, y)
    t = _svm_targets(y)
    if not C > 0:
        raise InvalidConfig("C must be positive")
    kernel = Kernel(kernel) if isinstance(kernel, str) else kernel
    kernel = kernel.resolved(X.shape[1])
    solver = solver or ("primal" if kernel.kind == "linear" else "smo")
    if solver == "primal" and kernel.kind != "linear":
        raise InvalidConfig("primal solver is linear only")
    if solver not in ("primal", "smo"):
        raise InvalidConfig(f"unknown solver {solver!r}")
    center = X.mean(axis=0)
    Xc = X - center
    mode = None if feature_mode is None else FeatureMode(feature_mode).value
    if solver == "primal":
        w, b, ok, it, hist = _pegasos(Xc, t, C, max_epochs, tol, seed)
        model = SvmModel(kernel, C, center, b, w=w, converged=ok, n_iter=it, feature_mode=mode,
                         objective_history=hist)
    else:
        K = kernel(Xc, Xc)
        max_iter = max(10_000_000, 100 * X.shape[0])
        alpha, rho, it, ok = _smo(K, t, float(C), tol, max_iter)
        sv = alpha > 0
        if not sv.any():
            raise DegenerateLabels("SMO produced no support vectors")
        model = SvmModel(kernel, C, center, -rho, support_vectors=Xc[sv].copy(),
                         dual_coef=(alpha * t)[sv], converged=ok, n_iter=it, feature_mode=mode)
    if not model.converged:
        warnings.warn(f"SVM hit its iteration cap ({model.n_iter})", NoConvergenceWarning, stacklevel=2)
    return model


def svm_score(model: SvmModel, X) -> np.ndarray | float:
    """Signed decision value; positive means SPN-43 present."""
    Q, single = _check_query(X, model.n_features)
    Qc = Q - model.center
    if model.w is not None:
        s = Qc @ model.w + model.bias
    else:
        s = model.kernel(Qc, model.support_vectors) @ model.dual_coef + model.bias
    return float(s[0]) if single else s


def svm_decide(model: SvmModel, X):
    return np.asarray(svm_score(model, X)) > 0


def svm_objective(Xc: np.ndarray, t: np.ndarray, w: np.ndarray, b: float, C: float) -> float:
    hinge = np.maximum(0.0, 1.0 - t * (Xc @ w + b))
    return 0.5 * float(w @ w) + C * float(hinge.sum())


def _pegasos(Xc, t, C, max_epochs, tol, seed):
    """Stochastic subgradient on lam/2|w|^2 + mean hinge with lam = 1/(C n).

    That objective is the usual C-SVM objective divided by C*n. The bias is
    unregularized; the returned weights are the average over the last epoch.
    """
    n, d = Xc.shape
    lam = 1.0 / (C * n)
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    b = 0.0
    step = 0
    hist = []
    prev = math.inf
    calm = 0
    for epoch in range(max_epochs):
        order = rng.permutation(n)
        w_avg, b_avg, step = _pegasos_epoch(Xc, t, order, w, b, lam, step)
        b = b_avg
        w[:] = w_avg
        obj = svm_objective(Xc, t, w, b, C)
        hist.append(obj)
        calm = calm + 1 if abs(prev - obj) <= tol * max(abs(obj), 1.0) else 0
        prev = obj
        if calm >= 3:
            return w, b, True, epoch + 1, hist
    return w, b, False, max_epochs, hist


@njit(cache=True)
def _pegasos_epoch(Xc, t, order, w, b, lam, step):
    n, d = Xc.shape
    w_sum = np.zeros(d)
    b_sum = 0.0
    radius = 1.0 / math.sqrt(lam)
    for j in range(order.size):
        i = order[j]
        step += 1
        eta = 1.0 / (lam * (step + 1))
        margin = t[i] * (np.dot(Xc[i], w) + b)
        w *= 1.0 - eta * lam
        if margin < 1.0:
            g = eta * t[i]
            for q in range(d):
                w[q] += g * Xc[i, q]
            b += g
        nrm = math.sqrt(np.dot(w, w))
        if nrm > radius:
            w *= radius / nrm
        w_sum += w
        b_sum += b
    return w_sum / order.size, b_sum / order.size, step


@njit(cache=True)
def _smo(K, t, C, eps, max_iter):
    """Dual C-SVM with second-order working set selection. Returns (alpha, rho, iters, converged)."""
    n = t.size
    tau = 1e-12
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.empty(n)
    for k in range(n):
        QD[k] = K[k, k]
    it = 0
    converged = False
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for s in range(n):
            if t[s] > 0:
                if alpha[s] < C and -G[s] > gmax:
                    gmax = -G[s]
                    i = s
            else:
                if alpha[s] > 0 and G[s] > gmax:
                    gmax = G[s]
                    i = s
        if i < 0:
            converged = True
            break
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for s in range(n):
            qis = t[i] * t[s] * K[i, s]
            if t[s] > 0:
                if alpha[s] > 0:
                    diff = gmax + G[s]
                    if G[s] > gmax2:
                        gmax2 = G[s]
                    if diff > 0:
                        quad = QD[i] + QD[s] - 2.0 * t[i] * t[s] * qis
                        obj = -(diff * diff) / (quad if quad > 0 else tau)
                        if obj < best:
                            best = obj
                            j = s
            else:
                if alpha[s] < C:
                    diff = gmax - G[s]
                    if -G[s] > gmax2:
                        gmax2 = -G[s]
                    if diff > 0:
                        quad = QD[i] + QD[s] + 2.0 * t[i] * t[s] * qis
                        obj = -(diff * diff) / (quad if quad > 0 else tau)
                        if obj < best:
                            best = obj
                            j = s
        if gmax + gmax2 < eps or j < 0:
            converged = True
            break
        it += 1
        qij = t[i] * t[j] * K[i, j]
        ai, aj = alpha[i], alpha[j]
        if t[i] != t[j]:
            quad = QD[i] + QD[j] + 2.0 * qij
            if quad <= 0:
                quad = tau
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * qij
            if quad <= 0:
                quad = tau
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - ai
        daj = alpha[j] - aj
        for s in range(n):
            G[s] += t[s] * (t[i] * K[i, s] * dai + t[j] * K[j, s] * daj)

    ub = np.inf
    lb = -np.inf
    n_free = 0
    s_free = 0.0
    for s in range(n):
        yg = t[s] * G[s]
        if alpha[s] >= C:
            if t[s] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[s] <= 0:
            if t[s] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            s_free += yg
    rho = s_free / n_free if n_free > 0 else (ub + lb) / 2.0
    return alpha, rho, it, converged


# --------------------------------------------------------------------------- GMM


@dataclass
class GmmModel:
    weights: np.ndarray  # (2,)
    means: np.ndarray  # (2, d)
    variances: np.ndarray  # (2, d)
    positive_component: int
    log_likelihood: list = field(default_factory=list)
    converged: bool = True
    floored: bool = False
    feature_mode: str | None = None

    @property
    def name(self) -> str:
        return "GMM" + _mode_suffix(self.feature_mode)


VARIANCE_FLOOR = 1e-6


def _component_loglik(X, weights, means, variances) -> np.ndarray:
    """log(w_c) + log N(x | mu_c, diag(var_c)) for each row and component."""
    out = np.empty((X.shape[0], weights.size))
    for c in range(weights.size):
        v = variances[c]
        const = math.log(weights[c]) - 0.5 * (X.shape[1] * math.log(2 * math.pi) + np.log(v).sum())
        out[:, c] = const - 0.5 * (((X - means[c]) ** 2) / v).sum(axis=1)
    return out


def _logsumexp_rows(L: np.ndarray) -> np.ndarray:
    m = L.max(axis=1)
    return m + np.log(np.exp(L - m[:, None]).sum(axis=1))


def gmm_em(X, seed: int = 0, max_iter: int = 500, tol: float = 1e-6, n_components: int = 2):
    """Unsupervised diagonal EM. Returns (weights, means, variances, total loglik history, converged, floored).

    Stops when the total log-likelihood gains less than ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < n_components:
        raise EmptyTrainingSet(f"need at least {n_components} samples")
    rng = np.random.default_rng(seed)
    uniq = np.unique(X, axis=0)
    if uniq.shape[0] < n_components:
        raise DegenerateLabels("need distinct points to seed the components")
    # first mean uniform, later ones drawn with probability proportional to the
    # squared distance from the nearest chosen mean
    pick = [int(rng.integers(uniq.shape[0]))]
    for _ in range(1, n_components):
        d2 = np.min([((uniq - uniq[p]) ** 2).sum(axis=1) for p in pick], axis=0)
        pick.append(int(rng.choice(uniq.shape[0], p=d2 / d2.sum())))
    means = uniq[np.sort(pick)].copy()
    gvar = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(gvar, (n_components, 1))
    weights = np.full(n_components, 1.0 / n_components)
    hist: list[float] = []
    floored = False
    converged = False
    for _ in range(max_iter):
        L = _component_loglik(X, weights, means, variances)
        lse = _logsumexp_rows(L)
        ll = float(lse.sum())
        if hist and ll - hist[-1] < tol:
            hist.append(ll)
            converged = True
            break
        hist.append(ll)
        R = np.exp(L - lse[:, None])
        nk = R.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        weights = nk / n
        means = (R.T @ X) / nk[:, None]
        var = (R.T @ (X * X)) / nk[:, None] - means ** 2
        if (var < VARIANCE_FLOOR).any():
            floored = True
        variances = np.maximum(var, VARIANCE_FLOOR)
        weights = np.maximum(weights, 1e-300)
        weights /= weights.sum()
    else:
        L = _component_loglik(X, weights, means, variances)
        hist.append(float(_logsumexp_rows(L).sum()))
    return weights, means, variances, hist, converged, floored


def gmm_fit(X, y, seed: int = 0, max_iter: int = 500, tol: float = 1e-6, feature_mode=None,
            n_init: int = 1) -> GmmModel:
    """Two-component EM; each component takes the majority label of the points it claims.

    With ``n_init`` > 1, EM restarts from seeds spawned off ``seed`` and the
    run with the highest final log-likelihood is kept.

    When both components claim the same majority label, the one whose claimed
    points have the larger positive fraction is taken as the positive component.
    """
    X, y = _check_xy(X, y)
    if n_init < 1:
        raise InvalidConfig("n_init must be >= 1")
    best = None
    for ss in np.random.SeedSequence(seed).spawn(n_init):
        run = gmm_em(X, int(ss.generate_state(1)[0]), max_iter, tol)
        if best is None or run[3][-1] > best[3][-1]:
            best = run
    weights, means, variances, hist, converged, floored = best
    claim = _component_loglik(X, weights, means, variances).argmax(axis=1)
    frac = np.array([y[claim == c].mean() if (claim == c).any() else -1.0 for c in range(2)])
    pos = int(np.argmax(frac)) if frac[0] != frac[1] else 0
    if floored:
        warnings.warn("GMM variance hit the floor", DegenerateComponentWarning, stacklevel=2)
    if not converged:
        warnings.warn(f"EM stopped at the {max_iter}-iteration cap", NoConvergenceWarning, stacklevel=2)
    mode = None if feature_mode is None else FeatureMode(feature_mode).value
    return GmmModel(weights, means, variances, pos, hist, converged, floored, mode)


def gmm_posteriors(model: GmmModel, X) -> np.ndarray:
    """(n, 2) posteriors ordered [positive, negative]; rows sum to exactly 1."""
    Q, _ = _check_query(X, model.means.shape[1])
    L = _component_loglik(Q, model.weights, model.means, model.variances)
    p, q = model.positive_component, 1 - model.positive_component
    pos = 1.0 / (1.0 + np.exp(np.clip(L[:, q] - L[:, p], -700, 700)))
    return np.column_stack([pos, 1.0 - pos])


def gmm_score(model: GmmModel, X) -> np.ndarray | float:
    Q, single = _check_query(X, model.means.shape[1])
    s = gmm_posteriors(model, Q)[:, 0]
    return float(s[0]) if single else s


def gmm_decide(model: GmmModel, X):
    return np.asarray(gmm_score(model, X)) > 0.5
