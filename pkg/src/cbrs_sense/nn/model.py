"""Forward passes, training loop and gradient checks for CNN-3 and the LSTM."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyTrainingSet, InvalidConfig, NonFiniteLoss, ShapeMismatch
from ..spectrogram import CHANNEL_COLS, CHANNEL_ROWS, ChannelSlice
from . import kernels as K
from .params import Params, init_params

log = logging.getLogger(__name__)

OPTIMIZERS = {"sgd": K.SGD, "adagrad": K.ADAGRAD, "adam": K.ADAM}


def _as_input(ch) -> np.ndarray:
    x = ch.values if isinstance(ch, ChannelSlice) else np.asarray(ch)
    if x.shape != (CHANNEL_ROWS, CHANNEL_COLS):
        raise ShapeMismatch(f"expected a {CHANNEL_ROWS}x{CHANNEL_COLS} channel, got {x.shape}")
    return np.ascontiguousarray(x, dtype=np.float64)


def _as_batch(X) -> np.ndarray:
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[1:] != (CHANNEL_ROWS, CHANNEL_COLS):
        raise ShapeMismatch(f"expected (n, {CHANNEL_ROWS}, {CHANNEL_COLS}), got {X.shape}")
    if X.dtype not in (np.float32, np.float64):
        X = X.astype(np.float64)
    return np.ascontiguousarray(X)


def dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability p, else 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def _keep(params: Params, train_mode: bool, dropout_seed, p: float, n_rows: int = CHANNEL_ROWS):
    shape = (K.N_FC1,) if params.kind == "cnn3" else (n_rows, params.hidden)
    if not train_mode:
        return np.ones(shape)
    return dropout_mask(np.random.default_rng(dropout_seed), shape, p)


def forward_logit(params: Params, ch, train_mode: bool = False, dropout_seed=None, dropout_p: float = 0.5) -> float:
    x = _as_input(ch)
    keep = _keep(params, train_mode, dropout_seed, dropout_p)
    if params.kind == "cnn3":
        conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b = K.cnn3_views(params.flat)
        return float(K.cnn3_forward(x, conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, keep, params.center_input)[0])
    views = K.lstm_views(params.flat, x.shape[1], params.hidden)
    return float(K.lstm_forward(x, *views, keep, params.residual, params.center_input)[0])


def cnn3_forward(params: Params, ch, train_mode: bool = False, dropout_seed=None, dropout_p: float = 0.5) -> float:
    """Probability that the channel holds the target emission."""
    if params.kind != "cnn3":
        raise InvalidConfig("cnn3_forward needs CNN-3 parameters")
    return float(K.clamped_prob(forward_logit(params, ch, train_mode, dropout_seed, dropout_p)))


def lstm_forward(params: Params, ch, train_mode: bool = False, dropout_seed=None, dropout_p: float = 0.5) -> float:
    if params.kind != "lstm":
        raise InvalidConfig("lstm_forward needs LSTM parameters")
    return float(K.clamped_prob(forward_logit(params, ch, train_mode, dropout_seed, dropout_p)))


def predict_logits(params: Params, X) -> np.ndarray:
    X = _as_batch(X)
    if params.kind == "cnn3":
        return K.cnn3_logits(params.flat, X, params.center_input)
    return K.lstm_logits(params.flat, X, params.hidden, params.residual, params.center_input)


def predict_proba(params: Params, X) -> np.ndarray:
    z = np.clip(predict_logits(params, X), -K.LOGIT_CLAMP, K.LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def loss_and_grad(params: Params, ch, label: float, keep=None) -> tuple[float, np.ndarray]:
    """Cross-entropy loss and its gradient with respect to ``params.flat``."""
    x = _as_input(ch)
    grad = np.zeros_like(params.flat)
    if keep is None:
        keep = _keep(params, False, None, 0.0)
    if params.kind == "cnn3":
        loss, _ = K.cnn3_loss_grad(params.flat, grad, x, float(label), keep, params.center_input)
    else:
        loss, _ = K.lstm_loss_grad(params.flat, grad, x, float(label), keep, params.hidden, params.residual,
                                   params.center_input)
    return float(loss), grad


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adagrad"
    learning_rate: float = 1e-4
    epochs: int = 1000
    dropout_p: float = 0.5
    seed: int = 0
    hidden: int = 64
    residual: bool = True
    center_input: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise InvalidConfig(f"optimizer must be one of {sorted(OPTIMIZERS)}")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidConfig("dropout_p must lie in [0, 1)")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be non-negative")


@dataclass
class TrainResult:
    params: Params
    loss_history: list[float] = field(default_factory=list)


_CHUNK = 512


def train(kind: str, X, y, cfg: TrainConfig = TrainConfig(), params: Params | None = None,
          on_epoch=None) -> TrainResult:
    """Per-example stochastic training on binary cross-entropy.

    Init, shuffling and dropout each draw from their own stream spawned from
    ``cfg.seed``, so a given (cfg, data) pair always yields the same history.
    """
    X = _as_batch(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training examples")
    if y.shape[0] != X.shape[0]:
        raise ShapeMismatch("labels and inputs differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidConfig("labels must be 0 or 1")
    s_init, s_shuffle, s_drop = np.random.SeedSequence(cfg.seed).spawn(3)
    if params is None:
        params = init_params(kind, int(s_init.generate_state(1)[0]), cfg.hidden, cfg.residual, cfg.center_input)
    else:
        params = params.copy()
    rng_shuffle = np.random.default_rng(s_shuffle)
    rng_drop = np.random.default_rng(s_drop)
    flat = params.flat
    grad = np.zeros_like(flat)
    s1 = np.zeros_like(flat)
    s2 = np.zeros_like(flat)
    opt = OPTIMIZERS[cfg.optimizer]
    t = 0
    n = X.shape[0]
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng_shuffle.permutation(n).astype(np.int64)
        total = 0.0
        for c0 in range(0, n, _CHUNK):
            part = order[c0:c0 + _CHUNK]
            if params.kind == "cnn3":
                keep = dropout_mask(rng_drop, (part.size, K.N_FC1), cfg.dropout_p)
                sub, t, ok = K.cnn3_train_epoch(X, y, part, keep, flat, grad, s1, s2, t, opt,
                                                cfg.learning_rate, cfg.eps, cfg.adam_beta1, cfg.adam_beta2,
                                                params.center_input)
            else:
                keep = dropout_mask(rng_drop, (part.size, X.shape[1], params.hidden), cfg.dropout_p)
                sub, t, ok = K.lstm_train_epoch(X, y, part, keep, flat, grad, s1, s2, t, opt,
                                                cfg.learning_rate, cfg.eps, cfg.adam_beta1, cfg.adam_beta2,
                                                params.hidden, params.residual, params.center_input)
            total += sub
            if not ok or not np.all(np.isfinite(flat)):
                raise NonFiniteLoss(f"non-finite loss or parameters in epoch {epoch} after {t} updates")
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1], params)
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.5f", epoch, history[-1])
    return TrainResult(params, history)


@dataclass
class GradCheckResult:
    max_rel_error: float
    n_params: int
    n_one_sided: int
    n_skipped: int
    rel_errors: np.ndarray

    def __float__(self) -> float:
        return self.max_rel_error


def relative_errors(ga: np.ndarray, gn: np.ndarray) -> np.ndarray:
    return np.abs(ga - gn) / np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1e-8)


def grad_check(params: Params, ch, label: float, epsilon: float = 1e-5, indices=None) -> GradCheckResult:
    """Analytic gradient against finite differences, dropout off.

    Central differences are used except where a ReLU switches state inside
    [theta - eps, theta + eps]; there the one-sided difference on the smooth
    side is taken. Parameters with a switch on both sides are skipped and
    counted.
    """
    x = _as_input(ch)
    _, ga = loss_and_grad(params, x, label)
    idx = np.arange(params.size, dtype=np.int64) if indices is None else np.asarray(indices, dtype=np.int64)
    gn = np.empty(idx.size)
    kinked = np.zeros(idx.size, dtype=np.int64)
    flat = params.flat.copy()
    if params.kind == "cnn3":
        K.cnn3_numeric_grad(flat, x, float(label), idx, epsilon, gn, kinked, params.center_input)
    else:
        K.lstm_numeric_grad(flat, x, float(label), params.hidden, params.residual, idx, epsilon, gn, kinked,
                            params.center_input)
    rel = relative_errors(ga[idx], gn)
    usable = kinked < 2
    return GradCheckResult(
        float(rel[usable].max()) if usable.any() else 0.0,
        int(idx.size),
        int((kinked == 1).sum()),
        int((kinked == 2).sum()),
        rel,
    )


def linear_grad_check(w: np.ndarray, b: float, x: np.ndarray, label: float, epsilon: float = 1e-5) -> float:
    """Same protocol on a single dense layer with a sigmoid cross-entropy head."""
    w = np.asarray(w, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    theta = np.concatenate([w, [float(b)]])

    def loss(th):
        return K.bce_with_logit(float(th[:-1] @ x + th[-1]), float(label))

    z = float(w @ x + b)
    d = K.sigmoid(z) - label
    ga = np.concatenate([d * x, [d]])
    gn = np.empty_like(theta)
    for k in range(theta.size):
        tp = theta.copy()
        tp[k] += epsilon
        tm = theta.copy()
        tm[k] -= epsilon
        gn[k] = (loss(tp) - loss(tm)) / (2 * epsilon)
    return float(relative_errors(ga, gn).max())


class NetDetector:
    """Callable single-channel scorer bound to fixed parameters."""

    def __init__(self, params: Params):
        self.params = params
        self._flat = np.ascontiguousarray(params.flat)
        self._center = params.center_input

    def __call__(self, x) -> float:
        x = x.values if isinstance(x, ChannelSlice) else x
        if self.params.kind == "cnn3":
            return K.cnn3_logit(self._flat, x, self._center)
        return K.lstm_logit(self._flat, x, self.params.hidden, self.params.residual, self._center)

    def scores(self, X) -> np.ndarray:
        return predict_logits(self.params, X)
