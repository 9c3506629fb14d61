"""Parameter containers and initializers for the two networks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, InvalidConfig
from . import kernels as K

N_IN = 46
N_MAP = 11 * 21


def cnn3_layout() -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("conv_w", (K.KSIZE, K.KSIZE, K.N_FILTERS)),
        ("conv_b", (K.N_FILTERS,)),
        ("fc1_w", (N_MAP, K.N_FC1)),
        ("fc1_b", (K.N_FC1,)),
        ("fc2_w", (K.N_FC1,)),
        ("fc2_b", (1,)),
    ]


def lstm_layout(hidden: int, n_in: int = N_IN) -> list[tuple[str, tuple[int, ...]]]:
    return [
        ("lstm_wx", (n_in, 4 * hidden)),
        ("lstm_wh", (hidden, 4 * hidden)),
        ("lstm_b", (4 * hidden,)),
        ("fc1_w", (hidden, K.N_LSTM_FC1)),
        ("fc1_b", (K.N_LSTM_FC1,)),
        ("fc2_w", (K.N_LSTM_FC1,)),
        ("fc2_b", (1,)),
    ]


@dataclass
class Params:
    """Named views over one contiguous float64 buffer.

    ``kind`` is "cnn3" or "lstm"; ``hidden`` and ``residual`` only matter for
    the LSTM. ``center_input`` turns on the median-referenced input scaling
    applied by both graphs ahead of their first weighted layer.
    """

    kind: str
    flat: np.ndarray
    hidden: int = 64
    residual: bool = True
    center_input: bool = True
    _layout: list = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("cnn3", "lstm"):
            raise InvalidConfig(f"unknown network kind {self.kind!r}")
        if self.kind == "lstm" and self.hidden < 1:
            raise InvalidConfig("hidden width must be positive")
        self._layout = cnn3_layout() if self.kind == "cnn3" else lstm_layout(self.hidden)
        n = sum(int(np.prod(s)) for _, s in self._layout)
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (n,):
            raise DimensionMismatch(f"{self.kind} expects {n} parameters, got {self.flat.shape}")

    @classmethod
    def zeros(cls, kind: str, hidden: int = 64, residual: bool = True, center_input: bool = True) -> "Params":
        layout = cnn3_layout() if kind == "cnn3" else lstm_layout(hidden)
        return cls(kind, np.zeros(sum(int(np.prod(s)) for _, s in layout)), hidden, residual, center_input)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self._layout]

    @property
    def size(self) -> int:
        return self.flat.size

    def slices(self) -> dict[str, slice]:
        out, o = {}, 0
        for name, shape in self._layout:
            n = int(np.prod(shape))
            out[name] = slice(o, o + n)
            o += n
        return out

    def __getitem__(self, name: str) -> np.ndarray:
        shape = dict(self._layout)[name]
        return self.flat[self.slices()[name]].reshape(shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {n: self[n] for n in self.names}

    def copy(self) -> "Params":
        return Params(self.kind, self.flat.copy(), self.hidden, self.residual, self.center_input)

    def meta(self) -> dict:
        return {"kind": self.kind, "hidden": self.hidden, "residual": self.residual,
                "center_input": self.center_input}

    @classmethod
    def from_tensors(cls, meta: dict, tensors: dict[str, np.ndarray]) -> "Params":
        p = cls.zeros(meta["kind"], int(meta.get("hidden", 64)), bool(meta.get("residual", True)),
                      bool(meta.get("center_input", True)))
        for name, shape in p._layout:
            t = np.asarray(tensors[name], dtype=np.float64)
            if t.shape != shape:
                raise DimensionMismatch(f"{name}: expected {shape}, got {t.shape}")
            p.flat[p.slices()[name]] = t.ravel()
        return p


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def truncated_normal(rng: np.random.Generator, shape, bound: float = 2.0) -> np.ndarray:
    """Standard normal with draws outside +-bound redrawn."""
    out = rng.standard_normal(size=shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(kind: str, seed: int, hidden: int = 64, residual: bool = True,
                center_input: bool = True) -> Params:
    """Xavier-uniform conv/gate weights, truncated N(0,1) dense weights, zero biases."""
    rng = np.random.default_rng(seed)
    p = Params.zeros(kind, hidden, residual, center_input)
    if kind == "cnn3":
        k, f = K.KSIZE, K.N_FILTERS
        p["conv_w"][...] = xavier_uniform(rng, (k, k, f), k * k, k * k * f)
    else:
        # each gate is its own (n_in + H) -> H map
        wx, wh = p["lstm_wx"], p["lstm_wh"]
        for g in range(4):
            cols = slice(g * hidden, (g + 1) * hidden)
            w = xavier_uniform(rng, (N_IN + hidden, hidden), N_IN + hidden, hidden)
            wx[:, cols] = w[:N_IN]
            wh[:, cols] = w[N_IN:]
    p["fc1_w"][...] = truncated_normal(rng, p["fc1_w"].shape)
    p["fc2_w"][...] = truncated_normal(rng, p["fc2_w"].shape)
    return p
