"""Train several initializations and keep the one with the largest FROC area."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfig
from ..eval import FrocCurve, ScoredSet, froc_auc_normalized, froc_curve
from .model import TrainConfig, predict_logits, train
from .params import Params


@dataclass
class InitSummary:
    seed: int
    froc_auc: float
    curve: FrocCurve
    final_loss: float


@dataclass
class SweepResult:
    inits: list[InitSummary]
    grid: np.ndarray
    curves: np.ndarray  # (n_inits, grid) detection fraction on the common grid
    lower: np.ndarray
    upper: np.ndarray
    best_index: int
    best_params: Params

    @property
    def best(self) -> InitSummary:
        return self.inits[self.best_index]


def curve_on_grid(curve: FrocCurve, grid: np.ndarray) -> np.ndarray:
    """Linear interpolation of the FROC polyline, as integrated by the trapezoid rule.

    Vertical segments (several points at one abscissa) take their top value.
    """
    x, y = curve.mean_fp, curve.fraction
    keep = np.r_[x[1:] != x[:-1], True]
    return np.interp(grid, x[keep], y[keep])


def envelope(curves: list[FrocCurve]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Common grid (union of abscissae), per-curve values, pointwise min and max."""
    grid = np.unique(np.concatenate([c.mean_fp for c in curves]))
    vals = np.stack([curve_on_grid(c, grid) for c in curves])
    return grid, vals, vals.min(axis=0), vals.max(axis=0)


def init_seeds(master_seed: int, n_inits: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n_inits)]


def multi_init_sweep(kind: str, X, y, test_X, test_scored: ScoredSet, cfg: TrainConfig = TrainConfig(),
                     n_inits: int = 10) -> SweepResult:
    """Train ``n_inits`` models whose seeds derive from ``cfg.seed`` and score each on a test set.

    ``test_scored`` supplies ids and labels aligned with ``test_X``; its scores
    are replaced by each model's logits. The argmax-FROC-AUC model is kept
    (first on ties).
    """
    if n_inits < 1:
        raise InvalidConfig("n_inits must be >= 1")
    if len(test_scored) != len(test_X):
        raise InvalidConfig("test scores and inputs differ in length")
    inits: list[InitSummary] = []
    best_params = None
    best = -1.0
    for seed in init_seeds(cfg.seed, n_inits):
        res = train(kind, X, y, TrainConfig(**{**cfg.__dict__, "seed": seed}))
        scored = ScoredSet(test_scored.ids, test_scored.channels, predict_logits(res.params, test_X),
                           test_scored.labels)
        curve = froc_curve(scored)
        auc = froc_auc_normalized(curve)
        inits.append(InitSummary(seed, auc, curve, res.loss_history[-1] if res.loss_history else float("nan")))
        if auc > best:
            best, best_params = auc, res.params
    grid, vals, lo, hi = envelope([i.curve for i in inits])
    best_index = int(np.argmax([i.froc_auc for i in inits]))
    return SweepResult(inits, grid, vals, lo, hi, best_index, best_params)
