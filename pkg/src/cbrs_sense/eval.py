"""ROC and FROC estimation, AUC intervals, threshold selection and timing."""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Hashable, Sequence
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import DegenerateLabels, InvalidConfig, NoSignals, Unachievable


@dataclass(frozen=True)
class ScoredChannel:
    spectrogram_id: str
    channel_mhz: int
    score: float
    label: bool

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise InvalidConfig(f"non-finite score for {self.spectrogram_id}/{self.channel_mhz}")


@dataclass
class ScoredSet:
    """Column view of a list of scored channels."""

    ids: np.ndarray  # str
    channels: np.ndarray  # int MHz
    scores: np.ndarray  # float64
    labels: np.ndarray  # bool

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=object)
        self.channels = np.asarray(self.channels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        n = self.scores.size
        if not (self.ids.size == self.channels.size == self.labels.size == n):
            raise InvalidConfig("scored columns differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidConfig("scores must be finite")

    def __len__(self) -> int:
        return self.scores.size

    @classmethod
    def from_records(cls, records: Sequence[ScoredChannel]) -> "ScoredSet":
        return cls(
            [r.spectrogram_id for r in records],
            [r.channel_mhz for r in records],
            [r.score for r in records],
            [r.label for r in records],
        )

    @classmethod
    def from_arrays(cls, scores, labels, ids=None, channels=None) -> "ScoredSet":
        scores = np.asarray(scores, dtype=np.float64).ravel()
        n = scores.size
        ids = np.array([f"s{i}" for i in range(n)], dtype=object) if ids is None else ids
        channels = np.zeros(n, dtype=np.int64) if channels is None else channels
        return cls(ids, channels, scores, labels)

    def records(self) -> list[ScoredChannel]:
        return [ScoredChannel(str(i), int(c), float(s), bool(y))
                for i, c, s, y in zip(self.ids, self.channels, self.scores, self.labels)]

    def spectrogram_index(self) -> tuple[np.ndarray, list[str]]:
        """Dense spectrogram index per row, numbered in order of first appearance."""
        seen: dict[str, int] = {}
        idx = np.array([seen.setdefault(str(i), len(seen)) for i in self.ids], dtype=np.int64)
        return idx, list(seen)

    def subset(self, mask) -> "ScoredSet":
        return ScoredSet(self.ids[mask], self.channels[mask], self.scores[mask], self.labels[mask])


def as_scored(scored) -> ScoredSet:
    if isinstance(scored, ScoredSet):
        return scored
    return ScoredSet.from_records(list(scored))


def _split(scored) -> tuple[np.ndarray, np.ndarray]:
    s = as_scored(scored)
    pos, neg = s.scores[s.labels], s.scores[~s.labels]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateLabels("need at least one present and one absent channel")
    return pos, neg


# --------------------------------------------------------------------------- ROC


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scored) -> RocCurve:
    """Operating points for decision ``score > threshold`` over every distinct score."""
    s = as_scored(scored)
    _split(s)
    thresholds, tp, fp = _group_counts(s.scores, s.labels.astype(float), (~s.labels).astype(float))
    return RocCurve(thresholds, fp / fp[-1], tp / tp[-1])


def _group_counts(scores: np.ndarray, wa: np.ndarray, wb: np.ndarray):
    """For thresholds [distinct scores descending..., -inf], cumulative weights strictly above."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    ca = np.r_[0.0, np.cumsum(wa[order])[ends]]
    cb = np.r_[0.0, np.cumsum(wb[order])[ends]]
    return np.r_[s[ends], -np.inf], ca, cb


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(x.size)
    bounds = np.r_[0, np.flatnonzero(np.diff(xs) != 0) + 1, x.size]
    for a, b in zip(bounds[:-1], bounds[1:]):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    return ranks


def roc_auc(scored) -> float:
    """Mann-Whitney estimate: share of (present, absent) pairs ranked correctly, ties counted half."""
    pos, neg = _split(scored)
    m, n = pos.size, neg.size
    r = midranks(np.r_[pos, neg])
    return float((r[:m].sum() - m * (m + 1) / 2.0) / (m * n))


def roc_auc_trapezoid(curve: RocCurve) -> float:
    return _trapz(curve.tpr, curve.fpr)


def _trapz(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) * 0.5))


def delong_components(pos: np.ndarray, neg: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """AUC and the placement values V10 (one per positive) and V01 (one per negative)."""
    m, n = pos.size, neg.size
    r_all = midranks(np.r_[pos, neg])
    r_pos = midranks(pos)
    r_neg = midranks(neg)
    v10 = (r_all[:m] - r_pos) / n
    v01 = 1.0 - (r_all[m:] - r_neg) / m
    return float(v10.mean()), v10, v01


def delong_ci(scored, alpha: float = 0.05) -> tuple[float, float, float]:
    """DeLong variance with a logit-scale interval.

    An AUC of exactly 0 or 1 is clamped to (eps, 1-eps), eps = 1/(2mn),
    before the transform; the returned bounds are widened to include the
    unclamped estimate.
    """
    pos, neg = _split(scored)
    m, n = pos.size, neg.size
    if m < 2 or n < 2:
        raise DegenerateLabels("DeLong interval needs at least two channels of each class")
    auc, v10, v01 = delong_components(pos, neg)
    var = v10.var(ddof=1) / m + v01.var(ddof=1) / n
    eps = 1.0 / (2.0 * m * n)
    a = min(max(auc, eps), 1.0 - eps)
    z = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    half = z * math.sqrt(max(var, 0.0)) / (a * (1.0 - a))
    lg = math.log(a / (1.0 - a))
    lo = 1.0 / (1.0 + math.exp(-(lg - half)))
    hi = 1.0 / (1.0 + math.exp(-(lg + half)))
    return auc, min(lo, auc), max(hi, auc)


# --------------------------------------------------------------------------- FROC


@dataclass(frozen=True)
class FrocCurve:
    thresholds: np.ndarray
    mean_fp: np.ndarray
    fraction: np.ndarray
    n_spectrograms: int
    n_present: int
    n_absent: int

    @property
    def normalization(self) -> float:
        return self.n_absent / self.n_spectrograms


def froc_curve(scored) -> FrocCurve:
    """Detection fraction against mean false positives per spectrogram.

    A true positive is a present-labeled channel scored above threshold, so
    localization is by channel identity.
    """
    s = as_scored(scored)
    if len(s) == 0:
        raise NoSignals("empty scored set")
    n_spec = len(set(s.ids.tolist()))
    n_present = int(s.labels.sum())
    if n_present == 0:
        raise NoSignals("no present channels; detection fraction undefined")
    thresholds, tp, fp = _group_counts(s.scores, s.labels.astype(float), (~s.labels).astype(float))
    return FrocCurve(thresholds, fp / n_spec, tp / n_present, n_spec, n_present, int((~s.labels).sum()))


def froc_point(scored, threshold: float) -> tuple[float, float]:
    """(mean FP per spectrogram, detection fraction) at one threshold."""
    s = as_scored(scored)
    n_present = int(s.labels.sum())
    if n_present == 0:
        raise NoSignals("no present channels")
    hit = s.scores > threshold
    return float((hit & ~s.labels).sum() / len(set(s.ids.tolist()))), float((hit & s.labels).sum() / n_present)


def froc_auc_normalized(curve: FrocCurve) -> float:
    """Trapezoidal area divided by absent channels per spectrogram (the widest possible abscissa)."""
    if curve.n_absent == 0:
        return float(curve.fraction.max())
    return min(1.0, max(0.0, _trapz(curve.fraction, curve.mean_fp) / curve.normalization))


def normalization_factor(n_absent: int, n_spectrograms: int) -> float:
    return n_absent / n_spectrograms


def _weighted_froc_auc(order, ends, labels_sorted, weights_sorted) -> float:
    tp = np.r_[0.0, np.cumsum(weights_sorted * labels_sorted)[ends]]
    fp = np.r_[0.0, np.cumsum(weights_sorted * (1.0 - labels_sorted))[ends]]
    if tp[-1] == 0:
        raise NoSignals("resample has no present channels")
    if fp[-1] == 0:
        return 1.0 if tp[-1] > 0 else 0.0
    return min(1.0, max(0.0, _trapz(tp / tp[-1], fp / fp[-1])))


def bootstrap_froc_ci(scored, strata: dict[str, Hashable] | Sequence[Hashable] | None = None, B: int = 2000,
                      alpha: float = 0.05, seed: int = 0) -> tuple[float, float, float]:
    """Percentile interval for normalized FROC-AUC, resampling whole spectrograms within strata.

    ``strata`` maps spectrogram id to its tag (or lists tags in first-appearance
    order of the ids); None treats the set as one stratum.
    """
    from .synth import stratified_bootstrap_indices

    if B < 100:
        raise InvalidConfig("B must be at least 100")
    s = as_scored(scored)
    point = froc_auc_normalized(froc_curve(s))
    spec_idx, spec_ids = s.spectrogram_index()
    if strata is None:
        tags = [0] * len(spec_ids)
    elif isinstance(strata, dict):
        tags = [strata[i] for i in spec_ids]
    else:
        tags = list(strata)
        if len(tags) != len(spec_ids):
            raise InvalidConfig("one stratum tag per spectrogram expected")
    order = np.argsort(-s.scores, kind="stable")
    ss = s.scores[order]
    ends = np.r_[np.flatnonzero(np.diff(ss) != 0), ss.size - 1]
    lab = s.labels[order].astype(np.float64)
    sidx = spec_idx[order]
    rng = np.random.default_rng(seed)
    vals = np.empty(B)
    for b in range(B):
        pick = stratified_bootstrap_indices(tags, rng)
        counts = np.bincount(pick, minlength=len(spec_ids)).astype(np.float64)
        vals[b] = _weighted_froc_auc(order, ends, lab, counts[sidx])
    lo, hi = np.quantile(vals, [alpha / 2.0, 1.0 - alpha / 2.0])
    return point, float(lo), float(hi)


# --------------------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    fpr: float
    tpr: float


def threshold_for_rate(scored, fpr: float | None = None, tpr: float | None = None) -> ThresholdChoice:
    """Smallest threshold with FPR <= q, or largest threshold with TPR >= q.

    Candidates are the distinct scores plus one value just below the minimum.
    """
    if (fpr is None) == (tpr is None):
        raise InvalidConfig("give exactly one of fpr or tpr")
    q = fpr if fpr is not None else tpr
    if not 0.0 <= q <= 1.0:
        raise Unachievable(f"rate {q} outside [0, 1]")
    s = as_scored(scored)
    _split(s)
    thresholds, tp, fp = _group_counts(s.scores, s.labels.astype(float), (~s.labels).astype(float))
    thresholds = thresholds.copy()
    thresholds[-1] = np.nextafter(s.scores.min(), -np.inf)
    tpr_v, fpr_v = tp / tp[-1], fp / fp[-1]
    if fpr is not None:
        ok = np.flatnonzero(fpr_v <= q)
        k = int(ok[-1])
    else:
        ok = np.flatnonzero(tpr_v >= q)
        if ok.size == 0:
            raise Unachievable(f"no threshold reaches TPR {q}")
        k = int(ok[0])
    return ThresholdChoice(float(thresholds[k]), float(fpr_v[k]), float(tpr_v[k]))


# --------------------------------------------------------------------------- timing


def time_detector(detector: Callable, sample, n_reps: int = 200_000, warmup: int = 100) -> float:
    """Mean wall-clock milliseconds per call on one preloaded sample."""
    for _ in range(warmup):
        detector(sample)
    t0 = time.perf_counter()
    for _ in range(n_reps):
        detector(sample)
    return (time.perf_counter() - t0) * 1e3 / n_reps
