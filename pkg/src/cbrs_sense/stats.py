"""Occupancy run-lengths and ratios, CCDF bands and kernel density for survey output."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import InvalidConfig
from .eval import ScoredSet, threshold_for_rate
from .spectrogram import CalibrationParams, ChannelSlice, to_dbm_per_mhz

OBS_MINUTES = 10
HIST_MAX_MINUTES = 120


@dataclass
class ChannelTimeline:
    occupied: np.ndarray
    indices: np.ndarray | None = None
    channel_mhz: int = 0

    def __post_init__(self) -> None:
        self.occupied = np.asarray(self.occupied, dtype=bool).ravel()
        if self.indices is None:
            self.indices = np.arange(self.occupied.size)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.shape != self.occupied.shape:
            raise InvalidConfig("one index per observation")
        if np.any(np.diff(self.indices) <= 0):
            raise InvalidConfig("observation indices must be strictly increasing")

    def __len__(self) -> int:
        return self.occupied.size


def run_lengths(states) -> tuple[np.ndarray, np.ndarray]:
    """Maximal runs of equal state: (state per run, length per run)."""
    s = np.asarray(states, dtype=bool).ravel()
    if s.size == 0:
        return np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64)
    starts = np.r_[0, np.flatnonzero(s[1:] != s[:-1]) + 1]
    lengths = np.diff(np.r_[starts, s.size])
    return s[starts], lengths


@dataclass(frozen=True)
class OccupancyHistogram:
    """Counts per 10-minute duration bin; ``bin_minutes[k]`` is the run duration counted in ``occupied[k]``."""

    bin_minutes: np.ndarray
    occupied: np.ndarray
    vacant: np.ndarray
    occupied_overflow: int
    vacant_overflow: int
    occupied_runs: np.ndarray = field(repr=False)
    vacant_runs: np.ndarray = field(repr=False)


def occupancy_intervals(tl: ChannelTimeline | Iterable[bool]) -> OccupancyHistogram:
    """Run durations in minutes, binned every 10 minutes up to 120, longer runs in overflow.

    Runs touching either end of the record count as complete runs.
    """
    states = tl.occupied if isinstance(tl, ChannelTimeline) else np.asarray(list(tl), dtype=bool)
    if states.size == 0:
        raise InvalidConfig("timeline is empty")
    kind, length = run_lengths(states)
    minutes = length * OBS_MINUTES
    bins = np.arange(OBS_MINUTES, HIST_MAX_MINUTES + 1, OBS_MINUTES)

    def tally(m):
        counts = np.array([(m == b).sum() for b in bins], dtype=np.int64)
        return counts, int((m > HIST_MAX_MINUTES).sum())

    occ, occ_over = tally(minutes[kind])
    vac, vac_over = tally(minutes[~kind])
    return OccupancyHistogram(bins, occ, vac, occ_over, vac_over, minutes[kind], minutes[~kind])


def occupancy_ratio(tl: ChannelTimeline | Iterable[bool], alpha: float = 0.05) -> tuple[float, float, float]:
    """Occupied share with a normal-approximation interval clipped to [0, 1]."""
    states = tl.occupied if isinstance(tl, ChannelTimeline) else np.asarray(list(tl), dtype=bool)
    n = states.size
    if n == 0:
        raise InvalidConfig("timeline is empty")
    p = float(states.mean())
    half = NormalDist().inv_cdf(1 - alpha / 2) * math.sqrt(p * (1 - p) / n)
    return p, max(0.0, p - half), min(1.0, p + half)


def dkw_epsilon(n: int, alpha: float = 0.05) -> float:
    return math.sqrt(math.log(2.0 / alpha) / (2.0 * n))


@dataclass(frozen=True)
class CcdfBand:
    x: np.ndarray
    ccdf: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n: int
    alpha: float

    def __call__(self, v) -> np.ndarray:
        """Step-function CCDF, P(X > v)."""
        v = np.asarray(v, dtype=np.float64)
        return 1.0 - np.searchsorted(self.x, v, side="right") / self.n


def empirical_ccdf_with_dkw(samples, alpha: float = 0.05) -> CcdfBand:
    """CCDF evaluated at each sorted sample (right-continuous), with the DKW band."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise InvalidConfig("no samples")
    ccdf = 1.0 - np.arange(1, n + 1) / n
    eps = dkw_epsilon(n, alpha)
    return CcdfBand(x, ccdf, np.clip(ccdf - eps, 0, 1), np.clip(ccdf + eps, 0, 1), n, alpha)


class GaussianKde:
    """f(x) = 1/(n h) * sum phi((x - x_i) / h)."""

    def __init__(self, samples, bandwidth: float = 1.0):
        self.samples = np.sort(np.asarray(samples, dtype=np.float64).ravel())
        if self.samples.size == 0:
            raise InvalidConfig("no samples")
        if not bandwidth > 0:
            raise InvalidConfig("bandwidth must be positive")
        self.bandwidth = float(bandwidth)

    def __call__(self, x, chunk: int = 4096) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        h = self.bandwidth
        out = np.empty(x.size)
        norm = 1.0 / (self.samples.size * h * math.sqrt(2 * math.pi))
        for c0 in range(0, x.size, chunk):
            u = (x[c0:c0 + chunk, None] - self.samples[None, :]) / h
            out[c0:c0 + chunk] = np.exp(-0.5 * u * u).sum(axis=1) * norm
        return out


def gaussian_kde(samples, bandwidth: float = 1.0) -> GaussianKde:
    return GaussianKde(samples, bandwidth)


# --------------------------------------------------------------------------- survey


@dataclass(frozen=True)
class ThresholdPolicy:
    """Either a fixed threshold or a rate target resolved on calibration scores."""

    kind: str = "fpr"  # fpr | tpr | fixed
    value: float = 0.01

    def resolve(self, calibration: ScoredSet | None = None) -> float:
        if self.kind == "fixed":
            return float(self.value)
        if calibration is None:
            raise InvalidConfig(f"{self.kind} policy needs calibration scores")
        if self.kind == "fpr":
            return threshold_for_rate(calibration, fpr=self.value).threshold
        if self.kind == "tpr":
            return threshold_for_rate(calibration, tpr=self.value).threshold
        raise InvalidConfig(f"unknown policy {self.kind!r}")


@dataclass
class SurveyResult:
    timelines: dict[int, ChannelTimeline]
    absent_power: dict[int, np.ndarray]
    threshold: float

    def pooled_absent_power(self) -> np.ndarray:
        parts = [v for _, v in sorted(self.absent_power.items()) if v.size]
        return np.concatenate(parts) if parts else np.zeros(0)


def center_bin_power(ch: ChannelSlice, cal: CalibrationParams = CalibrationParams()) -> np.ndarray:
    """Center-bin dBm/MHz over all time rows of a channel."""
    return np.asarray(to_dbm_per_mhz(ch.values[:, ch.center_col], cal))


def apply_classifier_survey(
    observations: Iterable[tuple[int, list[ChannelSlice]]],
    detector: Callable[[np.ndarray], np.ndarray],
    threshold: float,
    cal: CalibrationParams = CalibrationParams(),
) -> SurveyResult:
    """Run a detector over a sequence of observations.

    ``observations`` yields (time index, channel slices); ``detector`` maps an
    (n, 134, 46) stack to scores. A channel scored above ``threshold`` is
    occupied; every other channel contributes its center-bin power to the
    SPN-43-absent sample.
    """
    idx: dict[int, list[int]] = {}
    occ: dict[int, list[bool]] = {}
    power: dict[int, list[np.ndarray]] = {}
    for t, chans in observations:
        if not chans:
            continue
        scores = np.asarray(detector(np.stack([c.values for c in chans])), dtype=np.float64)
        for c, s in zip(chans, scores):
            mhz = c.center_mhz
            hit = bool(s > threshold)
            idx.setdefault(mhz, []).append(int(t))
            occ.setdefault(mhz, []).append(hit)
            power.setdefault(mhz, [])
            if not hit:
                power[mhz].append(center_bin_power(c, cal))
    timelines = {m: ChannelTimeline(occ[m], idx[m], m) for m in sorted(occ)}
    pw = {m: (np.concatenate(v) if v else np.zeros(0)) for m, v in sorted(power.items())}
    return SurveyResult(timelines, pw, float(threshold))
