"""Energy detection (ED) and sweep-integrated energy detection (SI-ED).

Both operate on the center columns of a dBm channel slice and sum power in
linear milliwatts.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidConfig, InvalidSpec, UnitsNotCalibrated
from .spectrogram import CHANNEL_COLS, CHANNEL_ROWS, ChannelSlice
from .synth import round_half_up

SWEEP_PERIOD_S = 3.85
SWEEP_ON_S = 0.455
BIN_DURATION_S = 0.455


@dataclass(frozen=True)
class EdConfig:
    center_bins: int = 3
    use_dbm_normalization: bool = True

    def __post_init__(self) -> None:
        if self.center_bins % 2 != 1 or not 1 <= self.center_bins <= CHANNEL_COLS:
            raise InvalidConfig("center_bins must be odd and at most 46")


def center_columns(n_cols: int = CHANNEL_COLS, k: int = 3) -> slice:
    """``k`` columns about column n_cols//2; for 46 columns and k=3 that is 22..24."""
    mid = n_cols // 2
    return slice(mid - k // 2, mid + k // 2 + 1)


def _values(ch) -> np.ndarray:
    if isinstance(ch, ChannelSlice):
        return ch.values
    arr = np.asarray(ch)
    if arr.ndim != 2:
        raise InvalidConfig("expected a 2-D channel slice")
    return arr


def _center_mw(ch, cfg: EdConfig) -> np.ndarray:
    x = _values(ch)
    if not cfg.use_dbm_normalization:
        raise UnitsNotCalibrated("energy detectors need dBm-normalized input")
    return 10.0 ** (x[:, center_columns(x.shape[1], cfg.center_bins)] / 10.0)


def energy_detect_score(ch, cfg: EdConfig = EdConfig()) -> float:
    """Total center-column power in mW."""
    return float(_center_mw(ch, cfg).sum())


@dataclass(frozen=True)
class SweepTemplate:
    mask: np.ndarray
    period: float = SWEEP_PERIOD_S
    on_duration: float = SWEEP_ON_S
    phase_bins: int = 0
    bin_duration: float = BIN_DURATION_S

    @property
    def n_phases(self) -> int:
        return max(1, int(round_half_up(self.period / self.bin_duration)))

    def shifted(self, phase_bins: int) -> "SweepTemplate":
        return build_sweep_template(self.period, self.on_duration, self.bin_duration, self.mask.size, phase_bins)


def build_sweep_template(
    period: float = SWEEP_PERIOD_S,
    on_duration: float = SWEEP_ON_S,
    bin_duration: float = BIN_DURATION_S,
    n_time: int = CHANNEL_ROWS,
    phase_bins: int = 0,
) -> SweepTemplate:
    """Square-wave mask: ones at round(k*period/bin_duration) + phase_bins, k >= 0."""
    if not (period >= on_duration > 0) or not bin_duration > 0 or period < bin_duration:
        raise InvalidSpec("need period >= bin_duration and period >= on_duration > 0")
    return _template(float(period), float(on_duration), float(bin_duration), int(n_time), int(phase_bins))


@lru_cache(maxsize=256)
def _template(period, on_duration, bin_duration, n_time, phase_bins) -> SweepTemplate:
    width = max(1, int(round_half_up(on_duration / bin_duration)))
    n_k = int(np.ceil(n_time * bin_duration / period)) + 1
    starts = round_half_up(np.arange(n_k) * period / bin_duration) + phase_bins
    mask = np.zeros(n_time, dtype=np.int8)
    for s in starts:
        lo, hi = max(s, 0), min(s + width, n_time)
        if lo < hi:
            mask[lo:hi] = 1
    mask.flags.writeable = False
    return SweepTemplate(mask, period, on_duration, phase_bins, bin_duration)


@lru_cache(maxsize=64)
def _phase_bank(period, on_duration, bin_duration, n_time) -> np.ndarray:
    base = _template(period, on_duration, bin_duration, n_time, 0)
    return np.stack(
        [_template(period, on_duration, bin_duration, n_time, p).mask for p in range(base.n_phases)]
    ).astype(np.float64)


def align_template(tpl: SweepTemplate, time_profile) -> int:
    """Phase in [0, round(period/bin)) maximizing the masked profile sum; ties -> smallest."""
    profile = np.asarray(time_profile, dtype=np.float64)
    bank = _phase_bank(tpl.period, tpl.on_duration, tpl.bin_duration, tpl.mask.size)
    return int(np.argmax(bank @ profile))


def si_energy_detect_score(ch, cfg: EdConfig = EdConfig(), tpl: SweepTemplate | None = None) -> float:
    mw = _center_mw(ch, cfg)
    profile = mw.sum(axis=1)
    if tpl is None:
        tpl = build_sweep_template(n_time=profile.size)
    bank = _phase_bank(tpl.period, tpl.on_duration, tpl.bin_duration, profile.size)
    return float((bank @ profile).max())


def ed_scores(channels: np.ndarray, cfg: EdConfig = EdConfig()) -> np.ndarray:
    """Vectorized ED over a (n, 134, 46) stack."""
    x = np.asarray(channels, dtype=np.float64)
    return (10.0 ** (x[:, :, center_columns(x.shape[2], cfg.center_bins)] / 10.0)).sum(axis=(1, 2))


def si_ed_scores(channels: np.ndarray, cfg: EdConfig = EdConfig()) -> np.ndarray:
    x = np.asarray(channels, dtype=np.float64)
    profile = (10.0 ** (x[:, :, center_columns(x.shape[2], cfg.center_bins)] / 10.0)).sum(axis=2)
    bank = _phase_bank(SWEEP_PERIOD_S, SWEEP_ON_S, BIN_DURATION_S, x.shape[1])
    return (profile @ bank.T).max(axis=1)
