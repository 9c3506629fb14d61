"""Spectrogram data model and the measurement chain.

Covers the max-hold STFT, conversion of max-hold amplitudes to dBm, extraction
of the 134x46 ten-megahertz channel slices, and the three feature layouts used
by the classical machine-learning detectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlreadyCalibrated,
    BandOutsideSpectrogram,
    InputTooShort,
    InvalidConfig,
    ShapeMismatch,
    TooFewTimeRows,
    UnitsNotCalibrated,
)

DBM_FLOOR = -300.0  # stand-in for log10(0)
CHANNEL_WIDTH_HZ = 10e6
CHANNEL_ROWS = 134
CHANNEL_COLS = 46
BAND_START_HZ = 3545e6
BAND_END_HZ = 3655e6


class Units(str, Enum):
    RAW = "raw_amplitude"
    DBM = "dbm"


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 1024
    flat_len: int = 800
    taper_len: int = 112
    hop: int = 912
    epoch_duration: float = 0.455
    sample_rate: float = 225e6

    def validate(self) -> None:
        if self.flat_len + 2 * self.taper_len != self.window_len:
            raise InvalidConfig("flat_len + 2*taper_len must equal window_len")
        if self.flat_len < 0 or self.taper_len < 0:
            raise InvalidConfig("window section lengths must be non-negative")
        if self.hop < 1:
            raise InvalidConfig("hop must be >= 1")
        if not self.epoch_duration > 0 or not self.sample_rate > 0:
            raise InvalidConfig("epoch_duration and sample_rate must be positive")
        if self.segments_per_epoch < 1:
            raise InvalidConfig("epoch shorter than one hop")

    @property
    def segments_per_epoch(self) -> int:
        # tolerance keeps e.g. 0.455 * 225e6 / 912 from flooring one short
        return int(math.floor(self.epoch_duration * self.sample_rate / self.hop + 1e-9))

    def n_segments(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return (n_samples - self.window_len) // self.hop + 1

    def n_epochs(self, n_samples: int) -> int:
        return self.n_segments(n_samples) // self.segments_per_epoch

    def n_epochs_for_duration(self, seconds: float) -> int:
        return self.n_epochs(int(round(seconds * self.sample_rate)))


def stft_window(cfg: StftConfig) -> np.ndarray:
    """Flat-top window of ones with cosine-squared tapers on both ends."""
    cfg.validate()
    n = np.arange(cfg.taper_len)
    rise = np.sin(0.5 * np.pi * (n + 0.5) / max(cfg.taper_len, 1)) ** 2
    return np.concatenate([rise, np.ones(cfg.flat_len), rise[::-1]])


@dataclass
class Spectrogram:
    """Time x frequency matrix; ``start_freq`` is the center of column 0."""

    values: np.ndarray
    time_bin_duration: float
    freq_bin_width: float
    start_freq: float
    units: Units = Units.DBM

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        self.units = Units(self.units)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ShapeMismatch(f"spectrogram must be a non-empty matrix, got {self.values.shape}")
        if not self.freq_bin_width > 0:
            raise InvalidConfig("freq_bin_width must be positive")
        if self.units is Units.DBM and not np.all(np.isfinite(self.values)):
            raise InvalidConfig("dBm spectrogram contains non-finite values")

    @property
    def n_time(self) -> int:
        return self.values.shape[0]

    @property
    def n_freq(self) -> int:
        return self.values.shape[1]

    def bin_centers(self) -> np.ndarray:
        return self.start_freq + self.freq_bin_width * np.arange(self.n_freq)


def compute_max_hold_spectrogram(
    iq: np.ndarray,
    cfg: StftConfig = StftConfig(),
    center_freq: float = 0.0,
    chunk: int = 2048,
) -> Spectrogram:
    """Windowed STFT magnitudes, max-held over each epoch.

    Frequency bins are fft-shifted so column 0 is the lowest frequency,
    ``center_freq - sample_rate/2``. Trailing partial epochs are dropped.
    """
    cfg.validate()
    iq = np.asarray(iq)
    if iq.ndim != 1:
        raise ShapeMismatch("iq must be one-dimensional")
    if iq.size < cfg.window_len:
        raise InputTooShort(f"need at least {cfg.window_len} samples, got {iq.size}")
    n_epochs = cfg.n_epochs(iq.size)
    if n_epochs < 1:
        raise InputTooShort("record shorter than one epoch")

    window = stft_window(cfg)
    per_epoch = cfg.segments_per_epoch
    frames = np.lib.stride_tricks.sliding_window_view(iq, cfg.window_len)[:: cfg.hop]
    out = np.empty((n_epochs, cfg.window_len))
    for e in range(n_epochs):
        best = np.zeros(cfg.window_len)
        for s in range(e * per_epoch, (e + 1) * per_epoch, chunk):
            stop = min(s + chunk, (e + 1) * per_epoch)
            mag = np.abs(np.fft.fft(frames[s:stop] * window, axis=1))
            np.maximum(best, mag.max(axis=0), out=best)
        out[e] = np.fft.fftshift(best)
    return Spectrogram(
        values=out,
        time_bin_duration=cfg.epoch_duration,
        freq_bin_width=cfg.sample_rate / cfg.window_len,
        start_freq=center_freq - cfg.sample_rate / 2,
        units=Units.RAW,
    )


@dataclass(frozen=True)
class CalibrationParams:
    front_end_gain: float = 1.0
    cal_factor: float = 1.0
    load_ohms: float = 50.0
    enbw_dbmhz: float = -6.2

    def __post_init__(self) -> None:
        if not (self.front_end_gain > 0 and self.cal_factor > 0 and self.load_ohms > 0):
            raise InvalidConfig("gain, calibration factor and load must be positive")


def amplitude_to_dbm(raw, cal: CalibrationParams = CalibrationParams(), window_len: int = 1024):
    """Elementwise dBm of max-hold amplitudes; exact zeros map to DBM_FLOOR."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise InvalidConfig("raw amplitudes must be finite and non-negative")
    out = np.full(raw.shape, DBM_FLOOR)
    pos = raw > 0
    # 20*log10 of the voltage instead of 10*log10(v**2) so tiny amplitudes cannot underflow
    volts = raw[pos] / window_len / cal.front_end_gain * cal.cal_factor
    out[pos] = 20.0 * np.log10(volts) - 10.0 * np.log10(2.0 * cal.load_ohms) + 30.0
    return out


def to_dbm(spec: Spectrogram, cal: CalibrationParams = CalibrationParams(), window_len: int = 1024) -> Spectrogram:
    if spec.units is Units.DBM:
        raise AlreadyCalibrated("spectrogram is already in dBm")
    return Spectrogram(
        values=amplitude_to_dbm(spec.values, cal, window_len),
        time_bin_duration=spec.time_bin_duration,
        freq_bin_width=spec.freq_bin_width,
        start_freq=spec.start_freq,
        units=Units.DBM,
    )


def to_dbm_per_mhz(value, cal: CalibrationParams = CalibrationParams()):
    out = np.asarray(value, dtype=np.float64) - cal.enbw_dbmhz
    return out if out.ndim else float(out)


def _is_channel_center(freq: float) -> bool:
    return abs(freq / CHANNEL_WIDTH_HZ - round(freq / CHANNEL_WIDTH_HZ)) < 1e-6


@dataclass
class ChannelSlice:
    values: np.ndarray
    center_freq: float
    parent_id: str = ""
    # column holding the bin nearest the channel center (22 or 23)
    center_col: int = CHANNEL_COLS // 2

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.shape != (CHANNEL_ROWS, CHANNEL_COLS):
            raise ShapeMismatch(f"channel slice must be {CHANNEL_ROWS}x{CHANNEL_COLS}, got {self.values.shape}")
        if not _is_channel_center(self.center_freq):
            raise InvalidConfig(f"channel center {self.center_freq} Hz is not a multiple of 10 MHz")

    @property
    def center_mhz(self) -> int:
        return int(round(self.center_freq / 1e6))


def channel_centers(band_start: float = BAND_START_HZ, band_end: float = BAND_END_HZ) -> list[float]:
    """10 MHz multiples inside the closed band."""
    lo = math.ceil(band_start / CHANNEL_WIDTH_HZ - 1e-9)
    hi = math.floor(band_end / CHANNEL_WIDTH_HZ + 1e-9)
    return [k * CHANNEL_WIDTH_HZ for k in range(lo, hi + 1)]


def channel_bins(spec: Spectrogram, center: float, n_bins: int = CHANNEL_COLS) -> np.ndarray:
    """Indices of the ``n_bins`` bins nearest ``center`` in ascending order.

    Distance ties go to the lower index, which makes the selection symmetric
    about the pair of bins straddling the center.
    """
    pos = (center - spec.start_freq) / spec.freq_bin_width
    lo = int(math.floor(pos)) - n_bins
    cand = np.arange(lo, lo + 2 * n_bins + 2)
    dist = np.abs(cand - pos)
    chosen = cand[np.argsort(dist, kind="stable")[:n_bins]]
    idx = np.sort(chosen)
    if idx[0] < 0 or idx[-1] >= spec.n_freq:
        raise BandOutsideSpectrogram(f"channel at {center / 1e6:.1f} MHz extends past the spectrogram")
    return idx


def extract_channels(
    spec: Spectrogram,
    band_start: float = BAND_START_HZ,
    band_end: float = BAND_END_HZ,
    parent_id: str = "",
    n_time: int = CHANNEL_ROWS,
) -> list[ChannelSlice]:
    if spec.units is not Units.DBM:
        raise UnitsNotCalibrated("channel slices are defined on dBm spectrograms")
    if band_end < band_start:
        raise BandOutsideSpectrogram("band_end precedes band_start")
    half = spec.freq_bin_width / 2
    f0, f1 = spec.start_freq - half, spec.bin_centers()[-1] + half
    if band_start < f0 - 1e-6 or band_end > f1 + 1e-6:
        raise BandOutsideSpectrogram(
            f"band {band_start / 1e6:.1f}-{band_end / 1e6:.1f} MHz outside {f0 / 1e6:.1f}-{f1 / 1e6:.1f} MHz"
        )
    if spec.n_time < n_time:
        raise TooFewTimeRows(f"need {n_time} time rows, spectrogram has {spec.n_time}")
    out = []
    for fc in channel_centers(band_start, band_end):
        idx = channel_bins(spec, fc)
        pos = (fc - spec.start_freq) / spec.freq_bin_width
        nearest = int(np.argmin(np.abs(idx - pos)))
        out.append(
            ChannelSlice(
                values=spec.values[:n_time, idx[0] : idx[-1] + 1],
                center_freq=fc,
                parent_id=parent_id,
                center_col=nearest,
            )
        )
    return out


class FeatureMode(str, Enum):
    FULL = "full"
    TIME_AGG = "timeagg"
    CENTER2 = "center2"

    @property
    def length(self) -> int:
        return {"full": 6164, "timeagg": 134, "center2": 268}[self.value]

    @property
    def subscript(self) -> str:
        return str(self.length)


CENTER_PAIR = (CHANNEL_COLS // 2 - 1, CHANNEL_COLS // 2)  # (22, 23)


def _as_stack(channels) -> np.ndarray:
    if isinstance(channels, ChannelSlice):
        return channels.values[None].astype(np.float64)
    if isinstance(channels, np.ndarray):
        arr = channels.astype(np.float64, copy=False)
        return arr[None] if arr.ndim == 2 else arr
    return np.stack([c.values if isinstance(c, ChannelSlice) else c for c in channels]).astype(np.float64)


def feature_matrix(channels, mode: FeatureMode | str) -> np.ndarray:
    """Features for a stack of channels, one row per channel."""
    mode = FeatureMode(mode)
    x = _as_stack(channels)
    if x.shape[1:] != (CHANNEL_ROWS, CHANNEL_COLS):
        raise ShapeMismatch(f"expected (..., {CHANNEL_ROWS}, {CHANNEL_COLS}), got {x.shape}")
    if mode is FeatureMode.FULL:
        return x.reshape(len(x), -1)
    if mode is FeatureMode.TIME_AGG:
        return (10.0 ** (x / 10.0)).sum(axis=2)
    return x[:, :, list(CENTER_PAIR)].reshape(len(x), -1)


def preprocess_channel(ch: ChannelSlice | np.ndarray, mode: FeatureMode | str) -> np.ndarray:
    return feature_matrix(ch, mode)[0]


def stack_channels(channels: Sequence[ChannelSlice] | Iterable[ChannelSlice], dtype=np.float64) -> np.ndarray:
    return np.stack([c.values for c in channels]).astype(dtype)
