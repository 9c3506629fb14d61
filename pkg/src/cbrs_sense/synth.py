"""Synthetic labeled 3.5 GHz spectrogram scenes and stratified sampling.

Scenes are rendered directly in calibrated dBm: a Gaussian-in-dB noise floor,
SPN-43 sweeps (one time row per antenna rotation, narrowband about a 10 MHz
multiple), full-band Radar-3 OOBE streaks, and a faint LO-leakage column.
Emissions add to the noise in linear power, so raising an emitter's level
never lowers any cell.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Hashable, Iterator, Sequence

import numpy as np

from .errors import InsufficientStratum, InvalidSpec, IoFailure
from .spectrogram import (
    BAND_END_HZ,
    BAND_START_HZ,
    CHANNEL_WIDTH_HZ,
    Spectrogram,
    Units,
    channel_centers,
    extract_channels,
)

FORMAT_VERSION = 1
SITES = ("VB", "SD")
ANTENNAS = ("Omni", "CBS")
FULL_START_HZ = 3465e6
FULL_BIN_HZ = 225e6 / 1024


class Emission(str, Enum):
    SPN43 = "SPN43"
    OOBE = "R3-OOBE"
    BOTH = "Both"
    NEITHER = "Neither"

    @property
    def has_spn43(self) -> bool:
        return self in (Emission.SPN43, Emission.BOTH)

    @property
    def has_oobe(self) -> bool:
        return self in (Emission.OOBE, Emission.BOTH)

    @classmethod
    def from_flags(cls, spn43: bool, oobe: bool) -> "Emission":
        if spn43:
            return cls.BOTH if oobe else cls.SPN43
        return cls.OOBE if oobe else cls.NEITHER


@dataclass(frozen=True)
class Spn43:
    center_freq: float
    peak_dbm: float
    sweep_period: float = 3.85
    sweep_width_bins: int = 7
    phase: float = 0.0
    fade_db: float = 2.0  # per-rotation level jitter


@dataclass(frozen=True)
class Oobe:
    power_dbm_range: tuple[float, float]
    streak_rate: float = 12.0  # streaks per minute
    ripple_db: float = 2.0


@dataclass(frozen=True)
class LoLeak:
    freq: float
    dbm: float


@dataclass(frozen=True)
class SceneSpec:
    noise_floor_dbm: float = -95.0
    spn43: tuple[Spn43, ...] = ()
    oobe: Oobe | None = None
    lo_leak: LoLeak | None = None
    site: str = "VB"
    antenna: str = "Omni"
    noise_sigma_db: float = 1.5
    n_time: int = 134
    n_freq: int = 1024
    start_freq: float = FULL_START_HZ
    freq_bin_width: float = FULL_BIN_HZ
    time_bin_duration: float = 0.455
    band: tuple[float, float] = (BAND_START_HZ, BAND_END_HZ)

    @property
    def stop_freq(self) -> float:
        return self.start_freq + (self.n_freq - 1) * self.freq_bin_width

    def validate(self) -> None:
        if self.n_time < 1 or self.n_freq < 1 or self.freq_bin_width <= 0 or self.time_bin_duration <= 0:
            raise InvalidSpec("scene dimensions must be positive")
        if self.site not in SITES or self.antenna not in ANTENNAS:
            raise InvalidSpec(f"unknown site/antenna {self.site}/{self.antenna}")
        if self.noise_sigma_db < 0:
            raise InvalidSpec("noise_sigma_db must be non-negative")
        for e in self.spn43:
            k = e.center_freq / CHANNEL_WIDTH_HZ
            if abs(k - round(k)) > 1e-6:
                raise InvalidSpec(f"SPN-43 carrier {e.center_freq} Hz is not a 10 MHz multiple")
            if not (self.start_freq <= e.center_freq <= self.stop_freq):
                raise InvalidSpec(f"SPN-43 carrier {e.center_freq / 1e6} MHz outside the scene")
            if not e.sweep_period > self.time_bin_duration:
                raise InvalidSpec("sweep period must exceed the epoch duration")
            if not e.peak_dbm > self.noise_floor_dbm:
                raise InvalidSpec("SPN-43 peak must exceed the noise floor")
            if e.sweep_width_bins < 1:
                raise InvalidSpec("sweep_width_bins must be >= 1")
        if self.oobe is not None:
            lo, hi = self.oobe.power_dbm_range
            if hi < lo or self.oobe.streak_rate < 0:
                raise InvalidSpec("bad OOBE parameters")


def round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(int)


def sweep_rows(period: float, phase: float, bin_duration: float, n_time: int) -> np.ndarray:
    """Rows hit by sweeps at ``k*period + phase`` seconds, k >= 0, nearest-row rounding."""
    n_k = int(math.ceil((n_time * bin_duration - phase) / period)) + 2
    rows = round_half_up((np.arange(max(n_k, 0)) * period + phase) / bin_duration)
    return np.unique(rows[(rows >= 0) & (rows < n_time)])


@dataclass
class LabeledCase:
    case_id: str
    channel_labels: dict[int, bool]  # channel center in MHz -> SPN-43 present
    emission: Emission
    site: str
    antenna: str
    multi_spn43: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def stratum(self) -> tuple[str, str, str]:
        return (self.emission.value, self.site, self.antenna)

    @property
    def n_present(self) -> int:
        return sum(self.channel_labels.values())

    def to_json(self) -> dict:
        return {
            "id": self.case_id,
            "channel_labels": {str(k): bool(v) for k, v in sorted(self.channel_labels.items())},
            "emission": self.emission.value,
            "site": self.site,
            "antenna": self.antenna,
            "multi_spn43": self.multi_spn43,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabeledCase":
        return cls(
            case_id=d["id"],
            channel_labels={int(k): bool(v) for k, v in d["channel_labels"].items()},
            emission=Emission(d["emission"]),
            site=d["site"],
            antenna=d["antenna"],
            multi_spn43=bool(d.get("multi_spn43", False)),
            meta=d.get("meta", {}),
        )


def generate_scene(spec: SceneSpec, seed, case_id: str = "scene") -> tuple[Spectrogram, LabeledCase]:
    spec.validate()
    rng = np.random.default_rng(seed)
    T, F = spec.n_time, spec.n_freq
    freqs = spec.start_freq + spec.freq_bin_width * np.arange(F)

    noise_db = spec.noise_floor_dbm + spec.noise_sigma_db * rng.standard_normal((T, F))
    power = 10.0 ** (noise_db / 10.0)

    for e in spec.spn43:
        rows = sweep_rows(e.sweep_period, e.phase, spec.time_bin_duration, T)
        fade = e.fade_db * rng.standard_normal(rows.size)
        offset = (freqs - e.center_freq) / spec.freq_bin_width
        half = e.sweep_width_bins / 2.0
        cols = np.flatnonzero(np.abs(offset) <= half)
        shape_db = -12.0 * (offset[cols] / half) ** 2
        power[np.ix_(rows, cols)] += 10.0 ** ((e.peak_dbm + fade[:, None] + shape_db[None, :]) / 10.0)

    if spec.oobe is not None:
        minutes = T * spec.time_bin_duration / 60.0
        n = min(T, max(1, int(rng.poisson(spec.oobe.streak_rate * minutes))))
        rows = np.sort(rng.choice(T, size=n, replace=False))
        lo, hi = spec.oobe.power_dbm_range
        level = rng.uniform(lo, hi, size=n)
        ripple_period = rng.uniform(20e6, 80e6, size=n)
        ripple_phase = rng.uniform(0, 2 * np.pi, size=n)
        ripple = spec.oobe.ripple_db * np.sin(2 * np.pi * freqs[None, :] / ripple_period[:, None] + ripple_phase[:, None])
        power[rows] += 10.0 ** ((level[:, None] + ripple) / 10.0)

    if spec.lo_leak is not None:
        col = int(np.argmin(np.abs(freqs - spec.lo_leak.freq)))
        if abs(freqs[col] - spec.lo_leak.freq) <= spec.freq_bin_width:
            power[:, col] += 10.0 ** (spec.lo_leak.dbm / 10.0)

    sg = Spectrogram(
        values=10.0 * np.log10(power),
        time_bin_duration=spec.time_bin_duration,
        freq_bin_width=spec.freq_bin_width,
        start_freq=spec.start_freq,
        units=Units.DBM,
    )
    return sg, scene_case(spec, case_id)


def scene_case(spec: SceneSpec, case_id: str = "scene") -> LabeledCase:
    """Labels and stratum tags of a scene; needs no rendering."""
    carriers = {int(round(e.center_freq / 1e6)) for e in spec.spn43}
    labels = {int(round(c / 1e6)): int(round(c / 1e6)) in carriers for c in channel_centers(*spec.band)}
    present = sum(labels.values())
    return LabeledCase(
        case_id=case_id,
        channel_labels=labels,
        emission=Emission.from_flags(present > 0, spec.oobe is not None),
        site=spec.site,
        antenna=spec.antenna,
        multi_spn43=present > 1,
        meta={"noise_floor_dbm": round(float(spec.noise_floor_dbm), 6)},
    )


def channel_scene(center_freq: float, half_width_bins: int = 32, **kwargs) -> SceneSpec:
    """A narrow scene around one channel, on the full-band bin grid."""
    k = int(round((center_freq - FULL_START_HZ) / FULL_BIN_HZ))
    start = FULL_START_HZ + (k - half_width_bins) * FULL_BIN_HZ
    return SceneSpec(
        start_freq=start,
        n_freq=2 * half_width_bins + 1,
        band=(center_freq, center_freq),
        **kwargs,
    )


@dataclass(frozen=True)
class SceneDistribution:
    """Sampling law for scene parameters given the stratum tags.

    Site and antenna shift only the noise floor; a per-case jitter stands in
    for receiver reference-level changes.
    """

    site_floor_dbm: tuple[tuple[str, float], ...] = (("VB", -96.0), ("SD", -91.0))
    antenna_offset_db: tuple[tuple[str, float], ...] = (("Omni", 0.0), ("CBS", -1.5))
    floor_jitter_db: float = 2.0
    noise_sigma_db: float = 1.5
    spn43_snr_db: tuple[float, float] = (5.0, 20.0)
    sweep_period_range: tuple[float, float] = (3.8, 3.9)
    sweep_width_bins: tuple[int, int] = (5, 9)
    oobe_snr_db: tuple[float, float] = (5.0, 50.0)
    oobe_span_db: float = 10.0
    oobe_rate_per_min: tuple[float, float] = (4.0, 20.0)
    lo_leak_freq: tuple[tuple[str, float], ...] = (("VB", 3577e6), ("SD", 3565e6))
    lo_leak_snr_db: float = 6.0
    n_multi: int = 2
    p_multi: float = 0.2
    band: tuple[float, float] = (BAND_START_HZ, BAND_END_HZ)

    def floor_for(self, site: str, antenna: str) -> float:
        return dict(self.site_floor_dbm)[site] + dict(self.antenna_offset_db)[antenna]

    def sample(self, rng: np.random.Generator, emission: Emission, site: str, antenna: str,
               multi: bool = False, **overrides) -> SceneSpec:
        floor = self.floor_for(site, antenna) + rng.uniform(-self.floor_jitter_db, self.floor_jitter_db)
        centers = channel_centers(*self.band)
        spn = []
        if emission.has_spn43:
            k = self.n_multi if multi else 1
            for c in rng.choice(len(centers), size=k, replace=False):
                period = rng.uniform(*self.sweep_period_range)
                spn.append(
                    Spn43(
                        center_freq=centers[int(c)],
                        peak_dbm=floor + rng.uniform(*self.spn43_snr_db),
                        sweep_period=period,
                        sweep_width_bins=int(rng.integers(self.sweep_width_bins[0], self.sweep_width_bins[1] + 1)),
                        phase=rng.uniform(0.0, period),
                    )
                )
        oobe = None
        if emission.has_oobe:
            lo = floor + rng.uniform(*self.oobe_snr_db)
            oobe = Oobe(
                power_dbm_range=(lo, lo + self.oobe_span_db),
                streak_rate=rng.uniform(*self.oobe_rate_per_min),
            )
        leak = LoLeak(freq=dict(self.lo_leak_freq)[site], dbm=floor + self.lo_leak_snr_db)
        kw = dict(
            noise_floor_dbm=floor,
            spn43=tuple(spn),
            oobe=oobe,
            lo_leak=leak,
            site=site,
            antenna=antenna,
            noise_sigma_db=self.noise_sigma_db,
            band=self.band,
        )
        kw.update(overrides)
        return SceneSpec(**kw)


ALL_STRATA = [(e, s, a) for e in Emission for s in SITES for a in ANTENNAS]


def case_rngs(seed: int, index: int) -> tuple[np.random.Generator, np.random.SeedSequence]:
    """Independent streams for (tag/spec sampling, rendering) of case ``index``."""
    tags, render = np.random.SeedSequence([int(seed), int(index)]).spawn(2)
    return np.random.default_rng(tags), render


def _case_spec(dist: SceneDistribution, seed: int, i: int, strata) -> tuple[SceneSpec, np.random.SeedSequence]:
    rng, render_seed = case_rngs(seed, i)
    emission, site, antenna = strata[int(rng.integers(len(strata)))]
    emission = Emission(emission)
    multi = emission.has_spn43 and rng.random() < dist.p_multi
    return dist.sample(rng, emission, site, antenna, multi=multi), render_seed


def iter_scenes(
    n: int,
    dist: SceneDistribution = SceneDistribution(),
    seed: int = 0,
    strata: Sequence[tuple[Emission, str, str]] | None = None,
    prefix: str = "case",
    start: int = 0,
) -> Iterator[tuple[Spectrogram, LabeledCase]]:
    """Balanced scenes: each case draws its stratum uniformly from ``strata``."""
    strata = list(strata) if strata is not None else ALL_STRATA
    for i in range(start, start + n):
        spec, render_seed = _case_spec(dist, seed, i, strata)
        yield generate_scene(spec, render_seed, case_id=f"{prefix}{i:06d}")


def iter_cases(
    n: int,
    dist: SceneDistribution = SceneDistribution(),
    seed: int = 0,
    strata: Sequence[tuple[Emission, str, str]] | None = None,
    prefix: str = "case",
    start: int = 0,
) -> Iterator[LabeledCase]:
    """The cases ``iter_scenes`` would yield, without rendering them."""
    strata = list(strata) if strata is not None else ALL_STRATA
    for i in range(start, start + n):
        spec, _ = _case_spec(dist, seed, i, strata)
        yield scene_case(spec, f"{prefix}{i:06d}")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def generate_dataset(
    out_dir: str | Path,
    n: int,
    dist: SceneDistribution = SceneDistribution(),
    seed: int = 0,
    strata: Sequence[tuple[Emission, str, str]] | None = None,
) -> dict:
    """Write ``n`` scenes as ``manifest.json`` plus little-endian float32 payloads."""
    if n < 1:
        raise InvalidSpec("n must be >= 1")
    out = Path(out_dir)
    try:
        (out / "payloads").mkdir(parents=True, exist_ok=True)
        records = []
        for sg, case in iter_scenes(n, dist, seed, strata):
            data = sg.values.astype("<f4").tobytes()
            rel = f"payloads/{case.case_id}.f32"
            (out / rel).write_bytes(data)
            rec = case.to_json()
            rec.update(
                payload=rel,
                shape=list(sg.values.shape),
                units=sg.units.value,
                start_freq=sg.start_freq,
                freq_bin_width=sg.freq_bin_width,
                time_bin_duration=sg.time_bin_duration,
                sha256=_sha256(data),
            )
            records.append(rec)
        n_pos = sum(sum(r["channel_labels"].values()) for r in records)
        n_ch = sum(len(r["channel_labels"]) for r in records)
        manifest = {
            "format_version": FORMAT_VERSION,
            "seed": int(seed),
            "n_cases": len(records),
            "channel_counts": {"present": n_pos, "absent": n_ch - n_pos},
            "cases": records,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return manifest


def manifest_hash(path: str | Path) -> str:
    return _sha256((Path(path) / "manifest.json").read_bytes())


class Dataset:
    """Read side of the dataset container."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        try:
            self.manifest = json.loads((self.root / "manifest.json").read_text())
        except (OSError, ValueError) as exc:
            raise IoFailure(f"cannot read dataset manifest in {root}: {exc}") from exc
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise IoFailure(f"unsupported dataset format {self.manifest.get('format_version')}")
        self._records = {r["id"]: r for r in self.manifest["cases"]}
        self.cases = [LabeledCase.from_json(r) for r in self.manifest["cases"]]

    def __len__(self) -> int:
        return len(self.cases)

    def spectrogram(self, case_id: str) -> Spectrogram:
        r = self._records[case_id]
        try:
            raw = np.fromfile(self.root / r["payload"], dtype="<f4")
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        return Spectrogram(
            values=raw.reshape(r["shape"]).astype(np.float64),
            time_bin_duration=r["time_bin_duration"],
            freq_bin_width=r["freq_bin_width"],
            start_freq=r["start_freq"],
            units=Units(r["units"]),
        )

    def channels(self, case: LabeledCase):
        return extract_channels(self.spectrogram(case.case_id), parent_id=case.case_id)


def balanced_channel_sample(
    scenes: Iterator[tuple[Spectrogram, LabeledCase]],
    n_channels: int,
    seed: int = 0,
    neg_per_scene: int = 2,
    dtype=np.float32,
) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int]]]:
    """Channels drawn at random from scenes, half SPN-43 present, half absent."""
    rng = np.random.default_rng(seed)
    pos, neg = [], []
    for sg, case in scenes:
        chans = extract_channels(sg, parent_id=case.case_id)
        labelled = [(c, case.channel_labels[c.center_mhz]) for c in chans]
        pos += [(c.values.astype(dtype), (case.case_id, c.center_mhz)) for c, y in labelled if y]
        absent = [c for c, y in labelled if not y]
        for j in rng.choice(len(absent), size=min(neg_per_scene, len(absent)), replace=False):
            c = absent[int(j)]
            neg.append((c.values.astype(dtype), (case.case_id, c.center_mhz)))
    n_pos = n_channels // 2
    n_neg = n_channels - n_pos
    if len(pos) < n_pos or len(neg) < n_neg:
        raise InsufficientStratum(f"need {n_pos}/{n_neg} channels, have {len(pos)}/{len(neg)}")
    pick_p = rng.choice(len(pos), n_pos, replace=False)
    pick_n = rng.choice(len(neg), n_neg, replace=False)
    chosen = [pos[i] for i in pick_p] + [neg[i] for i in pick_n]
    y = np.r_[np.ones(n_pos), np.zeros(n_neg)]
    order = rng.permutation(len(chosen))
    X = np.stack([chosen[i][0] for i in order])
    return X, y[order], [chosen[i][1] for i in order]


# --------------------------------------------------------------------------- strata


def largest_remainder(weights: dict, total: int) -> dict:
    keys = list(weights)
    raw = np.array([weights[k] for k in keys], dtype=float) * total
    base = np.floor(raw).astype(int)
    short = total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return dict(zip(keys, base.tolist()))


@dataclass
class StrataPlan:
    proportions: dict[tuple[str, str, str], float]
    total: int
    multi_quota: int = 0
    best_effort: bool = False

    def __post_init__(self) -> None:
        self.proportions = {(Emission(k[0]).value, k[1], k[2]): float(v) for k, v in self.proportions.items()}
        s = sum(self.proportions.values())
        if abs(s - 1.0) > 1e-3:
            raise InvalidSpec(f"strata proportions sum to {s}, not 1")

    @classmethod
    def from_marginals(cls, emission: dict, site: dict, antenna: dict, total: int,
                       multi_quota: int = 0, best_effort: bool = False) -> "StrataPlan":
        def norm(d):
            t = sum(d.values())
            return {k: v / t for k, v in d.items()}

        e, s, a = norm(emission), norm(site), norm(antenna)
        props = {(Emission(ek).value, sk, ak): e[ek] * s[sk] * a[ak] for ek in e for sk in s for ak in a}
        return cls(props, total, multi_quota, best_effort)

    @classmethod
    def table_i_set_a(cls, total: int = 509, best_effort: bool = False) -> "StrataPlan":
        """Emission/site/antenna marginals of the reference test set (509 cases, 109 multi)."""
        return cls.from_marginals(
            {Emission.SPN43: 24.56, Emission.OOBE: 24.36, Emission.BOTH: 26.72, Emission.NEITHER: 24.36},
            {"VB": 51.28, "SD": 48.72},
            {"Omni": 48.92, "CBS": 51.08},
            total=total,
            multi_quota=int(round(109 * total / 509)),
            best_effort=best_effort,
        )

    def cell_counts(self) -> dict[tuple[str, str, str], int]:
        return largest_remainder(self.proportions, self.total)


def stratified_split(cases: Sequence[LabeledCase], plan: StrataPlan, seed: int = 0):
    """Draw a test set matching ``plan``; everything else is the training pool."""
    rng = np.random.default_rng(seed)
    by_cell: dict[tuple, list[int]] = defaultdict(list)
    for i, c in enumerate(cases):
        by_cell[c.stratum].append(i)
    counts = plan.cell_counts()
    spn_cells = {k: v for k, v in counts.items() if Emission(k[0]).has_spn43 and v > 0}
    multi_share = largest_remainder(
        {k: v / max(sum(spn_cells.values()), 1) for k, v in spn_cells.items()}, plan.multi_quota
    ) if spn_cells and plan.multi_quota else {}

    chosen: list[int] = []
    for cell in sorted(counts):
        want = counts[cell]
        pool = list(by_cell.get(cell, []))
        rng.shuffle(pool)
        if want > len(pool):
            if not plan.best_effort:
                raise InsufficientStratum(f"stratum {cell} needs {want} cases, pool has {len(pool)}")
            want = len(pool)
        multi = [i for i in pool if cases[i].multi_spn43]
        single = [i for i in pool if not cases[i].multi_spn43]
        q = min(multi_share.get(cell, 0), len(multi), want)
        take = multi[:q] + single[: want - q]
        if len(take) < want:
            take += multi[q : q + want - len(take)]
        chosen += take
    test_set = set(chosen)
    test = [cases[i] for i in sorted(test_set)]
    train_pool = [c for i, c in enumerate(cases) if i not in test_set]
    return test, train_pool


def stratified_bootstrap_indices(strata: Sequence[Hashable], rng: np.random.Generator) -> np.ndarray:
    """Resample indices with replacement inside each stratum, keeping per-stratum counts."""
    groups: dict[Hashable, list[int]] = {}
    for i, s in enumerate(strata):
        groups.setdefault(s, []).append(i)
    out = [np.asarray(idx)[rng.integers(0, len(idx), size=len(idx))] for idx in groups.values()]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def stratified_bootstrap_resample(test: Sequence, seed, key: Callable = lambda c: c.stratum) -> list:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = stratified_bootstrap_indices([key(c) for c in test], rng)
    return [test[i] for i in idx]


def without_oobe(cases: Sequence[LabeledCase]) -> list[LabeledCase]:
    """The OOBE-free subset of a test set."""
    return [c for c in cases if not c.emission.has_oobe]


def spec_to_json(spec: SceneSpec) -> dict:
    return asdict(spec)


# --------------------------------------------------------------------------- surveys


def occupancy_schedule(n_obs: int, duty: float, mean_run: float, rng: np.random.Generator) -> np.ndarray:
    """Two-state Markov occupancy with stationary occupied share ``duty``.

    ``mean_run`` is the mean occupied run length in observations.
    """
    if not 0.0 < duty < 1.0 or mean_run < 1.0:
        raise InvalidSpec("need 0 < duty < 1 and mean_run >= 1")
    p_leave = 1.0 / mean_run
    p_enter = p_leave * duty / (1.0 - duty)
    if p_enter > 1.0:
        raise InvalidSpec("duty too high for that mean run length")
    u = rng.random(n_obs)
    out = np.empty(n_obs, dtype=bool)
    state = bool(u[0] < duty)
    out[0] = state
    for i in range(1, n_obs):
        state = (u[i] >= p_leave) if state else (u[i] < p_enter)
        out[i] = state
    return out


def survey_observations(
    schedule: dict[int, np.ndarray],
    seed: int,
    dist: SceneDistribution = SceneDistribution(),
    site: str = "VB",
    antenna: str = "Omni",
    snr_db: tuple[float, float] | None = None,
    half_width_bins: int = 32,
) -> Iterator[tuple[int, list]]:
    """Yield (observation index, channel slices) following a per-channel truth schedule.

    Each channel is rendered as its own narrow scene so long surveys stay
    cheap; an occupied channel carries one SPN-43 at its center.
    """
    chans = sorted(schedule)
    n_obs = len(schedule[chans[0]])
    lo, hi = snr_db if snr_db is not None else dist.spn43_snr_db
    for t in range(n_obs):
        out = []
        for j, mhz in enumerate(chans):
            rng = np.random.default_rng([int(seed), t, j])
            floor = dist.floor_for(site, antenna) + rng.uniform(-dist.floor_jitter_db, dist.floor_jitter_db)
            spn = ()
            if schedule[mhz][t]:
                period = rng.uniform(*dist.sweep_period_range)
                spn = (Spn43(center_freq=mhz * 1e6, peak_dbm=floor + rng.uniform(lo, hi), sweep_period=period,
                             sweep_width_bins=int(rng.integers(dist.sweep_width_bins[0], dist.sweep_width_bins[1] + 1)),
                             phase=rng.uniform(0.0, period)),)
            spec = channel_scene(mhz * 1e6, half_width_bins, noise_floor_dbm=floor, spn43=spn, site=site,
                                 antenna=antenna, noise_sigma_db=dist.noise_sigma_db)
            sg, _ = generate_scene(spec, rng)
            out.append(extract_channels(sg, mhz * 1e6, mhz * 1e6, parent_id=f"obs{t:06d}")[0])
        yield t, out
