import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cbrs_sense.detect import (
    EdConfig,
    align_template,
    build_sweep_template,
    center_columns,
    ed_scores,
    energy_detect_score,
    si_ed_scores,
    si_energy_detect_score,
)
from cbrs_sense.errors import InvalidConfig, InvalidSpec, UnitsNotCalibrated
from cbrs_sense.spectrogram import DBM_FLOOR, ChannelSlice
from cbrs_sense.synth import SceneSpec, Spn43, generate_scene, extract_channels

slices = arrays(np.float64, (134, 46), elements=st.floats(-120, -20))


def oracle_rows(phase=0, n=134, period=3.85, b=0.455):
    rows = [int(np.floor(k * period / b + 0.5)) + phase for k in range(40)]
    return sorted(r for r in set(rows) if 0 <= r < n)


def test_center_columns():
    assert center_columns() == slice(22, 25)


def test_ed_hand_values():
    x = np.full((134, 46), -30.0)
    assert energy_detect_score(x) == pytest.approx(0.402, rel=1e-12)
    assert energy_detect_score(np.full((134, 46), DBM_FLOOR)) < 1e-27
    assert energy_detect_score(x + 10) == pytest.approx(10 * energy_detect_score(x), rel=1e-12)


def test_ed_needs_dbm():
    with pytest.raises(UnitsNotCalibrated):
        energy_detect_score(np.zeros((134, 46)), EdConfig(use_dbm_normalization=False))
    with pytest.raises(InvalidConfig):
        EdConfig(center_bins=4)


def test_template_indices():
    tpl = build_sweep_template()
    assert np.flatnonzero(tpl.mask).tolist() == oracle_rows()
    assert tpl.mask.sum() == 16
    assert tpl.n_phases == 8


def test_template_shift():
    tpl = build_sweep_template(phase_bins=3)
    assert np.flatnonzero(tpl.mask).tolist() == oracle_rows(3)


def test_template_saturates():
    tpl = build_sweep_template(period=0.455)
    assert tpl.mask.all()


def test_template_invalid():
    with pytest.raises(InvalidSpec):
        build_sweep_template(period=0.3, on_duration=0.455)


def test_align_examples():
    tpl = build_sweep_template()
    assert align_template(tpl, tpl.mask.astype(float)) == 0
    assert align_template(tpl, build_sweep_template(phase_bins=3).mask.astype(float)) == 3
    assert align_template(tpl, np.ones(134)) == 0


@given(st.integers(0, 7), st.integers(0, 2**31))
def test_align_recovers_shift(shift, seed):
    tpl = build_sweep_template()
    rng = np.random.default_rng(seed)
    profile = build_sweep_template(phase_bins=shift).mask * 10.0 + rng.uniform(0, 0.5, 134)
    # exhaustive oracle
    scores = [build_sweep_template(phase_bins=p).mask @ profile for p in range(8)]
    assert align_template(tpl, profile) == int(np.argmax(scores)) == shift


def test_si_ed_uniform():
    assert si_energy_detect_score(np.full((134, 46), -30.0)) == pytest.approx(0.048, rel=1e-12)
    assert si_energy_detect_score(np.full((134, 46), DBM_FLOOR)) < 1e-27


def test_si_ed_true_phase_best():
    spec = SceneSpec(spn43=(Spn43(3600e6, -60.0, sweep_period=3.85, phase=3 * 0.455, fade_db=0.0),))
    sg, _ = generate_scene(spec, 0)
    ch = [c for c in extract_channels(sg) if c.center_mhz == 3600][0]
    prof = (10 ** (ch.values[:, 22:25] / 10)).sum(axis=1)
    tpl = build_sweep_template()
    assert align_template(tpl, prof) == 3
    best = si_energy_detect_score(ch)
    for p in range(8):
        assert best >= build_sweep_template(phase_bins=p).mask @ prof - 1e-15


@given(slices)
def test_si_ed_below_ed(x):
    assert si_energy_detect_score(x) <= energy_detect_score(x) * (1 + 1e-12)


@given(slices, slices)
def test_scores_ignore_outer_columns(x, y):
    z = y.copy()
    z[:, 22:25] = x[:, 22:25]
    assert energy_detect_score(z) == pytest.approx(energy_detect_score(x), rel=1e-12)
    assert si_energy_detect_score(z) == pytest.approx(si_energy_detect_score(x), rel=1e-12)


@given(slices, st.floats(-20, 20))
def test_ed_linear_in_power(x, db):
    assert energy_detect_score(x + db) == pytest.approx(10 ** (db / 10) * energy_detect_score(x), rel=1e-9)


def test_vectorized_matches_scalar(rng):
    X = rng.normal(-90, 8, (20, 134, 46))
    assert np.allclose(ed_scores(X), [energy_detect_score(x) for x in X], rtol=1e-12)
    assert np.allclose(si_ed_scores(X), [si_energy_detect_score(x) for x in X], rtol=1e-12)


def test_accepts_channel_slice():
    ch = ChannelSlice(np.full((134, 46), -30.0), 3550e6)
    assert energy_detect_score(ch) == pytest.approx(0.402)
