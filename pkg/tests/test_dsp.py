import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deepsense.dsp import (IntervalSet, SensorSeries, assemble_tensor, default_target_len, dft_window,
                           preprocess_series, resample_window, segment_by_boundaries, segment_intervals)

from oracles import naive_dft


def uniform_series(seconds, rate, d=3, seed=0):
    n = int(round(seconds * rate))
    u = np.arange(n) / rate
    return SensorSeries(0, np.random.default_rng(seed).normal(size=(d, n)), u)


def interleave(spec):
    out = np.empty(2 * spec.size)
    out[0::2] = np.abs(spec)
    out[1::2] = np.angle(spec)
    return out


# -- segmentation ------------------------------------------------------------

def test_five_seconds_gives_twenty_windows():
    assert segment_intervals(uniform_series(5, 100), 0.25).count == 20


def test_exactly_one_interval():
    iv = segment_intervals(uniform_series(0.25, 100), 0.25)
    assert iv.count == 1 and iv.windows[0][1].size == 25


def test_short_tail_dropped():
    iv = segment_intervals(uniform_series(10.1, 100), 1.0)
    assert iv.count == 10
    assert np.allclose(iv.widths, 1.0)


def test_long_tail_kept_with_true_width():
    iv = segment_intervals(uniform_series(10.6, 100), 1.0)
    assert iv.count == 11
    assert abs(iv.widths[-1] - 0.6) < 1e-9


def test_shorter_than_one_interval_rejected():
    with pytest.raises(ValueError, match="shorter than one interval"):
        segment_intervals(uniform_series(0.2, 100), 0.25)


def test_windows_ordered_and_disjoint():
    iv = segment_intervals(uniform_series(3.3, 50), 0.5)
    ends = [(w[1][0], w[1][-1]) for w in iv.windows]
    assert all(a[1] < b[0] for a, b in zip(ends, ends[1:]))


def test_boundaries_segmentation():
    iv = segment_by_boundaries(uniform_series(3, 10), [0.0, 1.0, 2.5])
    assert [w[1].size for w in iv.windows] == [10, 15]
    assert np.allclose(iv.widths, [1.0, 1.5])


# -- transform ---------------------------------------------------------------

def test_dft_constant():
    out = dft_window(np.full((1, 8), 2.5), 5)
    assert abs(out[0, 0] - 20.0) < 1e-12
    assert np.all(np.abs(out[0, 2::2]) < 1e-12)
    assert np.all(out[0, 1::2] == 0.0)


def test_dft_cosine_bin_two():
    m = 16
    out = dft_window(np.cos(2 * np.pi * np.arange(m) * 2 / m)[None], m // 2 + 1)
    mags = out[0, 0::2]
    assert abs(mags[2] - 8.0) < 1e-12
    assert np.all(np.abs(np.delete(mags, 2)) < 1e-12)


def test_dft_random_matches_naive():
    x = np.random.default_rng(1).normal(size=32)
    f = 17
    assert np.max(np.abs(dft_window(x[None], f)[0] - interleave(naive_dft(x)[:f]))) < 1e-9


def test_dft_too_many_bins():
    with pytest.raises(ValueError):
        dft_window(np.zeros((1, 8)), 6)


def test_phase_range():
    x = np.random.default_rng(2).normal(size=(4, 33))
    ph = dft_window(x, 17)[:, 1::2]
    assert np.all(ph > -np.pi) and np.all(ph <= np.pi)


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-10, 10)))
def test_parseval(x):
    m = x.size
    full = np.abs(naive_dft(x)) ** 2
    assert abs(np.sum(x * x) - full.sum() / m) < 1e-9 * (1 + np.sum(x * x))
    # half spectrum from the module reconstructs the same energy
    mags = dft_window(x[None], m // 2 + 1)[0, 0::2]
    w = np.full(mags.size, 2.0)
    w[0] = 1.0
    if m % 2 == 0:
        w[-1] = 1.0
    assert abs(np.sum(w * mags ** 2) / m - np.sum(x * x)) < 1e-9 * (1 + np.sum(x * x))


@given(arrays(np.float64, 24, elements=st.floats(-5, 5)), st.integers(0, 23))
def test_circular_shift_keeps_magnitudes(x, k):
    a = dft_window(x[None], 13)[0, 0::2]
    b = dft_window(np.roll(x, k)[None], 13)[0, 0::2]
    assert np.max(np.abs(a - b)) < 1e-9


# -- resampling --------------------------------------------------------------

def test_resample_identity():
    u = np.linspace(0, 1, 20)
    v = np.random.default_rng(3).normal(size=(2, 20))
    assert np.max(np.abs(resample_window(v, u, 20) - v)) < 1e-12


@given(st.integers(2, 100), st.floats(-3, 3), st.floats(-3, 3))
def test_resample_affine_exact(m, a, b):
    u = np.sort(np.random.default_rng(m).uniform(0, 1, 30))
    u[0], u[-1] = 0.0, 1.0
    out = resample_window(a * u + b, u, m)[0]
    assert np.max(np.abs(out - (a * np.linspace(0, 1, m) + b))) < 1e-9


def test_resample_sine():
    u = np.arange(90) / 9000.0  # 90 samples at 9 kHz of a 100 Hz sine
    out = resample_window(np.sin(2 * np.pi * 100 * u), u, 64)[0]
    grid = np.linspace(u[0], u[-1], 64)
    assert np.max(np.abs(out - np.sin(2 * np.pi * 100 * grid))) < 1e-3


def test_resample_needs_two():
    with pytest.raises(ValueError):
        resample_window(np.ones((1, 1)), np.zeros(1), 4)


# -- assembly ----------------------------------------------------------------

def test_assemble_single_interval_equals_dft():
    v, u = np.random.default_rng(4).normal(size=(3, 16)), np.arange(16) / 64
    ft = assemble_tensor(IntervalSet([(v, u)], np.array([0.25])), f=9, target_len=16)
    assert np.array_equal(ft.data[:, :, 0], dft_window(v, 9))


def test_assemble_shape_hhar():
    ft = preprocess_series(uniform_series(5, 100), 0.25, f=10, target_len=32)
    assert ft.data.shape == (3, 20, 20)


def test_assemble_identical_windows_bit_equal():
    v, u = np.random.default_rng(5).normal(size=(3, 10)), np.arange(10) / 40
    ft = assemble_tensor(IntervalSet([(v, u), (v.copy(), u.copy())], np.array([0.25, 0.25])), 5, 8)
    assert np.array_equal(ft.data[:, :, 0], ft.data[:, :, 1])


def test_assemble_inconsistent_dims():
    u = np.arange(8) / 8
    with pytest.raises(ValueError):
        assemble_tensor(IntervalSet([(np.zeros((3, 8)), u), (np.zeros((2, 8)), u + 1)], np.ones(2)), 3, 8)


def test_default_target_len_power_of_two():
    iv = segment_intervals(uniform_series(5, 100), 0.25)  # 25 samples per window
    assert default_target_len(iv) == 32


def test_chunking_independence():
    s = uniform_series(3, 50)
    whole = preprocess_series(s, 0.25, 5, 8).data
    # same series assembled from a copy built by concatenating column chunks
    parts = np.split(np.arange(len(s)), [37, 90])
    rebuilt = SensorSeries(0, np.concatenate([s.values[:, p] for p in parts], axis=1),
                           np.concatenate([s.timestamps[p] for p in parts]))
    assert np.array_equal(whole, preprocess_series(rebuilt, 0.25, 5, 8).data)
