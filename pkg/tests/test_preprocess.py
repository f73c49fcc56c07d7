import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from paee.data import Activity, ActivityAnnotation, AccelStream, BreathRecord, Location, Place
from paee.errors import DegenerateChannel, EmptyWindow, NonIntegralBinCount, UnknownLabel
from paee.preprocess import (
    ACTIVITY_CODES,
    AggregationFn,
    LabelEncoder,
    aggregate_bins,
    encode_labels,
    mode_label_bin,
    resample_stream,
    resample_window,
    smooth_target,
    znorm_apply,
    znorm_fit,
    znorm_invert,
)

DISPERSION = [AggregationFn.SD, AggregationFn.IQR, AggregationFn.PD]


def brute_percentile(x, q):
    s = sorted(x)
    h = (len(s) - 1) * q / 100.0
    lo = int(h // 1)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def test_resample_window_examples():
    assert resample_window([2, 2, 2, 2], AggregationFn.SD) == 0.0
    assert resample_window([1, 2, 3, 4], AggregationFn.MEAN) == 2.5
    x = list(range(1, 11))
    expected = brute_percentile(x, 75) - brute_percentile(x, 25)
    assert resample_window(x, AggregationFn.IQR) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(4.5)


def test_resample_window_pd_and_sd():
    x = [0.0, 10.0]
    assert resample_window(x, AggregationFn.PD) == pytest.approx(9.0)
    assert resample_window(x, AggregationFn.SD) == pytest.approx(5.0)


def test_resample_window_empty():
    with pytest.raises(EmptyWindow):
        resample_window([], AggregationFn.SD)


windows = arrays(np.float64, st.integers(1, 40), elements=st.floats(-8, 8, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(windows, st.floats(-100, 100), st.sampled_from(DISPERSION))
def test_dispersion_shift_invariant(x, c, fn):
    assert resample_window(x + c, fn) == pytest.approx(resample_window(x, fn), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(windows, st.floats(-100, 100))
def test_mean_shifts(x, c):
    assert resample_window(x + c, AggregationFn.MEAN) == pytest.approx(resample_window(x, AggregationFn.MEAN) + c, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(windows, st.floats(-10, 10), st.sampled_from(DISPERSION))
def test_dispersion_scale_equivariant(x, a, fn):
    assert resample_window(a * x, fn) == pytest.approx(abs(a) * resample_window(x, fn), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("fn", list(AggregationFn))
def test_aggregate_bins_matches_window(fn):
    rng = np.random.default_rng(0)
    counts = rng.integers(1, 12, size=30)
    starts = np.r_[0, np.cumsum(counts)[:-1]]
    v = rng.normal(size=(counts.sum(), 3))
    out = aggregate_bins(v, starts, counts, fn)
    for k, (s, c) in enumerate(zip(starts, counts)):
        for ch in range(3):
            assert out[k, ch] == pytest.approx(resample_window(v[s : s + c, ch], fn), abs=1e-12)


def _stream(sr=83.0, seconds=240.0, const=None, seed=0):
    n = int(seconds * sr)
    t = np.arange(n) / sr
    xyz = np.full((n, 3), const) if const is not None else np.random.default_rng(seed).normal(0, 0.5, (n, 3))
    return AccelStream(Location.WRIST, t, xyz)


def test_resample_stream_grid_shapes():
    s = _stream()
    assert resample_stream(s, 2.0, AggregationFn.SD, 0.0, 240.0).shape == (480, 3)
    assert resample_stream(s, 50 / 120, AggregationFn.SD, 0.0, 120.0).shape == (50, 3)


def test_resample_stream_constant_sd_zero():
    s = _stream(const=0.7)
    assert np.all(resample_stream(s, 1.0, AggregationFn.SD, 0.0, 60.0) == 0.0)


def test_resample_stream_errors():
    s = _stream(seconds=10)
    with pytest.raises(NonIntegralBinCount):
        resample_stream(s, 0.3, AggregationFn.SD, 0.0, 5.0)
    with pytest.raises(NonIntegralBinCount):
        resample_stream(s, 1.0, AggregationFn.SD, 5.0, 5.0)
    with pytest.raises(EmptyWindow):
        resample_stream(s, 100.0, AggregationFn.SD, 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.sampled_from([0.25, 0.5, 1.0, 2.0]))
def test_resample_stream_length(n, sr):
    s = _stream(seconds=200)
    t1 = n / sr
    if t1 > 200:
        return
    out = resample_stream(s, sr, AggregationFn.MEAN, 0.0, t1)
    assert out.shape == (round(sr * t1), 3)


def test_resample_stream_brute_force():
    s = _stream(seconds=30, seed=4)
    out = resample_stream(s, 0.5, AggregationFn.PD, 2.0, 22.0)
    for k in range(10):
        lo, hi = 2.0 + 2 * k, 4.0 + 2 * k
        m = (s.t >= lo) & (s.t < hi)
        for ch in range(3):
            x = s.xyz[m, ch]
            assert out[k, ch] == pytest.approx(brute_percentile(x, 95) - brute_percentile(x, 5), abs=1e-12)


def test_znorm_examples():
    st_ = znorm_fit([1.0, 3.0])
    assert st_.mean[0] == 2.0 and st_.std[0] == 1.0
    assert znorm_apply(2.0, st_)[0] == 0.0 and znorm_apply(3.0, st_)[0] == 1.0
    with pytest.raises(DegenerateChannel):
        znorm_fit([5.0, 5.0, 5.0])


def test_znorm_statistical():
    n = 100_000
    x = np.random.default_rng(1).normal(10, 2, n)
    s = znorm_fit(x)
    assert abs(s.mean[0] - 10) < 3 * 2 / np.sqrt(n)
    assert abs(s.std[0] - 2) < 3 * 2 / np.sqrt(2 * n)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 50), st.integers(1, 4)), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_znorm_fitting_set(x):
    if np.any(x.std(axis=0) < 1e-6):
        return
    s = znorm_fit(x)
    z = znorm_apply(x, s)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1) < 1e-9)
    assert np.allclose(znorm_invert(z, s), x, atol=1e-9)


def test_encode_labels():
    codes = ACTIVITY_CODES.encode(list(Activity))
    assert sorted(codes.tolist()) == list(range(7))
    assert encode_labels(["walking", "walking"]).tolist() == [0, 0]
    with pytest.raises(UnknownLabel):
        encode_labels(["swimming"])


def test_encode_alphabetical():
    assert ACTIVITY_CODES.decode([0, 6]) == [Activity.CYCLING, Activity.WALKING]


@given(st.lists(st.sampled_from(list(Activity)), min_size=1))
def test_encode_bijection(labels):
    enc = LabelEncoder(labels)
    codes = enc.encode(labels)
    assert enc.decode(codes) == labels
    assert codes.max() == len(set(labels)) - 1


def _ann(labels, t0=0.0):
    return [ActivityAnnotation(t0 + i, Activity(lab), Place.INDOOR) for i, lab in enumerate(labels)]


def test_mode_label_bin():
    code = ACTIVITY_CODES.encode
    assert mode_label_bin(_ann(["walking", "walking", "cycling"]), 0, 3) == code(["walking"])[0]
    assert mode_label_bin(_ann(["walking", "cycling"]), 0, 2) == code(["cycling"])[0]
    assert mode_label_bin(_ann(["sitting"]), 0, 1) == code(["sitting"])[0]
    with pytest.raises(EmptyWindow):
        mode_label_bin(_ann(["sitting"]), 5, 6)


def _breaths(ts, eems):
    return [BreathRecord(t, 0.0, 0.0, e) for t, e in zip(ts, eems)]


def test_smooth_target_examples():
    s = smooth_target(_breaths([1, 4, 8], [2, 4, 6]))
    assert s.bins == [(0.0, 4.0)]
    s = smooth_target(_breaths([1, 12], [2, 6]))
    assert s.bins == [(0.0, 2.0), (10.0, 6.0)]


def test_smooth_target_uniform():
    t = np.arange(0, 100, 10 / 3) + 0.5
    e = np.random.default_rng(2).uniform(1, 5, len(t))
    s = smooth_target(_breaths(t, e))
    assert len(s) == 10 and np.all(s.counts == 3)
    for k in range(10):
        m = (t >= 10 * k) & (t < 10 * k + 10)
        assert s.values[k] == pytest.approx(e[m].mean(), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 500), st.floats(0, 20)), min_size=1, max_size=60))
def test_smooth_target_mass(pairs):
    pairs.sort()
    t = np.array([p[0] for p in pairs])
    e = np.array([p[1] for p in pairs])
    s = smooth_target(_breaths(t, e))
    assert np.all(s.counts >= 1)
    assert np.all(np.diff(s.starts) >= 10)
    for start, v, c in zip(s.starts, s.values, s.counts):
        m = (t >= start) & (t < start + 10)
        assert v * c == pytest.approx(e[m].sum(), abs=1e-10)
