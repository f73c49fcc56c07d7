"""Window aggregation, z-normalisation, label encoding and target smoothing."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Activity, ActivityAnnotation, AccelStream, BreathRecord
from .errors import DegenerateChannel, EmptyWindow, NonIntegralBinCount, UnknownLabel

TARGET_BIN_SEC = 10.0


class AggregationFn(enum.Enum):
    MEAN = "mean"
    SD = "sd"
    IQR = "iqr"
    PD = "pd"  # 95th minus 5th percentile

    @property
    def is_dispersion(self) -> bool:
        return self is not AggregationFn.MEAN


_QUANTILES = {
    AggregationFn.IQR: (25.0, 75.0),
    AggregationFn.PD: (5.0, 95.0),
}


def resample_window(samples, fn: AggregationFn) -> float:
    """Summarise one window of raw samples.

    SD is the population standard deviation; percentiles interpolate linearly
    between order statistics.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise EmptyWindow("cannot aggregate an empty window")
    fn = AggregationFn(fn)
    if fn is AggregationFn.MEAN:
        return float(np.mean(x))
    if fn is AggregationFn.SD:
        # shifting by a member sample keeps constant windows exactly zero
        return float(np.std(x - x.flat[0]))
    lo, hi = np.percentile(x, _QUANTILES[fn])
    return float(hi - lo)


def _binned_quantile(sorted_vals, starts, counts, q):
    h = (counts - 1) * (q / 100.0)
    lo = np.floor(h).astype(np.intp)
    hi = np.minimum(lo + 1, counts - 1)
    frac = h - lo
    a = sorted_vals[starts + lo]
    b = sorted_vals[starts + hi]
    return a + frac * (b - a)


def aggregate_bins(values: np.ndarray, starts: np.ndarray, counts: np.ndarray, fn: AggregationFn) -> np.ndarray:
    """Aggregate contiguous row blocks of ``values`` (m, c) into (len(starts), c).

    Block k covers rows ``starts[k] : starts[k] + counts[k]``; blocks must be
    contiguous, ordered and non-empty.
    """
    values = np.asarray(values, dtype=np.float64)
    if np.any(counts <= 0):
        raise EmptyWindow("aggregation bin without samples")
    fn = AggregationFn(fn)
    n = counts[:, None].astype(np.float64)
    if fn is AggregationFn.MEAN:
        return np.add.reduceat(values, starts, axis=0) / n
    if fn is AggregationFn.SD:
        shifted = values - np.repeat(values[starts], counts, axis=0)
        mean = np.add.reduceat(shifted, starts, axis=0) / n
        dev = shifted - np.repeat(mean, counts, axis=0)
        return np.sqrt(np.add.reduceat(dev * dev, starts, axis=0) / n)
    bin_id = np.repeat(np.arange(len(starts)), counts)
    q_lo, q_hi = _QUANTILES[fn]
    out = np.empty((len(starts), values.shape[1]))
    for c in range(values.shape[1]):
        s = values[np.lexsort((values[:, c], bin_id)), c]
        out[:, c] = _binned_quantile(s, starts, counts, q_hi) - _binned_quantile(s, starts, counts, q_lo)
    return out


def bin_count(target_sr: float, t0: float, t1: float) -> int:
    if not t1 > t0 or not target_sr > 0:
        raise NonIntegralBinCount(f"need t1 > t0 and target_sr > 0 (got t0={t0}, t1={t1}, sr={target_sr})")
    n = (t1 - t0) * target_sr
    k = round(n)
    if k < 1 or abs(n - k) > 1e-9:
        raise NonIntegralBinCount(f"(t1 - t0) * sr = {n!r} is not an integer")
    return int(k)


def resample_stream(stream: AccelStream, target_sr: float, fn: AggregationFn, t0: float, t1: float) -> np.ndarray:
    """Aggregate ``stream`` over [t0, t1) into equal bins of width 1/target_sr.

    Returns an array of shape (bins, 3) holding x, y, z per bin.
    """
    n = bin_count(target_sr, t0, t1)
    return _resample_arrays(stream.t, stream.xyz, t0, t1, n, fn)


def _resample_arrays(t, xyz, t0, t1, n, fn):
    edges = t0 + (t1 - t0) * (np.arange(n + 1) / n)
    idx = np.searchsorted(t, edges, side="left")
    counts = np.diff(idx)
    if np.any(counts == 0):
        k = int(np.flatnonzero(counts == 0)[0])
        raise EmptyWindow(f"no raw samples in bin [{edges[k]:.6g}, {edges[k + 1]:.6g})")
    return aggregate_bins(xyz[idx[0] : idx[-1]], idx[:-1] - idx[0], counts, fn)


# ---------------------------------------------------------------------------
# z-normalisation


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", np.atleast_1d(np.asarray(self.std, dtype=np.float64)))
        if np.any(self.std <= 0):
            raise DegenerateChannel("normalisation std must be positive")

    @property
    def n_channels(self) -> int:
        return len(self.mean)

    @classmethod
    def identity(cls, n_channels: int) -> "NormStats":
        return cls(np.zeros(n_channels), np.ones(n_channels))


def znorm_fit(train_values) -> NormStats:
    """Per-channel mean and population std; channels run along the last axis."""
    x = np.asarray(train_values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    x = x.reshape(-1, x.shape[-1])
    if len(x) < 2:
        raise DegenerateChannel("need at least two values per channel")
    std = x.std(axis=0)
    bad = np.flatnonzero(~(std > 0))
    if len(bad):
        raise DegenerateChannel(f"channel(s) {bad.tolist()} have zero variance")
    return NormStats(x.mean(axis=0), std)


def znorm_apply(values, stats: NormStats) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def znorm_invert(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean


# ---------------------------------------------------------------------------
# labels


def _as_activity(label) -> Activity:
    if isinstance(label, Activity):
        return label
    try:
        return Activity(str(label).strip().lower())
    except ValueError:
        raise UnknownLabel(f"unknown activity label {label!r}") from None


class LabelEncoder:
    """Alphabetical integer codes for activity labels."""

    def __init__(self, vocabulary: Iterable = Activity):
        acts = {_as_activity(v) for v in vocabulary}
        self.classes_ = sorted(acts, key=lambda a: a.value)
        self._codes = {a: i for i, a in enumerate(self.classes_)}

    def __len__(self):
        return len(self.classes_)

    def encode(self, labels: Iterable) -> np.ndarray:
        out = []
        for lab in labels:
            act = _as_activity(lab)
            if act not in self._codes:
                raise UnknownLabel(f"label {act.value!r} not in the fitted vocabulary")
            out.append(self._codes[act])
        return np.array(out, dtype=np.int64)

    def decode(self, codes: Iterable[int]) -> list[Activity]:
        return [self.classes_[int(c)] for c in codes]


ACTIVITY_CODES = LabelEncoder()
N_CLASSES = len(ACTIVITY_CODES)


def encode_labels(labels: Sequence, vocabulary: Iterable | None = None) -> np.ndarray:
    """Encode labels to 0..n-1, codes assigned alphabetically over the observed labels.

    Pass ``vocabulary`` to fix the code table (e.g. the full 7-class set).
    """
    labels = list(labels)
    enc = LabelEncoder(labels if vocabulary is None else vocabulary)
    return enc.encode(labels)


def annotation_codes(annotations: Sequence[ActivityAnnotation]) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([a.t for a in annotations], dtype=np.float64)
    return t, ACTIVITY_CODES.encode(a.label for a in annotations)


def mode_codes(ann_t: np.ndarray, codes: np.ndarray, starts: np.ndarray, ends: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Most frequent code among annotations overlapping each [start, end).

    Annotation i is taken to cover [t_i, t_{i+1}) (the last one covers one
    second).  Ties go to the lowest code.
    """
    starts = np.atleast_1d(np.asarray(starts, dtype=np.float64))
    ends = np.atleast_1d(np.asarray(ends, dtype=np.float64))
    cover_end = np.append(ann_t[1:], ann_t[-1] + 1.0) if len(ann_t) else ann_t
    first = np.searchsorted(cover_end, starts, side="right")
    last = np.searchsorted(ann_t, ends, side="left")  # exclusive
    if len(ann_t) == 0 or np.any(last <= first):
        raise EmptyWindow("label bin overlaps no annotation")
    onehot = np.zeros((len(codes) + 1, n_classes), dtype=np.int64)
    onehot[np.arange(1, len(codes) + 1), codes] = 1
    cum = np.cumsum(onehot, axis=0)
    counts = cum[last] - cum[first]
    return np.argmax(counts, axis=1)


def mode_label_bin(annotations: Sequence[ActivityAnnotation], start: float, end: float) -> int:
    """Code of the most frequent activity in [start, end); ties go to the lower code."""
    t, codes = annotation_codes(annotations)
    return int(mode_codes(t, codes, [start], [end])[0])


# ---------------------------------------------------------------------------
# target smoothing


@dataclass(frozen=True)
class SmoothedTarget:
    starts: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    bin_width: float = TARGET_BIN_SEC

    @property
    def bins(self) -> list[tuple[float, float]]:
        return list(zip(self.starts.tolist(), self.values.tolist()))

    @property
    def midpoints(self) -> np.ndarray:
        return self.starts + self.bin_width / 2

    def __len__(self):
        return len(self.starts)


def smooth_target(breaths: Sequence[BreathRecord], bin_width: float = TARGET_BIN_SEC) -> SmoothedTarget:
    """Mean EEm per fixed bin aligned to the recording epoch; empty bins are omitted."""
    t = np.array([b.t for b in breaths], dtype=np.float64)
    eem = np.array([b.eem for b in breaths], dtype=np.float64)
    if len(t) == 0:
        empty = np.zeros(0)
        return SmoothedTarget(empty, empty, np.zeros(0, dtype=np.int64), bin_width)
    k = np.floor(t / bin_width).astype(np.int64)
    uniq, inverse, counts = np.unique(k, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=eem)
    return SmoothedTarget(uniq * bin_width, sums / counts, counts, bin_width)
