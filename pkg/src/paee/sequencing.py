"""Fixed-size accelerometer sequences ending at each target time.

Channel layout of ``TrainingExample.accel`` is fixed as
``[wrist x, wrist y, wrist z, ankle x, ankle y, ankle z]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .data import Recording, STATIC_FEATURES
from .errors import ConfigError, EmptyWindow, NonIntegralBinCount, NonPositiveInput, StaticBranchMissing
from .preprocess import (
    N_CLASSES,
    AggregationFn,
    NormStats,
    _resample_arrays,
    annotation_codes,
    bin_count,
    mode_codes,
    smooth_target,
    znorm_apply,
    znorm_fit,
)

logger = logging.getLogger(__name__)

PAPER_SEQ_SIZES = (4, 10, 50, 160, 240, 360, 480)
PAPER_WINDOWS_SEC = (60.0, 120.0, 240.0, 480.0)
ACCEL_CHANNELS = ("wrist_x", "wrist_y", "wrist_z", "ankle_x", "ankle_y", "ankle_z")


def derive_sr(seq_size: float, window_sec: float) -> float:
    """Sampling rate implied by fitting ``seq_size`` inputs into ``window_sec`` seconds."""
    if not seq_size > 0 or not window_sec > 0:
        raise NonPositiveInput(f"seq_size={seq_size}, window_sec={window_sec}")
    return seq_size / window_sec


@dataclass(frozen=True)
class SequenceSpec:
    seq_size: int
    window_sec: float
    agg: AggregationFn = AggregationFn.SD
    use_static: bool = False
    use_labels: bool = False
    onehot_labels: bool = False
    paper_sweep: bool = False

    def __post_init__(self):
        object.__setattr__(self, "agg", AggregationFn(self.agg))
        derive_sr(self.seq_size, self.window_sec)
        if int(self.seq_size) != self.seq_size:
            raise NonIntegralBinCount(f"seq_size={self.seq_size} is not an integer")
        object.__setattr__(self, "seq_size", int(self.seq_size))
        object.__setattr__(self, "window_sec", float(self.window_sec))
        if self.paper_sweep and (self.seq_size not in PAPER_SEQ_SIZES or self.window_sec not in PAPER_WINDOWS_SEC):
            raise ConfigError(f"({self.seq_size}, {self.window_sec} s) is not on the standard sweep grid")

    @property
    def sr(self) -> float:
        return derive_sr(self.seq_size, self.window_sec)

    @property
    def n_label_channels(self) -> int:
        if not self.use_labels:
            return 0
        return N_CLASSES if self.onehot_labels else 1

    @property
    def input_dim(self) -> int:
        return len(ACCEL_CHANNELS) + self.n_label_channels

    @property
    def name(self) -> str:
        return f"{self.agg.value}_seq{self.seq_size}_win{self.window_sec:g}"

    def without_variant(self) -> "SequenceSpec":
        return replace(self, use_static=False, use_labels=False, onehot_labels=False)


def paper_grid(agg: AggregationFn = AggregationFn.SD, **kw) -> list[SequenceSpec]:
    """All 7 x 4 sequence size / window combinations, for one aggregation function."""
    return [SequenceSpec(s, w, agg, paper_sweep=True, **kw) for s in PAPER_SEQ_SIZES for w in PAPER_WINDOWS_SEC]


@dataclass(frozen=True, eq=False)
class TrainingExample:
    accel: np.ndarray  # (seq_size, 6)
    target: float  # kcal/min
    subject: str
    t: float
    outdoor: bool | None = None
    labels: np.ndarray | None = None  # (seq_size,) integer codes
    static: np.ndarray | None = None  # (5,)

    def input_matrix(self, onehot: bool = False) -> np.ndarray:
        if self.labels is None:
            return self.accel
        if onehot:
            lab = np.eye(N_CLASSES)[self.labels]
        else:
            lab = self.labels[:, None].astype(np.float64)
        return np.concatenate([self.accel, lab], axis=1)


@dataclass
class BuildReport:
    emitted: int = 0
    dropped_history: int = 0
    dropped_gaps: int = 0


@dataclass(frozen=True)
class Normalizer:
    """Statistics fitted on a fold's training examples, reused for validation and test."""

    accel: NormStats
    target: NormStats
    static: NormStats | None = None

    def apply(self, examples: Sequence[TrainingExample]) -> list[TrainingExample]:
        out = []
        for ex in examples:
            static = None
            if ex.static is not None:
                if self.static is None:
                    raise StaticBranchMissing("examples carry static features but no static statistics were fitted")
                static = znorm_apply(ex.static, self.static)
            out.append(replace(ex, accel=znorm_apply(ex.accel, self.accel), static=static))
        return out

    def to_dict(self) -> dict:
        out = {}
        for name in ("accel", "target", "static"):
            st = getattr(self, name)
            if st is not None:
                out[name] = {"mean": st.mean.tolist(), "std": st.std.tolist()}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        mk = lambda k: NormStats(d[k]["mean"], d[k]["std"]) if k in d else None
        return cls(mk("accel"), mk("target"), mk("static"))


def fit_normalizer(train_examples: Sequence[TrainingExample]) -> Normalizer:
    """Fit accelerometer, static and target statistics on unnormalised training examples."""
    accel = znorm_fit(np.concatenate([ex.accel for ex in train_examples], axis=0))
    target = znorm_fit(np.array([ex.target for ex in train_examples]))
    static = None
    if train_examples[0].static is not None:
        static = znorm_fit(np.stack([ex.static for ex in train_examples]))
    return Normalizer(accel, target, static)


def _check_recording(rec: Recording, spec: SequenceSpec):
    if spec.use_static and rec.profile is None:
        raise StaticBranchMissing(f"recording {rec.id} has no participant profile")
    if spec.use_labels and not rec.has_annotations:
        raise ConfigError(f"recording {rec.id} has no activity annotations; label variants need them")


def _build(rec: Recording, spec: SequenceSpec, times: np.ndarray, targets: np.ndarray, norm: Normalizer | None, report: BuildReport | None):
    _check_recording(rec, spec)
    report = report if report is not None else BuildReport()
    n = bin_count(spec.sr, 0.0, spec.window_sec)
    start, end = rec.start, rec.end
    static = rec.profile.static_vector() if spec.use_static else None
    if static is not None and norm is not None:
        if norm.static is None:
            raise StaticBranchMissing("normalizer was fitted without static features")
        static = znorm_apply(static, norm.static)
    if spec.use_labels:
        ann_t, ann_codes = annotation_codes(rec.annotations)
    outdoor = rec.outdoor_at(times)
    examples = []
    for i, (t, y) in enumerate(zip(times.tolist(), targets.tolist())):
        t0 = t - spec.window_sec
        if t0 < start or t > end:
            report.dropped_history += 1
            continue
        try:
            w = _resample_arrays(rec.wrist.t, rec.wrist.xyz, t0, t, n, spec.agg)
            a = _resample_arrays(rec.ankle.t, rec.ankle.xyz, t0, t, n, spec.agg)
            labels = None
            if spec.use_labels:
                edges = t0 + spec.window_sec * (np.arange(n + 1) / n)
                labels = mode_codes(ann_t, ann_codes, edges[:-1], edges[1:])
        except EmptyWindow:
            report.dropped_gaps += 1
            continue
        accel = np.concatenate([w, a], axis=1)
        if norm is not None:
            accel = znorm_apply(accel, norm.accel)
        examples.append(
            TrainingExample(
                accel=accel,
                target=y,
                subject=rec.id,
                t=t,
                outdoor=None if outdoor is None else bool(outdoor[i]),
                labels=labels,
                static=static,
            )
        )
    report.emitted += len(examples)
    if report.dropped_history or report.dropped_gaps:
        logger.debug("%s: dropped %d targets without full history, %d with data gaps", rec.id, report.dropped_history, report.dropped_gaps)
    return examples


def build_training_set(rec: Recording, spec: SequenceSpec, norm: Normalizer | None = None, report: BuildReport | None = None) -> list[TrainingExample]:
    """One example per 10 s target bin, timestamped at the bin midpoint.

    Targets whose window [t - window_sec, t) is not fully inside the
    recording are dropped and counted in ``report``.  Pass ``norm=None`` to
    get unnormalised values (for fitting statistics).
    """
    sm = smooth_target(rec.breaths)
    return _build(rec, spec, sm.midpoints, sm.values, norm, report)


def build_eval_set(rec: Recording, spec: SequenceSpec, norm: Normalizer | None = None, report: BuildReport | None = None) -> list[TrainingExample]:
    """One example per breath, targeting that breath's EEm."""
    return _build(rec, spec, rec.breath_t, rec.breath_eem, norm, report)


def build_at_times(rec: Recording, spec: SequenceSpec, times, norm: Normalizer | None = None, report: BuildReport | None = None) -> list[TrainingExample]:
    """Examples ending at arbitrary ``times`` with no target (NaN), for prediction."""
    times = np.asarray(times, dtype=np.float64)
    return _build(rec, spec, times, np.full(len(times), np.nan), norm, report)


@dataclass
class Batch:
    x: np.ndarray  # (n, seq, channels)
    y: np.ndarray  # (n,)
    static: np.ndarray | None = None
    t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    outdoor: np.ndarray | None = None
    subjects: tuple = ()

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Batch":
        return Batch(
            self.x[idx],
            self.y[idx],
            None if self.static is None else self.static[idx],
            self.t[idx] if len(self.t) else self.t,
            None if self.outdoor is None else self.outdoor[idx],
            tuple(np.asarray(self.subjects, dtype=object)[idx]) if self.subjects else (),
        )


def stack_examples(examples: Sequence[TrainingExample], onehot_labels: bool = False) -> Batch:
    if not examples:
        raise ValueError("no examples to stack")
    x = np.stack([ex.input_matrix(onehot_labels) for ex in examples])
    static = None
    if examples[0].static is not None:
        static = np.stack([ex.static for ex in examples])
    outdoor = None
    if all(ex.outdoor is not None for ex in examples):
        outdoor = np.array([ex.outdoor for ex in examples], dtype=bool)
    return Batch(
        x=x,
        y=np.array([ex.target for ex in examples], dtype=np.float64),
        static=static,
        t=np.array([ex.t for ex in examples], dtype=np.float64),
        outdoor=outdoor,
        subjects=tuple(ex.subject for ex in examples),
    )


__all__ = [
    "ACCEL_CHANNELS",
    "PAPER_SEQ_SIZES",
    "PAPER_WINDOWS_SEC",
    "STATIC_FEATURES",
    "Batch",
    "BuildReport",
    "Normalizer",
    "SequenceSpec",
    "TrainingExample",
    "build_at_times",
    "build_eval_set",
    "build_training_set",
    "derive_sr",
    "fit_normalizer",
    "paper_grid",
    "stack_examples",
]
