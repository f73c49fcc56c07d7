"""Leave-one-subject-out evaluation, metrics, window aggregation and significance tests."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .data import Recording
from .errors import (
    ConfigError,
    DegenerateDifferences,
    DivergedFold,
    InsufficientSubjects,
    LengthMismatch,
    ZeroVariance,
)
from .nn import ModelConfig, HybridModel, init_params, predict
from .optim import History, TrainConfig, train
from .preprocess import NormStats, znorm_apply, znorm_invert
from .sequencing import (
    Batch,
    Normalizer,
    SequenceSpec,
    TrainingExample,
    build_eval_set,
    build_training_set,
    fit_normalizer,
    stack_examples,
)

logger = logging.getLogger(__name__)

# evaluation windows in seconds; None means per breath
EVAL_WINDOWS = (None, 10.0, 30.0, 60.0, 300.0, 3600.0)


def window_label(window: float | None) -> str:
    if window is None:
        return "breath"
    if window >= 60 and window % 60 == 0:
        return f"{int(window // 60)}min"
    return f"{window:g}s"


class ModelVariant(enum.Enum):
    GA = "GA"
    GA_ID = "GA_ID"
    GA_AC = "GA_AC"
    GA_ID_AC = "GA_ID_AC"

    @property
    def use_static(self) -> bool:
        return "ID" in self.value

    @property
    def use_labels(self) -> bool:
        return self.value.endswith("AC")

    def apply(self, spec: SequenceSpec) -> SequenceSpec:
        return replace(spec, use_static=self.use_static, use_labels=self.use_labels)


# ---------------------------------------------------------------------------
# metrics


def _pair(true, pred):
    t = np.asarray(true, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise LengthMismatch(f"true has shape {t.shape}, pred has shape {p.shape}")
    if len(t) == 0:
        raise LengthMismatch("empty series")
    return t, p


def rmse(true, pred) -> float:
    t, p = _pair(true, pred)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def r2(true, pred) -> float:
    t, p = _pair(true, pred)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if not ss_tot > 0:
        raise ZeroVariance("R^2 undefined for a constant target")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def aggregate_eval(times, true, pred, window: float | None):
    """Mean-aggregate aligned true/pred series into epoch-aligned bins of ``window`` seconds.

    Returns (bin_starts, true_agg, pred_agg).  ``window=None`` is the identity.
    Bins where either series has no finite value are dropped from both.
    """
    times = np.asarray(times, dtype=np.float64)
    t, p = _pair(true, pred)
    if len(times) != len(t):
        raise LengthMismatch("times and values differ in length")
    if window is None:
        return times, t, p
    k = np.floor(times / window).astype(np.int64)
    order = np.argsort(k, kind="stable")
    uniq, starts = np.unique(k[order], return_index=True)
    bounds = np.r_[starts, len(k)].tolist()

    def bin_means(v):
        # correctly rounded sums, so bin means do not depend on summation order
        out = np.full(len(uniq), np.nan)
        for i, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
            vals = v[order[a:b]]
            vals = vals[np.isfinite(vals)]
            if len(vals):
                out[i] = math.fsum(vals.tolist()) / len(vals)
        return out

    m_t, m_p = bin_means(t), bin_means(p)
    keep = np.isfinite(m_t) & np.isfinite(m_p)
    return uniq[keep] * window, m_t[keep], m_p[keep]


def paired_t_test(a, b) -> tuple[float, float]:
    """Paired t statistic of a - b and its two-sided p-value (n - 1 degrees of freedom)."""
    a, b = _pair(a, b)
    n = len(a)
    if n < 2:
        raise LengthMismatch("paired t-test needs at least two pairs")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if not sd > 0:
        raise DegenerateDifferences("differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), df=n - 1))
    return t, p


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldSpec:
    test_subject: str
    validation_subjects: tuple
    train_subjects: tuple

    def __post_init__(self):
        v, tr = set(self.validation_subjects), set(self.train_subjects)
        if len(self.validation_subjects) != 2 or self.test_subject in v | tr or v & tr:
            raise ValueError(f"fold sets overlap: {self}")


def _subject_info(subjects) -> list[tuple[str, bool]]:
    out = []
    for s in subjects:
        if isinstance(s, Recording):
            has_out = s.profile.has_outdoor if s.profile is not None else bool(np.any(s.outdoor_at(s.breath_t))) if s.has_annotations else False
            out.append((s.id, bool(has_out)))
        else:
            sid, has_out = s
            out.append((str(sid), bool(has_out)))
    return out


def loso_folds(subjects, seed: int = 0) -> list[FoldSpec]:
    """One fold per subject with a seeded validation pair (one indoor-only, one with outdoor data).

    ``subjects`` are Recordings or (id, has_outdoor) pairs.  The pair for a
    given test subject depends only on the seed and the subject list, so
    every model variant sees the same folds.
    """
    info = _subject_info(subjects)
    ids = [s for s, _ in info]
    if len(set(ids)) != len(ids):
        raise InsufficientSubjects("duplicate subject ids")
    if len(info) < 4:
        raise InsufficientSubjects(f"{len(info)} subjects; leave-one-subject-out needs at least 4")
    folds = []
    for i, (test, _) in enumerate(info):
        rest = [(s, o) for s, o in info if s != test]
        indoor = [s for s, o in rest if not o]
        outdoor = [s for s, o in rest if o]
        if not indoor or not outdoor:
            raise InsufficientSubjects(f"fold {test}: need one indoor-only and one outdoor subject for validation")
        rng = np.random.default_rng([seed, i])
        val = (indoor[rng.integers(len(indoor))], outdoor[rng.integers(len(outdoor))])
        train_ids = tuple(s for s, _ in rest if s not in val)
        folds.append(FoldSpec(test, val, train_ids))
    return folds


# ---------------------------------------------------------------------------
# reports


METRIC_FIELDS = ("rmse", "r2", "in_rmse", "in_r2", "out_rmse", "out_r2")


@dataclass
class WindowMetrics:
    n: int
    rmse: float
    r2: float
    in_rmse: float = math.nan
    in_r2: float = math.nan
    out_rmse: float = math.nan
    out_r2: float = math.nan


def _safe_metrics(t, p):
    if len(t) == 0:
        return math.nan, math.nan
    e = rmse(t, p)
    try:
        return e, r2(t, p)
    except ZeroVariance:
        return e, math.nan


def window_metrics(times, true, pred, outdoor, window) -> WindowMetrics:
    _, ta, pa = aggregate_eval(times, true, pred, window)
    m = WindowMetrics(len(ta), *_safe_metrics(ta, pa))
    if outdoor is not None:
        for flag, prefix in ((False, "in"), (True, "out")):
            sel = outdoor == flag
            if sel.any():
                _, ts, ps = aggregate_eval(times[sel], true[sel], pred[sel], window)
                e, r = _safe_metrics(ts, ps)
                setattr(m, f"{prefix}_rmse", e)
                setattr(m, f"{prefix}_r2", r)
    return m


@dataclass
class FoldReport:
    subject: str
    windows: dict  # label -> WindowMetrics
    best_epoch: int = -1
    train_stats_digest: str = ""

    @property
    def rmse(self):
        return self.windows["breath"].rmse

    @property
    def r2(self):
        return self.windows["breath"].r2

    def __getattr__(self, name):
        if name in METRIC_FIELDS[2:]:
            return getattr(self.windows["breath"], name)
        raise AttributeError(name)


def fold_report(subject, batch: Batch, pred: np.ndarray, windows=EVAL_WINDOWS, **kw) -> FoldReport:
    return FoldReport(
        subject,
        {window_label(w): window_metrics(batch.t, batch.y, pred, batch.outdoor, w) for w in windows},
        **kw,
    )


def median_summary(reports: Sequence[FoldReport], window: str = "breath") -> dict[str, float]:
    out = {}
    for f in METRIC_FIELDS:
        vals = np.array([getattr(r.windows[window], f) for r in reports], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        out[f] = float(np.median(vals)) if len(vals) else math.nan
    return out


# ---------------------------------------------------------------------------
# fold execution


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything except the data needed to run one fold."""

    spec: SequenceSpec
    model: ModelConfig
    train: TrainConfig
    windows: tuple = EVAL_WINDOWS

    @property
    def variant(self) -> ModelVariant:
        return ModelVariant("GA" + ("_ID" if self.spec.use_static else "") + ("_AC" if self.spec.use_labels else ""))

    @property
    def name(self) -> str:
        return f"{self.spec.name}_{self.variant.value}"


def model_config_for(spec: SequenceSpec, base: ModelConfig) -> ModelConfig:
    from .data import STATIC_FEATURES

    return replace(base, input_dim=spec.input_dim, static_dim=len(STATIC_FEATURES) if spec.use_static else 0)


def stats_digest(norm: Normalizer) -> str:
    h = hashlib.sha256()
    for s in (norm.accel, norm.target, norm.static):
        if s is not None:
            h.update(np.ascontiguousarray(s.mean, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(s.std, dtype="<f8").tobytes())
    return h.hexdigest()


def prepare_fold(train_sets: dict, val_sets: dict, test_set, spec: SequenceSpec):
    """Fit statistics on training subjects only and return normalised batches."""
    train_examples = [ex for sid in sorted(train_sets) for ex in train_sets[sid]]
    if not train_examples:
        raise InsufficientSubjects("fold has no training examples")
    norm = fit_normalizer(train_examples)
    tr = stack_examples(norm.apply(train_examples), spec.onehot_labels)
    tr.y = znorm_apply(tr.y, norm.target)
    val_examples = [ex for sid in sorted(val_sets) for ex in val_sets[sid]]
    va = None
    if val_examples:
        va = stack_examples(norm.apply(val_examples), spec.onehot_labels)
        va.y = znorm_apply(va.y, norm.target)
    te = stack_examples(norm.apply(test_set), spec.onehot_labels) if test_set else None
    return norm, tr, va, te


@dataclass
class FoldResult:
    report: FoldReport
    history: History
    model: HybridModel | None = None
    norm: Normalizer | None = None


def fit_fold(train_sets, val_sets, spec: SequenceSpec, model_cfg: ModelConfig, cfg: TrainConfig, seed):
    """Normalise, initialise and train one model; returns (model, normalizer, history)."""
    norm, tr, va, _ = prepare_fold(train_sets, val_sets, None, spec)
    model = init_params(model_config_for(spec, model_cfg), seed)
    model, hist = train(model, tr, va, replace(cfg, seed=int(np.random.SeedSequence(seed).generate_state(1)[0])))
    return model, norm, hist


def predict_eem(model: HybridModel, norm: Normalizer, examples: Sequence[TrainingExample], onehot: bool = False):
    batch = stack_examples(norm.apply(examples), onehot)
    return batch, znorm_invert(predict(model, batch), norm.target)


def run_fold(fold: FoldSpec, raw_train: dict, raw_eval: dict, exp: ExperimentConfig, seed, keep_model=False) -> FoldResult:
    """Train on the fold's training subjects, select on validation, evaluate on the held-out subject.

    ``raw_train`` maps subject -> unnormalised 10 s-bin examples, ``raw_eval``
    subject -> unnormalised per-breath examples.
    """
    with threadpool_limits(1):
        model, norm, hist = fit_fold(
            {s: raw_train[s] for s in fold.train_subjects},
            {s: raw_eval[s] for s in fold.validation_subjects},
            exp.spec,
            exp.model,
            exp.train,
            seed,
        )
        batch, pred = predict_eem(model, norm, raw_eval[fold.test_subject], exp.spec.onehot_labels)
    if not np.all(np.isfinite(pred)):
        raise DivergedFold(f"fold {fold.test_subject}: non-finite predictions")
    report = fold_report(fold.test_subject, batch, pred, exp.windows, best_epoch=hist.best_epoch, train_stats_digest=stats_digest(norm))
    return FoldResult(report, hist, model if keep_model else None, norm if keep_model else None)


def build_examples(recordings: Sequence[Recording], spec: SequenceSpec):
    """Unnormalised training (10 s bins) and evaluation (per breath) examples per subject."""
    raw_train, raw_eval = {}, {}
    for rec in recordings:
        raw_train[rec.id] = build_training_set(rec, spec)
        raw_eval[rec.id] = build_eval_set(rec, spec)
    return raw_train, raw_eval


def validation_pair(subjects, seed: int = 0) -> tuple[str, str]:
    """Seeded (indoor-only, outdoor) validation pair for training on a whole dataset."""
    info = _subject_info(subjects)
    indoor = [s for s, o in info if not o]
    outdoor = [s for s, o in info if o]
    if not indoor or not outdoor or len(info) < 3:
        raise InsufficientSubjects("need an indoor-only subject, an outdoor subject and at least one more to train on")
    rng = np.random.default_rng([seed, len(info)])
    return indoor[rng.integers(len(indoor))], outdoor[rng.integers(len(outdoor))]


def train_on_dataset(recordings: Sequence[Recording], exp: ExperimentConfig, seed: int = 0):
    """Train one model on every subject except a seeded validation pair.

    Returns (model, normalizer, history, validation subject ids).
    """
    recordings = sorted(recordings, key=lambda r: r.id)
    val = validation_pair(recordings, seed)
    raw_train, raw_eval = build_examples(recordings, exp.spec)
    with threadpool_limits(1):
        model, norm, hist = fit_fold(
            {s: raw_train[s] for s in raw_train if s not in val},
            {s: raw_eval[s] for s in val},
            exp.spec,
            exp.model,
            exp.train,
            [int(seed), len(recordings)],
        )
    return model, norm, hist, val


def _fold_seed(seed: int, fold_index: int):
    # independent of the configuration, so paired comparisons share initialisation seeds
    return [int(seed), int(fold_index)]


def _run_task(args):
    fold, raw_train, raw_eval, exp, seed = args
    return run_fold(fold, raw_train, raw_eval, exp, seed)


def run_loso(recordings: Sequence[Recording], exp: ExperimentConfig, seed: int = 0, workers: int = 1, folds=None) -> list[FoldResult]:
    """Leave-one-subject-out over ``recordings``; results ordered by subject id."""
    if exp.spec.use_labels and not all(r.has_annotations for r in recordings):
        raise ConfigError(f"{exp.variant.value} needs activity annotations for every subject")
    folds = folds if folds is not None else loso_folds(recordings, seed)
    raw_train, raw_eval = build_examples(recordings, exp.spec)
    index = {r.id: i for i, r in enumerate(recordings)}
    tasks = []
    for fold in folds:
        needed = set(fold.train_subjects) | set(fold.validation_subjects) | {fold.test_subject}
        tasks.append(
            (
                fold,
                {s: raw_train[s] for s in needed},
                {s: raw_eval[s] for s in needed},
                exp,
                _fold_seed(seed, index[fold.test_subject]),
            )
        )
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    return sorted(results, key=lambda r: r.report.subject)


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ConfigResult:
    index: int
    exp: ExperimentConfig
    folds: list  # FoldReport, ordered by subject

    def summary(self, window="breath"):
        return median_summary(self.folds, window)

    def per_subject(self, metric="r2", window="breath") -> np.ndarray:
        return np.array([getattr(f.windows[window], metric) for f in self.folds])


@dataclass
class ExperimentReport:
    configs: list  # ConfigResult
    diverged: list = field(default_factory=list)

    def rows(self):
        for c in self.configs:
            for f in c.folds:
                for label, m in f.windows.items():
                    yield {
                        "config": c.exp.name,
                        "variant": c.exp.variant.value,
                        "agg": c.exp.spec.agg.value,
                        "seq_size": c.exp.spec.seq_size,
                        "window_sec": c.exp.spec.window_sec,
                        "sr_hz": c.exp.spec.sr,
                        "subject": f.subject,
                        "eval_window": label,
                        "n": m.n,
                        **{k: getattr(m, k) for k in METRIC_FIELDS},
                    }

    def t_tests(self, metric="r2", window="breath", baseline: int = 0):
        """Paired t-tests of every configuration against the baseline, on per-subject values."""
        base = self.configs[baseline]
        out = []
        for c in self.configs:
            if c is base:
                out.append((c, math.nan, math.nan))
                continue
            a, b = c.per_subject(metric, window), base.per_subject(metric, window)
            ok = np.isfinite(a) & np.isfinite(b)
            try:
                t, p = paired_t_test(a[ok], b[ok])
            except (DegenerateDifferences, LengthMismatch):
                t, p = math.nan, math.nan
            out.append((c, t, p))
        return out

    def pairwise_t_tests(self, metric="r2", window="breath"):
        out = []
        for i, a in enumerate(self.configs):
            for b in self.configs[i + 1 :]:
                x, y = a.per_subject(metric, window), b.per_subject(metric, window)
                ok = np.isfinite(x) & np.isfinite(y)
                try:
                    t, p = paired_t_test(x[ok], y[ok])
                except (DegenerateDifferences, LengthMismatch):
                    t, p = math.nan, math.nan
                out.append((a.exp.name, b.exp.name, t, p))
        return out

    def write_csv(self, fh) -> None:
        rows = list(self.rows())
        fields = ["config", "variant", "agg", "seq_size", "window_sec", "sr_hz", "subject", "eval_window", "n", *METRIC_FIELDS]
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def write_ttests_csv(self, fh, metric="r2") -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config_a", "config_b", "metric", "t", "p"])
        for a, b, t, p in self.pairwise_t_tests(metric):
            w.writerow([a, b, metric, repr(t), repr(p)])

    def summary_table(self) -> str:
        """Fixed-width comparison table: median metrics per configuration, p-value vs the first row."""
        buf = io.StringIO()
        head = f"{'config':<32} {'SR(Hz)':>7} {'R2':>6} {'inR2':>6} {'outR2':>6} {'RMSE':>6} {'inRMSE':>7} {'outRMSE':>8} {'p-value':>9}"
        buf.write(head + "\n" + "-" * len(head) + "\n")
        for c, t, p in self.t_tests():
            s = c.summary()
            ptxt = "-" if math.isnan(p) else (f"{p:.2f}" if p >= 0.01 else "<0.01") + ("*" if p < 0.05 else "")
            buf.write(
                f"{c.exp.name:<32} {c.exp.spec.sr:>7.2f} {s['r2']:>6.2f} {s['in_r2']:>6.2f} {s['out_r2']:>6.2f} "
                f"{s['rmse']:>6.2f} {s['in_rmse']:>7.2f} {s['out_rmse']:>8.2f} {ptxt:>9}\n"
            )
        return buf.getvalue()

    def window_table(self, config: int = 0) -> str:
        """Median metrics of one configuration over the evaluation windows."""
        c = self.configs[config]
        buf = io.StringIO()
        head = f"{'aggregation':<12} {'R2':>6} {'inR2':>6} {'outR2':>6} {'RMSE':>6} {'inRMSE':>7} {'outRMSE':>8}"
        buf.write(f"{c.exp.name}\n{head}\n{'-' * len(head)}\n")
        for w in c.exp.windows:
            s = c.summary(window_label(w))
            buf.write(
                f"{window_label(w):<12} {s['r2']:>6.2f} {s['in_r2']:>6.2f} {s['out_r2']:>6.2f} "
                f"{s['rmse']:>6.2f} {s['in_rmse']:>7.2f} {s['out_rmse']:>8.2f}\n"
            )
        return buf.getvalue()


def run_experiment(
    recordings: Sequence[Recording],
    specs: Sequence[SequenceSpec],
    variants: Sequence[ModelVariant],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int = 0,
    workers: int = 1,
    windows=EVAL_WINDOWS,
) -> ExperimentReport:
    """LOSO for every (spec, variant) pair; the validation pairs are shared by all of them."""
    if len(recordings) < 4:
        raise InsufficientSubjects(f"{len(recordings)} subjects; need at least 4")
    recordings = sorted(recordings, key=lambda r: r.id)
    folds = loso_folds(recordings, seed)
    configs, diverged = [], []
    index = 0
    for spec in specs:
        for variant in variants:
            exp = ExperimentConfig(variant.apply(spec), model_cfg, train_cfg, tuple(windows))
            try:
                results = run_loso(recordings, exp, seed, workers, folds)
            except DivergedFold as exc:
                logger.error("%s diverged: %s", exp.name, exc)
                diverged.append(exp.name)
                index += 1
                continue
            configs.append(ConfigResult(index, exp, [r.report for r in results]))
            index += 1
    return ExperimentReport(configs, diverged)
