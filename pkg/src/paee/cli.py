"""Command-line entry point: synth, train, eval, sweep, predict.

Every setting is a key of :class:`RunConfig`.  Values are resolved in the
order defaults < ``--config`` file < ``PAEE_<KEY>`` environment variables <
command-line flags; each key ``foo_bar`` has exactly one flag ``--foo-bar``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import MetBand, load_dataset, load_recording, met_band, mets_from_eem, parse_participants_csv, write_dataset
from .errors import ConfigError, DivergedFold, InsufficientSubjects, PaeeError, StaticBranchMissing
from .evaluation import (
    EVAL_WINDOWS,
    ExperimentConfig,
    ModelVariant,
    aggregate_eval,
    fold_report,
    median_summary,
    predict_eem,
    run_experiment,
    train_on_dataset,
    window_label,
)
from .nn import ModelConfig, load_model, predict, save_model
from .optim import TrainConfig
from .preprocess import AggregationFn, znorm_invert
from .sequencing import (
    PAPER_SEQ_SIZES,
    PAPER_WINDOWS_SEC,
    Normalizer,
    SequenceSpec,
    build_at_times,
    build_eval_set,
    stack_examples,
)
from .synth import SynthConfig, generate_dataset

logger = logging.getLogger("paee")

ENV_PREFIX = "PAEE_"


def _ints(text):
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _words(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if str(text).strip().lower() in ("", "none") else int(text)


def _opt_path(text):
    return None if str(text).strip().lower() in ("", "none") else str(text)


@dataclass
class RunConfig:
    # paths and execution
    data: str = "data"
    out: str = "out"
    seed: int = 0
    workers: int = 0
    model: str | None = None
    recording: str | None = None
    # synthetic data
    subjects: int = 10
    indoor_only_fraction: float = 0.3
    duration_sec: int = 1500
    outdoor_sec: int = 600
    noise_sd: float = 0.4
    lag_tau: float = 20.0
    # sequences and variants
    agg: tuple = ("sd",)
    seq_size: tuple = (50,)
    window_sec: tuple = (120.0,)
    variant: tuple = ("GA_ID",)
    paper_grid: bool = False
    onehot_labels: bool = False
    # model
    gru_sizes: tuple = (32, 256, 32)
    static_hidden: int = 32
    head_sizes: tuple = (32, 16)
    dropout: float = 0.5
    # training
    epochs: int = 50
    batch_size: int = 512
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None
    # prediction
    window: str = "breath"


PARSERS = {
    "data": str, "out": str, "seed": int, "workers": int, "model": _opt_path, "recording": _opt_path,
    "subjects": int, "indoor_only_fraction": float, "duration_sec": int, "outdoor_sec": int,
    "noise_sd": float, "lag_tau": float,
    "agg": _words, "seq_size": _ints, "window_sec": _floats, "variant": _words,
    "paper_grid": _bool, "onehot_labels": _bool,
    "gru_sizes": _ints, "static_hidden": int, "head_sizes": _ints, "dropout": float,
    "epochs": int, "batch_size": int, "lr": float, "beta1": float, "beta2": float, "eps": float,
    "patience": _opt_int, "window": str,
}  # fmt: skip

HELP = {
    "data": "dataset directory (input of train/eval/sweep, output of synth)",
    "out": "output directory for models, logs and reports",
    "seed": "master seed for data generation, validation pairs and initialisation",
    "workers": "parallel fold workers; 0 means all available cores",
    "model": "saved model file (.npz) for eval/predict",
    "recording": "subject directory to predict on",
    "subjects": "number of synthetic subjects",
    "indoor_only_fraction": "fraction of synthetic subjects without outdoor data",
    "duration_sec": "indoor seconds per synthetic subject",
    "outdoor_sec": "outdoor seconds appended for subjects with outdoor data",
    "noise_sd": "breath-level EEm noise (kcal/min)",
    "lag_tau": "EEm lag time constant (s)",
    "agg": "aggregation function(s): mean, sd, iqr, pd (comma separated)",
    "seq_size": "sequence size(s), comma separated",
    "window_sec": "window length(s) in seconds, comma separated",
    "variant": "model variant(s): GA, GA_ID, GA_AC, GA_ID_AC (comma separated)",
    "paper_grid": "use the 7 sequence sizes x 4 windows grid instead of seq_size/window_sec",
    "onehot_labels": "one-hot activity channel instead of a single integer-code channel",
    "gru_sizes": "hidden sizes of the stacked GRU layers",
    "static_hidden": "width of the static-feature dense layer",
    "head_sizes": "hidden widths of the dense head (the output neuron is added)",
    "dropout": "dropout probability on GRU outputs",
    "epochs": "training epochs",
    "batch_size": "minibatch size",
    "lr": "Adam learning rate",
    "beta1": "Adam beta1",
    "beta2": "Adam beta2",
    "eps": "Adam epsilon",
    "patience": "early stop after this many epochs without validation improvement (none = off)",
    "window": "predict output resolution: 'breath' or a window length in seconds",
}

assert set(PARSERS) == set(HELP) == {f.name for f in fields(RunConfig)}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(file_values: dict, env: dict, flags: dict) -> RunConfig:
    raw = dict(file_values)
    for k, v in env.items():
        if k.startswith(ENV_PREFIX):
            key = k[len(ENV_PREFIX) :].lower()
            if key == "config":
                continue
            if key not in PARSERS:
                raise ConfigError(f"unknown environment override {k}")
            raw[key] = v
    raw.update(flags)
    values = {}
    for k, v in raw.items():
        try:
            values[k] = PARSERS[k](v) if isinstance(v, str) else v
        except ValueError as exc:
            raise ConfigError(f"{k}: {exc}") from None
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config -> library objects


def synth_config(cfg: RunConfig) -> SynthConfig:
    if cfg.subjects < 4:
        raise InsufficientSubjects(f"--subjects {cfg.subjects}: leave-one-subject-out needs at least 4")
    return SynthConfig(
        n_subjects=cfg.subjects,
        indoor_only_fraction=cfg.indoor_only_fraction,
        seed=cfg.seed,
        duration_sec=cfg.duration_sec,
        outdoor_sec=cfg.outdoor_sec,
        noise_sd=cfg.noise_sd,
        lag_tau=cfg.lag_tau,
    )


def model_config(cfg: RunConfig) -> ModelConfig:
    return ModelConfig(gru_sizes=cfg.gru_sizes, static_hidden=cfg.static_hidden, head_sizes=cfg.head_sizes, dropout=cfg.dropout)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.seed, cfg.patience)


def variants(cfg: RunConfig) -> list[ModelVariant]:
    try:
        return [ModelVariant(v.upper()) for v in cfg.variant]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def aggs(cfg: RunConfig) -> list[AggregationFn]:
    try:
        return [AggregationFn(a.lower()) for a in cfg.agg]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def sequence_specs(cfg: RunConfig) -> list[SequenceSpec]:
    sizes = PAPER_SEQ_SIZES if cfg.paper_grid else cfg.seq_size
    wins = PAPER_WINDOWS_SEC if cfg.paper_grid else cfg.window_sec
    return [
        SequenceSpec(s, w, a, onehot_labels=cfg.onehot_labels, paper_sweep=cfg.paper_grid)
        for a in aggs(cfg)
        for s in sizes
        for w in wins
    ]


def single_experiment(cfg: RunConfig) -> ExperimentConfig:
    specs, vs = sequence_specs(cfg), variants(cfg)
    if len(specs) != 1 or len(vs) != 1:
        raise ConfigError("train needs exactly one aggregation, sequence size, window and variant")
    spec = vs[0].apply(specs[0])
    return ExperimentConfig(spec, model_config(cfg), train_config(cfg))


def spec_to_dict(spec: SequenceSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["agg"] = spec.agg.value
    return d


def workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers > 0 else (os.cpu_count() or 1)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---------------------------------------------------------------------------
# commands


def met_band_hours(recordings) -> dict[MetBand, float]:
    """Hours per MET band, each breath weighted by the time to the next breath."""
    hours = {b: 0.0 for b in MetBand}
    for rec in recordings:
        if rec.profile is None or len(rec.breaths) < 2:
            continue
        t, eem = rec.breath_t, rec.breath_eem
        for dt, e in zip(np.diff(t).tolist(), eem[:-1].tolist()):
            hours[met_band(mets_from_eem(e, rec.profile.weight))] += dt / 3600.0
    return hours


def cmd_synth(cfg: RunConfig, out) -> int:
    recs = generate_dataset(synth_config(cfg))
    root = Path(cfg.data)
    write_dataset(root, recs)
    hours = met_band_hours(recs)
    n_out = sum(r.profile.has_outdoor for r in recs)
    out.write(f"wrote {len(recs)} subjects to {root} ({len(recs) - n_out} indoor-only, {n_out} with outdoor data)\n")
    out.write(f"{'MET band':<12} {'hours':>8}\n")
    for band, h in hours.items():
        out.write(f"{band.value:<12} {h:>8.2f}\n")
    out.write(f"{'total':<12} {sum(hours.values()):>8.2f}\n")
    return 0


def cmd_train(cfg: RunConfig, out) -> int:
    exp = single_experiment(cfg)
    recs = load_dataset(cfg.data)
    model, norm, hist, val = train_on_dataset(recs, exp, cfg.seed)
    dest = Path(cfg.out)
    dest.mkdir(parents=True, exist_ok=True)
    meta = {
        "spec": spec_to_dict(exp.spec),
        "variant": exp.variant.value,
        "normalizer": norm.to_dict(),
        "train": dataclasses.asdict(exp.train),
        "validation_subjects": list(val),
        "train_subjects": sorted(r.id for r in recs if r.id not in val),
    }
    save_model(dest / "model.npz", model, meta)
    hist.write_csv(dest / "training_log.csv")
    out.write(f"trained {exp.name} on {len(meta['train_subjects'])} subjects, validation {val[0]}/{val[1]}, best epoch {hist.best_epoch + 1}\n")
    out.write(f"model: {dest / 'model.npz'}\n")
    return 0


def _load_saved(path):
    model, meta = load_model(path)
    spec_d = dict(meta["spec"])
    spec = SequenceSpec(**spec_d)
    return model, spec, Normalizer.from_dict(meta["normalizer"]), meta


def _write_report_rows(path, label, reports):
    from .evaluation import METRIC_FIELDS

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "subject", "eval_window", "n", *METRIC_FIELDS])
        for r in reports:
            for win, m in r.windows.items():
                w.writerow([label, r.subject, win, m.n, *(_fmt(getattr(m, k)) for k in METRIC_FIELDS)])


def cmd_eval(cfg: RunConfig, out) -> int:
    """Evaluate a saved model per subject, or run leave-one-subject-out when no model is given."""
    dest = Path(cfg.out)
    dest.mkdir(parents=True, exist_ok=True)
    if cfg.model is None:
        return _run_sweep(cfg, out, dest)
    model, spec, norm, meta = _load_saved(cfg.model)
    recs = load_dataset(cfg.data)
    if spec.use_static and any(r.profile is None for r in recs):
        raise StaticBranchMissing(f"model {cfg.model} uses participant data but {cfg.data} has no participants.csv entry for every subject")
    seen = set(meta.get("train_subjects", [])) | set(meta.get("validation_subjects", []))
    reports = []
    for rec in recs:
        examples = build_eval_set(rec, spec)
        if not examples:
            continue
        batch, pred = predict_eem(model, norm, examples, spec.onehot_labels)
        reports.append(fold_report(rec.id, batch, pred))
    label = f"{spec.name}_{meta.get('variant', '')}"
    _write_report_rows(dest / "eval_report.csv", label, reports)
    out.write(f"{'subject':<10} {'R2':>6} {'RMSE':>6} {'seen':>5}\n")
    for r in reports:
        out.write(f"{r.subject:<10} {r.r2:>6.2f} {r.rmse:>6.2f} {'yes' if r.subject in seen else 'no':>5}\n")
    out.write(f"\n{'aggregation':<12} {'R2':>7} {'inR2':>7} {'outR2':>7} {'RMSE':>6}\n")
    for w in EVAL_WINDOWS:
        s = median_summary(reports, window_label(w))
        out.write(f"{window_label(w):<12} {s['r2']:>7.2f} {s['in_r2']:>7.2f} {s['out_r2']:>7.2f} {s['rmse']:>6.2f}\n")
    return 0


def _run_sweep(cfg: RunConfig, out, dest: Path) -> int:
    recs = load_dataset(cfg.data)
    report = run_experiment(recs, sequence_specs(cfg), variants(cfg), model_config(cfg), train_config(cfg), cfg.seed, workers(cfg))
    with open(dest / "report.csv", "w", newline="") as fh:
        report.write_csv(fh)
    with open(dest / "ttests.csv", "w", newline="") as fh:
        report.write_ttests_csv(fh)
    text = report.summary_table() + "\n" + "\n".join(report.window_table(i) for i in range(len(report.configs)))
    (dest / "summary.txt").write_text(text)
    out.write(report.summary_table())
    if report.diverged:
        out.write(f"diverged: {', '.join(report.diverged)}\n")
        raise DivergedFold(f"{len(report.diverged)} configuration(s) diverged")
    return 0


def cmd_sweep(cfg: RunConfig, out) -> int:
    dest = Path(cfg.out)
    dest.mkdir(parents=True, exist_ok=True)
    return _run_sweep(cfg, out, dest)


def _load_one(directory, use_static: bool):
    d = Path(directory)
    profile = None
    for cand in (d / "participants.csv", d.parent / "participants.csv"):
        if cand.exists():
            profile = parse_participants_csv(cand).get(d.name)
            break
    if use_static and profile is None:
        raise StaticBranchMissing(f"no participant profile for {d.name}")
    from .data import align_recording

    return align_recording(load_recording(d, profile, d.name))


def cmd_predict(cfg: RunConfig, out) -> int:
    if cfg.model is None or cfg.recording is None:
        raise ConfigError("predict needs --model and --recording")
    model, spec, norm, _ = _load_saved(cfg.model)
    rec = _load_one(cfg.recording, spec.use_static)
    dest = Path(cfg.out)
    dest.mkdir(parents=True, exist_ok=True)
    path = dest / f"predictions_{rec.id}.csv"
    if cfg.window.strip().lower() == "breath":
        examples = build_eval_set(rec, spec)
        batch, pred = predict_eem(model, norm, examples, spec.onehot_labels)
        rows = zip(batch.t.tolist(), pred.tolist(), batch.y.tolist())
        header = ["t", "eem_pred", "eem_measured"]
    else:
        window = float(cfg.window)
        # predictions on a 10 s grid, averaged per window
        grid = np.arange(spec.window_sec, rec.end + 1e-9, 10.0)
        examples = build_at_times(rec, spec, grid)
        batch = stack_examples(norm.apply(examples), spec.onehot_labels)
        pred = znorm_invert(predict(model, batch), norm.target)
        starts, _, p_agg = aggregate_eval(batch.t, pred, pred, window)
        ev = build_eval_set(rec, spec)
        measured = {}
        if ev:
            e_t = np.array([e.t for e in ev])
            e_y = np.array([e.target for e in ev])
            ms, m_agg, _ = aggregate_eval(e_t, e_y, e_y, window)
            measured = dict(zip(ms.tolist(), m_agg.tolist()))
        rows = [(s, p, measured.get(s, float("nan"))) for s, p in zip(starts.tolist(), p_agg.tolist())]
        header = ["window_start", "eem_pred", "eem_measured"]
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
            n += 1
    out.write(f"wrote {n} predictions to {path}\n")
    return 0


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic dataset in --data and print MET-band hours"),
    "train": (cmd_train, "train one model on a dataset (seeded validation pair held out)"),
    "eval": (cmd_eval, "evaluate a saved model per subject, or run leave-one-subject-out without --model"),
    "sweep": (cmd_sweep, "leave-one-subject-out over a grid of configurations and variants"),
    "predict": (cmd_predict, "predict EEm for one recording, per breath or per window"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="key = value config file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")
    defaults = RunConfig()
    for f in fields(RunConfig):
        d = getattr(defaults, f.name)
        if isinstance(d, tuple):
            d = ",".join(str(x) for x in d)
        common.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            metavar=f.name.upper(),
            default=argparse.SUPPRESS,
            help=f"{HELP[f.name]} (default: {d})",
        )
    parser = argparse.ArgumentParser(prog="paee", description=__doc__.split("\n\n")[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, desc) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=desc, description=desc + ". " + __doc__.split("\n\n")[1].replace("\n", " "))
    return parser


def main(argv=None, env=None, out=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    env = os.environ if env is None else env
    out = sys.stdout if out is None else out
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config_path = args.pop("config", None) or env.get(ENV_PREFIX + "CONFIG")
        file_values = read_config_file(config_path) if config_path else {}
        cfg = resolve_config(file_values, env, args)
        logger.info("resolved configuration:\n%s", format_config(cfg))
        if command != "synth":
            Path(cfg.out).mkdir(parents=True, exist_ok=True)
            (Path(cfg.out) / f"{command}_config.txt").write_text(format_config(cfg))
        return COMMANDS[command][0](cfg, out)
    except DivergedFold as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PaeeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
