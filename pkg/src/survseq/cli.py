"""Command-line pipeline: preprocess, train, cross-validate, evaluate,
synthesize.

Every run writes a JSON manifest recording the command, configuration,
SHA-256 hashes of all inputs, the seed, timestamps, and every output path,
so a run can be audited and reproduced. Exit codes are stable: 0 success,
1 usage error, 2 input error, 3 compatibility error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import synth as synth_mod
from .errors import (
    AllMasked,
    ConfigError,
    CorruptContainer,
    DegenerateFeature,
    DuplicateVisitTime,
    EmptyPatient,
    InconsistentLabel,
    InsufficientEvents,
    MissingColumn,
    NoComparablePairs,
    NoEvents,
    NonFiniteLoss,
    NoScoreableSubjects,
    NotScalarLoss,
    ParseFailure,
    SchemaMismatch,
    ShapeMismatch,
    SurvseqError,
    TooFewPatients,
    VersionMismatch,
)
from .config import load_kv, parse_kv
from .trainer import (
    TrainConfig,
    cross_validate,
    history_csv,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_COMPAT = 3
EXIT_NUMERIC = 4

_INPUT_ERRORS = (MissingColumn, ParseFailure, InconsistentLabel,
                 DuplicateVisitTime, DegenerateFeature, EmptyPatient,
                 ConfigError, CorruptContainer, TooFewPatients,
                 FileNotFoundError, IsADirectoryError, PermissionError)
_COMPAT_ERRORS = (SchemaMismatch, VersionMismatch)
_NUMERIC_ERRORS = (NonFiniteLoss, InsufficientEvents, NoEvents,
                   NoComparablePairs, NoScoreableSubjects, AllMasked,
                   NotScalarLoss, ShapeMismatch)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Run manifests
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class RunManifest:
    def __init__(self, command: str, config=None, seed=None):
        self.record = {
            "command": command,
            "argv": sys.argv[1:],
            "config": config,
            "seed": seed,
            "inputs": {},
            "outputs": [],
            "started": _now(),
            "finished": None,
        }

    def add_input(self, path) -> None:
        self.record["inputs"][str(path)] = _sha256(path)

    def add_output(self, path) -> None:
        self.record["outputs"].append(str(path))

    def write(self, path) -> None:
        self.record["finished"] = _now()
        self.add_output(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.record, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(path, allow_out_of_range: bool) -> TrainConfig:
    if path is None:
        config = TrainConfig()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            config = TrainConfig.from_kv(fh.read())
    config.validate(allow_out_of_range=allow_out_of_range)
    return config


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    manifest = RunManifest("preprocess")
    manifest.add_input(args.input)
    manifest.add_input(args.spec)
    spec = ds.load_feature_spec(args.spec)
    table = ds.parse_long_csv(args.input, spec)
    schema = ds.fit_schema(table, spec)
    v_max = args.max_visits or ds.default_max_visits(table)
    data = ds.assemble_sequences(table, schema, v_max)
    ds.save_dataset(data, args.out)
    manifest.add_output(args.out)

    durations = data.durations()
    events = data.events()
    pct_event = 100.0 * (events > 0).mean()
    print(f"patients: {len(data)}  visits: {len(table.rows)}  "
          f"max visits kept: {v_max}")
    print(f"features: {schema.n_num} numerical, {schema.n_cat} categorical "
          f"(encoded width {schema.encoded_width})")
    print(f"events: {pct_event:.2f}%  censored: {100 - pct_event:.2f}%")
    print(f"duration min/max/mean: {durations.min():g} / "
          f"{durations.max():g} / {durations.mean():g}")
    manifest.write(str(args.out) + ".manifest.json")
    return EXIT_OK


def cmd_train(args) -> int:
    outdir = _ensure_dir(args.out)
    config = _load_config(args.config, args.allow_out_of_range)
    manifest = RunManifest("train", config=parse_kv(config.to_kv()),
                           seed=config.seed)
    manifest.add_input(args.data)
    if args.config:
        manifest.add_input(args.config)
    data = ds.load_dataset(args.data)
    train_set, val_set = ds.split_dataset(data, 1.0 - args.val_fraction,
                                          seed=config.seed)
    trained = train(config, train_set, val_set)
    ckpt = os.path.join(outdir, "checkpoint.bin")
    save_checkpoint(trained, ckpt)
    manifest.add_output(ckpt)
    hist = os.path.join(outdir, "history.csv")
    with open(hist, "w", encoding="utf-8") as fh:
        fh.write(history_csv(trained.history))
    manifest.add_output(hist)
    if trained.history:
        last = trained.history[-1]
        best = min(r.val_loss for r in trained.history)
        print(f"trained {len(trained.history)} epochs; "
              f"final val loss {last.val_loss:.6f}; best {best:.6f}")
    else:
        print("max_epochs = 0; wrote the initialized model")
    print(f"checkpoint: {ckpt}")
    manifest.write(os.path.join(outdir, "manifest.json"))
    return EXIT_OK


def _parse_augment(arg, data):
    """--augment accepts a generator kv config, a pre-generated synthetic
    long CSV, or the word `default`."""
    if arg is None:
        return None, None
    if arg == "default":
        return synth_mod.GeneratorConfig(), None
    if str(arg).endswith(".csv"):
        spec = {f.name: ds.NUMERICAL for f in data.schema.numerical}
        spec.update({f.name: ds.CATEGORICAL for f in data.schema.categorical})
        table = ds.parse_long_csv(arg, spec)
        synthetic = ds.assemble_sequences(table, data.schema, data.v_max)
        return None, synthetic
    values = load_kv(arg)
    known = {"kind", "fraction", "jitter_scale", "duration_jitter", "seed"}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown generator keys: {', '.join(unknown)}")
    try:
        return synth_mod.GeneratorConfig(**values), None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_cv(args) -> int:
    outdir = _ensure_dir(args.out)
    config = _load_config(args.config, args.allow_out_of_range)
    manifest = RunManifest("cv", seed=config.seed)
    manifest.add_input(args.data)
    if args.config:
        manifest.add_input(args.config)
    data = ds.load_dataset(args.data)
    if args.last_visit_only:
        data = ds.last_visit_only(data)
    generator_config, synthetic = _parse_augment(args.augment, data)
    if args.augment and str(args.augment).endswith(".csv"):
        manifest.add_input(args.augment)

    result = cross_validate(config, data, folds=args.folds,
                            seed=config.seed)
    _write_cv_outputs(result, outdir, "cv", manifest)
    print("cross-validation (real training data)")
    print(result.format_table())

    if generator_config is not None or synthetic is not None:
        augmented = cross_validate(config, data, folds=args.folds,
                                   seed=config.seed,
                                   generator_config=generator_config,
                                   synthetic=synthetic)
        _write_cv_outputs(augmented, outdir, "cv_augmented", manifest)
        print("\ncross-validation (augmented training data)")
        print(augmented.format_table())
        comparison = _comparison_csv(result, augmented)
        comp_path = os.path.join(outdir, "comparison.csv")
        with open(comp_path, "w", encoding="utf-8") as fh:
            fh.write(comparison)
        manifest.add_output(comp_path)
        plot = _plot_comparison(result, augmented, outdir)
    else:
        plot = _plot_cv_bars(result, outdir)
    if plot:
        manifest.add_output(plot)
    manifest.write(os.path.join(outdir, "manifest.json"))
    return EXIT_OK


def _write_cv_outputs(result, outdir, stem, manifest) -> None:
    for i, report in enumerate(result.fold_reports):
        path = os.path.join(outdir, f"{stem}_fold{i}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        manifest.add_output(path)
    agg = os.path.join(outdir, f"{stem}_aggregate.csv")
    with open(agg, "w", encoding="utf-8") as fh:
        fh.write(result.aggregate_csv())
    manifest.add_output(agg)


def _comparison_csv(base, augmented) -> str:
    lines = ["event,quantile,c_td_real,c_td_augmented,delta"]
    base_rows = {(r.event, r.quantile): r for r in base.aggregate()}
    for r in augmented.aggregate():
        b = base_rows[(r.event, r.quantile)]
        lines.append(f"{r.event},{r.quantile:g},{b.c_td_mean:.10g},"
                     f"{r.c_td_mean:.10g},{r.c_td_mean - b.c_td_mean:.10g}")
    return "\n".join(lines) + "\n"


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _plot_cv_bars(result, outdir) -> str:
    plt = _pyplot()
    rows = result.aggregate()
    labels = [f"e{r.event} q{r.quantile:g}" for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = np.arange(len(rows))
    ax.bar(xs, [r.c_td_mean for r in rows],
           yerr=[r.c_td_std for r in rows], capsize=4, color="#4878d0")
    ax.set_xticks(xs, labels, rotation=30, ha="right")
    ax.set_ylabel("C_td (mean over folds)")
    ax.set_ylim(0, 1)
    ax.set_title("Cross-validated concordance")
    fig.tight_layout()
    path = os.path.join(outdir, "cv_ctd.svg")
    fig.savefig(path)
    plt.close(fig)
    return path


def _plot_comparison(base, augmented, outdir) -> str:
    plt = _pyplot()
    rows_b = base.aggregate()
    rows_a = augmented.aggregate()
    labels = [f"e{r.event} q{r.quantile:g}" for r in rows_b]
    xs = np.arange(len(rows_b))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(xs - width / 2, [r.c_td_mean for r in rows_b], width,
           yerr=[r.c_td_std for r in rows_b], capsize=3,
           label="real only", color="#4878d0")
    ax.bar(xs + width / 2, [r.c_td_mean for r in rows_a], width,
           yerr=[r.c_td_std for r in rows_a], capsize=3,
           label="augmented", color="#ee854a")
    ax.set_xticks(xs, labels, rotation=30, ha="right")
    ax.set_ylabel("C_td (mean over folds)")
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("Augmentation comparison")
    fig.tight_layout()
    path = os.path.join(outdir, "cv_comparison.svg")
    fig.savefig(path)
    plt.close(fig)
    return path


def cmd_evaluate(args) -> int:
    from .metrics import evaluate_model

    quantiles = tuple(float(q) for q in args.quantiles.split(","))
    manifest = RunManifest("evaluate")
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.data)
    trained = load_checkpoint(args.checkpoint)
    data = ds.load_dataset(args.data)
    report = evaluate_model(trained, data, quantiles)
    print(report.format_table())
    if args.out:
        outdir = _ensure_dir(args.out)
        path = os.path.join(outdir, "metrics.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        manifest.add_output(path)
        manifest.write(os.path.join(outdir, "manifest.json"))
    return EXIT_OK


def cmd_synth(args) -> int:
    outdir = _ensure_dir(args.out)
    manifest = RunManifest("synth", seed=args.seed)
    manifest.add_input(args.data)
    data = ds.load_dataset(args.data)

    if args.self_test:
        horizon = args.horizon or float(data.durations().max())
        report = synth_mod.optimism(data, data, horizon)
        print(f"self-test optimism (real vs real): {report.value:g}")
        manifest.write(os.path.join(outdir, "manifest.json"))
        return EXIT_OK

    config = synth_mod.GeneratorConfig(
        fraction=args.fraction, jitter_scale=args.jitter_scale,
        seed=args.seed)
    synthetic = synth_mod.generate(data, config)
    horizon = args.horizon or float(data.durations().max())
    report = synth_mod.optimism(data, synthetic, horizon)

    csv_path = os.path.join(outdir, "synthetic.csv")
    ds.write_long_csv(synthetic, csv_path)
    manifest.add_output(csv_path)
    spec_path = os.path.join(outdir, "synthetic_spec.json")
    ds.write_feature_spec(data.schema, spec_path)
    manifest.add_output(spec_path)
    opt_path = os.path.join(outdir, "optimism.csv")
    with open(opt_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    manifest.add_output(opt_path)
    plot = _plot_km_pair(report, outdir)
    manifest.add_output(plot)

    n_visits = sum(s.n_real for s in synthetic.sequences)
    print(f"synthetic patients: {len(synthetic)}  visits: {n_visits}")
    print(f"optimism vs real (horizon {horizon:g}): {report.value:.6g}")
    manifest.write(os.path.join(outdir, "manifest.json"))
    return EXIT_OK


def _plot_km_pair(report, outdir) -> str:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, curve, style in (("real", report.curve_real, "-"),
                               ("synthetic", report.curve_syn, "--")):
        times = np.concatenate(([0.0], curve.times))
        values = np.concatenate(([1.0], curve.values))
        ax.step(times, values, where="post", linestyle=style, label=name)
    ax.set_xlabel("time")
    ax.set_ylabel("survival probability")
    ax.set_ylim(0, 1.02)
    ax.legend()
    ax.set_title(f"Kaplan-Meier: real vs synthetic "
                 f"(optimism {report.value:.4g})")
    fig.tight_layout()
    path = os.path.join(outdir, "km_curves.svg")
    fig.savefig(path)
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="survseq",
                     description="Longitudinal survival modeling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="CSV -> dataset container")
    p.add_argument("--input", required=True, help="long-format visit CSV")
    p.add_argument("--spec", required=True,
                   help="JSON mapping feature column -> numerical|categorical")
    p.add_argument("--max-visits", type=int, default=None,
                   help="sequence length cap (default: 95th percentile)")
    p.add_argument("--out", required=True, help="output container path")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit a model on a dataset container")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--allow-out-of-range", action="store_true",
                   help="accept hyperparameters outside the standard ranges")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="K-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--augment", default=None,
                   help="generator config file, synthetic CSV, or 'default'")
    p.add_argument("--last-visit-only", action="store_true",
                   help="ablation: truncate every record to its final visit")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--allow-out-of-range", action="store_true")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--quantiles", default="0.25,0.5,0.75")
    p.add_argument("--out", default=None, help="optional run directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate synthetic patients")
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--jitter-scale", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=None,
                   help="optimism weighting horizon (default: max duration)")
    p.add_argument("--self-test", action="store_true",
                   help="compare the real data against itself")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _COMPAT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SurvseqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
