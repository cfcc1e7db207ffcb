'''
@file: cli.py
@author: airside-tech

Command-line entry point.

    gen           write a synthetic PaySim-layout CSV
    build-graph   CSV -> windows -> subsample -> snapshots -> standardized store
    train         two-stage training of one variant, report on the test windows
    ablate        all five variants on shared splits, one CSV row each
    sweep         one run per value of K or d_k, one CSV row each
    baseline      logistic regression or MLP on node attributes only

Every command writes its resolved config.json into --out-dir before doing any work.
Exit codes: 0 success, 1 runtime failure, 2 usage error.

'''

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from joblib import Parallel, delayed

from baselines import BASELINE_MODELS, run_baseline
from errors import PipelineError
from evaluation import save_report, write_reports_csv
from graph import build_snapshots, standardize_features
from ingest import assign_windows, parse_transactions, stratified_subsample, transaction_vocabulary
from model import VARIANT_LABELS, VARIANTS
from settings import ResolvedConfig, load_config_file, max_jobs, resolve
from store import SnapshotStore, load_store, save_store
from synthgen import MOTIF_HOPS, REGIMES, generate
from trainer import TrainConfig, chronological_split, run_ablation

logger = logging.getLogger("stc_mixhop.cli")

SWEEP_PARAMS = {"K": "K", "dk": "d_k"}
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stc_mixhop", description="Spatio-temporal graph fraud screening pipeline")
    parser.add_argument("--seed", type=int, default=None, help="Global random seed")
    parser.add_argument("--config", "-c", default=None, help="YAML or JSON settings file")
    parser.add_argument("--out-dir", default="runs/latest", help="Run directory")
    parser.add_argument("--jobs", type=int, default=1, help="Parallel jobs for ablate/sweep")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true")
    verbosity.add_argument("--quiet", "-q", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a synthetic transaction CSV")
    gen.add_argument("--n-accounts", type=int)
    gen.add_argument("--n-windows", type=int)
    gen.add_argument("--tx-per-window", type=int)
    gen.add_argument("--fraud-rate", type=float)
    gen.add_argument("--regime", choices=REGIMES)
    gen.add_argument("--motif-hops", type=int, choices=MOTIF_HOPS)
    gen.add_argument("--bin-hours", type=int)
    gen.add_argument("--output", default=None, help="CSV path (default: <out-dir>/transactions.csv)")

    build = sub.add_parser("build-graph", help="Build the snapshot store from a CSV")
    build.add_argument("--input", required=True)
    build.add_argument("--bin-hours", type=int)
    build.add_argument("--cap", type=int)
    build.add_argument("--store", default=None, help="Store directory (default: <out-dir>/store)")

    for name, help_text in (("train", "Train and evaluate one model"),
                            ("ablate", "Run all five ablation variants"),
                            ("sweep", "Sweep K or d_k")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--store", required=True)
        _add_train_flags(cmd)
        if name == "train":
            cmd.add_argument("--variant", choices=VARIANTS)
            cmd.add_argument("--no-pretrain", action="store_true", help="Same as --variant no_contrastive")
        if name == "sweep":
            cmd.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
            cmd.add_argument("--values", required=True, type=int, nargs="+")

    baseline = sub.add_parser("baseline", help="Fit a tabular baseline")
    baseline.add_argument("--store", required=True)
    baseline.add_argument("--model", required=True, choices=BASELINE_MODELS)
    baseline.add_argument("--hidden", type=int)
    baseline.add_argument("--l2", type=float)
    baseline.add_argument("--lr", type=float)
    baseline.add_argument("--max-epochs", type=int)
    baseline.add_argument("--patience", type=int)
    return parser


def _add_train_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--K", type=int)
    cmd.add_argument("--d", type=int)
    cmd.add_argument("--dk", type=int, dest="d_k")
    cmd.add_argument("--pretrain-epochs", type=int)
    cmd.add_argument("--max-epochs", type=int, dest="finetune_max_epochs")
    cmd.add_argument("--patience", type=int, dest="early_stop_patience")
    cmd.add_argument("--lr", type=float, dest="lr_classifier")
    cmd.add_argument("--lr-encoder", type=float, dest="lr_encoder_finetune")
    cmd.add_argument("--lr-pretrain", type=float)
    cmd.add_argument("--tau", type=float, dest="temperature")


def _flag_values(args: argparse.Namespace) -> dict:
    """Map parsed flags onto config sections; unset flags stay None and are ignored."""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    train_keys = ["K", "d", "d_k", "pretrain_epochs", "finetune_max_epochs", "early_stop_patience",
                  "lr_classifier", "lr_encoder_finetune", "lr_pretrain", "temperature"]
    values = {
        "seed": args.seed,
        "ingest": {"bin_hours": get("bin_hours"), "cap": get("cap")},
        "gen": {"n_accounts": get("n_accounts"), "n_windows": get("n_windows"),
                "tx_per_window": get("tx_per_window"), "fraud_rate": get("fraud_rate"),
                "regime": get("regime"), "motif_hops": get("motif_hops"), "bin_hours": get("bin_hours")},
        "baseline": {"hidden": get("hidden"), "l2": get("l2"), "lr": get("lr"),
                     "max_epochs": get("max_epochs"), "patience": get("patience")},
        "train": {key: get(key) for key in train_keys} if args.command in ("train", "ablate", "sweep") else {},
    }
    if args.command == "train":
        variant = "no_contrastive" if args.no_pretrain else args.variant
        values["train"]["variant"] = variant
    return values


def _metric(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _options(args: argparse.Namespace) -> dict:
    keep = ("input", "output", "store", "param", "values", "model", "out_dir", "jobs")
    return {key: getattr(args, key) for key in keep if getattr(args, key, None) is not None}


def cmd_gen(config: ResolvedConfig, out_dir: Path) -> Path:
    corpus = generate(config.gen)
    path = Path(config.options.get("output") or out_dir / "transactions.csv")
    corpus.write_csv(path)
    print(f"Wrote {len(corpus.records):,} transactions ({corpus.fraud_rate:.4f} fraud rate) to {path}")
    return path


def cmd_build_graph(config: ResolvedConfig, out_dir: Path) -> Path:
    ingest = config.ingest
    records = parse_transactions(config.options["input"])
    records = stratified_subsample(records, ingest.cap, ingest.seed, ingest.bin_hours)
    window_ids, windows = assign_windows(records, ingest.bin_hours)
    vocabulary = transaction_vocabulary(records)
    snapshots = build_snapshots(records, window_ids, windows, vocabulary)

    split, scaler = None, None
    if sum(not s.is_empty for s in snapshots) >= 3:
        split = chronological_split(snapshots, config.train.train_fraction, config.train.val_fraction)
        snapshots, scaler = standardize_features(snapshots, split.train)
    else:
        logger.warning("fewer than 3 non-empty windows; store written without split or standardization")

    store_dir = Path(config.options.get("store") or out_dir / "store")
    metadata = {"bin_hours": ingest.bin_hours, "cap": ingest.cap, "seed": ingest.seed, "num_records": len(records)}
    save_store(store_dir, SnapshotStore(snapshots, windows, vocabulary, scaler, split, metadata))
    print(f"Built {len(windows)} windows from {len(records):,} transactions into {store_dir}")
    return store_dir


def _load_training_data(config: ResolvedConfig):
    store = load_store(config.options["store"])
    split = store.split or chronological_split(store.snapshots, config.train.train_fraction, config.train.val_fraction)
    return store.snapshots, split


def _train_job(config: ResolvedConfig, variant: str, snapshots, train_config: TrainConfig, split, run_dir: Path):
    """Run one ablation or sweep job in its own directory, starting with its own config.json."""
    train_config = replace(train_config, variant=variant)
    replace(config, train=train_config).write(run_dir)
    report, _ = run_ablation(variant, snapshots, train_config, split, run_dir)
    return report


def cmd_train(config: ResolvedConfig, out_dir: Path) -> Path:
    snapshots, split = _load_training_data(config)
    report, record = run_ablation(config.train.variant, snapshots, config.train, split, out_dir)
    print(f"{VARIANT_LABELS[report.variant]}: ROC-AUC {_metric(report.roc_auc)}, "
          f"PR-AUC {_metric(report.pr_auc)}, threshold {report.threshold:.4f}, "
          f"best epoch {record.best_epoch}")
    return out_dir / "report.json"


def cmd_ablate(config: ResolvedConfig, out_dir: Path) -> Path:
    snapshots, split = _load_training_data(config)
    jobs = max_jobs(config.options.get("jobs", 1))
    reports = Parallel(n_jobs=jobs)(
        delayed(_train_job)(config, variant, snapshots, config.train, split, out_dir / variant)
        for variant in VARIANTS
    )
    path = write_reports_csv(reports, out_dir / "ablation.csv")
    for report in reports:
        print(f"  {report.label:<28} ROC-AUC {_metric(report.roc_auc)}  PR-AUC {_metric(report.pr_auc)}")
    return path


def cmd_sweep(config: ResolvedConfig, out_dir: Path) -> Path:
    snapshots, split = _load_training_data(config)
    param, values = config.options["param"], config.options["values"]
    field_name = SWEEP_PARAMS[param]
    jobs = max_jobs(config.options.get("jobs", 1))
    configs = [replace(config.train, **{field_name: value}).validate() for value in values]
    reports = Parallel(n_jobs=jobs)(
        delayed(_train_job)(config, cfg.variant, snapshots, cfg, split, out_dir / f"{param}_{value}")
        for cfg, value in zip(configs, values)
    )
    path = write_reports_csv(reports, out_dir / "sweep.csv", extra=[{param: value} for value in values])
    for value, report in zip(values, reports):
        print(f"  {param}={value}: ROC-AUC {_metric(report.roc_auc)}  PR-AUC {_metric(report.pr_auc)}")
    return path


def cmd_baseline(config: ResolvedConfig, out_dir: Path) -> Path:
    snapshots, split = _load_training_data(config)
    _, report = run_baseline(config.options["model"], snapshots, split, config.baseline)
    path = save_report(report, out_dir / "report.json")
    print(f"{report.label}: ROC-AUC {_metric(report.roc_auc)}, PR-AUC {_metric(report.pr_auc)}")
    return path


COMMANDS = {
    "gen": cmd_gen,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "baseline": cmd_baseline,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)

    out_dir = Path(args.out_dir)
    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = resolve(args.command, file_values, _flag_values(args), _options(args))
        config.write(out_dir)
        COMMANDS[args.command](config, out_dir)
    except (PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
