"""Command-line harness: train, eval, sweep, ablation, gen-data"""
import argparse
import os
import sys
from typing import Dict, List, Optional, Tuple

from config import *
from dtsl.data.synthetic import generate
from dtsl.settings import (CorpusConfig, TrainConfig, apply_settings, config_pairs, load_config_file,
                           write_key_values)
from dtsl.sweeps import default_values, parse_values, run_ablation, sweep, sweep_grid
from dtsl.trainer import TrainingDiverged, build_corpus, evaluate_run, run_training
from dtsl.ui.report import print_headlines, print_table, write_metrics
from dtsl.ui.snapshots import labels_to_gray, write_pgm

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

SEED_ENV = "DTSL_SEED"

# argparse dest -> setting key, all optional so config files are not overridden by defaults
SETTING_FLAGS = [
    ("--mode", str, "training mode: " + ", ".join(MODES)),
    ("--strategy", str, "CLG strategy: " + ", ".join(STRATEGIES)),
    ("--kappa", float, "consistency threshold on the base-2 JS divergence"),
    ("--omega", float, "EMA smoothing factor"),
    ("--alpha", float, "weight of the CLG Dice term"),
    ("--beta", float, "weight of the uniform regularization term"),
    ("--eta0", float, "initial learning rate"),
    ("--max-iter", int, "training iterations"),
    ("--labeled-batch", int, "labeled samples per iteration"),
    ("--unlabeled-batch", int, "unlabeled samples per iteration"),
    ("--seed", int, "run seed (also the corpus seed unless --data-seed is given)"),
    ("--data-seed", int, "corpus seed"),
    ("--num-classes", int, "classes including background"),
    ("--base-channels", int, "width of the first encoder block"),
    ("--snapshot-every", int, "iterations between probe snapshots"),
    ("--probe-size", int, "test images in the probe batch"),
    ("--arch0", str, "architecture of group 0"),
    ("--arch1", str, "architecture of group 1"),
    ("--labeled-fraction", float, "fraction of the training pool with labels"),
    ("--train-count", int, "training images"),
    ("--test-count", int, "test images"),
    ("--image-size", int, "image side length (multiple of 4)"),
    ("--noise-sigma", float, "Gaussian noise level"),
]


class UsageError(ValueError):
    pass


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def resolve_configs(args, environ=None) -> Tuple[TrainConfig, CorpusConfig]:
    """config.py defaults < --config file < flags < DTSL_SEED"""
    environ = os.environ if environ is None else environ
    try:
        train, corpus = TrainConfig(), CorpusConfig()
        if getattr(args, "config", None):
            train, corpus = load_config_file(args.config, train, corpus)

        overrides: Dict[str, object] = {}
        for flag, _, _ in SETTING_FLAGS:
            value = getattr(args, _dest(flag), None)
            if value is not None:
                overrides[_dest(flag)] = value
        if getattr(args, "allow_same_arch", False):
            overrides["allow_same_arch"] = True

        if environ.get(SEED_ENV) not in (None, ""):
            try:
                overrides["seed"] = int(environ[SEED_ENV])
            except ValueError:
                raise ValueError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}")
        if "seed" in overrides and "data_seed" not in overrides:
            overrides["data_seed"] = overrides["seed"]

        train, corpus = apply_settings(train, corpus, overrides)
        return train.validate(), corpus.validate()
    except (ValueError, OSError) as e:
        raise UsageError(str(e))


def _say(args, message: str):
    if not args.quiet:
        print(message)


def cmd_train(args) -> int:
    train, corpus = resolve_configs(args)
    _say(args, f"[train] {train.mode.display_name} -> {args.out_dir}")
    data = build_corpus(corpus, train.num_classes)
    report = run_training(train, data, args.out_dir, corpus, quiet=args.quiet)
    print_headlines(report.metrics, args.quiet)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not os.path.exists(os.path.join(args.run_dir, "manifest.txt")):
        raise UsageError(f"{args.run_dir} has no manifest.txt")
    cfg, reports = evaluate_run(args.run_dir)
    output = args.output or os.path.join(args.run_dir, "metrics_eval.csv")
    write_metrics(output, reports)
    _say(args, f"[eval] {cfg.mode.display_name} run re-evaluated -> {output}")
    print_headlines(reports, args.quiet)
    return EXIT_OK


def cmd_sweep(args) -> int:
    train, corpus = resolve_configs(args)
    try:
        if args.values is not None:
            values = parse_values(args.values, args.param)
        else:
            values = default_values(args.param, args.grid)
        grid = sweep_grid(train, args.param, values)
    except ValueError as e:
        raise UsageError(str(e))

    _say(args, f"[sweep] {args.param}: {len(grid)} run(s), {args.jobs} job(s)")
    rows = sweep(grid, corpus, args.out_dir, args.param, args.jobs, args.quiet)
    print_table(f"Sweep over {args.param}", SWEEP_COLUMNS[:-1], rows, args.quiet)
    return EXIT_OK if any(row["status"] == "ok" for row in rows) else EXIT_FAILURE


def _parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {text!r}")
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def cmd_ablation(args) -> int:
    train, corpus = resolve_configs(args)
    seeds = _parse_seeds(args.seeds)
    _say(args, f"[ablation] {len(ABLATION_ROWS)} rows x {len(seeds)} seed(s)")
    rows = run_ablation(train, corpus, seeds, args.out_dir, args.jobs, args.quiet)
    print_table("Module ablation (median over seeds)", ABLATION_COLUMNS, rows, args.quiet)
    return EXIT_OK if all(row["runs"] for row in rows) else EXIT_FAILURE


def cmd_gen_data(args) -> int:
    train, corpus = resolve_configs(args)
    count = args.count if args.count is not None else corpus.total
    num_classes = train.num_classes
    try:
        samples = generate(corpus.data_seed, count, corpus.image_size, corpus.image_size,
                           num_classes, corpus.noise_sigma)
    except ValueError as e:
        raise UsageError(str(e))

    for sample in samples:
        image = (sample.image[0] * 255.0).round().astype("uint8")
        write_pgm(os.path.join(args.out_dir, f"image_{sample.index:04d}.pgm"), image)
        write_pgm(os.path.join(args.out_dir, f"label_{sample.index:04d}.pgm"),
                  labels_to_gray(sample.label, num_classes))
    write_key_values(os.path.join(args.out_dir, "corpus.txt"),
                     [("version", VERSION), ("count", str(count)), ("num_classes", str(num_classes))]
                     + config_pairs(corpus), comment=f"{TITLE} synthetic corpus")
    _say(args, f"[gen-data] {count} image/label pairs -> {args.out_dir}")
    return EXIT_OK


def _add_setting_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("run settings")
    group.add_argument("--config", help="key=value file applied before the flags")
    for flag, kind, text in SETTING_FLAGS:
        group.add_argument(flag, type=kind, default=None, help=text)
    group.add_argument("--allow-same-arch", action="store_true",
                       help="let both groups share an architecture")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtsl", description=f"{TITLE} {VERSION}: dual teacher-student "
                                                              f"segmentation on synthetic data")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _add_setting_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a finished run from its checkpoints")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--output", help="metrics CSV (default: <run-dir>/metrics_eval.csv)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="one run per value of a hyperparameter")
    _add_setting_flags(p)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", help="comma list; ranges as a..b or a..b:step")
    p.add_argument("--grid", choices=sorted(SWEEP_GRIDS), help="built-in grid when --values is absent")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ablation", help="the five module-ablation rows")
    _add_setting_flags(p)
    p.add_argument("--seeds", default=str(SEED), help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_ablation)

    p = sub.add_parser("gen-data", help="export a synthetic corpus as PGM pairs")
    _add_setting_flags(p)
    p.add_argument("--count", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_gen_data)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if getattr(args, "jobs", 1) < 1:
        print("[error] --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE

    try:
        return args.handler(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"[error] {e}", file=sys.stderr)
        for key, value in e.breakdown.to_dict().items():
            print(f"  {key}: {value}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        print(f"[error] {type(e).__name__}: {e}", file=sys.stderr)
        if not getattr(args, "quiet", False):
            import traceback
            traceback.print_exc()
        return EXIT_FAILURE
