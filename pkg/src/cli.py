"""
cli.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Command-line driver of the toolkit. One invocation does one of:
    - run a suite (`--suite table1|table2|table3|<file>`) and write its table
    - run a single configuration (`--sensors ... --recipe ... --mode ...`),
      optionally as the final held-out test run (`--test`)
    - summarize the influence of each choice over a results directory
    - dump one spectrogram as CSV + PGM, or the per-class average spectrum
    Errors are reported on stderr and mapped to exit codes (0 ok, 1 config,
    2 dataset, 3 run failure).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from src import reporting
from src.config import (SHL_DIR_ENV, SHL_TEST_DIR_ENV, Settings, load_settings,
                        resolve_dataset_path)
from src.dataset import (ChannelSelector, HeldOutTestSet, build_labeled_arrays,
                         chronological_split)
from src.errors import ConfigurationError, MissingDatasetError, TmdError, TrainingDivergedError
from src.image_export import dump_spectrogram
from src.results_catalog import ResultsCatalog
from src.trainer import BASELINE, RunConfig, final_test_run, repeat_runs

logger = logging.getLogger(__name__)

DEFAULT_OUT = "results"


def parse_synthetic(tokens: Sequence[str]) -> Tuple[int, int]:
    """['n_per_class=80', 'seed=0'] -> (80, 0); seed defaults to 0."""
    values: Dict[str, int] = {}
    for token in tokens:
        key, sep, value = token.partition("=")
        if not sep or key not in ("n_per_class", "seed"):
            raise ConfigurationError(f"--synthetic expects n_per_class=K seed=S, got '{token}'")
        try:
            values[key] = int(value)
        except ValueError as exc:
            raise ConfigurationError(f"--synthetic {key} must be an integer, got '{value}'") from exc
    if values.get("n_per_class", 0) < 1:
        raise ConfigurationError("--synthetic needs n_per_class=K with K >= 1")
    return values["n_per_class"], values.get("seed", 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Transport-mode detection from smartphone sensors: train, evaluate "
                    "and tabulate CNN baselines and fusion modes.")
    action = parser.add_argument_group("what to do")
    action.add_argument("--suite", help="built-in suite name (table1, table2, table3) or YAML file")
    action.add_argument("--sensors", nargs="+", metavar="SELECTOR",
                        help="single run: channel selectors, e.g. Acc_norm Gyr_y")
    action.add_argument("--dump-spectrogram", nargs=2, metavar=("IDX", "RECIPE"),
                        help="write recording IDX preprocessed with RECIPE as CSV + PGM")
    action.add_argument("--average-spectrum", metavar="SELECTOR",
                        help="write the per-class average power spectrum of one channel")
    action.add_argument("--summarize", metavar="DIR",
                        help="write influence.csv from the run records in DIR")

    data = parser.add_argument_group("dataset")
    data.add_argument("--shl-dir", help=f"SHL training split directory (or ${SHL_DIR_ENV})")
    data.add_argument("--shl-test-dir", help=f"SHL test split directory (or ${SHL_TEST_DIR_ENV})")
    data.add_argument("--synthetic", nargs="+", metavar="KEY=VALUE",
                      help="seeded synthetic dataset: n_per_class=K seed=S")
    data.add_argument("--split", nargs=2, type=int, metavar=("N_VAL", "N_TRAIN"),
                      help="explicit validation / training counts")

    run = parser.add_argument_group("single run")
    run.add_argument("--recipe", default="spectrogram-logfreq-log")
    run.add_argument("--mode", default=BASELINE)
    run.add_argument("--epochs", type=int)
    run.add_argument("--seeds", type=int, help="number of seeds")
    run.add_argument("--test", action="store_true",
                     help="final run: train on train+validation, score the held-out test split")

    parser.add_argument("--config", help="YAML file merged over config/defaults.yaml")
    parser.add_argument("--out", default=DEFAULT_OUT, help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def _settings(args: argparse.Namespace) -> Settings:
    training = {}
    if args.epochs is not None:
        training["epochs"] = args.epochs
    if args.seeds is not None:
        training["n_seeds"] = args.seeds
    return load_settings(Path(args.config) if args.config else None,
                         {"training": training} if training else None)


def _source(args: argparse.Namespace) -> reporting.DataSource:
    shl_dir = resolve_dataset_path(args.shl_dir, SHL_DIR_ENV)
    test_dir = resolve_dataset_path(args.shl_test_dir, SHL_TEST_DIR_ENV)
    if args.synthetic:
        n_per_class, seed = parse_synthetic(args.synthetic)
        return reporting.DataSource(None, None, n_per_class, seed)
    if shl_dir is None:
        raise MissingDatasetError("<unset>", "no --shl-dir, TMD_SHL_DIR or --synthetic given")
    return reporting.DataSource(shl_dir, test_dir)


def _split(args: argparse.Namespace, recordings):
    if args.split:
        return chronological_split(recordings, *args.split)
    return chronological_split(recordings)


def _report_failures(records) -> int:
    """Exit code 3 when any run has diverged seeds; their scores stay in the records."""
    failures = reporting.failed_runs(records)
    for line in failures:
        print(f"error: training diverged in {line}", file=sys.stderr)
    return TrainingDivergedError.exit_code if failures else 0


def run_single(args: argparse.Namespace, settings: Settings) -> int:
    cfg = RunConfig(tuple(args.sensors), args.recipe, args.mode, settings)
    source = _source(args)
    cfg = cfg.on_data(reporting.data_context(source, args.split))
    channels = reporting.required_channels([cfg])
    train_recordings, val_recordings = _split(args, source.recordings(channels, jobs=args.jobs))
    train_data = build_labeled_arrays(train_recordings, cfg.selectors, cfg.recipe, settings.dsp)
    val_data = build_labeled_arrays(val_recordings, cfg.selectors, cfg.recipe, settings.dsp)

    if args.test:
        test_data = build_labeled_arrays(source.test_recordings(channels, jobs=args.jobs),
                                         cfg.selectors, cfg.recipe, settings.dsp)
        result = final_test_run(cfg, train_data, val_data, HeldOutTestSet(test_data), args.jobs)
    else:
        result = repeat_runs(cfg, train_data, val_data, args.jobs)

    record = result.to_record()
    record["source"] = source.describe()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = reporting.write_record(out_dir, record)
    with ResultsCatalog(str(out_dir / reporting.CATALOG_FILE)) as catalog:
        catalog.add_run(record, replace=True)
    print(f"{cfg.describe()} [{result.split}]: "
          f"{reporting.format_cell(result.report.mean, result.report.std)} (record {path})")
    return _report_failures([record])


def run_suite(args: argparse.Namespace, settings: Settings) -> int:
    suite = reporting.load_suite(args.suite, settings)
    if args.split:
        suite.split = tuple(args.split)
    outputs = reporting.run_suite(suite, _source(args), args.out, args.jobs)
    print(f"Suite {suite.name}: {len(suite.runs)} runs, table {outputs['table']}")
    return _report_failures(reporting.read_record(path)
                            for key, path in outputs.items() if key != "table")


def _one_selector(args: argparse.Namespace, default: str = "Acc_norm") -> ChannelSelector:
    if args.sensors and len(args.sensors) > 1:
        raise ConfigurationError("diagnostics take a single channel selector")
    return ChannelSelector.parse(args.sensors[0] if args.sensors else default)


def run_dump(args: argparse.Namespace, settings: Settings) -> int:
    raw_index, recipe = args.dump_spectrogram
    try:
        index = int(raw_index)
    except ValueError as exc:
        raise ConfigurationError(f"sample index must be an integer, got '{raw_index}'") from exc
    selector = _one_selector(args)
    recordings = _source(args).recordings(selector.required_channels, jobs=args.jobs)
    if not 0 <= index < len(recordings):
        raise ConfigurationError(f"sample index {index} outside 0..{len(recordings) - 1}")
    csv_path, pgm_path = dump_spectrogram(recordings[index], selector, recipe, args.out,
                                          settings.dsp, index)
    print(f"Wrote {csv_path} and {pgm_path}")
    return 0


def run_average_spectrum(args: argparse.Namespace, settings: Settings) -> int:
    selector = ChannelSelector.parse(args.average_spectrum)
    recordings = _source(args).recordings(selector.required_channels, jobs=args.jobs)
    path = reporting.write_average_spectrum(recordings, selector, args.out)
    print(f"Wrote {path}")
    return 0


def run_summarize(args: argparse.Namespace, settings: Settings) -> int:
    path = reporting.write_influence(args.summarize)
    print(f"Wrote {path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        settings = _settings(args)
        if args.summarize:
            return run_summarize(args, settings)
        if args.dump_spectrogram:
            return run_dump(args, settings)
        if args.average_spectrum:
            return run_average_spectrum(args, settings)
        if args.suite:
            return run_suite(args, settings)
        if args.sensors:
            return run_single(args, settings)
        parser.print_help()
        return 1
    except TmdError as exc:
        logger.debug("Run aborted with %s", type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
