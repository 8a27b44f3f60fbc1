"""
reporting.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Experiment suites and the tables built from their results:
    - loading declarative suite files and expanding their grids into RunConfigs
    - resolving the dataset source (SHL directory or synthetic generator)
    - running a suite with catalog-based skipping of already evaluated configs
    - writing per_sensor.csv, preprocessing.csv, fusion.csv and influence.csv
    - the per-class average spectrum CSV
"""

import itertools
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src import dsp
from src.config import SUITES_DIR, Settings, deep_merge, read_yaml, settings_from_dict
from src.dataset import (SENSORS, ChannelSelector, ClassLabel, RawRecording, assign_label,
                         build_labeled_arrays, chronological_split, generate_synthetic,
                         load_shl_directory, select_channels)
from src.errors import ConfigurationError, InsufficientDataError, MissingDatasetError
from src.fusion import FusionMode
from src.results_catalog import ResultsCatalog
from src.trainer import BASELINE, RunConfig, repeat_runs

logger = logging.getLogger(__name__)

TABLE_FILES = {
    "per_sensor": "per_sensor.csv",
    "preprocessing": "preprocessing.csv",
    "fusion": "fusion.csv",
}
INFLUENCE_FILE = "influence.csv"
RUNS_DIR = "runs"
CATALOG_FILE = "results.db"

# runs that learned nothing are left out of the influence averages
LEARNING_THRESHOLD = 0.10
BEST_MARK = " (best)"
NEAR_BEST_MARK = " (2σ)"
AXIS_COLUMNS = ("x", "y", "z", "norm", "w")

_CELL_PATTERN = re.compile(r"^\s*(-?\d+(?:\.\d+)?)\s*±\s*(\d+(?:\.\d+)?)")


# --- Suites ---

@dataclass
class ExperimentSuite:
    name: str
    table: str
    runs: List[RunConfig]
    split: Optional[Tuple[int, int]] = None
    output_dir: Optional[Path] = None
    source: str = ""

    def __post_init__(self):
        if self.table not in TABLE_FILES:
            raise ConfigurationError(
                f"suite '{self.name}': unknown table '{self.table}'; "
                f"expected one of {', '.join(TABLE_FILES)}")
        hashes = [cfg.hash for cfg in self.runs]
        if len(set(hashes)) != len(hashes):
            duplicate = next(cfg for cfg in self.runs if hashes.count(cfg.hash) > 1)
            raise ConfigurationError(f"suite '{self.name}' lists {duplicate.describe()} twice")
        if not self.runs:
            raise ConfigurationError(f"suite '{self.name}' has no runs")


def expand_grid(grid: Dict[str, Any], settings: Settings) -> List[RunConfig]:
    """Cartesian product sensors × recipes × modes, in file order."""
    try:
        sensor_sets = grid["sensors"]
        recipes = grid.get("recipes", ["spectrogram-logfreq-log"])
        modes = grid.get("modes", [BASELINE])
    except (KeyError, AttributeError, TypeError) as exc:
        raise ConfigurationError(f"suite grid needs a 'sensors' list ({exc})") from exc
    runs = []
    for sensors, recipe, mode in itertools.product(sensor_sets, recipes, modes):
        sensors = [sensors] if isinstance(sensors, str) else list(sensors)
        runs.append(RunConfig(tuple(sensors), recipe, mode, settings))
    return runs


def _suite_file(name_or_path: Union[str, Path]) -> Path:
    path = Path(name_or_path)
    if path.is_file():
        return path
    builtin = SUITES_DIR / f"{name_or_path}.yaml"
    if builtin.is_file():
        return builtin
    raise ConfigurationError(
        f"suite '{name_or_path}' is neither a file nor a built-in suite "
        f"({', '.join(sorted(p.stem for p in SUITES_DIR.glob('*.yaml')))})")


def load_suite(name_or_path: Union[str, Path], settings: Optional[Settings] = None) -> ExperimentSuite:
    """
    Read a suite file (or a built-in suite by name). A suite lists its runs
    through a `grid:` block, an explicit `runs:` list, or both; an optional
    `settings:` block is merged over the base settings and `split:` gives
    explicit validation/training counts.
    """
    path = _suite_file(name_or_path)
    data = read_yaml(path)
    base = settings or Settings()
    if data.get("settings"):
        base = settings_from_dict(deep_merge(base.to_dict(), data["settings"]))

    runs: List[RunConfig] = []
    if "grid" in data:
        runs.extend(expand_grid(data["grid"], base))
    for entry in data.get("runs", []) or []:
        try:
            sensors = entry["sensors"]
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path.name}: every run needs 'sensors'") from exc
        sensors = [sensors] if isinstance(sensors, str) else list(sensors)
        runs.append(RunConfig(tuple(sensors), entry.get("recipe", "spectrogram-logfreq-log"),
                              entry.get("mode", BASELINE), base))

    split = None
    if data.get("split"):
        try:
            split = (int(data["split"]["n_val"]), int(data["split"]["n_train"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"{path.name}: split needs integer n_val and n_train") from exc

    name = str(data.get("name", path.stem))
    suite = ExperimentSuite(name, str(data.get("table", "fusion")), runs, split)
    logger.info("Suite %s: %d runs (%s table)", suite.name, len(suite.runs), suite.table)
    return suite


# --- Dataset source ---

@dataclass(frozen=True)
class DataSource:
    """Either an SHL split directory or the seeded synthetic generator."""
    shl_dir: Optional[Path] = None
    shl_test_dir: Optional[Path] = None
    n_per_class: int = 0
    seed: int = 0

    @property
    def synthetic(self) -> bool:
        return self.shl_dir is None and self.n_per_class > 0

    def describe(self) -> str:
        if self.synthetic:
            return f"synthetic n_per_class={self.n_per_class} seed={self.seed}"
        return f"SHL {self.shl_dir}"

    def recordings(self, channels: Optional[Iterable[str]] = None,
                   jobs: int = 4) -> List[RawRecording]:
        if self.shl_dir is not None:
            return load_shl_directory(self.shl_dir, channels=channels, jobs=jobs)
        if self.n_per_class > 0:
            return generate_synthetic(self.seed, self.n_per_class)
        raise MissingDatasetError("<unset>", "no dataset given")

    def test_recordings(self, channels: Optional[Iterable[str]] = None,
                        jobs: int = 4) -> List[RawRecording]:
        """The held-out split; the synthetic one comes from a different seed."""
        if self.shl_dir is not None:
            if self.shl_test_dir is None:
                raise MissingDatasetError("<unset>", "the test run needs --shl-test-dir "
                                                     "or TMD_SHL_TEST_DIR")
            return load_shl_directory(self.shl_test_dir, channels=channels, jobs=jobs)
        if self.n_per_class > 0:
            return generate_synthetic(self.seed + 1, max(1, self.n_per_class // 4))
        raise MissingDatasetError("<unset>", "no dataset given")


def data_context(source: DataSource, split: Optional[Sequence[int]] = None) -> str:
    """Data source and split of a run, as they enter its config hash."""
    split_text = f"split {split[0]}/{split[1]}" if split else "default split"
    return f"{source.describe()}, {split_text}"


def required_channels(configs: Sequence[RunConfig]) -> List[str]:
    channels = []
    for cfg in configs:
        for selector in cfg.selectors:
            channels.extend(selector.required_channels)
    return list(dict.fromkeys(channels))


# --- Running ---

def record_path(out_dir: Path, record: Dict[str, Any]) -> Path:
    return Path(out_dir) / RUNS_DIR / f"{record['config_hash']}-{record.get('split', 'validation')}.json"


def write_record(out_dir: Path, record: Dict[str, Any]) -> Path:
    path = record_path(out_dir, record)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_records(results_dir: Union[str, Path], split: str = "validation") -> List[Dict[str, Any]]:
    """Every run record of a results directory, ordered by file name."""
    runs_dir = Path(results_dir) / RUNS_DIR
    if not runs_dir.is_dir():
        raise ConfigurationError(f"{results_dir} holds no '{RUNS_DIR}' directory of run records")
    records = []
    for path in sorted(runs_dir.glob("*.json")):
        record = read_record(path)
        if record.get("split", "validation") == split:
            records.append(record)
    return records


def read_record(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigurationError(f"{path.name}: not a run record ({exc})") from exc


def failed_runs(records: Iterable[Dict[str, Any]]) -> List[str]:
    """One line per record with diverged seeds, e.g. 'Baseline[Acc_norm] ...: seeds 0, 3'."""
    lines = []
    for record in records:
        failed = record.get("failed_seeds") or []
        if failed:
            config = _config(record)
            lines.append(f"{config.get('mode', '?')}[{', '.join(config.get('sensors', []))}] "
                         f"{config.get('recipe', '?')}: seeds {', '.join(map(str, failed))}")
    return lines


def _evaluate(cfg: RunConfig, train_recordings, val_recordings, jobs: int) -> Dict[str, Any]:
    dsp_settings = cfg.settings.dsp
    train_data = build_labeled_arrays(train_recordings, cfg.selectors, cfg.recipe, dsp_settings)
    val_data = build_labeled_arrays(val_recordings, cfg.selectors, cfg.recipe, dsp_settings)
    return repeat_runs(cfg, train_data, val_data, jobs).to_record()


def run_suite(suite: ExperimentSuite, source: DataSource, out_dir: Union[str, Path],
              jobs: int = 1) -> Dict[str, Path]:
    """
    Evaluate every run of the suite on the validation split and write one
    JSON record per run plus the suite's table. Runs already in the results
    catalog of `out_dir` for the same data source and split are reused.

    Returns:
        {"table": csv path, "<config hash>": record path, ...}
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suite.output_dir = out_dir
    suite.source = source.describe()
    runs = [cfg.on_data(data_context(source, suite.split)) for cfg in suite.runs]

    with ResultsCatalog(str(out_dir / CATALOG_FILE)) as catalog:
        pending = [cfg for cfg in runs if not catalog.run_exists(cfg.hash)]
        pending_hashes = {cfg.hash for cfg in pending}
        for cfg in runs:
            if cfg.hash not in pending_hashes:
                logger.info("Skipping %s (%s): already in the catalog", cfg.describe(), cfg.hash)
                catalog.add_run_to_suite(cfg.hash, suite.name)

        if pending:
            recordings = source.recordings(required_channels(pending), jobs=max(1, jobs))
            if suite.split:
                train_recordings, val_recordings = chronological_split(recordings, *suite.split)
            else:
                train_recordings, val_recordings = chronological_split(recordings)
            logger.info("%s: %d training / %d validation recordings", source.describe(),
                        len(train_recordings), len(val_recordings))
            if len(pending) == 1:
                records = [_evaluate(pending[0], train_recordings, val_recordings, jobs)]
            else:
                # runs spread over the pool, seeds of one run stay sequential
                records = Parallel(n_jobs=jobs)(
                    delayed(_evaluate)(cfg, train_recordings, val_recordings, 1) for cfg in pending)
            for cfg, record in zip(pending, records):
                record["suite"] = suite.name
                record["source"] = suite.source
                write_record(out_dir, record)
                catalog.add_run(record, suite.name)
                logger.info("Finished %s (%s): %.2f ± %.2f", cfg.describe(), cfg.hash,
                            100 * record["mean"], 100 * record["std"])

        by_hash = {}
        for cfg in runs:
            record = catalog.get_run(cfg.hash)
            if record is None:
                raise InsufficientDataError(f"no stored result for {cfg.describe()}")
            by_hash[cfg.hash] = record

    outputs: Dict[str, Path] = {key: record_path(out_dir, record) for key, record in by_hash.items()}
    for record in by_hash.values():
        if not outputs[record["config_hash"]].is_file():
            write_record(out_dir, record)
    outputs["table"] = write_table(suite.table, list(by_hash.values()), out_dir)
    return outputs


# --- Cells ---

def format_cell(mean: float, std: float) -> str:
    """Fractions to the table form '89.14 ± 0.65' (percent, 2 decimals)."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def parse_cell(text: str) -> Tuple[float, float]:
    """Back to (mean, std) in percent; markers after the pair are ignored."""
    match = _CELL_PATTERN.match(str(text))
    if not match:
        raise ConfigurationError(f"'{text}' is not a 'mean ± std' cell")
    return float(match.group(1)), float(match.group(2))


# --- Tables ---

def _config(record: Dict[str, Any]) -> Dict[str, Any]:
    return record.get("config", {})


def _combination_label(sensors: Sequence[str]) -> str:
    return ", ".join(ChannelSelector.parse(sensor).label for sensor in sensors)


def per_sensor_table(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Sensor rows × axis columns; Pressure sits in the z column."""
    rows = []
    for record in records:
        config = _config(record)
        if config.get("mode") != BASELINE or len(config.get("sensors", [])) != 1:
            continue
        selector = ChannelSelector.parse(config["sensors"][0])
        rows.append({"sensor": selector.sensor, "axis": selector.axis,
                     "cell": format_cell(record["mean"], record["std"])})
    if not rows:
        raise InsufficientDataError("no single-sensor baseline runs for the per-sensor table")
    frame = pd.DataFrame(rows).drop_duplicates(["sensor", "axis"], keep="last")
    table = frame.pivot(index="sensor", columns="axis", values="cell")
    table = table.reindex(index=[s for s in SENSORS if s in table.index],
                          columns=[a for a in AXIS_COLUMNS if a in table.columns])
    return table.fillna("")


def preprocessing_table(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Recipe rows × signal columns."""
    rows = []
    for record in records:
        config = _config(record)
        if len(config.get("sensors", [])) != 1:
            continue
        rows.append({"recipe": config["recipe"],
                     "signal": ChannelSelector.parse(config["sensors"][0]).label,
                     "cell": format_cell(record["mean"], record["std"])})
    if not rows:
        raise InsufficientDataError("no single-sensor runs for the preprocessing table")
    frame = pd.DataFrame(rows).drop_duplicates(["recipe", "signal"], keep="last")
    signals = list(dict.fromkeys(frame["signal"]))
    table = frame.pivot(index="recipe", columns="signal", values="cell")
    table = table.reindex(index=[r for r in dsp.RECIPES if r in table.index], columns=signals)
    return table.fillna("")


def mark_near_best(means: Sequence[float], stds: Sequence[float]) -> List[str]:
    """
    Per cell: 'best' for the highest mean, 'near' when its mean plus two of its
    own standard deviations reaches the best mean, '' otherwise.
    """
    if not means:
        return []
    best = int(np.argmax(means))
    marks = []
    for index, (mean, std) in enumerate(zip(means, stds)):
        if index == best:
            marks.append("best")
        elif mean + 2 * std >= means[best]:
            marks.append("near")
        else:
            marks.append("")
    return marks


def fusion_table(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Sensor-combination rows × fusion-mode columns, best and near-best marked per row."""
    rows = []
    for record in records:
        config = _config(record)
        if config.get("mode") == BASELINE:
            continue
        rows.append({"combination": _combination_label(config["sensors"]), "mode": config["mode"],
                     "mean": record["mean"], "std": record["std"]})
    if not rows:
        raise InsufficientDataError("no fusion runs for the fusion table")
    frame = pd.DataFrame(rows).drop_duplicates(["combination", "mode"], keep="last")

    marks = {"best": BEST_MARK, "near": NEAR_BEST_MARK, "": ""}
    cells = []
    for _, group in frame.groupby("combination", sort=False):
        flags = mark_near_best(list(group["mean"]), list(group["std"]))
        for (_, row), flag in zip(group.iterrows(), flags):
            cells.append({"combination": row["combination"], "mode": row["mode"],
                          "cell": format_cell(row["mean"], row["std"]) + marks[flag]})
    cell_frame = pd.DataFrame(cells)
    table = cell_frame.pivot(index="combination", columns="mode", values="cell")
    modes = [mode.value for mode in FusionMode if mode.value in table.columns]
    table = table.reindex(index=list(dict.fromkeys(frame["combination"])), columns=modes)
    return table.fillna("")


_TABLE_BUILDERS = {
    "per_sensor": per_sensor_table,
    "preprocessing": preprocessing_table,
    "fusion": fusion_table,
}


def write_table(table: str, records: Sequence[Dict[str, Any]], out_dir: Union[str, Path]) -> Path:
    if table not in _TABLE_BUILDERS:
        raise ConfigurationError(f"unknown table family '{table}'")
    frame = _TABLE_BUILDERS[table](records)
    path = Path(out_dir) / TABLE_FILES[table]
    frame.to_csv(path, encoding="utf-8")
    logger.info("Wrote %s (%d × %d)", path, *frame.shape)
    return path


# --- Influence of each choice ---

@dataclass(frozen=True)
class Switch:
    """A one-factor change: records matching `source` compared with their counterpart."""
    name_from: str
    name_to: str
    field: str
    source: str
    target: str


INFLUENCE_SWITCHES: Tuple[Switch, ...] = (
    Switch("Gyr_y", "|Acc|", "sensor", "Gyr_y", "Acc_norm"),
    Switch("|Mag|", "|Acc|", "sensor", "Mag_norm", "Acc_norm"),
    Switch("Ori_w", "|Acc|", "sensor", "Ori_w", "Acc_norm"),
    Switch("spectrogram raw power", "spectrogram log power", "power", "linear", "log"),
    Switch("550x250 spectrogram (log power)", "48x48 spectrogram (linear interp., log power)",
           "recipe", "spectrogram-full-log", "spectrogram-linfreq-log"),
    Switch("550x250 spectrogram (log power)", "48x48 spectrogram (log interp., log power)",
           "recipe", "spectrogram-full-log", "spectrogram-logfreq-log"),
    Switch("raw (temporal) data", "48x48 spectrogram (log interp., log power)",
           "recipe", "temporal", "spectrogram-logfreq-log"),
)
FUSION_SWITCH = ("Median fusion method", "Best fusion method")


def _settings_key(config: Dict[str, Any]) -> str:
    return json.dumps([config.get("settings", {}), config.get("data", "")], sort_keys=True)


def _run_key(sensors, recipe, mode, settings_key) -> Tuple:
    return (tuple(sensors), recipe, mode, settings_key)


def _counterpart(switch: Switch, config: Dict[str, Any]) -> Optional[Tuple]:
    """Key of the run that differs from `config` only by the switch, or None when not a source."""
    sensors, recipe, mode = list(config["sensors"]), config["recipe"], config["mode"]
    if switch.field == "sensor":
        if mode != BASELINE or sensors != [switch.source]:
            return None
        sensors = [switch.target]
    elif switch.field == "power":
        suffix = f"-{switch.source}"
        if not recipe.startswith("spectrogram-") or not recipe.endswith(suffix):
            return None
        recipe = recipe[:-len(suffix)] + f"-{switch.target}"
    else:
        if recipe != switch.source:
            return None
        recipe = switch.target
    return _run_key(sensors, recipe, mode, _settings_key(config))


def summarize_influence(records: Sequence[Dict[str, Any]],
                        threshold: float = LEARNING_THRESHOLD) -> pd.DataFrame:
    """
    Mean F1 gain (percentage points) of each one-factor switch over all
    matched pairs, leaving out pairs where either run scored below the
    threshold. A switch without any source run in the results is omitted.

    Raises:
        InsufficientDataError: a source run has no counterpart, or no switch applies.
    """
    by_key = {}
    for record in records:
        config = _config(record)
        by_key[_run_key(config["sensors"], config["recipe"], config["mode"],
                        _settings_key(config))] = record

    rows = []
    for switch in INFLUENCE_SWITCHES:
        gains, sources = [], 0
        for record in records:
            target_key = _counterpart(switch, _config(record))
            if target_key is None:
                continue
            sources += 1
            if target_key not in by_key:
                raise InsufficientDataError(
                    f"switch '{switch.name_from}' -> '{switch.name_to}': no counterpart run "
                    f"for {target_key[0]} {target_key[1]} {target_key[2]}")
            target = by_key[target_key]
            if record["mean"] < threshold or target["mean"] < threshold:
                logger.debug("Excluded from '%s': F1 below %.0f%%", switch.name_to, 100 * threshold)
                continue
            gains.append(100 * (target["mean"] - record["mean"]))
        if sources:
            rows.append({"from": switch.name_from, "to": switch.name_to,
                         "gain": round(float(np.mean(gains)), 2) if gains else float("nan"),
                         "pairs": len(gains)})

    fusion_gains = []
    groups: Dict[Tuple, List[float]] = {}
    for record in records:
        config = _config(record)
        if config.get("mode") == BASELINE or record["mean"] < threshold:
            continue
        key = (tuple(config["sensors"]), config["recipe"], _settings_key(config))
        groups.setdefault(key, []).append(record["mean"])
    for means in groups.values():
        if len(means) > 1:
            fusion_gains.append(100 * (max(means) - median(means)))
    if fusion_gains:
        rows.append({"from": FUSION_SWITCH[0], "to": FUSION_SWITCH[1],
                     "gain": round(float(np.mean(fusion_gains)), 2), "pairs": len(fusion_gains)})

    if not rows:
        raise InsufficientDataError("no one-factor switch can be evaluated from these results")
    return pd.DataFrame(rows, columns=["from", "to", "gain", "pairs"])


def write_influence(results_dir: Union[str, Path]) -> Path:
    frame = summarize_influence(read_records(results_dir))
    path = Path(results_dir) / INFLUENCE_FILE
    frame.to_csv(path, index=False, encoding="utf-8")
    logger.info("Wrote %s (%d switches)", path, len(frame))
    return path


# --- Average spectrum ---

def average_spectrum_frame(recordings: Sequence[RawRecording], selector: ChannelSelector,
                           sample_rate: int = dsp.SAMPLE_RATE) -> pd.DataFrame:
    """Frequency column plus one mean power spectrum column per class present."""
    signals = [select_channels(recording, [selector])[0].values for recording in recordings]
    labels = [int(assign_label(recording)) for recording in recordings]
    freqs, spectra = dsp.class_average_spectrum(signals, labels, sample_rate)
    columns = {"frequency_hz": freqs}
    for label in sorted(spectra):
        columns[ClassLabel(label).display_name] = spectra[label]
    return pd.DataFrame(columns)


def write_average_spectrum(recordings: Sequence[RawRecording], selector: ChannelSelector,
                           out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / f"average_spectrum_{selector.key}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    average_spectrum_frame(recordings, selector).to_csv(path, index=False, encoding="utf-8")
    logger.info("Wrote %s", path)
    return path
