"""
dataset.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Recordings in the SHL 2018 challenge layout and everything derived from
    them:
    - class labels and (sensor, axis) channel selectors
    - loading/writing SHL directories (one text file per channel, one line
      per 60 s recording, 6000 values per line)
    - labelling at t = 30 s and the chronological train/validation split
    - a seeded synthetic generator with the same layout
    - stacked network inputs per sensor, and the held-out test set whose
      labels can only be read inside held_out_access()
"""

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.signal import butter, sosfilt
from scipy.spatial.transform import Rotation

from src import dsp
from src.config import DspSettings, load_manifest
from src.errors import (ConfigurationError, DatasetFormatError, HeldOutAccessError,
                        InsufficientDataError, MissingDatasetError)

logger = logging.getLogger(__name__)

SAMPLE_LENGTH = dsp.SAMPLE_LENGTH
LABEL_INDEX = 3000
LABEL_CHANNEL = "Label"

VAL_COUNT = 3000
TRAIN_COUNT = 13000
REFERENCE_TOTAL = 16310
FULL_SPLIT_MINIMUM = 16000

T = TypeVar("T")


class ClassLabel(IntEnum):
    STILL = 1
    WALK = 2
    RUN = 3
    BIKE = 4
    CAR = 5
    BUS = 6
    TRAIN = 7
    SUBWAY = 8

    @property
    def display_name(self) -> str:
        return self.name.capitalize()


N_CLASSES = len(ClassLabel)

XYZ_SENSORS = ("Acc", "Gra", "LAcc", "Gyr", "Mag")
SENSORS = XYZ_SENSORS + ("Ori", "Pressure")
CHANNELS = tuple(f"{sensor}_{axis}" for sensor in XYZ_SENSORS for axis in "xyz") + \
    ("Ori_w", "Ori_x", "Ori_y", "Ori_z", "Pressure")


@dataclass(frozen=True)
class ChannelSelector:
    """One cell of the per-sensor grid: a sensor and one axis or its norm."""
    sensor: str
    axis: str

    def __post_init__(self):
        valid = valid_axes(self.sensor)
        if self.axis not in valid:
            raise ConfigurationError(
                f"({self.sensor}, {self.axis}) is not a valid channel; "
                f"{self.sensor} accepts {', '.join(valid) or 'nothing'}")

    @classmethod
    def parse(cls, text: str) -> "ChannelSelector":
        """'Acc_norm', '|Acc|', 'Gyr_y', 'Ori_w' or 'Pressure'."""
        text = str(text).strip()
        if text.startswith("|") and text.endswith("|"):
            return cls(text[1:-1], "norm")
        if text == "Pressure":
            return cls("Pressure", "z")
        sensor, _, axis = text.rpartition("_")
        if not sensor:
            raise ConfigurationError(f"cannot parse channel selector '{text}'")
        return cls(sensor, axis)

    @property
    def label(self) -> str:
        if self.sensor == "Pressure":
            return "Pressure"
        return f"|{self.sensor}|" if self.axis == "norm" else f"{self.sensor}_{self.axis}"

    @property
    def key(self) -> str:
        """Stable identifier used in configs and results ('Acc_norm')."""
        return "Pressure" if self.sensor == "Pressure" else f"{self.sensor}_{self.axis}"

    @property
    def required_channels(self) -> Tuple[str, ...]:
        if self.sensor == "Pressure":
            return ("Pressure",)
        if self.axis == "norm":
            axes = "xyzw" if self.sensor == "Ori" else "xyz"
            return tuple(f"{self.sensor}_{axis}" for axis in axes)
        return (f"{self.sensor}_{self.axis}",)


def valid_axes(sensor: str) -> Tuple[str, ...]:
    if sensor in XYZ_SENSORS:
        return ("x", "y", "z", "norm")
    if sensor == "Ori":
        return ("x", "y", "z", "w", "norm")
    if sensor == "Pressure":
        # single channel, shown in the z row of the grid
        return ("z",)
    return ()


def selector_grid() -> List[ChannelSelector]:
    """All 26 populated cells of the per-sensor table."""
    return [ChannelSelector(sensor, axis) for sensor in SENSORS for axis in valid_axes(sensor)]


@dataclass(frozen=True)
class RawRecording:
    channels: Mapping[str, np.ndarray]
    labels: np.ndarray
    order_index: int = 0

    def __post_init__(self):
        for channel_id, values in self.channels.items():
            if len(values) != SAMPLE_LENGTH:
                raise ConfigurationError(
                    f"channel {channel_id} has {len(values)} values, expected {SAMPLE_LENGTH}")
        if len(self.labels) != SAMPLE_LENGTH:
            raise ConfigurationError(f"labels have {len(self.labels)} values, expected {SAMPLE_LENGTH}")

    def signal(self, channel_id: str) -> dsp.Signal:
        if channel_id not in self.channels:
            raise ConfigurationError(f"recording {self.order_index} has no channel {channel_id}")
        return dsp.Signal(self.channels[channel_id], channel_id)


@dataclass(frozen=True)
class LabeledSample:
    signals: List[dsp.Signal]
    label: ClassLabel


def assign_label(recording: RawRecording) -> ClassLabel:
    """The mode at t = 30 s, i.e. the label at index 3000."""
    code = int(recording.labels[LABEL_INDEX])
    try:
        return ClassLabel(code)
    except ValueError as exc:
        raise ConfigurationError(
            f"recording {recording.order_index}: invalid label code {code} at index {LABEL_INDEX}"
        ) from exc


def select_channels(recording: RawRecording, selectors: Sequence[ChannelSelector]) -> List[dsp.Signal]:
    signals = []
    for selector in selectors:
        if selector.axis == "norm":
            parts = [recording.signal(channel) for channel in selector.required_channels]
            signals.append(dsp.euclidean_norm(parts, selector.key))
        else:
            signal = recording.signal(selector.required_channels[0])
            signals.append(dsp.Signal(signal.values, selector.key))
    return signals


def labeled_sample(recording: RawRecording, selectors: Sequence[ChannelSelector]) -> LabeledSample:
    return LabeledSample(select_channels(recording, selectors), assign_label(recording))


def chronological_split(recordings: Sequence[T], n_val: Optional[int] = None,
                        n_train: Optional[int] = None) -> Tuple[List[T], List[T]]:
    """
    (train, val): validation is the first block, training the last block,
    whatever lies between is discarded. Defaults are 3000/13000 for full-size
    data, otherwise the same proportions of 16310.
    """
    total = len(recordings)
    if n_val is None and n_train is None:
        if total >= FULL_SPLIT_MINIMUM:
            n_val, n_train = VAL_COUNT, TRAIN_COUNT
        else:
            n_val = total * VAL_COUNT // REFERENCE_TOTAL
            n_train = total * TRAIN_COUNT // REFERENCE_TOTAL
    elif n_val is None or n_train is None:
        raise ConfigurationError("give both n_val and n_train, or neither")
    if n_val < 1 or n_train < 1 or n_val + n_train > total:
        raise InsufficientDataError(
            f"cannot split {total} recordings into {n_val} validation and {n_train} training")
    validation = list(recordings[:n_val])
    training = list(recordings[total - n_train:])
    return training, validation


# --- SHL text files ---

def _scan_channel_file(path: Path, width: int) -> np.ndarray:
    """Line-by-line parse that reports the first malformed line."""
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != width:
                raise DatasetFormatError(path.name, line_number,
                                         f"expected {width} fields, found {len(fields)}")
            try:
                row = np.array(fields, dtype=np.float64)
            except ValueError as exc:
                raise DatasetFormatError(path.name, line_number, f"unparseable value ({exc})") from exc
            if not np.isfinite(row).all():
                raise DatasetFormatError(path.name, line_number, "non-finite value")
            rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(-1, width)


def read_channel_file(path: Path, width: int = SAMPLE_LENGTH) -> np.ndarray:
    """Fast pandas parse, falling back to the line scan for diagnostics."""
    try:
        frame = pd.read_csv(path, sep=r"\s+", header=None, dtype=np.float64)
        values = frame.to_numpy()
        if values.shape[1] == width and np.isfinite(values).all():
            return values
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError):
        pass
    return _scan_channel_file(path, width)


def load_shl_directory(path: Union[str, Path], manifest: Optional[Mapping[str, str]] = None,
                       channels: Optional[Iterable[str]] = None, jobs: int = 4) -> List[RawRecording]:
    """
    Load one split directory. Only the listed channels (default: all) and the
    label file are parsed, one file per worker thread.
    """
    path = Path(path)
    if not path.is_dir():
        raise MissingDatasetError(path)
    manifest = dict(manifest or load_manifest())
    wanted = list(dict.fromkeys(channels)) if channels is not None else [
        channel for channel in manifest if channel != LABEL_CHANNEL]
    unknown = [channel for channel in wanted if channel not in manifest]
    if unknown:
        raise ConfigurationError(f"channels missing from the manifest: {', '.join(unknown)}")
    file_ids = wanted + [LABEL_CHANNEL]
    files = {channel: path / manifest[channel] for channel in file_ids}
    for channel, file_path in files.items():
        if not file_path.is_file():
            raise MissingDatasetError(path, f"missing {file_path.name}")

    logger.info("Parsing %d SHL files from %s", len(files), path)
    parsed = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(read_channel_file)(files[channel]) for channel in file_ids)
    arrays = dict(zip(file_ids, parsed))

    labels = arrays.pop(LABEL_CHANNEL)
    if not np.array_equal(labels, np.round(labels)):
        raise DatasetFormatError(files[LABEL_CHANNEL].name, 1, "label codes must be integers")
    labels = labels.astype(np.int64)
    count = labels.shape[0]
    for channel, values in arrays.items():
        if values.shape[0] != count:
            line = min(values.shape[0], count) + 1
            raise DatasetFormatError(
                files[channel].name, line,
                f"{values.shape[0]} lines, but {files[LABEL_CHANNEL].name} has {count}")
    channels32 = {channel: values.astype(np.float32) for channel, values in arrays.items()}
    recordings = [RawRecording({channel: values[index] for channel, values in channels32.items()},
                               labels[index], index)
                  for index in range(count)]
    logger.info("Loaded %d recordings (%d channels)", len(recordings), len(channels32))
    return recordings


def write_shl_directory(recordings: Sequence[RawRecording], path: Union[str, Path],
                        manifest: Optional[Mapping[str, str]] = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest or load_manifest())
    if not recordings:
        raise InsufficientDataError("no recordings to write")
    for channel in recordings[0].channels:
        values = np.stack([recording.channels[channel] for recording in recordings])
        np.savetxt(path / manifest[channel], values, fmt="%.9g")
    labels = np.stack([recording.labels for recording in recordings])
    np.savetxt(path / manifest[LABEL_CHANNEL], labels, fmt="%d")
    logger.info("Wrote %d recordings to %s", len(recordings), path)
    return path


# --- Synthetic data ---

@dataclass(frozen=True)
class _ClassProfile:
    tone_hz: float = 0.0           # vertical motion tone (pedestrian classes)
    tone_amplitude: float = 0.0
    band_hz: float = 0.0           # centre of band-limited vibration (vehicles)
    band_amplitude: float = 0.0
    noise: float = 0.05
    gyro: float = 0.02
    mag_disturbance: float = 0.5
    pressure_noise: float = 0.02


PROFILES: Dict[ClassLabel, _ClassProfile] = {
    ClassLabel.STILL: _ClassProfile(noise=0.03, gyro=0.005, mag_disturbance=0.2),
    ClassLabel.WALK: _ClassProfile(tone_hz=2.0, tone_amplitude=2.0, gyro=0.4),
    ClassLabel.RUN: _ClassProfile(tone_hz=3.0, tone_amplitude=6.0, gyro=0.9),
    ClassLabel.BIKE: _ClassProfile(tone_hz=1.0, tone_amplitude=1.5, gyro=0.3, mag_disturbance=1.0),
    ClassLabel.CAR: _ClassProfile(band_hz=12.0, band_amplitude=0.6, gyro=0.05, mag_disturbance=3.0),
    ClassLabel.BUS: _ClassProfile(band_hz=6.0, band_amplitude=0.6, gyro=0.05, mag_disturbance=4.0),
    ClassLabel.TRAIN: _ClassProfile(band_hz=20.0, band_amplitude=0.5, gyro=0.03,
                                    mag_disturbance=8.0, pressure_noise=0.05),
    ClassLabel.SUBWAY: _ClassProfile(band_hz=30.0, band_amplitude=0.5, gyro=0.03,
                                     mag_disturbance=12.0, pressure_noise=0.1),
}

GRAVITY = 9.81
EARTH_FIELD = np.array([20.0, 0.0, -40.0])


def _band_noise(rng: np.random.Generator, centre: float, amplitude: float, n: int) -> np.ndarray:
    sos = butter(4, [centre - 2.0, centre + 2.0], btype="bandpass", fs=dsp.SAMPLE_RATE, output="sos")
    noise = sosfilt(sos, rng.standard_normal(n + 500))[500:]
    return amplitude * noise / noise.std()


def _synthetic_recording(rng: np.random.Generator, label: ClassLabel, order_index: int) -> RawRecording:
    profile = PROFILES[label]
    n = SAMPLE_LENGTH
    t = np.arange(n) / dsp.SAMPLE_RATE

    vertical = rng.normal(0.0, profile.noise, n)
    if profile.tone_hz:
        amplitude = profile.tone_amplitude * rng.uniform(0.8, 1.2)
        vertical += amplitude * np.sin(2 * np.pi * profile.tone_hz * t + rng.uniform(0, 2 * np.pi))
    if profile.band_hz:
        vertical += _band_noise(rng, profile.band_hz, profile.band_amplitude, n)
    horizontal = rng.normal(0.0, profile.noise, (n, 2))
    linear_world = np.column_stack([horizontal, vertical])
    gravity_world = np.tile([0.0, 0.0, GRAVITY], (n, 1))

    attitude = Rotation.random(random_state=rng)
    linear = attitude.apply(linear_world, inverse=True)
    gravity = attitude.apply(gravity_world, inverse=True)
    acc = gravity + linear

    gyr = rng.normal(0.0, profile.gyro, (n, 3))
    if profile.tone_hz:
        sway = profile.gyro * np.sin(2 * np.pi * profile.tone_hz * t)
        gyr += sway[:, None] * rng.uniform(0.5, 1.0, 3)

    disturbance = profile.mag_disturbance * np.cumsum(rng.normal(0.0, 0.05, (n, 3)), axis=0)
    disturbance -= disturbance.mean(axis=0)
    mag = attitude.apply(np.tile(EARTH_FIELD, (n, 1)) + disturbance, inverse=True)

    quat_xyzw = attitude.as_quat()
    orientation = np.tile(quat_xyzw, (n, 1)) + rng.normal(0.0, 1e-4, (n, 4))
    orientation /= np.linalg.norm(orientation, axis=1, keepdims=True)

    pressure = 1013.0 + rng.normal(0.0, 1.0) + np.cumsum(rng.normal(0.0, profile.pressure_noise, n)) * 0.01

    channels = {}
    for sensor, values in (("Acc", acc), ("Gra", gravity), ("LAcc", linear), ("Gyr", gyr), ("Mag", mag)):
        for axis_index, axis in enumerate("xyz"):
            channels[f"{sensor}_{axis}"] = values[:, axis_index].astype(np.float32)
    for axis_index, axis in enumerate("xyzw"):
        channels[f"Ori_{axis}"] = orientation[:, axis_index].astype(np.float32)
    channels["Pressure"] = pressure.astype(np.float32)
    return RawRecording(channels, np.full(n, int(label), dtype=np.int64), order_index)


def generate_synthetic(seed: int, n_per_class: int) -> List[RawRecording]:
    """
    Desk-scale dataset in the SHL layout. Classes are interleaved so any
    chronological block is balanced; output is a pure function of the seed.
    """
    if n_per_class < 1:
        raise ConfigurationError(f"n_per_class must be >= 1, got {n_per_class}")
    rng = np.random.default_rng(seed)
    recordings = []
    for _ in range(n_per_class):
        for label in ClassLabel:
            recordings.append(_synthetic_recording(rng, label, len(recordings)))
    logger.info("Generated %d synthetic recordings (seed %d)", len(recordings), seed)
    return recordings


# --- Network inputs ---

@dataclass
class LabeledArrays:
    """Stacked representations, one array [n, *shape] per sensor, 0-based labels."""
    inputs: List[np.ndarray]
    labels: np.ndarray
    sensors: List[str] = field(default_factory=list)
    recipe: str = ""

    def __len__(self):
        return int(self.labels.size)

    @property
    def input_shapes(self) -> List[Tuple[int, ...]]:
        return [tuple(array.shape[1:]) for array in self.inputs]

    def subset(self, indices) -> "LabeledArrays":
        return LabeledArrays([array[indices] for array in self.inputs], self.labels[indices],
                             list(self.sensors), self.recipe)

    def concat(self, other: "LabeledArrays") -> "LabeledArrays":
        return LabeledArrays([np.concatenate([a, b]) for a, b in zip(self.inputs, other.inputs)],
                             np.concatenate([self.labels, other.labels]),
                             list(self.sensors), self.recipe)


def _represent(recording: RawRecording, selectors, recipe, settings) -> List[np.ndarray]:
    return [dsp.preprocess(signal, recipe, settings).tensor
            for signal in select_channels(recording, selectors)]


def build_labeled_arrays(recordings: Sequence[RawRecording], selectors: Sequence[ChannelSelector],
                         recipe, settings: Optional[DspSettings] = None,
                         jobs: int = 1) -> LabeledArrays:
    if not recordings:
        raise InsufficientDataError("no recordings to preprocess")
    if not selectors:
        raise ConfigurationError("at least one channel selector is required")
    recipe = dsp.parse_recipe(recipe)
    per_recording = Parallel(n_jobs=jobs, prefer="threads")(
        delayed(_represent)(recording, selectors, recipe, settings) for recording in recordings)
    inputs = [np.stack([tensors[index] for tensors in per_recording])
              for index in range(len(selectors))]
    labels = np.array([assign_label(recording) - 1 for recording in recordings], dtype=np.int64)
    return LabeledArrays(inputs, labels, [selector.key for selector in selectors], recipe.name)


# --- Held-out test set ---

_HELD_OUT_OPEN: ContextVar[bool] = ContextVar("held_out_open", default=False)


@contextmanager
def held_out_access():
    """Opens the test labels; only the final test run enters this block."""
    token = _HELD_OUT_OPEN.set(True)
    try:
        yield
    finally:
        _HELD_OUT_OPEN.reset(token)


class HeldOutTestSet:
    def __init__(self, data: LabeledArrays):
        self.inputs = data.inputs
        self.sensors = data.sensors
        self.recipe = data.recipe
        self._labels = data.labels

    def __len__(self):
        return int(self._labels.size)

    @property
    def input_shapes(self):
        return [tuple(array.shape[1:]) for array in self.inputs]

    @property
    def labels(self) -> np.ndarray:
        if not _HELD_OUT_OPEN.get():
            raise HeldOutAccessError("test labels are only readable during the final test run")
        return self._labels
