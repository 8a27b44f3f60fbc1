"""
dsp.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Signal preprocessing for the transport-mode networks:
    - Euclidean norm across sensor axes
    - FFT power spectrum (full length, so 1-D inputs keep 6000 points)
    - STFT spectrogram (5 s window, 4.9 s overlap, window from scipy)
    - time/frequency rescaling to small images (linear or log-frequency axis)
    - log power
    - the eight named preprocessing recipes, and per-class average spectra
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from src.config import DspSettings
from src.errors import ConfigurationError, EngineStateError, NumericError

logger = logging.getLogger(__name__)

SAMPLE_RATE = 100
SAMPLE_LENGTH = 6000
FULL_SIZE = (550, 250)


@dataclass(frozen=True)
class Signal:
    values: np.ndarray
    channel_id: str = ""
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1 or values.size == 0:
            raise ConfigurationError(f"signal {self.channel_id!r} must be a non-empty vector")
        if not np.isfinite(values).all():
            raise NumericError(f"signal {self.channel_id!r} contains non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Spectrogram:
    """Power image [T frames, F bins] with its axes and scale flags."""
    power: np.ndarray
    frame_times: np.ndarray
    bin_freqs: np.ndarray
    power_scale: str = "linear"
    freq_axis: str = "none"

    def __post_init__(self):
        frames, bins = self.power.shape
        if frames != self.frame_times.size or bins != self.bin_freqs.size:
            raise ConfigurationError(
                f"spectrogram {self.power.shape} does not match its axes "
                f"({self.frame_times.size} frames, {self.bin_freqs.size} bins)")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.power.shape


@dataclass(frozen=True)
class Representation:
    kind: str
    tensor: np.ndarray
    provenance: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class Recipe:
    name: str
    kind: str
    freq_mode: Optional[str] = None
    power_scale: str = "linear"
    size: Tuple[int, ...] = (SAMPLE_LENGTH,)

    @property
    def is_image(self) -> bool:
        return self.kind == "spectrogram"


RECIPES: Dict[str, Recipe] = {
    recipe.name: recipe for recipe in (
        Recipe("temporal", "temporal"),
        Recipe("fft", "fft"),
        Recipe("spectrogram-full-linear", "spectrogram", None, "linear", FULL_SIZE),
        Recipe("spectrogram-full-log", "spectrogram", None, "log", FULL_SIZE),
        Recipe("spectrogram-linfreq-linear", "spectrogram", "linear", "linear", (48, 48)),
        Recipe("spectrogram-linfreq-log", "spectrogram", "linear", "log", (48, 48)),
        Recipe("spectrogram-logfreq-linear", "spectrogram", "log", "linear", (48, 48)),
        Recipe("spectrogram-logfreq-log", "spectrogram", "log", "log", (48, 48)),
    )
}

_INTERPOLATION_ALIASES = {
    "none": None, "": None,
    "linear": "linear", "lin": "linear", "lin-freq": "linear", "linfreq": "linear",
    "log": "log", "log-freq": "log", "logfreq": "log",
}


def parse_recipe(name: Union[str, Recipe]) -> Recipe:
    """
    Accepts the short names of RECIPES or the table form
    "spectrogram / log-freq / log / 48,48" (mode / interpolation / power / size).
    """
    if isinstance(name, Recipe):
        return name
    text = str(name).strip().lower()
    if text in RECIPES:
        return RECIPES[text]
    parts = [part.strip() for part in text.split("/")]
    if parts[0] in ("temporal", "fft") and len(parts) == 1:
        return RECIPES[parts[0]]
    if parts[0] == "spectrogram" and len(parts) in (3, 4):
        interpolation = _INTERPOLATION_ALIASES.get(parts[1], "?")
        power = parts[2]
        if interpolation != "?" and power in ("linear", "log"):
            size = tuple(int(v) for v in parts[3].replace(" ", "").split(",")) if len(parts) == 4 else None
            for recipe in RECIPES.values():
                if (recipe.is_image and recipe.freq_mode == interpolation
                        and recipe.power_scale == power and (size is None or recipe.size == size)):
                    return recipe
    raise ConfigurationError(
        f"unknown recipe '{name}'; expected one of {', '.join(RECIPES)}")


def _values(signal: Union[Signal, np.ndarray, Sequence[float]], dtype=np.float32) -> np.ndarray:
    if isinstance(signal, Signal):
        return signal.values
    values = np.asarray(signal, dtype=dtype)
    if not np.isfinite(values).all():
        raise NumericError("signal contains non-finite values")
    return values


def euclidean_norm(channels: Sequence[Union[Signal, np.ndarray]], channel_id: str = "") -> Signal:
    """Per-timestep magnitude across the given axes."""
    if not channels:
        raise ConfigurationError("euclidean_norm needs at least one channel")
    arrays = [_values(channel) for channel in channels]
    lengths = {array.size for array in arrays}
    if len(lengths) != 1:
        raise ConfigurationError(f"channel lengths differ: {sorted(lengths)}")
    stacked = np.stack(arrays).astype(np.float64)
    magnitude = np.sqrt(np.square(stacked).sum(axis=0))
    return Signal(magnitude.astype(np.float32), channel_id)


def power_spectrum(signal: Union[Signal, np.ndarray], dtype=np.float32) -> np.ndarray:
    """
    |DFT|² over the full length; the length of the input is preserved.
    Raw arrays are read and returned as `dtype` (float64 for exact checks).
    """
    values = _values(signal, dtype).astype(np.float64)
    spectrum = np.fft.fft(values)
    return (spectrum.real ** 2 + spectrum.imag ** 2).astype(dtype)


def stft(signal: Union[Signal, np.ndarray], window_s: float = 5.0, overlap_s: float = 4.9,
         window_fn: str = "hann", sample_rate: int = SAMPLE_RATE) -> Spectrogram:
    """
    Moving-window power spectrogram. A 6000-point signal gives 551 frames of
    251 bins (0 Hz to Nyquist inclusive) with the default 500/10 geometry.
    """
    values = _values(signal).astype(np.float64)
    window_len = int(round(window_s * sample_rate))
    hop = int(round((window_s - overlap_s) * sample_rate))
    if hop < 1:
        raise ConfigurationError(f"overlap {overlap_s}s leaves no hop for a {window_s}s window")
    if window_len > values.size:
        raise ConfigurationError(
            f"window of {window_len} samples is longer than the signal ({values.size})")
    frames = sliding_window_view(values, window_len)[::hop]
    taper = get_window(window_fn, window_len)
    spectrum = np.fft.rfft(frames * taper, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    frame_times = (np.arange(frames.shape[0]) * hop + window_len / 2) / sample_rate
    bin_freqs = np.fft.rfftfreq(window_len, d=1.0 / sample_rate)
    return Spectrogram(power.astype(np.float32), frame_times, bin_freqs)


def trim_full_size(spec: Spectrogram, size: Tuple[int, int] = FULL_SIZE) -> Spectrogram:
    """Drop trailing frames/bins (the last frame and the Nyquist bin by default)."""
    frames, bins = size
    if spec.shape[0] < frames or spec.shape[1] < bins:
        raise ConfigurationError(f"spectrogram {spec.shape} is smaller than {size}")
    return replace(spec, power=spec.power[:frames, :bins],
                   frame_times=spec.frame_times[:frames], bin_freqs=spec.bin_freqs[:bins])


def log_power(spec: Spectrogram, eps: float = 1e-10) -> Spectrogram:
    if spec.power_scale == "log":
        raise EngineStateError("log power was already applied to this spectrogram")
    power = np.log(spec.power.astype(np.float64) + eps).astype(np.float32)
    return replace(spec, power=power, power_scale="log")


def _resample(values: np.ndarray, source: np.ndarray, queries: np.ndarray, axis: int) -> np.ndarray:
    return np.apply_along_axis(lambda line: np.interp(queries, source, line), axis, values)


def rescale(spec: Spectrogram, target: Tuple[int, int] = (48, 48), freq_mode: str = "linear",
            f_min: float = 0.2, f_max: Optional[float] = None) -> Spectrogram:
    """
    Resample to `target` (frames, bins). Time is resampled linearly; the
    frequency axis is queried uniformly in Hz ("linear") or in log-Hz between
    f_min and f_max ("log", f_max defaults to the top bin, i.e. Nyquist).
    """
    frames, bins = target
    if frames > spec.shape[0] or bins > spec.shape[1]:
        raise ConfigurationError(f"target {target} is larger than the spectrogram {spec.shape}")
    if freq_mode == "linear":
        freq_queries = np.linspace(spec.bin_freqs[0], spec.bin_freqs[-1], bins)
    elif freq_mode == "log":
        top = spec.bin_freqs[-1] if f_max is None else f_max
        if not 0 < f_min < top:
            raise ConfigurationError(f"log-frequency range needs 0 < f_min < f_max, got {f_min}, {top}")
        freq_queries = np.geomspace(f_min, top, bins)
    else:
        raise ConfigurationError(f"unknown frequency mode '{freq_mode}'")
    time_queries = np.linspace(spec.frame_times[0], spec.frame_times[-1], frames)
    power = spec.power.astype(np.float64)
    power = _resample(power, spec.frame_times, time_queries, axis=0)
    power = _resample(power, spec.bin_freqs, freq_queries, axis=1)
    return Spectrogram(power.astype(np.float32), time_queries, freq_queries,
                       power_scale=spec.power_scale, freq_axis=freq_mode)


def preprocess(signal: Signal, recipe, settings: Optional[DspSettings] = None) -> Representation:
    """Apply one named recipe; spectrograms run STFT, then rescale, then log."""
    settings = settings or DspSettings()
    recipe = parse_recipe(recipe)
    provenance = {"recipe": recipe.name, "channel": getattr(signal, "channel_id", "")}
    if recipe.kind == "temporal":
        tensor = _values(signal)[None, :].copy()
    elif recipe.kind == "fft":
        tensor = power_spectrum(signal)[None, :]
    else:
        spec = stft(signal, settings.window_seconds, settings.overlap_seconds,
                    settings.window, settings.sample_rate)
        if recipe.freq_mode is None:
            spec = trim_full_size(spec, recipe.size)
        else:
            size = tuple(settings.image_size)
            spec = rescale(spec, size, recipe.freq_mode, f_min=settings.f_min)
        if recipe.power_scale == "log":
            spec = log_power(spec, settings.log_eps)
        tensor = spec.power[None, :, :]
        provenance.update(window_s=settings.window_seconds, overlap_s=settings.overlap_seconds,
                          window=settings.window, freq_mode=recipe.freq_mode,
                          power_scale=recipe.power_scale, f_min=settings.f_min,
                          log_eps=settings.log_eps)
    return Representation(recipe.kind, np.ascontiguousarray(tensor, dtype=np.float32), provenance)


def representation_shape(recipe, settings: Optional[DspSettings] = None) -> Tuple[int, ...]:
    """Network input shape a recipe produces."""
    settings = settings or DspSettings()
    recipe = parse_recipe(recipe)
    if recipe.is_image and recipe.freq_mode is not None:
        return (1,) + tuple(settings.image_size)
    return (1,) + tuple(recipe.size)


def class_average_spectrum(signals: Sequence[np.ndarray], labels: Sequence[int],
                           sample_rate: int = SAMPLE_RATE
                           ) -> Tuple[np.ndarray, Mapping[int, np.ndarray]]:
    """
    Mean one-sided power spectrum per class, each signal's mean removed
    first so the DC bin does not dominate.

    Returns:
        (frequencies in Hz, {label: mean spectrum})
    """
    labels = np.asarray(labels)
    if len(signals) != labels.size or labels.size == 0:
        raise ConfigurationError("class_average_spectrum needs one label per signal")
    matrix = np.stack([_values(signal).astype(np.float64) for signal in signals])
    matrix -= matrix.mean(axis=1, keepdims=True)
    spectra = np.abs(np.fft.rfft(matrix, axis=1)) ** 2
    freqs = np.fft.rfftfreq(matrix.shape[1], d=1.0 / sample_rate)
    return freqs, {int(label): spectra[labels == label].mean(axis=0)
                   for label in np.unique(labels)}
