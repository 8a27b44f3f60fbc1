"""
image_export.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Diagnostic dumps of one preprocessed spectrogram:
    - the raw values as CSV (frequency rows, frame columns)
    - an 8-bit grayscale PGM image, high frequencies on top, encoded with QImage
"""

import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from src import dsp
from src.config import DspSettings
from src.dataset import ChannelSelector, RawRecording, select_channels
from src.errors import ConfigurationError, TmdError

logger = logging.getLogger(__name__)

MID_GRAY = 128


def image_orientation(power: np.ndarray) -> np.ndarray:
    """[frames, bins] -> [bins, frames] with the highest frequency in row 0."""
    return np.ascontiguousarray(np.asarray(power).T[::-1])


def to_gray_levels(values: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant image becomes uniform mid gray."""
    values = np.asarray(values, dtype=np.float64)
    if not np.isfinite(values).all():
        raise ConfigurationError("cannot render non-finite values")
    low, high = values.min(), values.max()
    if high - low <= 0:
        return np.full(values.shape, MID_GRAY, dtype=np.uint8)
    scaled = np.round(255.0 * (values - low) / (high - low))
    return scaled.astype(np.uint8)


def write_pgm(levels: np.ndarray, path: Union[str, Path]) -> Path:
    """Binary PGM (maxval 255) through QImage's Grayscale8 format."""
    try:
        from PyQt6.QtGui import QImage
    except ImportError as exc:
        raise TmdError(f"PyQt6 is required to write PGM images ({exc})") from exc

    levels = np.ascontiguousarray(levels, dtype=np.uint8)
    height, width = levels.shape
    buffer = levels.tobytes()
    image = QImage(buffer, width, height, width, QImage.Format.Format_Grayscale8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not image.save(str(path), "PGM"):
        raise TmdError(f"could not write {path}")
    return path


def dump_spectrogram(recording: RawRecording, selector: ChannelSelector, recipe,
                     out_dir: Union[str, Path], settings: Optional[DspSettings] = None,
                     index: int = 0) -> Tuple[Path, Path]:
    """
    Preprocess one recording with an image recipe and write
    `spectrogram_<index>_<channel>_<recipe>.csv` and `.pgm`.

    Raises:
        ConfigurationError: the recipe does not produce an image.
    """
    recipe = dsp.parse_recipe(recipe)
    if not recipe.is_image:
        raise ConfigurationError(f"recipe '{recipe.name}' does not produce an image")
    signal = select_channels(recording, [selector])[0]
    representation = dsp.preprocess(signal, recipe, settings)
    image = image_orientation(representation.tensor[0])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"spectrogram_{index}_{selector.key}_{recipe.name}"
    csv_path = out_dir / f"{stem}.csv"
    pd.DataFrame(image).to_csv(csv_path, index=False, header=False)
    pgm_path = write_pgm(to_gray_levels(image), out_dir / f"{stem}.pgm")
    logger.info("Wrote %s and %s (%d x %d)", csv_path.name, pgm_path.name, *image.shape)
    return csv_path, pgm_path
