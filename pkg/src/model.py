"""
model.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Single-sensor baseline networks: three convolution + ReLU + max-pool
    stages, a flatten step and two fully-connected layers.
    - 2-D variant for spectrogram images ([C,48,48], [C,550,250], and the
      concatenated images of early fusion)
    - 1-D variant (kernel length 3) for temporal and FFT vectors
    The feature-stack and head builders are shared with the fusion module so
    a one-sensor fusion graph is built layer for layer like the baseline.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from src import tensor_engine as te
from src.config import ModelSettings
from src.errors import ConfigurationError
from src.graph import Conv1d, Conv2d, Dense, MaxPool, ModelGraph, ReLU, Sequential

logger = logging.getLogger(__name__)

POOL_CANDIDATES_2D = ((2, 2, 2), (2, 5, 5))
POOL_CANDIDATES_1D = ((4, 4, 5),)


@dataclass(frozen=True)
class BaselineConfig:
    input_shape: Tuple[int, ...]
    conv_widths: Tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 3
    hidden_width: int = 128
    n_classes: int = 8
    pool_factors: Tuple[int, ...] = ()

    @classmethod
    def from_settings(cls, input_shape: Sequence[int], settings: ModelSettings) -> "BaselineConfig":
        return cls(input_shape=tuple(input_shape), conv_widths=tuple(settings.conv_widths),
                   kernel_size=settings.kernel_size, hidden_width=settings.hidden_width,
                   n_classes=settings.n_classes, pool_factors=tuple(settings.pool_factors))

    @property
    def dims(self) -> int:
        return len(self.input_shape) - 1

    @property
    def in_channels(self) -> int:
        return self.input_shape[0]

    def with_input(self, input_shape: Sequence[int]) -> "BaselineConfig":
        return BaselineConfig(tuple(input_shape), self.conv_widths, self.kernel_size,
                              self.hidden_width, self.n_classes, self.pool_factors)


def choose_pool_factors(spatial: Sequence[int], configured: Sequence[int] = ()) -> Tuple[int, ...]:
    """First pooling chain whose product divides every spatial dimension."""
    if configured:
        candidates = (tuple(configured),)
    else:
        candidates = POOL_CANDIDATES_2D if len(spatial) == 2 else POOL_CANDIDATES_1D
    for factors in candidates:
        product = int(np.prod(factors))
        if all(size % product == 0 and size // product > 0 for size in spatial):
            return tuple(factors)
    raise ConfigurationError(
        f"input size {tuple(spatial)} is not divisible by any pooling chain "
        f"({', '.join(str(c) for c in candidates)})")


def build_feature_stack(graph: ModelGraph, prefix: str, cfg: BaselineConfig
                        ) -> Tuple[Sequential, Tuple[int, ...]]:
    """Three conv stages; returns the stack and its output shape [C, *spatial]."""
    if cfg.dims not in (1, 2):
        raise ConfigurationError(f"unsupported input shape {cfg.input_shape}")
    if len(cfg.conv_widths) != 3:
        raise ConfigurationError("the baseline needs exactly three convolution widths")
    spatial = cfg.input_shape[1:]
    factors = choose_pool_factors(spatial, cfg.pool_factors)
    padding = cfg.kernel_size // 2
    conv_type = Conv2d if cfg.dims == 2 else Conv1d
    layers = []
    channels = cfg.in_channels
    for index, (width, k) in enumerate(zip(cfg.conv_widths, factors), start=1):
        layers.append(conv_type(graph, f"{prefix}conv{index}", channels, width,
                                cfg.kernel_size, padding))
        layers.append(ReLU())
        layers.append(MaxPool(k, dims=cfg.dims))
        channels = width
    spatial = tuple(size // int(np.prod(factors)) for size in spatial)
    stack = Sequential(layers)
    graph.add_layer(stack)
    return stack, (channels,) + spatial


def build_head(graph: ModelGraph, prefix: str, in_features: int, cfg: BaselineConfig) -> Sequential:
    if in_features <= 0:
        raise ConfigurationError("flattened feature size must be positive")
    head = Sequential([
        Dense(graph, f"{prefix}dense1", in_features, cfg.hidden_width),
        ReLU(),
        Dense(graph, f"{prefix}dense2", cfg.hidden_width, cfg.n_classes),
    ])
    graph.add_layer(head)
    return head


class Branch:
    """One sensor-specific network: feature stack plus dense head."""

    def __init__(self, graph: ModelGraph, prefix: str, cfg: BaselineConfig):
        self.features, self.feature_shape = build_feature_stack(graph, prefix, cfg)
        self.head = build_head(graph, prefix, int(np.prod(self.feature_shape)), cfg)

    def scores(self, x: te.Tensor) -> te.Tensor:
        return self.head(te.flatten(self.features(x)))


class BaselineGraph(ModelGraph):
    def __init__(self, cfg: BaselineConfig, seed: int = 0, sensors: Sequence[str] = (),
                 mode: str = "Baseline"):
        super().__init__(mode, sensors or ["input"], [cfg.input_shape], cfg.n_classes, seed)
        self.config = cfg
        self.branch = Branch(self, "", cfg)

    def scores(self, inputs) -> te.Tensor:
        return self.branch.scores(self.prepare_inputs(inputs)[0])

    def _forward(self, inputs):
        return te.softmax(self.branch.scores(inputs[0]))


def build_baseline_2d(cfg: BaselineConfig, seed: int = 0,
                      sensors: Optional[Sequence[str]] = None) -> BaselineGraph:
    if cfg.dims != 2:
        raise ConfigurationError(f"2-D baseline needs a [C,H,W] input, got {cfg.input_shape}")
    return BaselineGraph(cfg, seed, sensors or ())


def build_baseline_1d(cfg: BaselineConfig, seed: int = 0,
                      sensors: Optional[Sequence[str]] = None) -> BaselineGraph:
    if cfg.dims != 1:
        raise ConfigurationError(f"1-D baseline needs a [C,L] input, got {cfg.input_shape}")
    return BaselineGraph(cfg, seed, sensors or ())


def build_baseline(cfg: BaselineConfig, seed: int = 0,
                   sensors: Optional[Sequence[str]] = None) -> BaselineGraph:
    builder = build_baseline_2d if cfg.dims == 2 else build_baseline_1d
    graph = builder(cfg, seed, sensors)
    logger.debug("Built baseline for %s: %d parameters", cfg.input_shape, graph.parameter_count())
    return graph
