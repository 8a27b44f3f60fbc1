"""
fusion.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Builders for the thirteen multimodal fusion modes, each producing a
    ModelGraph over N sensor representations:
    - early: TimeConcat, FreqConcat, DepthConcat, BottleneckFilters
    - intermediate: FeatureConcat, SelectiveFusion, Attention
    - late: ProbAverage, ScoreAverage, WeightedProb, WeightedScore,
      GradientBlend, LearnToCombine

    With a single sensor every mode except BottleneckFilters and Attention is
    built layer for layer like the baseline, so it has the same topology,
    parameter count and (for the same seed) output.
"""

import logging
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src import tensor_engine as te
from src.config import FusionSettings, ModelSettings
from src.errors import ConfigurationError, InsufficientDataError
from src.graph import Conv1d, Conv2d, Dense, ModelGraph, ReLU, Sequential
from src.model import BaselineConfig, Branch, build_feature_stack, build_head
from src.tensor_engine import Tensor

logger = logging.getLogger(__name__)


class FusionMode(str, Enum):
    TIME_CONCAT = "TimeConcat"
    FREQ_CONCAT = "FreqConcat"
    DEPTH_CONCAT = "DepthConcat"
    BOTTLENECK_FILTERS = "BottleneckFilters"
    FEATURE_CONCAT = "FeatureConcat"
    SELECTIVE_FUSION = "SelectiveFusion"
    ATTENTION = "Attention"
    PROB_AVERAGE = "ProbAverage"
    SCORE_AVERAGE = "ScoreAverage"
    WEIGHTED_PROB = "WeightedProb"
    WEIGHTED_SCORE = "WeightedScore"
    GRADIENT_BLEND = "GradientBlend"
    LEARN_TO_COMBINE = "LearnToCombine"

    @classmethod
    def parse(cls, name: str) -> "FusionMode":
        wanted = str(name).replace("_", "").replace("-", "").replace(" ", "").lower()
        for mode in cls:
            if mode.value.lower() == wanted:
                return mode
        raise ConfigurationError(f"unknown fusion mode '{name}'")


# Modes that keep extra parameters even with a single sensor
SINGLE_SENSOR_EXCEPTIONS = frozenset({FusionMode.BOTTLENECK_FILTERS, FusionMode.ATTENTION})


# --- Late-fusion combiners ---

def prob_average(probs: Sequence[Tensor]) -> Tensor:
    if len(probs) == 1:
        return probs[0]
    return te.mean(te.stack(probs, axis=0), axis=0)


def score_average(scores: Sequence[Tensor]) -> Tensor:
    """Mean of the logits; the caller applies the softmax."""
    if len(scores) == 1:
        return scores[0]
    return te.mean(te.stack(scores, axis=0), axis=0)


def weighted_sum(values: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Σ_k weights[k] · values[k] for per-sensor scalar weights."""
    stacked = te.stack(values, axis=0)
    shape = (len(values),) + (1,) * (stacked.ndim - 1)
    return te.sum(te.mul(stacked, te.reshape(weights, shape)), axis=0)


def mix_per_sample(values: Sequence[Tensor], coefficients: Tensor) -> Tensor:
    """Σ_k coefficients[b, k] · values[k][b] for per-sample mixing weights [B, N]."""
    stacked = te.stack(values, axis=1)
    shape = coefficients.shape + (1,) * (stacked.ndim - 2)
    return te.sum(te.mul(stacked, te.reshape(coefficients, shape)), axis=1)


def gradient_blend_weights(train_losses, val_losses, floor: float = 1e-3,
                           min_overfit: float = 1e-6) -> np.ndarray:
    """
    Overfitting-aware blend weights from the last two loss checkpoints.

    Args:
        train_losses: array [checkpoints, heads] of training losses.
        val_losses: array [checkpoints, heads] of held-out losses.

    Returns:
        weight_k ∝ ΔG_k / ΔO_k², ΔG the drop of held-out loss and ΔO the growth
        of the held-out/train gap. Heads that did not improve get `floor`; the
        rest share the remaining mass.
    """
    train = np.asarray(train_losses, dtype=np.float64)
    val = np.asarray(val_losses, dtype=np.float64)
    if train.shape != val.shape or train.ndim != 2:
        raise ConfigurationError(
            f"loss histories must be [checkpoints, heads] of equal shape, "
            f"got {train.shape} and {val.shape}")
    if train.shape[0] < 2:
        raise InsufficientDataError(
            f"gradient blend needs at least 2 checkpoints, got {train.shape[0]}")
    gain = val[-2] - val[-1]
    overfit = (val[-1] - train[-1]) - (val[-2] - train[-2])
    overfit = np.maximum(overfit, min_overfit)
    raw = gain / overfit ** 2
    useful = raw > 0
    n_heads = raw.size
    if not useful.any():
        return np.full(n_heads, 1.0 / n_heads)
    weights = np.full(n_heads, floor)
    weights[useful] = raw[useful] / raw[useful].sum() * (1.0 - floor * (~useful).sum())
    return weights


# --- Graphs ---

def _check_same_shapes(mode: FusionMode, shapes: Sequence[Tuple[int, ...]]) -> Tuple[int, ...]:
    if len(set(shapes)) != 1:
        raise ConfigurationError(
            f"{mode.value} needs same-shape inputs, got {', '.join(map(str, shapes))}")
    return shapes[0]


class EarlyFusionGraph(ModelGraph):
    """Inputs concatenated before a single baseline network."""

    def __init__(self, mode: FusionMode, shapes, base: BaselineConfig, seed: int, sensors=()):
        super().__init__(mode.value, sensors, shapes, base.n_classes, seed)
        shape = _check_same_shapes(mode, self.input_shapes)
        dims = len(shape) - 1
        if mode == FusionMode.DEPTH_CONCAT:
            self.axis = 0
        elif mode == FusionMode.TIME_CONCAT or dims == 1:
            self.axis = 1
        else:
            self.axis = 2
        combined = list(shape)
        combined[self.axis] *= self.arity
        self.combined_shape = tuple(combined)
        self.branch = Branch(self, "", base.with_input(self.combined_shape))

    def combine(self, inputs: List[Tensor]) -> Tensor:
        if len(inputs) == 1:
            return inputs[0]
        return te.concat(inputs, axis=self.axis + 1)

    def _forward(self, inputs):
        return te.softmax(self.branch.scores(self.combine(inputs)))


class BottleneckGraph(ModelGraph):
    """Channel-stacked inputs squeezed by a 1x1 convolution, then the baseline."""

    def __init__(self, shapes, base: BaselineConfig, width: int, seed: int, sensors=()):
        super().__init__(FusionMode.BOTTLENECK_FILTERS.value, sensors, shapes, base.n_classes, seed)
        if width < 1:
            raise ConfigurationError(f"bottleneck width must be >= 1, got {width}")
        shape = _check_same_shapes(FusionMode.BOTTLENECK_FILTERS, self.input_shapes)
        channels = shape[0] * self.arity
        conv_type = Conv2d if len(shape) == 3 else Conv1d
        self.bottleneck = conv_type(self, "bottleneck", channels, width, 1, 0)
        self.add_layer(self.bottleneck)
        self.backbone = Branch(self, "backbone.", base.with_input((width,) + shape[1:]))

    def squeeze(self, inputs: List[Tensor]) -> Tensor:
        stacked = inputs[0] if len(inputs) == 1 else te.concat(inputs, axis=1)
        return self.bottleneck(stacked)

    def _forward(self, inputs):
        return te.softmax(self.backbone.scores(self.squeeze(inputs)))


class _StacksAndHead(ModelGraph):
    """Per-sensor feature stacks feeding one shared dense head."""

    def _build_stacks(self, base: BaselineConfig):
        self.stacks = []
        self.feature_shapes = []
        for index, shape in enumerate(self.input_shapes):
            prefix = "" if self.arity == 1 else f"sensor{index}."
            stack, feature_shape = build_feature_stack(self, prefix, base.with_input(shape))
            self.stacks.append(stack)
            self.feature_shapes.append(feature_shape)

    def feature_maps(self, inputs: List[Tensor]) -> List[Tensor]:
        return [stack(x) for stack, x in zip(self.stacks, inputs)]

    @staticmethod
    def pooled_channels(feature_map: Tensor) -> Tensor:
        """Mean over the spatial axes: [B, C, ...] -> [B, C]."""
        return te.mean(feature_map, axis=tuple(range(2, feature_map.ndim)))


class FeatureConcatGraph(_StacksAndHead):
    def __init__(self, shapes, base: BaselineConfig, seed: int, sensors=(),
                 mode: FusionMode = FusionMode.FEATURE_CONCAT):
        super().__init__(mode.value, sensors, shapes, base.n_classes, seed)
        self._build_stacks(base)
        width = sum(int(np.prod(shape)) for shape in self.feature_shapes)
        self.head = build_head(self, "", width, base)

    def fuse(self, maps: List[Tensor]) -> Tensor:
        flat = [te.flatten(feature_map) for feature_map in maps]
        return flat[0] if len(flat) == 1 else te.concat(flat, axis=1)

    def _forward(self, inputs):
        return te.softmax(self.head(self.fuse(self.feature_maps(inputs))))


class SelectiveFusionGraph(FeatureConcatGraph):
    """Feature concatenation with input-dependent sigmoid gates per sensor block."""

    def __init__(self, shapes, base: BaselineConfig, seed: int, sensors=()):
        super().__init__(shapes, base, seed, sensors, mode=FusionMode.SELECTIVE_FUSION)
        self.gates: List[Dense] = []
        self.forced_gates: Optional[List[np.ndarray]] = None
        self.last_gates: List[np.ndarray] = []
        if self.arity > 1:
            pooled_width = sum(shape[0] for shape in self.feature_shapes)
            for index, shape in enumerate(self.feature_shapes):
                gate = Dense(self, f"gate{index}", pooled_width, shape[0])
                self.add_layer(gate)
                self.gates.append(gate)

    def _gate_values(self, maps: List[Tensor]) -> List[Tensor]:
        if self.forced_gates is not None:
            return [Tensor(np.broadcast_to(np.asarray(value, dtype=float),
                                           (maps[index].shape[0], maps[index].shape[1])))
                    for index, value in enumerate(self.forced_gates)]
        pooled = te.concat([self.pooled_channels(feature_map) for feature_map in maps], axis=1)
        return [te.sigmoid(gate(pooled)) for gate in self.gates]

    def _forward(self, inputs):
        maps = self.feature_maps(inputs)
        if self.arity > 1:
            gates = self._gate_values(maps)
            self.last_gates = [gate.data.copy() for gate in gates]
            maps = [te.mul(feature_map,
                           te.reshape(gate, gate.shape + (1,) * (feature_map.ndim - 2)))
                    for feature_map, gate in zip(maps, gates)]
        return te.softmax(self.head(self.fuse(maps)))


class AttentionGraph(_StacksAndHead):
    """Input-dependent softmax weights over per-sensor feature vectors."""

    def __init__(self, shapes, base: BaselineConfig, hidden: int, seed: int, sensors=()):
        super().__init__(FusionMode.ATTENTION.value, sensors, shapes, base.n_classes, seed)
        self._build_stacks(base)
        feature_shape = _check_same_shapes(FusionMode.ATTENTION, self.feature_shapes)
        self.head = build_head(self, "", int(np.prod(feature_shape)), base)
        pooled_width = feature_shape[0] * self.arity
        self.attention = Sequential([
            Dense(self, "attention.dense1", pooled_width, hidden),
            ReLU(),
            Dense(self, "attention.dense2", hidden, self.arity),
        ])
        self.add_layer(self.attention)
        self.last_attention: Optional[np.ndarray] = None

    def attention_weights(self, maps: List[Tensor]) -> Tensor:
        pooled = [self.pooled_channels(feature_map) for feature_map in maps]
        features = pooled[0] if len(pooled) == 1 else te.concat(pooled, axis=1)
        return te.softmax(self.attention(features), axis=1)

    def _forward(self, inputs):
        maps = self.feature_maps(inputs)
        weights = self.attention_weights(maps)
        self.last_attention = weights.data.copy()
        fused = mix_per_sample([te.flatten(feature_map) for feature_map in maps], weights)
        return te.softmax(self.head(fused))


class _Branches(ModelGraph):
    """One complete baseline network per sensor."""

    def _build_branches(self, base: BaselineConfig):
        self.branches = []
        for index, shape in enumerate(self.input_shapes):
            prefix = "" if self.arity == 1 else f"sensor{index}."
            self.branches.append(Branch(self, prefix, base.with_input(shape)))

    def branch_scores(self, inputs: List[Tensor]) -> List[Tensor]:
        return [branch.scores(x) for branch, x in zip(self.branches, inputs)]


class LateAverageGraph(_Branches):
    def __init__(self, mode: FusionMode, shapes, base: BaselineConfig, seed: int, sensors=()):
        super().__init__(mode.value, sensors, shapes, base.n_classes, seed)
        self.fusion_mode = mode
        self._build_branches(base)

    def _forward(self, inputs):
        scores = self.branch_scores(inputs)
        if self.fusion_mode == FusionMode.PROB_AVERAGE:
            return prob_average([te.softmax(score) for score in scores])
        return te.softmax(score_average(scores))


class WeightedGraph(_Branches):
    """
    Learned per-sensor scalar weights. Probabilities are mixed with
    softmax(weights) so the output stays a distribution; logits are mixed
    with the raw weights before the softmax.
    """

    def __init__(self, mode: FusionMode, shapes, base: BaselineConfig, seed: int, sensors=()):
        super().__init__(mode.value, sensors, shapes, base.n_classes, seed)
        self.fusion_mode = mode
        self._build_branches(base)
        self.sensor_weights = None
        if self.arity > 1:
            self.sensor_weights = self.new_parameter(
                "sensor_weights", np.full(self.arity, 1.0 / self.arity))

    def set_sensor_weights(self, values: Sequence[float]) -> None:
        if self.sensor_weights is None:
            raise ConfigurationError("a single-sensor weighted graph has no sensor weights")
        values = np.asarray(values, dtype=self.sensor_weights.data.dtype)
        if values.shape != self.sensor_weights.shape:
            raise ConfigurationError(f"expected {self.arity} sensor weights, got {values.shape}")
        self.sensor_weights.data = values.copy()

    def _forward(self, inputs):
        scores = self.branch_scores(inputs)
        if self.sensor_weights is None:
            return te.softmax(scores[0])
        if self.fusion_mode == FusionMode.WEIGHTED_PROB:
            alpha = te.softmax(self.sensor_weights)
            return weighted_sum([te.softmax(score) for score in scores], alpha)
        return te.softmax(weighted_sum(scores, self.sensor_weights))


class LearnToCombineGraph(_Branches):
    """Per-sensor probabilities mixed by a gate over their confidence features."""

    def __init__(self, shapes, base: BaselineConfig, seed: int, sensors=()):
        super().__init__(FusionMode.LEARN_TO_COMBINE.value, sensors, shapes, base.n_classes, seed)
        self._build_branches(base)
        self.gate = None
        self.forced_coefficients: Optional[np.ndarray] = None
        self.last_coefficients: Optional[np.ndarray] = None
        if self.arity > 1:
            self.gate = Dense(self, "combine_gate", 2 * self.arity, self.arity)
            self.add_layer(self.gate)

    @staticmethod
    def confidence_features(probs: Sequence[Tensor]) -> Tensor:
        """[B, 2N] max-probability and entropy per sensor, outside the tape."""
        columns = []
        for prob in probs:
            values = prob.data.astype(np.float64)
            clipped = np.clip(values, np.finfo(np.float64).tiny, 1.0)
            columns.append(values.max(axis=1))
            columns.append(-(values * np.log(clipped)).sum(axis=1))
        return Tensor(np.stack(columns, axis=1))

    def _forward(self, inputs):
        probs = [te.softmax(score) for score in self.branch_scores(inputs)]
        if self.gate is None:
            return probs[0]
        if self.forced_coefficients is not None:
            coefficients = Tensor(np.broadcast_to(
                np.asarray(self.forced_coefficients, dtype=float), (probs[0].shape[0], self.arity)))
        else:
            coefficients = te.softmax(self.gate(self.confidence_features(probs)), axis=1)
        self.last_coefficients = coefficients.data.copy()
        return mix_per_sample(probs, coefficients)


class GradientBlendGraph(_Branches):
    """
    Per-sensor heads plus a fused score-average head, trained on a weighted
    sum of their losses. Weights are refreshed every `period` epochs from
    the per-head train/holdout loss checkpoints.
    """

    tracks_head_losses = True

    def __init__(self, shapes, base: BaselineConfig, settings: FusionSettings, seed: int,
                 sensors=()):
        super().__init__(FusionMode.GRADIENT_BLEND.value, sensors, shapes, base.n_classes, seed)
        self._build_branches(base)
        self.period = settings.blend_period
        self.floor = settings.blend_floor
        n_heads = self.arity + 1
        self.blend_weights = np.full(n_heads, 1.0 / n_heads)
        self.head_names = [f"{sensor}" for sensor in self.sensors] + ["fused"]
        self._train_checkpoints: List[np.ndarray] = []
        self._holdout_checkpoints: List[np.ndarray] = []
        self.refresh_epochs: List[int] = []
        self.weight_history: List[Tuple[int, List[float]]] = [(0, self.blend_weights.tolist())]
        self.loss_log: List[dict] = []

    def head_probabilities(self, inputs: List[Tensor]) -> List[Tensor]:
        scores = self.branch_scores(inputs)
        return [te.softmax(score) for score in scores] + [te.softmax(score_average(scores))]

    def _forward(self, inputs):
        return te.softmax(score_average(self.branch_scores(inputs)))

    def loss(self, inputs, labels) -> Tensor:
        heads = self.head_probabilities(self.prepare_inputs(inputs))
        terms = [te.mul(te.cross_entropy(probs, labels), float(weight))
                 for weight, probs in zip(self.blend_weights, heads)]
        total = terms[0]
        for term in terms[1:]:
            total = te.add(total, term)
        return total

    def head_losses(self, inputs, labels) -> np.ndarray:
        with te.no_grad():
            heads = self.head_probabilities(self.prepare_inputs(inputs))
            return np.array([te.cross_entropy(probs, labels).item() for probs in heads])

    def on_train_begin(self, train_head_losses, holdout_head_losses) -> None:
        self._train_checkpoints = [np.asarray(train_head_losses, dtype=float)]
        self._holdout_checkpoints = [np.asarray(holdout_head_losses, dtype=float)]
        self._log_losses(0, train_head_losses, holdout_head_losses)

    def on_epoch_end(self, epoch, train_head_losses, holdout_head_losses) -> None:
        self._log_losses(epoch, train_head_losses, holdout_head_losses)
        if epoch % self.period:
            return
        self._train_checkpoints.append(np.asarray(train_head_losses, dtype=float))
        self._holdout_checkpoints.append(np.asarray(holdout_head_losses, dtype=float))
        self.blend_weights = gradient_blend_weights(
            self._train_checkpoints, self._holdout_checkpoints, floor=self.floor)
        self.refresh_epochs.append(epoch)
        self.weight_history.append((epoch, self.blend_weights.tolist()))
        logger.debug("Gradient blend weights at epoch %d: %s", epoch,
                     np.array2string(self.blend_weights, precision=4))

    def _log_losses(self, epoch, train_head_losses, holdout_head_losses):
        self.loss_log.append({
            "epoch": epoch,
            "train": dict(zip(self.head_names, map(float, train_head_losses))),
            "holdout": dict(zip(self.head_names, map(float, holdout_head_losses))),
        })

    def training_state(self):
        return {
            "blend_weights_history": self.weight_history,
            "blend_refresh_epochs": self.refresh_epochs,
            "head_losses": self.loss_log,
        }


def build_fusion(mode, input_shapes: Sequence[Tuple[int, ...]], model_settings: ModelSettings,
                 fusion_settings: FusionSettings, seed: int = 0,
                 sensors: Sequence[str] = ()) -> ModelGraph:
    """Dispatch a fusion mode name (or enum) to its builder."""
    mode = mode if isinstance(mode, FusionMode) else FusionMode.parse(mode)
    if not input_shapes:
        raise ConfigurationError("fusion needs at least one sensor input")
    base = BaselineConfig.from_settings(input_shapes[0], model_settings)
    shapes = [tuple(shape) for shape in input_shapes]
    if mode in (FusionMode.TIME_CONCAT, FusionMode.FREQ_CONCAT, FusionMode.DEPTH_CONCAT):
        graph = EarlyFusionGraph(mode, shapes, base, seed, sensors)
    elif mode == FusionMode.BOTTLENECK_FILTERS:
        graph = BottleneckGraph(shapes, base, fusion_settings.bottleneck_width, seed, sensors)
    elif mode == FusionMode.FEATURE_CONCAT:
        graph = FeatureConcatGraph(shapes, base, seed, sensors)
    elif mode == FusionMode.SELECTIVE_FUSION:
        graph = SelectiveFusionGraph(shapes, base, seed, sensors)
    elif mode == FusionMode.ATTENTION:
        graph = AttentionGraph(shapes, base, fusion_settings.attention_hidden, seed, sensors)
    elif mode in (FusionMode.PROB_AVERAGE, FusionMode.SCORE_AVERAGE):
        graph = LateAverageGraph(mode, shapes, base, seed, sensors)
    elif mode in (FusionMode.WEIGHTED_PROB, FusionMode.WEIGHTED_SCORE):
        graph = WeightedGraph(mode, shapes, base, seed, sensors)
    elif mode == FusionMode.GRADIENT_BLEND:
        graph = GradientBlendGraph(shapes, base, fusion_settings, seed, sensors)
    else:
        graph = LearnToCombineGraph(shapes, base, seed, sensors)
    logger.debug("Built %s over %d sensor(s): %d parameters", mode.value, len(shapes),
                 graph.parameter_count())
    return graph
