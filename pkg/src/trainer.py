"""
trainer.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    The evaluation protocol:
    - RunConfig (sensors, recipe, fusion mode, resolved settings) and its hash
    - per-sensor standardisation fitted on the training split only
    - seeded mini-batch Adam training with optional micro-batches
    - macro-F1 evaluation, repetition over seeds (mean and population std)
    - the final run on train+validation, scored on the held-out test set
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import precision_recall_fscore_support

from src import __version__
from src import tensor_engine as te
from src.config import Settings, config_hash
from src.dataset import N_CLASSES, ChannelSelector, HeldOutTestSet, LabeledArrays, held_out_access
from src.dsp import parse_recipe
from src.errors import ConfigurationError, InsufficientDataError, NumericError, TrainingDivergedError
from src.fusion import FusionMode, build_fusion
from src.graph import ModelGraph
from src.model import BaselineConfig, build_baseline

logger = logging.getLogger(__name__)

BASELINE = "Baseline"
EVAL_BATCH = 256


@dataclass(frozen=True)
class RunConfig:
    sensors: Tuple[str, ...]
    recipe: str
    mode: str = BASELINE
    settings: Settings = field(default_factory=Settings)
    # data source and split the run is evaluated on; part of the hash
    data: str = ""

    def __post_init__(self):
        sensors = tuple(ChannelSelector.parse(sensor).key for sensor in self.sensors)
        if not sensors:
            raise ConfigurationError("a run needs at least one sensor")
        if len(set(sensors)) != len(sensors):
            raise ConfigurationError(f"duplicate sensors in {sensors}")
        mode = BASELINE if str(self.mode).lower() == "baseline" else FusionMode.parse(self.mode).value
        if mode == BASELINE and len(sensors) != 1:
            raise ConfigurationError("the baseline takes exactly one sensor; pick a fusion mode")
        object.__setattr__(self, "sensors", sensors)
        object.__setattr__(self, "recipe", parse_recipe(self.recipe).name)
        object.__setattr__(self, "mode", mode)

    @property
    def selectors(self) -> List[ChannelSelector]:
        return [ChannelSelector.parse(sensor) for sensor in self.sensors]

    @property
    def seeds(self) -> List[int]:
        training = self.settings.training
        return [training.base_seed + offset for offset in range(training.n_seeds)]

    def to_dict(self) -> Dict[str, Any]:
        return {"sensors": list(self.sensors), "recipe": self.recipe, "mode": self.mode,
                "settings": self.settings.to_dict(), "data": self.data}

    def on_data(self, data: str) -> "RunConfig":
        return replace(self, data=data)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def describe(self) -> str:
        return f"{self.mode}[{', '.join(self.sensors)}] {self.recipe}"


@dataclass
class Standardizer:
    """Zero mean / unit variance per sensor representation."""
    means: List[float]
    stds: List[float]

    @classmethod
    def fit(cls, data: LabeledArrays) -> "Standardizer":
        means, stds = [], []
        for array in data.inputs:
            means.append(float(array.mean(dtype=np.float64)))
            std = float(array.std(dtype=np.float64))
            stds.append(std if std > 1e-12 else 1.0)
        return cls(means, stds)

    def transform(self, inputs: Sequence[np.ndarray]) -> List[np.ndarray]:
        return [((array - mean) / std).astype(np.float32)
                for array, mean, std in zip(inputs, self.means, self.stds)]

    def apply(self, data: LabeledArrays) -> LabeledArrays:
        return LabeledArrays(self.transform(data.inputs), data.labels, list(data.sensors), data.recipe)


@dataclass
class F1Report:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    per_seed: List[float]
    seeds: List[int] = field(default_factory=list)
    failed_seeds: List[int] = field(default_factory=list)
    per_seed_class_f1: List[List[float]] = field(default_factory=list)

    @classmethod
    def from_predictions(cls, y_true, y_pred, seed: Optional[int] = None,
                         n_classes: int = N_CLASSES) -> "F1Report":
        y_true = np.asarray(y_true)
        if y_true.size == 0:
            raise InsufficientDataError("cannot score an empty evaluation set")
        precision, recall, f1, _ = precision_recall_fscore_support(
            y_true, np.asarray(y_pred), labels=list(range(n_classes)), average=None,
            zero_division=0)
        return cls(precision, recall, f1, [float(np.mean(f1))],
                   [] if seed is None else [seed], [], [f1.tolist()])

    @classmethod
    def combine(cls, reports: Sequence["F1Report"]) -> "F1Report":
        if not reports:
            raise InsufficientDataError("no seed reports to combine")
        return cls(np.mean([r.precision for r in reports], axis=0),
                   np.mean([r.recall for r in reports], axis=0),
                   np.mean([r.f1 for r in reports], axis=0),
                   [value for r in reports for value in r.per_seed],
                   [seed for r in reports for seed in r.seeds],
                   [seed for r in reports for seed in r.failed_seeds],
                   [row for r in reports for row in r.per_seed_class_f1])

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_seed))

    @property
    def std(self) -> float:
        return float(np.std(self.per_seed))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean, "std": self.std, "per_seed_f1": list(self.per_seed),
            "seeds": list(self.seeds), "failed_seeds": list(self.failed_seeds),
            "precision": self.precision.tolist(), "recall": self.recall.tolist(),
            "f1": self.f1.tolist(), "per_seed_class_f1": self.per_seed_class_f1,
        }


@dataclass
class TrainResult:
    seed: int
    loss_history: List[float]
    training_state: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class SeedOutcome:
    seed: int
    predictions: np.ndarray
    loss_history: List[float]
    failed: bool = False
    error: str = ""
    training_state: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0


@dataclass
class RunResult:
    config: RunConfig
    report: F1Report
    outcomes: List[SeedOutcome]
    split: str = "validation"
    wall_time: float = 0.0

    def to_record(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config.hash,
            "config": self.config.to_dict(),
            "code_version": __version__,
            "split": self.split,
            **self.report.to_dict(),
            "loss_curves": {str(o.seed): o.loss_history for o in self.outcomes},
            "errors": {str(o.seed): o.error for o in self.outcomes if o.failed},
            "training_state": {str(o.seed): o.training_state for o in self.outcomes
                               if o.training_state},
            "wall_time": self.wall_time,
        }


def build_graph(cfg: RunConfig, input_shapes: Sequence[Tuple[int, ...]], seed: int) -> ModelGraph:
    if cfg.mode == BASELINE:
        if len(input_shapes) != 1:
            raise ConfigurationError("the baseline takes exactly one input")
        base = BaselineConfig.from_settings(input_shapes[0], cfg.settings.model)
        return build_baseline(base, seed, list(cfg.sensors))
    return build_fusion(cfg.mode, input_shapes, cfg.settings.model, cfg.settings.fusion,
                        seed, list(cfg.sensors))


def _batched(graph: ModelGraph, data: LabeledArrays, batch_size: int = EVAL_BATCH):
    for start in range(0, len(data), batch_size):
        chunk = slice(start, start + batch_size)
        yield [array[chunk] for array in data.inputs], data.labels[chunk]


def predict(graph: ModelGraph, inputs: Sequence[np.ndarray], batch_size: int = EVAL_BATCH) -> np.ndarray:
    total = inputs[0].shape[0]
    if total == 0:
        raise InsufficientDataError("nothing to predict")
    return np.concatenate([graph.predict([array[start:start + batch_size] for array in inputs])
                           for start in range(0, total, batch_size)])


def _head_losses(graph: ModelGraph, data: LabeledArrays) -> np.ndarray:
    total = None
    for inputs, labels in _batched(graph, data):
        losses = graph.head_losses(inputs, labels) * len(labels)
        total = losses if total is None else total + losses
    return total / len(data)


def _train_step(graph: ModelGraph, data: LabeledArrays, indices: np.ndarray,
                micro_batch: int, optimizer) -> float:
    graph.zero_grad()
    if micro_batch and micro_batch < len(indices):
        chunks = [indices[start:start + micro_batch] for start in range(0, len(indices), micro_batch)]
    else:
        chunks = [indices]
    value = 0.0
    for chunk in chunks:
        loss = graph.loss([array[chunk] for array in data.inputs], data.labels[chunk])
        share = len(chunk) / len(indices)
        value += loss.item() * share
        if len(chunks) > 1:
            loss = te.mul(loss, share)
        loss.backward()
    te.adam_step(graph.parameters(), lr=optimizer.lr, beta1=optimizer.beta1,
                 beta2=optimizer.beta2, eps=optimizer.eps)
    return value


def train(graph: ModelGraph, data: LabeledArrays, cfg: RunConfig, seed: int) -> TrainResult:
    """Fixed-length training; one mean loss per epoch."""
    training = cfg.settings.training
    if len(data) == 0:
        raise InsufficientDataError("cannot train on an empty dataset")
    started = time.perf_counter()

    fit_data, holdout = data, None
    if graph.tracks_head_losses:
        n_holdout = max(1, int(round(len(data) * cfg.settings.fusion.blend_holdout_fraction)))
        if len(data) - n_holdout < 1:
            raise InsufficientDataError("not enough training samples to keep a blend holdout")
        fit_data = data.subset(slice(0, len(data) - n_holdout))
        holdout = data.subset(slice(len(data) - n_holdout, len(data)))
        graph.on_train_begin(_head_losses(graph, fit_data), _head_losses(graph, holdout))

    rng = np.random.default_rng([seed, 1])
    history: List[float] = []
    for epoch in range(1, training.epochs + 1):
        epoch_start = time.perf_counter()
        order = rng.permutation(len(fit_data))
        total = 0.0
        for batch, start in enumerate(range(0, len(fit_data), training.batch_size)):
            indices = order[start:start + training.batch_size]
            try:
                value = _train_step(graph, fit_data, indices, training.micro_batch_size,
                                    cfg.settings.optimizer)
            except NumericError as exc:
                raise TrainingDivergedError(
                    f"seed {seed}, epoch {epoch}, batch {batch}: {exc}", seed, epoch, batch) from exc
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"seed {seed}, epoch {epoch}, batch {batch}: loss is {value}", seed, epoch, batch)
            total += value * len(indices)
        history.append(total / len(fit_data))
        if holdout is not None:
            graph.on_epoch_end(epoch, _head_losses(graph, fit_data), _head_losses(graph, holdout))
        logger.info("Seed %d epoch %d/%d: loss %.4f (%.1fs)", seed, epoch, training.epochs,
                    history[-1], time.perf_counter() - epoch_start)
    return TrainResult(seed, history, graph.training_state(), time.perf_counter() - started)


def evaluate(graph: ModelGraph, data: LabeledArrays, seed: Optional[int] = None) -> F1Report:
    if len(data) == 0:
        raise InsufficientDataError("cannot evaluate on an empty dataset")
    return F1Report.from_predictions(data.labels, predict(graph, data.inputs), seed)


def most_frequent_class(labels: np.ndarray) -> int:
    return int(np.bincount(labels, minlength=N_CLASSES).argmax())


def fit_and_predict(cfg: RunConfig, train_data: LabeledArrays, eval_inputs: Sequence[np.ndarray],
                    seed: int) -> SeedOutcome:
    """
    Train one seed and predict `eval_inputs`. A diverged run predicts the most
    frequent training class, the behaviour of a network that learned nothing.
    """
    started = time.perf_counter()
    if cfg.settings.training.standardize:
        standardizer = Standardizer.fit(train_data)
        train_data = standardizer.apply(train_data)
        eval_inputs = standardizer.transform(eval_inputs)
    graph = build_graph(cfg, train_data.input_shapes, seed)
    try:
        result = train(graph, train_data, cfg, seed)
        predictions = predict(graph, eval_inputs)
    except TrainingDivergedError as exc:
        logger.warning("%s seed %d diverged: %s", cfg.describe(), seed, exc)
        constant = most_frequent_class(train_data.labels)
        return SeedOutcome(seed, np.full(eval_inputs[0].shape[0], constant), [], True, str(exc),
                           {}, time.perf_counter() - started)
    return SeedOutcome(seed, predictions, result.loss_history, False, "", result.training_state,
                       time.perf_counter() - started)


def _score(outcomes: Sequence[SeedOutcome], labels: np.ndarray) -> F1Report:
    reports = []
    for outcome in outcomes:
        report = F1Report.from_predictions(labels, outcome.predictions, outcome.seed)
        if outcome.failed:
            report.failed_seeds.append(outcome.seed)
        reports.append(report)
    return F1Report.combine(reports)


def repeat_runs(cfg: RunConfig, train_data: LabeledArrays, val_data: LabeledArrays,
                jobs: int = 1) -> RunResult:
    """Independent runs over seeds base_seed .. base_seed + n_seeds - 1."""
    if len(train_data) == 0 or len(val_data) == 0:
        raise InsufficientDataError("training and validation sets must be non-empty")
    started = time.perf_counter()
    logger.info("Running %s over seeds %s", cfg.describe(), cfg.seeds)
    outcomes = Parallel(n_jobs=jobs)(
        delayed(fit_and_predict)(cfg, train_data, val_data.inputs, seed) for seed in cfg.seeds)
    report = _score(outcomes, val_data.labels)
    logger.info("%s: macro-F1 %.2f ± %.2f %%", cfg.describe(), 100 * report.mean, 100 * report.std)
    return RunResult(cfg, report, list(outcomes), "validation", time.perf_counter() - started)


def final_test_run(cfg: RunConfig, train_data: LabeledArrays, val_data: LabeledArrays,
                   test_set: HeldOutTestSet, jobs: int = 1) -> RunResult:
    """Train on train ∪ validation for every seed; score on the held-out test set."""
    started = time.perf_counter()
    union = train_data.concat(val_data)
    logger.info("Final test run of %s on %d training samples", cfg.describe(), len(union))
    outcomes = Parallel(n_jobs=jobs)(
        delayed(fit_and_predict)(cfg, union, test_set.inputs, seed) for seed in cfg.seeds)
    with held_out_access():
        report = _score(outcomes, test_set.labels)
    logger.info("%s on test: macro-F1 %.2f ± %.2f %%", cfg.describe(), 100 * report.mean,
                100 * report.std)
    return RunResult(cfg, report, list(outcomes), "test", time.perf_counter() - started)
