import numpy as np
import pytest

from src import tensor_engine as te
from src import trainer
from src.config import FusionSettings, Settings, TrainingSettings
from src.dataset import ChannelSelector, HeldOutTestSet, LabeledArrays, build_labeled_arrays
from src.errors import (ConfigurationError, HeldOutAccessError, NumericError,
                        TrainingDivergedError)
from src.trainer import (F1Report, RunConfig, Standardizer, build_graph, final_test_run,
                         most_frequent_class, repeat_runs, train)

RECIPE = "spectrogram-logfreq-log"


def _random_arrays(rng, n, n_sensors=1, dtype=np.float32):
    inputs = [rng.normal(size=(n, 1, 48, 48)).astype(dtype) for _ in range(n_sensors)]
    return LabeledArrays(inputs, np.arange(n) % 8, [f"s{k}" for k in range(n_sensors)], RECIPE)


@pytest.fixture(scope="module")
def synthetic_arrays(synthetic_recordings):
    data = build_labeled_arrays(synthetic_recordings, [ChannelSelector.parse("Acc_norm")], RECIPE)
    return data.subset(slice(8, 32)), data.subset(slice(0, 8))


# --- F1 ---

def test_perfect_predictions():
    labels = np.arange(40) % 8
    assert F1Report.from_predictions(labels, labels).mean == pytest.approx(1.0)


def test_constant_predictor_on_balanced_classes():
    labels = np.arange(80) % 8
    report = F1Report.from_predictions(labels, np.zeros(80, dtype=int))
    assert report.mean == pytest.approx(2 / 72)
    assert report.f1[0] == pytest.approx(2 / 9)


def test_hand_computed_macro_f1():
    report = F1Report.from_predictions([0, 0, 1, 1], [0, 1, 1, 1], n_classes=2)
    np.testing.assert_allclose(report.precision, [1.0, 2 / 3])
    np.testing.assert_allclose(report.recall, [0.5, 1.0])
    assert report.macro_f1 == pytest.approx((2 / 3 + 0.8) / 2)


def test_seed_aggregation_uses_population_std():
    labels = np.arange(8)
    single = F1Report.from_predictions(labels, labels, seed=0)
    assert single.std == 0.0
    first = F1Report(np.zeros(8), np.zeros(8), np.zeros(8), [0.5], [0])
    second = F1Report(np.zeros(8), np.zeros(8), np.zeros(8), [0.7], [1])
    combined = F1Report.combine([first, second])
    assert combined.mean == pytest.approx(0.6)
    assert combined.std == pytest.approx(0.1)
    assert combined.seeds == [0, 1]


def test_most_frequent_class():
    assert most_frequent_class(np.array([3, 3, 1, 7])) == 3
    assert most_frequent_class(np.arange(16) % 8) == 0


# --- run configuration ---

def test_run_config_normalizes_names():
    cfg = RunConfig(("|Acc|", "Gyr_y"), "Spectrogram / log-freq / log", "weighted-score")
    assert cfg.sensors == ("Acc_norm", "Gyr_y")
    assert cfg.recipe == RECIPE
    assert cfg.mode == "WeightedScore"
    assert "WeightedScore[Acc_norm, Gyr_y]" in cfg.describe()


@pytest.mark.parametrize("sensors,mode", [
    (("Acc_norm", "Gyr_y"), "Baseline"),
    (("Acc_norm", "Acc_norm"), "ProbAverage"),
    ((), "ProbAverage"),
    (("Acc_norm",), "Voting"),
    (("Pressure_norm",), "Baseline"),
])
def test_invalid_run_configs(sensors, mode):
    with pytest.raises(ConfigurationError):
        RunConfig(sensors, RECIPE, mode)


def test_config_hash_tracks_settings():
    first = RunConfig(("Acc_norm",), RECIPE)
    assert first.hash == RunConfig(("|Acc|",), RECIPE).hash
    longer = RunConfig(("Acc_norm",), RECIPE,
                       settings=Settings(training=TrainingSettings(epochs=51)))
    assert first.hash != longer.hash
    assert first.seeds == [0, 1, 2, 3, 4]


def test_config_hash_tracks_data_source():
    cfg = RunConfig(("Acc_norm",), RECIPE)
    seven = cfg.on_data("synthetic n_per_class=4 seed=7, default split")
    eight = cfg.on_data("synthetic n_per_class=4 seed=8, default split")
    assert len({cfg.hash, seven.hash, eight.hash}) == 3
    assert seven.to_dict()["data"].endswith("default split")
    assert seven.describe() == cfg.describe()


# --- standardisation ---

def test_standardizer(rng):
    data = LabeledArrays([rng.normal(5.0, 3.0, size=(20, 1, 8)), np.full((20, 1, 8), 2.0)],
                         np.zeros(20, dtype=int))
    scaler = Standardizer.fit(data)
    scaled = scaler.apply(data)
    assert abs(scaled.inputs[0].mean()) < 1e-5
    assert scaled.inputs[0].std() == pytest.approx(1.0, rel=1e-4)
    assert scaler.stds[1] == 1.0
    np.testing.assert_allclose(scaled.inputs[1], 0.0)


# --- training ---

def test_training_is_seed_deterministic(rng, fast_settings):
    data = _random_arrays(rng, 24)
    cfg = RunConfig(("Acc_norm",), RECIPE, settings=fast_settings)
    histories = []
    for _ in range(2):
        graph = build_graph(cfg, data.input_shapes, seed=3)
        histories.append(train(graph, data, cfg, seed=3).loss_history)
    assert histories[0] == histories[1]
    assert len(histories[0]) == 2


def test_single_sample_is_memorized(rng, small_model):
    settings = Settings(model=small_model, training=TrainingSettings(epochs=30, batch_size=1))
    cfg = RunConfig(("Acc_norm",), RECIPE, settings=settings)
    data = _random_arrays(rng, 1)
    history = train(build_graph(cfg, data.input_shapes, 0), data, cfg, 0).loss_history
    assert history[-1] < 0.5 * history[0]


def test_micro_batches_accumulate_to_the_full_batch(small_model):
    results = []
    for micro in (0, 4):
        settings = Settings(model=small_model,
                            training=TrainingSettings(epochs=1, batch_size=8, micro_batch_size=micro))
        cfg = RunConfig(("Acc_norm",), RECIPE, settings=settings)
        with te.default_dtype(np.float64):
            data = _random_arrays(np.random.default_rng(9), 8, dtype=np.float64)
            graph = build_graph(cfg, data.input_shapes, seed=2)
            history = train(graph, data, cfg, seed=2).loss_history
        results.append((history, graph.named_parameters()))
    (full_history, full), (micro_history, micro) = results
    assert micro_history[0] == pytest.approx(full_history[0], rel=1e-9)
    for name, param in full.items():
        np.testing.assert_allclose(micro[name].data, param.data, atol=1e-9, err_msg=name)


def test_numeric_failure_becomes_divergence(rng, fast_settings, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericError("Softmax produced non-finite values")

    monkeypatch.setattr(trainer, "_train_step", explode)
    cfg = RunConfig(("Acc_norm",), RECIPE, settings=fast_settings)
    data = _random_arrays(rng, 16)
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(build_graph(cfg, data.input_shapes, 4), data, cfg, 4)
    assert (excinfo.value.seed, excinfo.value.epoch, excinfo.value.batch) == (4, 1, 0)


def test_gradient_blend_training_refreshes_weights(rng, fast_settings):
    cfg = RunConfig(("Acc_norm", "Gyr_y"), RECIPE, "GradientBlend", fast_settings)
    data = _random_arrays(rng, 20, n_sensors=2)
    graph = build_graph(cfg, data.input_shapes, 0)
    result = train(graph, data, cfg, 0)
    assert graph.refresh_epochs == [1, 2]
    assert len(result.training_state["blend_weights_history"]) == 3
    assert sum(graph.blend_weights) == pytest.approx(1.0)


# --- repetition protocol ---

def test_repeat_runs_on_synthetic_data(synthetic_arrays, fast_settings):
    train_data, val_data = synthetic_arrays
    cfg = RunConfig(("Acc_norm",), RECIPE, settings=fast_settings)
    result = repeat_runs(cfg, train_data, val_data)
    assert result.split == "validation"
    assert len(result.report.per_seed) == 2
    assert 0.0 <= result.report.mean <= 1.0
    record = result.to_record()
    assert record["config_hash"] == cfg.hash
    assert record["seeds"] == [0, 1]
    assert set(record["loss_curves"]) == {"0", "1"}
    assert record["failed_seeds"] == []


def test_failed_seeds_score_as_a_constant_predictor(synthetic_arrays, fast_settings, monkeypatch):
    def diverge(graph, data, cfg, seed):
        raise TrainingDivergedError("loss is nan", seed, 1, 0)

    monkeypatch.setattr(trainer, "train", diverge)
    train_data, val_data = synthetic_arrays
    cfg = RunConfig(("Acc_norm",), RECIPE, settings=fast_settings)
    result = repeat_runs(cfg, train_data, val_data)
    assert result.report.failed_seeds == [0, 1]
    assert result.report.mean == pytest.approx(2 / 72)
    assert set(result.to_record()["errors"]) == {"0", "1"}


def test_final_run_reads_test_labels_only_while_scoring(synthetic_arrays, fast_settings):
    train_data, val_data = synthetic_arrays
    test_set = HeldOutTestSet(val_data.subset(slice(0, 8)))
    cfg = RunConfig(("Acc_norm",), RECIPE, settings=fast_settings)
    result = final_test_run(cfg, train_data, val_data, test_set)
    assert result.split == "test"
    assert len(result.report.per_seed) == 2
    with pytest.raises(HeldOutAccessError):
        _ = test_set.labels


def test_fusion_run_end_to_end(synthetic_recordings, fast_settings):
    selectors = [ChannelSelector.parse("Acc_norm"), ChannelSelector.parse("Gyr_y")]
    data = build_labeled_arrays(synthetic_recordings, selectors, RECIPE)
    settings = Settings(model=fast_settings.model,
                        training=TrainingSettings(epochs=1, n_seeds=1, batch_size=16),
                        fusion=FusionSettings())
    cfg = RunConfig(("Acc_norm", "Gyr_y"), RECIPE, "LearnToCombine", settings)
    result = repeat_runs(cfg, data.subset(slice(8, 32)), data.subset(slice(0, 8)))
    assert result.report.std == 0.0
