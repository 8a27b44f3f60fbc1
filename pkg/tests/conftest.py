"""Shared fixtures and oracles for the test suite."""

import numpy as np
import pytest

from src import tensor_engine as te
from src.config import FusionSettings, ModelSettings, Settings, TrainingSettings
from src.dataset import generate_synthetic


def numeric_gradient_check(loss_fn, tensors, n_samples=50, h=1e-4, rtol=1e-2, atol=1e-7, seed=0):
    """
    Compare backward() against central differences on up to `n_samples`
    randomly chosen entries of each tensor. `loss_fn` rebuilds the scalar
    loss from the current tensor values.
    """
    for tensor in tensors:
        tensor.grad = None
    loss_fn().backward()
    analytic = [tensor.grad.copy() for tensor in tensors]

    rng = np.random.default_rng(seed)
    checked = 0
    for tensor, grad in zip(tensors, analytic):
        picks = rng.choice(tensor.size, size=min(n_samples, tensor.size), replace=False)
        flat = tensor.data.reshape(-1)
        for index in picks:
            original = flat[index]
            with te.no_grad():
                flat[index] = original + h
                plus = loss_fn().item()
                flat[index] = original - h
                minus = loss_fn().item()
            flat[index] = original
            numeric = (plus - minus) / (2 * h)
            expected = grad.reshape(-1)[index]
            assert abs(expected - numeric) <= rtol * max(abs(expected), abs(numeric)) + atol, \
                f"entry {index}: analytic {expected}, numeric {numeric}"
            checked += 1
    return checked


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_model():
    return ModelSettings(conv_widths=(4, 6, 8), hidden_width=16)


@pytest.fixture
def fast_settings(small_model):
    return Settings(model=small_model,
                    training=TrainingSettings(epochs=2, n_seeds=2, batch_size=16),
                    fusion=FusionSettings(blend_period=1))


@pytest.fixture(scope="session")
def synthetic_recordings():
    """32 recordings, 4 per class, interleaved."""
    return generate_synthetic(seed=7, n_per_class=4)
