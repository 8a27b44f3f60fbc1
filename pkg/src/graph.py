"""
graph.py
Author: LOGS Team
Date: October 19, 2026

Purpose:
    Composable computation graphs built on the tensor engine.
    - Layer classes (Conv2d, Conv1d, MaxPool, ReLU, Dense, Sequential), each
      able to describe itself by a name-free signature for topology checks
    - ModelGraph: parameter registry with unique names, seeded initialisers,
      input arity/shape checks, probability output, loss, training hooks and
      the versioned binary weight dump
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src import tensor_engine as te
from src.errors import ConfigurationError
from src.tensor_engine import Parameter, Tensor

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"TMDW"
WEIGHTS_VERSION = 1


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: List[Parameter] = []

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> List[Parameter]:
        return list(self.params)

    def signature(self) -> Tuple:
        return (self.kind,) + tuple(param.shape for param in self.params)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, graph: "ModelGraph", name: str, in_channels: int, out_channels: int,
                 kernel_size: int, padding: int = 0):
        super().__init__()
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.kernels = graph.new_parameter(f"{name}.weight", graph.he_uniform(shape))
        self.bias = graph.new_parameter(f"{name}.bias", np.zeros(out_channels))
        self.padding = padding
        self.params = [self.kernels, self.bias]

    def forward(self, x):
        return te.conv2d(x, self.kernels, self.bias, stride=1, padding=self.padding)

    def signature(self):
        return super().signature() + (self.padding,)


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, graph: "ModelGraph", name: str, in_channels: int, out_channels: int,
                 kernel_size: int, padding: int = 0):
        super().__init__()
        shape = (out_channels, in_channels, kernel_size)
        self.kernels = graph.new_parameter(f"{name}.weight", graph.he_uniform(shape))
        self.bias = graph.new_parameter(f"{name}.bias", np.zeros(out_channels))
        self.padding = padding
        self.params = [self.kernels, self.bias]

    def forward(self, x):
        return te.conv1d(x, self.kernels, self.bias, stride=1, padding=self.padding)

    def signature(self):
        return super().signature() + (self.padding,)


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, k: int, dims: int = 2):
        super().__init__()
        self.k = k
        self.dims = dims

    def forward(self, x):
        return te.maxpool2d(x, self.k) if self.dims == 2 else te.maxpool1d(x, self.k)

    def signature(self):
        return (self.kind, self.dims, self.k)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return te.relu(x)


class Dense(Layer):
    kind = "dense"

    def __init__(self, graph: "ModelGraph", name: str, in_features: int, out_features: int):
        super().__init__()
        self.weight = graph.new_parameter(
            f"{name}.weight", graph.xavier_uniform((out_features, in_features)))
        self.bias = graph.new_parameter(f"{name}.bias", np.zeros(out_features))
        self.params = [self.weight, self.bias]

    def forward(self, x):
        return te.dense(x, self.weight, self.bias)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers: Iterable[Layer]):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        return [param for layer in self.layers for param in layer.parameters()]

    def signature(self):
        return tuple(layer.signature() for layer in self.layers)


class ModelGraph:
    """
    Base class of every network in the toolkit.

    Subclasses register their layers in build order (which fixes both the
    parameter initialisation order and the topology) and implement
    `_forward`, returning class probabilities of shape [B, n_classes].
    """

    def __init__(self, mode: str, sensors: Sequence[str], input_shapes: Sequence[Tuple[int, ...]],
                 n_classes: int = 8, seed: int = 0):
        if not input_shapes:
            raise ConfigurationError("a model graph needs at least one input")
        self.mode = mode
        self.sensors = list(sensors) if sensors else [f"sensor{k}" for k in range(len(input_shapes))]
        self.input_shapes = [tuple(int(dim) for dim in shape) for shape in input_shapes]
        self.arity = len(self.input_shapes)
        self.n_classes = n_classes
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._parameters: Dict[str, Parameter] = {}
        self._layers: List[Layer] = []

    # --- Construction helpers ---

    def new_parameter(self, name: str, values: np.ndarray) -> Parameter:
        if name in self._parameters:
            raise ConfigurationError(f"duplicate parameter name '{name}'")
        param = Parameter(values, name)
        self._parameters[name] = param
        return param

    def add_layer(self, layer: Layer) -> Layer:
        self._layers.append(layer)
        return layer

    def he_uniform(self, shape: Tuple[int, ...]) -> np.ndarray:
        fan_in = int(np.prod(shape[1:]))
        limit = np.sqrt(6.0 / fan_in)
        return self.rng.uniform(-limit, limit, size=shape)

    def xavier_uniform(self, shape: Tuple[int, ...]) -> np.ndarray:
        fan_out, fan_in = shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-limit, limit, size=shape)

    # --- Introspection ---

    def parameters(self) -> List[Parameter]:
        return list(self._parameters.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return dict(self._parameters)

    def parameter_count(self) -> int:
        return int(sum(param.size for param in self._parameters.values()))

    def topology(self) -> Tuple:
        """Name-free description of the layers in build order."""
        return tuple(layer.signature() for layer in self._layers)

    def zero_grad(self) -> None:
        for param in self._parameters.values():
            param.zero_grad()

    def cast(self, dtype) -> None:
        for param in self._parameters.values():
            param.cast(dtype)

    # --- Execution ---

    def prepare_inputs(self, inputs: Sequence[Union[Tensor, np.ndarray]]) -> List[Tensor]:
        """Check arity and shapes; single samples get a batch axis."""
        if isinstance(inputs, (Tensor, np.ndarray)):
            inputs = [inputs]
        if len(inputs) != self.arity:
            raise ConfigurationError(
                f"{self.mode} expects {self.arity} input(s), got {len(inputs)}")
        prepared = []
        for sensor, value, shape in zip(self.sensors, inputs, self.input_shapes):
            tensor = te.as_tensor(value)
            if tensor.shape == shape:
                tensor = te.reshape(tensor, (1,) + shape)
            if tensor.shape[1:] != shape:
                raise ConfigurationError(
                    f"input for {sensor} has shape {tensor.shape[1:]}, expected {shape}")
            prepared.append(tensor)
        batch_sizes = {tensor.shape[0] for tensor in prepared}
        if len(batch_sizes) != 1:
            raise ConfigurationError(f"inputs disagree on batch size: {sorted(batch_sizes)}")
        return prepared

    def forward(self, inputs) -> Tensor:
        """Class probabilities of shape [B, n_classes]."""
        return self._forward(self.prepare_inputs(inputs))

    def _forward(self, inputs: List[Tensor]) -> Tensor:
        raise NotImplementedError

    def predict(self, inputs) -> np.ndarray:
        with te.no_grad():
            return self.forward(inputs).data.argmax(axis=1)

    def loss(self, inputs, labels) -> Tensor:
        return te.cross_entropy(self.forward(inputs), labels)

    # --- Training hooks (no-ops unless a graph trains with auxiliary state) ---

    tracks_head_losses = False

    def head_losses(self, inputs, labels) -> Optional[np.ndarray]:
        return None

    def on_train_begin(self, train_head_losses, holdout_head_losses) -> None:
        pass

    def on_epoch_end(self, epoch: int, train_head_losses, holdout_head_losses) -> None:
        pass

    def training_state(self) -> Dict:
        """Auxiliary training history stored in the run record."""
        return {}

    # --- Weight dump ---

    def save_weights(self, path: Union[str, Path]) -> None:
        """
        Little-endian dump: magic, version, parameter count, then per
        parameter its UTF-8 name, rank, uint32 dims and float32 values.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(WEIGHTS_MAGIC)
            handle.write(struct.pack("<II", WEIGHTS_VERSION, len(self._parameters)))
            for name, param in self._parameters.items():
                encoded = name.encode("utf-8")
                handle.write(struct.pack("<H", len(encoded)))
                handle.write(encoded)
                handle.write(struct.pack("<B", param.ndim))
                handle.write(struct.pack(f"<{param.ndim}I", *param.shape))
                handle.write(param.data.astype("<f4").tobytes())
        logger.debug("Saved %d parameters to %s", len(self._parameters), path)

    def load_weights(self, path: Union[str, Path]) -> None:
        path = Path(path)
        with open(path, "rb") as handle:
            blob = handle.read()
        if blob[:4] != WEIGHTS_MAGIC:
            raise ConfigurationError(f"{path}: not a weight dump")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != WEIGHTS_VERSION:
            raise ConfigurationError(f"{path}: unsupported weight dump version {version}")
        if count != len(self._parameters):
            raise ConfigurationError(
                f"{path}: holds {count} parameters, graph has {len(self._parameters)}")
        offset = 12
        loaded = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape))
            values = np.frombuffer(blob, dtype="<f4", count=size, offset=offset).reshape(shape)
            offset += 4 * size
            param = self._parameters.get(name)
            if param is None or param.shape != tuple(shape):
                raise ConfigurationError(f"{path}: parameter '{name}' {shape} does not fit graph")
            loaded[name] = values
        for name, values in loaded.items():
            param = self._parameters[name]
            param.data = values.astype(param.data.dtype)
