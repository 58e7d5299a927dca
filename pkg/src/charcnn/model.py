"""Model assembly: config, layer stack, whole-model forward and backward.

The stack is always::

    [conv -> relu -> maxpool] * len(conv_blocks)
    -> dropout -> flatten
    -> [dense -> relu] * len(dense_units)
    -> dense(classes) -> softmax
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import ConfigError, InputError, ShapeError, StateError
from .tensor import DTYPE


@dataclass(frozen=True)
class ModelConfig:
    input: tuple[int, int, int] = (1, 32, 32)
    conv_blocks: tuple[tuple[int, int], ...] = ((8, 5), (16, 3), (32, 3))
    dense_units: tuple[int, ...] = (64,)
    dropout_p: float = 0.5
    classes: int = 47

    def __post_init__(self):
        object.__setattr__(self, "input", tuple(int(v) for v in self.input))
        object.__setattr__(
            self, "conv_blocks", tuple((int(f), int(k)) for f, k in self.conv_blocks)
        )
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))

    def validate(self) -> None:
        if len(self.input) != 3 or min(self.input) < 1:
            raise ConfigError(f"input must be (channels, height, width) >= 1, got {self.input}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for i, units in enumerate(self.dense_units):
            if units < 1:
                raise ConfigError(f"dense layer {i} has {units} units")
        self.flatten_width()

    def block_shapes(self) -> list[tuple[int, int, int]]:
        """Output (C, H, W) after each conv+pool block."""
        c, h, w = self.input
        shapes = []
        for i, (filters, ksize) in enumerate(self.conv_blocks):
            if filters < 1 or ksize < 1:
                raise ConfigError(f"conv block {i}: filters and kernel size must be >= 1")
            if ksize > h or ksize > w:
                raise ConfigError(f"conv block {i}: {ksize}x{ksize} kernel exceeds {h}x{w} input")
            h, w = (h - ksize + 1) // 2, (w - ksize + 1) // 2
            if h < 1 or w < 1:
                raise ConfigError(f"conv block {i}: pooling leaves no spatial extent")
            c = filters
            shapes.append((c, h, w))
        return shapes

    def flatten_width(self) -> int:
        shapes = self.block_shapes()
        return math.prod(shapes[-1] if shapes else self.input)


FULL_CONFIG = ModelConfig(
    input=(1, 32, 32),
    conv_blocks=((1024, 5), (512, 3), (256, 3)),
    dense_units=(256, 128),
    dropout_p=0.5,
    classes=47,
)

DESK_CONFIG = ModelConfig()

HEAD_INIT_GAIN = 0.1


# ---------------------------------------------------------------------- layers


class Layer:
    """One stage of the stack. Parametric layers expose ``params`` by name."""

    params: dict[str, np.ndarray] = {}

    def forward(self, x, training, seed):
        raise NotImplementedError

    def backward(self, upstream):
        """Return (input_grad, param_grads)."""
        raise NotImplementedError


class Conv2D(Layer):
    tag = 0

    def __init__(self, kernels, bias):
        self.params = {"weight": kernels, "bias": bias}
        self._x = None

    def forward(self, x, training, seed):
        self._x = x
        return L.conv2d_forward(x, L.ConvParams(self.params["weight"], self.params["bias"]))

    def backward(self, upstream):
        g = L.conv2d_backward(
            self._x, L.ConvParams(self.params["weight"], self.params["bias"]), upstream
        )
        return g.input_grad, g.param_grads


class Dense(Layer):
    tag = 1

    def __init__(self, weight, bias):
        self.params = {"weight": weight, "bias": bias}
        self._x = None

    def forward(self, x, training, seed):
        self._x = x
        return L.dense_forward(x, L.DenseParams(self.params["weight"], self.params["bias"]))

    def backward(self, upstream):
        g = L.dense_backward(
            self._x, L.DenseParams(self.params["weight"], self.params["bias"]), upstream
        )
        return g.input_grad, g.param_grads


class ReLU(Layer):
    def forward(self, x, training, seed):
        self._x = x
        return L.relu(x)

    def backward(self, upstream):
        return L.relu_backward(self._x, upstream), {}


class MaxPool(Layer):
    def forward(self, x, training, seed):
        y, self._cache = L.pool2d_forward(x, "max")
        return y

    def backward(self, upstream):
        return L.pool2d_backward(self._cache, upstream), {}


class Dropout(Layer):
    def __init__(self, p):
        self.p = p

    def forward(self, x, training, seed):
        # eval mode is identity both ways
        self._spec = L.DropoutSpec(self.p if training else 0.0, seed)
        y, self._mask = L.dropout_forward(x, self._spec, training)
        return y

    def backward(self, upstream):
        return L.dropout_backward(self._mask, self._spec, upstream), {}


class Flatten(Layer):
    def forward(self, x, training, seed):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return upstream.reshape(self._shape), {}


# ----------------------------------------------------------------------- model


@dataclass
class Model:
    config: ModelConfig
    layers: list[Layer]
    class_count: int
    _probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def dtype(self):
        return self.parametric()[0][1].params["weight"].dtype

    def parametric(self) -> list[tuple[str, Layer]]:
        """(name, layer) for every layer owning weights, in stack order."""
        out, nconv, ndense = [], 0, 0
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                out.append((f"conv{nconv}", layer))
                nconv += 1
            elif isinstance(layer, Dense):
                out.append((f"dense{ndense}", layer))
                ndense += 1
        return out

    def parameters(self) -> dict[str, np.ndarray]:
        """Live views of every parameter array keyed ``<layer>.<weight|bias>``."""
        return {
            f"{name}.{key}": arr
            for name, layer in self.parametric()
            for key, arr in layer.params.items()
        }

    def astype(self, dtype) -> "Model":
        """Deep copy with every parameter cast to ``dtype``."""
        new_layers = []
        for layer in self.layers:
            if isinstance(layer, (Conv2D, Dense)):
                p = layer.params
                new_layers.append(
                    type(layer)(p["weight"].astype(dtype, copy=True), p["bias"].astype(dtype, copy=True))
                )
            elif isinstance(layer, Dropout):
                new_layers.append(Dropout(layer.p))
            else:
                new_layers.append(type(layer)())
        return Model(self.config, new_layers, self.class_count)

    def forward(self, batch: np.ndarray, training: bool = False, seed: int = 0) -> np.ndarray:
        return forward(self, batch, training, seed)

    def backward(self, one_hot: np.ndarray) -> dict[str, np.ndarray]:
        return backward(self, one_hot)


def build(config: ModelConfig, seed: int = 0, dtype=DTYPE) -> Model:
    """Assemble the stack for ``config`` with seeded He-normal weights and zero biases.

    The output layer uses He-normal scaled by ``HEAD_INIT_GAIN``.
    """
    config.validate()
    rng = np.random.default_rng(seed)

    def he(shape, fan_in, gain=1.0):
        return (rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)).astype(dtype)

    stack: list[Layer] = []
    channels = config.input[0]
    for filters, ksize in config.conv_blocks:
        fan_in = channels * ksize * ksize
        stack += [
            Conv2D(he((filters, channels, ksize, ksize), fan_in), np.zeros(filters, dtype)),
            ReLU(),
            MaxPool(),
        ]
        channels = filters
    stack += [Dropout(config.dropout_p), Flatten()]
    width = config.flatten_width()
    for units in config.dense_units:
        stack += [Dense(he((units, width), width), np.zeros(units, dtype)), ReLU()]
        width = units
    # the logits layer feeds softmax, not ReLU: shrink it so initial predictions are near uniform
    head = he((config.classes, width), width, gain=HEAD_INIT_GAIN)
    stack.append(Dense(head, np.zeros(config.classes, dtype)))
    return Model(config, stack, config.classes)


def forward(model: Model, batch: np.ndarray, training: bool = False, seed: int = 0) -> np.ndarray:
    """Class probabilities of shape (B, classes); caches activations for backward."""
    batch = np.asarray(batch)
    expected = model.config.input
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ShapeError(f"batch shape {batch.shape} does not match (B, {', '.join(map(str, expected))})")
    x = batch.astype(model.dtype, copy=False)
    for layer in model.layers:
        x = layer.forward(x, training, seed)
    model._probs = L.softmax(x)
    return model._probs


def check_one_hot(targets: np.ndarray, shape: tuple[int, ...] | None = None) -> None:
    targets = np.asarray(targets)
    if shape is not None and targets.shape != shape:
        raise InputError(f"target shape {targets.shape} does not match {shape}")
    if targets.ndim != 2:
        raise InputError(f"targets must be (B, classes), got {targets.shape}")
    ok = np.isin(targets, (0, 1)).all() and (targets.sum(axis=1) == 1).all()
    if not ok:
        raise InputError("every target row must be one-hot")


def backward(model: Model, one_hot: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of mean categorical cross-entropy w.r.t. every parameter.

    Uses the cached probabilities of the latest ``forward`` call. Softmax and
    cross-entropy are differentiated together: d(loss)/d(logits) = (p - y)/B.
    """
    if model._probs is None:
        raise StateError("backward called before forward")
    probs = model._probs
    check_one_hot(one_hot, probs.shape)
    upstream = (probs - one_hot.astype(probs.dtype)) / probs.shape[0]

    by_layer = {id(layer): name for name, layer in model.parametric()}
    grads: dict[str, np.ndarray] = {}
    for layer in reversed(model.layers):
        upstream, pgrads = layer.backward(upstream)
        for key, g in pgrads.items():
            grads[f"{by_layer[id(layer)]}.{key}"] = g.astype(model.dtype, copy=False)
    model._probs = None
    return grads
