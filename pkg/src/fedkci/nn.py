"""Feed-forward networks with hand-written backprop and SGD with momentum.

Activations use NCHW layout. Convolutions are valid (no padding) with
stride 1; pooling stride equals its window and drops any ragged edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, InputError, InternalError

Shape = tuple[int, ...]


# --------------------------------------------------------------------------
# Layer descriptors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2D:
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3:
            raise ConfigError(f"Conv2D expects a [C,H,W] input, got {list(shape)}")
        c, h, w = shape
        if c != self.in_channels:
            raise ConfigError(f"Conv2D expects {self.in_channels} channels, got {c}")
        if h < self.kernel_h or w < self.kernel_w:
            raise ConfigError(f"Conv2D kernel {self.kernel_h}x{self.kernel_w} larger than input {h}x{w}")
        return (self.out_channels, h - self.kernel_h + 1, w - self.kernel_w + 1)

    def param_shapes(self) -> tuple[Shape, Shape]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w), (self.out_channels,)

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    def forward(self, x, weight, bias):
        windows = sliding_window_view(x, (self.kernel_h, self.kernel_w), axis=(2, 3))
        # windows: (N, C, Ho, Wo, kh, kw)
        y = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
        y = y.transpose(0, 3, 1, 2) + bias[None, :, None, None]
        return np.ascontiguousarray(y), windows

    def backward(self, dy, cache, weight, bias):
        windows = cache
        dw = np.tensordot(dy, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = dy.sum(axis=(0, 2, 3))
        kh, kw = self.kernel_h, self.kernel_w
        padded = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        pwin = sliding_window_view(padded, (kh, kw), axis=(2, 3))
        flipped = weight[:, :, ::-1, ::-1]
        dx = np.tensordot(pwin, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(dx), dw, db


@dataclass(frozen=True)
class MaxPool2D:
    window_h: int
    window_w: int

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 3:
            raise ConfigError(f"MaxPool2D expects a [C,H,W] input, got {list(shape)}")
        c, h, w = shape
        if h < self.window_h or w < self.window_w:
            raise ConfigError(f"MaxPool2D window {self.window_h}x{self.window_w} larger than input {h}x{w}")
        return (c, h // self.window_h, w // self.window_w)

    def param_shapes(self):
        return None

    def forward(self, x, weight=None, bias=None):
        n, c, h, w = x.shape
        ph, pw = self.window_h, self.window_w
        ho, wo = h // ph, w // pw
        cropped = x[:, :, : ho * ph, : wo * pw]
        cols = cropped.reshape(n, c, ho, ph, wo, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, ph * pw)
        # argmax returns the first maximum, so ties route gradient to one input
        idx = cols.argmax(axis=-1)
        y = np.take_along_axis(cols, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def backward(self, dy, cache, weight=None, bias=None):
        in_shape, idx = cache
        n, c, h, w = in_shape
        ph, pw = self.window_h, self.window_w
        ho, wo = idx.shape[2], idx.shape[3]
        cols = np.zeros((n, c, ho, wo, ph * pw), dtype=dy.dtype)
        np.put_along_axis(cols, idx[..., None], dy[..., None], axis=-1)
        block = cols.reshape(n, c, ho, wo, ph, pw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * ph, wo * pw)
        if (ho * ph, wo * pw) == (h, w):
            return block, None, None
        dx = np.zeros(in_shape, dtype=dy.dtype)
        dx[:, :, : ho * ph, : wo * pw] = block
        return dx, None, None


@dataclass(frozen=True)
class ReLU:
    def output_shape(self, shape: Shape) -> Shape:
        return tuple(shape)

    def param_shapes(self):
        return None

    def forward(self, x, weight=None, bias=None):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype, copy=False), mask

    def backward(self, dy, cache, weight=None, bias=None):
        return np.where(cache, dy, 0).astype(dy.dtype, copy=False), None, None


@dataclass(frozen=True)
class Flatten:
    def output_shape(self, shape: Shape) -> Shape:
        return (math.prod(shape),)

    def param_shapes(self):
        return None

    def forward(self, x, weight=None, bias=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, weight=None, bias=None):
        return dy.reshape(cache), None, None


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def output_shape(self, shape: Shape) -> Shape:
        if tuple(shape) != (self.in_features,):
            raise ConfigError(f"Dense expects input [{self.in_features}], got {list(shape)}")
        return (self.out_features,)

    def param_shapes(self) -> tuple[Shape, Shape]:
        return (self.in_features, self.out_features), (self.out_features,)

    @property
    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x, weight, bias):
        return x @ weight + bias, x

    def backward(self, dy, cache, weight, bias):
        x = cache
        return dy @ weight.T, x.T @ dy, dy.sum(axis=0)


Layer = Union[Conv2D, MaxPool2D, ReLU, Flatten, Dense]


@dataclass(frozen=True)
class ModelSpec:
    """Input shape (without batch dim) plus an ordered layer list."""

    input_shape: Shape
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def trace(self) -> list[Shape]:
        """Per-layer output shapes; raises ConfigError on any incompatibility."""
        if not self.layers:
            raise ConfigError("model spec has no layers")
        if any(d < 1 for d in self.input_shape):
            raise ConfigError(f"invalid input shape {list(self.input_shape)}")
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ConfigError as exc:
                raise ConfigError(f"layer {i} ({type(layer).__name__}): {exc}") from None
            shapes.append(shape)
        if len(shape) != 1:
            raise ConfigError(f"final output must be a class vector, got {list(shape)}")
        return shapes

    @property
    def num_classes(self) -> int:
        return self.trace()[-1][0]


def paper_cnn(num_classes: int = 10, input_shape: Shape = (3, 32, 32)) -> ModelSpec:
    """Two 5x5 conv + 2x2 pool stages, then 120 and 84 unit ReLU layers."""
    c, h, w = input_shape
    spec = ModelSpec(
        input_shape,
        (
            Conv2D(5, 5, c, 6), ReLU(), MaxPool2D(2, 2),
            Conv2D(5, 5, 6, 16), ReLU(), MaxPool2D(2, 2),
            Flatten(),
        ),
    )
    flat = spec.trace()[-1][0]
    return ModelSpec(
        input_shape,
        spec.layers + (Dense(flat, 120), ReLU(), Dense(120, 84), ReLU(), Dense(84, num_classes)),
    )


def mlp(input_dim: int, hidden: Sequence[int], num_classes: int) -> ModelSpec:
    layers: list[Layer] = []
    width = input_dim
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    layers.append(Dense(width, num_classes))
    return ModelSpec((input_dim,), tuple(layers))


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamEntry:
    layer_index: int
    weight: np.ndarray
    bias: np.ndarray | None = None


@dataclass(frozen=True)
class ModelParams:
    """Ordered (layer_index, weight, bias) entries; also used for gradients and velocities."""

    entries: tuple[ParamEntry, ...] = field(default_factory=tuple)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for e in self.entries:
            out.append(e.weight)
            if e.bias is not None:
                out.append(e.bias)
        return out

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.arrays())

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        """Same structure, new tensors (in ``arrays()`` order)."""
        it = iter(arrays)
        entries = []
        try:
            for e in self.entries:
                w = next(it)
                b = next(it) if e.bias is not None else None
                entries.append(ParamEntry(e.layer_index, w, b))
        except StopIteration:
            raise InternalError("too few arrays for parameter structure") from None
        if next(it, None) is not None:
            raise InternalError("too many arrays for parameter structure")
        out = ModelParams(tuple(entries))
        check_same_structure(self, out)
        return out

    def map(self, fn) -> "ModelParams":
        return self.with_arrays([fn(a) for a in self.arrays()])

    def astype(self, dtype) -> "ModelParams":
        return self.map(lambda a: a.astype(dtype))

    def zeros_like(self) -> "ModelParams":
        return self.map(np.zeros_like)

    def copy(self) -> "ModelParams":
        return self.map(np.copy)

    @property
    def dtype(self):
        return self.entries[0].weight.dtype

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])


def check_same_structure(a: ModelParams, b: ModelParams) -> None:
    if len(a.entries) != len(b.entries):
        raise InternalError(f"parameter count mismatch: {len(a.entries)} vs {len(b.entries)}")
    for ea, eb in zip(a.entries, b.entries):
        if ea.layer_index != eb.layer_index or ea.weight.shape != eb.weight.shape:
            raise InternalError(f"structure mismatch at layer {ea.layer_index}")
        if (ea.bias is None) != (eb.bias is None) or (ea.bias is not None and ea.bias.shape != eb.bias.shape):
            raise InternalError(f"bias mismatch at layer {ea.layer_index}")


def init_params(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Weights and biases ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], layer by layer."""
    spec.trace()
    entries = []
    for i, layer in enumerate(spec.layers):
        shapes = layer.param_shapes()
        if shapes is None:
            continue
        bound = 1.0 / math.sqrt(layer.fan_in)
        w_shape, b_shape = shapes
        w = rng.uniform(-bound, bound, size=w_shape).astype(dtype)
        b = rng.uniform(-bound, bound, size=b_shape).astype(dtype)
        entries.append(ParamEntry(i, w, b))
    return ModelParams(tuple(entries))


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != len(self.labels):
            raise InputError(f"batch has {self.inputs.shape[0]} inputs but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)


def _param_lookup(params: ModelParams, spec: ModelSpec) -> dict[int, ParamEntry]:
    lookup = {e.layer_index: e for e in params.entries}
    expected = [i for i, layer in enumerate(spec.layers) if layer.param_shapes() is not None]
    if sorted(lookup) != expected:
        raise InternalError("parameters do not match model spec")
    return lookup


def forward(params: ModelParams, spec: ModelSpec, batch: Batch | np.ndarray) -> tuple[np.ndarray, list[Any]]:
    """Logits of shape [b, num_classes] and the per-layer cache for ``backward``."""
    x = batch.inputs if isinstance(batch, Batch) else batch
    if tuple(x.shape[1:]) != spec.input_shape:
        raise InputError(f"input shape {list(x.shape[1:])} does not match spec {list(spec.input_shape)}")
    lookup = _param_lookup(params, spec)
    x = x.astype(params.dtype, copy=False)
    caches = []
    for i, layer in enumerate(spec.layers):
        e = lookup.get(i)
        x, cache = layer.forward(x, e.weight if e else None, e.bias if e else None)
        caches.append(cache)
    return x, caches


def backward(params: ModelParams, spec: ModelSpec, caches: list[Any], dlogits: np.ndarray) -> ModelParams:
    lookup = _param_lookup(params, spec)
    grads: dict[int, ParamEntry] = {}
    dy = dlogits
    for i in range(len(spec.layers) - 1, -1, -1):
        e = lookup.get(i)
        dy, dw, db = spec.layers[i].backward(dy, caches[i], e.weight if e else None, e.bias if e else None)
        if e is not None:
            grads[i] = ParamEntry(i, dw.astype(e.weight.dtype, copy=False), db.astype(e.bias.dtype, copy=False))
    return ModelParams(tuple(grads[e.layer_index] for e in params.entries))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    b, c = logits.shape
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sums)
    rows = np.arange(b)
    loss = float(-log_probs[rows, labels].mean())
    grad = exp / sums
    grad[rows, labels] -= 1
    grad /= b
    return loss, grad.astype(logits.dtype, copy=False)


def loss_and_grad(params: ModelParams, spec: ModelSpec, batch: Batch) -> tuple[float, ModelParams]:
    logits, caches = forward(params, spec, batch)
    loss, dlogits = softmax_cross_entropy(logits, batch.labels)
    return loss, backward(params, spec, caches, dlogits)


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerState:
    velocity: ModelParams
    learning_rate: float
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")

    @classmethod
    def fresh(cls, params: ModelParams, learning_rate: float, momentum: float = 0.0) -> "OptimizerState":
        return cls(params.zeros_like(), learning_rate, momentum)


def sgd_step(params: ModelParams, grads: ModelParams, state: OptimizerState) -> tuple[ModelParams, OptimizerState]:
    """v <- momentum*v + g; w <- w - lr*v."""
    check_same_structure(params, grads)
    check_same_structure(params, state.velocity)
    mu, lr = state.momentum, state.learning_rate
    new_w, new_v = [], []
    for w, g, v in zip(params.arrays(), grads.arrays(), state.velocity.arrays()):
        v = mu * v + g if mu else g.copy()
        v = v.astype(w.dtype, copy=False)
        new_v.append(v)
        new_w.append((w - lr * v).astype(w.dtype, copy=False))
    return params.with_arrays(new_w), OptimizerState(params.with_arrays(new_v), lr, mu)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def predict(params: ModelParams, spec: ModelSpec, inputs: np.ndarray, batch_size: int = 1000) -> np.ndarray:
    preds = []
    for start in range(0, len(inputs), batch_size):
        logits, _ = forward(params, spec, inputs[start : start + batch_size])
        preds.append(logits.argmax(axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def evaluate_accuracy(params: ModelParams, spec: ModelSpec, test_set, batch_size: int = 1000) -> float:
    """Fraction of samples whose argmax logit (lowest index on ties) equals the label.

    ``test_set`` is anything with ``inputs`` and ``labels`` attributes.
    """
    inputs, labels = test_set.inputs, np.asarray(test_set.labels)
    if len(labels) == 0:
        raise InputError("test set is empty")
    return float((predict(params, spec, inputs, batch_size) == labels).mean())
