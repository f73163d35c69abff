"""Central finite-difference checks for every layer type, in float64."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

STEP = 1e-4
TOLERANCE = 1e-4
LAYER_KINDS = ("Dense", "Conv2D", "MaxPool2D", "ReLU", "SoftmaxCrossEntropy")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|), with both-tiny entries counted as exact."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(a), np.abs(n))
    diff = np.abs(a - n)
    err = np.where(scale > floor, diff / np.maximum(scale, floor), 0.0)
    return float(err.max()) if err.size else 0.0


def numeric_gradient(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def _layer_case(kind: str, rng: np.random.Generator):
    if kind == "Dense":
        layer = nn.Dense(int(rng.integers(2, 6)), int(rng.integers(2, 5)))
        x = rng.normal(size=(3, layer.in_features))
    elif kind == "Conv2D":
        layer = nn.Conv2D(int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        x = rng.normal(size=(2, layer.in_channels, int(rng.integers(layer.kernel_h, 6)), int(rng.integers(layer.kernel_w, 6))))
    elif kind == "MaxPool2D":
        layer = nn.MaxPool2D(int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        shape = (2, 2, int(rng.integers(layer.window_h, 6)), int(rng.integers(layer.window_w, 6)))
        # distinct values spaced far beyond the FD step so no window argmax flips
        x = rng.permutation(np.prod(shape)).reshape(shape) * 0.1 + rng.uniform(0, 0.01, size=shape)
    elif kind == "ReLU":
        layer = nn.ReLU()
        x = rng.normal(size=(3, 5))
        x = np.where(np.abs(x) < 0.05, x + np.sign(x + 1e-12) * 0.05, x)
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    return layer, x


def check_layer(kind: str, seed: int) -> float:
    """Max relative error over the layer's input and parameter gradients."""
    rng = np.random.default_rng(seed)
    if kind == "SoftmaxCrossEntropy":
        logits = rng.normal(scale=2.0, size=(4, 5))
        labels = rng.integers(0, 5, size=4)
        _, analytic = nn.softmax_cross_entropy(logits, labels)
        numeric = numeric_gradient(lambda: nn.softmax_cross_entropy(logits, labels)[0], logits)
        return relative_error(analytic, numeric)

    layer, x = _layer_case(kind, rng)
    shapes = layer.param_shapes()
    if shapes is not None:
        weight, bias = rng.normal(size=shapes[0]), rng.normal(size=shapes[1])
    else:
        weight = bias = None
    y, _ = layer.forward(x, weight, bias)
    probe = rng.normal(size=y.shape)

    def objective():
        return float((layer.forward(x, weight, bias)[0] * probe).sum())

    _, cache = layer.forward(x, weight, bias)
    dx, dw, db = layer.backward(probe, cache, weight, bias)
    errors = [relative_error(dx, numeric_gradient(objective, x))]
    if weight is not None:
        errors.append(relative_error(dw, numeric_gradient(objective, weight)))
        errors.append(relative_error(db, numeric_gradient(objective, bias)))
    return max(errors)


def check_model(spec: nn.ModelSpec, seed: int, batch_size: int = 3) -> float:
    """End-to-end check of ``loss_and_grad`` for a whole model in float64."""
    rng = np.random.default_rng(seed)
    params = nn.init_params(spec, rng, dtype=np.float64)
    inputs = rng.normal(size=(batch_size, *spec.input_shape))
    labels = rng.integers(0, spec.num_classes, size=batch_size)
    batch = nn.Batch(inputs, labels)
    _, grads = nn.loss_and_grad(params, spec, batch)
    worst = 0.0
    for p, g in zip(params.arrays(), grads.arrays()):
        numeric = numeric_gradient(lambda: nn.loss_and_grad(params, spec, batch)[0], p)
        worst = max(worst, relative_error(g, numeric))
    return worst


@dataclass
class LayerReport:
    kind: str
    seeds: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def run_suite(seeds: int = 20) -> list[LayerReport]:
    return [LayerReport(kind, seeds, max(check_layer(kind, s) for s in range(seeds))) for kind in LAYER_KINDS]
