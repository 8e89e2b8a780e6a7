"""Minimal reverse-mode differentiation for small dense classifiers.

Supported primitives: dense (matmul + bias), ReLU, gradient reversal, and a
fused log-sum-exp-stabilized softmax cross-entropy. Everything is float64;
a forward/backward pair works on an explicit tape so the backward pass
visits layers in exact reverse order of the forward pass.

Design notes:
  * Losses are always combined as ``sum_i loss_weights[i] * loss_i``; ERM is
    the special case ``loss_weights = 1/B``.
  * ``GradReversal`` is the identity in the forward pass and multiplies the
    upstream gradient by ``-lam`` in the backward pass, which is what routes
    an adversarial head's gradient into a shared encoder.
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping

import numpy as np


class NonFiniteError(ArithmeticError):
    """A forward value or gradient stopped being finite."""


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


def he_uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    """He fan-in scaled uniform init, the default for all dense weights."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """Affine layer ``y = x @ w + b`` with w of shape (in, out), b (1, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = he_uniform(rng, in_dim, (in_dim, out_dim))
        self.b = np.zeros((1, out_dim))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ValueError(
                f"dense layer expects input width {self.w.shape[0]}, got shape {x.shape}"
            )
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("stale tape: forward must run before backward")
        self.gw = self._x.T @ dy
        self.gb = dy.sum(axis=0, keepdims=True)
        dx = dy @ self.w.T
        self._x = None
        return dx

    def param_items(self) -> list[tuple[str, np.ndarray]]:
        return [("w", self.w), ("b", self.b)]

    def grad_items(self) -> list[tuple[str, np.ndarray]]:
        return [("w", self.gw), ("b", self.gb)]


class Relu:
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("stale tape: forward must run before backward")
        dx = dy * self._mask
        self._mask = None
        return dx


class GradReversal:
    """Identity forward; backward multiplies the upstream gradient by -lam."""

    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError("reversal strength must be nonnegative")
        self.lam = float(lam)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return -self.lam * dy


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def per_sample_xent(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy ``-log softmax(logits)[label]``, all >= 0."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError("logits must be 2-D (batch, classes)")
    if labels.shape != (logits.shape[0],):
        raise ValueError("labels must be a vector matching the batch size")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise ValueError(f"label out of range [0, {logits.shape[1]})")
    lp = log_softmax(logits)
    return -lp[np.arange(logits.shape[0]), labels]


class SoftmaxXent:
    """Fused softmax cross-entropy node; tapes probabilities and labels."""

    def __init__(self):
        self._probs: np.ndarray | None = None
        self._labels: np.ndarray | None = None

    def forward(self, logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
        losses = per_sample_xent(logits, labels)
        self._probs = softmax(logits)
        self._labels = np.asarray(labels)
        return losses

    def backward(self, loss_weights: np.ndarray) -> np.ndarray:
        if self._probs is None:
            raise RuntimeError("stale tape: loss forward must run before backward")
        w = np.asarray(loss_weights, dtype=float)
        if w.shape != (self._probs.shape[0],):
            raise ValueError("loss_weights length must equal the batch size")
        dlogits = self._probs.copy()
        dlogits[np.arange(len(self._labels)), self._labels] -= 1.0
        dlogits *= w[:, None]
        self._probs = None
        self._labels = None
        return dlogits


class Network:
    """An ordered stack of primitive layers plus a fused cross-entropy head.

    Usage for a classifier::

        logits = net.forward(x)
        losses = net.per_sample_loss(labels)
        grads, dx = net.backward(loss_weights)

    Encoders skip the loss and propagate an upstream gradient instead via
    ``backward_from``.
    """

    def __init__(self, layers: Iterable):
        self.layers = list(layers)
        self.loss_node = SoftmaxXent()
        self._out: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        for layer in self.layers:
            h = layer.forward(h)
        self._out = _check_finite(h, "forward output")
        return h

    def per_sample_loss(self, labels: np.ndarray) -> np.ndarray:
        if self._out is None:
            raise RuntimeError("stale tape: forward must run before per_sample_loss")
        return self.loss_node.forward(self._out, labels)

    def backward(self, loss_weights: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        """Gradients of ``sum_i loss_weights[i] * loss_i`` for every parameter.

        Returns (named parameter gradients, gradient w.r.t. the input).
        """
        dlogits = self.loss_node.backward(loss_weights)
        return self.backward_from(dlogits)

    def backward_from(self, upstream: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        if self._out is None:
            raise RuntimeError("stale tape: forward must run before backward")
        d = upstream
        for layer in reversed(self.layers):
            d = layer.backward(d)
        self._out = None
        grads = self.grads()
        for name, g in grads.items():
            _check_finite(g, f"gradient of {name}")
        _check_finite(d, "input gradient")
        return grads, d

    def params(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        fc = 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                for suffix, arr in layer.param_items():
                    out[f"fc{fc}.{suffix}"] = arr
                fc += 1
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        fc = 0
        for layer in self.layers:
            if isinstance(layer, Dense):
                for suffix, arr in layer.grad_items():
                    out[f"fc{fc}.{suffix}"] = arr
                fc += 1
        return out

    def set_params(self, values: Mapping[str, np.ndarray]) -> None:
        own = self.params()
        for name, arr in values.items():
            target = own[name]
            if target.shape != np.shape(arr):
                raise ValueError(f"shape mismatch for {name}")
            target[...] = arr

    def copy(self) -> "Network":
        import copy as _copy

        dup = Network([_copy.deepcopy(l) for l in self.layers])
        for layer in dup.layers:
            if isinstance(layer, Dense):
                layer._x = None
            elif isinstance(layer, Relu):
                layer._mask = None
        return dup


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
) -> None:
    """In-place momentum SGD: v <- mu*v + g + wd*w; w <- w - lr*v."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if weight_decay:
            g = g + weight_decay * w
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
            velocity[name] = v
        v *= momentum
        v += g
        w -= lr * v


class SGD:
    """Momentum SGD over a named parameter set, keeping velocity state."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float,
                 momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        sgd_step(self.params, grads, self.velocity, self.lr, self.momentum,
                 self.weight_decay)


def checkpoint_dict(named_params: Mapping[str, np.ndarray], seed: int, method: str) -> dict:
    """Serializable checkpoint: row-major float64 layer dumps plus run keys."""
    layers = []
    for name in sorted(named_params):
        arr = np.atleast_2d(np.asarray(named_params[name], dtype=float))
        layers.append({
            "name": name,
            "rows": int(arr.shape[0]),
            "cols": int(arr.shape[1]),
            "data": [float(v) for v in arr.ravel(order="C")],
        })
    return {"layers": layers, "seed": int(seed), "method": method}


def save_checkpoint(path, named_params: Mapping[str, np.ndarray], seed: int, method: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(named_params, seed, method), fh, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], int, str]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    params = {}
    for entry in doc["layers"]:
        arr = np.array(entry["data"], dtype=float).reshape(entry["rows"], entry["cols"])
        params[entry["name"]] = arr
    return params, int(doc["seed"]), str(doc["method"])
