"""Shared test helpers: random small nets and the central finite-difference
gradient oracle used by both the unit tests and the acceptance suite."""

from __future__ import annotations

import numpy as np

from biaslab import nn


def build_random_net(rng: np.random.Generator, with_reversal: bool):
    """A random stack of <=3 dense layers (widths <=16), ReLU between, and
    optionally one gradient-reversal node at a random depth.

    Returns (net, x, labels, loss_weights, upstream_params, lam) where
    upstream_params are the names of parameters below the reversal (whose
    analytic gradient is -lam times the true gradient of the forward map).
    """
    depth = int(rng.integers(1, 4))
    widths = [int(rng.integers(2, 9))] + [int(rng.integers(2, 17)) for _ in range(depth - 1)]
    widths.append(int(rng.integers(2, 5)))  # classes
    lam = float(rng.uniform(0.0, 2.0)) if with_reversal else 1.0
    rev_depth = int(rng.integers(0, depth)) if with_reversal else -1

    layers: list = []
    upstream: list[str] = []
    fc = 0
    for k in range(depth):
        if with_reversal and k == rev_depth:
            layers.append(nn.GradReversal(lam))
        layers.append(nn.Dense(widths[k], widths[k + 1], rng))
        if with_reversal and k < rev_depth:
            upstream += [f"fc{fc}.w", f"fc{fc}.b"]
        fc += 1
        if k < depth - 1:
            layers.append(nn.Relu())
    net = nn.Network(layers)

    batch = int(rng.integers(2, 9))
    x = rng.standard_normal((batch, widths[0]))
    labels = rng.integers(0, widths[-1], size=batch)
    loss_weights = rng.uniform(0.2, 1.0, size=batch) / batch
    return net, x, labels, loss_weights, set(upstream), lam


def relu_margin(net: nn.Network, x: np.ndarray) -> float:
    """Smallest |pre-activation| feeding any ReLU (finite differences are
    unreliable within a step of a kink)."""
    h = x
    margin = np.inf
    prev = None
    for layer in net.layers:
        if isinstance(layer, nn.Relu) and prev is not None:
            margin = min(margin, float(np.abs(prev).min()))
        prev = h = layer.forward(h)
    return margin


def objective(net: nn.Network, x, labels, loss_weights) -> float:
    net.forward(x)
    return float((net.per_sample_loss(labels) * np.asarray(loss_weights)).sum())


def fd_gradients(net: nn.Network, x, labels, loss_weights, h: float = 1e-5):
    """Central finite differences of the weighted loss for every parameter."""
    grads = {}
    for name, p in net.params().items():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = objective(net, x, labels, loss_weights)
            p[idx] = orig - h
            dn = objective(net, x, labels, loss_weights)
            p[idx] = orig
            g[idx] = (up - dn) / (2.0 * h)
            it.iternext()
        grads[name] = g
    return grads


def max_gradcheck_error(rng: np.random.Generator, with_reversal: bool) -> float:
    """Worst relative error between analytic and FD gradients for one random
    net; resamples nets whose inputs sit within an FD step of a ReLU kink."""
    for _ in range(50):
        net, x, labels, w, upstream, lam = build_random_net(rng, with_reversal)
        if relu_margin(net, x) > 2e-3:
            break
    net.forward(x)
    net.per_sample_loss(labels)
    analytic, _ = net.backward(w)
    fd = fd_gradients(net, x, labels, w)
    worst = 0.0
    for name in analytic:
        expected = fd[name] * (-lam if name in upstream else 1.0)
        num = np.abs(analytic[name] - expected)
        den = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(expected)), 1e-4)
        worst = max(worst, float((num / den).max()))
    return worst
