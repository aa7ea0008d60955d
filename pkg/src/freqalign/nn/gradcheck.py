"""Loss helpers and a central finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .network import Network

# A loss maps the network output to (value, d value / d output).
Loss = Callable[[np.ndarray], tuple[float, np.ndarray]]


def mse_loss(target: np.ndarray) -> Loss:
    def loss(y):
        diff = y - target
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    return loss


def bce_logits_loss(labels: np.ndarray) -> Loss:
    """Mean binary cross-entropy on logits of shape (B, 1)."""
    t = np.asarray(labels, dtype=np.float64).reshape(-1, 1)

    def loss(z):
        z64 = z.astype(np.float64)
        val = np.mean(np.maximum(z64, 0) - z64 * t + np.log1p(np.exp(-np.abs(z64))))
        p = 1.0 / (1.0 + np.exp(-z64))
        return float(val), ((p - t) / len(t)).astype(z.dtype)
    return loss


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(num / den)


def grad_check(net: Network, x: np.ndarray, loss: Loss, eps: float = 1e-4,
               max_entries: int | None = 64, seed: int = 0,
               include_input: bool = False) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error is computed per parameter tensor as
    ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`` (Euclidean norms) over the checked
    entries; frozen parameters are skipped. ``max_entries`` samples a seeded
    subset of each tensor's entries to bound the cost. Run in float64.
    """
    report = grad_check_report(net, x, loss, eps, max_entries, seed, include_input)
    return max(report.values()) if report else 0.0


def grad_check_report(net: Network, x: np.ndarray, loss: Loss, eps: float = 1e-4,
                      max_entries: int | None = 64, seed: int = 0,
                      include_input: bool = False) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    y = net.forward(x)
    _, dy = loss(y)
    grads, dx = net.backward(dy)

    def f():
        return loss(net.predict(x))[0]

    targets = [(name, p, grads[name]) for name, p in net.trainable().items()]
    if include_input:
        targets.append(("input", x, dx))
    report = {}
    for name, arr, g in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = f()
            flat[i] = old - eps
            down = f()
            flat[i] = old
            numeric[j] = (up - down) / (2 * eps)
        report[name] = relative_error(np.asarray(g).reshape(-1)[idx], numeric)
    return report
