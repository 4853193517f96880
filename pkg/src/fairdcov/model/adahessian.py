"""AdaHessian: Adam-style updates scaled by a Hutchinson Hessian diagonal."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..errors import DivergenceDetected, ShapeMismatch

EPS = 1e-8


@dataclass(frozen=True)
class AdaHessianState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    hessian_power: float = 1.0
    probes: int = 1

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("step counter must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not 0 < self.hessian_power <= 1:
            raise ValueError("hessian power must lie in (0, 1]")
        if self.probes < 1:
            raise ValueError("need at least one Hutchinson probe")
        if self.m.shape != self.v.shape:
            raise ShapeMismatch("moment buffers differ in shape")

    @classmethod
    def zeros(cls, n_params: int, **kwargs) -> "AdaHessianState":
        return cls(np.zeros(n_params), np.zeros(n_params), **kwargs)


def spatial_average(diag: np.ndarray, blocks: Sequence[slice] | None) -> np.ndarray:
    """Replace each block of ``diag`` by its mean; ``None`` leaves it as is."""
    if blocks is None:
        return diag
    out = diag.copy()
    for sl in blocks:
        out[sl] = diag[sl].mean()
    return out


def hutchinson_diag(grad_fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray,
                    probes: int = 1, seed=0, blocks: Sequence[slice] | None = None,
                    g0: np.ndarray | None = None) -> np.ndarray:
    """Estimate the Hessian diagonal as the mean of ``z * Hz`` over Rademacher probes.

    ``Hz`` is the forward difference of gradients with step
    ``1e-6 * (1 + ||theta||)``. ``seed`` may be an int or a Generator.
    """
    if probes < 1:
        raise ValueError("need at least one probe")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    theta = np.asarray(theta, dtype=np.float64)
    if g0 is None:
        g0 = grad_fn(theta)
    h = 1e-6 * (1.0 + np.linalg.norm(theta))
    est = np.zeros_like(theta)
    for _ in range(probes):
        z = rng.integers(0, 2, size=theta.shape) * 2.0 - 1.0
        hz = (grad_fn(theta + h * z) - g0) / h
        est += z * hz
    return spatial_average(est / probes, blocks)


def adahessian_step(state: AdaHessianState, theta: np.ndarray, grad: np.ndarray,
                    diag: np.ndarray) -> tuple[np.ndarray, AdaHessianState]:
    """One bias-corrected update; returns the new parameters and state."""
    if not (theta.shape == grad.shape == diag.shape == state.m.shape):
        raise ShapeMismatch("parameter, gradient, curvature and state sizes differ")
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(diag))):
        raise DivergenceDetected("non-finite gradient or curvature estimate")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * diag * diag
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = np.sqrt(v / (1 - state.beta2 ** t))
    new = theta - state.lr * m_hat / (v_hat ** state.hessian_power + EPS)
    if not np.all(np.isfinite(new)):
        raise DivergenceDetected("parameters became non-finite")
    return new, replace(state, m=m, v=v, t=t)
