"""Fully connected network on a flat parameter vector."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch

HEADS = ("sigmoid", "exp")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    n_hidden: int = 2
    width: int = 32
    head: str = "sigmoid"
    dropout: float = 0.0

    def __post_init__(self):
        if self.n_hidden < 1 or self.width < 1 or self.input_dim < 1:
            raise ValueError("input_dim, n_hidden and width must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        dims = [self.input_dim] + [self.width] * self.n_hidden + [1]
        out = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            out += [(fan_in, fan_out), (fan_out,)]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def tensor_slices(self) -> list[slice]:
        """Slices of the flat vector occupied by each weight matrix and bias."""
        out, start = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(slice(start, start + size))
            start += size
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def unflatten(spec: NetworkSpec, theta: np.ndarray) -> list[np.ndarray]:
    if theta.shape != (spec.n_params,):
        raise ShapeMismatch(f"expected {spec.n_params} parameters, got {theta.shape}")
    return [theta[sl].reshape(shape) for sl, shape in zip(spec.tensor_slices(), spec.shapes)]


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    parts = []
    for (fan_in, fan_out), _ in zip(spec.shapes[::2], spec.shapes[1::2]):
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(parts)


def dropout_masks(spec: NetworkSpec, n: int, rng: np.random.Generator) -> list[np.ndarray] | None:
    """Inverted-dropout masks for each hidden layer, or ``None`` without dropout."""
    if spec.dropout == 0.0:
        return None
    keep = 1.0 - spec.dropout
    return [(rng.random((n, spec.width)) < keep) / keep for _ in range(spec.n_hidden)]


def forward(spec: NetworkSpec, theta: np.ndarray, x, masks=None):
    """Return ``(output, logits, cache)``.

    ``output`` is a probability for the sigmoid head and a positive
    per-unit-exposure rate for the exponential head.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"inputs must have shape (n, {spec.input_dim})")
    params = unflatten(spec, theta)
    h = x
    cache = [x]
    for k in range(spec.n_hidden):
        w, b = params[2 * k], params[2 * k + 1]
        z = h @ w + b
        h = np.maximum(z, 0.0)
        if masks is not None:
            h = h * masks[k]
        cache += [z, h]
    w, b = params[-2], params[-1]
    logits = (h @ w + b)[:, 0]
    if spec.head == "sigmoid":
        out = _sigmoid(logits)
    else:
        out = np.exp(logits)
    return out, logits, cache


def backward(spec: NetworkSpec, theta: np.ndarray, cache, dlogits: np.ndarray, masks=None
             ) -> np.ndarray:
    """Gradient of a scalar with respect to ``theta`` given its gradient in the logits.

    The rectifier subgradient at zero is 0.
    """
    params = unflatten(spec, theta)
    grads = [None] * len(params)
    delta = dlogits[:, None]
    h = cache[-1]
    grads[-2] = h.T @ delta
    grads[-1] = delta.sum(axis=0)
    upstream = delta @ params[-2].T
    for k in reversed(range(spec.n_hidden)):
        z = cache[1 + 2 * k]
        h_prev = cache[2 * k]
        if masks is not None:
            upstream = upstream * masks[k]
        dz = upstream * (z > 0)
        grads[2 * k] = h_prev.T @ dz
        grads[2 * k + 1] = dz.sum(axis=0)
        if k > 0:
            upstream = dz @ params[2 * k].T
    return np.concatenate([g.reshape(-1) for g in grads])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict(spec: NetworkSpec, theta: np.ndarray, x, exposure=None) -> np.ndarray:
    """Inference-mode output; with ``exposure`` the exponential head returns expected counts."""
    out, _, _ = forward(spec, theta, x)
    if exposure is not None:
        if spec.head != "exp":
            raise ValueError("exposure only applies to the exponential head")
        return out * np.asarray(exposure, dtype=np.float64)
    return out
