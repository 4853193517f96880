"""Task losses, dependence regularisers and their exact gradients.

The regulariser gradient is taken with respect to the prediction vector
and then pushed through the network. For a regulariser that is a
Frobenius product ``<U(A), M> / (n (n - 3))`` of the U-centred prediction
distance matrix ``U(A)`` with a fixed matrix ``M``, the gradient in the
distances is ``U*(M) / (n (n - 3))`` where ``U*`` is the adjoint of
U-centring; the chain rule through ``A_kl = |yhat_k - yhat_l|`` then uses
``sign(0) = 0`` at ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import dcov
from ..errors import BatchTooSmall, ConfigError
from . import network

TASKS = ("binary", "poisson")
REGULARISERS = ("none", "separate_sum", "jdcov", "ccdcov")

_ALIASES = {"separate": "separate_sum", "sep": "separate_sum"}


def regulariser_name(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in REGULARISERS:
        raise ConfigError(f"unknown regulariser {name!r}; choose from {REGULARISERS}")
    return name


@dataclass(frozen=True)
class ObjectiveSpec:
    task: str = "binary"
    regulariser: str = "none"
    lam: float = 0.0
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        object.__setattr__(self, "regulariser", regulariser_name(self.regulariser))
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ConfigError("lambda must be finite and >= 0")
        if self.weights is not None and any(w < 0 for w in self.weights):
            raise ConfigError("separate-sum weights must be >= 0")

    @property
    def active(self) -> bool:
        return self.regulariser != "none" and self.lam > 0

    def with_lambda(self, lam: float) -> "ObjectiveSpec":
        return replace(self, lam=lam)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    attrs: list[np.ndarray] = field(default_factory=list)
    exposure: np.ndarray | None = None
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(
            self.x[idx],
            self.y[idx],
            [a[idx] for a in self.attrs],
            None if self.exposure is None else self.exposure[idx],
        )


def task_loss_and_grad(task: str, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean task loss and its gradient in the logits.

    Binary: cross-entropy. Poisson: ``exposure * rate - y * log(rate)``
    with ``rate = exp(logit)``.
    """
    n = logits.size
    y = np.asarray(batch.y, dtype=np.float64)
    if task == "binary":
        loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
        grad = (network._sigmoid(logits) - y) / n
    else:
        expo = np.ones(n) if batch.exposure is None else batch.exposure
        mu = expo * np.exp(logits)
        loss = np.mean(mu - y * logits)
        grad = (mu - y) / n
    return float(loss), grad


def regulariser_value(kind: str, yhat, attrs, weights=None) -> float:
    kind = regulariser_name(kind)
    if kind == "none":
        return 0.0
    if kind == "ccdcov":
        return dcov.ccdcov(yhat, attrs)
    if kind == "jdcov":
        return dcov.jdcov2([yhat, *attrs])
    if weights is None:
        weights = np.ones(len(attrs))
    return dcov.separate_sum(yhat, attrs, weights)


def _u_adjoint(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    m = m.copy()
    np.fill_diagonal(m, 0.0)
    rc = m.sum(axis=1) + m.sum(axis=0)
    return m - rc[:, None] / (n - 2) + m.sum() / ((n - 1) * (n - 2))


def _linear_form(kind: str, attrs, weights, n: int) -> tuple[np.ndarray, float]:
    """``(M, c)`` with regulariser ``= <U_yhat, M> / (n (n - 3)) + c``."""
    if kind == "ccdcov":
        return dcov.ucentred(dcov.concat_blocks(attrs)), 0.0
    if kind == "separate_sum":
        if weights is None:
            weights = np.ones(len(attrs))
        return sum(w * dcov.ucentred(s) for w, s in zip(weights, attrs)), 0.0
    # sum (1 - U_y) prod_i (1 - U_i) / (n (n - 3)) - n / (n - 3)
    prod = np.ones((n, n))
    for s in attrs:
        prod = prod * (1.0 - dcov.ucentred(s))
    return -prod, float(prod.sum()) / (n * (n - 3)) - n / (n - 3)


def regulariser_value_and_grad(kind: str, yhat, attrs, weights=None, cache: dict | None = None,
                               need_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """Regulariser and its gradient in a 1-D prediction vector.

    ``cache`` (any dict tied to the batch) keeps the attribute-side matrix
    across calls on the same rows.
    """
    kind = regulariser_name(kind)
    y = np.asarray(yhat, dtype=np.float64).reshape(-1)
    n = y.size
    if kind == "none":
        return 0.0, np.zeros(n)
    key = (kind, None if weights is None else tuple(weights))
    if cache is not None and key in cache:
        m, const = cache[key]
    else:
        m, const = _linear_form(kind, attrs, weights, n)
        if cache is not None:
            cache[key] = (m, const)
    scale = n * (n - 3)
    value = float(np.sum(dcov.ucentred(y) * m)) / scale + const
    if not need_grad:
        return value, None
    g = _u_adjoint(m) / scale
    sign = np.sign(y[:, None] - y[None, :])
    return value, np.sum((g + g.T) * sign, axis=1)


def regulariser_grad(kind: str, yhat, attrs, weights=None) -> np.ndarray:
    """Gradient of the regulariser with respect to a 1-D prediction vector."""
    return regulariser_value_and_grad(kind, yhat, attrs, weights)[1]


def _output_derivative(head: str, out: np.ndarray) -> np.ndarray:
    return out * (1.0 - out) if head == "sigmoid" else out


def _check_batch(obj: ObjectiveSpec, batch: Batch):
    if obj.active and len(batch) < 4:
        raise BatchTooSmall(f"regularised objective needs a batch of >= 4, got {len(batch)}")


def objective_terms(net: network.NetworkSpec, theta, batch: Batch, obj: ObjectiveSpec,
                    masks=None) -> tuple[float, float]:
    """``(task loss, regulariser)`` on one batch; the regulariser is 0 when inactive."""
    _check_batch(obj, batch)
    out, logits, _ = network.forward(net, theta, batch.x, masks)
    loss, _ = task_loss_and_grad(obj.task, logits, batch)
    psi = regulariser_value(obj.regulariser, out, batch.attrs, obj.weights) if obj.active else 0.0
    return loss, psi


def objective(net: network.NetworkSpec, theta, batch: Batch, obj: ObjectiveSpec,
              masks=None) -> float:
    loss, psi = objective_terms(net, theta, batch, obj, masks)
    return loss + obj.lam * psi


def cached_objective(net: network.NetworkSpec, theta, batch: Batch, obj: ObjectiveSpec) -> float:
    """Same value as :func:`objective` up to rounding, reusing ``batch.cache``."""
    _check_batch(obj, batch)
    out, logits, _ = network.forward(net, theta, batch.x)
    loss, _ = task_loss_and_grad(obj.task, logits, batch)
    if not obj.active:
        return loss
    psi, _ = regulariser_value_and_grad(obj.regulariser, out, batch.attrs, obj.weights,
                                        batch.cache, need_grad=False)
    return loss + obj.lam * psi


def objective_and_grad(net: network.NetworkSpec, theta, batch: Batch, obj: ObjectiveSpec,
                       masks=None) -> tuple[float, np.ndarray]:
    _check_batch(obj, batch)
    out, logits, cache = network.forward(net, theta, batch.x, masks)
    loss, dlogits = task_loss_and_grad(obj.task, logits, batch)
    value = loss
    if obj.active:
        psi, dpsi = regulariser_value_and_grad(obj.regulariser, out, batch.attrs, obj.weights,
                                               batch.cache)
        value = loss + obj.lam * psi
        dlogits = dlogits + obj.lam * dpsi * _output_derivative(net.head, out)
    return value, network.backward(net, theta, cache, dlogits, masks)


def backward(net, theta, batch, obj, masks=None) -> np.ndarray:
    return objective_and_grad(net, theta, batch, obj, masks)[1]
