"""Mini-batch training with AdaHessian, early stopping and checkpoints."""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import DivergenceDetected, ShapeMismatch
from . import adahessian, network
from .objective import Batch, ObjectiveSpec, cached_objective, objective_and_grad

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class OptimiserConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    hessian_power: float = 1.0
    probes: int = 1
    batch_size: int = 256
    epochs: int = 100

    def __post_init__(self):
        if self.batch_size < 4:
            raise ValueError("batch size must be >= 4")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class EarlyStopping:
    patience: int = 10
    min_delta: float = 0.0


@dataclass
class History:
    train_objective: list[float] = field(default_factory=list)
    val_objective: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


@dataclass(frozen=True)
class TrainedModel:
    spec: network.NetworkSpec
    theta: np.ndarray
    seed: int
    preprocessing: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.theta.shape != (self.spec.n_params,):
            raise ShapeMismatch("parameter vector does not match the network")
        self.theta.setflags(write=False)

    def predict(self, x, exposure=None) -> np.ndarray:
        return network.predict(self.spec, self.theta, x, exposure)

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "network": self.spec.to_dict(),
            "theta": [float(v) for v in self.theta],
            "seed": self.seed,
            "preprocessing": self.preprocessing,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainedModel":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        return cls(network.NetworkSpec(**data["network"]),
                   np.array(data["theta"], dtype=np.float64),
                   int(data["seed"]), data.get("preprocessing", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle and split into near-equal batches, none smaller than 4 rows."""
    n_batches = max(1, min(math.ceil(n / batch_size), n // 4))
    return np.array_split(rng.permutation(n), n_batches)


def _streams(seed: int):
    init, shuffle, probe = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(shuffle),
            np.random.default_rng(probe))


def train(subtrain: Batch, valid: Batch | None, net: network.NetworkSpec, obj: ObjectiveSpec,
          opt: OptimiserConfig = OptimiserConfig(), stopping: EarlyStopping | None = EarlyStopping(),
          seed: int = 0, deterministic: bool = True, preprocessing: dict | None = None,
          theta0: np.ndarray | None = None) -> tuple[TrainedModel, History]:
    """Train ``net`` on ``subtrain``.

    With a validation batch and a stopping policy, training stops once the
    validation objective has not improved for ``patience`` epochs and the
    best weights are restored. Without them it runs ``opt.epochs`` epochs.
    On a non-finite loss, :class:`DivergenceDetected` carries the last good
    model as ``checkpoint``.
    """
    limits = threadpool_limits(1) if deterministic else contextlib.nullcontext()
    with limits:
        return _train(subtrain, valid, net, obj, opt, stopping, seed, preprocessing or {}, theta0)


def _train(subtrain, valid, net, obj, opt, stopping, seed, preprocessing, theta0):
    init_rng, shuffle_rng, probe_rng = _streams(seed)
    theta = network.init_params(net, init_rng) if theta0 is None else np.array(theta0, dtype=float)
    state = adahessian.AdaHessianState.zeros(
        net.n_params, lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2,
        hessian_power=opt.hessian_power, probes=opt.probes)
    blocks = net.tensor_slices()
    use_valid = valid is not None and stopping is not None
    history = History()
    best_theta, best_val, wait = theta.copy(), math.inf, 0

    def snapshot(params):
        return TrainedModel(net, params.copy(), seed, preprocessing)

    for epoch in range(1, opt.epochs + 1):
        losses, sizes = [], []
        for idx in batch_indices(len(subtrain), opt.batch_size, shuffle_rng):
            batch = subtrain.subset(idx)
            masks = network.dropout_masks(net, len(idx), shuffle_rng)

            def grad_fn(p, batch=batch, masks=masks):
                return objective_and_grad(net, p, batch, obj, masks)[1]

            value, grad = objective_and_grad(net, theta, batch, obj, masks)
            if not math.isfinite(value):
                raise DivergenceDetected(f"non-finite objective at epoch {epoch}",
                                         snapshot(best_theta))
            diag = adahessian.hutchinson_diag(grad_fn, theta, opt.probes, probe_rng, blocks, grad)
            try:
                theta, state = adahessian.adahessian_step(state, theta, grad, diag)
            except DivergenceDetected as exc:
                raise DivergenceDetected(f"{exc} at epoch {epoch}", snapshot(best_theta)) from exc
            losses.append(value)
            sizes.append(len(idx))
        history.train_objective.append(float(np.average(losses, weights=sizes)))
        if not use_valid:
            best_theta, history.best_epoch = theta, epoch
            continue
        val = cached_objective(net, theta, valid, obj)
        if not math.isfinite(val):
            raise DivergenceDetected(f"non-finite validation objective at epoch {epoch}",
                                     snapshot(best_theta))
        history.val_objective.append(val)
        if val < best_val - stopping.min_delta:
            best_val, best_theta, history.best_epoch, wait = val, theta.copy(), epoch, 0
        else:
            wait += 1
            if wait >= stopping.patience:
                history.stopped_early = True
                break
    return snapshot(best_theta), history


def history_dict(history: History) -> dict:
    return asdict(history)
