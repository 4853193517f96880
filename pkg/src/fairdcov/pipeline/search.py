"""Hyperparameter search with stratified K-fold cross-validation at lambda = 0."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from ..errors import ConfigError
from ..model.network import NetworkSpec
from ..model.objective import ObjectiveSpec
from ..model.training import EarlyStopping, OptimiserConfig, train
from .data import Encoded
from .split import stratified_folds

NETWORK_KEYS = ("n_hidden", "width", "dropout")
OPTIMISER_KEYS = ("lr", "batch_size", "hessian_power", "beta1", "beta2", "epochs")

DEFAULT_SPACE = {
    "lr": {"log": [1e-3, 3e-2]},
    "batch_size": {"choice": [128, 256, 512]},
    "n_hidden": {"int": [1, 3]},
    "width": {"choice": [16, 32, 64]},
    "dropout": {"uniform": [0.0, 0.2]},
    "hessian_power": {"uniform": [0.5, 1.0]},
}


@dataclass(frozen=True)
class ModelSettings:
    network: NetworkSpec
    optimiser: OptimiserConfig
    stopping: EarlyStopping
    deterministic: bool = True


def settings_with(base: ModelSettings, hyper: dict[str, Any]) -> ModelSettings:
    unknown = set(hyper) - set(NETWORK_KEYS) - set(OPTIMISER_KEYS)
    if unknown:
        raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
    net = replace(base.network, **{k: v for k, v in hyper.items() if k in NETWORK_KEYS})
    opt = replace(base.optimiser, **{k: v for k, v in hyper.items() if k in OPTIMISER_KEYS})
    return ModelSettings(net, opt, base.stopping, base.deterministic)


def _draw(rule: dict, rng: np.random.Generator):
    if not isinstance(rule, dict) or len(rule) != 1:
        raise ConfigError(f"search rule must have exactly one kind: {rule!r}")
    (kind, args), = rule.items()
    if kind == "choice":
        return args[int(rng.integers(len(args)))]
    lo, hi = args
    if kind == "log":
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    if kind == "uniform":
        return float(rng.uniform(lo, hi))
    if kind == "int":
        return int(rng.integers(lo, hi + 1))
    raise ConfigError(f"unknown search rule kind {kind!r}")


def random_candidates(space: dict[str, Any]) -> Callable:
    """Uniform (log-uniform for ``log`` rules) sampler over ``space``.

    The returned strategy ignores the trajectory so far; a model-based
    strategy can use it.
    """
    def propose(trajectory, rng):
        return {name: _draw(rule, rng) for name, rule in sorted(space.items())}
    return propose


@dataclass
class Trial:
    hyper: dict[str, Any]
    fold_losses: list[float]

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.fold_losses))


@dataclass
class SearchResult:
    best: dict[str, Any]
    best_loss: float
    trajectory: list[Trial] = field(default_factory=list)


def cross_validate(data: Encoded, settings: ModelSettings, task: str, folds: np.ndarray,
                   seed: int) -> list[float]:
    """Best validation task loss of each fold, trained without regularisation."""
    obj = ObjectiveSpec(task, "none", 0.0)
    losses = []
    for k in range(int(folds.max()) + 1):
        tr, va = np.flatnonzero(folds != k), np.flatnonzero(folds == k)
        _, hist = train(data.subset(tr).batch(), data.subset(va).batch(), settings.network, obj,
                        settings.optimiser, settings.stopping, seed=seed + k,
                        deterministic=settings.deterministic)
        losses.append(min(hist.val_objective))
    return losses


def tune_hyperparams(data: Encoded, base: ModelSettings, task: str, strata, budget: int,
                     n_rand: int | None = None, seed: int = 0, folds: int = 5,
                     space: dict | None = None, strategy: Callable | None = None) -> SearchResult:
    """Keep the candidate with the lowest mean validation loss over ``folds`` folds.

    The first ``n_rand`` candidates come from random sampling; later ones
    come from ``strategy`` (random sampling as well unless one is supplied).
    """
    if budget < 1:
        raise ConfigError("search budget must be at least 1")
    random_propose = random_candidates(space or DEFAULT_SPACE)
    strategy = strategy or random_propose
    n_rand = budget if n_rand is None else n_rand
    fold_ids = stratified_folds(strata, folds, seed)
    rng = np.random.default_rng(seed)
    result = SearchResult({}, math.inf)
    for i in range(budget):
        propose = random_propose if i < n_rand else strategy
        hyper = propose(result.trajectory, rng)
        trial = Trial(hyper, cross_validate(data, settings_with(base, hyper), task, fold_ids, seed))
        result.trajectory.append(trial)
        if trial.mean_loss < result.best_loss:
            result.best, result.best_loss = hyper, trial.mean_loss
    return result
