"""Regularisation-strength calibration on a holdout validation split."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass

import numpy as np

from .. import dcov, fairness, scoring
from ..errors import ConfigError, DegenerateRegulariser, DegenerateVariance, DivergenceDetected
from ..fairness import BinningSpec
from ..model.network import forward
from ..model.objective import ObjectiveSpec, regulariser_value, task_loss_and_grad
from ..model.training import TrainedModel, train
from .data import Encoded
from .search import ModelSettings
from .split import oversample_subgroups

ELBOW_THRESHOLD = 0.05

_GRID_TOKEN = re.compile(r"^\s*([0-9.eE+-]*)\s*(s?)\s*$")


def suggest_lambda_scale(loss: float, psi: float) -> float:
    """Ratio of baseline validation loss to the baseline regulariser value."""
    if psi <= 1e-12:
        raise DegenerateRegulariser(f"baseline regulariser {psi:.3g} too small to anchor lambda")
    return loss / psi


def parse_grid(text: str) -> list[tuple[float, bool]]:
    """Parse ``"0,0.5s,s,10"`` into ``(value, relative_to_scale)`` pairs."""
    out = []
    for token in str(text).split(","):
        m = _GRID_TOKEN.match(token)
        if not m or (not m.group(1) and not m.group(2)):
            raise ConfigError(f"bad grid entry {token!r}")
        value = float(m.group(1)) if m.group(1) else 1.0
        if value < 0 or not math.isfinite(value):
            raise ConfigError(f"grid entries must be finite and >= 0: {token!r}")
        out.append((value, bool(m.group(2))))
    return out


def resolve_grid(entries, scale: float | None) -> list[float]:
    values = []
    for value, relative in entries:
        if relative and scale is None:
            raise ConfigError("grid uses multiples of the suggested scale but none is available")
        values.append(value * scale if relative else value)
    return sorted(set(values))


def grid_needs_scale(entries) -> bool:
    return any(rel for _, rel in entries)


@dataclass
class CalibrationRecord:
    regulariser: str
    lam: float
    seed: int
    rps: float
    ccdcov: float
    jdcov: float
    jsd: float
    uf: float
    task_loss: float
    psi: float
    epochs: int
    diverged: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def predict_rate(model: TrainedModel, data: Encoded) -> np.ndarray:
    """Binary probabilities or per-unit-exposure rates."""
    return model.predict(data.x)


def rps_scores(task: str, pred: np.ndarray, data: Encoded) -> np.ndarray:
    if task == "binary":
        return scoring.rps_binary(pred, data.y)
    return scoring.rps_poisson(pred, data.exposure, data.y.astype(np.int64))


def validation_metrics(model: TrainedModel, data: Encoded, task: str,
                       binning: BinningSpec = BinningSpec()) -> dict[str, float]:
    pred = predict_rate(model, data)
    try:
        uf = fairness.uf_metric(pred, data.keys)
    except DegenerateVariance:
        uf = math.nan
    return {
        "rps": float(np.mean(rps_scores(task, pred, data))),
        "ccdcov": dcov.ccdcov(pred, data.attrs),
        "jdcov": dcov.jdcov2([pred, *data.attrs]),
        "jsd": fairness.js_divergence(pred, data.keys, binning),
        "uf": uf,
    }


def _logits(model: TrainedModel, data: Encoded) -> np.ndarray:
    return forward(model.spec, model.theta, data.x)[1]


def run_once(subtrain: Encoded, valid: Encoded, settings: ModelSettings, task: str,
             regulariser: str, lam: float, seed: int, binning: BinningSpec,
             oversample_min: int = 0) -> tuple[CalibrationRecord, TrainedModel | None]:
    fit = subtrain
    if oversample_min > 0:
        fit = subtrain.subset(oversample_subgroups(subtrain.keys, oversample_min, seed))
    obj = ObjectiveSpec(task, regulariser if lam > 0 else "none", lam)
    try:
        model, hist = train(fit.batch(), valid.batch(), settings.network, obj,
                            settings.optimiser, settings.stopping, seed=seed,
                            deterministic=settings.deterministic)
    except DivergenceDetected as exc:
        nan = math.nan
        return CalibrationRecord(regulariser, lam, seed, nan, nan, nan, nan, nan, nan, nan, 0,
                                 True, str(exc)), None
    m = validation_metrics(model, valid, task, binning)
    loss, _ = task_loss_and_grad(task, _logits(model, valid), valid.batch())
    psi = regulariser_value(regulariser, predict_rate(model, valid), valid.attrs) \
        if regulariser != "none" else 0.0
    return CalibrationRecord(regulariser, lam, seed, m["rps"], m["ccdcov"], m["jdcov"], m["jsd"],
                             m["uf"], loss, psi, hist.best_epoch), model


@dataclass
class CalibrationResult:
    records: list[CalibrationRecord]
    scales: dict[str, float]
    grids: dict[str, list[float]]


def calibrate_lambda(subtrain: Encoded, valid: Encoded, settings: ModelSettings, task: str,
                     grid, seeds, regularisers=("ccdcov",), binning: BinningSpec = BinningSpec(),
                     oversample_min: int = 0, on_model=None) -> CalibrationResult:
    """Train one model per (regulariser, lambda, seed) and score it on ``valid``.

    ``grid`` is a string such as ``"0,0.5s,s,10s"`` or a list of numbers; the
    ``s`` suffix multiplies the suggested scale of each regulariser: mean
    baseline validation RPS over the mean baseline regulariser value, both
    from the lambda = 0 runs. Those runs are shared by all regularisers.
    ``on_model(record, model)`` is called after every successful run.
    """
    entries = parse_grid(grid) if isinstance(grid, str) else [(float(g), False) for g in grid]
    if not any(v == 0 for v, _ in entries):
        raise ConfigError("the lambda grid must include the 0 baseline")
    seeds = sorted(int(s) for s in seeds)
    def run(reg, lam, seed):
        rec, model = run_once(subtrain, valid, settings, task, reg, lam, seed, binning,
                              oversample_min)
        if on_model is not None and model is not None:
            on_model(rec, model)
        return rec, model

    baseline = [run("none", 0.0, s) for s in seeds]
    records, scales, grids = [], {}, {}
    for reg in regularisers:
        base_ok = [(r, m) for r, m in baseline if not r.diverged]
        for r, _ in baseline:
            records.append(CalibrationRecord(**{**r.to_dict(), "regulariser": reg}))
        if base_ok:
            loss = float(np.mean([r.rps for r, _ in base_ok]))
            psi = float(np.mean([regulariser_value(reg, predict_rate(m, valid), valid.attrs)
                                 for _, m in base_ok]))
            try:
                scales[reg] = suggest_lambda_scale(loss, psi)
            except DegenerateRegulariser:
                if grid_needs_scale(entries):
                    raise
        grids[reg] = resolve_grid(entries, scales.get(reg))
        for lam in grids[reg]:
            if lam == 0:
                continue
            for s in seeds:
                records.append(run(reg, lam, s)[0])
    records.sort(key=lambda r: (r.regulariser, r.lam, r.seed))
    return CalibrationResult(records, scales, grids)


SUMMARY_COLUMNS = ("regulariser", "lambda", "mean_RPS", "mean_JSD", "mean_UF", "mean_CCdCov",
                   "mean_JdCov", "n_seeds", "n_diverged")


def aggregate(records) -> list[dict]:
    """One row per (regulariser, lambda): means over non-divergent seeds."""
    groups: dict[tuple, list[CalibrationRecord]] = {}
    for r in sorted(records, key=lambda r: (r.regulariser, r.lam, r.seed)):
        groups.setdefault((r.regulariser, r.lam), []).append(r)
    rows = []
    for (reg, lam), rs in groups.items():
        ok = [r for r in rs if not r.diverged]

        def mean(attr):
            vals = [getattr(r, attr) for r in ok]
            vals = [v for v in vals if not math.isnan(v)]
            return float(np.mean(vals)) if vals else math.nan

        rows.append({"regulariser": reg, "lambda": lam, "mean_RPS": mean("rps"),
                     "mean_JSD": mean("jsd"), "mean_UF": mean("uf"),
                     "mean_CCdCov": mean("ccdcov"), "mean_JdCov": mean("jdcov"),
                     "n_seeds": len(ok), "n_diverged": len(rs) - len(ok)})
    return rows


TABLE_COLUMNS = ("regulariser", "lambda", "seed", "RPS", "JSD", "UF", "CCdCov", "JdCov",
                 "task_loss", "psi", "epochs", "n_seeds", "n_diverged", "note")


def calibration_table(records) -> list[dict]:
    """Per-run rows followed, for each (regulariser, lambda), by its ``seed = "mean"`` row."""
    table = []
    for agg in aggregate(records):
        mine = [r for r in records if (r.regulariser, r.lam) == (agg["regulariser"], agg["lambda"])]
        for r in sorted(mine, key=lambda r: r.seed):
            table.append({"regulariser": r.regulariser, "lambda": r.lam, "seed": r.seed,
                          "RPS": r.rps, "JSD": r.jsd, "UF": r.uf, "CCdCov": r.ccdcov,
                          "JdCov": r.jdcov, "task_loss": r.task_loss, "psi": r.psi,
                          "epochs": r.epochs, "n_seeds": 1, "n_diverged": int(r.diverged),
                          "note": r.note})
        table.append({"regulariser": agg["regulariser"], "lambda": agg["lambda"], "seed": "mean",
                      "RPS": agg["mean_RPS"], "JSD": agg["mean_JSD"], "UF": agg["mean_UF"],
                      "CCdCov": agg["mean_CCdCov"], "JdCov": agg["mean_JdCov"],
                      "task_loss": "", "psi": "", "epochs": "", "n_seeds": agg["n_seeds"],
                      "n_diverged": agg["n_diverged"], "note": ""})
    return table


def elbow(lambdas, mean_jsd, threshold: float = ELBOW_THRESHOLD) -> float | None:
    """Smallest lambda whose next grid step cuts mean JSD by less than ``threshold`` relative.

    Advisory only; ``None`` when every step still helps.
    """
    pairs = sorted(zip(lambdas, mean_jsd))
    for (lam, jsd), (_, nxt) in zip(pairs, pairs[1:]):
        if math.isnan(jsd) or math.isnan(nxt):
            continue
        if jsd <= 0 or (jsd - nxt) / jsd < threshold:
            return lam
    return None
