"""Held-out evaluation: accuracy, fairness metrics, tests and subgroup summaries."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import dcov, fairness, scoring
from ..errors import DegenerateVariance, EmptyInput
from ..fairness import BinningSpec
from ..model.training import TrainedModel
from .calibrate import predict_rate, rps_scores
from .data import Encoded, Transforms


@dataclass
class FairnessReport:
    task: str
    n: int
    rps: float
    ccdcov: float
    jdcov: float
    jsd: float
    uf: float | None
    uf_degenerate: bool
    chi2_p: float
    perm_joint_p: float | None
    perm_mutual_p: float | None
    replicates: int
    acc: float | None = None
    poisson_deviance: float | None = None
    subgroups: list[dict] = field(default_factory=list)
    ecdf: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "FairnessReport":
        return cls.from_dict(json.loads(text))


def key_labels(keys: np.ndarray, names, tr: Transforms | None = None) -> list[str]:
    """Readable subgroup labels such as ``sex=Male|age=[27,37)``."""
    out = []
    for row in np.asarray(keys).reshape(len(keys), -1):
        parts = []
        for name, code in zip(names, row):
            if tr is not None and name in tr.key_categories:
                cats = tr.key_categories[name]
                value = cats[code] if 0 <= code < len(cats) else "unseen"
            elif tr is not None and name in tr.key_cuts:
                edges = ["-inf", *[f"{c:g}" for c in tr.key_cuts[name]], "inf"]
                value = f"[{edges[code]},{edges[code + 1]})"
            else:
                value = str(int(code))
            parts.append(f"{name}={value}")
        out.append("|".join(parts))
    return out


def subgroup_table(pred, observed, keys, names, tr: Transforms | None = None) -> list[dict]:
    ids, uniq = fairness.subgroup_index(keys)
    labels = key_labels(uniq, names, tr)
    rows = []
    for g, label in enumerate(labels):
        member = ids == g
        rows.append({"subgroup": label, "count": int(member.sum()),
                     "mean_pred": float(pred[member].mean()),
                     "mean_obs": float(observed[member].mean())})
    return rows


def ecdf(values) -> dict[str, list[float]]:
    """Exact empirical CDF: jump points and the cumulative share at each."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    x, counts = np.unique(v, return_counts=True)
    return {"x": x.tolist(), "p": (np.cumsum(counts) / v.size).tolist()}


def _finite(v: float) -> float | None:
    return None if v is None or not math.isfinite(v) else float(v)


def evaluate_model(model: TrainedModel, data: Encoded, task: str,
                   binning: BinningSpec = BinningSpec(), transforms: Transforms | None = None,
                   replicates: int = 199, seed: int = 0) -> FairnessReport:
    if len(data) == 0:
        raise EmptyInput("cannot evaluate on an empty split")
    pred = predict_rate(model, data)
    try:
        uf, degenerate = fairness.uf_metric(pred, data.keys), False
    except DegenerateVariance:
        uf, degenerate = None, True
    acc = dev = None
    if task == "binary":
        acc = scoring.accuracy(pred, data.y)
        observed = data.y
    else:
        dev = scoring.poisson_deviance(data.y, pred * data.exposure)
        observed = data.y / data.exposure
    chi2 = fairness.chi2_independence_test(pred, data.attrs)
    joint = mutual = None
    if replicates > 0:
        joint = fairness.permutation_test_joint(pred, data.attrs, replicates, seed).p_value
        mutual = fairness.permutation_test_mutual(pred, data.attrs, replicates, seed).p_value
    ids, uniq = fairness.subgroup_index(data.keys)
    labels = key_labels(uniq, data.protected_names, transforms)
    curves = {label: ecdf(pred[ids == g]) for g, label in enumerate(labels)}
    return FairnessReport(
        task=task,
        n=len(data),
        rps=float(np.mean(rps_scores(task, pred, data))),
        ccdcov=dcov.ccdcov(pred, data.attrs),
        jdcov=dcov.jdcov2([pred, *data.attrs]),
        jsd=fairness.js_divergence(pred, data.keys, binning),
        uf=_finite(uf) if uf is not None else None,
        uf_degenerate=degenerate,
        chi2_p=chi2.p_value,
        perm_joint_p=joint,
        perm_mutual_p=mutual,
        replicates=replicates,
        acc=acc,
        poisson_deviance=dev,
        subgroups=subgroup_table(pred, observed, data.keys, data.protected_names, transforms),
        ecdf=curves,
    )
