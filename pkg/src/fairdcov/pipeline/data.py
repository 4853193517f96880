"""CSV ingestion with dataset recipes, and frozen preprocessing transforms."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import EmptyInput, SchemaError
from ..fairness import apply_cuts, fit_cuts
from ..model.objective import Batch
from .config import ColumnSpec, DatasetSchema

COMPAS_OTHER = ("Asian", "Native American")
COMPAS_FILTER_COLUMNS = ("days_b_screening_arrest", "is_recid", "c_charge_degree", "score_text")
DAYS_PER_YEAR = 365.0


@dataclass
class Rejection:
    row: int
    column: str
    reason: str


@dataclass
class IngestResult:
    table: pd.DataFrame
    rejects: list[Rejection] = field(default_factory=list)
    dropped_by_recipe: int = 0


def _numeric_columns(schema: DatasetSchema) -> list[str]:
    out = []
    for name, col in schema.columns.items():
        if col.role in ("response", "exposure") or (col.role != "drop" and col.encoding in ("min-max", "none")):
            out.append(name)
    return out


def _compas(raw: pd.DataFrame) -> pd.DataFrame:
    missing = [c for c in COMPAS_FILTER_COLUMNS if c not in raw.columns]
    if missing:
        raise SchemaError(f"compas recipe needs columns {missing}")
    keep = (
        raw["days_b_screening_arrest"].between(-30, 30)
        & (raw["is_recid"] != -1)
        & (raw["c_charge_degree"] != "O")
        & (raw["score_text"].notna())
        & (raw["score_text"] != "N/A")
    )
    out = raw.loc[keep].copy()
    if "race" in out.columns:
        out["race"] = out["race"].replace({r: "Other" for r in COMPAS_OTHER})
    return out


def _pg15(raw: pd.DataFrame, schema: DatasetSchema) -> pd.DataFrame:
    """Drop the leading run of zero-claim rows that duplicate another row."""
    cols = [n for n, c in schema.columns.items() if c.role != "drop"]
    dup = raw.duplicated(subset=cols, keep=False).to_numpy()
    zero = (pd.to_numeric(raw[schema.response], errors="coerce") == 0).to_numpy()
    bad = dup & zero
    lead = len(bad) if bad.all() else int(np.argmin(bad))
    out = raw.iloc[lead:].copy()
    expo = schema.exposure
    out[expo] = pd.to_numeric(out[expo], errors="coerce") / DAYS_PER_YEAR
    return out


def ingest_csv(path, schema: DatasetSchema) -> IngestResult:
    """Read a CSV, apply the schema's recipe, and reject rows that fail to parse.

    Rows are rejected, not repaired, when a schema column is missing a value or
    a numeric column does not parse. The result keeps only schema columns
    (``drop`` columns excluded) and a fresh 0-based index.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise SchemaError(f"cannot parse {path}: {exc}") from exc
    wanted = [n for n, c in schema.columns.items() if c.role != "drop"]
    missing = [n for n in wanted if n not in raw.columns]
    if missing:
        raise SchemaError(f"columns missing from {path.name}: {missing}")
    raw = raw.reset_index(drop=True)
    raw["_row"] = np.arange(len(raw))
    before = len(raw)
    if schema.recipe == "compas":
        raw = _compas(raw)
    elif schema.recipe == "pg15":
        raw = _pg15(raw, schema)
    dropped = before - len(raw)
    rejects = []
    ok = np.ones(len(raw), dtype=bool)
    for name in wanted:
        values = raw[name]
        if name in _numeric_columns(schema):
            values = pd.to_numeric(values, errors="coerce")
            raw[name] = values
        bad = values.isna().to_numpy()
        for r in raw["_row"].to_numpy()[bad & ok]:
            rejects.append(Rejection(int(r), name, "missing or unparseable value"))
        ok &= ~bad
    table = raw.loc[ok, wanted].reset_index(drop=True)
    return IngestResult(table, rejects, dropped)


@dataclass(frozen=True)
class ColumnTransform:
    """Frozen parameters for encoding one column."""

    name: str
    encoding: str
    categories: tuple = ()
    lo: float = 0.0
    hi: float = 0.0
    positive: str | None = None
    unseen: str = "error"

    @property
    def output_names(self) -> list[str]:
        if self.encoding == "one-hot":
            return [f"{self.name}={c}" for c in self.categories]
        return [self.name]

    def encode(self, values: pd.Series) -> np.ndarray:
        if self.encoding in ("min-max", "none"):
            v = values.to_numpy(dtype=np.float64)
            if self.encoding == "none":
                return v[:, None]
            width = self.hi - self.lo
            if width <= 0:
                return np.zeros((v.size, 1))
            return ((v - self.lo) / width)[:, None]
        codes = self.codes(values)
        if self.encoding == "one-hot":
            out = np.zeros((codes.size, len(self.categories)))
            valid = codes >= 0
            out[np.flatnonzero(valid), codes[valid]] = 1.0
            return out
        if self.encoding == "binary":
            return (values.astype(str).to_numpy() == self.positive).astype(np.float64)[:, None]
        return codes.astype(np.float64)[:, None]

    def codes(self, values: pd.Series) -> np.ndarray:
        """Category index per value; ``-1`` for unseen values under the ``ignore`` policy."""
        lookup = {c: i for i, c in enumerate(self.categories)}
        strs = values.astype(str).to_numpy()
        codes = np.array([lookup.get(s, -1) for s in strs], dtype=np.int64)
        if np.any(codes < 0) and self.unseen == "error":
            unseen = sorted(set(strs[codes < 0]))
            raise SchemaError(f"unseen categories in {self.name!r}: {unseen}")
        return codes

    def to_dict(self) -> dict:
        return {"name": self.name, "encoding": self.encoding, "categories": list(self.categories),
                "lo": self.lo, "hi": self.hi, "positive": self.positive, "unseen": self.unseen}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnTransform":
        return cls(d["name"], d["encoding"], tuple(d["categories"]), d["lo"], d["hi"],
                   d["positive"], d["unseen"])


def _category_order(values: pd.Series, col: ColumnSpec) -> tuple[str, ...]:
    if col.order is not None:
        return tuple(str(v) for v in col.order)
    uniq = pd.unique(values)
    try:
        uniq = sorted(uniq)
    except TypeError:
        uniq = sorted(uniq, key=str)
    return tuple(str(v) for v in uniq)


def _fit_column(name: str, col: ColumnSpec, values: pd.Series) -> ColumnTransform:
    enc = col.encoding
    if enc in ("min-max", "none"):
        v = values.to_numpy(dtype=np.float64)
        return ColumnTransform(name, enc, lo=float(v.min()), hi=float(v.max()))
    cats = _category_order(values, col)
    positive = None
    if enc == "binary":
        if len(cats) > 2:
            raise SchemaError(f"binary column {name!r} has {len(cats)} categories")
        positive = str(col.positive) if col.positive is not None else cats[-1]
        if positive not in cats and len(cats) == 2:
            raise SchemaError(f"positive value {positive!r} not found in {name!r}")
    return ColumnTransform(name, enc, cats, positive=positive, unseen=col.unseen)


@dataclass(frozen=True)
class Transforms:
    """Everything fitted on the fitting split; applied unchanged to other splits."""

    inputs: tuple[ColumnTransform, ...]
    protected: tuple[ColumnTransform, ...]
    key_cuts: dict[str, tuple[float, ...]]
    key_categories: dict[str, tuple[str, ...]]
    response: str
    exposure: str | None

    @property
    def feature_names(self) -> list[str]:
        return [n for t in self.inputs for n in t.output_names]

    @property
    def protected_names(self) -> list[str]:
        return [t.name for t in self.protected]

    def to_dict(self) -> dict:
        return {
            "inputs": [t.to_dict() for t in self.inputs],
            "protected": [t.to_dict() for t in self.protected],
            "key_cuts": {k: list(v) for k, v in self.key_cuts.items()},
            "key_categories": {k: list(v) for k, v in self.key_categories.items()},
            "response": self.response,
            "exposure": self.exposure,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transforms":
        return cls(
            tuple(ColumnTransform.from_dict(t) for t in d["inputs"]),
            tuple(ColumnTransform.from_dict(t) for t in d["protected"]),
            {k: tuple(v) for k, v in d["key_cuts"].items()},
            {k: tuple(v) for k, v in d["key_categories"].items()},
            d["response"],
            d["exposure"],
        )


@dataclass
class Encoded:
    x: np.ndarray
    y: np.ndarray
    attrs: list[np.ndarray]
    keys: np.ndarray
    exposure: np.ndarray | None
    feature_names: list[str]
    protected_names: list[str]
    raw: pd.DataFrame

    def __len__(self) -> int:
        return self.x.shape[0]

    def batch(self) -> Batch:
        return Batch(self.x, self.y, self.attrs, self.exposure)

    def subset(self, idx) -> "Encoded":
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.int64)
        return Encoded(self.x[idx], self.y[idx], [a[idx] for a in self.attrs], self.keys[idx],
                       None if self.exposure is None else self.exposure[idx],
                       self.feature_names, self.protected_names,
                       self.raw.iloc[idx].reset_index(drop=True))


def fit_transforms(table: pd.DataFrame, schema: DatasetSchema,
                   quantiles=(1 / 3, 2 / 3)) -> Transforms:
    """Fit encoders and subgroup-key cut points on ``table`` (the fitting split)."""
    if len(table) == 0:
        raise EmptyInput("cannot fit transforms on an empty table")
    inputs = tuple(_fit_column(n, schema.columns[n], table[n]) for n in schema.inputs)
    protected, cuts, cats = [], {}, {}
    for name in schema.protected:
        col = schema.columns[name]
        protected.append(_fit_column(name, col, table[name]))
        if col.kind == "continuous":
            cuts[name] = tuple(float(c) for c in fit_cuts(table[name].to_numpy(float), quantiles))
        else:
            cats[name] = _category_order(table[name], col)
    return Transforms(inputs, tuple(protected), cuts, cats, schema.response, schema.exposure)


def subgroup_keys(table: pd.DataFrame, tr: Transforms) -> np.ndarray:
    """Integer subgroup code per protected attribute (continuous ones binned)."""
    cols = []
    for name in tr.protected_names:
        if name in tr.key_cuts:
            cols.append(apply_cuts(table[name].to_numpy(float), tr.key_cuts[name]))
        else:
            lookup = {c: i for i, c in enumerate(tr.key_categories[name])}
            cols.append(np.array([lookup.get(s, -1) for s in table[name].astype(str)]))
    if not cols:
        return np.zeros((len(table), 0), dtype=np.int64)
    return np.column_stack(cols).astype(np.int64)


def preprocess(table: pd.DataFrame, tr: Transforms) -> Encoded:
    """Encode ``table`` with frozen transforms; nothing is refitted."""
    x = np.hstack([t.encode(table[t.name]) for t in tr.inputs]) if tr.inputs else np.zeros((len(table), 0))
    attrs = [t.encode(table[t.name]) for t in tr.protected]
    attrs = [a[:, 0] if a.shape[1] == 1 else a for a in attrs]
    expo = None if tr.exposure is None else table[tr.exposure].to_numpy(np.float64)
    return Encoded(x, table[tr.response].to_numpy(np.float64), attrs, subgroup_keys(table, tr),
                   expo, tr.feature_names, tr.protected_names, table.reset_index(drop=True))
