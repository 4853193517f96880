"""Run configuration: dataset schema plus training, search and calibration settings."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigError, SchemaError
from ..fairness import BinningSpec
from ..model.objective import TASKS, regulariser_name
from ..model.training import EarlyStopping, OptimiserConfig

ROLES = ("response", "exposure", "feature", "protected", "drop")
ENCODINGS = ("one-hot", "binary", "ordinal", "min-max", "none")
KINDS = ("binary", "categorical", "continuous")
RECIPES = ("generic", "compas", "pg15")


@dataclass(frozen=True)
class ColumnSpec:
    role: str
    encoding: str = "none"
    kind: str | None = None
    feature: bool = False
    positive: Any = None
    order: tuple | None = None
    unseen: str = "error"

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r}")
        if self.encoding not in ENCODINGS:
            raise SchemaError(f"unknown encoding {self.encoding!r}")
        if self.role == "protected" and self.kind not in KINDS:
            raise SchemaError(f"protected columns need kind in {KINDS}")
        if self.unseen not in ("error", "ignore"):
            raise SchemaError("unseen policy must be 'error' or 'ignore'")

    @property
    def is_input(self) -> bool:
        return self.role == "feature" or (self.role == "protected" and self.feature)


@dataclass(frozen=True)
class DatasetSchema:
    columns: dict[str, ColumnSpec]
    task: str = "binary"
    recipe: str = "generic"

    def __post_init__(self):
        if self.task not in TASKS:
            raise SchemaError(f"task must be one of {TASKS}")
        if self.recipe not in RECIPES:
            raise SchemaError(f"recipe must be one of {RECIPES}")
        roles = [c.role for c in self.columns.values()]
        if roles.count("response") != 1:
            raise SchemaError("schema needs exactly one response column")
        if (roles.count("exposure") == 1) != (self.task == "poisson") or roles.count("exposure") > 1:
            raise SchemaError("an exposure column is required for, and only for, the poisson task")
        if not any(c.is_input for c in self.columns.values()):
            raise SchemaError("schema has no model inputs")

    def named(self, role: str) -> list[str]:
        return [name for name, c in self.columns.items() if c.role == role]

    @property
    def response(self) -> str:
        return self.named("response")[0]

    @property
    def exposure(self) -> str | None:
        names = self.named("exposure")
        return names[0] if names else None

    @property
    def inputs(self) -> list[str]:
        return [name for name, c in self.columns.items() if c.is_input]

    @property
    def protected(self) -> list[str]:
        return self.named("protected")


@dataclass(frozen=True)
class SplitPlan:
    train: float = 0.8
    subtrain: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.train < 1 and 0 < self.subtrain < 1):
            raise ConfigError("split fractions must lie strictly between 0 and 1")

    @property
    def test(self) -> float:
        return 1.0 - self.train

    @property
    def valid(self) -> float:
        return 1.0 - self.subtrain


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 0
    n_rand: int = 0
    folds: int = 5
    space: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CalibrationConfig:
    regularisers: tuple[str, ...] = ("ccdcov", "jdcov")
    grid: str = "0,0.3s,s,3s"
    seeds: int = 10


@dataclass(frozen=True)
class EvaluationConfig:
    replicates: int = 199
    display_min_count: int = 100
    smoothing_attr: str | None = None


@dataclass(frozen=True)
class RunConfig:
    schema: DatasetSchema
    data: Path
    seed: int = 0
    n_hidden: int = 2
    width: int = 32
    dropout: float = 0.0
    optimiser: OptimiserConfig = OptimiserConfig()
    stopping: EarlyStopping = EarlyStopping()
    split: SplitPlan = SplitPlan()
    binning: BinningSpec = BinningSpec()
    oversample_min: int = 0
    search: SearchConfig = SearchConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    source: Path | None = None


def _build(cls, raw: dict | None, where: str):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def parse_schema(raw: dict) -> DatasetSchema:
    cols = {}
    for name, spec in (raw.get("columns") or {}).items():
        if isinstance(spec, str):
            spec = {"role": spec}
        spec = dict(spec)
        if "order" in spec and spec["order"] is not None:
            spec["order"] = tuple(spec["order"])
        try:
            cols[str(name)] = ColumnSpec(**spec)
        except TypeError as exc:
            raise SchemaError(f"column {name!r}: {exc}") from exc
    return DatasetSchema(cols, raw.get("task", "binary"), raw.get("recipe", "generic"))


def parse_config(raw: dict, base: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    if "data" not in raw:
        raise ConfigError("configuration needs a 'data' path")
    schema = parse_schema(raw)
    data = Path(raw["data"])
    if base is not None and not data.is_absolute():
        data = base / data
    net = raw.get("network") or {}
    binning = dict(raw.get("binning") or {})
    if "quantiles" in binning:
        binning["quantiles"] = tuple(binning["quantiles"])
    calib = dict(raw.get("calibration") or {})
    if "regularisers" in calib:
        calib["regularisers"] = tuple(regulariser_name(r) for r in calib["regularisers"])
    if isinstance(calib.get("grid"), list):
        calib["grid"] = ",".join(str(g) for g in calib["grid"])
    return RunConfig(
        schema=schema,
        data=data,
        seed=int(raw.get("seed", 0)),
        n_hidden=int(net.get("n_hidden", 2)),
        width=int(net.get("width", 32)),
        dropout=float(net.get("dropout", 0.0)),
        optimiser=_build(OptimiserConfig, raw.get("optimiser"), "optimiser"),
        stopping=_build(EarlyStopping, raw.get("early_stopping"), "early_stopping"),
        split=_build(SplitPlan, raw.get("split"), "split"),
        binning=_build(BinningSpec, binning, "binning"),
        oversample_min=int(raw.get("oversample_min", 0)),
        search=_build(SearchConfig, raw.get("search"), "search"),
        calibration=_build(CalibrationConfig, calib, "calibration"),
        evaluation=_build(EvaluationConfig, raw.get("evaluation"), "evaluation"),
        source=base,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(raw, path.parent)
