"""Command-line entry point: prep, calibrate, train, evaluate, report, demo.

All commands share one output directory. ``manifest.json`` in that
directory records each run with the files it wrote (and their SHA-256),
the data splits it read, and the checkpoints already scored on the test
split.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import hashlib
import json
import math
import os
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from threadpoolctl import threadpool_limits

from . import plots, scoring
from .errors import ConfigError, DivergenceDetected, FairDcovError, SchemaError
from .model.network import NetworkSpec
from .model.objective import ObjectiveSpec, regulariser_name
from .model.training import TrainedModel, train
from .pipeline import calibrate as cal
from .pipeline.config import RunConfig, load_config
from .pipeline.data import Transforms, fit_transforms, ingest_csv, preprocess
from .pipeline.report import FairnessReport, evaluate_model, key_labels
from .pipeline.search import ModelSettings, settings_with, tune_hyperparams
from .pipeline.split import oversample_subgroups, strata_labels, stratified_split
from .synthetic import planted_bias

THREADS_ENV = "FAIRDCOV_THREADS"
SPLITS = ("subtrain", "valid", "test")
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

REPORT_COLUMNS = ("model", "regulariser", "lambda", "n", "rps", "acc", "poisson_deviance",
                  "ccdcov", "jdcov", "jsd", "uf", "chi2_p", "perm_joint_p", "perm_mutual_p")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Append-only run log kept as ``manifest.json`` in the output directory."""

    def __init__(self, out: Path):
        self.path = out / "manifest.json"
        self.data = {"runs": [], "evaluations": {}}
        if self.path.exists():
            self.data = json.loads(self.path.read_text())

    def evaluated(self, checksum: str) -> str | None:
        return self.data["evaluations"].get(checksum)

    def record(self, command: str, args, seeds, inputs, outputs, splits_read, started,
               notes=None, evaluation: tuple[str, str] | None = None) -> None:
        out = self.path.parent
        self.data["runs"].append({
            "command": command,
            "config": None if args.config is None else str(args.config),
            "seeds": list(seeds),
            "inputs": sorted(str(p) for p in inputs),
            "outputs": {str(Path(p).relative_to(out)): sha256(p) for p in sorted(outputs)},
            "splits_read": sorted(splits_read),
            "started": started,
            "finished": _now(),
            "notes": notes or {},
        })
        if evaluation is not None:
            self.data["evaluations"][evaluation[0]] = evaluation[1]
        readers = sorted({r["command"] for r in self.data["runs"] if "test" in r["splits_read"]})
        self.data["leakage_audit"] = {"test_readers": readers,
                                      "clean": set(readers) <= {"evaluate"}}
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True))


def _model_tag(regulariser: str, lam: float) -> str:
    return f"{regulariser}_lam{lam:g}"


def _bundle(out: Path) -> Path:
    return out / "bundle"


def _read_split(out: Path, name: str, cfg: RunConfig) -> pd.DataFrame:
    path = _bundle(out) / f"{name}.csv"
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'prep' first")
    schema = dataclasses.replace(cfg.schema, recipe="generic")
    return ingest_csv(path, schema).table


def _transforms(out: Path) -> Transforms:
    path = _bundle(out) / "transforms.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'prep' first")
    return Transforms.from_dict(json.loads(path.read_text()))


def _settings(cfg: RunConfig, n_inputs: int, deterministic: bool,
              out: Path | None = None) -> ModelSettings:
    """Config settings, overridden by the search result in ``out`` if there is one."""
    net = NetworkSpec(n_inputs, cfg.n_hidden, cfg.width,
                      "sigmoid" if cfg.schema.task == "binary" else "exp", cfg.dropout)
    base = ModelSettings(net, cfg.optimiser, cfg.stopping, deterministic)
    tuned = None if out is None else out / "calibration" / "search.json"
    if tuned is not None and tuned.exists():
        base = settings_with(base, json.loads(tuned.read_text())["best"])
    return base


def _seeds(cfg: RunConfig, args) -> list[int]:
    n = args.seeds if args.seeds is not None else cfg.calibration.seeds
    if n < 1:
        raise ConfigError("--seeds must be at least 1")
    return [args.seed + i for i in range(n)]


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False))
    return path


def cmd_prep(cfg: RunConfig, args, out: Path, manifest: Manifest) -> dict:
    started = _now()
    result = ingest_csv(cfg.data, cfg.schema)
    table = result.table
    plan = dataclasses.replace(cfg.split, seed=args.seed)
    # strata only decide membership; every fitted statistic comes from subtrain
    prelim = fit_transforms(table, cfg.schema, cfg.binning.quantiles)
    strata = strata_labels(table[cfg.schema.response].to_numpy(float),
                           preprocess(table, prelim).keys, cfg.schema.task)
    train_idx, test_idx = stratified_split(strata, plan.test, plan.seed)
    sub_rel, val_rel = stratified_split(strata[train_idx], plan.valid, plan.seed)
    parts = {"subtrain": train_idx[sub_rel], "valid": train_idx[val_rel], "test": test_idx}
    bundle = _bundle(out)
    bundle.mkdir(parents=True, exist_ok=True)
    written = []
    for name, idx in parts.items():
        path = bundle / f"{name}.csv"
        table.iloc[idx].to_csv(path, index=False, lineterminator="\n")
        written.append(path)
    tr = fit_transforms(table.iloc[parts["subtrain"]], cfg.schema, cfg.binning.quantiles)
    written.append(_write_json(bundle / "transforms.json", tr.to_dict()))
    rejects = [dataclasses.asdict(r) for r in result.rejects]
    written.append(plots.write_csv(bundle / "rejects.csv", rejects, ("row", "column", "reason")))
    summary = [{"split": k, "rows": len(v)} for k, v in parts.items()]
    written.append(plots.write_csv(bundle / "splits.csv", summary, ("split", "rows")))
    notes = {"rows": len(table), "rejected": len(rejects),
             "dropped_by_recipe": result.dropped_by_recipe,
             "features": tr.feature_names}
    manifest.record("prep", args, [plan.seed], [cfg.data], written, [], started, notes)
    return notes


def cmd_calibrate(cfg: RunConfig, args, out: Path, manifest: Manifest) -> dict:
    started = _now()
    tr = _transforms(out)
    sub = preprocess(_read_split(out, "subtrain", cfg), tr)
    val = preprocess(_read_split(out, "valid", cfg), tr)
    calib_dir = out / "calibration"
    calib_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if cfg.search.budget > 0:
        both = pd.concat([_read_split(out, "subtrain", cfg), _read_split(out, "valid", cfg)],
                         ignore_index=True)
        enc = preprocess(both, tr)
        base = _settings(cfg, enc.x.shape[1], args.deterministic)
        found = tune_hyperparams(enc, base, cfg.schema.task,
                                 strata_labels(enc.y, enc.keys, cfg.schema.task),
                                 cfg.search.budget, cfg.search.n_rand or None, args.seed,
                                 cfg.search.folds, cfg.search.space or None)
        written.append(_write_json(calib_dir / "search.json", {
            "best": found.best, "best_loss": found.best_loss,
            "trajectory": [{"hyper": t.hyper, "fold_losses": t.fold_losses}
                           for t in found.trajectory]}))
    settings = _settings(cfg, sub.x.shape[1], args.deterministic, out)
    regs = cfg.calibration.regularisers if args.regulariser is None else (args.regulariser,)
    regs = tuple(r for r in regs if r != "none") or ("ccdcov",)
    grid = args.grid if args.grid is not None else cfg.calibration.grid
    seeds = _seeds(cfg, args)
    result = cal.calibrate_lambda(sub, val, settings, cfg.schema.task, grid, seeds, regs,
                                  cfg.binning, cfg.oversample_min)
    rows = cal.aggregate(result.records)
    written.append(plots.write_csv(calib_dir / "calibration.csv",
                                   cal.calibration_table(result.records), cal.TABLE_COLUMNS))
    written += plots.calibration_plots(rows, calib_dir)
    advice = {}
    for reg in regs:
        mine = [r for r in rows if r["regulariser"] == reg]
        advice[reg] = {"scale": result.scales.get(reg),
                       "grid": result.grids[reg],
                       "elbow": cal.elbow([r["lambda"] for r in mine],
                                          [r["mean_JSD"] for r in mine])}
    written.append(_write_json(calib_dir / "scales.json", advice))
    diverged = [f"{r.regulariser}@{r.lam:g}/seed{r.seed}" for r in result.records if r.diverged]
    notes = {"diverged": diverged, "advice": advice}
    manifest.record("calibrate", args, seeds, [], written, ["subtrain", "valid"], started, notes)
    return notes


def _resolve_model(args) -> tuple[str, float]:
    if args.lam is None:
        raise ConfigError("--lambda is required")
    reg = args.regulariser or ("none" if args.lam == 0 else "ccdcov")
    if (reg == "none") != (args.lam == 0):
        raise ConfigError("use --regulariser none exactly when --lambda is 0")
    return reg, float(args.lam)


def cmd_train(cfg: RunConfig, args, out: Path, manifest: Manifest) -> dict:
    started = _now()
    reg, lam = _resolve_model(args)
    tr = _transforms(out)
    sub_raw, val_raw = _read_split(out, "subtrain", cfg), _read_split(out, "valid", cfg)
    sub, val = preprocess(sub_raw, tr), preprocess(val_raw, tr)
    settings = _settings(cfg, sub.x.shape[1], args.deterministic, out)
    obj = ObjectiveSpec(cfg.schema.task, reg, lam)
    seed = args.seed
    record, _ = cal.run_once(sub, val, settings, cfg.schema.task, reg, lam, seed, cfg.binning,
                             cfg.oversample_min)
    if record.diverged:
        raise DivergenceDetected(f"model selection run diverged: {record.note}")
    full = preprocess(pd.concat([sub_raw, val_raw], ignore_index=True), tr)
    if cfg.oversample_min > 0:
        full = full.subset(oversample_subgroups(full.keys, cfg.oversample_min, seed))
    opt = dataclasses.replace(settings.optimiser, epochs=max(1, record.epochs))
    model, hist = train(full.batch(), None, settings.network, obj, opt, None, seed=seed,
                        deterministic=settings.deterministic,
                        preprocessing={"transforms": tr.to_dict(), "regulariser": reg,
                                       "lambda": lam, "task": cfg.schema.task})
    models = out / "models"
    models.mkdir(parents=True, exist_ok=True)
    tag = _model_tag(reg, lam)
    path = models / f"{tag}.json"
    model.save(path)
    hist_rows = [{"epoch": i + 1, "train_objective": v} for i, v in enumerate(hist.train_objective)]
    hist_path = plots.write_csv(models / f"{tag}_history.csv", hist_rows,
                                ("epoch", "train_objective"))
    notes = {"model": tag, "epochs": record.epochs, "selection_val_rps": record.rps}
    manifest.record("train", args, [seed], [], [path, hist_path], ["subtrain", "valid"], started,
                    notes)
    return notes


def _checkpoint(args, out: Path) -> Path:
    if args.checkpoint is not None:
        return Path(args.checkpoint)
    reg, lam = _resolve_model(args)
    return out / "models" / f"{_model_tag(reg, lam)}.json"


def cmd_evaluate(cfg: RunConfig, args, out: Path, manifest: Manifest) -> dict:
    started = _now()
    path = _checkpoint(args, out)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found; run 'train' first")
    checksum = sha256(path)
    if manifest.evaluated(checksum):
        raise RuntimeError(f"checkpoint {path.name} was already evaluated on the test split")
    model = TrainedModel.load(path)
    tag = path.stem
    tr = _transforms(out)
    test_raw = _read_split(out, "test", cfg)
    test = preprocess(test_raw, tr)
    report = evaluate_model(model, test, cfg.schema.task, cfg.binning, tr,
                            cfg.evaluation.replicates, args.seed)
    eval_dir = out / "evaluation"
    eval_dir.mkdir(parents=True, exist_ok=True)
    rep_path = eval_dir / f"{tag}_report.json"
    rep_path.write_text(report.to_json())
    sub_path = plots.write_csv(eval_dir / f"{tag}_subgroups.csv", report.subgroups,
                               ("subgroup", "count", "mean_pred", "mean_obs"))
    pred = cal.predict_rate(model, test)
    rows = {"row": np.arange(len(test)), "pred": pred,
            "rps": cal.rps_scores(cfg.schema.task, pred, test),
            "group": key_labels(test.keys, test.protected_names, tr)}
    smooth = cfg.evaluation.smoothing_attr
    if smooth:
        keep = [i for i, n in enumerate(test.protected_names) if n != smooth]
        rows["plot_group"] = key_labels(test.keys[:, keep], [test.protected_names[i] for i in keep], tr)
        rows[smooth] = test_raw[smooth].to_numpy(float)
    cols = tuple(rows)
    table = [dict(zip(cols, vals)) for vals in zip(*rows.values())]
    pred_path = plots.write_csv(eval_dir / f"{tag}_predictions.csv", table, cols)
    notes = {"model": tag, "rps": report.rps, "jsd": report.jsd, "uf": report.uf}
    manifest.record("evaluate", args, [args.seed], [path],
                    [rep_path, sub_path, pred_path], ["test"], started, notes,
                    evaluation=(checksum, tag))
    return notes


def _train_counts(cfg: RunConfig, out: Path, tr: Transforms, names: list[str]) -> Counter:
    both = pd.concat([_read_split(out, "subtrain", cfg), _read_split(out, "valid", cfg)],
                     ignore_index=True)
    enc = preprocess(both, tr)
    keep = [enc.protected_names.index(n) for n in names]
    return Counter(key_labels(enc.keys[:, keep], names, tr))


def cmd_report(cfg: RunConfig, args, out: Path, manifest: Manifest) -> dict:
    started = _now()
    eval_dir = out / "evaluation"
    reports = sorted(eval_dir.glob("*_report.json"))
    if not reports:
        raise ConfigError(f"no evaluation reports in {eval_dir}; run 'evaluate' first")
    rep_dir = out / "report"
    rep_dir.mkdir(parents=True, exist_ok=True)
    tr = _transforms(out)
    smooth = cfg.evaluation.smoothing_attr
    names = [n for n in tr.protected_names if n != smooth] if smooth else tr.protected_names
    counts = _train_counts(cfg, out, tr, names)
    metric_rows, preds, written = [], {}, []
    for path in reports:
        tag = path.name[: -len("_report.json")]
        rep = FairnessReport.from_json(path.read_text())
        model = json.loads((out / "models" / f"{tag}.json").read_text())["preprocessing"] \
            if (out / "models" / f"{tag}.json").exists() else {}
        metric_rows.append({"model": tag, "regulariser": model.get("regulariser", ""),
                            "lambda": model.get("lambda", math.nan), "n": rep.n,
                            **{c: _num(getattr(rep, c)) for c in REPORT_COLUMNS[4:]}})
        table = pd.read_csv(eval_dir / f"{tag}_predictions.csv", keep_default_na=False)
        preds[tag] = table
        labels = table["plot_group" if smooth else "group"].astype(str).to_numpy()
        smoothing = (smooth, table[smooth].to_numpy(float)) if smooth else None
        written += plots.report_plots(table["pred"].to_numpy(float), labels, counts, rep_dir,
                                      smoothing, cfg.evaluation.display_min_count,
                                      prefix=f"{tag}_")
    written.append(plots.write_csv(rep_dir / "metrics.csv", metric_rows, REPORT_COLUMNS))
    baselines = [r["model"] for r in metric_rows if r["regulariser"] == "none"]
    tests = []
    if baselines:
        base = preds[baselines[0]]["rps"].to_numpy(float)
        for r in metric_rows:
            if r["model"] == baselines[0]:
                continue
            res = scoring.wilcoxon_one_sided(base, preds[r["model"]]["rps"].to_numpy(float))
            tests.append({"baseline": baselines[0], "model": r["model"],
                          "w_plus": res.statistic, "p_value": res.p_value})
    written.append(plots.write_csv(rep_dir / "wilcoxon.csv", tests,
                                   ("baseline", "model", "w_plus", "p_value")))
    notes = {"models": [r["model"] for r in metric_rows], "wilcoxon": tests}
    manifest.record("report", args, [args.seed], reports, written, ["subtrain", "valid"],
                    started, notes)
    return notes


def _num(v):
    return math.nan if v is None else v


DEMO_CONFIG = {
    "data": "planted_bias.csv",
    "task": "binary",
    "columns": {
        "x1": {"role": "feature", "encoding": "none"},
        "x2": {"role": "feature", "encoding": "none"},
        "proxy": {"role": "feature", "encoding": "none"},
        "s1": {"role": "protected", "kind": "binary", "encoding": "binary", "positive": 1},
        "s2": {"role": "protected", "kind": "binary", "encoding": "binary", "positive": 1},
        "y": "response",
    },
    "network": {"n_hidden": 2, "width": 32, "dropout": 0.0},
    "optimiser": {"lr": 0.01, "batch_size": 256, "epochs": 200},
    "early_stopping": {"patience": 10},
    "calibration": {"regularisers": ["ccdcov", "jdcov"], "grid": "0,s,3s,10s", "seeds": 3},
    "evaluation": {"replicates": 99, "display_min_count": 100},
}


def cmd_demo(args, out: Path) -> dict:
    """Planted-bias data through every stage: baseline and one regularised model."""
    out.mkdir(parents=True, exist_ok=True)
    planted_bias(n=4000, seed=args.seed).to_csv(out / "planted_bias.csv", index=False,
                                                 lineterminator="\n")
    cfg_path = out / "demo.yaml"
    cfg_path.write_text(yaml.safe_dump(DEMO_CONFIG, sort_keys=True))
    args.config = cfg_path
    cfg = load_config(cfg_path)
    manifest = Manifest(out)
    cmd_prep(cfg, args, out, manifest)
    calib = cmd_calibrate(cfg, args, out, manifest)
    reg = args.regulariser or "ccdcov"
    scale = calib["advice"].get(reg, {}).get("scale")
    lam = args.lam if args.lam is not None else 3 * (scale or 1.0)
    for r, l in (("none", 0.0), (reg, lam)):
        step = argparse.Namespace(**{**vars(args), "regulariser": r, "lam": l})
        cmd_train(cfg, step, out, manifest)
        cmd_evaluate(cfg, step, out, manifest)
    return cmd_report(cfg, args, out, manifest)


COMMANDS = {"prep": cmd_prep, "calibrate": cmd_calibrate, "train": cmd_train,
            "evaluate": cmd_evaluate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairdcov",
                                description="Distance-covariance fairness regularisation pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "demo"):
        c = sub.add_parser(name)
        c.add_argument("--config", type=Path, required=name != "demo")
        c.add_argument("--out", type=Path, default=Path("fairdcov-out"))
        c.add_argument("--seed", type=int, default=None)
        c.add_argument("--seeds", type=int, default=None, help="number of calibration seeds")
        c.add_argument("--lambda", dest="lam", type=float, default=None)
        c.add_argument("--regulariser", type=regulariser_name, default=None,
                       help="none, separate, jdcov or ccdcov")
        c.add_argument("--grid", default=None, help="e.g. '0,0.3s,s,3s' (s = suggested scale)")
        c.add_argument("--deterministic", action="store_true")
        if name == "evaluate":
            c.add_argument("--checkpoint", type=Path, default=None)
    return p


def _thread_limits(args):
    env = os.environ.get(THREADS_ENV)
    threads = None
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
    if threads == 1:
        args.deterministic = True
    if args.deterministic:
        threads = 1
    return threadpool_limits(threads) if threads else contextlib.nullcontext()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not hasattr(args, "checkpoint"):
        args.checkpoint = None
    try:
        with _thread_limits(args):
            if args.command == "demo":
                args.seed = 0 if args.seed is None else args.seed
                notes = cmd_demo(args, args.out)
            else:
                cfg = load_config(args.config)
                args.seed = cfg.seed if args.seed is None else args.seed
                args.out.mkdir(parents=True, exist_ok=True)
                notes = COMMANDS[args.command](cfg, args, args.out, Manifest(args.out))
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FairDcovError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(notes, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
