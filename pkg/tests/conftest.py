import sys
from pathlib import Path

import pytest
import yaml

from fairdcov.synthetic import planted_bias

DATA = Path(__file__).parent / "data"
COMPAS_CSV = DATA / "compas-two-years-subset.csv"

SMALL_CONFIG = {
    "task": "binary",
    "columns": {
        "x1": {"role": "feature", "encoding": "none"},
        "x2": {"role": "feature", "encoding": "none"},
        "proxy": {"role": "feature", "encoding": "min-max"},
        "s1": {"role": "protected", "kind": "binary", "encoding": "binary", "positive": 1},
        "s2": {"role": "protected", "kind": "binary", "encoding": "binary", "positive": 1},
        "y": "response",
    },
    "network": {"n_hidden": 1, "width": 8},
    "optimiser": {"lr": 0.02, "batch_size": 64, "epochs": 6},
    "early_stopping": {"patience": 3},
    "calibration": {"regularisers": ["ccdcov"], "grid": "0,s,10s", "seeds": 2},
    "evaluation": {"replicates": 19},
}


@pytest.fixture
def small_run(tmp_path):
    """A small planted-bias CSV and a matching config file."""
    planted_bias(n=500, seed=0).to_csv(tmp_path / "data.csv", index=False)
    cfg = dict(SMALL_CONFIG, data="data.csv")
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def planted_encoded(n, seed, fit=None):
    """Encode a planted-bias sample; transforms come from ``fit`` when given."""
    from fairdcov.pipeline.config import parse_schema
    from fairdcov.pipeline.data import fit_transforms, preprocess

    table = planted_bias(n, seed)
    schema = parse_schema({"columns": SMALL_CONFIG["columns"]})
    tr = fit if fit is not None else fit_transforms(table, schema)
    return preprocess(table, tr), tr


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
