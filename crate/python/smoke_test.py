"""Smoke test for the reebflow_py extension.

Build and run from the repository root:

    cargo build --release -p reebflow-py --features extension-module
    cp target/release/libreebflow_py.so python/reebflow_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import reebflow_py as rf


def main():
    ids = [i for i, _ in rf.list_experiments()]
    assert "period_oracle" in ids and "semigroup_strong" in ids, ids
    description, defaults = rf.describe("period_oracle")
    assert "tolerance" in defaults

    assert rf.hamiltonian_value("quadratic", [0.6, 0.8]) == 1.0
    assert abs(rf.hamiltonian_value("quartic_well", [1.0, 0.0], {"c": 0.5}) - 1.5) < 1e-12
    t = rf.period("quadratic", 2.0)
    assert abs(t - math.pi) < 1e-6, t

    try:
        rf.validate('[semigroup_strong]\nhamiltonian = "banana"\n')
    except ValueError as e:
        assert "semigroup_strong.hamiltonian" in str(e), e
    else:
        raise AssertionError("bad hamiltonian accepted")

    rows = rf.run_experiment("period_oracle")
    errors = {label: metric for label, _, metric, _, _, _ in rows}
    assert errors["period_max_error"] < 1e-6, rows

    with tempfile.TemporaryDirectory() as d:
        cfg = os.path.join(d, "run.toml")
        with open(cfg, "w") as f:
            f.write('[run]\noutput_dir = "%s"\nexperiments = ["period_oracle"]\n' % os.path.join(d, "out"))
        all_pass, records = rf.run(cfg, workers=1)
        assert all_pass and records[0][0] == "period_oracle", records
        assert os.path.exists(os.path.join(d, "out", "manifest.json"))

    print("reebflow_py %s: smoke test ok" % rf.__version__)


if __name__ == "__main__":
    main()
