"""Rebuild the CLI fixtures and golden files in this directory.

Run from the repository root: ``python tests/data/regenerate.py``. Only
needed when the fixture design or the table format changes on purpose.
"""

import io
import os

import numpy as np

from paneliv.cli import main
from paneliv.panel import write_panel_csv
from paneliv.simulation import DgpConfig, simulate_dgp

HERE = os.path.dirname(os.path.abspath(__file__))


def replication_panel():
    ds = simulate_dgp(DgpConfig(seed=4))
    rng = np.random.default_rng(7)
    ctrl = ds["ctrl"].copy()
    ctrl[rng.uniform(size=ctrl.shape) < 0.03] = np.nan
    ds = ds.with_column("ctrl", ctrl, replace=True)
    write_panel_csv(ds, os.path.join(HERE, "replication_panel.csv"), "iso3", "year",
                    columns=["lco2", "ed", "ctrl", "z"])


def toy_instrument():
    with open(os.path.join(HERE, "toy_distances.csv"), "w") as fh:
        fh.write("entity_a,entity_b,distance_km\nAAA,BBB,1\nAAA,CCC,3\nBBB,CCC,2\n")
    with open(os.path.join(HERE, "toy_openness.csv"), "w") as fh:
        fh.write("entity,year,kopen\nAAA,1991,0.6\nAAA,1992,0.6\nBBB,1991,0.1\nBBB,1992,0.3\n"
                 "CCC,1991,1.0\nCCC,1992,1.0\n")
    with open(os.path.join(HERE, "toy_rates.csv"), "w") as fh:
        fh.write("year,rate\n1991,2.0\n1992,4.0\n")
    with open(os.path.join(HERE, "toy_rates_gap.csv"), "w") as fh:
        fh.write("year,rate\n1991,2.0\n1993,4.0\n")


def golden():
    buf = io.StringIO()
    cfg = os.path.join(HERE, "baseline.json")
    assert main(["estimate", "--config", cfg, "--panel", os.path.join(HERE, "replication_panel.csv")], buf) == 0
    with open(os.path.join(HERE, "baseline_table.txt"), "w") as fh:
        fh.write(buf.getvalue())


if __name__ == "__main__":
    replication_panel()
    toy_instrument()
    golden()
