"""Shared fixtures and independent reference implementations.

The oracles here deliberately avoid the package's own code paths: fixed
effects are explicit dummy columns and solves go through the normal
equations or ``numpy.linalg.lstsq``.
"""

import contextlib
import os

import numpy as np
import pytest

from paneliv.panel import PanelDataset

DATA = os.path.join(os.path.dirname(__file__), "data")

ACCEPTANCE = []


def random_panel(rng, n_ent, n_per, k=1, missing=0.0, endog=False, first_period=2000):
    """Random panel with columns y, x1..xk (and x_en, z when ``endog``)."""
    shape = (n_ent, n_per)
    a = rng.standard_normal(n_ent)
    g = rng.standard_normal(n_per)
    cols = {f"x{j + 1}": rng.standard_normal(shape) + a[:, None] * rng.uniform(-1, 1) for j in range(k)}
    y = a[:, None] + g[None, :] + rng.standard_normal(shape)
    for j in range(k):
        y = y + rng.uniform(-2, 2) * cols[f"x{j + 1}"]
    if endog:
        u = rng.standard_normal(shape)
        z = rng.standard_normal(shape) + a[:, None]
        cols["z"] = z
        cols["x_en"] = 0.8 * z + u + rng.standard_normal(shape) + a[:, None]
        y = y + 0.5 * cols["x_en"] + u
    cols["y"] = y
    if missing:
        hole = rng.uniform(size=shape) < missing
        cols["y"] = np.where(hole, np.nan, cols["y"])
    ent = [f"E{i}" for i in range(n_ent)]
    return PanelDataset(ent, range(first_period, first_period + n_per), cols)


def lsdv_arrays(ds, names, entity=True, time=True):
    """Rows with every variable observed plus explicit FE dummy blocks.

    Returns ``(columns dict, dummies)`` over the retained rows; entities
    with a single retained row are dropped, as the estimator does.
    """
    mask = np.ones(ds.shape, dtype=bool)
    for n in names:
        mask &= ~np.isnan(ds[n])
    if entity:
        single = mask.sum(axis=1) == 1
        mask[single] = False
    ei, ti = np.nonzero(mask)
    cols = {n: ds[n][ei, ti] for n in names}
    blocks = []
    if entity:
        ents = np.unique(ei)
        blocks.append((ei[:, None] == ents[None, :]).astype(float))
    else:
        blocks.append(np.ones((len(ei), 1)))
    if time:
        pers = np.unique(ti)
        blocks.append((ti[:, None] == pers[None, 1:]).astype(float))
    return cols, np.hstack(blocks), ei, ti


def normal_equations(X, y):
    return np.linalg.solve(X.T @ X, X.T @ y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@contextlib.contextmanager
def _record(number, title):
    entry = [number, title, "FAIL", ""]
    ACCEPTANCE.append(entry)
    try:
        yield entry
    except BaseException as exc:
        entry[3] = str(exc).splitlines()[0][:120] if str(exc) else type(exc).__name__
        print(f"[criterion {number}] FAIL {title}: {entry[3]}")
        raise
    entry[2] = "PASS"
    print(f"[criterion {number}] PASS {title} {entry[3]}".rstrip())


@pytest.fixture
def criterion():
    """Context manager recording a PASS/FAIL line for an acceptance criterion."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail in sorted(ACCEPTANCE, key=lambda e: e[0]):
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
