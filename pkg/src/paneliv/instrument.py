"""Exposure instrument built from neighbours' financial openness and a global rate.

For each target entity ``i``::

    w_ij   = (1 / d_ij) / sum_{k != i} (1 / d_ik)
    K_i(t) = sum_j w_ij * KOPEN_j(t)
    Kbar_i = mean over the averaging window of K_i(t)
    z_it   = rate_t * Kbar_i

so the only time variation in ``z`` comes from the rate series.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CSVParseError, DataError, DuplicateObservationError
from .panel import PanelDataset

logger = logging.getLogger(__name__)


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _array_digest(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype=float).tobytes()).hexdigest()


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise distances (km) with a zero diagonal."""

    entities: tuple
    values: np.ndarray

    def __post_init__(self):
        ent = tuple(str(e) for e in self.entities)
        D = np.array(self.values, dtype=float, copy=True)
        n = len(ent)
        if len(set(ent)) != n:
            raise DataError("distance matrix entities must be unique")
        if D.shape != (n, n):
            raise DataError(f"distance matrix has shape {D.shape}, expected {(n, n)}")
        off = ~np.eye(n, dtype=bool)
        if np.isnan(D[off]).any():
            i, j = np.argwhere(np.isnan(D) & off)[0]
            raise DataError(f"missing distance between {ent[i]} and {ent[j]}")
        if (D[off] <= 0).any():
            i, j = np.argwhere((D <= 0) & off)[0]
            raise DataError(f"non-positive distance {D[i, j]} between {ent[i]} and {ent[j]}")
        if not np.allclose(D, D.T, rtol=1e-9, atol=0):
            raise DataError("distance matrix is not symmetric")
        np.fill_diagonal(D, 0.0)
        D.flags.writeable = False
        object.__setattr__(self, "entities", ent)
        object.__setattr__(self, "values", D)

    def index(self, entity):
        try:
            return self.entities.index(entity)
        except ValueError:
            raise DataError(f"entity {entity!r} is not in the distance matrix") from None

    def distance(self, a, b):
        return float(self.values[self.index(a), self.index(b)])

    @classmethod
    def from_pairs(cls, pairs):
        """Build from ``(entity_a, entity_b, km)`` triples.

        Each unordered pair may appear once per orientation; both
        orientations must then agree.
        """
        seen = {}
        for a, b, d in pairs:
            a, b, d = str(a), str(b), float(d)
            if a == b:
                continue
            if (a, b) in seen:
                raise DuplicateObservationError(f"duplicate distance record for ({a}, {b})")
            if (b, a) in seen and not math.isclose(seen[(b, a)], d, rel_tol=1e-9):
                raise DataError(f"asymmetric distances for ({a}, {b}): {seen[(b, a)]} vs {d}")
            seen[(a, b)] = d
        ent = sorted({e for k in seen for e in k})
        pos = {e: i for i, e in enumerate(ent)}
        D = np.full((len(ent), len(ent)), np.nan)
        np.fill_diagonal(D, 0.0)
        for (a, b), d in seen.items():
            D[pos[a], pos[b]] = D[pos[b], pos[a]] = d
        return cls(ent, D)


def load_distance_csv(path, a_col="entity_a", b_col="entity_b", d_col="distance_km"):
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in (a_col, b_col, d_col):
            if col not in (reader.fieldnames or []):
                raise CSVParseError(f"missing required column {col!r}", line=1)
        for row in reader:
            try:
                d = float(row[d_col])
            except (TypeError, ValueError):
                raise CSVParseError(f"bad distance {row[d_col]!r}", line=reader.line_num) from None
            pairs.append((row[a_col].strip(), row[b_col].strip(), d))
    return DistanceMatrix.from_pairs(pairs)


@dataclass(frozen=True)
class GlobalRateSeries:
    """Period -> rate (percent per annum)."""

    rates: dict

    def __post_init__(self):
        r = {int(k): float(v) for k, v in dict(self.rates).items()}
        bad = [k for k, v in r.items() if not math.isfinite(v)]
        if bad:
            raise DataError(f"rate series has missing values for {sorted(bad)}")
        object.__setattr__(self, "rates", dict(sorted(r.items())))

    def over(self, periods):
        missing = [p for p in periods if p not in self.rates]
        if missing:
            raise DataError(f"rate series has no value for year {missing[0]}"
                            + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
        return np.array([self.rates[p] for p in periods])

    def scaled(self, c):
        return GlobalRateSeries({k: c * v for k, v in self.rates.items()})


def load_rate_csv(path, time_col="year", rate_col="rate"):
    """Two-column time series CSV; empty cells are treated as absent years."""
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    rates = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in (time_col, rate_col):
            if col not in (reader.fieldnames or []):
                raise CSVParseError(f"missing required column {col!r}", line=1)
        for row in reader:
            try:
                year = int(row[time_col])
            except (TypeError, ValueError):
                raise CSVParseError(f"bad year {row[time_col]!r}", line=reader.line_num) from None
            if year in rates:
                raise DuplicateObservationError(f"duplicate rate for year {year}")
            text = (row[rate_col] or "").strip()
            if not text:
                continue
            try:
                rates[year] = float(text)
            except ValueError:
                raise CSVParseError(f"bad rate {text!r}", line=reader.line_num) from None
    return GlobalRateSeries(rates)


# ---------------------------------------------------------------- components


def inverse_distance_weights(D, target, include_self=False, self_distance=None):
    """Row-normalised inverse-distance weights of ``target`` over ``D.entities``.

    The self weight is zero unless ``include_self``; the inclusive variant
    needs a within-entity distance, defaulting to the nearest-neighbour
    distance.

    Returns
    -------
    numpy.ndarray
        Weights aligned with ``D.entities``, summing to one.
    """
    i = D.index(target)
    n = len(D.entities)
    if n < 2:
        raise DataError(f"no neighbours for {target!r}")
    d = D.values[i].copy()
    others = np.arange(n) != i
    inv = np.zeros(n)
    inv[others] = 1.0 / d[others]
    if include_self:
        own = d[others].min() if self_distance is None else float(self_distance)
        if not own > 0:
            raise DataError("self distance must be positive")
        inv[i] = 1.0 / own
    return inv / inv.sum()


def neighbor_weighted_openness(K, weights, target, neighbors=None):
    """Per-period weighted average of neighbours' openness.

    Parameters
    ----------
    K : PanelDataset column (n_entities, n_periods) or mapping entity -> series
        Openness values; NaN is missing.
    weights : array_like
        Weights aligned with the rows of ``K`` (or with ``neighbors``).
    target : str
        Used in warnings only.

    Returns
    -------
    values, renormalised : numpy.ndarray, numpy.ndarray of bool
        Cells where some weighted neighbour was missing are computed with
        weights renormalised over observed neighbours and flagged; if every
        neighbour is missing the cell is NaN.
    """
    K = np.asarray(K, dtype=float)
    w = np.asarray(weights, dtype=float)
    if K.shape[0] != w.shape[0]:
        raise ConfigError("weights and openness rows are not aligned")
    active = w > 0
    obs = ~np.isnan(K) & active[:, None]
    wsum = (w[:, None] * obs).sum(axis=0)
    num = np.where(obs, w[:, None] * np.nan_to_num(K), 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(wsum > 0, num / np.where(wsum > 0, wsum, 1.0), np.nan)
    renorm = (obs.sum(axis=0) < active.sum()) & (wsum > 0)
    empty = wsum == 0
    if empty.any():
        logger.warning("%s: all neighbours missing in %d period(s)", target, int(empty.sum()))
    return out, renorm


def time_average(series):
    """Mean over non-missing entries."""
    s = np.asarray(series, dtype=float)
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise DataError("cannot time-average an empty series")
    return float(s.mean())


# ---------------------------------------------------------------- composition


@dataclass(frozen=True)
class InstrumentSeries:
    entities: tuple
    periods: tuple
    values: np.ndarray
    kopen_bar: dict
    weights: np.ndarray
    neighbors: tuple
    renormalized: np.ndarray
    provenance: dict = field(default_factory=dict)

    def to_panel(self, name="z"):
        return PanelDataset(self.entities, self.periods, {name: self.values},
                            {name: "exposure instrument: rate_t x time-averaged neighbour openness"})

    def merge_into(self, ds, name="z"):
        """Add the instrument as a column of ``ds`` (cells outside coverage are missing)."""
        col = np.full(ds.shape, np.nan)
        e_pos = {e: i for i, e in enumerate(self.entities)}
        p_pos = {p: t for t, p in enumerate(self.periods)}
        for i, e in enumerate(ds.entities):
            if e not in e_pos:
                continue
            for t, p in enumerate(ds.periods):
                if p in p_pos:
                    col[i, t] = self.values[e_pos[e], p_pos[p]]
        return ds.with_column(name, col, note="exposure instrument")


def build_instrument(D, openness, rates, window, targets=None, output_periods=None,
                     include_self=False, self_distance=None, openness_col=None, source_digests=None):
    """Construct ``z_it = rate_t * Kbar_i``.

    Parameters
    ----------
    D : DistanceMatrix
    openness : PanelDataset
        Openness panel; neighbours are its entities that appear in ``D``.
    rates : GlobalRateSeries
    window : (int, int)
        Inclusive averaging window.
    targets : sequence of str, optional
        Entities to build the instrument for (default: all neighbours).
    output_periods : sequence of int, optional
        Periods of the output (default: the window).
    openness_col : str, optional
        Column of ``openness`` to use (default: its only column).
    """
    lo, hi = (int(x) for x in window)
    if lo > hi:
        raise ConfigError(f"empty averaging window {lo}-{hi}")
    if openness_col is None:
        if len(openness.names) != 1:
            raise ConfigError(f"openness panel has columns {openness.names}; name one")
        openness_col = openness.names[0]
    win = [p for p in openness.periods if lo <= p <= hi]
    if not win:
        raise DataError(f"openness panel has no periods inside {lo}-{hi}")
    out_periods = tuple(range(lo, hi + 1)) if output_periods is None else tuple(int(p) for p in output_periods)
    r = rates.over(out_periods)
    neighbors = tuple(e for e in openness.entities if e in D.entities)
    if not neighbors:
        raise DataError("no openness entity appears in the distance matrix")
    targets = neighbors if targets is None else tuple(targets)
    Dn = _restrict(D, tuple(dict.fromkeys(neighbors + targets)))
    K = openness[openness_col][[openness.entity_index(e) for e in neighbors]]
    K = K[:, [openness.periods.index(p) for p in win]]
    finite = K[~np.isnan(K)]
    if finite.size:
        logger.info("openness range over window: [%g, %g]", finite.min(), finite.max())
    n_nb = len(neighbors)
    W = np.zeros((len(targets), n_nb))
    kbar = {}
    renorm = np.zeros((len(targets), len(win)), dtype=bool)
    for a, tgt in enumerate(targets):
        w_full = inverse_distance_weights(Dn, tgt, include_self, self_distance)
        w = np.array([w_full[Dn.index(e)] for e in neighbors])
        if w.sum() <= 0:
            raise DataError(f"no neighbours with openness data for {tgt!r}")
        w = w / w.sum()
        W[a] = w
        series, renorm[a] = neighbor_weighted_openness(K, w, tgt)
        kbar[tgt] = time_average(series)
    Z = np.outer([kbar[t] for t in targets], r)
    n_renorm = int(renorm.sum())
    if n_renorm:
        logger.warning("%d target-period cell(s) used renormalised weights", n_renorm)
    prov = {
        "window": [lo, hi],
        "include_self": bool(include_self),
        "self_distance": self_distance,
        "weights": "inverse distance, row-normalised",
        "missing_neighbors": "renormalised per period",
        "renormalized_cells": n_renorm,
        "digests": dict(source_digests) if source_digests else {
            "distances": _array_digest(Dn.values),
            "openness": _array_digest(np.nan_to_num(K, nan=-1e300)),
            "rates": _array_digest(r),
        },
    }
    return InstrumentSeries(targets, out_periods, Z, kbar, W, neighbors, renorm, prov)


def _restrict(D, entities):
    idx = [D.index(e) for e in entities]
    return DistanceMatrix(entities, D.values[np.ix_(idx, idx)])
