"""Rectangular entity-by-period panel storage, transforms and sample selection.

Cells are float64 with NaN as the missing marker. Every column is an
``(n_entities, n_periods)`` array, so an unbalanced panel is represented by
missing cells rather than ragged storage.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import (
    CellTypeError,
    ConfigError,
    CSVParseError,
    DataError,
    DuplicateObservationError,
    SingletonEntityError,
)

logger = logging.getLogger(__name__)

TRANSFORM_KINDS = ("log", "lag", "square", "interaction", "diff")


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PanelDataset:
    """Immutable entity x period store of named float columns.

    Parameters
    ----------
    entities : sequence of str
        Ordered entity identifiers (e.g. ISO3 country codes).
    periods : sequence of int
        Ordered integer periods (years).
    columns : mapping of str to array_like
        Each value has shape ``(len(entities), len(periods))``; NaN marks a
        missing cell.
    metadata : mapping of str to str, optional
        Free-form notes per column.
    """

    entities: tuple
    periods: tuple
    columns: Mapping[str, np.ndarray]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        entities = tuple(str(e) for e in self.entities)
        periods = tuple(int(p) for p in self.periods)
        if len(set(entities)) != len(entities):
            raise DataError("entity identifiers must be unique")
        if len(set(periods)) != len(periods):
            raise DataError("periods must be unique")
        shape = (len(entities), len(periods))
        cols = {}
        for name, values in self.columns.items():
            arr = _frozen(values)
            if arr.shape != shape:
                raise DataError(f"column {name!r} has shape {arr.shape}, expected {shape}")
            cols[name] = arr
        object.__setattr__(self, "entities", entities)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "columns", MappingProxyType(cols))
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    @property
    def shape(self):
        return len(self.entities), len(self.periods)

    @property
    def names(self):
        return tuple(self.columns)

    def __getitem__(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise ConfigError(f"unknown column {name!r}") from None

    def __contains__(self, name):
        return name in self.columns

    def entity_index(self, entity):
        try:
            return self.entities.index(entity)
        except ValueError:
            raise ConfigError(f"unknown entity {entity!r}") from None

    def with_column(self, name, values, note=None, replace=False):
        """Return a new dataset with ``name`` appended."""
        if name in self.columns and not replace:
            raise ConfigError(f"column {name!r} already exists")
        cols = dict(self.columns)
        cols[name] = values
        meta = dict(self.metadata)
        if note is not None:
            meta[name] = note
        return PanelDataset(self.entities, self.periods, cols, meta)

    def subset(self, entities=None, periods=None):
        ent = list(self.entities if entities is None else entities)
        per = list(self.periods if periods is None else periods)
        ei = [self.entity_index(e) for e in ent]
        pi = [self.periods.index(p) for p in per]
        cols = {k: v[np.ix_(ei, pi)] for k, v in self.columns.items()}
        return PanelDataset(ent, per, cols, self.metadata)


# ---------------------------------------------------------------- CSV I/O


def _parse_cell(text, column, line):
    text = text.strip()
    if text == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise CellTypeError(column, line, text) from None


def load_panel_csv(path, entity_col="entity", time_col="year"):
    """Read a long-format panel CSV into a :class:`PanelDataset`.

    The period axis spans every integer between the smallest and largest
    observed time value; (entity, period) pairs absent from the file are
    missing.
    """
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    records = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise CSVParseError("duplicate column names in header", line=1)
        for col in (entity_col, time_col):
            if col not in header:
                raise CSVParseError(f"missing required column {col!r}", line=1)
        ei, ti = header.index(entity_col), header.index(time_col)
        value_cols = [(j, h) for j, h in enumerate(header) if j not in (ei, ti)]
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise CSVParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
                entity = row[ei].strip()
                if not entity:
                    raise CSVParseError("empty entity identifier", line=line)
                try:
                    period = int(row[ti].strip())
                except ValueError:
                    raise CSVParseError(f"time value {row[ti]!r} is not an integer", line=line) from None
                key = (entity, period)
                if key in records:
                    raise DuplicateObservationError(
                        f"duplicate observation for entity {entity!r}, period {period} at line {line}"
                    )
                records[key] = [_parse_cell(row[j], h, line) for j, h in value_cols]
        except csv.Error as exc:
            raise CSVParseError(str(exc), line=reader.line_num) from None
    if not records:
        raise CSVParseError("no data rows", line=2)
    entities = sorted({e for e, _ in records})
    observed = [p for _, p in records]
    periods = list(range(min(observed), max(observed) + 1))
    e_pos = {e: i for i, e in enumerate(entities)}
    p0 = periods[0]
    data = np.full((len(value_cols), len(entities), len(periods)), np.nan)
    for (e, p), vals in records.items():
        data[:, e_pos[e], p - p0] = vals
    cols = {h: data[k] for k, (_, h) in enumerate(value_cols)}
    meta = {h: f"loaded from {os.path.basename(path)}" for _, h in value_cols}
    return PanelDataset(entities, periods, cols, meta)


def _fmt(v):
    return "" if np.isnan(v) else repr(float(v))


def write_panel_csv(ds, path, entity_col="entity", time_col="year", columns=None):
    """Write a long-format CSV; columns keep insertion order.

    Writes to a temporary sibling and renames on success.
    """
    names = list(ds.names if columns is None else columns)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([entity_col, time_col, *names])
            for i, e in enumerate(ds.entities):
                for t, p in enumerate(ds.periods):
                    vals = [ds[n][i, t] for n in names]
                    if all(np.isnan(v) for v in vals):
                        continue
                    w.writerow([e, p, *(_fmt(v) for v in vals)])
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


# ---------------------------------------------------------------- transforms


@dataclass(frozen=True)
class Transform:
    """A column-generating transform.

    ``kind`` is one of ``log``, ``lag``, ``square``, ``interaction``, ``diff``.
    ``interaction`` takes two source columns, the rest take one. ``k`` is
    the lag order (only used by ``lag``).
    """

    kind: str
    source: tuple
    output: str
    k: int = 1

    def __post_init__(self):
        src = (self.source,) if isinstance(self.source, str) else tuple(self.source)
        object.__setattr__(self, "source", src)
        if self.kind not in TRANSFORM_KINDS:
            raise ConfigError(f"unknown transform kind {self.kind!r}; expected one of {TRANSFORM_KINDS}")
        need = 2 if self.kind == "interaction" else 1
        if len(src) != need:
            raise ConfigError(f"transform {self.kind!r} takes {need} source column(s), got {len(src)}")
        if self.kind == "lag" and self.k < 1:
            raise ConfigError("lag order must be >= 1")

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"kind", "source", "output", "k"}
        if extra:
            raise ConfigError(f"unknown transform keys: {sorted(extra)}")
        try:
            return cls(d["kind"], d["source"], d["output"], int(d.get("k", 1)))
        except KeyError as exc:
            raise ConfigError(f"transform is missing key {exc.args[0]!r}") from None


def shift(values, k):
    """Shift each entity row by ``k`` periods; positive ``k`` lags, negative leads."""
    out = np.full_like(values, np.nan, dtype=float)
    if k == 0:
        out[:] = values
    elif k > 0:
        out[:, k:] = values[:, :-k]
    else:
        out[:, :k] = values[:, -k:]
    return out


def apply_transform(ds, t):
    """Return a new dataset with the transform's output column appended."""
    for s in t.source:
        if s not in ds:
            raise ConfigError(f"transform {t.output!r}: unknown source column {s!r}")
    if t.output in ds:
        raise ConfigError(f"transform output {t.output!r} collides with an existing column")
    a = ds[t.source[0]]
    if t.kind == "log":
        bad = np.isfinite(a) & (a <= 0)
        if bad.any():
            logger.warning("log(%s): %d non-positive cell(s) set to missing", t.source[0], int(bad.sum()))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
        out[np.isnan(a)] = np.nan
    elif t.kind == "lag":
        if t.k >= len(ds.periods):
            raise ConfigError(f"lag order {t.k} is not smaller than the number of periods ({len(ds.periods)})")
        out = shift(a, t.k)
    elif t.kind == "square":
        out = a * a
    elif t.kind == "interaction":
        out = a * ds[t.source[1]]
    else:  # diff
        out = a - shift(a, 1)
    note = f"{t.kind}({', '.join(t.source)})" + (f", k={t.k}" if t.kind == "lag" else "")
    return ds.with_column(t.output, out, note=note)


def apply_transforms(ds, transforms):
    for t in transforms:
        ds = apply_transform(ds, t)
    return ds


# ---------------------------------------------------------------- sample selection


@dataclass(frozen=True)
class SampleFilter:
    """Which cells enter an estimation.

    Parameters
    ----------
    period_range : (int, int), optional
        Inclusive bounds.
    entities : sequence of str, optional
        Allowlist.
    group : str, optional
        Keep only entities whose label in ``group_map`` equals this value.
    group_map : mapping of str to str, optional
        Entity -> group label. Defaults to the emission-level clusters in
        :data:`paneliv.countries.EMISSION_GROUP_OF`.
    complete_on : sequence of str
        Variables that must be non-missing (listwise deletion).
    """

    period_range: tuple | None = None
    entities: tuple | None = None
    group: str | None = None
    group_map: Mapping[str, str] | None = None
    complete_on: tuple = ()

    def __post_init__(self):
        if self.period_range is not None:
            lo, hi = (int(x) for x in self.period_range)
            if lo > hi:
                raise ConfigError(f"empty period range {lo}-{hi}")
            object.__setattr__(self, "period_range", (lo, hi))
        if self.entities is not None:
            object.__setattr__(self, "entities", tuple(self.entities))
        object.__setattr__(self, "complete_on", tuple(self.complete_on))

    def requiring(self, variables):
        """Copy with ``variables`` added to the completeness set."""
        extra = tuple(v for v in variables if v not in self.complete_on)
        return SampleFilter(self.period_range, self.entities, self.group, self.group_map, self.complete_on + extra)


def sample_mask(ds, filt=None):
    """Boolean ``(n_entities, n_periods)`` mask of retained cells."""
    filt = filt or SampleFilter()
    mask = np.ones(ds.shape, dtype=bool)
    if filt.period_range is not None:
        lo, hi = filt.period_range
        p = np.asarray(ds.periods)
        mask &= ((p >= lo) & (p <= hi))[None, :]
    if filt.entities is not None:
        allowed = set(filt.entities)
        mask &= np.array([e in allowed for e in ds.entities])[:, None]
    if filt.group is not None:
        gmap = filt.group_map
        if gmap is None:
            from .countries import EMISSION_GROUP_OF as gmap
        labels = set(gmap.values())
        if filt.group not in labels:
            raise ConfigError(f"unknown group {filt.group!r}; known groups: {sorted(labels)}")
        mask &= np.array([gmap.get(e) == filt.group for e in ds.entities])[:, None]
    for v in filt.complete_on:
        mask &= ~np.isnan(ds[v])
    return mask


@dataclass(frozen=True)
class Sample:
    """Retained rows of a panel in entity-major order."""

    mask: np.ndarray
    entity_idx: np.ndarray
    period_idx: np.ndarray
    dropped_singletons: tuple = ()

    @property
    def n_obs(self):
        return len(self.entity_idx)

    def keys(self, ds):
        return [(ds.entities[i], ds.periods[t]) for i, t in zip(self.entity_idx, self.period_idx)]

    def take(self, values):
        return np.asarray(values)[self.entity_idx, self.period_idx]


def select_sample(ds, filt=None, variables=(), drop_singletons=False):
    """Apply the filter with listwise deletion over ``variables``.

    With ``drop_singletons`` set, entities left with a single retained period
    are removed (with a warning).
    """
    filt = (filt or SampleFilter()).requiring(variables)
    mask = sample_mask(ds, filt)
    dropped = ()
    if drop_singletons:
        counts = mask.sum(axis=1)
        single = np.flatnonzero(counts == 1)
        if single.size:
            dropped = tuple(ds.entities[i] for i in single)
            logger.warning("dropping %d singleton entit%s: %s", len(dropped),
                           "y" if len(dropped) == 1 else "ies", ", ".join(dropped))
            mask = mask.copy()
            mask[single] = False
    ei, ti = np.nonzero(mask)
    mask.flags.writeable = False
    return Sample(mask, ei, ti, dropped)


def demean_by(values, groups, n_groups=None):
    """Subtract group means from each column of ``values`` (1-D or 2-D)."""
    values = np.asarray(values, dtype=float)
    groups = np.asarray(groups)
    if n_groups is None:
        n_groups = int(groups.max()) + 1 if groups.size else 0
    counts = np.bincount(groups, minlength=n_groups).astype(float)
    counts[counts == 0] = 1.0
    if values.ndim == 1:
        return values - (np.bincount(groups, values, n_groups) / counts)[groups]
    out = np.empty_like(values)
    for j in range(values.shape[1]):
        col = values[:, j]
        out[:, j] = col - (np.bincount(groups, col, n_groups) / counts)[groups]
    return out


@dataclass(frozen=True)
class DemeanedPanel:
    values: Mapping[str, np.ndarray]
    keys: list
    counts: Mapping[str, int]
    sample: Sample

    def matrix(self, names):
        return np.column_stack([self.values[n] for n in names])


def within_demean(ds, variables, filt=None, drop_singletons=True):
    """Entity-demean ``variables`` over the retained sample.

    Returns a :class:`DemeanedPanel` whose ``counts`` give the retained
    periods per entity (for degrees-of-freedom accounting).

    Raises
    ------
    SingletonEntityError
        If an entity keeps a single period and ``drop_singletons`` is false.
    """
    variables = list(variables)
    for v in variables:
        if v not in ds:
            raise ConfigError(f"unknown column {v!r}")
    sample = select_sample(ds, filt, variables, drop_singletons=drop_singletons)
    counts_all = np.bincount(sample.entity_idx, minlength=len(ds.entities))
    if not drop_singletons and (counts_all == 1).any():
        bad = [ds.entities[i] for i in np.flatnonzero(counts_all == 1)]
        raise SingletonEntityError(f"entities with a single retained period: {', '.join(bad)}")
    vals = {}
    for v in variables:
        col = demean_by(sample.take(ds[v]), sample.entity_idx, len(ds.entities))
        col.flags.writeable = False
        vals[v] = col
    counts = {ds.entities[i]: int(c) for i, c in enumerate(counts_all) if c > 0}
    return DemeanedPanel(MappingProxyType(vals), sample.keys(ds), MappingProxyType(counts), sample)


@dataclass(frozen=True)
class TimeDummies:
    matrix: np.ndarray
    names: tuple
    base_period: int
    periods: tuple


def time_dummies_for(ds, sample):
    """Drop-first period indicators for the rows of ``sample``."""
    retained = np.unique(sample.period_idx)
    if retained.size < 2:
        raise DataError("time fixed effects need at least two retained periods")
    cols = retained[1:]
    mat = (sample.period_idx[:, None] == cols[None, :]).astype(float)
    periods = tuple(ds.periods[t] for t in retained)
    return TimeDummies(mat, tuple(f"year_{ds.periods[t]}" for t in cols), periods[0], periods)


def build_time_dummies(ds, filt=None):
    """Indicator block for every retained period except the earliest."""
    return time_dummies_for(ds, select_sample(ds, filt))


# ---------------------------------------------------------------- summaries


def describe(ds, variables=None, filt=None):
    """Summary statistics per variable over retained, non-missing cells.

    Returns a list of dicts with keys ``variable, n, mean, sd, min, max``.
    """
    mask = sample_mask(ds, filt)
    rows = []
    for v in variables or ds.names:
        x = ds[v][mask]
        x = x[~np.isnan(x)]
        n = x.size
        rows.append({
            "variable": v,
            "n": int(n),
            "mean": float(x.mean()) if n else math.nan,
            "sd": float(x.std(ddof=1)) if n > 1 else math.nan,
            "min": float(x.min()) if n else math.nan,
            "max": float(x.max()) if n else math.nan,
        })
    return rows


def from_long(entities, periods, columns):
    """Build a dataset from parallel long-format sequences.

    ``entities`` and ``periods`` give one key per row; ``columns`` maps names
    to equally long value sequences.
    """
    entities = [str(e) for e in entities]
    periods = [int(p) for p in periods]
    ent = sorted(set(entities))
    per = list(range(min(periods), max(periods) + 1))
    epos = {e: i for i, e in enumerate(ent)}
    seen = set()
    out = {k: np.full((len(ent), len(per)), np.nan) for k in columns}
    for r, (e, p) in enumerate(zip(entities, periods)):
        if (e, p) in seen:
            raise DuplicateObservationError(f"duplicate observation for entity {e!r}, period {p}")
        seen.add((e, p))
        for k, vals in columns.items():
            out[k][epos[e], p - per[0]] = vals[r]
    return PanelDataset(ent, per, out)
