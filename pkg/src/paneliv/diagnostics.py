"""Weak-instrument and identification diagnostics for a single endogenous regressor.

The Kleibergen-Paap statistics are computed only through their
single-endogenous equivalences: the robust rk Wald F is the robust
first-stage F on the excluded instruments, and the robust rk LM is the
robust score test of the excluded instruments in the first stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import GridError, SpecError, UnsupportedConfigurationError
from .regression import (
    as_cov,
    ols_fit,
    prepare_design,
    tsls_on_design,
    wald_test,
)


@dataclass(frozen=True)
class FTest:
    statistic: float
    df_num: int
    df_den: int
    pvalue: float
    label: str = "first-stage F (KP rk Wald F, single endogenous)"

    def to_dict(self):
        return {"statistic": self.statistic, "df_num": self.df_num, "df_den": self.df_den,
                "p_value": self.pvalue}


@dataclass(frozen=True)
class ChiSquareTest:
    statistic: float
    df: int
    pvalue: float
    label: str = "under-identification LM (KP rk LM, single endogenous)"

    def to_dict(self):
        return {"statistic": self.statistic, "df": self.df, "p_value": self.pvalue}


@dataclass(frozen=True)
class ARTest:
    """Anderson-Rubin test of ``beta = beta0`` in Wald/q form with F(q, dof) p-value."""

    beta0: float
    statistic: float
    df_num: int
    df_den: int
    pvalue: float

    def to_dict(self):
        return {"beta0": self.beta0, "statistic": self.statistic, "df_num": self.df_num,
                "df_den": self.df_den, "p_value": self.pvalue}


@dataclass(frozen=True)
class GridPolicy:
    """Search grid for AR test inversion.

    ``half_width`` and ``max_half_width`` are in units of ``scale``, which
    defaults to the 2SLS standard error of the endogenous coefficient.
    """

    center: float | None = None
    half_width: float = 10.0
    steps: int = 2001
    expansion_factor: float = 10.0
    max_half_width: float = 1e6
    scale: float | None = None

    def __post_init__(self):
        if self.steps < 3 or self.steps % 2 == 0:
            raise GridError(f"grid steps must be odd and >= 3, got {self.steps}")
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise GridError("grid half-width must be positive and finite")
        if not (self.expansion_factor > 1):
            raise GridError("expansion factor must exceed 1")
        if not (math.isfinite(self.max_half_width) and self.max_half_width >= self.half_width):
            raise GridError("expansion cap must be finite and at least the initial half-width")
        if self.scale is not None and not (self.scale > 0 and math.isfinite(self.scale)):
            raise GridError("grid scale must be positive and finite")


@dataclass(frozen=True)
class ARConfidenceSet:
    """Non-rejection region of the AR test.

    ``kind`` is ``bounded``, ``disjoint``, ``unbounded``, ``whole-line`` or
    ``empty``. Open ends are reported as infinite endpoints.
    """

    intervals: tuple
    level: float
    kind: str
    notes: tuple = ()

    @property
    def is_bounded(self):
        return self.kind in ("bounded", "disjoint", "empty")

    @property
    def is_unbounded(self):
        return self.kind in ("unbounded", "whole-line")

    def contains(self, beta):
        return any(lo <= beta <= hi for lo, hi in self.intervals)

    @property
    def length(self):
        return float(sum(hi - lo for lo, hi in self.intervals))

    def describe(self, digits=3):
        if not self.intervals:
            return "empty"
        fmt = lambda v: ("-inf" if v < 0 else "inf") if math.isinf(v) else f"{v:.{digits}f}"
        return " U ".join(f"[{fmt(lo)}, {fmt(hi)}]" for lo, hi in self.intervals)

    def to_dict(self):
        enc = lambda v: v if math.isfinite(v) else ("-inf" if v < 0 else "inf")
        return {"level": self.level, "kind": self.kind,
                "intervals": [[enc(lo), enc(hi)] for lo, hi in self.intervals],
                "notes": list(self.notes)}


@dataclass(frozen=True)
class DiagnosticsBundle:
    first_stage_f: FTest
    underid_lm: ChiSquareTest
    ar_test: ARTest
    ar_confidence_set: ARConfidenceSet
    notes: tuple = field(default=())

    def to_dict(self):
        return {
            "first_stage_f": self.first_stage_f.to_dict(),
            "underid_lm": self.underid_lm.to_dict(),
            "ar_test": self.ar_test.to_dict(),
            "ar_confidence_set": self.ar_confidence_set.to_dict(),
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------- first stage


def first_stage_f(first_stage, excluded, cov=None):
    """Wald statistic for joint nullity of the excluded instruments over ``q``.

    The p-value uses F(q, residual dof of the first stage).
    """
    excluded = [excluded] if isinstance(excluded, str) else list(excluded)
    missing = [e for e in excluded if e not in first_stage.coefficients]
    if missing:
        raise SpecError(f"not coefficients of the first stage: {', '.join(missing)}")
    w, q = wald_test(first_stage, excluded, cov or first_stage.covariance)
    F = max(w / q, 0.0)
    return FTest(F, q, first_stage.dof_residual, float(stats.f.sf(F, q, first_stage.dof_residual)))


def _partial_out(W, *arrays):
    if W.shape[1] == 0:
        return arrays
    Q, _ = np.linalg.qr(W)
    return tuple(a - Q @ (Q.T @ a) for a in arrays)


def _meat(scores, cov, clusters):
    if cov.kind == "cluster":
        _, codes = np.unique(clusters, return_inverse=True)
        G = int(codes.max()) + 1
        scores = np.column_stack([np.bincount(codes, scores[:, j], G) for j in range(scores.shape[1])])
    return scores.T @ scores


def lm_on_design(d, cov):
    if d.Z is None:
        raise SpecError("under-identification test needs excluded instruments")
    if d.x is None or np.ndim(d.x) != 1:
        raise UnsupportedConfigurationError("under-identification LM supports one endogenous regressor")
    u, Zt = _partial_out(d.W, d.x, d.Z)
    S = Zt.T @ u
    q = Zt.shape[1]
    if cov.kind == "classical":
        sigma2 = u @ u / len(u)
        M = sigma2 * (Zt.T @ Zt)
    else:
        M = _meat(Zt * u[:, None], cov, d.clusters)
    lm = float(max(S @ np.linalg.solve(M, S), 0.0))
    return ChiSquareTest(lm, q, float(stats.chi2.sf(lm, q)))


def underid_lm(spec, ds, cov=None, design=None):
    """Score test that the excluded instruments are irrelevant in the first stage.

    The endogenous regressor is regressed on the included exogenous block
    (fixed effects absorbed); the restricted residuals ``u`` are scored
    against the partialled instruments ``Zt``:
    ``LM = (Zt'u)' M^{-1} (Zt'u)`` with ``M = sum_i zt_i zt_i' u_i^2`` (robust),
    its cluster-summed analogue, or ``u'u/n * Zt'Zt`` (classical, which gives
    ``n`` times the partial R-squared). Chi-square with ``q`` dof.
    """
    d = design or prepare_design(spec, ds)
    return lm_on_design(d, as_cov(cov or spec.covariance))


# ---------------------------------------------------------------- Anderson-Rubin


def ar_test(spec, ds, beta0, cov=None, design=None):
    """Anderson-Rubin test of ``beta = beta0`` by direct regression.

    ``y - beta0 * endogenous`` is regressed on the instruments plus the
    included exogenous block; the statistic is the Wald test of the
    instrument coefficients divided by ``q``.
    """
    d = design or prepare_design(spec, ds)
    if d.Z is None:
        raise SpecError("AR test needs an IV specification")
    cov = as_cov(cov or spec.covariance)
    yb = d.y - beta0 * d.x
    X = np.hstack([d.Z, d.W])
    res = ols_fit(X, yb, d.z_names + d.w_names, cov, clusters=d.clusters, absorbed=d.absorbed,
                  n_dummies=d.n_time_dummies, n_entities=d.n_entities, n_periods=d.n_periods,
                  keys=d.keys, dependent="ar", tag="AR")
    w, q = wald_test(res, d.z_names)
    stat = max(w / q, 0.0)
    return ARTest(float(beta0), stat, q, res.dof_residual, float(stats.f.sf(stat, q, res.dof_residual)))


class ARProblem:
    """Vectorised AR statistic as a function of ``beta0``.

    After partialling out the exogenous block, the instrument coefficients
    and residuals of ``y - b x`` are affine in ``b``, so the sandwich meat is
    a quadratic in ``b``; each grid point costs a ``q x q`` solve.
    """

    def __init__(self, design, cov):
        d = design
        cov = as_cov(cov)
        self.cov = cov
        yt, xt, Zt = _partial_out(d.W, d.y, d.x, d.Z)
        n, q = Zt.shape
        self.q = q
        n_params = d.absorbed + d.W.shape[1] + q
        self.dof = n - n_params
        A = np.linalg.inv(Zt.T @ Zt)
        self.a_y = A @ (Zt.T @ yt)
        self.a_x = A @ (Zt.T @ xt)
        e_y = yt - Zt @ self.a_y
        e_x = xt - Zt @ self.a_x
        self.A = A
        if cov.kind == "classical":
            denom = self.dof if cov.small_sample else n
            self.s_yy = e_y @ e_y / denom
            self.s_xy = e_x @ e_y / denom
            self.s_xx = e_x @ e_x / denom
        else:
            sy = Zt * e_y[:, None]
            sx = Zt * e_x[:, None]
            if cov.kind == "cluster":
                _, codes = np.unique(d.clusters, return_inverse=True)
                G = int(codes.max()) + 1
                sy = np.column_stack([np.bincount(codes, sy[:, j], G) for j in range(q)])
                sx = np.column_stack([np.bincount(codes, sx[:, j], G) for j in range(q)])
                factor = G / (G - 1) * (n - 1) / self.dof if cov.small_sample else 1.0
            else:
                factor = n / self.dof if cov.small_sample else 1.0
            self.M_yy = factor * A @ (sy.T @ sy) @ A
            cross = sy.T @ sx
            self.M_xy = factor * A @ ((cross + cross.T) / 2) @ A
            self.M_xx = factor * A @ (sx.T @ sx) @ A

    def statistic(self, beta):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        g = self.a_y[None, :] - beta[:, None] * self.a_x[None, :]
        b = beta[:, None, None]
        if self.cov.kind == "classical":
            s2 = self.s_yy - 2 * beta * self.s_xy + beta ** 2 * self.s_xx
            V = s2[:, None, None] * self.A[None]
        else:
            V = self.M_yy[None] - 2 * b * self.M_xy[None] + b ** 2 * self.M_xx[None]
        w = np.einsum("ni,ni->n", g, np.linalg.solve(V, g[..., None])[..., 0])
        return np.maximum(w / self.q, 0.0)

    def pvalue(self, beta):
        return stats.f.sf(self.statistic(beta), self.q, self.dof)


def _bisect(f_accept, lo, hi, tol):
    """Boundary between ``lo`` (accepted) and ``hi`` (rejected); either order."""
    a, b = lo, hi
    while abs(b - a) > tol:
        m = 0.5 * (a + b)
        if f_accept(m):
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def ar_set_from_problem(problem, level, grid, center, scale):
    alpha = 1.0 - level
    accept = lambda b: bool(problem.pvalue(b)[0] >= alpha)
    h = grid.half_width
    pts = center + np.linspace(-h, h, grid.steps) * scale
    acc = problem.pvalue(pts) >= alpha
    expansions = 0
    while (acc[0] or acc[-1]) and h < grid.max_half_width:
        h = min(h * grid.expansion_factor, grid.max_half_width)
        new = center + np.linspace(-h, h, grid.steps) * scale
        pts = np.union1d(pts, new)
        acc = problem.pvalue(pts) >= alpha
        expansions += 1
    tol = 1e-6 * scale
    intervals = []
    i, m = 0, len(pts)
    while i < m:
        if not acc[i]:
            i += 1
            continue
        j = i
        while j + 1 < m and acc[j + 1]:
            j += 1
        lo = -math.inf if i == 0 else _bisect(accept, pts[i], pts[i - 1], tol)
        hi = math.inf if j == m - 1 else _bisect(accept, pts[j], pts[j + 1], tol)
        intervals.append((float(lo), float(hi)))
        i = j + 1
    notes = []
    if expansions:
        notes.append(f"grid expanded {expansions} time(s) to half-width {h:g}")
    if not intervals:
        kind = "empty"
    elif intervals == [(-math.inf, math.inf)]:
        kind = "whole-line"
        notes.append("no rejection anywhere within the expansion cap")
    elif any(math.isinf(lo) or math.isinf(hi) for lo, hi in intervals):
        kind = "unbounded"
        if len(intervals) > 1:
            notes.append("disjoint")
    elif len(intervals) > 1:
        kind = "disjoint"
    else:
        kind = "bounded"
    return ARConfidenceSet(tuple(intervals), level, kind, tuple(notes))


def ar_confidence_set(spec, ds, level=0.95, grid=None, cov=None, design=None):
    """Invert the AR test over a centred, expanding grid.

    Maximal runs of non-rejected grid points become closed intervals whose
    endpoints are refined by bisection to ``1e-6`` grid-scale units. A run
    reaching the grid edge at the expansion cap is reported as open ended.
    """
    if not 0 < level < 1:
        raise GridError(f"confidence level must lie in (0, 1), got {level}")
    grid = grid or GridPolicy()
    d = design or prepare_design(spec, ds)
    cov = as_cov(cov or spec.covariance)
    center, scale = grid.center, grid.scale
    if center is None or scale is None:
        second, _ = tsls_on_design(d, cov)
        b = second.coefficients[d.endogenous]
        se = second.std_errors[d.endogenous]
        center = b if center is None else center
        scale = se if scale is None else scale
    if not (scale > 0 and math.isfinite(scale)):
        raise GridError("grid has zero width (non-positive or non-finite scale)")
    return ar_set_from_problem(ARProblem(d, cov), level, grid, center, scale)


# ---------------------------------------------------------------- bundle


def diagnose(spec, ds, level=0.95, beta0=0.0, grid=None, cov=None, design=None):
    """Estimate FE-2SLS and attach the full diagnostics bundle.

    Returns ``(second_stage, first_stage)``; the bundle sits on
    ``second_stage.diagnostics``.
    """
    d = design or prepare_design(spec, ds)
    cov = as_cov(cov or spec.covariance)
    second, first = tsls_on_design(d, cov)
    grid = grid or GridPolicy()
    b = second.coefficients[d.endogenous]
    se = second.std_errors[d.endogenous]
    center = b if grid.center is None else grid.center
    scale = se if grid.scale is None else grid.scale
    if not (scale > 0 and math.isfinite(scale)):
        raise GridError("grid has zero width (non-positive or non-finite scale)")
    problem = ARProblem(d, cov)
    ar_set = ar_set_from_problem(problem, level, grid, center, scale)
    stat = float(problem.statistic(beta0)[0])
    ar = ARTest(float(beta0), stat, problem.q, problem.dof, float(stats.f.sf(stat, problem.q, problem.dof)))
    bundle = DiagnosticsBundle(
        first_stage_f=first_stage_f(first, d.z_names, cov),
        underid_lm=lm_on_design(d, cov),
        ar_test=ar,
        ar_confidence_set=ar_set,
        notes=("Kleibergen-Paap statistics via single-endogenous equivalences",),
    )
    return second.with_diagnostics(bundle), first

