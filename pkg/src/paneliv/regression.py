"""Fixed-effects OLS and two-stage least squares with robust inference.

Entity effects are absorbed by within-demeaning; time effects enter as
explicit (entity-demeaned) period dummies. By Frisch-Waugh-Lovell this is
exact for unbalanced panels, and the slope coefficients coincide with the
explicit dummy-variable (LSDV) regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy import linalg, stats

from .errors import (
    CollinearityError,
    ConfigError,
    DegenerateClusterError,
    DegenerateInstrumentError,
    DegreesOfFreedomError,
    SpecError,
)
from .panel import SampleFilter, demean_by, select_sample, time_dummies_for

RANK_TOL = 1e-10

COVARIANCE_KINDS = {
    "classical": "classical",
    "unadjusted": "classical",
    "robust": "robust",
    "hc1": "robust",
    "cluster": "cluster",
}


@dataclass(frozen=True)
class CovarianceSettings:
    """Covariance estimator choice.

    ``kind`` is ``classical``, ``robust`` (HC1) or ``cluster`` (by entity).
    ``small_sample`` toggles the degrees-of-freedom factors.
    """

    kind: str = "robust"
    small_sample: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", COVARIANCE_KINDS[self.kind.lower()])
        except KeyError:
            raise ConfigError(
                f"unknown covariance {self.kind!r}; expected classical, robust or cluster"
            ) from None


def as_cov(cov):
    if cov is None:
        return CovarianceSettings()
    if isinstance(cov, str):
        return CovarianceSettings(cov)
    return cov


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of one panel regression.

    Parameters
    ----------
    dependent : str
    exogenous : sequence of str
        Included exogenous regressors, in reporting order.
    endogenous : str, optional
        The single endogenous regressor.
    instruments : sequence of str
        Excluded instruments.
    fixed_effects : sequence of {"entity", "time"}
    covariance : str or CovarianceSettings
    filter : SampleFilter
    """

    dependent: str
    exogenous: tuple = ()
    endogenous: str | None = None
    instruments: tuple = ()
    fixed_effects: tuple = ("entity", "time")
    covariance: CovarianceSettings = field(default_factory=CovarianceSettings)
    filter: SampleFilter = field(default_factory=SampleFilter)

    def __post_init__(self):
        for name in ("exogenous", "instruments", "fixed_effects"):
            v = getattr(self, name)
            object.__setattr__(self, name, (v,) if isinstance(v, str) else tuple(v))
        object.__setattr__(self, "covariance", as_cov(self.covariance))
        bad_fe = set(self.fixed_effects) - {"entity", "time"}
        if bad_fe:
            raise SpecError(f"unknown fixed effects {sorted(bad_fe)}")
        if self.endogenous and not self.instruments:
            raise SpecError("an endogenous regressor requires at least one instrument")
        if self.instruments and not self.endogenous:
            raise SpecError("instruments given without an endogenous regressor")
        roles = [self.dependent, *self.exogenous, *self.instruments]
        if self.endogenous:
            roles.append(self.endogenous)
        dup = sorted({r for r in roles if roles.count(r) > 1})
        if dup:
            raise SpecError(f"variable(s) appear in more than one role: {', '.join(dup)}")

    @property
    def entity_effects(self):
        return "entity" in self.fixed_effects

    @property
    def time_effects(self):
        return "time" in self.fixed_effects

    @property
    def variables(self):
        v = [self.dependent]
        if self.endogenous:
            v.append(self.endogenous)
        return tuple(v + list(self.exogenous) + list(self.instruments))

    def replace(self, **changes):
        return replace(self, **changes)


# ---------------------------------------------------------------- design


@dataclass(frozen=True)
class PanelDesign:
    """Numeric arrays for one spec after sample selection and FE absorption.

    ``W`` holds the included exogenous block: reported exogenous columns,
    then an intercept when entity effects are off, then period dummies.
    """

    y: np.ndarray
    x: np.ndarray | None
    W: np.ndarray
    Z: np.ndarray | None
    w_names: tuple
    n_w_reported: int
    z_names: tuple
    dependent: str
    endogenous: str | None
    clusters: np.ndarray
    n_entities: int
    n_periods: int
    absorbed: int
    keys: list

    @property
    def n_obs(self):
        return len(self.y)

    @property
    def n_time_dummies(self):
        return self.W.shape[1] - self.n_w_reported


def prepare_design(spec, ds):
    """Select the listwise-complete sample and build demeaned design arrays."""
    for v in spec.variables:
        if v not in ds:
            raise ConfigError(f"unknown column {v!r}")
    sample = select_sample(ds, spec.filter, spec.variables, drop_singletons=spec.entity_effects)
    if sample.n_obs == 0:
        raise DegreesOfFreedomError("no observations left after sample selection")
    ent = sample.entity_idx
    n_ent = int(np.unique(ent).size)
    w_cols = [sample.take(ds[v]) for v in spec.exogenous]
    w_names = list(spec.exogenous)
    if not spec.entity_effects:
        w_cols.append(np.ones(sample.n_obs))
        w_names.append("const")
    n_rep = len(w_names)
    n_per = int(np.unique(sample.period_idx).size)
    if spec.time_effects:
        td = time_dummies_for(ds, sample)
        w_cols.extend(td.matrix.T)
        w_names.extend(td.names)
    W = np.column_stack(w_cols) if w_cols else np.empty((sample.n_obs, 0))
    y = sample.take(ds[spec.dependent])
    x = sample.take(ds[spec.endogenous]) if spec.endogenous else None
    Z = np.column_stack([sample.take(ds[v]) for v in spec.instruments]) if spec.instruments else None
    Z_raw = Z
    if spec.entity_effects:
        n_all = len(ds.entities)
        raw = np.column_stack([x, W[:, :n_rep]]) if x is not None else W[:, :n_rep]
        y = demean_by(y, ent, n_all)
        W = demean_by(W, ent, n_all) if W.shape[1] else W
        x = demean_by(x, ent, n_all) if x is not None else None
        _check_absorbed(raw, np.column_stack([x, W[:, :n_rep]]) if x is not None else W[:, :n_rep],
                        ([spec.endogenous] if x is not None else []) + w_names[:n_rep])
        Z = demean_by(Z, ent, n_all) if Z is not None else None
    if Z is not None:
        _check_instrument_variation(Z, Z_raw, W[:, n_rep:], spec.instruments)
    return PanelDesign(
        y=y, x=x, W=W, Z=Z,
        w_names=tuple(w_names), n_w_reported=n_rep, z_names=tuple(spec.instruments),
        dependent=spec.dependent, endogenous=spec.endogenous,
        clusters=ent.copy(), n_entities=n_ent, n_periods=n_per,
        absorbed=n_ent if spec.entity_effects else 0,
        keys=sample.keys(ds),
    )


def _check_absorbed(raw, demeaned, names):
    # a regressor constant within every entity leaves only rounding noise
    for j, name in enumerate(names):
        if np.linalg.norm(demeaned[:, j]) <= 1e-10 * max(np.linalg.norm(raw[:, j]), 1e-300):
            raise CollinearityError([name, "entity effects"],
                                    f"regressor {name!r} is constant within entities and absorbed by entity effects")


def _check_instrument_variation(Z, Z_raw, D, names):
    # variation left after removing both sets of fixed effects
    if D.shape[1]:
        coef, *_ = np.linalg.lstsq(D, Z, rcond=None)
        Z = Z - D @ coef
    for j, name in enumerate(names):
        scale = np.linalg.norm(Z_raw[:, j] - Z_raw[:, j].mean()) + np.linalg.norm(Z_raw[:, j])
        if np.linalg.norm(Z[:, j]) <= 1e-10 * max(scale, 1e-300):
            raise DegenerateInstrumentError(
                f"instrument {name!r} has no variation left after fixed-effect absorption"
            )


# ---------------------------------------------------------------- least squares


@dataclass(frozen=True)
class LeastSquares:
    coef: np.ndarray
    xtx_inv: np.ndarray


def least_squares(X, y, names):
    """Solve min ||y - Xb|| by column-pivoted QR on unit-norm columns.

    Raises
    ------
    CollinearityError
        If the numerical rank (relative diagonal tolerance ``RANK_TOL``) is
        below the number of columns; names one dependent column set.
    """
    X = np.asarray(X, dtype=float)
    k = X.shape[1]
    norms = np.linalg.norm(X, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise CollinearityError([names[zero[0]]], f"column {names[zero[0]]!r} is identically zero")
    Xs = X / norms
    Q, R, piv = linalg.qr(Xs, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > RANK_TOL * d[0]))
    if rank < k:
        raise CollinearityError(_dependent_set(Xs, piv, rank, names))
    Rinv = linalg.solve_triangular(R, np.eye(k))
    b_piv = Rinv @ (Q.T @ y)
    inv_piv = Rinv @ Rinv.T
    coef = np.empty(k)
    coef[piv] = b_piv
    xtx_inv = np.empty((k, k))
    xtx_inv[np.ix_(piv, piv)] = inv_piv
    coef = coef / norms
    xtx_inv = xtx_inv / np.outer(norms, norms)
    return LeastSquares(coef, xtx_inv)


def _dependent_set(Xs, piv, rank, names):
    kept = piv[:rank]
    bad = piv[rank]
    c, *_ = np.linalg.lstsq(Xs[:, kept], Xs[:, bad], rcond=None)
    involved = [kept[i] for i in np.flatnonzero(np.abs(c) > 1e-8 * max(np.abs(c).max(), 1e-300))]
    return [names[j] for j in sorted(involved + [bad])]


# ---------------------------------------------------------------- covariance


def classical_vcov(residuals, design, n_params=None, small_sample=True, bread=None):
    e = np.asarray(residuals, dtype=float)
    X = np.asarray(design, dtype=float)
    n, k = X.shape
    n_params = k if n_params is None else n_params
    bread = np.linalg.inv(X.T @ X) if bread is None else bread
    denom = n - n_params if small_sample else n
    return (e @ e / denom) * bread


def hc_vcov(residuals, design, n_params=None, small_sample=True, bread=None):
    """White sandwich; HC1 when ``small_sample`` (factor n/(n-k)), else HC0."""
    e = np.asarray(residuals, dtype=float)
    X = np.asarray(design, dtype=float)
    n, k = X.shape
    n_params = k if n_params is None else n_params
    bread = np.linalg.inv(X.T @ X) if bread is None else bread
    s = X * e[:, None]
    V = bread @ (s.T @ s) @ bread
    if small_sample:
        V *= n / (n - n_params)
    return V


def cluster_vcov(residuals, design, cluster_ids, n_params=None, small_sample=True, bread=None):
    """Cluster-robust sandwich.

    Scores ``x_i e_i`` are summed within clusters before the outer product.
    With ``small_sample`` the result is scaled by
    ``G/(G-1) * (n-1)/(n-k)`` where ``k`` is ``n_params`` (defaults to the
    number of design columns).

    Raises
    ------
    DegenerateClusterError
        With fewer than two clusters.
    """
    e = np.asarray(residuals, dtype=float)
    X = np.asarray(design, dtype=float)
    ids = np.asarray(cluster_ids)
    if ids.shape[0] != X.shape[0]:
        raise ConfigError("every observation needs a cluster id")
    _, codes = np.unique(ids, return_inverse=True)
    G = int(codes.max()) + 1 if codes.size else 0
    if G < 2:
        raise DegenerateClusterError(f"cluster covariance needs at least 2 clusters, got {G}")
    n, k = X.shape
    n_params = k if n_params is None else n_params
    bread = np.linalg.inv(X.T @ X) if bread is None else bread
    s = X * e[:, None]
    S = np.column_stack([np.bincount(codes, s[:, j], G) for j in range(k)]) if k else np.empty((G, 0))
    V = bread @ (S.T @ S) @ bread
    if small_sample:
        V *= G / (G - 1) * (n - 1) / (n - n_params)
    return V


def sandwich(cov, residuals, design, clusters, n_params, bread):
    cov = as_cov(cov)
    if cov.kind == "classical":
        return classical_vcov(residuals, design, n_params, cov.small_sample, bread)
    if cov.kind == "robust":
        return hc_vcov(residuals, design, n_params, cov.small_sample, bread)
    return cluster_vcov(residuals, design, clusters, n_params, cov.small_sample, bread)


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class FitInternals:
    """Arrays needed to recompute covariances after the fit."""

    regressors: np.ndarray
    residuals: np.ndarray
    bread: np.ndarray
    coef: np.ndarray
    names: tuple
    clusters: np.ndarray
    n_params: int


@dataclass(frozen=True)
class EstimationResult:
    """Outcome of one estimation.

    ``coefficients`` and ``vcov`` cover the reported regressors only; period
    dummies are nuisance parameters and stay in ``internals``.
    """

    coefficients: Mapping[str, float]
    vcov: np.ndarray
    n_obs: int
    n_entities: int
    n_periods: int
    dof_model: int
    dof_residual: int
    r_squared_within: float
    residuals: np.ndarray
    keys: list
    estimator_tag: str
    dependent: str
    covariance: CovarianceSettings
    diagnostics: object = None
    internals: FitInternals | None = field(default=None, repr=False, compare=False)

    @property
    def names(self):
        return tuple(self.coefficients)

    @property
    def params(self):
        return np.array(list(self.coefficients.values()))

    @property
    def std_errors(self):
        return dict(zip(self.names, np.sqrt(np.diag(self.vcov))))

    @property
    def tvalues(self):
        se = self.std_errors
        return {k: v / se[k] for k, v in self.coefficients.items()}

    @property
    def pvalues(self):
        """Two-sided p-values from the t distribution with residual dof."""
        return {k: float(2 * stats.t.sf(abs(t), self.dof_residual)) for k, t in self.tvalues.items()}

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"{name!r} is not a coefficient of this {self.estimator_tag} fit") from None

    def vcov_as(self, cov):
        """Reported-coefficient covariance under another estimator choice (``None``: as fitted)."""
        if cov is None:
            return self.vcov
        cov = as_cov(cov)
        if cov == self.covariance:
            return self.vcov
        f = self.internals
        V = sandwich(cov, f.residuals, f.regressors, f.clusters, f.n_params, f.bread)
        k = len(self.coefficients)
        return V[:k, :k]

    def with_diagnostics(self, diagnostics):
        return replace(self, diagnostics=diagnostics)

    def to_dict(self):
        se = self.std_errors
        pv = self.pvalues
        out = {
            "estimator": self.estimator_tag,
            "dependent": self.dependent,
            "covariance": self.covariance.kind,
            "n_obs": self.n_obs,
            "n_entities": self.n_entities,
            "n_periods": self.n_periods,
            "dof_model": self.dof_model,
            "dof_residual": self.dof_residual,
            "r_squared_within": self.r_squared_within,
            "coefficients": {
                k: {"estimate": float(v), "std_error": float(se[k]), "p_value": pv[k]}
                for k, v in self.coefficients.items()
            },
            "vcov": [[float(x) for x in row] for row in self.vcov],
        }
        if self.diagnostics is not None:
            out["diagnostics"] = self.diagnostics.to_dict()
        return out


def _finish(tag, design_names, n_reported, coef, vcov_full, internals, *, y, resid, n_obs,
            n_entities, n_periods, dof_model, dof_residual, keys, dependent, cov):
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else math.nan
    names = design_names[:n_reported]
    V = vcov_full[:n_reported, :n_reported]
    V = (V + V.T) / 2
    resid = resid.copy()
    resid.flags.writeable = False
    return EstimationResult(
        coefficients=MappingProxyType({n: float(c) for n, c in zip(names, coef[:n_reported])}),
        vcov=V, n_obs=n_obs, n_entities=n_entities, n_periods=n_periods,
        dof_model=dof_model, dof_residual=dof_residual, r_squared_within=r2,
        residuals=resid, keys=keys, estimator_tag=tag, dependent=dependent,
        covariance=cov, internals=internals,
    )


def ols_fit(X, y, names, cov=None, *, clusters=None, absorbed=0, n_dummies=0, n_reported=None,
            n_entities=None, n_periods=None, keys=None, dependent="y", tag="FE-OLS"):
    """Least-squares fit of ``y`` on the (already demeaned) design ``X``.

    ``absorbed`` counts fixed effects removed before the call and
    ``n_dummies`` the trailing period-dummy columns of ``X``; both enter the
    residual degrees of freedom. Only the first ``n_reported`` columns are
    reported (default: all non-dummy columns).
    """
    cov = as_cov(cov)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = tuple(names)
    n_reported = k - n_dummies if n_reported is None else n_reported
    n_params = k + absorbed
    if n <= n_params:
        raise DegreesOfFreedomError(f"{n} observations for {n_params} parameters")
    ls = least_squares(X, y, names)
    resid = y - X @ ls.coef
    clusters = np.arange(n) if clusters is None else np.asarray(clusters)
    V = sandwich(cov, resid, X, clusters, n_params, ls.xtx_inv)
    internals = FitInternals(X, resid, ls.xtx_inv, ls.coef, names, clusters, n_params)
    return _finish(
        tag, names, n_reported, ls.coef, V, internals, y=y, resid=resid, n_obs=n,
        n_entities=n_entities if n_entities is not None else 1,
        n_periods=n_periods if n_periods is not None else n_dummies + 1,
        dof_model=k - n_dummies, dof_residual=n - n_params,
        keys=keys if keys is not None else list(range(n)), dependent=dependent, cov=cov,
    )


def fe_ols(spec, ds, cov=None, design=None):
    """FE-OLS of the model, treating any endogenous regressor as exogenous."""
    d = design or prepare_design(spec, ds)
    return _ols_on_design(d, as_cov(cov or spec.covariance))


def _ols_on_design(d, cov):
    cols, names = [], []
    if d.x is not None:
        cols.append(d.x[:, None])
        names.append(d.endogenous)
    cols.append(d.W)
    names.extend(d.w_names)
    X = np.hstack(cols)
    return ols_fit(
        X, d.y, names, cov, clusters=d.clusters, absorbed=d.absorbed, n_dummies=d.n_time_dummies,
        n_entities=d.n_entities, n_periods=d.n_periods, keys=d.keys, dependent=d.dependent,
        tag="FE-OLS",
    )


def first_stage_fit(d, cov):
    X = np.hstack([d.Z, d.W])
    names = d.z_names + d.w_names
    return ols_fit(
        X, d.x, names, cov, clusters=d.clusters, absorbed=d.absorbed, n_dummies=d.n_time_dummies,
        n_entities=d.n_entities, n_periods=d.n_periods, keys=d.keys, dependent=d.endogenous,
        tag="first-stage",
    )


def tsls_on_design(d, cov):
    """2SLS on prepared arrays; returns ``(second_stage, first_stage)``."""
    cov = as_cov(cov)
    first = first_stage_fit(d, cov)
    fitted = d.x - first.internals.residuals
    Xhat = np.column_stack([fitted, d.W])
    X = np.column_stack([d.x, d.W])
    names = (d.endogenous,) + d.w_names
    n, k = X.shape
    n_params = k + d.absorbed
    ls = least_squares(Xhat, d.y, names)
    # structural residuals use the original endogenous column
    resid = d.y - X @ ls.coef
    V = sandwich(cov, resid, Xhat, d.clusters, n_params, ls.xtx_inv)
    internals = FitInternals(Xhat, resid, ls.xtx_inv, ls.coef, names, d.clusters, n_params)
    second = _finish(
        "FE-2SLS", names, 1 + d.n_w_reported, ls.coef, V, internals, y=d.y, resid=resid, n_obs=n,
        n_entities=d.n_entities, n_periods=d.n_periods, dof_model=1 + d.n_w_reported,
        dof_residual=n - n_params, keys=d.keys, dependent=d.dependent, cov=cov,
    )
    return second, first


def tsls_fit(spec, ds, cov=None, design=None):
    """Fixed-effects 2SLS for a spec with one endogenous regressor.

    Returns
    -------
    second_stage, first_stage : EstimationResult
    """
    if not spec.endogenous:
        raise SpecError("tsls_fit needs an endogenous regressor and instruments")
    d = design or prepare_design(spec, ds)
    return tsls_on_design(d, as_cov(cov or spec.covariance))


def wald_test(result, names, cov=None):
    """Joint Wald test that the named coefficients are zero.

    Returns ``(chi2_statistic, q)``.
    """
    idx = [result.index(n) for n in names]
    V = result.vcov_as(cov)[np.ix_(idx, idx)]
    b = result.params[idx]
    return float(b @ np.linalg.solve(V, b)), len(idx)
