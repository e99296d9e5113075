import dataclasses
import math
from types import MappingProxyType

import numpy as np
import pytest
from conftest import lsdv_arrays, random_panel
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from paneliv.diagnostics import (
    ARConfidenceSet,
    ARProblem,
    GridPolicy,
    ar_confidence_set,
    ar_set_from_problem,
    ar_test,
    diagnose,
    first_stage_f,
    underid_lm,
)
from paneliv.errors import GridError, SpecError, UnsupportedConfigurationError
from paneliv.regression import (
    CovarianceSettings,
    EstimationResult,
    ModelSpec,
    first_stage_fit,
    prepare_design,
    tsls_fit,
)
from paneliv.simulation import DgpConfig, simulate_dgp

SPEC = DgpConfig.spec()


@pytest.fixture(scope="module")
def strong():
    return simulate_dgp(DgpConfig(seed=101))


@pytest.fixture(scope="module")
def irrelevant():
    return simulate_dgp(DgpConfig(pi_first_stage=0.0, seed=7))


def first_stage_stats(ds, spec, cov):
    d = prepare_design(spec, ds)
    return d, first_stage_fit(d, CovarianceSettings(cov))


# ---------------------------------------------------------------- first-stage F


def test_f_from_a_t_of_four():
    res = EstimationResult(
        coefficients=MappingProxyType({"z": 4.0}), vcov=np.array([[1.0]]), n_obs=100, n_entities=10,
        n_periods=10, dof_model=1, dof_residual=80, r_squared_within=0.1, residuals=np.zeros(100),
        keys=[], estimator_tag="first-stage", dependent="x", covariance=CovarianceSettings(),
    )
    f = first_stage_f(res, ["z"])
    assert f.statistic == pytest.approx(16.0, abs=1e-12)
    assert (f.df_num, f.df_den) == (1, 80)
    assert f.pvalue == pytest.approx(stats.f.sf(16.0, 1, 80))


@pytest.mark.parametrize("cov", ["classical", "robust", "cluster"])
def test_single_instrument_f_is_t_squared(strong, cov):
    _, first = first_stage_stats(strong, SPEC, cov)
    f = first_stage_f(first, ["z"])
    assert abs(f.statistic - first.tvalues["z"] ** 2) < 1e-8 * max(1.0, f.statistic)


def test_excluded_name_must_be_in_first_stage(strong):
    _, first = first_stage_stats(strong, SPEC, "robust")
    with pytest.raises(SpecError):
        first_stage_f(first, ["q"])


@given(st.floats(0.01, 1000))
@settings(max_examples=20, deadline=None)
def test_f_invariant_to_instrument_scale(c):
    ds = simulate_dgp(DgpConfig(n_entities=20, n_periods=8, seed=3))
    _, a = first_stage_stats(ds, SPEC, "robust")
    _, b = first_stage_stats(ds.with_column("z", ds["z"] * c, replace=True), SPEC, "robust")
    fa, fb = first_stage_f(a, ["z"]).statistic, first_stage_f(b, ["z"]).statistic
    assert abs(fa - fb) < 1e-9 * max(1.0, fa)


def null_f_values(reps, n_entities, n_periods, pi, seed):
    cfg = DgpConfig(n_entities=n_entities, n_periods=n_periods, pi_first_stage=pi, seed=seed)
    out = []
    for ss in np.random.SeedSequence(seed).spawn(reps):
        _, first = first_stage_stats(simulate_dgp(cfg, ss), SPEC, "robust")
        out.append(first_stage_f(first, ["z"]).statistic)
    return np.array(out)


def test_f_near_one_under_the_null():
    f = null_f_values(500, 80, 25, 0.0, 2024)
    assert 0.8 <= f.mean() <= 1.25


def test_strong_instrument_f_above_ten():
    f = null_f_values(500, 78, 25, 0.5, 77)
    assert np.mean(f > 10) >= 0.95


# ---------------------------------------------------------------- under-identification LM


def partial_r2_oracle(ds, spec):
    """n * partial R-squared of the instruments using explicit dummies."""
    names = [spec.endogenous, *spec.exogenous, *spec.instruments]
    cols, D, _, _ = lsdv_arrays(ds, [spec.dependent, *names])
    W = np.column_stack([cols[v] for v in spec.exogenous] + [D])
    ZW = np.column_stack([cols[v] for v in spec.instruments] + [W])
    x = cols[spec.endogenous]
    rss = lambda X: float(np.sum((x - X @ np.linalg.lstsq(X, x, rcond=None)[0]) ** 2))
    r_restricted, r_full = rss(W), rss(ZW)
    return len(x) * (r_restricted - r_full) / r_restricted


def test_classical_lm_is_n_partial_r2(strong):
    lm = underid_lm(SPEC, strong, "classical")
    ref = partial_r2_oracle(strong, SPEC)
    assert lm.statistic == pytest.approx(ref, rel=1e-6)
    assert lm.df == 1


def test_classical_lm_two_instruments(rng):
    ds = random_panel(rng, 8, 10, 1, endog=True)
    ds = ds.with_column("z2", rng.standard_normal(ds.shape))
    spec = ModelSpec("y", ("x1",), "x_en", ("z", "z2"))
    lm = underid_lm(spec, ds, "classical")
    assert lm.statistic == pytest.approx(partial_r2_oracle(ds, spec), rel=1e-6)
    assert lm.df == 2


def test_robust_lm_oracle(rng):
    ds = random_panel(rng, 8, 10, 1, endog=True)
    spec = ModelSpec("y", ("x1",), "x_en", ("z",))
    cols, D, _, _ = lsdv_arrays(ds, ["y", "x_en", "x1", "z"])
    W = np.column_stack([cols["x1"], D])
    M = np.eye(len(W)) - W @ np.linalg.pinv(W)
    u, zt = M @ cols["x_en"], M @ cols["z"]
    ref = (zt @ u) ** 2 / np.sum(zt ** 2 * u ** 2)
    assert underid_lm(spec, ds, "robust").statistic == pytest.approx(ref, rel=1e-8)


def test_lm_perfect_relevance(strong):
    ds = strong.with_column("x_copy", strong["ed"])
    lm = underid_lm(ModelSpec("lco2", ("ctrl",), "ed", ("x_copy",)), ds)
    assert lm.statistic > 100 and lm.pvalue < 1e-12


def test_lm_and_f_agree_on_a_strong_fixture():
    ds = simulate_dgp(DgpConfig(n_entities=20, n_periods=10, seed=5))
    d, first = first_stage_stats(ds, SPEC, "robust")
    lm = underid_lm(SPEC, ds, design=d)
    f = first_stage_f(first, ["z"])
    assert (lm.pvalue < 0.05) == (f.pvalue < 0.05)


def test_lm_multiple_endogenous_is_unsupported(strong):
    d = prepare_design(SPEC, strong)
    d2 = dataclasses.replace(d, x=np.column_stack([d.x, d.x]))
    with pytest.raises(UnsupportedConfigurationError):
        underid_lm(SPEC, strong, design=d2)


# ---------------------------------------------------------------- Anderson-Rubin


@pytest.mark.parametrize("cov", ["classical", "robust", "cluster"])
def test_ar_zero_at_just_identified_estimate(strong, cov):
    second, _ = tsls_fit(SPEC, strong, cov)
    b = second.coefficients["ed"]
    assert ar_test(SPEC, strong, b, cov).statistic < 1e-8
    assert ARProblem(prepare_design(SPEC, strong), cov).statistic(b)[0] < 1e-8


def test_ar_rejects_zero_on_strong_dgp(strong):
    assert ar_test(SPEC, strong, 0.0).pvalue < 0.01


@pytest.mark.parametrize("cov", ["classical", "robust", "cluster"])
def test_vectorised_ar_matches_regression(cov, rng):
    ds = random_panel(rng, 8, 10, 1, endog=True)
    ds = ds.with_column("z2", ds["z"] * rng.uniform(0.5, 1.5, ds.shape))
    spec = ModelSpec("y", ("x1",), "x_en", ("z", "z2"))
    problem = ARProblem(prepare_design(spec, ds), cov)
    betas = np.array([-3.0, -0.2, 0.0, 0.5, 1.7, 40.0])
    vec = problem.statistic(betas)
    for b, v in zip(betas, vec):
        direct = ar_test(spec, ds, b, cov)
        assert v == pytest.approx(direct.statistic, rel=1e-8)
        assert problem.dof == direct.df_den
    np.testing.assert_allclose(problem.pvalue(betas), stats.f.sf(vec, 2, problem.dof))


def test_ar_statistic_minimised_at_estimate(strong):
    second, _ = tsls_fit(SPEC, strong)
    b, se = second.coefficients["ed"], second.std_errors["ed"]
    grid = b + np.linspace(-10, 10, 2001) * se
    stat = ARProblem(prepare_design(SPEC, strong), "robust").statistic(grid)
    step = grid[1] - grid[0]
    assert abs(grid[np.argmin(stat)] - b) <= step


def test_ar_set_bounded_matches_dense_grid(strong):
    second, _ = tsls_fit(SPEC, strong)
    b, se = second.coefficients["ed"], second.std_errors["ed"]
    cs = ar_confidence_set(SPEC, strong, 0.95)
    assert cs.kind == "bounded" and len(cs.intervals) == 1
    lo, hi = cs.intervals[0]
    assert lo < b < hi and cs.contains(b)
    # independent oracle: regression-route AR test on a dense grid
    d = prepare_design(SPEC, strong)
    pts = np.linspace(lo - 2 * se, hi + 2 * se, 301)
    step = pts[1] - pts[0]
    accept = np.array([ar_test(SPEC, strong, p, design=d).pvalue >= 0.05 for p in pts])
    inside = pts[accept]
    assert accept.any() and not accept[0] and not accept[-1]
    assert np.all(np.diff(np.flatnonzero(accept)) == 1)
    assert abs(inside.min() - lo) <= step and abs(inside.max() - hi) <= step
    assert ar_test(SPEC, strong, lo + 1e-4 * se, design=d).pvalue >= 0.05 - 1e-4
    assert ar_test(SPEC, strong, hi + 1e-3 * se, design=d).pvalue < 0.05


def test_ar_set_unbounded_for_irrelevant_instrument(irrelevant):
    cs = ar_confidence_set(SPEC, irrelevant, 0.95)
    assert cs.is_unbounded
    assert any(math.isinf(lo) or math.isinf(hi) for lo, hi in cs.intervals)
    assert "inf" in cs.describe()


def test_ar_set_whole_line_and_disjoint_classification():
    class Flat:
        q, dof = 1, 100

        def pvalue(self, b):
            return np.full(np.atleast_1d(b).shape, 0.5)

    cs = ar_set_from_problem(
        Flat(), 0.95, GridPolicy(max_half_width=1e3), 0.0, 1.0)
    assert cs.kind == "whole-line" and cs.intervals == ((-math.inf, math.inf),)

    class TwoHumps:
        q, dof = 1, 100

        def pvalue(self, b):
            b = np.atleast_1d(b)
            return np.where((np.abs(b - 2) < 1) | (np.abs(b + 2) < 1), 0.5, 0.0)

    cs = ar_set_from_problem(
        TwoHumps(), 0.95, GridPolicy(), 0.0, 1.0)
    assert cs.kind == "disjoint" and len(cs.intervals) == 2
    (a, b), (c, d) = cs.intervals
    assert a == pytest.approx(-3, abs=1e-5) and b == pytest.approx(-1, abs=1e-5)
    assert c == pytest.approx(1, abs=1e-5) and d == pytest.approx(3, abs=1e-5)


def test_grid_policy_validation():
    with pytest.raises(GridError):
        GridPolicy(steps=2000)
    with pytest.raises(GridError):
        GridPolicy(steps=1)
    with pytest.raises(GridError):
        GridPolicy(half_width=0)
    with pytest.raises(GridError):
        GridPolicy(max_half_width=math.inf)
    with pytest.raises(GridError):
        GridPolicy(scale=0.0)


def test_level_outside_unit_interval(strong):
    with pytest.raises(GridError):
        ar_confidence_set(SPEC, strong, level=1.0)


def test_confidence_set_helpers():
    cs = ARConfidenceSet(((0.0, 1.0), (2.0, 2.5)), 0.95, "disjoint")
    assert cs.is_bounded and not cs.is_unbounded
    assert cs.length == 1.5
    assert cs.contains(2.2) and not cs.contains(1.5)
    assert cs.describe(1) == "[0.0, 1.0] U [2.0, 2.5]"
    assert cs.to_dict()["intervals"] == [[0.0, 1.0], [2.0, 2.5]]


# ---------------------------------------------------------------- bundle


def test_diagnose_bundle(strong):
    second, first = diagnose(SPEC, strong)
    bundle = second.diagnostics
    assert bundle.first_stage_f.statistic == pytest.approx(first.tvalues["z"] ** 2, rel=1e-10)
    assert bundle.ar_test.beta0 == 0.0 and bundle.ar_test.pvalue < 0.01
    assert bundle.ar_confidence_set.contains(second.coefficients["ed"])
    for p in (bundle.first_stage_f.pvalue, bundle.underid_lm.pvalue, bundle.ar_test.pvalue):
        assert 0 <= p <= 1
    for dof in (bundle.first_stage_f.df_den, bundle.ar_test.df_den, bundle.underid_lm.df):
        assert isinstance(dof, int) and dof > 0
    assert "diagnostics" in second.to_dict()
