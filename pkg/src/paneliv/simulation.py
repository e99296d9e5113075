"""Monte Carlo data-generating process and experiment runner.

The DGP mirrors the estimating equation: an outcome with entity and time
effects, a regressor of interest driven by a shift-share style exposure
instrument ``z_it = rate_t * k_i`` and by an unobserved confounder that also
loads on the outcome. With opposite-signed loadings the FE estimate is
biased downward while 2SLS stays consistent.

Random numbers come from numpy's PCG64 generator. Replication ``r`` of an
experiment draws from ``SeedSequence(seed).spawn(reps)[r]``, so results do
not depend on the number of workers or the order replications finish in.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from .countries import SAMPLE_ISO3
from .diagnostics import ARProblem, GridPolicy, ar_set_from_problem, lm_on_design
from .errors import ConfigError, ExperimentError, PanelIVError
from .panel import PanelDataset
from .regression import ModelSpec, as_cov, fe_ols, prepare_design, tsls_on_design, wald_test

FAILURE_THRESHOLD = 0.01


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the simulated panel.

    ``rho_confound`` is the confounder's loading on the outcome;
    ``confound_endog_loading`` its loading on the regressor of interest.
    ``pi_first_stage`` multiplies the exposure instrument in the regressor
    equation.
    """

    n_entities: int = 78
    n_periods: int = 25
    first_period: int = 1991
    beta_true: float = 0.005
    pi_first_stage: float = -1.0
    rho_confound: float = -0.012
    confound_endog_loading: float = 1.0
    control_coef: float = 0.02
    control_endog_loading: float = 0.3
    entity_effect_sd: float = 1.0
    time_effect_sd: float = 0.5
    noise_sd_outcome: float = 0.03
    noise_sd_endog: float = 1.0
    rate_mean: float = 5.0
    rate_sd: float = 2.0
    seed: int = 20150101

    def __post_init__(self):
        if self.n_entities < 2 or self.n_periods < 2:
            raise ConfigError("the panel needs at least 2 entities and 2 periods")
        for name in ("entity_effect_sd", "time_effect_sd", "noise_sd_outcome", "noise_sd_endog", "rate_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown DGP keys: {sorted(extra)}")
        return cls(**d)

    def replace(self, **changes):
        return DgpConfig(**{**asdict(self), **changes})

    @staticmethod
    def spec(covariance="robust"):
        """The IV specification matching the simulated columns."""
        return ModelSpec("lco2", ("ctrl",), "ed", ("z",), covariance=covariance)


def _entity_names(n):
    if n == len(SAMPLE_ISO3):
        return SAMPLE_ISO3
    width = len(str(n))
    return tuple(f"E{i:0{width}d}" for i in range(1, n + 1))


def simulate_dgp(cfg, seed=None):
    """Draw one panel.

    ``seed`` overrides ``cfg.seed`` and may be an int or a
    :class:`numpy.random.SeedSequence`. The ``confounder`` column is
    returned for oracle checks and must not enter an estimation.
    """
    seed = cfg.seed if seed is None else seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(ss))
    N, T = cfg.n_entities, cfg.n_periods
    shape = (N, T)
    openness = rng.uniform(0.0, 1.0, N)
    rate = cfg.rate_mean + cfg.rate_sd * rng.standard_normal(T)
    z = np.outer(openness, rate)
    a_x = 50.0 + 20.0 * rng.standard_normal(N)
    a_y = cfg.entity_effect_sd * rng.standard_normal(N)
    g_x = cfg.time_effect_sd * rng.standard_normal(T)
    g_y = cfg.time_effect_sd * rng.standard_normal(T)
    conf = rng.standard_normal(shape)
    ctrl = rng.standard_normal(shape)
    v = cfg.noise_sd_endog * rng.standard_normal(shape)
    e = cfg.noise_sd_outcome * rng.standard_normal(shape)
    x = (a_x[:, None] + g_x[None, :] + cfg.pi_first_stage * z
         + cfg.confound_endog_loading * conf + cfg.control_endog_loading * ctrl + v)
    y = (a_y[:, None] + g_y[None, :] + cfg.beta_true * x + cfg.control_coef * ctrl
         + cfg.rho_confound * conf + e)
    periods = range(cfg.first_period, cfg.first_period + T)
    cols = {"lco2": y, "ed": x, "z": z, "ctrl": ctrl, "confounder": conf}
    meta = {
        "lco2": "simulated outcome",
        "ed": "simulated endogenous regressor",
        "z": "simulated exposure instrument (rate x openness)",
        "ctrl": "simulated exogenous control",
        "confounder": "NON-OBSERVABLE: oracle use only",
    }
    return PanelDataset(_entity_names(N), periods, cols, meta)


# ---------------------------------------------------------------- experiment


def _replicate(cfg, seedseq, level, cov_kind, grid):
    ds = simulate_dgp(cfg, seedseq)
    spec = DgpConfig.spec(cov_kind)
    cov = as_cov(cov_kind)
    d = prepare_design(spec, ds)
    fe = fe_ols(spec, ds, cov, design=d)
    iv, first = tsls_on_design(d, cov)
    b_fe, se_fe = fe.coefficients["ed"], fe.std_errors["ed"]
    b_iv, se_iv = iv.coefficients["ed"], iv.std_errors["ed"]
    w, q = wald_test(first, ["z"])
    F = w / q
    lm = lm_on_design(d, cov)
    problem = ARProblem(d, cov)
    ar0, ar_true = problem.pvalue([0.0, cfg.beta_true])
    ar_set = ar_set_from_problem(problem, level, grid, b_iv, se_iv)
    return {
        "fe_beta": b_fe, "fe_se": se_fe, "fe_p": fe.pvalues["ed"],
        "iv_beta": b_iv, "iv_se": se_iv, "iv_p": iv.pvalues["ed"],
        "first_stage_f": F, "first_stage_p": float(stats.f.sf(F, q, first.dof_residual)),
        "underid_lm": lm.statistic, "underid_p": lm.pvalue,
        "ar0_p": float(ar0), "ar_true_p": float(ar_true),
        "ar_covers": ar_set.contains(cfg.beta_true),
        "ar_unbounded": ar_set.is_unbounded,
        "ar_length": ar_set.length,
        "ar_kind": ar_set.kind,
    }


def _run_chunk(args):
    cfg, seeds, level, cov_kind, grid = args
    out = []
    for idx, ss in seeds:
        try:
            out.append((idx, _replicate(cfg, ss, level, cov_kind, grid), None))
        except PanelIVError as exc:
            out.append((idx, None, f"{type(exc).__name__}: {exc}"))
        except np.linalg.LinAlgError as exc:
            out.append((idx, None, f"LinAlgError: {exc}"))
    return out


def _summ(values, truth):
    v = np.asarray(values, dtype=float)
    n = v.size
    sd = float(v.std(ddof=1)) if n > 1 else 0.0
    return {
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "bias": float(v.mean() - truth),
        "median_bias": float(np.median(v) - truth),
        "rmse": float(np.sqrt(np.mean((v - truth) ** 2))),
        "sd": sd,
        "mc_se": sd / math.sqrt(n) if n > 1 else 0.0,
    }


@dataclass
class ExperimentReport:
    """Aggregates of one Monte Carlo experiment.

    Rejection rates are at the nominal 5% level. ``wall_clock_s`` is kept
    out of the serialised forms so that reports are reproducible byte for
    byte.
    """

    config: dict
    reps: int
    n_failed: int
    failures: list
    estimators: dict
    rates: dict
    ar: dict
    level: float
    covariance: str
    replications: list = field(default_factory=list, repr=False)
    wall_clock_s: float = 0.0

    def to_dict(self, include_timing=False, include_replications=False):
        out = {
            "config": self.config,
            "reps": self.reps,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "covariance": self.covariance,
            "level": self.level,
            "estimators": self.estimators,
            "rejection_rates_5pct": self.rates,
            "anderson_rubin": self.ar,
        }
        if include_replications:
            out["replications"] = self.replications
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(**kw), indent=2) + "\n"

    def to_text(self):
        cfg = self.config
        lines = [
            f"Monte Carlo experiment: {self.reps} replications "
            f"({self.n_failed} failed), {cfg['n_entities']} x {cfg['n_periods']} panel, seed {cfg['seed']}",
            f"true beta = {cfg['beta_true']}, first-stage pi = {cfg['pi_first_stage']}, "
            f"confounder loading = {cfg['rho_confound']}",
            "",
            f"{'estimator':<10}{'mean':>12}{'median':>12}{'bias':>12}{'rmse':>12}{'mc se':>12}",
        ]
        for name, s in self.estimators.items():
            lines.append(f"{name:<10}{s['mean']:>12.6f}{s['median']:>12.6f}{s['bias']:>12.6f}"
                         f"{s['rmse']:>12.6f}{s['mc_se']:>12.6f}")
        lines.append("")
        lines.append("rejection rates at 5%:")
        for k, v in self.rates.items():
            lines.append(f"  {k:<28}{v:>8.3f}")
        lines.append(f"AR {self.level:.0%} set: coverage {self.ar['coverage']:.3f}, "
                     f"unbounded share {self.ar['unbounded_share']:.3f}, "
                     f"mean bounded length {self.ar['mean_bounded_length']:.6g}")
        return "\n".join(lines) + "\n"


def aggregate(cfg, records, level=0.95, covariance="robust", failures=()):
    """Reduce per-replication records (``(index, dict)`` pairs) in index order."""
    records = [r for _, r in sorted(records, key=lambda p: p[0])]
    failures = list(failures)
    n_ok = len(records)
    if n_ok == 0:
        raise ExperimentError("every replication failed")
    col = lambda k: np.array([r[k] for r in records], dtype=float)
    truth = cfg.beta_true
    reject = lambda k: float(np.mean(col(k) < 0.05))
    bounded = col("ar_length")[~col("ar_unbounded").astype(bool)]
    bounded = bounded[np.isfinite(bounded)]
    return ExperimentReport(
        config=asdict(cfg),
        reps=n_ok + len(failures),
        n_failed=len(failures),
        failures=[f for _, f in sorted(failures)][:20],
        estimators={"FE-OLS": _summ(col("fe_beta"), truth), "FE-2SLS": _summ(col("iv_beta"), truth)},
        rates={
            "fe_t_beta0": reject("fe_p"),
            "iv_t_beta0": reject("iv_p"),
            "first_stage_f": reject("first_stage_p"),
            "first_stage_f_gt_10_share": float(np.mean(col("first_stage_f") > 10)),
            "underid_lm": reject("underid_p"),
            "ar_beta0": reject("ar0_p"),
            "ar_beta_true": reject("ar_true_p"),
        },
        ar={
            "coverage": float(np.mean(col("ar_covers"))),
            "unbounded_share": float(np.mean(col("ar_unbounded"))),
            "mean_bounded_length": float(bounded.mean()) if bounded.size else math.nan,
            "mean_first_stage_f": float(col("first_stage_f").mean()),
        },
        level=level,
        covariance=covariance,
        replications=records,
    )


def run_experiment(cfg, reps, level=0.95, covariance="robust", grid=None, workers=1,
                   failure_threshold=FAILURE_THRESHOLD):
    """Simulate and estimate ``reps`` times; aggregate into a report.

    Replications whose estimation raises are counted and listed. If more
    than ``failure_threshold`` of them fail, :class:`ExperimentError` is
    raised with the report attached.
    """
    if int(reps) != reps or reps < 1:
        raise ConfigError(f"reps must be a positive integer, got {reps}")
    reps = int(reps)
    grid = grid or GridPolicy()
    as_cov(covariance)
    start = time.perf_counter()
    children = list(enumerate(np.random.SeedSequence(cfg.seed).spawn(reps)))
    if workers > 1:
        size = math.ceil(reps / workers)
        chunks = [(cfg, children[i:i + size], level, covariance, grid) for i in range(0, reps, size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = [item for chunk in pool.map(_run_chunk, chunks) for item in chunk]
    else:
        results = _run_chunk((cfg, children, level, covariance, grid))
    ok = [(i, r) for i, r, err in results if err is None]
    failed = [(i, err) for i, _, err in results if err is not None]
    report = aggregate(cfg, ok, level, covariance, failed)
    report.wall_clock_s = time.perf_counter() - start
    if len(failed) / reps > failure_threshold:
        raise ExperimentError(
            f"{len(failed)} of {reps} replications failed (threshold {failure_threshold:.0%})", report
        )
    return report
