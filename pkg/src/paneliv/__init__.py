"""Panel fixed-effects and IV estimation with weak-instrument diagnostics.

Covers two-way fixed-effects OLS and 2SLS with robust inference, first-stage
F / under-identification LM / Anderson-Rubin diagnostics, construction of a
distance-weighted exposure instrument, and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from .diagnostics import (
    ARConfidenceSet,
    DiagnosticsBundle,
    GridPolicy,
    ar_confidence_set,
    ar_test,
    diagnose,
    first_stage_f,
    underid_lm,
)
from .instrument import (
    DistanceMatrix,
    GlobalRateSeries,
    InstrumentSeries,
    build_instrument,
    inverse_distance_weights,
    neighbor_weighted_openness,
    time_average,
)
from .panel import (
    PanelDataset,
    SampleFilter,
    Transform,
    apply_transform,
    build_time_dummies,
    load_panel_csv,
    within_demean,
    write_panel_csv,
)
from .regression import (
    CovarianceSettings,
    EstimationResult,
    ModelSpec,
    cluster_vcov,
    fe_ols,
    ols_fit,
    tsls_fit,
)
from .reporting import TableLayout, format_table
from .simulation import DgpConfig, ExperimentReport, run_experiment, simulate_dgp
