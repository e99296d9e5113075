"""
Inverting the Anderson-Rubin test
=================================

The AR confidence set collects every slope that the AR test does not
reject. It stays valid when the instrument is weak, at the price of
possibly unbounded sets.
"""

import numpy as np

from paneliv import DgpConfig, GridPolicy, ar_confidence_set, ar_test, simulate_dgp
from paneliv.diagnostics import ARProblem
from paneliv.regression import prepare_design, tsls_fit

spec = DgpConfig.spec()
ds = simulate_dgp(DgpConfig(seed=1))
iv, _ = tsls_fit(spec, ds)
b, se = iv.coefficients["ed"], iv.std_errors["ed"]

# at the just-identified estimate the statistic is exactly zero
print(ar_test(spec, ds, b).statistic)

cs = ar_confidence_set(spec, ds, level=0.95)
print(cs.kind, cs.describe(4))
print("Wald interval", (round(b - 1.96 * se, 4), round(b + 1.96 * se, 4)))

###############################################################################
# The statistic is cheap to evaluate on many candidate slopes at once,
# which is what the grid search uses.

problem = ARProblem(prepare_design(spec, ds), "robust")
grid = b + np.linspace(-5, 5, 11) * se
for beta, p in zip(grid, problem.pvalue(grid)):
    print(f"{beta: .5f}  p = {p:.4f}")

###############################################################################
# With no first stage the set is unbounded; a coarser grid is enough to
# see it.

weak = simulate_dgp(DgpConfig(pi_first_stage=0.0, seed=7))
cs = ar_confidence_set(spec, weak, grid=GridPolicy(steps=401))
print(cs.kind, cs.describe(), cs.notes)
