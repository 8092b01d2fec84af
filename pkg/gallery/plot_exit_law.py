"""
Exit time of a transported particle
===================================

Unit drift with small noise leaves [.., 1] near time one. The rescaled exit
time is close to a standard Gaussian.
"""

import math

import numpy as np
from scipy import stats

from msexit import ExitProblemSpec, SimulationSpec, ks_statistic, simulate_ensemble
from msexit.fields import SeparableField

####################################################################
# Simulation
# ----------

eps = 1e-3
spec = SimulationSpec(b=SeparableField.zero(), c=SeparableField.constant(1.0),
                      sigma=SeparableField.constant(1.0), epsilon=eps, delta=1.0, x0=0.0,
                      dt=1e-5, horizon=3.0, seed=2026)
res = simulate_ensemble(spec, 2000, ExitProblemSpec(upper=1.0))
z = (res.tau - 1.0) / math.sqrt(eps)

####################################################################
# Comparison with the Gaussian limit
# ----------------------------------

print(f"mean {z.mean():+.4f}, variance {z.var(ddof=1):.4f}")
print(f"KS {ks_statistic(z, stats.norm.cdf):.4f} vs 1% band {1.63 / np.sqrt(z.size):.4f}")
