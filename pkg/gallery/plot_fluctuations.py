"""
Fluctuations around the homogenized path
========================================

Simulate the multiscale diffusion, subtract the homogenized trajectory and
compare the spread of the rescaled error with the Ornstein-Uhlenbeck limit.
"""

import numpy as np

from msexit import TorusGrid, effective_flow, homogenize, langevin_coefficients
from msexit import LimitProcessSpec, SimulationSpec, classify_regime, simulate_ensemble
from msexit import limit_fluctuation_moments
from msexit.fields import Polynomial, SeparableField, TrigPolynomial

####################################################################
# Homogenized model
# -----------------

Q = TrigPolynomial(0.0, (1.0,))
D = 0.5
coeffs = langevin_coefficients(lambda x: x, Q.derivative(), D)
model = homogenize(coeffs, np.linspace(0.0, 1.2, 13), TorusGrid(1.0, 256))
traj = effective_flow(model, 1.0, 1.0, 1e-3)

####################################################################
# Prelimit ensemble
# -----------------
# delta = eps**2 puts the noise in charge of the limit. The step size must
# resolve the fast ripple, so eps is kept moderate to stay cheap.

b = SeparableField.of_y(Q.derivative().scaled(-1.0))
c = SeparableField.of_x(Polynomial((0.0, -1.0)))
sigma = SeparableField.constant(np.sqrt(2.0 * D))
for eps in (0.1, 0.05):
    regime = classify_regime(eps, 2.0)
    dt = 0.01 * regime.delta**2 / eps
    spec = SimulationSpec.from_regime(b, c, sigma, regime, 1.0, dt, 1.0, seed=2026)
    eta = (simulate_ensemble(spec, 400).x_final - traj.states[-1]) / regime.beta
    _, var = limit_fluctuation_moments(LimitProcessSpec.from_model(model, regime, traj), 1.0)
    print(f"eps={eps}: sample variance {eta.var(ddof=1):.4f}, limit variance {var:.4f}")
