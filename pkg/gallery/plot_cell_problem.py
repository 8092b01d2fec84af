"""
Cell problem for a cosine ripple
================================

Homogenize a gradient system with a cosine ripple and compare the averaged
drift with the closed form built from the two Gibbs constants.
"""

import numpy as np

from msexit import TorusGrid, averaged_coefficients, invariant_measure, langevin_coefficients
from msexit import solve_cell_problem
from msexit.fields import TrigPolynomial

####################################################################
# Fast dynamics on the torus
# --------------------------
# The ripple is Q(y) = cos(2 pi y) with temperature D = 1/2 and a quadratic
# well in the slow variable.

Q = TrigPolynomial(0.0, (1.0,))
D = 0.5
coeffs = langevin_coefficients(lambda x: x, Q.derivative(), D)
grid = TorusGrid(1.0, 512)

mu = invariant_measure(coeffs, 1, 0.0, grid)
K = np.mean(np.exp(-Q(grid.nodes) / D))
K_hat = np.mean(np.exp(Q(grid.nodes) / D))
print("density error vs Gibbs:", np.max(np.abs(mu.values - np.exp(-Q(grid.nodes) / D) / K)))

####################################################################
# Corrector
# ---------
# The corrector derivative is explicit for gradient dynamics.

chi = solve_cell_problem(coeffs, 0.0, mu)
print("1 + chi' vs exp(Q/D)/K_hat:",
      np.max(np.abs(1.0 + chi.derivative.values - np.exp(Q(grid.nodes) / D) / K_hat)))
print("cell residual:", chi.residual)

####################################################################
# Averaged coefficients
# ---------------------
# The effective drift is the bare drift slowed by 1/(K K_hat).

for x in (-1.0, 0.5, 2.0):
    avg = averaged_coefficients(coeffs, 1, x, grid)
    print(f"x={x:+.1f}  lambda_bar={avg.lambda_bar:+.6f}  closed form={-x / (K * K_hat):+.6f}"
          f"  q_bar={avg.q_bar:.6f}")
