"""Propagating a distant retrograde orbit and placing Sundman time nodes.

Walks through the basic dynamics layer: the periodic reference orbit of
the bundled test case, conservation of the Jacobi integral along a coast,
the state transition matrix, and how the Sundman transformation crowds
grid nodes toward perilune. Runs in a few seconds.
"""

import numpy as np

from infoplan import (
    SystemParameters,
    jacobi_constant,
    propagate,
    propagate_with_stm,
    reference_period,
    sundman_nodes,
)

params = SystemParameters()
print(f"Earth-Moon system: mu={params.mu}, DU={params.du_km} km, "
      f"TU={params.tu_s} s ({params.tu_s / 86400:.4f} days)")

# The observer's reference orbit (testcase1), with the differentially
# corrected initial vy; see docs/scenario_format.md.
x0 = np.array([7.78185828e-1, 0.0, 0.0, 0.0, 5.559319044511409e-1, 0.0])

period = reference_period(x0, params)
print(f"\nreference period P = {period:.9f} TU = "
      f"{params.tu_s * period / 86400:.4f} days")

closure = np.linalg.norm(propagate(x0, 0.0, period, params) - x0)
print(f"orbit closure after one period: {closure:.3e} DU "
      f"({float(params.du_to_km(closure)) * 1e6:.3f} mm)")

c0 = jacobi_constant(x0, params)
cP = jacobi_constant(propagate(x0, 0.0, period, params), params)
print(f"Jacobi integral drift over one period: {abs(cP - c0):.3e}")

# State transition matrix over a quarter period: how initial deviations
# are stretched along the orbit.
_, stm = propagate_with_stm(x0, 0.0, period / 4, params)
svals = np.linalg.svd(stm.first_order, compute_uv=False)
print(f"\nSTM over P/4: largest stretch {svals[0]:.2f}, "
      f"smallest {svals[-1]:.3f}")

# Sundman-regularized nodes: with sigma = 1 the grid concentrates where
# the trajectory is closest to the Moon (the fast, nonlinear part).
for sigma in (0.0, 1.0):
    grid = sundman_nodes(x0, 0.0, period, sigma, 40, params)
    dts = grid.intervals
    print(f"\nsigma = {sigma}: min dt = {dts.min():.5f} TU, "
          f"max dt = {dts.max():.5f} TU, ratio = {dts.max() / dts.min():.2f}")
    moon = np.array([1.0 - params.mu, 0.0, 0.0])
    state = x0
    t_prev = 0.0
    r_m = []
    for t in grid.nodes:
        state = propagate(state, t_prev, t, params)
        r_m.append(np.linalg.norm(state[:3] - moon))
        t_prev = t
    r_m = np.array(r_m)
    k = int(np.argmin(dts))
    print(f"  shortest interval starts at node {k} where the lunar distance "
          f"is {r_m[k]:.4f} DU (orbit minimum {r_m.min():.4f} DU)")
