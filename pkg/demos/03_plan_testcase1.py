"""Planning the first bundled scenario end to end.

Solves testcase1 (observer and one target on adjacent distant retrograde
orbits, relative-position measurements once per day in a coasting window
of [3/4, 3/2] reference periods) at a homotopy weight of 5e-3, then prints
the convergence history and the thrust profile. Takes about a minute.
"""

import logging

import numpy as np

from infoplan import load_scenario, solve, total_impulse

logging.basicConfig(level=logging.INFO, format="%(message)s")

scenario = load_scenario("testcase1")
print(f"P_ref = {scenario.p_ref:.6f} TU = "
      f"{scenario.params.tu_s * scenario.p_ref / 86400:.3f} days; "
      f"duration = 2 P_ref; window = [0.75, 1.5] P_ref; "
      f"{scenario.n_nodes} base nodes\n")

report = solve(scenario, alpha_h=5e-3)

print(f"\nconverged: {report.converged} after {report.iterations} iterations")
print(f"mutual information: {report.mutual_information:.4f} nats")
print(f"total impulse: {total_impulse(report.iterate, scenario.params) * 1e3:.4f} m/s")
print(f"largest defect: {report.max_defect:.2e} DU")

iterate = report.iterate
accel = scenario.params.au_to_kmps2(np.linalg.norm(iterate.controls, axis=1))
days = scenario.params.tu_to_s(iterate.grid.nodes) / 86400.0
threshold = 1e-3 * 1e-6  # 0.1% of the thrust authority
print(f"\nthrust profile (nodes with |u| above {threshold:.0e} km/s^2):")
print("  t [days]   |u| [km/s^2]")
for t, a in zip(days, accel):
    if a > threshold:
        print(f"  {t:8.3f}   {a:.3e}")
window_days = (days[report.zero_thrust][0], days[report.zero_thrust][-1])
print(f"\nzero-thrust observation window: {window_days[0]:.2f} to "
      f"{window_days[1]:.2f} days "
      f"(max |u| inside: {np.max(np.abs(iterate.controls[report.zero_thrust])):.1e})")
