"""Linear-covariance (CRLB) evaluation of a planned trajectory.

Plans testcase1 at two homotopy weights and compares the expected
position-RMS histories of a sequential estimator along both trajectories:
weighting information more heavily buys estimability with propellant.
Takes a few minutes.
"""

import numpy as np

from infoplan import crlb_run, load_scenario, solve, total_impulse
from infoplan.evaluation import terminal_rms

scenario = load_scenario("testcase1")

for alpha in (5e-3, 2e-2):
    report = solve(scenario, alpha_h=alpha)
    history = crlb_run(report.iterate, scenario)
    rms = terminal_rms(history, scenario)
    impulse = total_impulse(report.iterate, scenario.params) * 1e3
    print(f"\nalpha_h = {alpha}: impulse = {impulse:.3f} m/s, "
          f"terminal RMS observer = {rms[0]:.3f} km, target = {rms[1]:.3f} km")

    print("  t [days]  meas  rms_obs [km]  rms_tgt [km]")
    days = scenario.params.tu_to_s(history.epochs) / 86400.0
    step = max(len(days) // 18, 1)
    shown = set(range(0, len(days), step)) | {len(days) - 1}
    shown |= set(np.flatnonzero(history.is_measurement)[::4])
    for k in sorted(shown):
        flag = "*" if history.is_measurement[k] else " "
        print(f"  {days[k]:8.2f}   {flag}   {history.rms_position_km[k, 0]:11.3f}"
              f"  {history.rms_position_km[k, 1]:11.3f}")
