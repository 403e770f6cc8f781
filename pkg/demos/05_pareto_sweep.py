"""The impulse / estimability Pareto front of testcase1.

Sweeps the homotopy weight and tabulates total impulse against the
terminal position RMS of observer and target: raising the information
weight spends propellant to buy estimability, tracing the design space of
optimal observer trajectories. Takes a few minutes.
"""

from infoplan import load_scenario, pareto_sweep

scenario = load_scenario("testcase1")
alphas = [0.0, 5e-3, 1e-2, 2e-2]

points = pareto_sweep(scenario, alphas)

print("alpha_h   impulse [m/s]  avg [m/s/day]  rms_obs [km]  rms_tgt [km]  "
      "MI [nats]  converged")
for p in points:
    print(f"{p.alpha_h:7.4f}  {p.total_impulse_km_s * 1e3:12.4f}  "
          f"{p.avg_impulse_km_s_per_day * 1e3:12.5f}  {p.terminal_rms_km[0]:11.3f}  "
          f"{p.terminal_rms_km[1]:11.3f}  {p.mutual_information:9.3f}  "
          f"{p.converged}")
