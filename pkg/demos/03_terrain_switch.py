"""Watching the planner notice that the ground changed.

The robot tracks a circular lane on tile; two seconds in, the surface becomes
grass. The planner re-estimates its terrain mixture every tick from the last
few velocity measurements, and we print the weights around the switch.

Run:  python3 demos/03_terrain_switch.py
"""

from gpmppi.harness.config import load_config
from gpmppi.harness.experiments import run_tracking_experiment, tracking_scenario

cfg = load_config("configs/quick.toml").with_section("tracking", max_time=4.0)
scenario = tracking_scenario(cfg, "circle", ((0.0, 0), (2.0, 2)))
trace = []
metrics = run_tracking_experiment(cfg, scenario, seed=0, planner="gp", trace=trace)

print(f"{'tick':>4s} {'t[s]':>5s} {'ground':>6s}   w_tile  w_asph  w_grass")
for rec in trace:
    if 34 <= rec.tick <= 60 and rec.tick % 2 == 0:
        w = rec.weights
        print(f"{rec.tick:4d} {rec.t:5.2f} {cfg.terrains[rec.terrain].name:>6s}   "
              f"{w[0]:.3f}   {w[1]:.3f}   {w[2]:.3f}")
first = next((r.tick for r in trace if r.tick >= 40 and r.weights[2] > 0.5), None)
print(f"\ngrass weight first exceeds 0.5 at tick {first} (switch at tick 40); run RMSE "
      f"{1e3 * metrics.rmse:.1f} mm")
