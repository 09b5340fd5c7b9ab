"""Learning what the nominal model gets wrong on each terrain.

A robot that slips does not reach the velocities it is commanded. The nominal
first-order lag model ignores this, so we fit a GP ensemble to the residual
(measured minus nominal next-step velocity) on three synthetic terrains and
look at how much of the error it explains on fresh driving data.

Run:  python3 demos/01_residual_learning.py
"""

import numpy as np

from gpmppi.dynamics import DEFAULT_TERRAINS, NominalParams, generate_training_data, true_velocity_update
from gpmppi.gp import per_terrain_predictions
from gpmppi.harness.config import ExperimentConfig
from gpmppi.harness.experiments import train_models

cfg = ExperimentConfig()
nominal = NominalParams()
print("Fitting a shared-kernel GP ensemble (300 points, 3 terrains x 2 outputs)...")
gp = train_models(cfg).gp
print(f"  {gp.n_outputs} outputs, {len(gp.groups)} kernel group(s)\n")

rng = np.random.default_rng(99)
print(f"{'terrain':8s} {'nominal RMS err':>16s} {'GP RMS err':>12s}   (velocity, m/s)")
for i, profile in enumerate(DEFAULT_TERRAINS):
    held_out = generate_training_data(profile, nominal, 200, rng)
    # noise-free truth at the same inputs, so measurement noise does not blur the picture
    states = np.zeros((len(held_out), 5))
    states[:, 3:] = held_out.inputs[:, :2]
    v_true, _ = true_velocity_update(states, held_out.inputs[:, 2:], profile, nominal.dt)
    v_nom = held_out.inputs[:, 0] + nominal.kv * (held_out.inputs[:, 2] - held_out.inputs[:, 0])
    gp_dv = np.array([per_terrain_predictions(gp, q)[0][i, 0] for q in held_out.inputs])
    nom_err = np.sqrt(np.mean((v_true - v_nom) ** 2))
    gp_err = np.sqrt(np.mean((v_true - v_nom - gp_dv) ** 2))
    print(f"{profile.name:8s} {nom_err:16.4f} {gp_err:12.4f}")

print("\nThe residual model removes most of the one-step velocity error,")
print("most visibly on grass where slip is strongest.")
