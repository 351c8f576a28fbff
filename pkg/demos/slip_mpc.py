"""Closed-loop hopping with a learned hybrid model.

The per-mode operators are fitted on NCD labels of a 60 s oracle log; the
MPC then sees only the learned model (indicator included) while the true
simulator is the plant.  Target: 0.4 m/s forward speed at 1.6 m height.

Writes a long-format CSV (time, channel, value) for plotting.
"""
import sys
from pathlib import Path

import numpy as np

from hybrid_ncd import slip
from hybrid_ncd.cli import write_long_csv
from hybrid_ncd.mpc import MpcConfig, run_closed_loop
from hybrid_ncd.pipeline import TrainingSpec, generate_training_data, learn_slip_model

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("runs/demo_mpc")
params = slip.SlipParams()

train = generate_training_data(TrainingSpec(duration=60.0), params)
res, model = learn_slip_model(train)
print(f"learned {len(model.models)} mode models from {len(train.states)} samples")

cfg = MpcConfig()
result = run_closed_loop(model, slip.state(z_m=2.0), 30.0, cfg, params)
m = result.metrics
print(f"crashed: {m['crashed']}")
print(f"mean forward velocity: {m['mean_forward_velocity']:.3f} m/s (target {cfg.x_target[1]})")
print(f"mean height: {m['mean_height']:.3f} m, stance fraction {m['stance_fraction']:.2f}")
print(f"{m['mpc_calls']} MPC calls in {m['wall_seconds']:.1f} s")

sim = result.sim
zd = sim.states[:, slip.ZD]
apex = np.flatnonzero((zd[:-1] > 0) & (zd[1:] <= 0)) + 1
print("apex heights (last 10):", np.round(sim.states[apex[-10:], slip.ZM], 2))

out.mkdir(parents=True, exist_ok=True)
u = sim.padded_controls()
channels = {name: sim.states[:, i] for i, name in enumerate(slip.STATE_NAMES)}
channels |= {name: u[:, i] for i, name in enumerate(slip.CONTROL_NAMES)}
channels["indicator_mode"] = model.indicator.classify_many(sim.states)
write_long_csv(out / "plot.csv", sim.times, channels)
result.write_metrics(out / "metrics.json")
print(f"wrote {out / 'plot.csv'}")
