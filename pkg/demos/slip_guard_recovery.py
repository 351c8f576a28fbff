"""Learn the hopper's stance/flight guard from data alone.

An oracle hopping controller with exploration noise generates 30 s of
training data.  NCD segments it into modes without being told how many
there are, and the resulting SVM indicator is then checked on a fresh run
against the analytic guard (leg length >= rest length means flight).
"""
import sys
import time

import numpy as np

from hybrid_ncd import slip
from hybrid_ncd.pipeline import TrainingSpec, align_modes, generate_training_data, learn_slip_model

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
params = slip.SlipParams()

train = generate_training_data(TrainingSpec(duration=30.0, seed=seed), params)
print(f"training log: {len(train.states)} samples, stance fraction {np.mean(train.modes == slip.STANCE):.2f}")

t0 = time.perf_counter()
res, model = learn_slip_model(train)
print(f"NCD found B={res.diagnostics['num_modes']} modes in {time.perf_counter() - t0:.1f} s")
print(f"  windows per mode {res.diagnostics['windows_per_mode']}, noise fraction {res.diagnostics['window_noise_fraction']:.3f}")

mapped, mapping = align_modes(res.labeling.labels, train.modes)
print(f"  training labels vs true mode: {np.mean(mapped == train.modes):.4%}")
print(f"  class mapping: {{{', '.join(f'{k}: {slip.MODE_NAMES[v]}' for k, v in mapping.items())}}}")

held = slip.simulate(slip.state(z_m=2.0), slip.RaibertController(params, seed=seed + 10), 30.0, params, control_period=10)
pred = np.array([mapping.get(int(c), -1) for c in res.indicator.classify_many(held.states)])
print(f"held-out 30 s run: indicator agrees with the analytic guard on {np.mean(pred == held.modes):.4%} of samples")
