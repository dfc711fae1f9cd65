"""Collect training samples with the constrained flight strategies, inspect
the grid-pattern records, and (if a trained weight file is around) compare
emulator predictions against the exact oracle."""

import sys

import numpy as np

from abscov import ChannelParams, generate_environment
from abscov.datagen import collect
from abscov.gridmap import sequence_to_counts
from abscov.mission import MissionSetup, TimeConfig

env = generate_environment(seed=1, d=1000.0, dw=31.25, n_buildings=200)
params = ChannelParams.from_db(n_abs=5)
cfg = TimeConfig(trial_s=20.0)
setup = MissionSetup(env, params, cfg, k=32, n_abs=5, n_gu=100, v_gu=2.0)

samples = []
count = collect(setup, "mixed", 2, seed=0, sink=samples.append)
print(f"collected {count} samples "
      f"({cfg.n_steps} per trial: one per half-second step)")
s = samples[25]
covered_cells = int(s.cgu_mask.sum())
occupied = int((s.gu_counts > 0).sum())
print(f"sample 25: {s.abs_counts.sum()} base stations over "
      f"{s.gu_counts.sum()} users in {occupied} cells; "
      f"{covered_cells} cells fully covered")

if len(sys.argv) > 1:
    from abscov.predictor import (EmulatorPredictor, ExactOracle, load_model,
                                  threshold)

    model = load_model(sys.argv[1])
    print(f"\nloaded emulator (K={model.k}); scoring one random placement")
    rng = np.random.default_rng(5)
    from abscov.env import random_gu_positions

    gu = random_gu_positions(env, 100, rng)
    oracle = ExactOracle(env, gu, params, model.k, setup.max_size)
    seq = tuple(sorted(rng.choice(model.k ** 2, 5, replace=False) + 1))
    emu = EmulatorPredictor(model, oracle.gu_counts)
    probs = emu.predict(sequence_to_counts(seq, model.k))
    predicted = threshold(probs, oracle.gu_counts, m=100).predicted_cr
    print(f"emulator predicted CR {predicted:.2f} vs "
          f"oracle {oracle.score_sequence(seq):.2f}")
else:
    print("\npass a weight file to compare emulator vs oracle predictions")
