"""Walk through the simulation world: buildings, LoS shadows, and how the
angle-dependent fading channel decides who is covered."""

import numpy as np

from abscov import (ChannelParams, evaluate_coverage, generate_environment,
                    is_los, outage_prob, pathloss_db, rician_k)
from abscov.env import random_gu_positions

env = generate_environment(seed=1, d=1000.0, dw=31.25, n_buildings=200)
print(f"{env.n_buildings} buildings on a {env.area_side:.0f} m square, "
      f"heights {min(b.height for b in env.buildings):.0f}-"
      f"{max(b.height for b in env.buildings):.0f} m")
print(f"fleet altitude {env.abs_altitude:.0f} m, handset height "
      f"{env.gu_height:.0f} m")

# a link is LoS only if no building volume cuts the 3D segment
abs_pos = np.array([500.0, 500.0])
rng = np.random.default_rng(0)
gus = random_gu_positions(env, 2000, rng)
los = np.array([is_los(env, abs_pos, g) for g in gus[:200]])
print(f"\nLoS fraction from the map center (200 probes): {los.mean():.2f}")

# path loss splits by LoS state; NLoS decays much faster
for d3d in (50.0, 100.0, 300.0, 800.0):
    print(f"d={d3d:5.0f} m: LoS {pathloss_db(d3d, True):6.1f} dB   "
          f"NLoS {pathloss_db(d3d, False):6.1f} dB")

# steeper links are more strongly line-of-sight: K rises exponentially
for deg in (0, 30, 60, 90):
    k = rician_k(np.deg2rad(deg))
    print(f"elevation {deg:2d} deg: K = {k:8.1f}  "
          f"(outage at threshold==mean: {outage_prob(1.0, k, 1.0):.3f})")

# put five base stations down and measure one coverage snapshot
params = ChannelParams.from_db(n_abs=5)
placement = np.array([[200.0, 200.0], [800.0, 200.0], [500.0, 500.0],
                      [200.0, 800.0], [800.0, 800.0]])
report = evaluate_coverage(env, placement, gus[:100], params)
print(f"\nnaive symmetric placement covers {report.rate:.0%} of 100 users")
print(f"cluster sizes: {report.association.cluster_sizes.tolist()} "
      f"(cap {report.association.max_size})")
