"""Emulator training-sample collection.

Each collection trial flies the fleet toward per-period destinations drawn by
a constrained random or constrained K-means strategy, measuring true coverage
every step. One sample per step: the ABS pattern, the GU pattern, and the
binary mask of the covered-GU pattern, all K-by-K counts. The JSON-Lines file
plus its manifest is the contract consumed by the emulator trainer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import gridmap
from .channel import evaluate_coverage
from .env import GuState, abs_position_valid, random_gu_positions, step_gus
from .mission import MissionSetup, _Fleet
from .routing import FlyGrid
from .search import MoveConstraints, ckmeans_init, initial_placement

RANDOM_DEST_TRIES = 64

STRATEGIES = ("cRandom", "cKMeans", "mixed")


@dataclass(frozen=True)
class Sample:
    abs_counts: np.ndarray
    gu_counts: np.ndarray
    cgu_mask: np.ndarray

    def to_json(self) -> str:
        return json.dumps({
            "abs": self.abs_counts.tolist(),
            "gu": self.gu_counts.tolist(),
            "mask": self.cgu_mask.tolist(),
        })


def _random_destination(env, k, positions, max_disp, min_sep, rng):
    """Per-ABS uniform draw over reachable valid cells; stay on exhaustion."""
    d = env.area_side
    cell = d / k
    reach = int(math.floor(max_disp / cell))
    targets = positions.copy()
    taken: set[int] = set()
    min_sep2 = min_sep ** 2
    for slot, pos in enumerate(positions):
        i0 = min(k - 1, max(0, int(pos[1] // cell)))
        j0 = min(k - 1, max(0, int(pos[0] // cell)))
        for _ in range(RANDOM_DEST_TRIES):
            i1 = i0 + int(rng.integers(-reach, reach + 1))
            j1 = j0 + int(rng.integers(-reach, reach + 1))
            if not (0 <= i1 < k and 0 <= j1 < k):
                continue
            flat = i1 * k + j1
            if flat in taken:
                continue
            ctr = np.array([(j1 + 0.5) * cell, (i1 + 0.5) * cell])
            if ((ctr - pos) ** 2).sum() > max_disp ** 2:
                continue
            if not abs_position_valid(env, ctr):
                continue
            others = np.delete(targets, slot, axis=0)
            if (((others - ctr) ** 2).sum(axis=1) < min_sep2).any():
                continue
            targets[slot] = ctr
            taken.add(flat)
            break
    return targets


def collect(setup: MissionSetup, strategy: str, n_trials: int, seed, sink,
            step_hook=None) -> int:
    """Run collection trials and feed one Sample per step to `sink`.

    `mixed` alternates cRandom and cKMeans trials. Deterministic in
    (environment, strategy, seed). `step_hook(trial, positions)` observes the
    initial fleet placement and every per-step position.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    env, params, cfg = setup.env, setup.params, setup.time
    grid = FlyGrid(env, setup.k)
    count = 0
    trial_seeds = np.random.SeedSequence(seed).spawn(max(n_trials, 1))
    for t in range(n_trials):
        rng_init, rng_gu, rng_dest = [np.random.default_rng(s)
                                      for s in trial_seeds[t].spawn(3)]
        gu = GuState(random_gu_positions(env, setup.n_gu, rng_init), setup.v_gu)
        abs0 = initial_placement(env, gu.positions, setup.n_abs, setup.k,
                                 setup.min_sep, rng_init)
        fleet = _Fleet(grid, abs0, setup.v_abs_max, cfg.step_s, setup.min_sep)
        if step_hook is not None:
            step_hook(t, fleet.positions.copy())
        mode = strategy
        if strategy == "mixed":
            mode = "cRandom" if t % 2 == 0 else "cKMeans"
        for _ in range(cfg.n_periods):
            constraints = MoveConstraints(env, fleet.positions.copy(),
                                          setup.v_abs_max * cfg.period_s,
                                          setup.min_sep)
            if mode == "cRandom":
                dest = _random_destination(env, setup.k, fleet.positions,
                                           constraints.max_disp,
                                           setup.min_sep, rng_dest)
            else:
                dest = ckmeans_init(fleet.positions, gu.positions, constraints,
                                    setup.k, rng_dest)
            fleet.set_targets(dest)
            for _ in range(cfg.steps_per_period):
                gu = step_gus(env, gu, cfg.step_s, rng_gu)
                pos = fleet.step()
                if step_hook is not None:
                    step_hook(t, pos.copy())
                report = evaluate_coverage(env, pos, gu.positions, params,
                                           setup.max_size)
                abs_counts = gridmap.quantize(pos, setup.k, env.area_side,
                                              gridmap.ROLE_ABS).counts
                gu_counts = gridmap.quantize(gu.positions, setup.k,
                                             env.area_side,
                                             gridmap.ROLE_GU).counts
                cgu = gridmap.quantize_weighted(gu.positions,
                                                report.indicators.astype(int),
                                                setup.k, env.area_side).counts
                sink(Sample(abs_counts, gu_counts, gridmap.binary_mask(cgu)))
                count += 1
    return count


def write_manifest(path, setup: MissionSetup, strategy, seed, count,
                   shards=None) -> None:
    """Dataset sidecar; `shards` lists {"n", "m", "count"} entries when the
    file concatenates collections with different fleet/user counts."""
    doc = {
        "k": setup.k,
        "n": setup.n_abs,
        "m": setup.n_gu,
        "env": setup.env.digest(),
        "strategy": strategy,
        "seed": seed,
        "count": count,
    }
    if shards:
        doc["shards"] = list(shards)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_samples(path):
    """Yield (abs, gu, mask) integer arrays from a JSON-Lines dataset."""
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            yield (np.asarray(doc["abs"], dtype=np.int64),
                   np.asarray(doc["gu"], dtype=np.int64),
                   np.asarray(doc["mask"], dtype=np.int64))


def split(n_samples: int, val_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint exhaustive (train, validation) index split; floor-sized val."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(n_samples)
    n_val = int(math.floor(n_samples * val_fraction))
    return np.sort(order[n_val:]), np.sort(order[:n_val])
