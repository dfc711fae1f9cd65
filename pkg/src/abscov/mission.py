"""Trial/period/step mission executor.

Each period runs one planning-exploration-serving cycle: a planner turns the
GU snapshot reported before the period start into ranked candidate
placements, the exploration phase flies the fleet through the top candidates
and measures each on arrival, and the serving phase holds the best measured
placement until the period ends. Coverage is measured every step, transit
included.
"""

from __future__ import annotations

import json
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import gridmap
from .channel import ChannelParams, evaluate_coverage, max_cluster_size
from .env import Environment, GuState, random_gu_positions, step_gus
from .predictor import ExactOracle
from .routing import FlyGrid, RouteFollower
from .search import (Candidate, MoveConstraints, PlanResult, SearchBudget,
                     ckmeans_init, ges, ges_cell_radius, initial_placement,
                     map_elites, nm_search)

SEP_TOL = 1e-9


@dataclass(frozen=True)
class TimeConfig:
    trial_s: float = 200.0
    period_s: float = 10.0
    explore_s: float = 5.0
    serve_s: float = 5.0
    plan_s: float = 3.0
    step_s: float = 0.5

    def __post_init__(self):
        def exact_div(a, b):
            q = a / b
            return abs(q - round(q)) < 1e-9 and round(q) > 0

        if abs(self.explore_s + self.serve_s - self.period_s) > 1e-9:
            raise ValueError("explore_s + serve_s must equal period_s")
        if self.plan_s > self.period_s + 1e-9:
            raise ValueError("plan_s must not exceed period_s")
        for a, b, what in ((self.trial_s, self.period_s, "trial/period"),
                           (self.period_s, self.step_s, "period/step"),
                           (self.trial_s, self.step_s, "trial/step")):
            if not exact_div(a, b):
                raise ValueError(f"{what} must divide exactly")
        for a, what in ((self.explore_s, "explore_s"), (self.serve_s, "serve_s"),
                        (self.plan_s, "plan_s")):
            q = a / self.step_s
            if abs(q - round(q)) > 1e-9:
                raise ValueError(f"{what} must be a whole number of steps")

    @property
    def n_steps(self) -> int:
        return int(round(self.trial_s / self.step_s))

    @property
    def n_periods(self) -> int:
        return int(round(self.trial_s / self.period_s))

    @property
    def steps_per_period(self) -> int:
        return int(round(self.period_s / self.step_s))

    @property
    def explore_steps(self) -> int:
        return int(round(self.explore_s / self.step_s))

    @property
    def plan_lag_steps(self) -> int:
        return int(round(self.plan_s / self.step_s))


def move_step(current, targets, vmax, dt):
    """One step of coordinated flight toward per-ABS targets.

    ABSs within reach arrive exactly (slowing down as needed); the rest
    advance vmax*dt along the straight line. Hover once at the target.
    """
    cur = np.atleast_2d(np.asarray(current, dtype=float))
    tgt = np.atleast_2d(np.asarray(targets, dtype=float))
    delta = tgt - cur
    dist = np.sqrt((delta ** 2).sum(axis=1))
    d0 = vmax * dt
    out = tgt.copy()
    far = dist > d0
    if far.any():
        scale = (d0 / dist[far])[:, None]
        out[far] = cur[far] + delta[far] * scale
    return out


@dataclass
class MeasuredCandidate:
    visit_order: int
    step_index: int          # global step at which the fleet sat on the candidate
    seq: tuple
    actual_cr: float


@dataclass
class PeriodRecord:
    index: int
    base_seq: tuple | None
    plan_time_s: float
    ranked: list
    measured: list
    served_seq: tuple | None
    planner_failed: bool = False


@dataclass
class TrialResult:
    step_cr: np.ndarray          # (I,)
    acr: float
    abs_traj: np.ndarray         # (I, N, 2), position after each step
    gu_traj: np.ndarray          # (I, M, 2)
    plan_times_s: np.ndarray     # (E,)
    initial_abs: np.ndarray
    initial_gu: np.ndarray
    periods: list

    def to_json(self, include_traj=False) -> str:
        doc = {
            "acr": self.acr,
            "step_cr": [round(float(v), 6) for v in self.step_cr],
            "plan_times_s": [round(float(v), 6) for v in self.plan_times_s],
        }
        if include_traj:
            doc["abs_traj"] = np.round(self.abs_traj, 3).tolist()
            doc["gu_traj"] = np.round(self.gu_traj, 3).tolist()
        return json.dumps(doc)

    def step_cr_csv(self) -> str:
        lines = ["step,cr"]
        lines += [f"{i + 1},{v:.6f}" for i, v in enumerate(self.step_cr)]
        return "\n".join(lines) + "\n"


@dataclass
class MissionSetup:
    env: Environment
    params: ChannelParams
    time: TimeConfig
    k: int
    n_abs: int
    n_gu: int
    v_gu: float = 2.0
    v_abs_max: float = 30.0
    min_sep: float = 10.0
    epsilon: float = 0.2

    @property
    def max_size(self) -> int:
        return max_cluster_size(self.n_gu, self.n_abs, self.epsilon)


def oracle_factory(setup: MissionSetup):
    """Predictor factory for planning against the exact environment."""

    def make(env, params, gu_positions, k):
        return ExactOracle(env, gu_positions, params, k, setup.max_size)

    return make


class NmPlanner:
    """Single-generation mutation search; visits its top-k candidates."""

    name = "nm"

    def __init__(self, k, budget: SearchBudget, predictor_factory):
        self.k = k
        self.budget = budget
        self.predictor_factory = predictor_factory

    def _base(self, env, gu_snapshot, constraints, rng):
        base_pos = ckmeans_init(constraints.prev_positions, gu_snapshot,
                                constraints, self.k, rng)
        return tuple(int(c) for c in
                     gridmap.to_sequence(base_pos, self.k, env.area_side))

    def plan(self, env, params, gu_snapshot, constraints, rng) -> PlanResult:
        base = self._base(env, gu_snapshot, constraints, rng)
        predictor = self.predictor_factory(env, params, gu_snapshot, self.k)
        result = nm_search(base, self.budget, constraints, predictor, self.k, rng)
        result.ranked = result.ranked[: self.budget.top_k]
        return result


class MePlanner(NmPlanner):
    """Archive-based quality-diversity search over the distance-feature space."""

    name = "sdl-me"

    def __init__(self, k, budget, predictor_factory, niche_bin_width,
                 trace_sink=None):
        super().__init__(k, budget, predictor_factory)
        self.niche_bin_width = niche_bin_width
        self.trace_sink = trace_sink

    def plan(self, env, params, gu_snapshot, constraints, rng) -> PlanResult:
        base = self._base(env, gu_snapshot, constraints, rng)
        predictor = self.predictor_factory(env, params, gu_snapshot, self.k)
        trace = [] if self.trace_sink is not None else None
        result = map_elites(base, self.budget, constraints, predictor,
                            self.niche_bin_width, self.k, rng, trace=trace)
        if trace is not None:
            self.trace_sink.append(trace)
        return result


def _enforce_min_sep(current, proposal, min_sep):
    """Freeze the higher-indexed ABS of any too-close pair at its current
    position; repeats until the step keeps every pairwise distance legal."""
    out = proposal.copy()
    n = out.shape[0]
    frozen = np.zeros(n, dtype=bool)
    for _ in range(n + 1):
        clean = True
        for a in range(n):
            for b in range(a + 1, n):
                if np.hypot(*(out[a] - out[b])) < min_sep - SEP_TOL:
                    clean = False
                    if not frozen[b]:
                        out[b] = current[b]
                        frozen[b] = True
                    elif not frozen[a]:
                        out[a] = current[a]
                        frozen[a] = True
        if clean:
            break
    return out, frozen


class _Fleet:
    """Route-following fleet with per-step kinematics and separation guard."""

    def __init__(self, grid: FlyGrid, positions, vmax, dt, min_sep):
        self.grid = grid
        self.positions = np.atleast_2d(np.asarray(positions, dtype=float)).copy()
        self.vmax = vmax
        self.dt = dt
        self.min_sep = min_sep
        self.followers = None
        self.targets = None

    def set_targets(self, targets):
        """Route each ABS to its matched target (closest-assignment)."""
        from scipy.optimize import linear_sum_assignment

        tgt = np.atleast_2d(np.asarray(targets, dtype=float))
        cost = ((self.positions[:, None, :] - tgt[None, :, :]) ** 2).sum(axis=2)
        rows, cols = linear_sum_assignment(cost)
        ordered = np.empty_like(tgt)
        ordered[rows] = tgt[cols]
        self.targets = ordered
        self.followers = []
        for pos, t in zip(self.positions, ordered):
            wp = self.grid.route(pos, t)
            self.followers.append(RouteFollower(pos, wp if wp is not None else []))

    def hover(self):
        self.targets = None
        self.followers = [RouteFollower(p, []) for p in self.positions]

    def step(self):
        d0 = self.vmax * self.dt
        walks = [f.walk(d0) for f in self.followers]
        proposal = np.stack([w[0] for w in walks])
        new_pos, frozen = _enforce_min_sep(self.positions, proposal,
                                           self.min_sep)
        for f, (pos, idx), keep_put in zip(self.followers, walks, frozen):
            if not keep_put:
                f.position, f._idx = pos, idx
        self.positions = new_pos
        return self.positions

    @property
    def all_arrived(self) -> bool:
        return all(f.arrived for f in self.followers)

    @property
    def at_targets(self) -> bool:
        """Whole fleet sits exactly on its assigned targets; False when any
        leg could not be routed (its follower idles away from the target)."""
        if self.targets is None:
            return False
        return self.all_arrived and bool(
            np.allclose(self.positions, self.targets, rtol=0.0, atol=1e-9))


def _targets_of(seq, k, d):
    return gridmap.to_positions(np.asarray(seq, dtype=np.int64), k, d)


def run_trial(setup: MissionSetup, planner, seed, gu_init=None, abs_init=None,
              record_traj=True) -> TrialResult:
    """Run one trial: E planning-exploration-serving periods of J steps each.

    `planner` may be None for the static baseline (the fleet hovers all
    trial). Seeded independently for GU motion, initial states, and planner
    randomness so matched-seed trials share GU trajectories across schemes.
    """
    env, params, cfg = setup.env, setup.params, setup.time
    ss = np.random.SeedSequence(seed)
    rng_init, rng_gu, rng_plan = [np.random.default_rng(s) for s in ss.spawn(3)]

    if gu_init is None:
        gu_init = random_gu_positions(env, setup.n_gu, rng_init)
    gu = GuState(np.asarray(gu_init, dtype=float).copy(), setup.v_gu)
    if abs_init is None:
        abs_init = initial_placement(env, gu.positions, setup.n_abs, setup.k,
                                     setup.min_sep, rng_init)
    abs0 = np.asarray(abs_init, dtype=float).copy()

    grid = FlyGrid(env, setup.k)
    fleet = _Fleet(grid, abs0, setup.v_abs_max, cfg.step_s, setup.min_sep)
    max_size = setup.max_size

    n_steps, n_periods, j_steps = cfg.n_steps, cfg.n_periods, cfg.steps_per_period
    step_cr = np.empty(n_steps)
    abs_traj = np.empty((n_steps, setup.n_abs, 2))
    gu_traj = np.empty((n_steps, setup.n_gu, 2))
    plan_times = np.zeros(n_periods)
    periods = []
    gu_hist = [gu.positions.copy()]

    for e in range(n_periods):
        s0 = e * j_steps
        snapshot = gu_hist[max(0, s0 - cfg.plan_lag_steps)]
        constraints = MoveConstraints(env, fleet.positions.copy(),
                                      setup.v_abs_max * cfg.period_s,
                                      setup.min_sep)
        plan = None
        failed = False
        t_plan = 0.0
        if planner is not None:
            t0 = _time.perf_counter()
            try:
                plan = planner.plan(env, params, snapshot, constraints, rng_plan)
            except (ValueError, RuntimeError):
                plan = None
                failed = True
            t_plan = _time.perf_counter() - t0
        plan_times[e] = t_plan

        visit = list(plan.ranked) if plan is not None else []
        measured: list[MeasuredCandidate] = []
        vi = 0
        mode = "explore" if visit else "serve"
        served_seq = None
        fleet.hover()
        pending_target = None
        for j in range(j_steps):
            gu = step_gus(env, gu, cfg.step_s, rng_gu)
            gu_hist.append(gu.positions.copy())
            if mode == "explore" and j >= cfg.explore_steps:
                mode = "serve"
                pending_target = None
                fleet.hover()
            if mode == "explore":
                if pending_target != vi:
                    fleet.set_targets(_targets_of(visit[vi].seq, setup.k,
                                                  env.area_side))
                    pending_target = vi
            elif served_seq is None and pending_target != "serve":
                best = None
                for rec in measured:
                    if best is None or rec.actual_cr > best.actual_cr:
                        best = rec
                if best is not None:
                    served_seq = best.seq
                    fleet.set_targets(_targets_of(served_seq, setup.k,
                                                  env.area_side))
                else:
                    fleet.hover()
                pending_target = "serve"
            pos = fleet.step()
            report = evaluate_coverage(env, pos, gu.positions, params, max_size)
            idx = s0 + j
            step_cr[idx] = report.rate
            abs_traj[idx] = pos
            gu_traj[idx] = gu.positions
            if mode == "explore" and fleet.at_targets:
                measured.append(MeasuredCandidate(vi, idx, visit[vi].seq,
                                                  report.rate))
                vi += 1
                if vi >= len(visit):
                    mode = "serve"
                    pending_target = None
                    fleet.hover()
        periods.append(PeriodRecord(
            e, plan.base_seq if plan is not None else None, t_plan,
            [(c.seq, c.predicted_cr) for c in visit],
            measured, served_seq, failed))

    result = TrialResult(step_cr, float(step_cr.mean()), abs_traj, gu_traj,
                         plan_times, abs0, np.asarray(gu_init, dtype=float),
                         periods)
    if not record_traj:
        result.abs_traj = result.abs_traj[:0]
        result.gu_traj = result.gu_traj[:0]
    return result


def run_ges_bound(setup: MissionSetup, seed, gu_init=None, abs_init=None,
                  cell_radius=None, guard=10 ** 8, record_traj=True) -> TrialResult:
    """Idealized upper-bound trial: each period instantly adopts the grid
    exhaustive search optimum for the current GU locations and flies to it."""
    env, params, cfg = setup.env, setup.params, setup.time
    ss = np.random.SeedSequence(seed)
    rng_init, rng_gu, _ = [np.random.default_rng(s) for s in ss.spawn(3)]
    if gu_init is None:
        gu_init = random_gu_positions(env, setup.n_gu, rng_init)
    gu = GuState(np.asarray(gu_init, dtype=float).copy(), setup.v_gu)
    if abs_init is None:
        abs_init = initial_placement(env, gu.positions, setup.n_abs, setup.k,
                                     setup.min_sep, rng_init)
    abs0 = np.asarray(abs_init, dtype=float).copy()
    if cell_radius is None:
        cell_radius = ges_cell_radius(setup.v_abs_max, cfg.explore_s,
                                      env.area_side / setup.k)

    grid = FlyGrid(env, setup.k)
    fleet = _Fleet(grid, abs0, setup.v_abs_max, cfg.step_s, setup.min_sep)
    n_steps, n_periods, j_steps = cfg.n_steps, cfg.n_periods, cfg.steps_per_period
    step_cr = np.empty(n_steps)
    abs_traj = np.empty((n_steps, setup.n_abs, 2))
    gu_traj = np.empty((n_steps, setup.n_gu, 2))
    plan_times = np.zeros(n_periods)
    periods = []

    for e in range(n_periods):
        constraints = MoveConstraints(env, fleet.positions.copy(),
                                      setup.v_abs_max * cfg.period_s,
                                      setup.min_sep)
        oracle = ExactOracle(env, gu.positions.copy(), params, setup.k,
                             setup.max_size)
        t0 = _time.perf_counter()
        best_seq, best_lam, _ = ges(fleet.positions, constraints,
                                    oracle.lambda_of, cell_radius, setup.k,
                                    guard=guard)
        plan_times[e] = _time.perf_counter() - t0
        fleet.set_targets(_targets_of(best_seq, setup.k, env.area_side))
        for j in range(j_steps):
            gu = step_gus(env, gu, cfg.step_s, rng_gu)
            pos = fleet.step()
            report = evaluate_coverage(env, pos, gu.positions, params,
                                       setup.max_size)
            idx = e * j_steps + j
            step_cr[idx] = report.rate
            abs_traj[idx] = pos
            gu_traj[idx] = gu.positions
        periods.append(PeriodRecord(e, best_seq, plan_times[e],
                                    [(best_seq, best_lam)], [], best_seq))

    result = TrialResult(step_cr, float(step_cr.mean()), abs_traj, gu_traj,
                         plan_times, abs0, np.asarray(gu_init, dtype=float),
                         periods)
    if not record_traj:
        result.abs_traj = result.abs_traj[:0]
        result.gu_traj = result.gu_traj[:0]
    return result
