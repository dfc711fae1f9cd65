"""Placement planners for one period.

All planners work on pattern sequences (sorted flattened cell indices) and
score candidates through a predictor. Candidates must respect the period's
movement budget from the previous ABS positions, the pairwise separation
floor, and the obstructed-airspace rule; `candidate_feasible` is the single
authority for those checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import gridmap
from .env import Environment, abs_position_valid, abs_positions_valid

MUTATE_RETRIES = 16
KMEANS_RETRIES = 32
REACH_TOL = 1e-9


class BudgetError(RuntimeError):
    """Exhaustive enumeration would exceed the configured guard."""


@dataclass
class MoveConstraints:
    env: Environment
    prev_positions: np.ndarray    # (N, 2) ABS positions at the period start
    max_disp: float               # movement budget for the period, m
    min_sep: float                # pairwise security distance, m

    def __post_init__(self):
        self.prev_positions = np.atleast_2d(np.asarray(self.prev_positions, float))
        if self.max_disp < 0 or self.min_sep < 0:
            raise ValueError("max_disp and min_sep must be non-negative")


class CellGeometry:
    """Per-(environment, resolution) cell-center coordinates and validity."""

    def __init__(self, env: Environment, k: int):
        self.k = int(k)
        cell = env.area_side / k
        jj, ii = np.meshgrid(np.arange(k), np.arange(k))
        self.centers = np.column_stack([
            ((jj + 0.5) * cell).ravel(), ((ii + 0.5) * cell).ravel()])
        self.valid = abs_positions_valid(env, self.centers).reshape(k, k)
        self.valid_flat = self.valid.ravel()

    def seq_centers(self, seq) -> np.ndarray:
        return self.centers[np.asarray(seq, dtype=np.int64) - 1]

    @staticmethod
    def of(env: Environment, k: int) -> "CellGeometry":
        cache = getattr(env, "_cell_geometry", None)
        if cache is None:
            cache = {}
            env._cell_geometry = cache
        geo = cache.get(k)
        if geo is None:
            geo = cache[k] = CellGeometry(env, k)
        return geo


@dataclass(frozen=True)
class SearchBudget:
    n_iters: int = 64             # generations
    n_per_iter: int = 128         # mutations per generation
    rim: int = 3                  # Chebyshev mutation radius in cells
    top_k: int = 10               # candidates handed to on-site exploration

    def __post_init__(self):
        if self.rim < 0 or self.top_k < 1 or self.n_iters < 0 or self.n_per_iter < 0:
            raise ValueError("invalid search budget")

    @property
    def n_mutations(self) -> int:
        return self.n_iters * self.n_per_iter


class Candidate(NamedTuple):
    seq: tuple
    predicted_cr: float
    order: int


@dataclass
class PlanResult:
    ranked: list          # Candidates in visiting order (best predicted first)
    pool: list            # every scored candidate, discovery order
    base_seq: tuple
    archive: dict = field(default_factory=dict)   # niche -> Candidate (ME only)


def _assignment_legs(prev_positions, centers):
    """Min-total-squared-cost matching of previous positions to target centers.

    Returns (prev_for_slot, legs): the previous position matched to each
    target slot and the corresponding travel distances.
    """
    cost = ((prev_positions[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    prev_for_slot = np.empty_like(centers)
    prev_for_slot[cols] = prev_positions[rows]
    legs = np.sqrt(((prev_for_slot - centers) ** 2).sum(axis=1))
    return prev_for_slot, legs


def _reach_matching_exists(prev_positions, centers, max_disp) -> bool:
    """True iff some one-to-one matching keeps every leg within max_disp."""
    ok = ((prev_positions[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2) \
        <= (max_disp + REACH_TOL) ** 2
    n = ok.shape[0]
    match = np.full(n, -1, dtype=int)

    def augment(i, seen):
        for j in range(n):
            if ok[i, j] and not seen[j]:
                seen[j] = True
                if match[j] < 0 or augment(match[j], seen):
                    match[j] = i
                    return True
        return False

    for i in range(n):
        if not augment(i, np.zeros(n, dtype=bool)):
            return False
    return True


def candidate_feasible(seq, k, constraints: MoveConstraints) -> bool:
    """Movement-budget reachability, airspace validity, pairwise separation."""
    seq = np.asarray(seq, dtype=np.int64)
    if np.unique(seq).size != seq.size:
        return False
    geo = CellGeometry.of(constraints.env, k)
    if not geo.valid_flat[seq - 1].all():
        return False
    centers = geo.seq_centers(seq)
    n = centers.shape[0]
    if n >= 2:
        min_sep2 = (constraints.min_sep - REACH_TOL) ** 2
        for a in range(n):
            for b in range(a + 1, n):
                dx = centers[a, 0] - centers[b, 0]
                dy = centers[a, 1] - centers[b, 1]
                if dx * dx + dy * dy < min_sep2:
                    return False
    if not np.isinf(constraints.max_disp):
        if not _reach_matching_exists(constraints.prev_positions, centers,
                                      constraints.max_disp):
            return False
    return True


def mutate(seq, rim, constraints: MoveConstraints, rng, k) -> tuple:
    """Jump each ABS to a uniform cell within its Chebyshev rim.

    Within-rim draws are rejected until the new cell is unoccupied, in valid
    airspace, inside the movement budget of the slot's matched previous
    position, and separated from already-placed ABSs; after MUTATE_RETRIES
    failures an ABS keeps its cell. Degrades to the unchanged input when the
    result would be infeasible.
    """
    cells = [int(c) for c in seq]
    if rim == 0:
        return tuple(cells)
    geo = CellGeometry.of(constraints.env, k)
    centers = geo.seq_centers(cells)
    prev_for_slot, _ = _assignment_legs(constraints.prev_positions, centers)
    max_d2 = (constraints.max_disp + REACH_TOL) ** 2
    min_sep2 = (constraints.min_sep - REACH_TOL) ** 2
    valid = geo.valid
    cpts = geo.centers
    taken: set[int] = set()
    new_cells: list[int] = []
    xs: list[float] = []
    ys: list[float] = []

    def sep_ok(x, y):
        for ox, oy in zip(xs, ys):
            if (x - ox) ** 2 + (y - oy) ** 2 < min_sep2:
                return False
        return True

    draws = rng.integers(-rim, rim + 1, size=(len(cells), MUTATE_RETRIES, 2))
    for slot, cell in enumerate(cells):
        i0, j0 = divmod(cell - 1, k)
        px, py = prev_for_slot[slot]
        chosen = -1
        for i_off, j_off in draws[slot]:
            i1 = i0 + int(i_off)
            j1 = j0 + int(j_off)
            if not (0 <= i1 < k and 0 <= j1 < k) or not valid[i1, j1]:
                continue
            cand = i1 * k + j1 + 1
            if cand in taken:
                continue
            x, y = cpts[cand - 1]
            if (x - px) ** 2 + (y - py) ** 2 > max_d2:
                continue
            if not sep_ok(x, y):
                continue
            chosen = cand
            break
        if chosen < 0:
            x, y = centers[slot]
            if cell not in taken and sep_ok(x, y):
                chosen = cell
            else:
                return tuple(cells)
        else:
            x, y = cpts[chosen - 1]
        taken.add(chosen)
        new_cells.append(chosen)
        xs.append(float(x))
        ys.append(float(y))
    out = tuple(sorted(new_cells))
    if not candidate_feasible(out, k, constraints):
        return tuple(cells)
    return out


def _lloyd_once(points, n, rng, max_iter=50, tol=1e-3):
    m = points.shape[0]
    if m >= n:
        centers = points[rng.choice(m, size=n, replace=False)].astype(float)
    else:
        centers = points[rng.integers(0, m, size=n)].astype(float)
        centers += rng.normal(0.0, 1.0, size=centers.shape)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new = centers.copy()
        for j in range(n):
            sel = labels == j
            if sel.any():
                new[j] = points[sel].mean(axis=0)
            else:
                new[j] = points[d2[np.arange(m), labels].argmax()]
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return centers, float(d2.min(axis=1).sum())


def _lloyd(points, n, rng, max_iter=50, tol=1e-3, n_init=8):
    """K-means with GU-sampled random seeds, best of a few restarts."""
    best, best_inertia = None, np.inf
    for _ in range(n_init):
        centers, inertia = _lloyd_once(points, n, rng, max_iter, tol)
        if inertia < best_inertia:
            best, best_inertia = centers, inertia
    return best


def _snap_to_cells(centers, k, d):
    row, col = gridmap.cell_indices(centers, k, d)
    cells = row * k + col + 1
    if np.unique(cells).size != cells.size:
        return None
    return tuple(sorted(int(c) for c in cells))


def _spiral_pick(target, k, d, env, prev, max_disp, taken, chosen_centers, min_sep):
    """First feasible cell by distance from target; -1 when none exists."""
    cell_size = d / k
    jj, ii = np.meshgrid(np.arange(k), np.arange(k))
    cx = (jj + 0.5) * cell_size
    cy = (ii + 0.5) * cell_size
    d2 = (cx - target[0]) ** 2 + (cy - target[1]) ** 2
    order = np.argsort(d2, axis=None, kind="stable")
    max_d2 = (max_disp + REACH_TOL) ** 2 if not np.isinf(max_disp) else np.inf
    min_sep2 = min_sep ** 2
    for flat in order:
        cell = int(flat) + 1
        if cell in taken:
            continue
        ctr = np.array([cx.flat[flat], cy.flat[flat]])
        if ((ctr - prev) ** 2).sum() > max_d2:
            continue
        if not abs_position_valid(env, ctr):
            continue
        if any(((ctr - c) ** 2).sum() < min_sep2 - REACH_TOL for c in chosen_centers):
            continue
        return cell, ctr
    return -1, None


def ckmeans_init(prev_abs, gu_pos, constraints: MoveConstraints, k, rng,
                 max_retries=KMEANS_RETRIES) -> np.ndarray:
    """Feasible base placement from K-means centroids of the GU snapshot.

    Reseeded K-means runs until the centroid set, snapped to cell centers,
    passes the movement/separation/airspace checks; exhausted retries fall
    back to projecting each centroid into its matched previous position's
    reach ball and greedily picking the nearest feasible cells.
    """
    env = constraints.env
    d = env.area_side
    prev_abs = np.atleast_2d(np.asarray(prev_abs, dtype=float))
    gu_pos = np.atleast_2d(np.asarray(gu_pos, dtype=float))
    n = prev_abs.shape[0]
    for _ in range(max_retries):
        centers = _lloyd(gu_pos, n, rng)
        seq = _snap_to_cells(centers, k, d)
        if seq is not None and candidate_feasible(seq, k, constraints):
            return gridmap.to_positions(seq, k, d)
    # projection fallback
    centers = _lloyd(gu_pos, n, rng)
    prev_for_slot, _ = _assignment_legs(prev_abs, centers)
    taken: set[int] = set()
    out_cells: list[int] = []
    chosen_centers: list[np.ndarray] = []
    for slot in range(n):
        prev = prev_for_slot[slot]
        target = centers[slot]
        delta = target - prev
        dist = math.hypot(delta[0], delta[1])
        if not np.isinf(constraints.max_disp) and dist > constraints.max_disp:
            target = prev + delta * (constraints.max_disp * (1 - 1e-9) / dist)
        cell, ctr = _spiral_pick(target, k, d, env, prev, constraints.max_disp,
                                 taken, chosen_centers, constraints.min_sep)
        if cell < 0:
            cell, ctr = _spiral_pick(prev, k, d, env, prev, np.inf,
                                     taken, chosen_centers, 0.0)
        taken.add(cell)
        out_cells.append(cell)
        chosen_centers.append(ctr)
    return gridmap.to_positions(sorted(out_cells), k, d)


class _Memo:
    """Per-planning-call score cache; each distinct sequence is scored once."""

    def __init__(self, predictor):
        self.predictor = predictor
        self.scores: dict[tuple, float] = {}
        self.order: dict[tuple, int] = {}

    def score_all(self, seqs):
        new = list(dict.fromkeys(s for s in seqs if s not in self.scores))
        if new:
            vals = self.predictor.score_sequences(new)
            for s, v in zip(new, vals):
                self.order[s] = len(self.order)
                self.scores[s] = float(v)
        return [self.scores[s] for s in seqs]

    def pool(self):
        return [Candidate(s, self.scores[s], i) for s, i in self.order.items()]


def nm_search(base_seq, budget: SearchBudget, constraints: MoveConstraints,
              predictor, k, rng) -> PlanResult:
    """Naive mutation: independent single-generation mutations of the base.

    The base is always candidate 0, so the ranked list never falls below the
    initialization. Duplicates are scored once.
    """
    base = tuple(int(c) for c in base_seq)
    memo = _Memo(predictor)
    seqs = [base]
    for _ in range(budget.n_mutations):
        seqs.append(mutate(base, budget.rim, constraints, rng, k))
    memo.score_all(seqs)
    pool = memo.pool()
    ranked = sorted(pool, key=lambda c: (-c.predicted_cr, c.order))
    return PlanResult(ranked, pool, base)


def map_elites(base_seq, budget: SearchBudget, constraints: MoveConstraints,
               predictor, niche_bin_width, k, rng,
               trace: list | None = None) -> PlanResult:
    """Quality-diversity search over the binned pairwise-distance feature space.

    Generation 1 bootstraps from the base sequence; later generations mutate
    uniform draws (with replacement) from the archive. A niche is replaced
    only by a strictly better fitness. Returns the archive's top-k by fitness,
    ties to the earlier insertion.
    """
    env = constraints.env
    geo = CellGeometry.of(env, k)
    base = tuple(int(c) for c in base_seq)
    memo = _Memo(predictor)
    archive: dict[gridmap.FeatureNiche, Candidate] = {}
    insertion = 0

    def niche_of(seq):
        centers = geo.seq_centers(seq)
        n = centers.shape[0]
        dists = [float(np.hypot(centers[a, 0] - centers[b, 0],
                                centers[a, 1] - centers[b, 1]))
                 for a in range(n) for b in range(a + 1, n)]
        mu = sum(dists) / len(dists)
        var = sum((x - mu) ** 2 for x in dists) / len(dists)
        return gridmap.FeatureNiche(int(mu // niche_bin_width),
                                    int(var ** 0.5 // niche_bin_width))

    def archive_add(seq, fit):
        nonlocal insertion
        niche = niche_of(seq)
        held = archive.get(niche)
        if held is None or held.predicted_cr < fit:
            archive[niche] = Candidate(seq, fit, insertion)
            insertion += 1

    (base_fit,) = memo.score_all([base])
    archive_add(base, base_fit)
    for it in range(budget.n_iters):
        if it == 0 or not archive:
            parents = [base] * budget.n_per_iter
        else:
            held = [c.seq for c in archive.values()]
            parents = [held[int(rng.integers(len(held)))]
                       for _ in range(budget.n_per_iter)]
        children = [mutate(p, budget.rim, constraints, rng, k) for p in parents]
        fits = memo.score_all(children)
        for seq, fit in zip(children, fits):
            archive_add(seq, fit)
        if trace is not None:
            trace.append({n: c.predicted_cr for n, c in archive.items()})
    ranked = sorted(archive.values(), key=lambda c: (-c.predicted_cr, c.order))
    ranked = ranked[:budget.top_k]
    if not ranked:
        ranked = [Candidate(base, base_fit, 0)]
    return PlanResult(ranked, memo.pool(), base, dict(archive))


def ges_cell_radius(vmax, explore_s, cell_size) -> int:
    """Grid search radius floor(vmax * explore_time / cell)."""
    return int(math.floor(vmax * explore_s / cell_size))


def ges(prev_positions, constraints: MoveConstraints, lambda_of: Callable,
        cell_radius, k, guard=10 ** 8):
    """Exhaustive search over per-ABS Chebyshev windows of reachable cells.

    Scores every distinct, separation-feasible combination with the exact
    oracle and returns (best_seq, best_lambda, n_scored); the first-found
    combination wins ties.
    """
    env = constraints.env
    d = env.area_side
    prev = np.atleast_2d(np.asarray(prev_positions, dtype=float))
    n = prev.shape[0]
    if (2 * cell_radius + 1) ** (2 * n) > guard:
        raise BudgetError(
            f"(2*{cell_radius}+1)^(2*{n}) exceeds the enumeration guard {guard:g}")
    cell_size = d / k
    windows = []
    for slot in range(n):
        row, col = gridmap.cell_indices(prev[slot][None, :], k, d)
        i0, j0 = int(row[0]), int(col[0])
        cells = []
        for i1 in range(max(0, i0 - cell_radius), min(k, i0 + cell_radius + 1)):
            for j1 in range(max(0, j0 - cell_radius), min(k, j0 + cell_radius + 1)):
                ctr = ((j1 + 0.5) * cell_size, (i1 + 0.5) * cell_size)
                if abs_position_valid(env, ctr):
                    cells.append(i1 * k + j1 + 1)
        if not cells:
            cells = [i0 * k + j0 + 1]
        windows.append(cells)
    min_sep2 = constraints.min_sep ** 2
    centers_of = {c: gridmap.to_positions([c], k, d)[0]
                  for w in windows for c in w}
    seen: set[tuple] = set()
    best_seq, best_lam = None, -1.0
    stack_cells: list[int] = []

    def descend(slot):
        nonlocal best_seq, best_lam
        if slot == n:
            seqt = tuple(sorted(stack_cells))
            if seqt in seen:
                return
            seen.add(seqt)
            lam = float(lambda_of(seqt))
            if lam > best_lam:
                best_lam, best_seq = lam, seqt
            return
        for cell in windows[slot]:
            if cell in stack_cells:
                continue
            ctr = centers_of[cell]
            if any(((ctr - centers_of[c]) ** 2).sum() < min_sep2 - REACH_TOL
                   for c in stack_cells):
                continue
            stack_cells.append(cell)
            descend(slot + 1)
            stack_cells.pop()

    descend(0)
    return best_seq, best_lam, len(seen)


def initial_placement(env: Environment, gu_pos, n, k, min_sep, rng) -> np.ndarray:
    """Unconstrained K-means placement for the start of a trial, snapped to
    distinct feasible cells."""
    anchor = np.full((n, 2), env.area_side / 2.0)
    constraints = MoveConstraints(env, anchor, np.inf, min_sep)
    return ckmeans_init(anchor, gu_pos, constraints, k, rng)
