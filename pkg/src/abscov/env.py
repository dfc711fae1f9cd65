"""Urban blockage environment: building layout, LoS geometry, mobility.

Coordinates are meters in a [0, D] x [0, D] square. Buildings are
axis-aligned square footprints extruded from the ground to their height.
ABSs fly at a fixed altitude ``abs_altitude``; GUs move at handset height
``gu_height``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit


class CapacityError(ValueError):
    """Requested more entities than the layout can hold."""


@dataclass(frozen=True)
class BuildingBlock:
    """Square building footprint with lower-left corner (x, y), side and height in m."""

    x: float
    y: float
    side: float
    height: float


@dataclass
class Environment:
    area_side: float             # D, m
    building_side: float         # D_w, m (footprint side used by the generator)
    abs_altitude: float          # h_p, m
    gu_height: float             # h_q, m
    buildings: list[BuildingBlock] = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.gu_height < self.abs_altitude:
            raise ValueError("need 0 < gu_height < abs_altitude")
        n = len(self.buildings)
        self._bx0 = np.array([b.x for b in self.buildings], dtype=float)
        self._by0 = np.array([b.y for b in self.buildings], dtype=float)
        self._bx1 = self._bx0 + np.array([b.side for b in self.buildings], dtype=float)
        self._by1 = self._by0 + np.array([b.side for b in self.buildings], dtype=float)
        self._bh = np.array([b.height for b in self.buildings], dtype=float)
        if n and (self._bh <= 0).any():
            raise ValueError("building heights must be positive")
        # footprints of buildings at least as tall as the flight altitude
        # obstruct the ABS airspace
        tall = self._bh >= self.abs_altitude
        self._tx0, self._tx1 = self._bx0[tall], self._bx1[tall]
        self._ty0, self._ty1 = self._by0[tall], self._by1[tall]

    @property
    def n_buildings(self) -> int:
        return len(self.buildings)

    def building_arrays(self):
        """(x0, y0, x1, y1, h) arrays for vectorized geometry."""
        return self._bx0, self._by0, self._bx1, self._by1, self._bh

    def tall_footprints(self):
        """(x0, y0, x1, y1) arrays of buildings with height >= abs_altitude."""
        return self._tx0, self._ty0, self._tx1, self._ty1

    def to_json(self) -> str:
        doc = {
            "d": round(self.area_side, 2),
            "dw": round(self.building_side, 2),
            "hp": round(self.abs_altitude, 2),
            "hq": round(self.gu_height, 2),
            "buildings": [
                {"x": round(b.x, 2), "y": round(b.y, 2), "h": round(b.height, 2)}
                for b in self.buildings
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        doc = json.loads(text)
        side = float(doc["dw"])
        blocks = [
            BuildingBlock(float(b["x"]), float(b["y"]), side, float(b["h"]))
            for b in doc["buildings"]
        ]
        return cls(float(doc["d"]), side, float(doc["hp"]), float(doc["hq"]), blocks)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


@dataclass
class GuState:
    positions: np.ndarray        # (M, 2) m
    speed: float                 # V_q, m/s

    def copy(self) -> "GuState":
        return GuState(self.positions.copy(), self.speed)


def generate_environment(seed, d, dw, n_buildings, height_range=(30.0, 89.0),
                         abs_altitude=60.0, gu_height=1.0) -> Environment:
    """Drop ``n_buildings`` blocks on the (d/dw)^2 lattice, heights uniform.

    Cells are chosen without replacement, so footprints never overlap.
    Deterministic given the seed.
    """
    cells_per_side = int(round(d / dw))
    if abs(cells_per_side * dw - d) > 1e-9 * d:
        raise ValueError(f"area side {d} not divisible by building side {dw}")
    capacity = cells_per_side * cells_per_side
    if n_buildings > capacity:
        raise CapacityError(f"{n_buildings} buildings exceed {capacity} lattice cells")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(capacity, size=n_buildings, replace=False)
    heights = rng.uniform(height_range[0], height_range[1], size=n_buildings)
    blocks = []
    for cell, h in zip(np.sort(chosen), heights[np.argsort(chosen, kind="stable")]):
        i, j = divmod(int(cell), cells_per_side)
        blocks.append(BuildingBlock(j * dw, i * dw, dw, float(h)))
    return Environment(float(d), float(dw), float(abs_altitude), float(gu_height), blocks)


def _segment_hits_boxes(p0, p1s, x0, y0, z0, x1, y1, z1):
    """True where the 3D segment p0 -> p1s[i] touches any of the boxes.

    Slab test with closed intervals: grazing a face counts as a hit.
    p0: (3,), p1s: (M, 3); box bound arrays all length L. Returns (M,) bool.
    """
    p1s = np.atleast_2d(p1s)
    m = p1s.shape[0]
    nbox = x0.shape[0]
    if nbox == 0:
        return np.zeros(m, dtype=bool)
    lo = np.stack([x0, y0, z0], axis=-1)          # (L, 3)
    hi = np.stack([x1, y1, z1], axis=-1)
    a = p0[None, None, :]                          # (1, 1, 3)
    dvec = (p1s - p0)[:, None, :]                  # (M, 1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None, :, :] - a) / dvec
        t2 = (hi[None, :, :] - a) / dvec
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    par = dvec == 0.0                              # axis-parallel: slab is all-or-nothing
    inside = (a >= lo[None, :, :]) & (a <= hi[None, :, :])
    tlo = np.where(par, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(par, np.where(inside, np.inf, -np.inf), thi)
    tmin = tlo.max(axis=2)
    tmax = thi.min(axis=2)
    return ((tmax >= tmin) & (tmax >= 0.0) & (tmin <= 1.0)).any(axis=1)


@njit(cache=True)
def _blocked_kernel(ax, ay, az, gx, gy, gz, bx0, by0, bx1, by1, bh):
    """Early-exit slab test of segments (a -> g_i) against extruded footprints."""
    m = gx.shape[0]
    nb = bx0.shape[0]
    out = np.zeros(m, np.bool_)
    zlo = min(az, gz)
    for i in range(m):
        sx0 = min(ax, gx[i])
        sx1 = max(ax, gx[i])
        sy0 = min(ay, gy[i])
        sy1 = max(ay, gy[i])
        dx = gx[i] - ax
        dy = gy[i] - ay
        dz = gz - az
        for b in range(nb):
            if bx1[b] < sx0 or bx0[b] > sx1 or by1[b] < sy0 or by0[b] > sy1:
                continue
            if bh[b] < zlo:
                continue
            tmin = 0.0
            tmax = 1.0
            ok = True
            if dx != 0.0:
                t1 = (bx0[b] - ax) / dx
                t2 = (bx1[b] - ax) / dx
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif ax < bx0[b] or ax > bx1[b]:
                ok = False
            if ok and dy != 0.0:
                t1 = (by0[b] - ay) / dy
                t2 = (by1[b] - ay) / dy
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif ok and (ay < by0[b] or ay > by1[b]):
                ok = False
            if ok and dz != 0.0:
                t1 = (0.0 - az) / dz
                t2 = (bh[b] - az) / dz
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif ok and (az < 0.0 or az > bh[b]):
                ok = False
            if ok and tmax >= tmin:
                out[i] = True
                break
    return out


def los_mask(env: Environment, abs_pos, gu_positions) -> np.ndarray:
    """LoS indicator for the link from one ABS to each GU position. (M,) bool."""
    gu_positions = np.atleast_2d(np.asarray(gu_positions, dtype=float))
    x0, y0, x1, y1, h = env.building_arrays()
    blocked = _blocked_kernel(
        float(abs_pos[0]), float(abs_pos[1]), float(env.abs_altitude),
        np.ascontiguousarray(gu_positions[:, 0]),
        np.ascontiguousarray(gu_positions[:, 1]),
        float(env.gu_height), x0, y0, x1, y1, h)
    return ~blocked


def is_los(env: Environment, abs_pos, gu_pos) -> bool:
    """True iff no building volume intersects the ABS-GU segment."""
    return bool(los_mask(env, abs_pos, np.asarray(gu_pos, dtype=float)[None, :])[0])


def segment_clear_at_altitude(env: Environment, p, q) -> bool:
    """True iff the horizontal segment p -> q at flight altitude avoids every
    obstructing (height >= abs_altitude) footprint. Touching counts as blocked."""
    tx0, ty0, tx1, ty1 = env.tall_footprints()
    if tx0.shape[0] == 0:
        return True
    z = np.zeros_like(tx0)
    p0 = np.array([p[0], p[1], 0.0])
    p1 = np.array([[q[0], q[1], 0.0]])
    hit = _segment_hits_boxes(p0, p1, tx0, ty0, z - 1.0, tx1, ty1, z + 1.0)
    return not bool(hit[0])


def abs_positions_valid(env: Environment, positions) -> np.ndarray:
    """Validity per Eq.-style airspace rule: inside the area and outside every
    footprint whose building reaches the flight altitude. (N,) bool."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    d = env.area_side
    ok = (pos[:, 0] >= 0) & (pos[:, 0] <= d) & (pos[:, 1] >= 0) & (pos[:, 1] <= d)
    tx0, ty0, tx1, ty1 = env.tall_footprints()
    if tx0.shape[0]:
        in_box = (
            (pos[:, 0:1] >= tx0) & (pos[:, 0:1] <= tx1)
            & (pos[:, 1:2] >= ty0) & (pos[:, 1:2] <= ty1)
        ).any(axis=1)
        ok &= ~in_box
    return ok


def abs_position_valid(env: Environment, pos) -> bool:
    return bool(abs_positions_valid(env, np.asarray(pos, dtype=float)[None, :])[0])


def gu_positions_valid(env: Environment, positions) -> np.ndarray:
    """Ground positions must stay inside the area and outside all footprints."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    d = env.area_side
    ok = (pos[:, 0] >= 0) & (pos[:, 0] <= d) & (pos[:, 1] >= 0) & (pos[:, 1] <= d)
    x0, y0, x1, y1, _ = env.building_arrays()
    if x0.shape[0]:
        in_box = (
            (pos[:, 0:1] >= x0) & (pos[:, 0:1] <= x1)
            & (pos[:, 1:2] >= y0) & (pos[:, 1:2] <= y1)
        ).any(axis=1)
        ok &= ~in_box
    return ok


def random_gu_positions(env: Environment, m, rng) -> np.ndarray:
    """Uniform valid ground positions, rejection-sampled."""
    out = np.empty((m, 2), dtype=float)
    need = np.arange(m)
    while need.size:
        cand = rng.uniform(0.0, env.area_side, size=(need.size, 2))
        good = gu_positions_valid(env, cand)
        out[need[good]] = cand[good]
        need = need[~good]
    return out


MAX_HEADING_RETRIES = 8


def step_gus(env: Environment, state: GuState, dt: float, rng) -> GuState:
    """Advance each GU by speed*dt along an independent uniform heading.

    Headings that would land inside a building or outside the area are
    resampled up to MAX_HEADING_RETRIES times; a GU stays put if all fail.
    """
    pos = state.positions
    step = state.speed * dt
    if step == 0.0 or pos.shape[0] == 0:
        return GuState(pos.copy(), state.speed)
    new = pos.copy()
    pending = np.arange(pos.shape[0])
    for _ in range(MAX_HEADING_RETRIES):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=pending.size)
        cand = pos[pending] + step * np.column_stack([np.cos(theta), np.sin(theta)])
        good = gu_positions_valid(env, cand)
        new[pending[good]] = cand[good]
        pending = pending[~good]
        if pending.size == 0:
            break
    return GuState(new, state.speed)
