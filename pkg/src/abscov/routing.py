"""Obstacle-aware flight routing at the ABS altitude.

Straight legs are used whenever the segment avoids every obstructing
footprint; otherwise an A* path over 4-connected free cells supplies
waypoints (segments between edge-adjacent free cell centers cannot leave the
two cells, so every step position stays in valid airspace). Routes are
polylines; a follower advances along them by at most one step budget.
"""

from __future__ import annotations

import heapq

import numpy as np

from .env import Environment, segment_clear_at_altitude


class FlyGrid:
    """Free/blocked cells at flight altitude for one environment."""

    def __init__(self, env: Environment, k: int):
        self.env = env
        self.k = int(k)
        self.cell = env.area_side / self.k
        blocked = np.zeros((self.k, self.k), dtype=bool)
        tx0, ty0, tx1, ty1 = env.tall_footprints()
        for x0, y0, x1, y1 in zip(tx0, ty0, tx1, ty1):
            j0 = max(0, int(np.floor(x0 / self.cell)))
            j1 = min(self.k - 1, int(np.ceil(x1 / self.cell)) - 1)
            i0 = max(0, int(np.floor(y0 / self.cell)))
            i1 = min(self.k - 1, int(np.ceil(y1 / self.cell)) - 1)
            blocked[i0:i1 + 1, j0:j1 + 1] = True
        self.blocked = blocked

    def cell_of(self, pos):
        j = min(self.k - 1, max(0, int(pos[0] // self.cell)))
        i = min(self.k - 1, max(0, int(pos[1] // self.cell)))
        return i, j

    def center(self, ij):
        return np.array([(ij[1] + 0.5) * self.cell, (ij[0] + 0.5) * self.cell])

    def _astar(self, start_ij, goal_ij):
        if self.blocked[goal_ij]:
            return None
        k = self.k
        dist = {start_ij: 0.0}
        parent = {}
        frontier = [(0.0, start_ij)]
        while frontier:
            f, node = heapq.heappop(frontier)
            if node == goal_ij:
                path = [node]
                while node in parent:
                    node = parent[node]
                    path.append(node)
                return path[::-1]
            base = dist[node]
            if f > base + abs(goal_ij[0] - node[0]) + abs(goal_ij[1] - node[1]):
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nxt = (node[0] + di, node[1] + dj)
                if not (0 <= nxt[0] < k and 0 <= nxt[1] < k):
                    continue
                if self.blocked[nxt] and nxt != goal_ij:
                    continue
                g = base + 1.0
                if g < dist.get(nxt, np.inf):
                    dist[nxt] = g
                    parent[nxt] = node
                    h = abs(goal_ij[0] - nxt[0]) + abs(goal_ij[1] - nxt[1])
                    heapq.heappush(frontier, (g + h, nxt))
        return None

    def _shortcut(self, points):
        """Greedy skip-ahead over waypoints whose direct segment is clear."""
        out = [points[0]]
        i = 0
        while i < len(points) - 1:
            j = len(points) - 1
            while j > i + 1 and not segment_clear_at_altitude(
                    self.env, points[i], points[j]):
                j -= 1
            out.append(points[j])
            i = j
        return out

    def route(self, start, target):
        """Waypoint list from start to target (start excluded), or None."""
        start = np.asarray(start, dtype=float)
        target = np.asarray(target, dtype=float)
        if segment_clear_at_altitude(self.env, start, target):
            return [target]
        s_ij = self.cell_of(start)
        g_ij = self.cell_of(target)
        path = self._astar(s_ij, g_ij)
        if path is None:
            return None
        points = [start] + [self.center(ij) for ij in path[1:-1]] + [target]
        shortcut = self._shortcut(points)
        for candidate in (shortcut, points):
            prev = candidate[0]
            safe = True
            for p in candidate[1:]:
                if not segment_clear_at_altitude(self.env, prev, p):
                    safe = False
                    break
                prev = p
            if safe:
                return candidate[1:]
        return None


class RouteFollower:
    """Advances a position along a waypoint polyline by a distance budget."""

    def __init__(self, position, waypoints):
        self.position = np.asarray(position, dtype=float).copy()
        self.waypoints = [np.asarray(w, dtype=float) for w in (waypoints or [])]
        self._idx = 0

    @property
    def arrived(self) -> bool:
        return self._idx >= len(self.waypoints)

    def remaining(self) -> float:
        if self.arrived:
            return 0.0
        total = 0.0
        prev = self.position
        for w in self.waypoints[self._idx:]:
            total += float(np.hypot(*(w - prev)))
            prev = w
        return total

    def walk(self, budget: float):
        """(position, waypoint index) after advancing up to `budget` along the
        route; corners are cut only by the polyline, never skipped."""
        pos = self.position.copy()
        idx = self._idx
        left = budget
        while idx < len(self.waypoints) and left > 0.0:
            w = self.waypoints[idx]
            d = float(np.hypot(*(w - pos)))
            if d <= left + 1e-12:
                pos = w.copy()
                left -= d
                idx += 1
            else:
                pos = pos + (w - pos) * (left / d)
                left = 0.0
        return pos, idx

    def peek(self, budget: float) -> np.ndarray:
        return self.walk(budget)[0]

    def step(self, budget: float) -> np.ndarray:
        self.position, self._idx = self.walk(budget)
        return self.position
