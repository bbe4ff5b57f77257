"""Costmaps, point-goal planning and carrot-style approach on the grid.

Step cost is the cost of the entered cell, times sqrt(2) for a diagonal
step. Diagonal steps may not cut the corner of a lethal cell.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import GoalUntraversable, NoApproachExists, NoPathExists
from .semantic_map import FREE, OCCUPIED, GridPose, SemanticMap

LETHAL = math.inf
BASE_COST = 1.0
SQRT2 = math.sqrt(2.0)

# expansion order E, N, W, S, NE, NW, SW, SE ("N" is toward row 0)
NEIGHBORS_4 = ((1, 0), (0, -1), (-1, 0), (0, 1))
NEIGHBORS_8 = NEIGHBORS_4 + ((1, -1), (-1, -1), (-1, 1), (1, 1))


@dataclass
class Costmap:
    width: int
    height: int
    resolution: float
    cost: np.ndarray  # [y, x]; math.inf marks lethal cells

    def lethal(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return True
        return not np.isfinite(self.cost[y, x])

    def at(self, x: int, y: int) -> float:
        return float(self.cost[y, x])


@dataclass
class Path:
    cells: list[tuple[int, int]] = field(default_factory=list)
    total_cost: float = 0.0

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    @property
    def end(self) -> Optional[tuple[int, int]]:
        return self.cells[-1] if self.cells else None


def inflate(
    smap: SemanticMap,
    radius_cells: int,
    decay_cells: int = 0,
    peak_cost: float = 4.0,
) -> Costmap:
    """Build a costmap from the map and its registered receptacles.

    Occupied cells and receptacle cells are obstacle sources. Any cell within
    ``radius_cells`` (chessboard distance) of a source is lethal, as are
    Unknown cells. Over the next ``decay_cells`` rings the cost falls linearly
    from ``1 + peak_cost`` toward the base cost of 1.
    """
    if radius_cells < 0 or decay_cells < 0:
        raise ValueError("inflation radius and decay must be >= 0")
    source = smap.cells == OCCUPIED
    for rec in smap.receptacles:
        x, y = rec.position
        source[y, x] = True
    cost = np.full((smap.height, smap.width), BASE_COST)
    if source.any():
        dist = ndimage.distance_transform_cdt(~source, metric="chessboard").astype(float)
        if decay_cells:
            ring = (dist > radius_cells) & (dist <= radius_cells + decay_cells)
            frac = (radius_cells + decay_cells + 1 - dist[ring]) / (decay_cells + 1)
            cost[ring] = BASE_COST + peak_cost * frac
        cost[dist <= radius_cells] = LETHAL
    cost[smap.cells != FREE] = LETHAL
    return Costmap(smap.width, smap.height, smap.resolution, cost)


def _neighbors(costmap: Costmap, x: int, y: int, connectivity: int):
    steps = NEIGHBORS_8 if connectivity == 8 else NEIGHBORS_4
    for dx, dy in steps:
        nx, ny = x + dx, y + dy
        if costmap.lethal(nx, ny):
            continue
        if dx and dy and (costmap.lethal(x + dx, y) or costmap.lethal(x, y + dy)):
            continue
        step = costmap.cost[ny, nx] * (SQRT2 if dx and dy else 1.0)
        yield (nx, ny), float(step)


def _heuristic(a, b, connectivity):
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    if connectivity == 4:
        return BASE_COST * (dx + dy)
    return BASE_COST * (max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy))


def _as_cell(p) -> tuple[int, int]:
    if isinstance(p, GridPose):
        return p.cell
    return (int(p[0]), int(p[1]))


def plan_point_goal(costmap: Costmap, start, goal, connectivity: int = 8) -> Path:
    """Minimum-cost path by A* with the octile (or Manhattan) heuristic.

    The returned cells exclude ``start``; ``start == goal`` gives an empty path.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    s, g = _as_cell(start), _as_cell(goal)
    if costmap.lethal(*s):
        raise NoPathExists(f"start {s} is lethal")
    if costmap.lethal(*g):
        raise GoalUntraversable(f"goal {g} is lethal")
    if s == g:
        return Path()

    best = {s: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    closed = set()
    counter = 0
    frontier = [(_heuristic(s, g, connectivity), counter, s)]
    while frontier:
        _, _, cur = heapq.heappop(frontier)
        if cur in closed:
            continue
        if cur == g:
            break
        closed.add(cur)
        gcur = best[cur]
        for nxt, step in _neighbors(costmap, *cur, connectivity):
            cand = gcur + step
            if cand < best.get(nxt, math.inf):
                best[nxt] = cand
                parent[nxt] = cur
                counter += 1
                heapq.heappush(frontier, (cand + _heuristic(nxt, g, connectivity), counter, nxt))
    else:
        raise NoPathExists(f"no path from {s} to {g}")

    cells = [g]
    while cells[-1] != s:
        cells.append(parent[cells[-1]])
    cells.reverse()
    return Path(cells[1:], best[g])


def path_cost(costmap: Costmap, start, cells: Sequence) -> float:
    total, prev = 0.0, _as_cell(start)
    for c in cells:
        c = _as_cell(c)
        diag = prev[0] != c[0] and prev[1] != c[1]
        total += costmap.at(*c) * (SQRT2 if diag else 1.0)
        prev = c
    return total


def bresenham(a, b) -> list[tuple[int, int]]:
    """Grid cells on the segment from ``a`` to ``b``, both ends included."""
    x0, y0 = _as_cell(a)
    x1, y1 = _as_cell(b)
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    out = [(x0, y0)]
    while (x0, y0) != (x1, y1):
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
        out.append((x0, y0))
    return out


def _reachable_costs(costmap: Costmap, start, connectivity) -> dict:
    s = _as_cell(start)
    dist = {s: 0.0}
    heap = [(0.0, 0, s)]
    counter = 0
    done = set()
    while heap:
        d, _, cur = heapq.heappop(heap)
        if cur in done:
            continue
        done.add(cur)
        for nxt, step in _neighbors(costmap, *cur, connectivity):
            nd = d + step
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                counter += 1
                heapq.heappush(heap, (nd, counter, nxt))
    return dist


def carrot_point(costmap: Costmap, start, goal) -> Optional[tuple[int, int]]:
    """Last non-lethal cell on the start->goal segment before the first lethal
    one (the goal itself if the segment is clear); ``None`` if the very first
    step is already lethal."""
    line = bresenham(start, goal)
    last = None
    for cell in line[1:]:
        if costmap.lethal(*cell):
            break
        last = cell
    return last


def carrot_plan(
    costmap: Costmap,
    start,
    goal,
    search_radius: float = 3.0,
    connectivity: int = 8,
) -> Path:
    """Get as close to ``goal`` as free space allows.

    Follows the straight segment toward the goal up to the first lethal cell.
    When that makes no progress, or the carrot cell is unreachable, picks the
    reachable non-lethal cell nearest the goal within ``search_radius``
    (Euclidean), the start itself included.
    """
    s, g = _as_cell(start), _as_cell(goal)
    if costmap.lethal(*s):
        raise NoApproachExists(f"start {s} is lethal")
    if s == g:
        return Path()
    carrot = carrot_point(costmap, s, g)
    if carrot is not None:
        try:
            return plan_point_goal(costmap, s, carrot, connectivity)
        except (NoPathExists, GoalUntraversable):
            pass

    reach = _reachable_costs(costmap, s, connectivity)
    r2 = search_radius * search_radius

    def d2(c):
        return (c[0] - g[0]) ** 2 + (c[1] - g[1]) ** 2

    near = [c for c in reach if d2(c) <= r2]
    if not near:
        raise NoApproachExists(f"no reachable free cell within {search_radius} of {g}")
    best = min(near, key=lambda c: (d2(c), reach[c], c[1], c[0]))
    if best == s:
        return Path()
    return plan_point_goal(costmap, s, best, connectivity)


class NavStatus(enum.Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    BLOCKED = "Blocked"


class PathFollower:
    """Drives the simulated robot along a path, one cell per world tick.

    Each :meth:`tick` checks the next cell against the current costmap and
    queues it on the robot; ``world.step`` performs the move. A cell that has
    turned lethal since planning yields ``BLOCKED`` and clears the queue.
    """

    def __init__(self, world, path: Path, costmap_fn: Callable[[], Costmap]):
        self.world = world
        self.remaining = list(path.cells)
        self.costmap_fn = costmap_fn
        self.target = path.end

    def tick(self) -> NavStatus:
        robot = self.world.robot
        if robot.motion:
            return NavStatus.RUNNING
        if not self.remaining:
            return NavStatus.SUCCESS
        nxt = self.remaining[0]
        cm = self.costmap_fn()
        adjacent = max(abs(nxt[0] - robot.pose.x), abs(nxt[1] - robot.pose.y)) == 1
        if cm.lethal(*nxt) or not adjacent:
            self.remaining = []
            robot.motion.clear()
            return NavStatus.BLOCKED
        self.remaining.pop(0)
        robot.motion.append(nxt)
        return NavStatus.RUNNING


def path_follow(world, path: Path, costmap_fn: Callable[[], Costmap]) -> NavStatus:
    """Run a :class:`PathFollower` to completion, stepping the world each tick."""
    from .world import step

    follower = PathFollower(world, path, costmap_fn)
    while True:
        status = follower.tick()
        if status is not NavStatus.RUNNING:
            return status
        step(world)
