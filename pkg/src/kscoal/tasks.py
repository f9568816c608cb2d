"""Task payloads, pursuit geometry, and the built-in utility surrogates.

The three utilities (capture, defense, exploration) are deliberately simple
closed forms with the qualitative shape that matters for coalition search:
nonnegative, zero for empty coalitions, and saturating so that piling more
robots onto one task stops paying off.  Documented saturation points:

* capture: full angular coverage (g = 1) with the best interception time
  attained; past that, adding pursuers changes nothing.  For equidistant,
  equal-speed pursuers this is simply g = 1.
* defense: ``n_req`` filled encirclement slots; past that a small bonus
  decays geometrically, so marginals strictly shrink (guaranteed for
  equidistant members, e.g. on the encirclement ring).
* exploration: diminishing everywhere for uniform-speed scout teams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import (
    CoalitionStructure,
    RobotId,
    TaskDescriptor,
    TaskId,
    TaskKind,
    UtilityFunction,
)

Point = tuple[float, float]


class DegenerateGeometryError(ValueError):
    """Equal speeds (alpha = 1): the capture boundary is a half plane."""


class Team(str, Enum):
    SCOUT = "scout"
    SWAT = "swat"
    TARGET = "target"


class RobotStatus(str, Enum):
    ACTIVE = "active"
    CAPTURED = "captured"


@dataclass(frozen=True)
class Circle:
    center: Point
    radius: float


def apollonius_circle(p1: Point, p2: Point, alpha: float) -> Circle:
    """Boundary of {p : |p - p1| <= alpha * |p - p2|}.

    For alpha < 1 the set is the closed disk returned here (p1's side); for
    alpha > 1 it is the closed exterior (the circle then surrounds p2).
    """
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if abs(alpha - 1.0) < 1e-12:
        raise DegenerateGeometryError("alpha = 1 gives a half plane, not a circle")
    a2 = alpha * alpha
    cx = (p1[0] - a2 * p2[0]) / (1.0 - a2)
    cy = (p1[1] - a2 * p2[1]) / (1.0 - a2)
    d = math.hypot(p1[0] - p2[0], p1[1] - p2[1])
    return Circle(center=(cx, cy), radius=alpha * d / abs(1.0 - a2))


def _ray_hits_disk(origin: Point, direction: Point, circle: Circle) -> bool:
    ox = origin[0] - circle.center[0]
    oy = origin[1] - circle.center[1]
    b = 2.0 * (direction[0] * ox + direction[1] * oy)
    c = ox * ox + oy * oy - circle.radius * circle.radius
    if c <= 0.0:
        return True  # starts inside
    disc = b * b - 4.0 * c
    if disc < 0.0:
        return False
    return -b + math.sqrt(disc) >= 0.0


def escape_ray_blocked(
    target: Point, direction: Point, pursuer: Point, speed_ratio: float
) -> bool:
    """Can the pursuer reach some point of the escape ray first?

    `speed_ratio` is pursuer speed over target speed.  A faster pursuer
    blocks every direction (it owns the far field); at equal speed only
    directions with a component toward the pursuer; a slower pursuer only
    blocks rays crossing its capture disk.
    """
    if speed_ratio <= 0.0:
        return False
    if speed_ratio > 1.0 + 1e-12:
        return True
    dx, dy = pursuer[0] - target[0], pursuer[1] - target[1]
    if abs(speed_ratio - 1.0) <= 1e-12:
        return direction[0] * dx + direction[1] * dy > 0.0
    if dx == 0.0 and dy == 0.0:
        return True  # pursuer sits on the target
    disk = apollonius_circle(pursuer, target, speed_ratio)
    return _ray_hits_disk(target, direction, disk)


class KinematicsView(Protocol):
    """Positions and reference speeds for robots, keyed by robot id."""

    def position(self, robot: RobotId) -> Point: ...

    def speed(self, robot: RobotId) -> float: ...


@dataclass(frozen=True)
class CaptureTask:
    target_id: int
    target_pos: Point
    target_speed: float


@dataclass(frozen=True)
class DefenseTask:
    cluster_center: Point
    cluster_spread: float
    resource_count: int


@dataclass(frozen=True)
class ExplorationTask:
    region: tuple[float, float, float, float]  # x0, y0, x1, y1
    staleness: float


def capture_utility(
    coalition: Iterable[RobotId],
    task: CaptureTask,
    view: KinematicsView,
    weight: float = 1.0,
    n_rays: int = 64,
) -> float:
    """Blocked-escape fraction over deterministic rays, scaled by closing time.

    u = weight * g / (1 + t_min) with g the fraction of `n_rays` escape
    directions that enter some member's capture disk and t_min the best
    straight-line interception time.  A coalition of strictly slower
    pursuers that does not fully surround the target is worth 0.
    """
    members = sorted(set(coalition))
    if not members:
        return 0.0
    tx, ty = task.target_pos
    ratios = []
    times = []
    for i in members:
        v = view.speed(i)
        px, py = view.position(i)
        dist = math.hypot(px - tx, py - ty)
        times.append(dist / v if v > 0 else math.inf)
        if task.target_speed <= 0.0:
            ratios.append(math.inf if v > 0 else 0.0)
        else:
            ratios.append(v / task.target_speed)
    blocked = 0
    for j in range(n_rays):
        theta = 2.0 * math.pi * j / n_rays
        direction = (math.cos(theta), math.sin(theta))
        for i, ratio in zip(members, ratios):
            if escape_ray_blocked(task.target_pos, direction, view.position(i), ratio):
                blocked += 1
                break
    g = blocked / n_rays
    if g < 1.0 and all(r < 1.0 for r in ratios):
        return 0.0
    t_min = min(times)
    if not math.isfinite(t_min):
        return 0.0
    return weight * g / (1.0 + t_min)


def encirclement_slots(cluster_spread: float, capture_range: float) -> int:
    """Members needed to close a ring of radius spread + d_c at 2*d_c spacing."""
    circumference = 2.0 * math.pi * (cluster_spread + capture_range)
    return max(1, math.ceil(circumference / (2.0 * capture_range)))


def defense_utility(
    coalition: Iterable[RobotId],
    task: DefenseTask,
    view: KinematicsView,
    weight: float = 1.0,
    capture_range: float = 3.0,
) -> float:
    """Resource value scaled by slot occupancy and member proximity.

    Linear in coalition size up to n_req encirclement slots; past that a
    geometric bonus with total mass 0.5/n_req keeps marginals strictly
    positive but strictly shrinking.
    """
    members = sorted(set(coalition))
    if not members:
        return 0.0
    n_req = encirclement_slots(task.cluster_spread, capture_range)
    n = len(members)
    if n <= n_req:
        size_factor = n / n_req
    else:
        size_factor = 1.0 + (0.5 / n_req) * (1.0 - 2.0 ** (n_req - n))
    cx, cy = task.cluster_center
    reach = task.cluster_spread + capture_range
    prox = 0.0
    for i in members:
        px, py = view.position(i)
        prox += 1.0 / (1.0 + math.hypot(px - cx, py - cy) / reach)
    prox /= n
    return weight * task.resource_count * size_factor * prox


def exploration_utility(
    coalition: Iterable[RobotId],
    task: ExplorationTask,
    view: KinematicsView,
    weight: float = 0.5,
) -> float:
    """Staleness relief, concave in the summed scout speed over the region."""
    members = sorted(set(coalition))
    if not members or task.staleness <= 0.0:
        return 0.0
    x0, y0, x1, y1 = task.region
    diag = math.hypot(x1 - x0, y1 - y0)
    if diag <= 0.0:
        return 0.0
    total_speed = sum(view.speed(i) for i in members)
    return weight * task.staleness * (1.0 - 1.0 / (1.0 + total_speed / diag))


# -- world snapshot -> coalition structure -----------------------------------


@dataclass
class ProblemParams:
    """Knobs for turning a world snapshot into a coalition problem."""

    w_capture: float = 1.0
    w_defense: float = 1.0
    w_explore: float = 0.5
    n_rays: int = 64
    capture_range: float = 3.0
    comm_radius: float = 20.0
    k_uniform: int = 2
    resource_clusters: int = 3


class CompositeUtility(UtilityFunction):
    """Dispatch on task payload; memoized per snapshot."""

    def __init__(
        self,
        tasks: Sequence[TaskDescriptor],
        robot_ids: Sequence[RobotId],
        view: KinematicsView,
        params: ProblemParams,
    ):
        self.tasks = tuple(tasks)
        self.robot_ids = tuple(robot_ids)
        self.view = view
        self.params = params
        self._cache: dict[tuple[TaskId, frozenset[int]], float] = {}

    def value(self, coalition: frozenset[int], task: TaskId) -> float:
        key = (task, coalition)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        payload = self.tasks[task].payload
        members = [self.robot_ids[i] for i in coalition]
        if isinstance(payload, CaptureTask):
            v = capture_utility(
                members, payload, self.view, self.params.w_capture, self.params.n_rays
            )
        elif isinstance(payload, DefenseTask):
            v = defense_utility(
                members, payload, self.view, self.params.w_defense, self.params.capture_range
            )
        elif isinstance(payload, ExplorationTask):
            v = exploration_utility(members, payload, self.view, self.params.w_explore)
        else:
            v = 0.0
        self._cache[key] = v
        return v


def kmeans_clusters(points: np.ndarray, k: int, iters: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Plain Lloyd iterations with a deterministic quantile init."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    k = min(k, n)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    centers = pts[order[np.linspace(0, n - 1, k).astype(int)]].copy()
    labels = np.zeros(n, dtype=int)
    for it in range(iters):
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        if (new_labels == labels).all() and it > 0:
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if mask.any():
                centers[j] = pts[mask].mean(axis=0)
    return centers, labels


def build_problem(world, params: ProblemParams) -> CoalitionStructure:
    """Formulate the coalition problem from what the team has detected.

    `world` must expose: robots (with .id, .team, .status, .pose, .speed_ref),
    detected_targets (target id -> last seen position), detected_resources
    (resource id -> position), region_bounds(), region_staleness(), and
    position/speed lookups for the utility view.  Only detected entities
    become tasks.  Planning robots are the swat and scout teams in id order;
    the comm graph is a disk graph over swat robots, scout robots talk to
    each other freely and bridge to their nearest in-range swat robot.
    """
    swat = [r for r in world.robots if r.team is Team.SWAT and r.status is RobotStatus.ACTIVE]
    scout = [r for r in world.robots if r.team is Team.SCOUT and r.status is RobotStatus.ACTIVE]
    planning = sorted(swat, key=lambda r: r.id) + sorted(scout, key=lambda r: r.id)
    robot_ids = [r.id for r in planning]
    index_of = {rid: i for i, rid in enumerate(robot_ids)}

    descriptors: list[TaskDescriptor] = []
    capture_ids: list[TaskId] = []
    defense_ids: list[TaskId] = []
    explore_ids: list[TaskId] = []

    for tid in sorted(world.detected_targets):
        if world.target_is_active(tid):
            pos = world.detected_targets[tid]
            descriptors.append(
                TaskDescriptor(
                    id=len(descriptors),
                    kind=TaskKind.CAPTURE,
                    name=f"capture:{tid}",
                    payload=CaptureTask(
                        target_id=tid, target_pos=pos, target_speed=world.speed(tid)
                    ),
                )
            )
            capture_ids.append(descriptors[-1].id)

    detected_pts = [world.detected_resources[rid] for rid in sorted(world.detected_resources)]
    if detected_pts:
        centers, labels = kmeans_clusters(
            np.array(detected_pts), params.resource_clusters
        )
        cluster_order = sorted(range(len(centers)), key=lambda j: tuple(centers[j]))
        for rank, j in enumerate(cluster_order):
            mask = labels == j
            if not mask.any():
                continue
            pts = np.array(detected_pts)[mask]
            spread = float(np.linalg.norm(pts - centers[j], axis=1).mean()) if len(pts) else 0.0
            descriptors.append(
                TaskDescriptor(
                    id=len(descriptors),
                    kind=TaskKind.DEFENSE,
                    name=f"defense:{rank}",
                    payload=DefenseTask(
                        cluster_center=(float(centers[j][0]), float(centers[j][1])),
                        cluster_spread=max(spread, 1.0),
                        resource_count=int(mask.sum()),
                    ),
                )
            )
            defense_ids.append(descriptors[-1].id)

    for ridx, bounds in enumerate(world.region_bounds()):
        descriptors.append(
            TaskDescriptor(
                id=len(descriptors),
                kind=TaskKind.EXPLORATION,
                name=f"explore:{ridx}",
                payload=ExplorationTask(region=bounds, staleness=world.region_staleness(ridx)),
            )
        )
        explore_ids.append(descriptors[-1].id)

    idle = TaskDescriptor(id=len(descriptors), kind=TaskKind.IDLE, name="idle")
    descriptors.append(idle)

    swat_caps = frozenset(capture_ids) | frozenset(defense_ids) | {idle.id}
    scout_caps = frozenset(explore_ids) | {idle.id}
    capabilities = tuple(
        swat_caps if world.robot(rid).team is Team.SWAT else scout_caps
        for rid in robot_ids
    )

    edges: set[tuple[int, int]] = set()
    swat_ids = [r.id for r in sorted(swat, key=lambda r: r.id)]
    for a_pos, a in enumerate(swat_ids):
        ax, ay = world.position(a)
        for b in swat_ids[a_pos + 1 :]:
            bx, by = world.position(b)
            if math.hypot(ax - bx, ay - by) <= params.comm_radius:
                edges.add((index_of[a], index_of[b]))
    scout_ids = [r.id for r in sorted(scout, key=lambda r: r.id)]
    for a_pos, a in enumerate(scout_ids):
        for b in scout_ids[a_pos + 1 :]:
            edges.add((index_of[a], index_of[b]))
    for a in scout_ids:
        ax, ay = world.position(a)
        best, best_d = None, params.comm_radius
        for b in swat_ids:
            bx, by = world.position(b)
            d = math.hypot(ax - bx, ay - by)
            if d <= best_d:
                best, best_d = b, d
        if best is not None:
            edges.add(tuple(sorted((index_of[a], index_of[best]))))

    utility = CompositeUtility(descriptors, robot_ids, world, params)
    return CoalitionStructure(
        n_robots=len(robot_ids),
        tasks=tuple(descriptors),
        capabilities=capabilities,
        utility=utility,
        k_indices=(params.k_uniform,) * len(robot_ids),
        comm_edges=frozenset(edges),
    )
