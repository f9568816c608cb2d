"""Dynamic territory-defense scenario: kinematics, resources, and replanning.

A single driver loop owns the world.  Each step: sense, replan on the
trigger (periodic or after a capture), move everyone, spawn resources,
resolve captures, resolve resource taking, advance time.  Evolution is a
deterministic function of the scenario config and seed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Assignment
from .engine import EngineConfig, FixedAssignment, run_to_convergence
from .tasks import ProblemParams, RobotStatus, Team, build_problem

log = logging.getLogger(__name__)

Pose = tuple[float, float, float]


@dataclass
class RobotState:
    id: int
    team: Team
    pose: Pose
    speed_ref: float
    sensing_radius: float
    status: RobotStatus = RobotStatus.ACTIVE


@dataclass(frozen=True)
class GMMParams:
    """Mixture components as (weight, mean, covariance) triples."""

    components: tuple[tuple[float, tuple[float, float], tuple[tuple[float, float], tuple[float, float]]], ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("need at least one component")
        weights = [w for w, _, _ in self.components]
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        for _, _, cov in self.components:
            c = np.asarray(cov, dtype=float)
            if not np.allclose(c, c.T):
                raise ValueError("covariance must be symmetric")
            if np.linalg.eigvalsh(c).min() < -1e-12:
                raise ValueError("covariance must be PSD")


@dataclass
class ScenarioConfig:
    workspace: tuple[float, float] = (100.0, 100.0)
    n_swat: int = 10
    n_scout: int = 3
    n_targets: int = 5
    swat_speed: float = 1.0
    scout_speed: float = 6.0
    target_speed: float = 0.9
    swat_sensing: float = 5.0
    scout_sensing: float = 10.0
    target_sensing: float = 7.5
    capture_range: float = 3.0  # d_c
    take_range: float = 2.0  # d_s
    resource_period: int = 5  # T_r
    gmm: GMMParams | None = None  # None: 3 clusters drawn from the seed
    gmm_std: float = 0.75
    regions: tuple[int, int] = (3, 3)
    replan_period: int = 5
    horizon: int = 200
    seed: int = 0
    comm_radius: float = 20.0
    k_uniform: int = 2
    dt: float = 1.0
    engine_max_rounds: int = 40
    engine_quiescence: int = 2
    w_capture: float = 1.0
    w_defense: float = 1.0
    w_explore: float = 0.5

    def problem_params(self) -> ProblemParams:
        return ProblemParams(
            w_capture=self.w_capture,
            w_defense=self.w_defense,
            w_explore=self.w_explore,
            capture_range=self.capture_range,
            comm_radius=self.comm_radius,
            k_uniform=self.k_uniform,
        )

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "n_swat", "n_scout", "n_targets", "swat_speed", "scout_speed",
                "target_speed", "swat_sensing", "scout_sensing", "target_sensing",
                "capture_range", "take_range", "resource_period", "gmm_std",
                "replan_period", "horizon", "seed", "comm_radius", "k_uniform",
                "dt", "engine_max_rounds", "engine_quiescence",
                "w_capture", "w_defense", "w_explore",
            )
        }
        d["workspace"] = list(self.workspace)
        d["regions"] = list(self.regions)
        if self.gmm is not None:
            d["gmm"] = [
                {"weight": w, "mean": list(mu), "cov": [list(r) for r in cov]}
                for w, mu, cov in self.gmm.components
            ]
        return d

    @staticmethod
    def from_dict(d: dict) -> "ScenarioConfig":
        kwargs = dict(d)
        if "workspace" in kwargs:
            kwargs["workspace"] = tuple(kwargs["workspace"])
        if "regions" in kwargs:
            kwargs["regions"] = tuple(kwargs["regions"])
        if kwargs.get("gmm") is not None:
            comps = tuple(
                (c["weight"], tuple(c["mean"]), tuple(tuple(r) for r in c["cov"]))
                for c in kwargs["gmm"]
            )
            kwargs["gmm"] = GMMParams(components=comps)
        return ScenarioConfig(**kwargs)


def step_unicycle(
    pose: Pose,
    control: tuple[float, float],
    dt: float,
    bounds: tuple[float, float] | None = None,
) -> Pose:
    """Exact unicycle integration; straight-line limit below |omega| = 1e-9."""
    x, y, theta = pose
    v, omega = control
    if abs(omega) < 1e-9:
        x1 = x + v * math.cos(theta) * dt
        y1 = y + v * math.sin(theta) * dt
        theta1 = theta + omega * dt
    else:
        theta1 = theta + omega * dt
        r = v / omega
        x1 = x + r * (math.sin(theta1) - math.sin(theta))
        y1 = y - r * (math.cos(theta1) - math.cos(theta))
    theta1 = (theta1 + math.pi) % (2.0 * math.pi) - math.pi
    if bounds is not None:
        x1 = min(max(x1, 0.0), bounds[0])
        y1 = min(max(y1, 0.0), bounds[1])
    return (x1, y1, theta1)


def sample_resource(
    gmm: GMMParams, rng: np.random.Generator, workspace: tuple[float, float]
) -> tuple[float, float]:
    """Draw one point: component by weight, then its bivariate normal.

    Points outside the workspace are rejected and resampled (the draw order
    stays deterministic under a fixed generator state).
    """
    weights = np.array([w for w, _, _ in gmm.components])
    for _ in range(1000):
        idx = int(rng.choice(len(weights), p=weights))
        _, mean, cov = gmm.components[idx]
        c = np.asarray(cov, dtype=float)
        # cholesky of a PSD matrix with a tiny jitter for the degenerate case
        L = np.linalg.cholesky(c + 1e-15 * np.eye(2))
        pt = np.asarray(mean, dtype=float) + L @ rng.standard_normal(2)
        if 0.0 <= pt[0] <= workspace[0] and 0.0 <= pt[1] <= workspace[1]:
            return (float(pt[0]), float(pt[1]))
    return (
        float(min(max(pt[0], 0.0), workspace[0])),
        float(min(max(pt[1], 0.0), workspace[1])),
    )


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def steer_towards(pose: Pose, goal: tuple[float, float], speed_ref: float,
                  omega_max: float = 2.0 * math.pi) -> tuple[float, float]:
    """Heading controller: turn toward the goal, slow down while misaligned."""
    dx, dy = goal[0] - pose[0], goal[1] - pose[1]
    dist = math.hypot(dx, dy)
    if dist < 1e-9:
        return (0.0, 0.0)
    err = _wrap_angle(math.atan2(dy, dx) - pose[2])
    omega = max(-omega_max, min(omega_max, 4.0 * err))
    v = speed_ref * max(0.0, math.cos(err))
    return (min(v, dist), omega)


class WorldState:
    """Mutable scenario state; only the driver loop touches it."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.time = 0
        self.rng = np.random.default_rng(cfg.seed)
        self.robots: list[RobotState] = []
        w, h = cfg.workspace
        rid = 0
        for _ in range(cfg.n_swat):
            self.robots.append(self._spawn(rid, Team.SWAT, cfg.swat_speed, cfg.swat_sensing))
            rid += 1
        for _ in range(cfg.n_scout):
            self.robots.append(self._spawn(rid, Team.SCOUT, cfg.scout_speed, cfg.scout_sensing))
            rid += 1
        for _ in range(cfg.n_targets):
            self.robots.append(self._spawn(rid, Team.TARGET, cfg.target_speed, cfg.target_sensing))
            rid += 1
        if cfg.gmm is not None:
            self.gmm = cfg.gmm
        else:
            comps = []
            for _ in range(3):
                mu = (
                    float(self.rng.uniform(0.2 * w, 0.8 * w)),
                    float(self.rng.uniform(0.2 * h, 0.8 * h)),
                )
                var = cfg.gmm_std**2
                comps.append((1.0 / 3.0, mu, ((var, 0.0), (0.0, var))))
            self.gmm = GMMParams(components=tuple(comps))
        self.resources: dict[int, tuple[float, float]] = {}
        self.next_resource_id = 0
        self.detected_targets: dict[int, tuple[float, float]] = {}
        self.detected_resources: dict[int, tuple[float, float]] = {}
        gx, gy = cfg.regions
        # slightly stale at t=0 so exploration has value from the first replan
        self.region_visits = [-1.0] * (gx * gy)
        self.score_captured = 0
        self.score_taken = 0
        self.capture_event = False
        self.assignment_names: dict[int, str] = {}
        self.walk_heading: dict[int, float] = {}
        self.walk_left: dict[int, int] = {}
        self.total_messages = 0
        self.replans = 0
        self.replan_utilities: list[float] = []

    def _spawn(self, rid: int, team: Team, speed: float, sensing: float) -> RobotState:
        w, h = self.cfg.workspace
        pose = (
            float(self.rng.uniform(0, w)),
            float(self.rng.uniform(0, h)),
            float(self.rng.uniform(-math.pi, math.pi)),
        )
        return RobotState(id=rid, team=team, pose=pose, speed_ref=speed, sensing_radius=sensing)

    # -- protocol used by tasks.build_problem and the utilities --------------

    def robot(self, rid: int) -> RobotState:
        return self.robots[rid]

    def position(self, rid: int) -> tuple[float, float]:
        p = self.robots[rid].pose
        return (p[0], p[1])

    def speed(self, rid: int) -> float:
        return self.robots[rid].speed_ref

    def target_is_active(self, tid: int) -> bool:
        return self.robots[tid].status is RobotStatus.ACTIVE

    def region_bounds(self) -> list[tuple[float, float, float, float]]:
        gx, gy = self.cfg.regions
        w, h = self.cfg.workspace
        out = []
        for j in range(gy):
            for i in range(gx):
                out.append((i * w / gx, j * h / gy, (i + 1) * w / gx, (j + 1) * h / gy))
        return out

    def region_index(self, x: float, y: float) -> int:
        gx, gy = self.cfg.regions
        w, h = self.cfg.workspace
        i = min(int(x / w * gx), gx - 1)
        j = min(int(y / h * gy), gy - 1)
        return j * gx + i

    def region_staleness(self, ridx: int) -> float:
        return self.time - self.region_visits[ridx]


def score(world: WorldState) -> int:
    return world.score_captured - world.score_taken


def target_policy(t: RobotState, world: WorldState) -> tuple[float, float]:
    """Head to the nearest sensed resource, repelled by nearby swat robots.

    With nothing sensed, keep a seeded random-walk heading with a 20-step
    persistence.
    """
    x, y, _ = t.pose
    nearest, nearest_d = None, t.sensing_radius
    for pos in world.resources.values():
        d = math.hypot(pos[0] - x, pos[1] - y)
        if d <= nearest_d:
            nearest, nearest_d = pos, d
    if nearest is not None:
        gx, gy = nearest[0] - x, nearest[1] - y
        norm = math.hypot(gx, gy)
        pull = (gx / norm, gy / norm) if norm > 1e-9 else (0.0, 0.0)
    else:
        left = world.walk_left.get(t.id, 0)
        if left <= 0:
            world.walk_heading[t.id] = float(world.rng.uniform(-math.pi, math.pi))
            world.walk_left[t.id] = 20
        world.walk_left[t.id] = world.walk_left.get(t.id, 20) - 1
        hd = world.walk_heading[t.id]
        pull = (math.cos(hd), math.sin(hd))
    rx = ry = 0.0
    for r in world.robots:
        if r.team is not Team.SWAT or r.status is not RobotStatus.ACTIVE:
            continue
        d = math.hypot(r.pose[0] - x, r.pose[1] - y)
        if 1e-9 < d <= t.sensing_radius:
            w = 2.5 * (t.sensing_radius - d) / t.sensing_radius
            rx -= w * (r.pose[0] - x) / d
            ry -= w * (r.pose[1] - y) / d
    hx, hy = pull[0] + rx, pull[1] + ry
    if math.hypot(hx, hy) < 1e-9:
        return (0.0, 0.0)
    goal = (x + 10.0 * hx, y + 10.0 * hy)
    return steer_towards(t.pose, goal, t.speed_ref)


def _sweep_waypoint(
    pose: Pose, region: tuple[float, float, float, float], row_h: float
) -> tuple[float, float]:
    """Boustrophedon: even rows sweep +x, odd rows -x, then climb one row."""
    x0, y0, x1, y1 = region
    x, y, _ = pose
    n_rows = max(1, math.ceil((y1 - y0) / row_h))
    j = min(max(int((y - y0) / row_h), 0), n_rows - 1)
    y_row = min(y0 + (j + 0.5) * row_h, y1 - 0.5 * row_h)
    margin = 0.5 * row_h
    x_end = x1 - margin if j % 2 == 0 else x0 + margin
    if abs(y - y_row) > 0.6 * row_h:
        return (x, y_row)
    if abs(x - x_end) <= 0.6 * row_h:
        if j >= n_rows - 1:
            return (x_end, y0 + 0.5 * row_h)
        return (x_end, y_row + row_h)
    return (x_end, y_row)


def execute_assignment_motion(
    world: WorldState, assignment_names: dict[int, str]
) -> dict[int, tuple[float, float]]:
    """Turn the task map into per-robot unicycle controls.

    Capture coalitions approach the target spaced at evenly distributed
    angles; defense coalitions occupy encirclement slots at the capture
    range around the cluster center; scouts sweep their region in rows one
    sensing radius apart.  Idle robots hold still.
    """
    controls: dict[int, tuple[float, float]] = {}
    groups: dict[str, list[int]] = {}
    for rid in sorted(assignment_names):
        groups.setdefault(assignment_names[rid], []).append(rid)
    cfg = world.cfg
    for name, members in sorted(groups.items()):
        if name == "idle":
            for rid in members:
                controls[rid] = (0.0, 0.0)
            continue
        kind, _, arg = name.partition(":")
        if kind == "capture":
            tid = int(arg)
            tgt = world.detected_targets.get(tid)
            if tgt is None:
                for rid in members:
                    controls[rid] = (0.0, 0.0)
                continue
            n = len(members)
            for idx, rid in enumerate(members):
                phi = 2.0 * math.pi * idx / n
                offset = 0.5 * cfg.capture_range
                goal = (tgt[0] + offset * math.cos(phi), tgt[1] + offset * math.sin(phi))
                controls[rid] = steer_towards(world.robots[rid].pose, goal, world.robots[rid].speed_ref)
        elif kind == "defense":
            center, spread = _defense_geometry(world, int(arg))
            n = len(members)
            for idx, rid in enumerate(members):
                phi = 2.0 * math.pi * idx / n
                goal = (
                    center[0] + cfg.capture_range * math.cos(phi),
                    center[1] + cfg.capture_range * math.sin(phi),
                )
                controls[rid] = steer_towards(world.robots[rid].pose, goal, world.robots[rid].speed_ref)
        elif kind == "explore":
            region = world.region_bounds()[int(arg)]
            for rid in members:
                r = world.robots[rid]
                goal = _sweep_waypoint(r.pose, region, r.sensing_radius)
                controls[rid] = steer_towards(r.pose, goal, r.speed_ref)
        else:
            for rid in members:
                controls[rid] = (0.0, 0.0)
    return controls


def _defense_geometry(world: WorldState, rank: int) -> tuple[tuple[float, float], float]:
    """Cluster center for the rank-th defense task (same ordering as build_problem)."""
    from .tasks import kmeans_clusters

    pts = [world.detected_resources[r] for r in sorted(world.detected_resources)]
    if not pts:
        return ((world.cfg.workspace[0] / 2, world.cfg.workspace[1] / 2), 1.0)
    centers, labels = kmeans_clusters(np.array(pts), 3)
    order = sorted(range(len(centers)), key=lambda j: tuple(centers[j]))
    occupied = [j for j in order if (labels == j).any()]
    j = occupied[min(rank, len(occupied) - 1)]
    return ((float(centers[j][0]), float(centers[j][1])), 1.0)


def _replan(world: WorldState, coordinate: bool) -> None:
    world.replans += 1
    if not _planning_ids(world):
        world.assignment_names = {}
        return
    if not coordinate:
        planning = [
            r.id
            for r in world.robots
            if r.team in (Team.SWAT, Team.SCOUT) and r.status is RobotStatus.ACTIVE
        ]
        world.assignment_names = {rid: "idle" for rid in planning}
        return
    s = build_problem(world, world.cfg.problem_params())
    robot_ids = _planning_ids(world)
    name_to_id = {t.name: t.id for t in s.tasks}
    warm_task_of = tuple(
        name_to_id.get(world.assignment_names.get(rid, "idle"), s.idle_task)
        for rid in robot_ids
    )
    warm_task_of = tuple(
        t if t in s.capabilities[i] else s.idle_task for i, t in enumerate(warm_task_of)
    )
    cfg = EngineConfig(
        quiescence_rounds=world.cfg.engine_quiescence,
        max_rounds=world.cfg.engine_max_rounds,
    )
    result, stats = run_to_convergence(
        s, None, cfg, FixedAssignment(Assignment(task_of=warm_task_of))
    )
    world.total_messages += stats.total_messages
    world.replan_utilities.append(stats.final_utility)
    world.assignment_names = {
        rid: s.tasks[result.task_of[i]].name for i, rid in enumerate(robot_ids)
    }


def _planning_ids(world: WorldState) -> list[int]:
    swat = [r.id for r in world.robots if r.team is Team.SWAT and r.status is RobotStatus.ACTIVE]
    scout = [r.id for r in world.robots if r.team is Team.SCOUT and r.status is RobotStatus.ACTIVE]
    return sorted(swat) + sorted(scout)


def world_step(world: WorldState, cfg: ScenarioConfig, coordinate: bool = True) -> WorldState:
    """Advance one tick: sense, replan, move, spawn, capture, take, t += 1."""
    # sense
    for r in world.robots:
        if r.status is not RobotStatus.ACTIVE or r.team is Team.TARGET:
            continue
        x, y, _ = r.pose
        for other in world.robots:
            if other.team is Team.TARGET and other.status is RobotStatus.ACTIVE:
                d = math.hypot(other.pose[0] - x, other.pose[1] - y)
                if d <= r.sensing_radius:
                    world.detected_targets[other.id] = (other.pose[0], other.pose[1])
        for res_id, pos in world.resources.items():
            if math.hypot(pos[0] - x, pos[1] - y) <= r.sensing_radius:
                world.detected_resources[res_id] = pos
        if r.team is Team.SCOUT:
            world.region_visits[world.region_index(x, y)] = world.time

    # replan on schedule or after a capture
    if world.time % cfg.replan_period == 0 or world.capture_event:
        world.capture_event = False
        _replan(world, coordinate)

    # motion
    controls = execute_assignment_motion(world, world.assignment_names)
    for r in world.robots:
        if r.status is not RobotStatus.ACTIVE:
            continue
        if r.team is Team.TARGET:
            ctrl = target_policy(r, world)
        else:
            ctrl = controls.get(r.id, (0.0, 0.0))
        r.pose = step_unicycle(r.pose, ctrl, cfg.dt, bounds=cfg.workspace)

    # resource generation
    if (world.time + 1) % cfg.resource_period == 0:
        pos = sample_resource(world.gmm, world.rng, cfg.workspace)
        world.resources[world.next_resource_id] = pos
        world.next_resource_id += 1

    # capture resolution: assigned swat within d_c immobilizes the target
    capture_of: dict[int, list[int]] = {}
    for rid, name in world.assignment_names.items():
        if name.startswith("capture:"):
            capture_of.setdefault(int(name.split(":")[1]), []).append(rid)
    for tid, hunters in sorted(capture_of.items()):
        t = world.robots[tid]
        if t.status is not RobotStatus.ACTIVE:
            continue
        for rid in hunters:
            h = world.robots[rid]
            if math.hypot(h.pose[0] - t.pose[0], h.pose[1] - t.pose[1]) <= cfg.capture_range:
                t.status = RobotStatus.CAPTURED
                world.score_captured += 1
                world.capture_event = True
                break

    # resource taking by active targets
    for r in world.robots:
        if r.team is not Team.TARGET or r.status is not RobotStatus.ACTIVE:
            continue
        for res_id in sorted(world.resources):
            pos = world.resources[res_id]
            if math.hypot(pos[0] - r.pose[0], pos[1] - r.pose[1]) <= cfg.take_range:
                del world.resources[res_id]
                world.detected_resources.pop(res_id, None)
                world.score_taken += 1
                break

    world.time += 1
    return world


def run_scenario(
    cfg: ScenarioConfig, coordinate: bool = True, trace: bool = False
) -> tuple[dict, list[dict], list[dict]]:
    """Run the full horizon; returns (summary, per-step records, trajectories)."""
    world = WorldState(cfg)
    records: list[dict] = []
    trajectories: list[dict] = []
    for _ in range(cfg.horizon):
        world_step(world, cfg, coordinate=coordinate)
        digest = hashlib.sha256(
            json.dumps(sorted(world.assignment_names.items())).encode()
        ).hexdigest()[:16]
        records.append(
            {
                "time": world.time,
                "captured": world.score_captured,
                "taken": world.score_taken,
                "score": score(world),
                "resources": len(world.resources),
                "messages": world.total_messages,
                "utility": world.replan_utilities[-1] if world.replan_utilities else 0.0,
                "assignment": digest,
            }
        )
        if trace:
            for r in world.robots:
                trajectories.append(
                    {
                        "time": world.time,
                        "robot": r.id,
                        "team": r.team.value,
                        "x": r.pose[0],
                        "y": r.pose[1],
                        "theta": r.pose[2],
                        "status": r.status.value,
                    }
                )
    n_rep = len(world.replan_utilities)
    summary = {
        "steps": world.time,
        "seed": cfg.seed,
        "captured": world.score_captured,
        "taken": world.score_taken,
        "score": score(world),
        "total_messages": world.total_messages,
        "replans": world.replans,
        "mean_utility": (sum(world.replan_utilities) / n_rep) if n_rep else 0.0,
        "coordinate": coordinate,
    }
    return summary, records, trajectories
