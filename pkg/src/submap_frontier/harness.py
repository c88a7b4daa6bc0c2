"""Deterministic stand-in for a submap-based 2D graph SLAM system.

Nothing here does scan matching or graph optimization.  Pose-graph
solutions are synthesized from ground truth and simulated odometry drift,
which is all the frontier detector needs.
"""

from __future__ import annotations

import math
from collections import deque
from collections.abc import Iterator
from dataclasses import dataclass, field

import numpy as np

from .events import Event, OptimizationDone, PoseGraphSolution, ScanInserted, SubmapFinished
from .geometry import RigidTransform2, wrap_angle
from .grid import DEFAULT_P_HIT, DEFAULT_P_MISS, Scan, Submap, point_to_cell, traverse_rays


class InfeasibleEnvironmentError(ValueError):
    pass


class PoseInObstacleError(ValueError):
    pass


# -- environments ---------------------------------------------------------------


@dataclass
class EnvironmentSpec:
    """``room``: one walled rectangle.  ``ring``: a corridor around a solid core."""

    kind: str = "room"
    width: float = 10.0
    height: float = 10.0
    corridor_width: float = 2.0
    wall_thickness: float = 0.3
    n_obstacles: int = 0
    resolution: float = 0.05


@dataclass
class Environment:
    occupied: np.ndarray  # occupied[a, b] is lattice cell (a + origin[0], b + origin[1])
    origin: tuple[int, int]
    resolution: float
    route: np.ndarray  # closed loop of waypoints through free space
    seed: int
    spec: EnvironmentSpec

    def is_occupied(self, cells: np.ndarray) -> np.ndarray:
        c = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        a = c[:, 0] - self.origin[0]
        b = c[:, 1] - self.origin[1]
        nx, ny = self.occupied.shape
        inside = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
        out = np.zeros(len(c), dtype=bool)
        out[inside] = self.occupied[a[inside], b[inside]]
        return out

    def point_occupied(self, points: np.ndarray) -> np.ndarray:
        return self.is_occupied(np.floor(np.asarray(points) / self.resolution).astype(np.int64))


def _fill(occ: np.ndarray, r: float, x0: float, y0: float, x1: float, y1: float, value=True):
    a0, b0 = int(round(x0 / r)), int(round(y0 / r))
    a1, b1 = int(round(x1 / r)), int(round(y1 / r))
    occ[max(a0, 0):max(a1, 0), max(b0, 0):max(b1, 0)] = value


def free_components(occupied: np.ndarray) -> np.ndarray:
    """4-connected component labels of free cells (-1 on occupied cells)."""
    labels = np.full(occupied.shape, -1, dtype=np.int64)
    nx, ny = occupied.shape
    current = 0
    for start in zip(*np.nonzero(~occupied)):
        if labels[start] >= 0:
            continue
        labels[start] = current
        todo = deque([start])
        while todo:
            a, b = todo.popleft()
            for na, nb in ((a + 1, b), (a - 1, b), (a, b + 1), (a, b - 1)):
                if 0 <= na < nx and 0 <= nb < ny and labels[na, nb] < 0 and not occupied[na, nb]:
                    labels[na, nb] = current
                    todo.append((na, nb))
        current += 1
    return labels


def _route_clear(occ: np.ndarray, r: float, route: np.ndarray, clearance: float) -> bool:
    pts = []
    closed = np.vstack([route, route[:1]])
    for p, q in zip(closed[:-1], closed[1:]):
        n = max(2, int(np.linalg.norm(q - p) / (r / 2)) + 1)
        pts.append(p + (q - p) * np.linspace(0, 1, n)[:, None])
    pts = np.concatenate(pts)
    k = int(math.ceil(clearance / r))
    cells = np.floor(pts / r).astype(np.int64)
    nx, ny = occ.shape
    for dx in range(-k, k + 1):
        for dy in range(-k, k + 1):
            a, b = cells[:, 0] + dx, cells[:, 1] + dy
            if np.any((a < 0) | (a >= nx) | (b < 0) | (b >= ny)):
                return False
            if occ[a, b].any():
                return False
    return True


def generate_environment(seed: int, spec: EnvironmentSpec | None = None) -> Environment:
    """Build a ground-truth bitmap; obstacle placement depends only on ``seed``."""
    spec = spec or EnvironmentSpec()
    r, t = spec.resolution, spec.wall_thickness
    W, H = spec.width, spec.height
    if min(W, H) <= 2 * t + 1.0 or t < r:
        raise InfeasibleEnvironmentError(f"environment {W}x{H} with walls {t} is too small")
    rng = np.random.default_rng(seed)
    nx, ny = int(round(W / r)), int(round(H / r))
    base = np.zeros((nx, ny), dtype=bool)
    base[:, :] = True
    _fill(base, r, t, t, W - t, H - t, False)

    if spec.kind == "room":
        inset = min(1.2, (min(W, H) - 2 * t) / 4)
        lo, hi = t + inset, (W - t - inset, H - t - inset)
        route = np.array([[lo, lo], [hi[0], lo], [hi[0], hi[1]], [lo, hi[1]]])
    elif spec.kind == "ring":
        cw = spec.corridor_width
        core = (t + cw, t + cw, W - t - cw, H - t - cw)
        if core[2] - core[0] < 2 * r or core[3] - core[1] < 2 * r or cw < 0.6:
            raise InfeasibleEnvironmentError(f"no room for a {cw} m corridor in {W}x{H}")
        _fill(base, r, *core, True)
        c = t + cw / 2
        route = np.array([[c, c], [W - c, c], [W - c, H - c], [c, H - c]])
    else:
        raise InfeasibleEnvironmentError(f"unknown environment kind {spec.kind!r}")

    # keep the route off grid lines so beams do not run along cell edges
    route = route + rng.uniform(0.2, 0.8, 2) * r
    clearance = 0.3
    if not _route_clear(base, r, route, clearance):
        raise InfeasibleEnvironmentError("route has no clearance in this environment")
    occ = base
    for _ in range(50):
        occ = base.copy()
        for _ in range(spec.n_obstacles):
            _place_obstacle(occ, rng, spec, route)
        labels = free_components(occ)
        start = tuple(np.floor(route[0] / r).astype(int))
        if _route_clear(occ, r, route, clearance) and np.all(
            labels[tuple(np.floor(route / r).astype(int).T)] == labels[start]
        ):
            break
    else:
        raise InfeasibleEnvironmentError("could not place obstacles without blocking the route")
    return Environment(occ, (0, 0), r, route, seed, spec)


def _place_obstacle(occ, rng, spec: EnvironmentSpec, route: np.ndarray) -> None:
    r, t = spec.resolution, spec.wall_thickness
    W, H = spec.width, spec.height
    if spec.kind == "room":
        # pillars inside the loop the route drives around
        lo, hi = route[0] + 0.6, route[2] - 0.6
        if np.any(hi - lo < 0.4):
            return
        size = rng.uniform(0.3, 0.8, 2)
        x = rng.uniform(lo[0], max(lo[0], hi[0] - size[0]))
        y = rng.uniform(lo[1], max(lo[1], hi[1] - size[1]))
        _fill(occ, r, x, y, x + size[0], y + size[1], True)
    else:
        # bumps sticking out of the outer wall into the corridor
        depth = rng.uniform(0.2, max(0.2, spec.corridor_width / 2 - 0.4))
        length = rng.uniform(0.3, 1.0)
        side = int(rng.integers(4))
        if side in (0, 2):
            x = rng.uniform(t, W - t - length)
            y0, y1 = (t, t + depth) if side == 0 else (H - t - depth, H - t)
            _fill(occ, r, x, y0, x + length, y1, True)
        else:
            y = rng.uniform(t, H - t - length)
            x0, x1 = (t, t + depth) if side == 1 else (W - t - depth, W - t)
            _fill(occ, r, x0, y, x1, y + length, True)


# -- trajectories and sensing ---------------------------------------------------


def plan_trajectory(
    env: Environment,
    step: float = 0.15,
    max_rotation: float = 0.2,
    laps: float = 1.0,
) -> list[RigidTransform2]:
    """Poses along the environment's route loop, turning in place at corners."""
    if step <= 0 or step > 0.2 or max_rotation <= 0 or max_rotation > 0.2:
        raise ValueError("step must be in (0, 0.2] m and max_rotation in (0, 0.2] rad")
    route = env.route
    n = len(route)
    perimeter = sum(np.linalg.norm(route[(i + 1) % n] - route[i]) for i in range(n))
    budget = laps * perimeter
    poses: list[RigidTransform2] = []
    travelled = 0.0
    heading = None
    i = 0
    while travelled < budget - 1e-9:
        p, q = route[i % n], route[(i + 1) % n]
        seg = q - p
        length = float(np.linalg.norm(seg))
        target = math.atan2(seg[1], seg[0])
        if heading is None:
            heading = target
        while abs(wrap_angle(target - heading)) > 1e-12:
            delta = wrap_angle(target - heading)
            heading = wrap_angle(heading + math.copysign(min(abs(delta), max_rotation), delta))
            poses.append(RigidTransform2(p[0], p[1], heading))
        k = max(1, int(math.ceil(length / step)))
        for j in range(k):
            if travelled >= budget - 1e-9:
                break
            pos = p + seg * (j / k)
            poses.append(RigidTransform2(pos[0], pos[1], target))
            travelled += length / k
        i += 1
    return poses


@dataclass
class LidarConfig:
    n_beams: int = 180
    max_range: float = 6.0
    fov: float = 2 * math.pi


_HIT_NUDGE = 1e-6


def simulate_scan(env: Environment, pose: RigidTransform2, lidar: LidarConfig | None = None) -> Scan:
    """Cast beams through the bitmap; hit points are returned in the robot frame."""
    lidar = lidar or LidarConfig()
    origin = np.array([pose.x, pose.y])
    if env.point_occupied(origin[None, :])[0]:
        raise PoseInObstacleError(f"pose {pose} is inside an obstacle")
    if lidar.fov >= 2 * math.pi - 1e-12:
        angles = -math.pi + 2 * math.pi * np.arange(lidar.n_beams) / lidar.n_beams
    else:
        angles = np.linspace(-lidar.fov / 2, lidar.fov / 2, lidar.n_beams)
    world = angles + pose.theta
    dirs = np.stack([np.cos(world), np.sin(world)], axis=1)
    ends = origin + lidar.max_range * dirs
    trav = traverse_rays(origin, ends, env.resolution)
    occ = env.is_occupied(trav.cells) & ~trav.corner
    first = np.full(lidar.n_beams, len(trav.ray), dtype=np.int64)
    idx = np.nonzero(occ)[0]
    np.minimum.at(first, trav.ray[idx], idx)
    has_hit = first < len(trav.ray)
    t = trav.t_start[first[has_hit]]
    dist = t * lidar.max_range + _HIT_NUDGE
    hits_world = origin + dirs[has_hit] * dist[:, None]
    hits_robot = pose.inverse().apply(hits_world)
    return Scan((0.0, 0.0), hits_robot)


# -- odometry drift -------------------------------------------------------------


@dataclass
class DriftModel:
    """Per-step odometry error in the robot frame: constant bias plus noise."""

    bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0


def apply_drift(true_poses: list[RigidTransform2], model: DriftModel) -> list[RigidTransform2]:
    """Integrate noisy relative motions; the first pose is exact."""
    if not true_poses:
        return []
    rng = np.random.default_rng(model.seed)
    bias = np.asarray(model.bias, dtype=float)
    sigma = np.asarray(model.sigma, dtype=float)
    out = [true_poses[0]]
    for prev, cur in zip(true_poses[:-1], true_poses[1:]):
        rel = prev.inverse() @ cur
        noise = bias + sigma * rng.standard_normal(3)
        out.append(out[-1] @ rel @ RigidTransform2(*noise))
    return out


# -- trajectory builder ---------------------------------------------------------


CORRECTION_POLICIES = ("snap", "interpolated")
INSERTION_MODES = ("odometry", "truth")


@dataclass
class BuilderConfig:
    resolution: float = 0.05
    n_scans: int = 100
    p_hit: float = DEFAULT_P_HIT
    p_miss: float = DEFAULT_P_MISS
    # keep submap poses on the global cell lattice (whole-cell translations,
    # quarter-turn rotations) so detector and oracle discretize identically
    aligned: bool = True
    optimize_every: int = 3
    correction: str = "snap"
    # "odometry": scans enter each submap at their drifted pose relative to
    # the submap origin; "truth": at their true relative pose
    insertion: str = "odometry"


def quantize_pose(pose: RigidTransform2, resolution: float) -> RigidTransform2:
    quarter = math.pi / 2
    return RigidTransform2(
        round(pose.x / resolution) * resolution,
        round(pose.y / resolution) * resolution,
        round(pose.theta / quarter) * quarter,
    )


def interpolate_correction(
    poses: list[RigidTransform2],
    end_error: tuple[float, float, float],
) -> list[RigidTransform2]:
    """Spread an end-of-loop error linearly: pose ``i`` of ``n`` moves by ``i/n`` of it."""
    n = len(poses)
    dx, dy, dtheta = end_error
    return [
        RigidTransform2(p.x + dx * i / n, p.y + dy * i / n, p.theta + dtheta * i / n)
        for i, p in enumerate(poses)
    ]


@dataclass
class _Track:
    submap: Submap
    origin_true: RigidTransform2
    origin_odom: RigidTransform2


class TrajectoryBuilder:
    """Maintains the active submap pair and the current pose-graph solution.

    The first submap starts with the first scan; each later one starts once
    the newest active submap holds ``n_scans // 2`` scans, so after warm-up a
    submap finishes every ``n_scans // 2`` scans.
    """

    def __init__(self, config: BuilderConfig | None = None):
        self.config = config or BuilderConfig()
        if self.config.n_scans < 2:
            raise ValueError("n_scans must be at least 2")
        if self.config.correction not in CORRECTION_POLICIES:
            raise ValueError(f"correction must be one of {CORRECTION_POLICIES}")
        if self.config.insertion not in INSERTION_MODES:
            raise ValueError(f"insertion must be one of {INSERTION_MODES}")
        self.tracks: dict[int, _Track] = {}
        self.active: list[int] = []
        self.finished: list[int] = []
        self.solution: dict[int, RigidTransform2] = {}
        self.epoch = 0
        self._correction = RigidTransform2.identity()  # odometry frame -> global
        self._last_true = RigidTransform2.identity()
        self._last_odom = RigidTransform2.identity()
        self._next_id = 0

    @property
    def submaps(self) -> dict[int, Submap]:
        return {i: t.submap for i, t in self.tracks.items()}

    def ground_truth(self) -> dict[int, RigidTransform2]:
        return {i: t.origin_true for i, t in self.tracks.items()}

    def _place(self, pose: RigidTransform2) -> RigidTransform2:
        if self.config.aligned:
            return quantize_pose(pose, self.config.resolution)
        return pose

    def _new_submap(self, true_pose: RigidTransform2, odom_pose: RigidTransform2) -> None:
        c = self.config
        origin_true = self._place(true_pose)
        # the same frame as seen through drifting odometry
        origin_odom = odom_pose @ true_pose.inverse() @ origin_true
        sid = self._next_id
        self._next_id += 1
        sm = Submap(sid, c.resolution, c.n_scans, origin_odom, c.p_hit, c.p_miss)
        self.tracks[sid] = _Track(sm, origin_true, origin_odom)
        self.active.append(sid)
        self.solution[sid] = self._place(self._correction @ origin_odom)

    def step(self, true_pose: RigidTransform2, odom_pose: RigidTransform2, scan: Scan) -> list[Event]:
        """Insert one robot-frame scan; returns the resulting events in order."""
        self._last_true, self._last_odom = true_pose, odom_pose
        half = max(1, self.config.n_scans // 2)
        if not self.active or (
            len(self.active) < 2 and self.tracks[self.active[-1]].submap.inserted_scans >= half
        ):
            self._new_submap(true_pose, odom_pose)
        for sid in self.active:
            tr = self.tracks[sid]
            if self.config.insertion == "odometry":
                robot_in_submap = tr.origin_odom.inverse() @ odom_pose
            else:
                # perfect local scan matching: drift moves whole submaps only
                robot_in_submap = tr.origin_true.inverse() @ true_pose
            tr.submap.insert_scan(scan.transformed(robot_in_submap))
        snaps = tuple(self.tracks[s].submap.snapshot() for s in self.active)
        events: list[Event] = [
            ScanInserted(snaps, {s: self.solution[s] for s in self.active}, self.epoch)
        ]
        done = [s for s in self.active if self.tracks[s].submap.finished]
        for sid in done:
            self.active.remove(sid)
            self.finished.append(sid)
            events.append(SubmapFinished(sid, self.epoch))
        if done and self.config.optimize_every and len(self.finished) % self.config.optimize_every == 0:
            events.append(self.trigger_optimization())
        return events

    def trigger_optimization(self, policy: str | None = None) -> OptimizationDone:
        policy = policy or self.config.correction
        if policy not in CORRECTION_POLICIES:
            raise ValueError(f"unknown correction policy {policy!r}")
        ids = sorted(self.tracks)
        if policy == "snap":
            new = {i: self.tracks[i].origin_true for i in ids}
        else:
            est = self._correction @ self._last_odom
            err = (self._last_true.x - est.x, self._last_true.y - est.y,
                   wrap_angle(self._last_true.theta - est.theta))
            raw = [self._correction @ self.tracks[i].origin_odom for i in ids]
            new = {i: self._place(p) for i, p in zip(ids, interpolate_correction(raw, err))}
        self._correction = self._last_true @ self._last_odom.inverse()
        self.solution = dict(new)
        self.epoch += 1
        return OptimizationDone(PoseGraphSolution(dict(new), self.epoch))

    def max_pose_error(self) -> float:
        """Largest translation gap between the current solution and ground truth."""
        if not self.tracks:
            return 0.0
        return max(
            math.hypot(self.solution[i].x - t.origin_true.x, self.solution[i].y - t.origin_true.y)
            for i, t in self.tracks.items()
        )


# -- scenarios ------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    seed: int = 0
    step: float = 0.15
    laps: float = 1.0
    n_steps: int | None = None
    lidar: LidarConfig = field(default_factory=LidarConfig)
    drift: DriftModel = field(default_factory=DriftModel)
    builder: BuilderConfig = field(default_factory=BuilderConfig)
    final_optimization: bool = False


@dataclass
class Simulation:
    config: ScenarioConfig
    env: Environment
    truth: list[RigidTransform2]
    odometry: list[RigidTransform2]
    builder: TrajectoryBuilder

    def events(self) -> Iterator[Event]:
        for true_pose, odom_pose in zip(self.truth, self.odometry):
            scan = simulate_scan(self.env, true_pose, self.config.lidar)
            yield from self.builder.step(true_pose, odom_pose, scan)
        if self.config.final_optimization and self.builder.finished:
            yield self.builder.trigger_optimization()


def build_simulation(config: ScenarioConfig) -> Simulation:
    env_spec = config.environment
    if env_spec.resolution != config.builder.resolution:
        env_spec = EnvironmentSpec(**{**env_spec.__dict__, "resolution": config.builder.resolution})
    env = generate_environment(config.seed, env_spec)
    truth = plan_trajectory(env, config.step, laps=config.laps)
    if config.n_steps is not None:
        truth = truth[: config.n_steps]
    odom = apply_drift(truth, config.drift)
    return Simulation(config, env, truth, odom, TrajectoryBuilder(config.builder))


def simulate(config: ScenarioConfig) -> Iterator[Event]:
    """Event stream of a full scenario; deterministic in the config."""
    return build_simulation(config).events()


def count_cells(points: np.ndarray, resolution: float) -> int:
    return len({tuple(c) for c in point_to_cell(points, resolution).tolist()})
