"""2D kinematic world, synthetic LiDAR and receding-horizon episodes.

The robot is a point that follows its latest plan exactly.  The target and
obstacles move along waypoint polylines at constant speed.  Every sim step
records one log row; every metric is a function of the log rows alone.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import BasisSet, eval_at
from .constraints import KinematicLimits, Scene
from .policy import CostWeights, Planner, PlanningError, segment_point_distance, shift_xi

SUCCESS_OCCLUSION_S = 0.1


@dataclass(frozen=True)
class Script:
    """Polyline motion at constant speed; the mover stops at the last waypoint unless ``loop``."""

    waypoints: tuple
    speed: float = 0.0
    loop: bool = False

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        if w.shape[0] < 1:
            raise ValueError("a script needs at least one waypoint")
        if self.speed < 0:
            raise ValueError("script speed must be non-negative")
        object.__setattr__(self, "waypoints", tuple(map(tuple, w.tolist())))

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.waypoints, dtype=float)

    def _legs(self):
        p = self.points
        if self.loop and p.shape[0] > 1:
            p = np.vstack([p, p[:1]])
        seg = np.diff(p, axis=0)
        return p, seg, np.linalg.norm(seg, axis=1)

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and velocity at time ``t``."""
        p, seg, length = self._legs()
        total = float(length.sum())
        if self.speed == 0.0 or total == 0.0:
            return p[0].copy(), np.zeros(2)
        s = self.speed * t
        if self.loop:
            s = s % total
        elif s >= total:
            return p[-1].copy(), np.zeros(2)
        for i, L in enumerate(length):
            if L == 0.0:
                continue
            if s < L:
                u = seg[i] / L
                return p[i] + s * u, self.speed * u
            s -= L
        return p[-1].copy(), np.zeros(2)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    replan_dt: float = 0.1
    duration: float = 10.0
    n_beams: int = 180
    range_max: float = 15.0

    def __post_init__(self):
        if not (self.dt > 0 and self.replan_dt > 0 and self.duration > 0 and self.range_max > 0):
            raise ValueError("sim times and sensor range must be positive")
        if self.n_beams < 1:
            raise ValueError("n_beams must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def replan_every(self) -> int:
        return max(1, int(round(self.replan_dt / self.dt)))


@dataclass(frozen=True)
class PlannerConfig:
    n: int = 16
    weights: CostWeights = field(default_factory=CostWeights)
    seed: int = 0
    K: int = 100
    rho: float = 0.2
    coeff_std: float = 0.4
    q_std: tuple = (0.0, 0.0, 0.0, 0.0)
    n_obs: int = 20
    degree: int = 10
    m: int = 50
    horizon_s: float = 5.0
    basis_family: str = "bernstein"

    def __post_init__(self):
        if self.n < 1 or self.K < 1 or self.n_obs < 0 or not self.rho > 0:
            raise ValueError("invalid planner configuration")


@dataclass(frozen=True)
class Scenario:
    name: str
    robot_start: tuple  # (px, py, vx, vy)
    target: Script
    obstacles: tuple = ()  # of Script
    radius: float = 0.5
    limits: KinematicLimits = field(default_factory=lambda: KinematicLimits(3.0, 3.0))
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        if len(self.robot_start) != 4:
            raise ValueError("robot_start is (px, py, vx, vy)")
        object.__setattr__(self, "robot_start", tuple(float(v) for v in self.robot_start))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, planner=replace(self.planner, seed=int(seed)))


@dataclass
class WorldState:
    t: float
    robot_p: np.ndarray
    robot_v: np.ndarray
    robot_a: np.ndarray
    target_p: np.ndarray
    target_v: np.ndarray
    obstacle_p: np.ndarray  # (N, 2)
    obstacle_v: np.ndarray
    radius: float
    target_script: Script | None = None
    obstacle_scripts: tuple = ()
    step: int = 0


def initial_world(scenario: Scenario) -> WorldState:
    tp, tv = scenario.target.state(0.0)
    obs = [s.state(0.0) for s in scenario.obstacles]
    op = np.array([o[0] for o in obs]).reshape(-1, 2)
    ov = np.array([o[1] for o in obs]).reshape(-1, 2)
    r = scenario.robot_start
    return WorldState(0.0, np.array(r[:2]), np.array(r[2:]), np.zeros(2), tp, tv, op, ov, scenario.radius,
                      scenario.target, scenario.obstacles, 0)


@dataclass
class Scan:
    points: np.ndarray  # (k, 2) robot-centred
    obstacle_ids: np.ndarray  # (k,) index of the obstacle each point lies on
    beam_angles: np.ndarray  # (k,)
    inside: bool = False  # robot is inside an obstacle disk


def synth_lidar(world: WorldState, n_beams: int = 180, range_max: float = 15.0) -> Scan:
    """Nearest ray-circle hit per equiangular beam, in robot-centred coordinates."""
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    theta = 2 * np.pi * np.arange(n_beams) / n_beams
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    c = world.obstacle_p - world.robot_p  # (N, 2)
    l = world.radius
    if c.shape[0] == 0:
        return Scan(np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros(0))
    dist_c = np.linalg.norm(c, axis=1)
    inside = dist_c < l
    if inside.any():
        ids = np.flatnonzero(inside)
        return Scan(np.zeros((ids.size, 2)), ids, np.zeros(ids.size), inside=True)
    proj = dirs @ c.T  # (beams, N)
    disc = proj**2 - (dist_c**2 - l**2)[None, :]
    with np.errstate(invalid="ignore"):
        tt = proj - np.sqrt(disc)
    hit = (disc >= 0) & (tt >= 0) & (tt <= range_max)
    tt = np.where(hit, tt, np.inf)
    best = np.argmin(tt, axis=1)
    tb = tt[np.arange(n_beams), best]
    keep = np.isfinite(tb)
    pts = dirs[keep] * tb[keep, None]
    return Scan(pts, best[keep], theta[keep])


def scene_from_world(world: WorldState, scan: Scan) -> Scene:
    """Robot-centred planning scene from a scan; each point moves with the obstacle it hit."""
    return Scene(np.zeros(2), world.robot_v, world.robot_a, world.target_p - world.robot_p, world.target_v,
                 scan.points, world.obstacle_v[scan.obstacle_ids] if scan.points.size else np.zeros((0, 2)),
                 world.radius)


@dataclass(frozen=True)
class PlanSegment:
    """A plan anchored at world time ``t0`` and world offset ``origin``."""

    xi: np.ndarray
    t0: float
    origin: np.ndarray
    basis: BasisSet

    def state_at(self, t: float):
        tau = min(max(t - self.t0, 0.0), self.basis.horizon_s)
        p, v, a = eval_at(self.xi, self.basis, tau)
        return self.origin + p, v, a


def hold_segment(p, basis: BasisSet, t0: float = 0.0) -> PlanSegment:
    """Stationary plan at ``p``."""
    return PlanSegment(shift_xi(np.zeros(basis.n_xi), p, basis), t0, np.zeros(2), basis)


def step_world(world: WorldState, dt: float, segment: PlanSegment | None) -> WorldState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    step = world.step + 1
    t = world.t + dt
    if segment is None:
        rp, rv, ra = world.robot_p.copy(), np.zeros(2), np.zeros(2)
    else:
        rp, rv, ra = segment.state_at(t)
    if world.target_script is not None:
        tp, tv = world.target_script.state(t)
    else:
        tp, tv = world.target_p + dt * world.target_v, world.target_v.copy()
    if world.obstacle_scripts:
        obs = [s.state(t) for s in world.obstacle_scripts]
        op = np.array([o[0] for o in obs]).reshape(-1, 2)
        ov = np.array([o[1] for o in obs]).reshape(-1, 2)
    else:
        op, ov = world.obstacle_p + dt * world.obstacle_v, world.obstacle_v.copy()
    return replace(world, t=t, robot_p=rp, robot_v=rv, robot_a=ra, target_p=tp, target_v=tv,
                   obstacle_p=op, obstacle_v=ov, step=step)


def los_occluded(robot_p, target_p, obstacle_p, radius: float) -> bool:
    """Whether any obstacle disk intersects the robot-to-target segment."""
    if len(obstacle_p) == 0:
        return False
    d = segment_point_distance(np.asarray(robot_p)[None], np.asarray(target_p)[None], np.asarray(obstacle_p))
    return bool(np.any(d < radius))


def in_collision(robot_p, obstacle_p, radius: float) -> bool:
    if len(obstacle_p) == 0:
        return False
    return bool(np.any(np.linalg.norm(np.asarray(obstacle_p) - robot_p, axis=1) < radius))


# ---------------------------------------------------------------------------
# logs and metrics

LOG_COLUMNS = ("step", "t", "robot_x", "robot_y", "robot_vx", "robot_vy", "robot_ax", "robot_ay",
               "target_x", "target_y", "occluded", "collided", "min_clearance", "replanned", "planner_failures")


@dataclass
class TrajectoryLog:
    dt: float
    rows: list = field(default_factory=list)  # tuples in LOG_COLUMNS order

    def column(self, name: str) -> np.ndarray:
        i = LOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class RunMetrics:
    occlusion_time: float
    acc_mean: float
    acc_min: float
    acc_max: float
    collision_count: int
    success: bool
    mean_plan_time: float = float("nan")  # wall clock, kept out of the deterministic log
    planner_failures: int = 0
    duration: float = 0.0

    def deterministic_fields(self) -> tuple:
        return (self.occlusion_time, self.acc_mean, self.acc_min, self.acc_max, self.collision_count,
                self.success, self.planner_failures, self.duration)


class _Accumulator:
    """Running metric state; ``compute_metrics`` repeats exactly the same arithmetic."""

    def __init__(self, dt: float):
        self.dt = dt
        self.occluded_steps = 0
        self.acc_sum = 0.0
        self.acc_min = float("inf")
        self.acc_max = float("-inf")
        self.n = 0
        self.collisions = 0
        self.prev_collided = False
        self.failures = 0

    def add(self, row) -> None:
        a = float(np.hypot(row[6], row[7]))
        self.acc_sum += a
        self.acc_min = min(self.acc_min, a)
        self.acc_max = max(self.acc_max, a)
        self.n += 1
        self.occluded_steps += int(row[10])
        collided = bool(row[11])
        if collided and not self.prev_collided:
            self.collisions += 1
        self.prev_collided = collided
        self.failures = int(row[14])

    def metrics(self, plan_time=float("nan")) -> RunMetrics:
        if self.n == 0:
            raise ValueError("empty trajectory log")
        occ = self.occluded_steps * self.dt
        return RunMetrics(occlusion_time=occ, acc_mean=self.acc_sum / self.n, acc_min=self.acc_min,
                          acc_max=self.acc_max, collision_count=self.collisions,
                          success=bool(occ < SUCCESS_OCCLUSION_S and self.collisions == 0),
                          mean_plan_time=plan_time, planner_failures=self.failures, duration=self.n * self.dt)


def compute_metrics(log: TrajectoryLog, plan_times=None) -> RunMetrics:
    """Recompute every metric from the log rows alone."""
    if len(log) == 0:
        raise ValueError("empty trajectory log")
    acc = _Accumulator(log.dt)
    for row in log.rows:
        if len(row) != len(LOG_COLUMNS) or not all(np.isfinite(float(v)) for v in row[:12]):
            raise ValueError(f"malformed log row: {row!r}")
        acc.add(row)
    pt = float(np.mean(plan_times)) if plan_times is not None and len(plan_times) else float("nan")
    return acc.metrics(pt)


# ---------------------------------------------------------------------------
# episodes


class StationaryPlanner:
    """Holds the robot where it is."""

    def plan(self, scene: Scene):
        return None, None


def build_planner(scenario: Scenario, policy: str = "base", decoder=None, seed: int | None = None) -> Planner:
    from .basis import build_basis
    from .policy import BaseSampler
    from .projection import make_workspace

    pc = scenario.planner
    basis = build_basis(pc.horizon_s, pc.m, pc.degree, pc.basis_family)
    ws = make_workspace(basis, scenario.limits, pc.n_obs, pc.rho, pc.K)
    sampler = BaseSampler(n=pc.n, coeff_std=pc.coeff_std, q_std=tuple(pc.q_std), seed=pc.seed if seed is None else seed)
    return Planner(ws=ws, weights=pc.weights, sampler=sampler, decoder=decoder, policy=policy)


def run_episode(scenario: Scenario, planner=None, replan_dt: float | None = None):
    """Closed-loop run; returns ``(RunMetrics, TrajectoryLog, plan_times)``.

    ``planner`` is anything with ``plan(scene) -> (xi, diagnostics)`` working in
    robot-centred coordinates; a ``None`` plan holds the robot in place.
    """
    sim = scenario.sim if replan_dt is None else replace(scenario.sim, replan_dt=replan_dt)
    if planner is None:
        planner = build_planner(scenario)
    basis = getattr(planner, "basis", None)
    world = initial_world(scenario)
    segment = None
    log = TrajectoryLog(sim.dt)
    acc = _Accumulator(sim.dt)
    plan_times = []
    failures = 0
    for step in range(sim.n_steps):
        replanned = 0
        if step % sim.replan_every == 0:
            scan = synth_lidar(world, sim.n_beams, sim.range_max)
            scene = scene_from_world(world, scan)
            t0 = time.perf_counter()
            try:
                xi, _ = planner.plan(scene)
                if xi is None:
                    segment = None
                else:
                    segment = PlanSegment(np.asarray(xi, dtype=float), world.t, world.robot_p.copy(), basis)
                replanned = 1
            except PlanningError:
                failures += 1
            plan_times.append(time.perf_counter() - t0)
        row = (
            step, world.t, *world.robot_p, *world.robot_v, *world.robot_a, *world.target_p,
            int(los_occluded(world.robot_p, world.target_p, world.obstacle_p, world.radius)),
            int(in_collision(world.robot_p, world.obstacle_p, world.radius)),
            _min_clearance(world), replanned, failures,
        )
        row = tuple(int(v) if i in (0, 10, 11, 13, 14) else float(v) for i, v in enumerate(row))
        log.rows.append(row)
        acc.add(row)
        world = step_world(world, sim.dt, segment)
    return acc.metrics(float(np.mean(plan_times)) if plan_times else float("nan")), log, plan_times


def _min_clearance(world: WorldState) -> float:
    if world.obstacle_p.shape[0] == 0:
        return float("inf")
    return float(np.min(np.linalg.norm(world.obstacle_p - world.robot_p, axis=1)) - world.radius)
