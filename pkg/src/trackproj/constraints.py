"""Equality and polar-reformulated inequality constraints of the tracking problem.

Every inequality is written per sample instant as a 2D residual ``r`` that must
equal ``scale * d * (cos(alpha), sin(alpha))`` with ``d`` inside box bounds:

========== ============================ ======= ========================
group      residual r                   scale   d bounds
========== ============================ ======= ========================
obstacle   p(t) - p_obs_i(t)            l       [1, d_obs_max]
velocity   p'(t)                        1       [0, v_max]
accel      p''(t)                       1       [0, a_max]
tracking   p(t) - p_target(t)           1       [s_los_min, s_los_max]
========== ============================ ======= ========================

Rows are laid out per axis as ``[obstacle_0 .. obstacle_{n-1}, velocity,
acceleration, tracking]`` with ``m`` rows per block, matching ``assemble_F``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .basis import BasisSet, eval_trajectory

# Upper bound on the scaled obstacle distance.  Infinite so that far-away
# padding points never pull the trajectory toward them.
D_OBS_MAX = np.inf
PAD_DISTANCE = 1e6
N_OBS_DEFAULT = 20

GROUPS = ("obstacle", "velocity", "acceleration", "tracking")


def _vec2(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(2)
    return a


@dataclass(frozen=True)
class BoundaryState:
    p0: np.ndarray
    v0: np.ndarray
    a0: np.ndarray
    pf: np.ndarray
    vf: np.ndarray

    def __post_init__(self):
        for name in ("p0", "v0", "a0", "pf", "vf"):
            object.__setattr__(self, name, _vec2(getattr(self, name)))
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"boundary state {name} is not finite")


@dataclass(frozen=True)
class ConstraintParams:
    s_los_min: float
    s_los_max: float
    pf: np.ndarray
    vf: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pf", _vec2(self.pf))
        object.__setattr__(self, "vf", _vec2(self.vf))
        if not (0 < self.s_los_min < self.s_los_max):
            raise ValueError(
                f"need 0 < s_los_min < s_los_max, got {self.s_los_min}, {self.s_los_max}"
            )

    def as_vector(self) -> np.ndarray:
        """Flat layout ``[s_los_min, s_los_max, pf_x, pf_y, vf_x, vf_y]``."""
        return np.concatenate([[self.s_los_min, self.s_los_max], self.pf, self.vf])

    @classmethod
    def from_vector(cls, v) -> "ConstraintParams":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), v[2:4], v[4:6])


@dataclass(frozen=True)
class KinematicLimits:
    v_max: float
    a_max: float

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0):
            raise ValueError("kinematic limits must be positive")


@dataclass(frozen=True)
class Scene:
    """One planning instant.  Obstacles are disks of a shared radius."""

    robot_p: np.ndarray
    robot_v: np.ndarray
    robot_a: np.ndarray
    target_p: np.ndarray
    target_v: np.ndarray
    obstacle_p: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    obstacle_v: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radius: float = 0.5

    def __post_init__(self):
        for name in ("robot_p", "robot_v", "robot_a", "target_p", "target_v"):
            object.__setattr__(self, name, _vec2(getattr(self, name)))
        op = np.asarray(self.obstacle_p, dtype=float).reshape(-1, 2)
        ov = np.asarray(self.obstacle_v, dtype=float).reshape(-1, 2)
        if ov.shape[0] == 0 and op.shape[0] > 0:
            ov = np.zeros_like(op)
        if op.shape != ov.shape:
            raise ValueError("obstacle positions and velocities differ in count")
        object.__setattr__(self, "obstacle_p", op)
        object.__setattr__(self, "obstacle_v", ov)
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")

    @property
    def n_obs(self) -> int:
        return self.obstacle_p.shape[0]

    def boundary(self, q: ConstraintParams) -> BoundaryState:
        return BoundaryState(self.robot_p, self.robot_v, self.robot_a, q.pf, q.vf)

    def shifted(self, offset) -> "Scene":
        """Translate every position by ``offset`` (velocities unchanged)."""
        offset = _vec2(offset)
        return Scene(
            self.robot_p + offset,
            self.robot_v,
            self.robot_a,
            self.target_p + offset,
            self.target_v,
            self.obstacle_p + offset,
            self.obstacle_v,
            self.radius,
        )


def prune_obstacles(scene: Scene, n_obs: int = N_OBS_DEFAULT) -> Scene:
    """Keep the ``n_obs`` points nearest the robot, padding with far-away points.

    Padding sits ``PAD_DISTANCE`` metres from the robot so the constraint matrix
    keeps a fixed shape across planning cycles.
    """
    p, v = scene.obstacle_p, scene.obstacle_v
    if p.shape[0] > n_obs:
        dist = np.linalg.norm(p - scene.robot_p, axis=1)
        keep = np.sort(np.argsort(dist, kind="stable")[:n_obs])
        p, v = p[keep], v[keep]
    n_pad = n_obs - p.shape[0]
    if n_pad:
        pad = scene.robot_p + np.array([PAD_DISTANCE, PAD_DISTANCE])
        p = np.vstack([p, np.tile(pad, (n_pad, 1))])
        v = np.vstack([v, np.zeros((n_pad, 2))])
    return Scene(scene.robot_p, scene.robot_v, scene.robot_a, scene.target_p, scene.target_v, p, v, scene.radius)


@dataclass(frozen=True)
class RowLayout:
    """Row bookkeeping of the per-axis constraint stack."""

    n_obs: int
    m: int

    @property
    def rows(self) -> int:
        return self.m * (self.n_obs + 3)

    def slice(self, group: str) -> slice:
        m, n = self.m, self.n_obs
        start = {"obstacle": 0, "velocity": n * m, "acceleration": (n + 1) * m, "tracking": (n + 2) * m}[group]
        stop = start + (n * m if group == "obstacle" else m)
        return slice(start, stop)

    def scale(self, radius: float) -> np.ndarray:
        s = np.ones(self.rows)
        s[self.slice("obstacle")] = radius
        return s

    def group_of_row(self, row: int) -> str:
        for g in GROUPS:
            sl = self.slice(g)
            if sl.start <= row < sl.stop:
                return g
        raise IndexError(row)


def axis_block(basis: BasisSet, n_obs: int) -> np.ndarray:
    """Per-axis stack ``[W repeated n_obs times; Wd; Wdd; W]``."""
    return np.vstack([np.tile(basis.W, (n_obs, 1)), basis.Wd, basis.Wdd, basis.W])


def assemble_F(basis: BasisSet, n_obs: int) -> np.ndarray:
    if n_obs < 0:
        raise ValueError("n_obs must be non-negative")
    G = axis_block(basis, n_obs)
    return block_diag(G, G)


def equality_rows(basis: BasisSet) -> np.ndarray:
    """Per-axis rows: position, velocity, acceleration at t0; position, velocity at the end."""
    return np.vstack([basis.W[0], basis.Wd[0], basis.Wdd[0], basis.W[-1], basis.Wd[-1]])


def assemble_b(b0_state: BoundaryState) -> np.ndarray:
    """Ordering ``[x0, vx0, ax0, xf, vxf, y0, vy0, ay0, yf, vyf]``."""
    s = b0_state
    return np.array(
        [s.p0[0], s.v0[0], s.a0[0], s.pf[0], s.vf[0], s.p0[1], s.v0[1], s.a0[1], s.pf[1], s.vf[1]]
    )


# slots of pf / vf inside b, per axis
B_PF_SLOTS = (3, 8)
B_VF_SLOTS = (4, 9)


def assemble_equality(b0_state: BoundaryState, q: ConstraintParams, basis: BasisSet) -> tuple[np.ndarray, np.ndarray]:
    Ax = equality_rows(basis)
    A = block_diag(Ax, Ax)
    state = BoundaryState(b0_state.p0, b0_state.v0, b0_state.a0, q.pf, q.vf)
    return A, assemble_b(state)


def obstacle_trajectories(scene: Scene, basis: BasisSet) -> np.ndarray:
    """Constant-velocity obstacle positions, shape ``(n_obs, m, 2)``."""
    t = basis.times[None, :, None]
    return scene.obstacle_p[:, None, :] + scene.obstacle_v[:, None, :] * t


def row_offsets(scene: Scene, target_traj: np.ndarray, basis: BasisSet) -> np.ndarray:
    """Per-row reference point subtracted from ``F xi``, shape ``(2, rows)``."""
    m = basis.m
    obs = obstacle_trajectories(scene, basis).reshape(-1, 2)
    target_traj = np.asarray(target_traj, dtype=float).reshape(m, 2)
    off = np.vstack([obs, np.zeros((2 * m, 2)), target_traj])
    return np.ascontiguousarray(off.T)


def row_bounds(layout: RowLayout, limits: KinematicLimits, s_los_min, s_los_max) -> tuple[np.ndarray, np.ndarray]:
    """Lower/upper ``d`` bounds per row.  ``s_los_*`` may carry a leading batch axis."""
    s_lo = np.asarray(s_los_min, dtype=float)
    s_hi = np.asarray(s_los_max, dtype=float)
    shape = s_lo.shape + (layout.rows,)
    lo = np.empty(shape)
    hi = np.empty(shape)
    for g, a, b in (
        ("obstacle", 1.0, D_OBS_MAX),
        ("velocity", 0.0, limits.v_max),
        ("acceleration", 0.0, limits.a_max),
    ):
        lo[..., layout.slice(g)] = a
        hi[..., layout.slice(g)] = b
    tr = layout.slice("tracking")
    lo[..., tr] = s_lo[..., None]
    hi[..., tr] = s_hi[..., None]
    return lo, hi


@dataclass(frozen=True)
class AuxVars:
    """Polar auxiliary variables, one entry per row of the per-axis layout."""

    alpha: np.ndarray
    d: np.ndarray
    layout: RowLayout
    degenerate_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def group(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        sl = self.layout.slice(name)
        a, d = self.alpha[..., sl], self.d[..., sl]
        if name == "obstacle":
            shape = a.shape[:-1] + (self.layout.n_obs, self.layout.m)
            a, d = a.reshape(shape), d.reshape(shape)
        return a, d


def polar_update(r: np.ndarray, scale: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Closed-form minimiser of ``|r - scale * d * u(alpha)|^2`` over alpha and clipped d.

    ``r`` has shape ``(..., 2, rows)``.  Returns ``alpha, d, norm, ratio``.  A zero
    residual gets ``alpha = 0``.
    """
    rx, ry = r[..., 0, :], r[..., 1, :]
    norm = np.hypot(rx, ry)
    alpha = np.where(norm > 0, np.arctan2(ry, rx), 0.0)
    ratio = norm / scale
    d = np.minimum(np.maximum(ratio, lo), hi)
    return alpha, d, norm, ratio


def update_alpha_d(xi, scene: Scene, q: ConstraintParams, limits: KinematicLimits, basis: BasisSet, target_traj) -> AuxVars:
    layout = RowLayout(scene.n_obs, basis.m)
    G = axis_block(basis, scene.n_obs)
    xi = np.asarray(xi, dtype=float)
    r = np.stack([G @ xi[: basis.n_c], G @ xi[basis.n_c :]]) - row_offsets(scene, target_traj, basis)
    lo, hi = row_bounds(layout, limits, q.s_los_min, q.s_los_max)
    alpha, d, norm, _ = polar_update(r, layout.scale(scene.radius), lo, hi)
    obs = layout.slice("obstacle")
    degenerate = np.flatnonzero(norm[obs] == 0.0)
    return AuxVars(alpha=alpha, d=d, layout=layout, degenerate_rows=degenerate)


def assemble_e(aux: AuxVars, scene: Scene, target_traj, basis: BasisSet) -> np.ndarray:
    """Targets for ``F xi``; flat layout ``[x rows; y rows]`` matching ``assemble_F``."""
    layout = aux.layout
    if scene.n_obs != layout.n_obs or basis.m != layout.m:
        raise ValueError("aux variables do not match the scene/basis row structure")
    off = row_offsets(scene, target_traj, basis)
    sd = layout.scale(scene.radius) * aux.d
    e = off + np.stack([sd * np.cos(aux.alpha), sd * np.sin(aux.alpha)])
    return e.reshape(-1)


@dataclass(frozen=True)
class ViolationReport:
    velocity: np.ndarray
    acceleration: np.ndarray
    tracking_low: np.ndarray
    tracking_high: np.ndarray
    obstacle: np.ndarray

    @property
    def group_max(self) -> dict[str, float]:
        def mx(a):
            return float(np.max(a)) if a.size else 0.0

        return {
            "velocity": mx(self.velocity),
            "acceleration": mx(self.acceleration),
            "tracking": max(mx(self.tracking_low), mx(self.tracking_high)),
            "obstacle": mx(self.obstacle),
        }

    @property
    def max_violation(self) -> float:
        return max(self.group_max.values())

    @property
    def penalty(self) -> float:
        """Squared norm of the positive parts, as used in the training loss."""
        return float(
            sum(np.sum(a**2) for a in (self.velocity, self.acceleration, self.tracking_low, self.tracking_high, self.obstacle))
        )


def constraint_violations(xi, scene: Scene, q: ConstraintParams, limits: KinematicLimits, basis: BasisSet, target_traj) -> ViolationReport:
    traj = eval_trajectory(xi, basis)
    target_traj = np.asarray(target_traj, dtype=float).reshape(basis.m, 2)
    speed = np.linalg.norm(traj.vel, axis=1)
    accel = np.linalg.norm(traj.acc, axis=1)
    sep = np.linalg.norm(traj.pos - target_traj, axis=1)
    obs = obstacle_trajectories(scene, basis)
    clearance = np.linalg.norm(traj.pos[None] - obs, axis=2)
    return ViolationReport(
        velocity=np.maximum(0.0, speed - limits.v_max),
        acceleration=np.maximum(0.0, accel - limits.a_max),
        tracking_low=np.maximum(0.0, q.s_los_min - sep),
        tracking_high=np.maximum(0.0, sep - q.s_los_max),
        obstacle=np.maximum(0.0, scene.radius - clearance),
    )


def violation_penalty_grad(xi, scene: Scene, q: ConstraintParams, limits: KinematicLimits, basis: BasisSet, target_traj):
    """Penalty ``sum |max(0, g)|^2`` and its gradients w.r.t. ``xi`` and ``(s_los_min, s_los_max)``."""
    xi = np.asarray(xi, dtype=float)
    traj = eval_trajectory(xi, basis)
    target_traj = np.asarray(target_traj, dtype=float).reshape(basis.m, 2)
    g_pos = np.zeros((basis.m, 2))
    g_vel = np.zeros((basis.m, 2))
    g_acc = np.zeros((basis.m, 2))

    def unit(v, n):
        with np.errstate(invalid="ignore", divide="ignore"):
            u = v / n[:, None]
        return np.where(n[:, None] > 0, u, 0.0)

    speed = np.linalg.norm(traj.vel, axis=1)
    hv = np.maximum(0.0, speed - limits.v_max)
    g_vel += (2 * hv)[:, None] * unit(traj.vel, speed)
    accel = np.linalg.norm(traj.acc, axis=1)
    ha = np.maximum(0.0, accel - limits.a_max)
    g_acc += (2 * ha)[:, None] * unit(traj.acc, accel)

    dr = traj.pos - target_traj
    sep = np.linalg.norm(dr, axis=1)
    hlo = np.maximum(0.0, q.s_los_min - sep)
    hhi = np.maximum(0.0, sep - q.s_los_max)
    ur = unit(dr, sep)
    g_pos += (2 * (hhi - hlo))[:, None] * ur
    d_smin = float(np.sum(2 * hlo))
    d_smax = float(np.sum(-2 * hhi))

    obs = obstacle_trajectories(scene, basis)
    do = traj.pos[None] - obs
    clr = np.linalg.norm(do, axis=2)
    ho = np.maximum(0.0, scene.radius - clr)
    with np.errstate(invalid="ignore", divide="ignore"):
        uo = np.where(clr[..., None] > 0, do / clr[..., None], 0.0)
    g_pos += np.sum((-2 * ho)[..., None] * uo, axis=0)

    penalty = float(np.sum(hv**2) + np.sum(ha**2) + np.sum(hlo**2) + np.sum(hhi**2) + np.sum(ho**2))
    W, Wd, Wdd = basis.W, basis.Wd, basis.Wdd
    d_xi = np.concatenate(
        [
            W.T @ g_pos[:, 0] + Wd.T @ g_vel[:, 0] + Wdd.T @ g_acc[:, 0],
            W.T @ g_pos[:, 1] + Wd.T @ g_vel[:, 1] + Wdd.T @ g_acc[:, 1],
        ]
    )
    return penalty, d_xi, d_smin, d_smax
