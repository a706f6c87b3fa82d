"""Sampling-and-ranking planner.

Candidates ``(xi_bar, q, warm)`` come from a Gaussian base sampler or from an
affine decoder.  Each candidate is projected onto its own feasible set and the
projected trajectories are ranked by smoothness plus a geometric occlusion
cost; the cheapest one is executed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, eval_trajectory
from .constraints import (
    ConstraintParams,
    KinematicLimits,
    Scene,
    assemble_equality,
    constraint_violations,
    obstacle_trajectories,
    prune_obstacles,
)
from .projection import ProjectionError, ProjectionWorkspace, equality_only_projection, project_batch

OCCLUSION_MARGIN = 0.2
STANDOFF = 2.5
S_LOS_MIN_NOMINAL = 1.0
S_LOS_MAX_NOMINAL = 4.0
EPS_Q = 0.05


class PlanningError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


def predict_target(target_p, target_v, basis: BasisSet) -> np.ndarray:
    """Constant-velocity target positions at the basis sample instants, ``(m, 2)``."""
    t = basis.times[:, None]
    return np.asarray(target_p, dtype=float)[None, :] + np.asarray(target_v, dtype=float)[None, :] * t


def segment_point_distance(a: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance from points ``p`` to segments ``[a, b]``; all inputs broadcast over leading axes."""
    ab = b - a
    ap = p - a
    denom = np.sum(ab * ab, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = np.where(denom > 0, np.sum(ap * ab, axis=-1) / denom, 0.0)
    tau = np.clip(tau, 0.0, 1.0)
    closest = a + tau[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def occlusion_cost(robot_traj, target_traj, obstacles, l: float, margin: float = OCCLUSION_MARGIN) -> np.ndarray | float:
    """Squared intrusion of obstacles into the inflated line-of-sight segments.

    ``robot_traj`` is ``(..., m, 2)``; ``obstacles`` is either ``(n, 2)`` static
    centres or ``(n, m, 2)`` per-sample centres.
    """
    robot_traj = np.asarray(robot_traj, dtype=float)
    target_traj = np.asarray(target_traj, dtype=float)
    obs = np.asarray(obstacles, dtype=float)
    if obs.size == 0:
        return np.zeros(robot_traj.shape[:-2]) if robot_traj.ndim > 2 else 0.0
    m = robot_traj.shape[-2]
    if obs.ndim == 2:
        obs = np.broadcast_to(obs[:, None, :], (obs.shape[0], m, 2))
    a = robot_traj[..., None, :, :]  # (..., 1, m, 2)
    b = np.broadcast_to(target_traj, robot_traj.shape)[..., None, :, :]
    dist = segment_point_distance(a, b, obs)  # (..., n, m)
    cost = np.sum(np.maximum(0.0, (l + margin) - dist) ** 2, axis=(-2, -1))
    return float(cost) if np.ndim(cost) == 0 else cost


def clearance_cost(robot_traj, obstacles, l: float, floor: float = 1e-2) -> np.ndarray:
    """Sum over samples of ``1 / max(clearance - l, floor)`` to the nearest obstacle."""
    robot_traj = np.asarray(robot_traj, dtype=float)
    obs = np.asarray(obstacles, dtype=float)
    if obs.size == 0:
        return np.zeros(robot_traj.shape[:-2])
    if obs.ndim == 2:
        obs = obs[:, None, :]
    dist = np.linalg.norm(robot_traj[..., None, :, :] - obs, axis=-1).min(axis=-2)
    return np.sum(1.0 / np.maximum(dist - l, floor), axis=-1)


def _heading(scene: Scene) -> np.ndarray:
    v = scene.target_v
    nv = np.linalg.norm(v)
    if nv > 1e-9:
        return v / nv
    rel = scene.target_p - scene.robot_p
    nr = np.linalg.norm(rel)
    return rel / nr if nr > 1e-9 else np.array([1.0, 0.0])


def nominal_q(scene: Scene, basis: BasisSet | None = None, horizon_s: float | None = None) -> ConstraintParams:
    """Hand-fixed constraint parameters: standoff behind the predicted target.

    With a stationary target the heading falls back to the robot-to-target
    direction.
    """
    T = horizon_s if horizon_s is not None else (basis.horizon_s if basis is not None else 5.0)
    pf = scene.target_p + T * scene.target_v - STANDOFF * _heading(scene)
    return ConstraintParams(S_LOS_MIN_NOMINAL, S_LOS_MAX_NOMINAL, pf, scene.target_v.copy())


def clear_standoff(scene: Scene, q: ConstraintParams, basis: BasisSet, margin: float = 0.1,
                   step_deg: float = 15.0) -> ConstraintParams:
    """``q`` with pf swung around the predicted target end point until it clears every obstacle.

    A terminal point within ``l`` of an obstacle's predicted end position makes
    the equality and obstacle constraints jointly infeasible.  Candidate pf
    positions keep the standoff distance and are tried in order of increasing
    rotation; ``q`` is returned unchanged if it is already clear or nothing is.
    """
    if scene.n_obs == 0:
        return q
    end = scene.target_p + basis.horizon_s * scene.target_v
    obs_end = scene.obstacle_p + basis.horizon_s * scene.obstacle_v
    need = scene.radius + margin
    offset = q.pf - end
    for k in range(int(180 // step_deg) + 1):
        for sgn in ((1.0,) if k == 0 else (1.0, -1.0)):
            a = np.deg2rad(sgn * k * step_deg)
            c, s_ = np.cos(a), np.sin(a)
            pf = end + np.array([c * offset[0] - s_ * offset[1], s_ * offset[0] + c * offset[1]])
            if np.min(np.linalg.norm(obs_end - pf, axis=1)) >= need:
                return q if k == 0 else ConstraintParams(q.s_los_min, q.s_los_max, pf, q.vf)
    return q


def constant_coefficients(basis: BasisSet) -> np.ndarray:
    """Per-axis coefficient vector whose trajectory is identically one."""
    c = np.linalg.lstsq(basis.W, np.ones(basis.m), rcond=None)[0]
    return c


def shift_xi(xi, offset, basis: BasisSet) -> np.ndarray:
    """Coefficients of the trajectory translated by ``offset``."""
    c = constant_coefficients(basis)
    xi = np.array(xi, dtype=float)
    xi[..., : basis.n_c] += offset[0] * c
    xi[..., basis.n_c :] += offset[1] * c
    return xi


def nominal_xi(scene: Scene, q: ConstraintParams, basis: BasisSet) -> np.ndarray:
    """Least-squares fit of a straight line from the robot to ``q.pf`` under the boundary conditions."""
    s = basis.times / basis.horizon_s
    line = scene.robot_p[None, :] * (1 - s[:, None]) + q.pf[None, :] * s[:, None]
    A, b = assemble_equality(scene.boundary(q), q, basis)
    n = basis.n_c
    Wb = np.zeros((2 * basis.m, 2 * n))
    Wb[: basis.m, :n] = basis.W
    Wb[basis.m :, n:] = basis.W
    target = np.concatenate([line[:, 0], line[:, 1]])
    p = A.shape[0]
    M = np.block([[Wb.T @ Wb, A.T], [A, np.zeros((p, p))]])
    z = np.linalg.solve(M, np.concatenate([Wb.T @ target, b]))
    return z[: 2 * n]


@dataclass
class CostWeights:
    w1: float = 0.05
    w2: float = 1.0
    w3: float = 0.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("cost weights must be non-negative")

    def scaled(self, c: float) -> "CostWeights":
        return CostWeights(self.w1 * c, self.w2 * c, self.w3 * c)


def _clip_q(s_min, s_max, pf, vf) -> ConstraintParams:
    s_min = max(float(s_min), EPS_Q)
    s_max = max(float(s_max), s_min + EPS_Q)
    return ConstraintParams(s_min, s_max, pf, vf)


@dataclass
class BaseSampler:
    """Gaussian candidates around the straight-line nominal plan and an obstacle-clear nominal q."""

    n: int = 16
    coeff_std: float = 0.4
    q_std: tuple = (0.0, 0.0, 0.0, 0.0)  # (s_los_min, s_los_max, pf, vf), per field
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sample count must be >= 1")
        if self.coeff_std < 0 or min(self.q_std) < 0:
            raise ValueError("standard deviations must be non-negative")
        self.rng = np.random.default_rng(self.seed)

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def nominal(self, scene: Scene, basis: BasisSet):
        q = clear_standoff(scene, nominal_q(scene, basis), basis)
        return nominal_xi(scene, q, basis), q

    def sample(self, scene: Scene, basis: BasisSet):
        xi_nom, q_nom = self.nominal(scene, basis)
        noise = self.rng.standard_normal((self.n, xi_nom.size))
        qn = self.rng.standard_normal((self.n, 6))
        s0, s1, s2, s3 = self.q_std
        out = []
        for j in range(self.n):
            xi_bar = xi_nom + self.coeff_std * noise[j]
            q = _clip_q(
                q_nom.s_los_min + s0 * qn[j, 0],
                q_nom.s_los_max + s1 * qn[j, 1],
                q_nom.pf + s2 * qn[j, 2:4],
                q_nom.vf + s3 * qn[j, 4:6],
            )
            out.append((xi_bar, q, None))
        return out


# ---------------------------------------------------------------------------
# affine decoder


N_FEATURES = 12
FEATURE_SCALE = np.array([2.0, 2.0, 2.0, 2.0, 5.0, 5.0, 2.0, 2.0, 5.0, 5.0, 5.0, 5.0])
FEATURE_CAP = 15.0


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _inv_softplus(y):
    return float(np.log(np.expm1(y)))


def scene_features(scene: Scene) -> np.ndarray:
    """Robot velocity and acceleration, target relative state, two nearest obstacle offsets."""
    rel_t = scene.target_p - scene.robot_p
    obs = scene.obstacle_p - scene.robot_p
    near = np.zeros((2, 2))
    if obs.shape[0]:
        dist = np.linalg.norm(obs, axis=1)
        order = np.argsort(dist, kind="stable")[:2]
        for i, j in enumerate(order):
            o = obs[j]
            if dist[j] > FEATURE_CAP:
                o = o * (FEATURE_CAP / dist[j])
            near[i] = o
        if order.size == 1:
            near[1] = near[0]
    if obs.shape[0] == 0:
        near[:] = FEATURE_CAP
    f = np.concatenate([scene.robot_v, scene.robot_a, rel_t, scene.target_v, near.reshape(-1)])
    return f / FEATURE_SCALE


@dataclass
class Decoded:
    xi_bar: np.ndarray
    q: ConstraintParams
    xi0: np.ndarray
    lam0: np.ndarray
    features: np.ndarray
    u: np.ndarray  # raw pre-softplus outputs for the separation bounds


class TrainedDecoder:
    """Affine map from scene features to corrections of the nominal plan.

    Output layout (``n_xi = 2 n_c``): ``[dxi_bar (n_xi), u_min, u_max, dpf (2), dvf (2),
    dxi0 (n_xi), lam0 (n_xi)]``.  Separation bounds are
    ``s_min = eps + softplus(u_min + c_min)`` and
    ``s_max = s_min + eps + softplus(u_max + c_max)`` with offsets chosen so a
    zero map reproduces the nominal ``[1, 4]`` band.
    """

    def __init__(self, n_xi: int, weights: np.ndarray | None = None, noise_std: float = 0.4):
        self.n_xi = int(n_xi)
        self.n_out = 3 * self.n_xi + 6
        self.noise_std = float(noise_std)
        self.weights = np.zeros((self.n_out, N_FEATURES + 1)) if weights is None else np.array(weights, dtype=float)
        if self.weights.shape != (self.n_out, N_FEATURES + 1):
            raise ValueError(f"decoder weights must have shape {(self.n_out, N_FEATURES + 1)}")
        self.c_min = _inv_softplus(S_LOS_MIN_NOMINAL - EPS_Q)
        self.c_max = _inv_softplus(S_LOS_MAX_NOMINAL - S_LOS_MIN_NOMINAL - EPS_Q)

    def copy(self) -> "TrainedDecoder":
        return TrainedDecoder(self.n_xi, self.weights.copy(), self.noise_std)

    # slices into the output vector
    @property
    def sl_xi_bar(self):
        return slice(0, self.n_xi)

    @property
    def sl_u(self):
        return slice(self.n_xi, self.n_xi + 2)

    @property
    def sl_pf(self):
        return slice(self.n_xi + 2, self.n_xi + 4)

    @property
    def sl_vf(self):
        return slice(self.n_xi + 4, self.n_xi + 6)

    @property
    def sl_xi0(self):
        return slice(self.n_xi + 6, 2 * self.n_xi + 6)

    @property
    def sl_lam0(self):
        return slice(2 * self.n_xi + 6, 3 * self.n_xi + 6)

    def decode(self, scene: Scene, basis: BasisSet) -> Decoded:
        phi = np.append(scene_features(scene), 1.0)
        out = self.weights @ phi
        q_nom = nominal_q(scene, basis)
        u = out[self.sl_u]
        s_min = EPS_Q + softplus(u[0] + self.c_min)
        s_max = s_min + EPS_Q + softplus(u[1] + self.c_max)
        q = ConstraintParams(s_min, s_max, q_nom.pf + out[self.sl_pf], q_nom.vf + out[self.sl_vf])
        xi_bar = nominal_xi(scene, q_nom, basis) + out[self.sl_xi_bar]
        xi0 = xi_bar + out[self.sl_xi0]
        return Decoded(xi_bar=xi_bar, q=q, xi0=xi0, lam0=out[self.sl_lam0].copy(), features=phi, u=u)

    def output_grad(self, dec: Decoded, d_xi_bar, d_q, d_xi0, d_lam0) -> np.ndarray:
        """Gradient w.r.t. the raw output vector given gradients w.r.t. the decoded quantities.

        ``d_xi_bar`` must be the partial with ``xi0`` held fixed.
        """
        g = np.zeros(self.n_out)
        g[self.sl_xi_bar] = d_xi_bar + d_xi0
        g[self.sl_xi0] = d_xi0
        g[self.sl_lam0] = d_lam0
        g[self.sl_pf] = d_q[2:4]
        g[self.sl_vf] = d_q[4:6]
        g[self.n_xi] = (d_q[0] + d_q[1]) * sigmoid(dec.u[0] + self.c_min)
        g[self.n_xi + 1] = d_q[1] * sigmoid(dec.u[1] + self.c_max)
        return g

    def sample(self, scene: Scene, basis: BasisSet, n: int, rng: np.random.Generator, fixed_q: bool = False):
        dec = self.decode(scene, basis)
        q = nominal_q(scene, basis) if fixed_q else dec.q
        noise = rng.standard_normal((n, self.n_xi))
        out = []
        for j in range(n):
            xi_bar = dec.xi_bar + self.noise_std * noise[j]
            out.append((xi_bar, q, (xi_bar + (dec.xi0 - dec.xi_bar), dec.lam0)))
        return out


# ---------------------------------------------------------------------------
# planner


@dataclass
class PlanDiagnostics:
    costs: np.ndarray
    smoothness: np.ndarray
    occlusion: np.ndarray
    max_violation: np.ndarray
    selected: int
    candidates: np.ndarray
    qs: list
    n_failed: int = 0
    multipliers: np.ndarray | None = None  # final lambda per candidate (nan for raw / failed)


POLICIES = ("base", "trained", "ablation-fixed-q", "raw-unprojected")


@dataclass
class Planner:
    """Bundles a candidate source, a projection workspace and cost weights."""

    ws: ProjectionWorkspace
    weights: CostWeights = field(default_factory=CostWeights)
    sampler: BaseSampler = field(default_factory=BaseSampler)
    decoder: TrainedDecoder | None = None
    policy: str = "base"
    carry_multipliers: bool = True

    def __post_init__(self):
        self._lam = None
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")
        if self.policy in ("trained", "ablation-fixed-q") and self.decoder is None:
            raise ValueError(f"policy {self.policy!r} needs a trained decoder")

    @property
    def basis(self) -> BasisSet:
        return self.ws.basis

    def reset(self) -> None:
        """Forget the multipliers carried over from the previous cycle."""
        self._lam = None

    def candidates(self, scene: Scene):
        if self.policy in ("base", "raw-unprojected"):
            samples = self.sampler.sample(scene, self.basis)
            lam = self._lam
            if self.policy == "base" and self.carry_multipliers and lam is not None:
                # even-indexed samples start from the previous cycle's multipliers, odd ones cold
                samples = [(xb, q, (xb, lam) if j % 2 == 0 else None) for j, (xb, q, _) in enumerate(samples)]
            return samples
        return self.decoder.sample(scene, self.basis, self.sampler.n, self.sampler.rng,
                                   fixed_q=self.policy == "ablation-fixed-q")

    def plan(self, scene: Scene):
        xi, diag = plan(scene, self, self.ws, self.weights)
        lam = diag.multipliers[diag.selected]
        self._lam = lam.copy() if np.all(np.isfinite(lam)) else None
        return xi, diag


def rank_candidates(xis: np.ndarray, scene: Scene, basis: BasisSet, weights: CostWeights, target_traj):
    """Costs of ``(B, n_xi)`` candidates: total, smoothness, occlusion."""
    traj = eval_trajectory(np.atleast_2d(xis), basis)
    pos, acc = traj.pos, traj.acc
    obs_traj = obstacle_trajectories(scene, basis)
    smooth = np.sum(acc**2, axis=(-2, -1))
    occ = occlusion_cost(pos, target_traj, obs_traj, scene.radius)
    cost = weights.w1 * smooth + weights.w2 * occ
    if weights.w3:
        cost = cost + weights.w3 * clearance_cost(pos, obs_traj, scene.radius)
    return cost, smooth, occ


def plan(scene: Scene, source, ws: ProjectionWorkspace, weights: CostWeights):
    """Draw candidates, project them, return the cheapest coefficients and diagnostics.

    ``source`` is a ``Planner``, a ``BaseSampler`` or a ``TrainedDecoder``.
    Ties go to the lowest candidate index.
    """
    basis = ws.basis
    if isinstance(source, Planner):
        samples = source.candidates(scene)
        raw = source.policy == "raw-unprojected"
    elif isinstance(source, BaseSampler):
        samples, raw = source.sample(scene, basis), False
    elif isinstance(source, TrainedDecoder):
        samples, raw = source.sample(scene, basis, 16, np.random.default_rng(0)), False
    else:
        raise TypeError(f"unsupported candidate source {type(source).__name__}")
    pruned = prune_obstacles(scene, ws.layout.n_obs)
    target_traj = predict_target(scene.target_p, scene.target_v, basis)
    n = len(samples)
    xis = np.full((n, ws.n_xi), np.nan)
    lams = np.full((n, ws.n_xi), np.nan)
    if raw:
        for j, (xi_bar, q, _) in enumerate(samples):
            xis[j] = equality_only_projection(ws, xi_bar, q, pruned)
    else:
        for j, res in enumerate(project_batch(ws, samples, pruned, target_traj)):
            if not isinstance(res, ProjectionError):
                xis[j] = res.xi
                lams[j] = res.lam
    finite = np.all(np.isfinite(xis), axis=1)
    cost = np.full(n, np.inf)
    smooth = np.full(n, np.nan)
    occ = np.full(n, np.nan)
    if finite.any():
        c, s, o = rank_candidates(xis[finite], scene, basis, weights, target_traj)
        cost[finite], smooth[finite], occ[finite] = c, s, o
    cost[~np.isfinite(cost)] = np.inf
    limits = ws.limits
    viol = np.full(n, np.nan)
    for j in np.flatnonzero(finite):
        viol[j] = constraint_violations(xis[j], pruned, samples[j][1], limits, basis, target_traj).max_violation
    diag = PlanDiagnostics(costs=cost, smoothness=smooth, occlusion=occ, max_violation=viol,
                           selected=-1, candidates=xis, qs=[s[1] for s in samples], n_failed=int(n - finite.sum()),
                          multipliers=lams)
    if not np.isfinite(cost).any():
        raise PlanningError("all candidates are non-finite", diag)
    diag.selected = int(np.argmin(cost))
    return xis[diag.selected].copy(), diag
