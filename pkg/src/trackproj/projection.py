"""Alternating-minimisation projection onto the parameterised feasible set.

Each iteration, for every sample of a batch:

1. polar update of ``(alpha, d)`` from the current residual ``F xi - offsets``;
2. multiplier update ``lam <- lam - rho * F^T (F xi - e)``;
3. equality-constrained QP step, a solve with the prefactorised KKT matrix
   ``[[I + rho F^T F, A^T], [A, 0]]`` and right-hand side
   ``[rho F^T e + lam + xi_bar; b(q)]``.

``F^T e`` is formed as ``F^T F xi - F^T (F xi - e)`` so that far-away padding
points never enter the arithmetic with their raw coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .basis import BasisSet
from .constraints import (
    AuxVars,
    ConstraintParams,
    KinematicLimits,
    RowLayout,
    Scene,
    assemble_F,
    assemble_equality,
    axis_block,
    row_bounds,
    row_offsets,
)

_FACTORIZATIONS = 0


def factorization_count() -> int:
    """Number of KKT factorisations performed by this process so far."""
    return _FACTORIZATIONS


class SingularKKTError(np.linalg.LinAlgError):
    pass


class ProjectionError(RuntimeError):
    def __init__(self, message: str, iteration: int, group: str):
        super().__init__(message)
        self.iteration = iteration
        self.group = group


# penalty weight tuned for the Bernstein basis over a 5 s horizon
DEFAULT_RHO = 0.2

class ProjectionWorkspace:
    """Everything that stays fixed across projections: F, A, rho and the KKT factor.

    The factor depends only on ``(F, A, rho)``; constraint parameters and the
    projected samples enter solely through right-hand sides.
    """

    def __init__(self, F, A, rho, K, kkt_factor, basis=None, limits=None, layout=None):
        self.F = F
        self.A = A
        self.rho = float(rho)
        self.K = int(K)
        self.kkt_factor = kkt_factor
        self.basis = basis
        self.limits = limits
        self.layout = layout
        self.n_xi = F.shape[1]
        self.n_eq = A.shape[0]
        self.FtF = F.T @ F
        if layout is not None:
            G = axis_block(basis, layout.n_obs)
            self.G = np.ascontiguousarray(G)
            self.Gt = np.ascontiguousarray(G.T)
            self.GtG = np.ascontiguousarray(G.T @ G)
        for a in (self.F, self.A, self.FtF):
            a.setflags(write=False)

    @property
    def n_c(self) -> int:
        return self.n_xi // 2

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``M z = rhs`` for a single right-hand side with the stored factor."""
        return scipy.linalg.lu_solve(self.kkt_factor, rhs, check_finite=False)

    def kkt_matrix(self) -> np.ndarray:
        n, p = self.n_xi, self.n_eq
        M = np.zeros((n + p, n + p))
        M[:n, :n] = np.eye(n) + self.rho * self.FtF
        M[:n, n:] = self.A.T
        M[n:, :n] = self.A
        return M

    def with_iterations(self, K: int) -> "ProjectionWorkspace":
        """Shallow copy sharing the factorisation, with a different iteration budget."""
        ws = object.__new__(ProjectionWorkspace)
        ws.__dict__.update(self.__dict__)
        ws.K = int(K)
        return ws


def prefactorize(F, A, rho: float = 1.0, K: int = 100, *, basis=None, limits=None, layout=None) -> ProjectionWorkspace:
    global _FACTORIZATIONS
    F = np.array(F, dtype=float, ndmin=2)
    A = np.array(A, dtype=float, ndmin=2)
    if F.size == 0:
        F = F.reshape(0, A.shape[1] if A.size else F.shape[-1])
    n = F.shape[1]
    if A.size == 0:
        A = A.reshape(0, n)
    if not rho > 0:
        raise ValueError("rho must be positive")
    if A.shape[1] != n:
        raise ValueError(f"A has {A.shape[1]} columns, F has {n}")
    if A.shape[0]:
        rank = np.linalg.matrix_rank(A)
        if rank < A.shape[0]:
            raise SingularKKTError(f"equality matrix is rank deficient: rank {rank} < {A.shape[0]} rows")
    p = A.shape[0]
    M = np.zeros((n + p, n + p))
    M[:n, :n] = np.eye(n) + rho * F.T @ F
    M[:n, n:] = A.T
    M[n:, :n] = A
    lu, piv = scipy.linalg.lu_factor(M, check_finite=True)
    _FACTORIZATIONS += 1
    if np.min(np.abs(np.diag(lu))) <= np.finfo(float).eps * np.max(np.abs(np.diag(lu))) * (n + p):
        raise SingularKKTError("KKT matrix is numerically singular")
    return ProjectionWorkspace(F, A, rho, K, (lu, piv), basis=basis, limits=limits, layout=layout)


def make_workspace(basis: BasisSet, limits: KinematicLimits, n_obs: int = 20, rho: float = DEFAULT_RHO, K: int = 100) -> ProjectionWorkspace:
    """Workspace for the tracking problem with ``n_obs`` obstacle points."""
    F = assemble_F(basis, n_obs)
    zero = np.zeros(2)
    A, _ = assemble_equality(_ZeroBoundary, ConstraintParams(1.0, 2.0, zero, zero), basis)
    return prefactorize(F, A, rho, K, basis=basis, limits=limits, layout=RowLayout(n_obs, basis.m))


class _ZeroBoundary:
    p0 = v0 = a0 = pf = vf = np.zeros(2)


@dataclass
class ProjectionResult:
    xi: np.ndarray
    lam: np.ndarray
    aux: AuxVars
    residual_history: np.ndarray
    iterations_run: int
    q: ConstraintParams | None = None

    @property
    def final_residual(self) -> float:
        return float(self.residual_history[-1, 0])


# --------------------------------------------------------------------------
# batched kernel (all products go through per-sample matmul slices so a
# sample's result does not depend on what else is in the batch)


@dataclass
class Problem:
    """A batch of projection instances sharing one workspace and scene."""

    xi_bar: np.ndarray  # (B, n_xi)
    b: np.ndarray  # (B, n_eq)
    lo: np.ndarray  # (B, R)
    hi: np.ndarray  # (B, R)
    scale: np.ndarray  # (R,)
    off: np.ndarray  # (2, R)
    s_lo: np.ndarray = field(default=None)  # (B,)
    s_hi: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return self.xi_bar.shape[0]


def build_problem(ws: ProjectionWorkspace, xi_bars, qs: Sequence[ConstraintParams], scene: Scene, target_traj) -> Problem:
    if ws.layout is None:
        raise ValueError("workspace was not built for the tracking problem (use make_workspace)")
    if scene.n_obs != ws.layout.n_obs:
        raise ValueError(f"scene has {scene.n_obs} obstacles, workspace expects {ws.layout.n_obs}")
    xi_bars = np.atleast_2d(np.asarray(xi_bars, dtype=float))
    if xi_bars.shape[1] != ws.n_xi:
        raise ValueError(f"xi_bar has length {xi_bars.shape[1]}, expected {ws.n_xi}")
    bs = np.stack([assemble_equality(scene.boundary(q), q, ws.basis)[1] for q in qs])
    s_lo = np.array([q.s_los_min for q in qs])
    s_hi = np.array([q.s_los_max for q in qs])
    lo, hi = row_bounds(ws.layout, ws.limits, s_lo, s_hi)
    return Problem(
        xi_bar=xi_bars,
        b=bs,
        lo=lo,
        hi=hi,
        scale=ws.layout.scale(scene.radius),
        off=row_offsets(scene, target_traj, ws.basis),
        s_lo=s_lo,
        s_hi=s_hi,
    )


def axis_apply(M: np.ndarray, v: np.ndarray, n: int) -> np.ndarray:
    """Apply a per-axis matrix to both halves of the last axis; returns ``(B, 2, rows)``.

    Each sample is its own ``(2, n) @ (n, rows)`` product, so results do not
    depend on the batch size.
    """
    return np.matmul(v.reshape(v.shape[0], 2, n), M.T)


def residual(ws: ProjectionWorkspace, prob: Problem, xi: np.ndarray) -> np.ndarray:
    """``F xi - offsets`` as ``(B, 2, R)``."""
    return axis_apply(ws.G, xi, ws.n_c) - prob.off


def apply_Ft(ws: ProjectionWorkspace, v: np.ndarray) -> np.ndarray:
    """``F^T v`` for ``v`` of shape ``(B, 2, R)``."""
    return np.matmul(v, ws.G).reshape(v.shape[0], -1)


def apply_FtF(ws: ProjectionWorkspace, xi: np.ndarray) -> np.ndarray:
    return axis_apply(ws.GtG, xi, ws.n_c).reshape(xi.shape[0], -1)


def apply_F(ws: ProjectionWorkspace, v: np.ndarray) -> np.ndarray:
    """``F v`` for ``v`` of shape ``(B, n_xi)`` as ``(B, 2, R)`` (no offsets)."""
    return axis_apply(ws.G, v, ws.n_c)


@dataclass
class PolarStep:
    """Polar update of one iteration: everything the reverse pass needs."""

    norm: np.ndarray  # (B, R)
    ratio: np.ndarray
    d: np.ndarray
    u: np.ndarray  # (B, 2, R) unit residual direction (1, 0) where norm == 0
    delta: np.ndarray  # (B, 2, R) constraint residual F xi - e
    at_lo: np.ndarray  # bool (B, R)
    at_hi: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return np.arctan2(self.u[:, 1], self.u[:, 0])

    def row_violation(self, scale) -> np.ndarray:
        return scale * np.abs(self.ratio - self.d)


def polar_step(prob: Problem, r: np.ndarray) -> PolarStep:
    norm = np.sqrt(r[:, 0] * r[:, 0] + r[:, 1] * r[:, 1])
    ratio = norm / prob.scale
    d = np.minimum(np.maximum(ratio, prob.lo), prob.hi)
    zero = norm == 0
    if zero.any():
        u = r / np.where(zero, 1.0, norm)[:, None, :]
        u[:, 0][zero] = 1.0
    else:
        u = r / norm[:, None, :]
    delta = u * (prob.scale * (ratio - d))[:, None, :]
    at_lo = ratio <= prob.lo
    at_hi = ratio >= prob.hi
    return PolarStep(norm=norm, ratio=ratio, d=d, u=u, delta=delta, at_lo=at_lo, at_hi=at_hi)


def kkt_solve(ws: ProjectionWorkspace, top: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample KKT solves; returns the primal block and the equality multipliers."""
    B = top.shape[0]
    out = np.empty((B, ws.n_xi + ws.n_eq))
    rhs = np.concatenate([top, b], axis=1)
    for j in range(B):
        out[j] = ws.solve(rhs[j])
    return out[:, : ws.n_xi], out[:, ws.n_xi :]


def am_step(ws: ProjectionWorkspace, prob: Problem, xi: np.ndarray, lam: np.ndarray, ps: PolarStep):
    """Multiplier and QP updates for one iteration given the polar step at ``xi``."""
    Ft_delta = apply_Ft(ws, ps.delta)
    rho = ws.rho
    lam_new = lam - rho * Ft_delta
    top = rho * (apply_FtF(ws, xi) - Ft_delta) + lam_new + prob.xi_bar
    xi_new, _ = kkt_solve(ws, top, prob.b)
    return xi_new, lam_new


def history_entry(ps: PolarStep, scale: np.ndarray) -> np.ndarray:
    """``(|F xi - e|, max row violation)`` per sample."""
    viol = ps.row_violation(scale)
    res = np.sqrt(np.sum(ps.delta[:, 0] ** 2 + ps.delta[:, 1] ** 2, axis=-1))
    return np.stack([res, np.max(viol, axis=-1)], axis=-1)


def run_iterations(ws, prob: Problem, xi0, lam0, K: int, tol: float | None = None, record=None):
    """Run up to ``K`` iterations for the whole batch.

    Returns ``(xi, lam, polar, history, iterations_run, failures)``.
    ``history[:, 0]`` describes the initial iterate and ``history[:, k]`` the
    iterate after ``k`` updates, so a run of ``k`` iterations has ``k + 1``
    rows.  ``polar`` is the polar
    update evaluated at the returned ``xi``.  ``failures`` maps a sample
    index to a ``ProjectionError``.  ``record(k, xi_k, lam_k, polar_k)`` is
    called before every update.
    """
    xi = np.array(xi0, dtype=float)
    lam = np.array(lam0, dtype=float)
    B = prob.size
    history = np.zeros((B, K + 1, 2))
    failures: dict[int, ProjectionError] = {}
    k_run = 0
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        ps = polar_step(prob, residual(ws, prob, xi))
        history[:, 0] = history_entry(ps, prob.scale)
        for k in range(K):
            if record is not None:
                record(k, xi, lam, ps)
            prev = ps
            xi, lam = am_step(ws, prob, xi, lam, ps)
            ps = polar_step(prob, residual(ws, prob, xi))
            history[:, k + 1] = history_entry(ps, prob.scale)
            k_run = k + 1
            finite = np.all(np.isfinite(xi), axis=1) & np.all(np.isfinite(lam), axis=1)
            for j in np.flatnonzero(~finite):
                if int(j) not in failures:
                    bad = np.flatnonzero(~np.all(np.isfinite(prev.delta[j]), axis=0))
                    group = ws.layout.group_of_row(int(bad[0])) if bad.size else "kkt"
                    failures[int(j)] = ProjectionError(
                        f"non-finite iterate in sample {j} at iteration {k + 1} (group: {group})", k + 1, group
                    )
            if tol is not None and np.all(history[:, k + 1, 0] <= tol):
                break
    return xi, lam, ps, history[:, : k_run + 1], k_run, failures


def _warm_arrays(prob: Problem, warms):
    B, n = prob.xi_bar.shape
    xi0 = prob.xi_bar.copy()
    lam0 = np.zeros((B, n))
    for j, w in enumerate(warms):
        if w is None:
            continue
        a, l0 = w
        if a is not None:
            xi0[j] = np.asarray(a, dtype=float).reshape(n)
        if l0 is not None:
            lam0[j] = np.asarray(l0, dtype=float).reshape(n)
    return xi0, lam0


def _aux_for(ws, ps: PolarStep, j: int) -> AuxVars:
    return AuxVars(alpha=ps.alpha[j], d=ps.d[j], layout=ws.layout,
                   degenerate_rows=np.flatnonzero(ps.norm[j, ws.layout.slice("obstacle")] == 0.0))


def project_batch(ws: ProjectionWorkspace, samples, scene: Scene, target_traj=None, *, K: int | None = None,
                  tol: float | None = None):
    """Project every ``(xi_bar, q, warm)`` sample; ``warm`` is ``None`` or ``(xi0, lam0)``.

    Samples never interact, so each result is bitwise what ``project`` returns
    for it alone.  A failing sample yields its ``ProjectionError`` in place of
    a result.
    """
    from .policy import predict_target

    samples = list(samples)
    if not samples:
        return []
    if target_traj is None:
        target_traj = predict_target(scene.target_p, scene.target_v, ws.basis)
    xi_bars = np.stack([np.asarray(s[0], dtype=float).reshape(-1) for s in samples])
    qs = [s[1] for s in samples]
    warms = [s[2] if len(s) > 2 else None for s in samples]
    prob = build_problem(ws, xi_bars, qs, scene, target_traj)
    xi0, lam0 = _warm_arrays(prob, warms)
    K = ws.K if K is None else int(K)
    xi, lam, ps, hist, k_run, failures = run_iterations(ws, prob, xi0, lam0, K, tol=tol)
    out = []
    for j in range(prob.size):
        if j in failures:
            out.append(failures[j])
            continue
        out.append(ProjectionResult(xi=xi[j], lam=lam[j], aux=_aux_for(ws, ps, j),
                                    residual_history=hist[j], iterations_run=k_run, q=qs[j]))
    return out


def project(ws: ProjectionWorkspace, xi_bar, q: ConstraintParams, scene: Scene, warm=None, target_traj=None, *,
            K: int | None = None, tol: float | None = None) -> ProjectionResult:
    res = project_batch(ws, [(xi_bar, q, warm)], scene, target_traj, K=K, tol=tol)[0]
    if isinstance(res, ProjectionError):
        raise res
    return res


def equality_only_projection(ws: ProjectionWorkspace, xi_bar, q: ConstraintParams, scene: Scene) -> np.ndarray:
    """Nearest coefficients satisfying only the boundary conditions."""
    A, b = assemble_equality(scene.boundary(q), q, ws.basis)
    n = ws.n_xi
    M = np.block([[np.eye(n), A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
    z = np.linalg.solve(M, np.concatenate([np.asarray(xi_bar, dtype=float), b]))
    return z[:n]
