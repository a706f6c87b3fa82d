"""Reverse-mode differentiation through a fixed number of projection iterations.

The forward pass records every iterate together with the polar update it
produced.  The reverse pass walks the records backwards; the only linear
algebra it needs is the KKT solve, and since the KKT matrix is symmetric the
adjoint solve reuses the factorisation built by ``prefactorize``.

Per iteration (``r = F xi - off``, ``delta = r - proj(r)`` one 2D pair per row)::

    lam'  = lam - rho F^T delta
    xi'   = KKT^{-1} [rho F^T F xi - rho F^T delta + lam' + xi_bar ; b(q)]

``proj`` scales ``r`` onto the admissible radius band of its row.  Its
Jacobian is the identity while the radius is free and
``(c / |r|) (I - u u^T)`` once the radius is clamped to ``c``; this is the
composition of the ``atan2`` and clipped-norm derivatives with the
derivative of ``scale * d * (cos alpha, sin alpha)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import B_PF_SLOTS, B_VF_SLOTS, ConstraintParams, Scene
from .projection import (
    PolarStep,
    ProjectionResult,
    ProjectionWorkspace,
    _aux_for,
    _warm_arrays,
    apply_F,
    apply_Ft,
    apply_FtF,
    build_problem,
    run_iterations,
)


@dataclass
class UnrollTape:
    ws: ProjectionWorkspace
    q: ConstraintParams
    scene: Scene
    target_traj: np.ndarray
    K_train: int
    xi0: np.ndarray
    lam0: np.ndarray
    xi0_is_xi_bar: bool
    xis: list = field(default_factory=list)
    lams: list = field(default_factory=list)
    polars: list = field(default_factory=list)
    problem: object = None

    def __len__(self) -> int:
        return len(self.polars)

    def alphas(self) -> list[np.ndarray]:
        return [ps.alpha[0] for ps in self.polars]

    def clamp_masks(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(ps.at_lo[0].copy(), ps.at_hi[0].copy()) for ps in self.polars]

    def e_vectors(self) -> list[np.ndarray]:
        """``e`` of every iteration, flat ``[x rows; y rows]``."""
        out = []
        for xi, ps in zip(self.xis, self.polars):
            Fxi = apply_F(self.ws, xi[None])[0]
            out.append((Fxi - ps.delta[0]).reshape(-1))
        return out


@dataclass
class DecoderGrads:
    """Gradients w.r.t. the projection inputs.

    ``d_q`` uses the layout ``[s_los_min, s_los_max, pf_x, pf_y, vf_x, vf_y]``.
    When the warm start was left at its default (``xi0 = xi_bar``), ``d_xi_bar``
    already includes the contribution flowing through ``xi0``.
    """

    d_xi_bar: np.ndarray
    d_q: np.ndarray
    d_xi0: np.ndarray
    d_lambda0: np.ndarray

    def __add__(self, other: "DecoderGrads") -> "DecoderGrads":
        return DecoderGrads(self.d_xi_bar + other.d_xi_bar, self.d_q + other.d_q,
                            self.d_xi0 + other.d_xi0, self.d_lambda0 + other.d_lambda0)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d_xi_bar, self.d_q, self.d_xi0, self.d_lambda0])


def project_with_tape(ws: ProjectionWorkspace, xi_bar, q: ConstraintParams, scene: Scene, warm=None,
                      K_train: int = 15, target_traj=None) -> tuple[ProjectionResult, UnrollTape]:
    from .policy import predict_target

    if ws.layout is None:
        return _unconstrained_with_tape(ws, xi_bar, q, scene, warm, K_train)
    if target_traj is None:
        target_traj = predict_target(scene.target_p, scene.target_v, ws.basis)
    prob = build_problem(ws, np.asarray(xi_bar, dtype=float)[None], [q], scene, target_traj)
    xi0, lam0 = _warm_arrays(prob, [warm])
    tied = warm is None or warm[0] is None
    tape = UnrollTape(ws=ws, q=q, scene=scene, target_traj=np.asarray(target_traj, dtype=float), K_train=int(K_train),
                      xi0=xi0[0].copy(), lam0=lam0[0].copy(), xi0_is_xi_bar=tied, problem=prob)

    def record(k, xi, lam, ps):
        tape.xis.append(xi[0].copy())
        tape.lams.append(lam[0].copy())
        tape.polars.append(ps)

    xi, lam, ps, hist, k_run, failures = run_iterations(ws, prob, xi0, lam0, int(K_train), record=record)
    if failures:
        raise failures[0]
    result = ProjectionResult(xi=xi[0], lam=lam[0], aux=_aux_for(ws, ps, 0), residual_history=hist[0],
                              iterations_run=k_run, q=q)
    return result, tape


def _unconstrained_with_tape(ws, xi_bar, q, scene, warm, K_train):
    """Workspace without inequality rows: ``e = F xi`` always, so only the QP step remains."""
    n = ws.n_xi
    xi_bar = np.asarray(xi_bar, dtype=float).reshape(n)
    xi0 = xi_bar.copy() if warm is None or warm[0] is None else np.asarray(warm[0], dtype=float).reshape(n)
    lam0 = np.zeros(n) if warm is None or warm[1] is None else np.asarray(warm[1], dtype=float).reshape(n)
    b = np.zeros(ws.n_eq)
    tape = UnrollTape(ws=ws, q=q, scene=scene, target_traj=None, K_train=int(K_train), xi0=xi0.copy(),
                      lam0=lam0.copy(), xi0_is_xi_bar=warm is None or warm[0] is None)
    xi = xi0.copy()
    for _ in range(int(K_train)):
        tape.xis.append(xi.copy())
        tape.lams.append(lam0.copy())
        tape.polars.append(None)
        xi = ws.solve(np.concatenate([ws.rho * (ws.FtF @ xi) + lam0 + xi_bar, b]))[:n]
    result = ProjectionResult(xi=xi, lam=lam0.copy(), aux=None, residual_history=np.zeros((int(K_train) + 1, 2)),
                              iterations_run=int(K_train), q=q)
    return result, tape


def replay(tape: UnrollTape) -> tuple[list[np.ndarray], np.ndarray]:
    """Re-run the recorded forward pass; returns the iterates and the residual history."""
    xis = []
    xi, lam, ps, hist, k_run, failures = run_iterations(
        tape.ws, tape.problem, tape.xi0[None], tape.lam0[None], tape.K_train,
        record=lambda k, x, l, p: xis.append(x[0].copy()),
    )
    return xis + [xi[0]], hist[0]


def polar_vjp(ps: PolarStep, j: int, g_delta: np.ndarray, scale: np.ndarray, lo: np.ndarray):
    """Pull ``dL/d delta`` (shape ``(2, R)``) back to ``dL/dr`` and to the row bounds."""
    norm, d = ps.norm[j], ps.d[j]
    u = ps.u[j]
    # a zero lower bound never binds: the radius equals |r| near r = 0
    at_lo = ps.at_lo[j] & (lo > 0)
    at_hi = ps.at_hi[j]
    clamped = at_lo | at_hi
    ug = u[0] * g_delta[0] + u[1] * g_delta[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        shrink = np.where(norm > 0, 1.0 - scale * d / norm, 1.0)
    radial = u * ug
    g_r = np.where(clamped, shrink * (g_delta - radial) + radial, 0.0)
    g_bound = -scale * ug
    g_lo = np.where(at_lo, g_bound, 0.0)
    g_hi = np.where(at_hi, g_bound, 0.0)
    return g_r, g_lo, g_hi


def backward(tape: UnrollTape, dL_dxi, dL_dlam=None) -> DecoderGrads:
    """Vector-Jacobian product of the unrolled map at the recorded point."""
    ws = tape.ws
    prob = tape.problem
    n = ws.n_xi
    g_xi = np.asarray(dL_dxi, dtype=float).reshape(n).copy()
    if not np.all(np.isfinite(g_xi)):
        raise ValueError("seed gradient is not finite")
    g_lam = np.zeros(n) if dL_dlam is None else np.asarray(dL_dlam, dtype=float).reshape(n).copy()
    g_xi_bar = np.zeros(n)
    g_b = np.zeros(ws.n_eq)
    g_s = np.zeros(2)
    rho = ws.rho
    tr = ws.layout.slice("tracking") if ws.layout is not None else None
    zero_eq = np.zeros(ws.n_eq)
    for k in range(len(tape) - 1, -1, -1):
        ps = tape.polars[k]
        y = ws.solve(np.concatenate([g_xi, zero_eq]))
        g_top = y[:n]
        g_b += y[n:]
        g_lam = g_lam + g_top
        g_xi_bar += g_top
        if ps is None:
            g_xi = rho * (ws.FtF @ g_top)
            continue
        g_prev = rho * apply_FtF(ws, g_top[None])[0]
        g_delta = -rho * apply_F(ws, (g_top + g_lam)[None])[0]
        g_r, g_lo, g_hi = polar_vjp(ps, 0, g_delta, prob.scale, prob.lo[0])
        g_prev += apply_Ft(ws, g_r[None])[0]
        g_s[0] += np.sum(g_lo[tr])
        g_s[1] += np.sum(g_hi[tr])
        g_xi = g_prev
    if ws.n_eq == 10:
        d_q = np.concatenate([g_s, g_b[list(B_PF_SLOTS)], g_b[list(B_VF_SLOTS)]])
    else:  # not the tracking equality system: q does not enter
        d_q = np.zeros(6)
    d_xi_bar = g_xi_bar + (g_xi if tape.xi0_is_xi_bar else 0.0)
    return DecoderGrads(d_xi_bar=d_xi_bar, d_q=d_q, d_xi0=g_xi, d_lambda0=g_lam)


COORD_GROUPS = ("xi_bar", "q", "xi0", "lambda0")
Q_NAMES = ("s_los_min", "s_los_max", "pf_x", "pf_y", "vf_x", "vf_y")


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    excluded: np.ndarray  # clamp pattern differs between the +h and -h runs
    names: list
    groups: list

    @property
    def max_rel_err(self) -> float:
        ok = ~self.excluded
        return float(self.rel_err[ok].max()) if ok.any() else 0.0

    @property
    def worst_coordinate(self) -> str:
        ok = np.flatnonzero(~self.excluded)
        return self.names[ok[np.argmax(self.rel_err[ok])]] if ok.size else ""

    def group_max(self) -> dict:
        out = {}
        for g in COORD_GROUPS:
            sel = np.array([gg == g for gg in self.groups]) & ~self.excluded
            out[g] = float(self.rel_err[sel].max()) if sel.any() else 0.0
        return out

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err <= tol


def _coordinate_names(n: int):
    names, groups = [], []
    for g, size in (("xi_bar", n), ("q", 6), ("xi0", n), ("lambda0", n)):
        for i in range(size):
            names.append(f"{g}[{Q_NAMES[i]}]" if g == "q" else f"{g}[{i}]")
            groups.append(g)
    return names, groups


def grad_check(ws: ProjectionWorkspace, xi_bar, q: ConstraintParams, scene: Scene, warm=None, *,
               h: float = 1e-5, K_train: int = 10, seed_grad=None, target_traj=None,
               floor: float = 1e-4) -> GradCheckReport:
    """Compare ``backward`` with central differences of ``g . xi(inputs)`` over every input coordinate.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.  A coordinate is
    boundary-excluded when any clamp flag differs between its ``+h`` and
    ``-h`` runs, i.e. a kink lies inside the stencil.
    """
    from .policy import predict_target

    n = ws.n_xi
    if target_traj is None:
        target_traj = predict_target(scene.target_p, scene.target_v, ws.basis)
    xi_bar = np.asarray(xi_bar, dtype=float)
    if warm is None:
        warm = (xi_bar.copy(), np.zeros(n))
    xi0, lam0 = (np.asarray(a, dtype=float) for a in warm)
    g = np.random.default_rng(0).standard_normal(n) if seed_grad is None else np.asarray(seed_grad, dtype=float)
    _, tape = project_with_tape(ws, xi_bar, q, scene, (xi0, lam0), K_train, target_traj)
    analytic = backward(tape, g).as_vector()

    base = (xi_bar, q.as_vector(), xi0, lam0)
    sizes = [n, 6, n, n]
    samples = []
    for gi, size in enumerate(sizes):
        for i in range(size):
            for sgn in (1.0, -1.0):
                parts = [p.copy() for p in base]
                parts[gi][i] += sgn * h
                samples.append((parts[0], ConstraintParams.from_vector(parts[1]), (parts[2], parts[3])))
    prob = build_problem(ws, np.stack([s[0] for s in samples]), [s[1] for s in samples], scene, target_traj)
    x0, l0 = _warm_arrays(prob, [s[2] for s in samples])
    masks = []

    def record(k, xi, lam, ps):
        masks.append(np.concatenate([ps.at_lo, ps.at_hi], axis=1))

    xi, *_ = run_iterations(ws, prob, x0, l0, K_train, record=record)
    val = xi @ g
    numeric = (val[0::2] - val[1::2]) / (2 * h)
    stacked = np.stack(masks, axis=1)  # (B, K, 2R)
    excluded = np.any(stacked[0::2] != stacked[1::2], axis=(1, 2))
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    names, groups = _coordinate_names(n)
    return GradCheckReport(analytic, numeric, rel, excluded, names, groups)

