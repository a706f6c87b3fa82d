"""Randomised projection instances for test suites and the gradient checker."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, eval_trajectory
from .constraints import ConstraintParams, Scene, prune_obstacles


@dataclass
class Instance:
    scene: Scene  # already pruned to the workspace obstacle count
    q: ConstraintParams
    xi_bar: np.ndarray
    warm: tuple | None = None


def _reference_plan(rng, basis: BasisSet, v_max: float, a_max: float):
    """A smooth random robot plan from the origin that respects the kinematic limits."""
    from .constraints import BoundaryState, assemble_equality

    n = basis.n_c
    T = basis.horizon_s
    for _ in range(200):
        v0 = rng.uniform(-1.0, 1.0, 2)
        a0 = rng.uniform(-0.3, 0.3, 2)
        vf = rng.uniform(-1.0, 1.0, 2)
        pf = 0.5 * (v0 + vf) * T + rng.uniform(-2.0, 2.0, 2)
        q_tmp = ConstraintParams(1.0, 2.0, pf, vf)
        A, b = assemble_equality(BoundaryState(np.zeros(2), v0, a0, pf, vf), q_tmp, basis)
        # minimum-acceleration plan meeting the boundary conditions, plus a smooth wobble
        H = np.zeros((2 * n, 2 * n))
        H[:n, :n] = H[n:, n:] = basis.Wdd.T @ basis.Wdd + 1e-6 * np.eye(n)
        M = np.block([[H, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
        xi = np.linalg.solve(M, np.concatenate([np.zeros(2 * n), b]))[: 2 * n]
        wobble = np.sin(np.pi * basis.times / T)[:, None] * rng.uniform(-1.5, 1.5, 2)
        c = np.linalg.lstsq(basis.W, wobble, rcond=None)[0]
        dxi = np.concatenate([c[:, 0], c[:, 1]])
        # keep only the part of the wobble that leaves the boundary rows untouched
        dxi -= np.linalg.lstsq(A, A @ dxi, rcond=None)[0]
        xi = xi + dxi
        tr = eval_trajectory(xi, basis)
        if (np.linalg.norm(tr.vel, axis=1).max() <= 0.9 * v_max and np.linalg.norm(tr.acc, axis=1).max() <= 0.9 * a_max):
            return xi, tr, q_tmp
    raise RuntimeError("could not draw a kinematically feasible reference plan")


def random_scene(rng: np.random.Generator, basis: BasisSet | None = None, n_obs_range=(1, 20),
                 v_max: float = 3.0, a_max: float = 3.0):
    """Random tracking scene that is feasible by construction.

    A smooth reference plan within the kinematic limits is drawn first.  The
    target moves at constant velocity near it, the separation band brackets
    the reference separation with a random margin, and obstacles are
    scattered so that none touches the reference plan.  Returns
    ``(scene, q, reference_xi)``.
    """
    from .basis import build_basis

    basis = basis or build_basis(family="bernstein")
    xi_ref, tr, q0 = _reference_plan(rng, basis, v_max, a_max)
    T = basis.horizon_s
    ang = rng.uniform(0, 2 * np.pi)
    sep0 = rng.uniform(1.0, 3.0)
    tp = sep0 * np.array([np.cos(ang), np.sin(ang)])
    tv = (tr.pos[-1] - tr.pos[0]) / T + rng.uniform(-0.2, 0.2, 2)
    target = tp[None] + tv[None] * basis.times[:, None]
    sep = np.linalg.norm(tr.pos - target, axis=1)
    s_min = max(0.1, sep.min() - rng.uniform(0.1, 1.0))
    s_max = sep.max() + rng.uniform(0.1, 2.0)
    q = ConstraintParams(s_min, s_max, q0.pf, q0.vf)
    l = rng.uniform(0.3, 0.5)
    n = int(rng.integers(n_obs_range[0], n_obs_range[1] + 1))
    obs = []
    lo = tr.pos.min(axis=0) - 4.0
    hi = tr.pos.max(axis=0) + 4.0
    while len(obs) < n:
        c = rng.uniform(lo, hi)
        if np.min(np.linalg.norm(tr.pos - c, axis=1)) < l + 0.1:
            continue
        obs.append(c)
    ov = rng.uniform(-0.3, 0.3, (n, 2)) * (rng.uniform() < 0.3)
    # moving obstacles must also stay clear of the reference plan
    obs_traj = np.array(obs)[:, None, :] + ov[:, None, :] * basis.times[None, :, None]
    clear = np.min(np.linalg.norm(obs_traj - tr.pos[None], axis=2), axis=1) >= l + 0.1
    ov[~clear] = 0.0
    scene = Scene(np.zeros(2), xi_ref_state(xi_ref, basis, 1), xi_ref_state(xi_ref, basis, 2), tp, tv,
                  np.array(obs).reshape(-1, 2), ov, l)
    return scene, q, xi_ref


def xi_ref_state(xi, basis: BasisSet, order: int) -> np.ndarray:
    tr = eval_trajectory(xi, basis)
    return (tr.vel if order == 1 else tr.acc)[0].copy()


def line_fit(scene: Scene, q: ConstraintParams, basis: BasisSet) -> np.ndarray:
    """Unconstrained least-squares coefficients of the straight line from the robot to ``q.pf``."""
    s = basis.times / basis.horizon_s
    line = np.outer(1 - s, scene.robot_p) + np.outer(s, q.pf)
    c = np.linalg.lstsq(basis.W, line, rcond=None)[0]
    return np.concatenate([c[:, 0], c[:, 1]])


def random_instance(rng: np.random.Generator, basis: BasisSet, n_obs: int = 20, noise: float = 0.4,
                    warm_noise: float | None = None, n_obs_range=None) -> Instance:
    """Scene, q and a noisy line-fit ``xi_bar``; optionally a perturbed warm start."""
    scene, q, _ = random_scene(rng, basis, n_obs_range or (1, n_obs))
    xi_bar = line_fit(scene, q, basis) + rng.normal(0.0, noise, basis.n_xi)
    warm = None
    if warm_noise is not None:
        warm = (xi_bar + rng.normal(0.0, warm_noise, basis.n_xi), rng.normal(0.0, warm_noise, basis.n_xi))
    return Instance(prune_obstacles(scene, n_obs), q, xi_bar, warm)
