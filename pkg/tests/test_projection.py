import numpy as np
import pytest

from trackproj.basis import eval_trajectory
from trackproj.constraints import (
    ConstraintParams,
    KinematicLimits,
    Scene,
    assemble_equality,
    constraint_violations,
    prune_obstacles,
)
from trackproj.instances import random_instance, random_scene
from trackproj.policy import nominal_xi, predict_target, shift_xi
from trackproj.projection import (
    ProjectionError,
    SingularKKTError,
    factorization_count,
    make_workspace,
    prefactorize,
    project,
    project_batch,
)

Z = np.zeros(2)


def test_empty_system_is_identity():
    ws = prefactorize(np.zeros((0, 6)), np.zeros((0, 6)), 1.0, 5)
    rhs = np.arange(6.0)
    np.testing.assert_array_equal(ws.solve(rhs), rhs)


def test_factor_multiply_back(rng):
    F = rng.normal(size=(30, 8))
    A = rng.normal(size=(3, 8))
    ws = prefactorize(F, A, 1.0, 5)
    rhs = rng.normal(size=11)
    z = ws.solve(rhs)
    np.testing.assert_allclose(ws.kkt_matrix() @ z, rhs, atol=1e-10)


def test_rank_deficient_A_rejected(rng):
    A = rng.normal(size=(3, 8))
    A[2] = A[0] + A[1]
    with pytest.raises(SingularKKTError):
        prefactorize(rng.normal(size=(10, 8)), A)
    with pytest.raises(ValueError):
        prefactorize(rng.normal(size=(10, 8)), rng.normal(size=(2, 8)), rho=0.0)


def test_factor_shared_across_q(ws, rng):
    inst = random_instance(rng, ws.basis)
    q2 = ConstraintParams(0.3, 9.0, inst.q.pf + 1, inst.q.vf)
    before = factorization_count()
    project(ws, inst.xi_bar, inst.q, inst.scene)
    project(ws, inst.xi_bar, q2, inst.scene)
    assert factorization_count() == before
    ws2 = ws.with_iterations(10)
    assert ws2.kkt_factor is ws.kkt_factor


def _stationary_scene(tp=(2.5, 0.0), obstacles=None):
    obs = np.zeros((0, 2)) if obstacles is None else np.asarray(obstacles, dtype=float)
    return Scene(Z, Z, Z, tp, Z, obs, np.zeros_like(obs), 0.5)


def test_feasible_input_is_fixed_point(ws):
    sc = prune_obstacles(_stationary_scene(), 20)
    q = ConstraintParams(1.0, 4.0, Z, Z)
    xi_bar = shift_xi(np.zeros(22), Z, ws.basis)
    res = project(ws, xi_bar, q, sc)
    np.testing.assert_allclose(res.xi, xi_bar, atol=1e-6)
    assert np.max(res.residual_history) <= 1e-6
    assert res.iterations_run == 100 and res.residual_history.shape == (101, 2)


def test_obstacle_on_path_is_avoided(basis):
    ws = make_workspace(basis, KinematicLimits(3.0, 3.0), 20, 0.2, 100)
    # robot moves from the origin to (8, 0) past an obstacle just off the line;
    # an obstacle exactly on the symmetry axis is a saddle the update cannot leave
    sc0 = Scene(Z, [1.6, 0.0], Z, [2.0, 1.0], [1.6, 0.0], [[4.0, 0.1]], [[0.0, 0.0]], 1.0)
    sc = prune_obstacles(sc0, 20)
    q = ConstraintParams(0.5, 10.0, [8.0, 0.0], [1.6, 0.0])
    s = basis.times / basis.horizon_s
    line = np.outer(s, [8.0, 0.0])
    c = np.linalg.lstsq(basis.W, line, rcond=None)[0]
    xi_bar = np.concatenate([c[:, 0], c[:, 1]])
    assert np.min(np.linalg.norm(eval_trajectory(xi_bar, basis).pos - [4.0, 0.1], axis=1)) < 0.15
    res = project(ws, xi_bar, q, sc)
    clearance = np.linalg.norm(eval_trajectory(res.xi, basis).pos - [4.0, 0.1], axis=1)
    assert clearance.min() >= 1.0 - 0.05


def test_speed_demand_is_capped(ws):
    basis = ws.basis
    v_max = ws.limits.v_max
    # the sample runs at three times the limit; the boundary conditions stay reachable
    sc = prune_obstacles(Scene(Z, [2.0, 0], Z, [2.0, 0.0], [2.0, 0], []), 20)
    q = ConstraintParams(0.5, 100.0, [9.0, 0.0], [2.0, 0])
    xi_bar = np.concatenate([np.linalg.lstsq(basis.W, 3 * v_max * basis.times, rcond=None)[0], np.zeros(11)])
    assert np.max(np.linalg.norm(eval_trajectory(xi_bar, basis).vel, axis=1)) >= 3 * v_max - 1e-6
    res = project(ws, xi_bar, q, sc)
    speed = np.linalg.norm(eval_trajectory(res.xi, basis).vel, axis=1)
    assert speed.max() <= v_max + 0.02


def test_equality_exact_every_instance(ws, rng):
    for _ in range(10):
        inst = random_instance(rng, ws.basis)
        res = project(ws, inst.xi_bar, inst.q, inst.scene)
        A, b = assemble_equality(inst.scene.boundary(inst.q), inst.q, ws.basis)
        assert np.max(np.abs(A @ res.xi - b)) <= 1e-8


def test_batch_of_one_and_duplicates(ws, rng):
    inst = random_instance(rng, ws.basis)
    single = project(ws, inst.xi_bar, inst.q, inst.scene)
    batch = project_batch(ws, [(inst.xi_bar, inst.q, None)] * 5, inst.scene)
    for r in batch:
        assert np.array_equal(r.xi, single.xi) and np.array_equal(r.lam, single.lam)
        assert np.array_equal(r.residual_history, single.residual_history)


def test_batch_is_bitwise_sequential(ws, rng):
    sc, _, _ = random_scene(rng, ws.basis)
    sc = prune_obstacles(sc, 20)
    samples = []
    for j in range(16):
        inst = random_instance(rng, ws.basis, warm_noise=0.1 if j % 2 else None)
        samples.append((inst.xi_bar, inst.q, inst.warm))
    batch = project_batch(ws, samples, sc)
    for s, r in zip(samples, batch):
        seq = project(ws, s[0], s[1], sc, s[2])
        assert np.array_equal(seq.xi, r.xi)


def test_non_finite_input_reports_iteration(ws, rng):
    inst = random_instance(rng, ws.basis)
    bad = inst.xi_bar.copy()
    bad[3] = np.inf
    with pytest.raises(ProjectionError) as err:
        project(ws, bad, inst.q, inst.scene)
    assert err.value.iteration == 1
    out = project_batch(ws, [(bad, inst.q, None), (inst.xi_bar, inst.q, None)], inst.scene)
    assert isinstance(out[0], ProjectionError) and not isinstance(out[1], ProjectionError)


def test_residual_decreases_on_feasible_suite(ws):
    rng = np.random.default_rng(5)
    ok = 0
    n = 40
    for _ in range(n):
        inst = random_instance(rng, ws.basis)
        h = project(ws, inst.xi_bar, inst.q, inst.scene).residual_history
        ok += h[-1, 0] <= 0.1 * h[0, 0]
    assert ok >= 0.95 * n


def test_any_q_gives_finite_iterates(ws):
    rng = np.random.default_rng(6)
    inst = random_instance(rng, ws.basis)
    samples = []
    for _ in range(1000):
        lo = rng.uniform(0.01, 10)
        q = ConstraintParams(lo, lo + rng.uniform(0.01, 10), rng.uniform(-50, 50, 2), rng.uniform(-10, 10, 2))
        samples.append((inst.xi_bar, q, None))
    for chunk in range(0, 1000, 250):
        for r in project_batch(ws, samples[chunk : chunk + 250], inst.scene, K=100):
            assert not isinstance(r, ProjectionError)
            assert np.all(np.isfinite(r.xi))


def test_warm_start_helps(ws):
    rng = np.random.default_rng(7)
    better = 0
    n = 30
    for _ in range(n):
        inst = random_instance(rng, ws.basis)
        first = project(ws, inst.xi_bar, inst.q, inst.scene)
        cold = project(ws, inst.xi_bar, inst.q, inst.scene, K=10)
        warm = project(ws, inst.xi_bar, inst.q, inst.scene, (first.xi, first.lam), K=10)
        better += warm.residual_history[-1, 0] <= cold.residual_history[-1, 0] + 1e-4
    assert better >= 0.9 * n


def test_reprojection_barely_moves(ws):
    rng = np.random.default_rng(8)
    ok = 0
    n = 30
    for _ in range(n):
        inst = random_instance(rng, ws.basis)
        once = project(ws, inst.xi_bar, inst.q, inst.scene)
        twice = project(ws, once.xi, inst.q, inst.scene)
        ok += np.max(np.abs(twice.xi - once.xi)) <= 1e-4
    assert ok >= 0.9 * n


def test_early_exit_option(ws, rng):
    sc = prune_obstacles(_stationary_scene(), 20)
    q = ConstraintParams(1.0, 4.0, Z, Z)
    xi_bar = nominal_xi(sc, q, ws.basis)
    res = project(ws, xi_bar, q, sc, tol=1e-3)
    assert res.iterations_run < 100 and res.residual_history.shape[0] == res.iterations_run + 1


def test_violation_after_projection_small(ws):
    rng = np.random.default_rng(9)
    inst = random_instance(rng, ws.basis)
    res = project(ws, inst.xi_bar, inst.q, inst.scene)
    tt = predict_target(inst.scene.target_p, inst.scene.target_v, ws.basis)
    assert constraint_violations(res.xi, inst.scene, inst.q, ws.limits, ws.basis, tt).max_violation <= 1e-2
