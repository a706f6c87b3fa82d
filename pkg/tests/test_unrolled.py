import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackproj.constraints import ConstraintParams, Scene, prune_obstacles
from trackproj.instances import random_instance
from trackproj.projection import factorization_count, prefactorize, project
from trackproj.unrolled import backward, grad_check, project_with_tape, replay

Z = np.zeros(2)


@pytest.fixture(scope="module")
def inst(basis):
    return random_instance(np.random.default_rng(11), basis, warm_noise=0.1)


def test_forward_matches_project_bitwise(ws, inst):
    res, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K_train=10)
    ref = project(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K=10)
    assert np.array_equal(res.xi, ref.xi)
    assert np.array_equal(res.lam, ref.lam)
    assert np.array_equal(res.residual_history, ref.residual_history)


def test_tape_length_and_replay(ws, inst):
    res, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, None, K_train=7)
    assert len(tape) == 7
    assert len(tape.clamp_masks()) == 7 and len(tape.e_vectors()) == 7
    xis, hist = replay(tape)
    assert all(np.array_equal(a, b) for a, b in zip(xis[:-1], tape.xis))
    assert np.array_equal(xis[-1], res.xi)
    assert np.array_equal(hist, res.residual_history)


def test_empty_constraints_give_identity(basis):
    n = basis.n_xi
    ws = prefactorize(np.zeros((0, n)), np.zeros((0, n)), rho=0.5, K=5)
    xi_bar = np.random.default_rng(0).standard_normal(n)
    sc = Scene(Z, Z, Z, [1.0, 0.0], Z, [])
    q = ConstraintParams(1.0, 2.0, Z, Z)
    res, tape = project_with_tape(ws, xi_bar, q, sc, None, K_train=5)
    assert np.allclose(res.xi, xi_bar, atol=1e-12)
    g = np.arange(n, dtype=float)
    grads = backward(tape, g)
    assert np.allclose(grads.d_xi_bar, g, atol=1e-12)
    assert np.array_equal(grads.d_q, np.zeros(6))


def test_zero_seed_gives_zero(ws, inst):
    _, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K_train=10)
    grads = backward(tape, np.zeros(ws.n_xi))
    assert np.array_equal(grads.as_vector(), np.zeros_like(grads.as_vector()))


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_backward_is_linear_in_seed(ws, inst, a, b, seed):
    _, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K_train=10)
    rng = np.random.default_rng(seed)
    g1, g2 = rng.standard_normal((2, ws.n_xi))
    lhs = backward(tape, a * g1 + b * g2).as_vector()
    rhs = a * backward(tape, g1).as_vector() + b * backward(tape, g2).as_vector()
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_backward_leaves_tape_untouched_and_repeats(ws, inst):
    _, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K_train=10)
    before = [x.copy() for x in tape.xis]
    g = np.ones(ws.n_xi)
    first = backward(tape, g).as_vector()
    assert np.array_equal(first, backward(tape, g).as_vector())
    assert all(np.array_equal(a, b) for a, b in zip(before, tape.xis))


def test_backward_needs_no_factorization(ws, inst):
    _, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K_train=10)
    n0 = factorization_count()
    backward(tape, np.ones(ws.n_xi))
    assert factorization_count() == n0


def test_backward_rejects_bad_seed(ws, inst):
    _, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, None, K_train=3)
    with pytest.raises(ValueError):
        backward(tape, np.full(ws.n_xi, np.nan))
    with pytest.raises(ValueError):
        backward(tape, np.ones(ws.n_xi + 1))


def test_smooth_instance_is_nearly_exact(ws, basis):
    # robot at rest near the origin, target and obstacle far away: no clamp binds, the map is affine
    xi_bar = 0.01 * np.random.default_rng(2).standard_normal(basis.n_xi)
    sc = prune_obstacles(Scene(Z, Z, Z, [5.0, 0.0], Z, [[1e3, 1e3]], [[0.0, 0.0]], 0.1), 20)
    q = ConstraintParams(0.5, 1e3, Z, Z)
    _, tape = project_with_tape(ws, xi_bar, q, sc, None, K_train=10)
    assert not any(m[1].any() for m in tape.clamp_masks())
    # central differences are exact on an affine map; a larger step keeps round-off small
    rep = grad_check(ws, xi_bar, q, sc, h=1e-3, K_train=10)
    assert not rep.excluded.any()
    assert rep.max_rel_err <= 1e-6


def test_random_instance_with_clamps(ws, inst):
    rep = grad_check(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, h=1e-5, K_train=10)
    _, tape = project_with_tape(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, K_train=10)
    assert any(m[1].any() for m in tape.clamp_masks())
    assert rep.passed(1e-4), rep.worst_coordinate
    g = rep.group_max()
    assert set(g) == {"xi_bar", "q", "xi0", "lambda0"}


def test_terminal_position_gradient(ws, inst):
    rep = grad_check(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, h=1e-5, K_train=10)
    for name in ("q[pf_x]", "q[pf_y]"):
        i = rep.names.index(name)
        assert not rep.excluded[i]
        assert rep.rel_err[i] <= 1e-4
        assert abs(rep.analytic[i]) > 1e-3


def test_finite_difference_error_is_second_order(ws, basis):
    inst = random_instance(np.random.default_rng(3), basis, warm_noise=0.1)
    reps = {h: grad_check(ws, inst.xi_bar, inst.q, inst.scene, inst.warm, h=h) for h in (1e-5, 1e-3, 2e-3)}
    ok = ~(reps[1e-5].excluded | reps[1e-3].excluded | reps[2e-3].excluded)
    exact = reps[1e-5].analytic
    e1 = np.abs(reps[1e-3].numeric - exact)[ok]
    e2 = np.abs(reps[2e-3].numeric - exact)[ok]
    e5 = np.abs(reps[1e-5].numeric - exact)[ok]
    big = e1 > 1e-9  # truncation well above round-off
    assert big.sum() >= 5
    ratio = e2[big] / e1[big]
    assert np.all((ratio > 3.5) & (ratio < 4.5))
    assert np.all(e5[big] < e1[big])
