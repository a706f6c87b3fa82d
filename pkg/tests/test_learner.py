import numpy as np
import pytest

from trackproj.basis import eval_trajectory
from trackproj.constraints import Scene, constraint_violations, prune_obstacles
from trackproj.instances import random_scene
from trackproj.learner import (
    Demonstration,
    TrainConfig,
    TrainingError,
    generate_demonstrations,
    train,
    training_loss,
)
from trackproj.policy import (
    BaseSampler,
    CostWeights,
    TrainedDecoder,
    nominal_q,
    nominal_xi,
    occlusion_cost,
    plan,
    predict_target,
)
from trackproj.projection import project
from trackproj.simulator import Scenario, Script, SimConfig

Z = np.zeros(2)


def _demo(seed, basis, n_obs=(1, 6)):
    sc, q, xi_ref = random_scene(np.random.default_rng(seed), basis, n_obs)
    return Demonstration(prune_obstacles(sc, 20), eval_trajectory(xi_ref, basis).pos, 0.0), q, xi_ref


def _random_decoder(basis, seed, scale=0.05):
    n_out = 3 * basis.n_xi + 6
    return TrainedDecoder(basis.n_xi, scale * np.random.default_rng(seed).standard_normal((n_out, 13)))


def test_empty_suite_gives_empty_dataset():
    assert generate_demonstrations([], 16) == []
    with pytest.raises(ValueError):
        generate_demonstrations([], 0)


def test_obstacle_free_demos_have_no_occlusion(basis):
    sc = Scenario("free", (0.0, 0.0, 0.0, 0.0), Script(((2.5, 0.0), (8.0, 0.0)), 1.0), (), sim=SimConfig(duration=0.3))
    demos = generate_demonstrations([sc], 16)
    assert len(demos) == 3
    for d in demos:
        tt = predict_target(d.scene.target_p, d.scene.target_v, basis)
        assert occlusion_cost(d.expert, tt, d.scene.obstacle_p, d.scene.radius) == 0.0
        assert d.expert.shape == (basis.m, 2)


def test_larger_oracle_is_never_worse(ws, basis):
    for seed in range(2):
        sc, _, _ = random_scene(np.random.default_rng(seed), basis, (4, 10))
        _, small = plan(sc, BaseSampler(n=16, seed=seed), ws, CostWeights())
        _, large = plan(sc, BaseSampler(n=512, seed=seed), ws, CostWeights())
        assert large.costs[large.selected] <= small.costs[small.selected]


def test_expert_reproducing_decoder_has_near_zero_loss(ws, basis):
    demo, q, xi_ref = _demo(1, basis)
    sc = demo.scene
    qn = nominal_q(sc, basis)
    dec = TrainedDecoder(basis.n_xi)
    w = dec.weights
    w[dec.sl_xi_bar, -1] = xi_ref - nominal_xi(sc, qn, basis)
    w[dec.n_xi, -1] = -30.0  # s_min near its floor
    w[dec.n_xi + 1, -1] = 30.0  # very wide band
    w[dec.sl_pf, -1] = q.pf - qn.pf
    w[dec.sl_vf, -1] = q.vf - qn.vf
    loss, _ = training_loss(dec, demo, ws, 15, 10.0)
    assert loss <= 1e-3


def test_zero_penalty_is_pure_reconstruction(ws, basis):
    demo, _, _ = _demo(2, basis)
    dec = _random_decoder(basis, 0)
    loss, _ = training_loss(dec, demo, ws, 15, 0.0)
    d = dec.decode(demo.scene, basis)
    tt = predict_target(demo.scene.target_p, demo.scene.target_v, basis)
    xi = project(ws, d.xi_bar, d.q, demo.scene, (d.xi0, d.lam0), tt, K=15).xi
    assert loss == pytest.approx(np.sum((eval_trajectory(xi, basis).pos - demo.expert) ** 2), rel=1e-12)


def test_full_gradient_matches_finite_differences(ws, basis):
    demo, _, _ = _demo(3, basis)
    dec = _random_decoder(basis, 1)
    _, grad = training_loss(dec, demo, ws, 10, 10.0)
    rng = np.random.default_rng(0)
    n_out = dec.weights.shape[0]
    # every output slot type, through both a feature column and the bias
    rows = [0, 5, dec.n_xi, dec.n_xi + 1, dec.n_xi + 2, dec.n_xi + 5, dec.n_xi + 7, 2 * dec.n_xi + 6, n_out - 1]
    coords = [(r, c) for r in rows for c in (int(rng.integers(0, 12)), 12)]
    coords += [(int(rng.integers(0, n_out)), int(rng.integers(0, 13))) for _ in range(20)]
    h = 1e-6
    worst = 0.0
    for r, c in coords:
        plus, minus = dec.copy(), dec.copy()
        plus.weights[r, c] += h
        minus.weights[r, c] -= h
        num = (training_loss(plus, demo, ws, 10, 10.0)[0] - training_loss(minus, demo, ws, 10, 10.0)[0]) / (2 * h)
        worst = max(worst, abs(num - grad[r, c]) / max(abs(num), abs(grad[r, c]), 1e-3))
    assert worst <= 1e-3


def test_zero_learning_rate_keeps_loss_constant(ws, basis):
    data = [_demo(s, basis)[0] for s in (4, 5)]
    _, curve = train(_random_decoder(basis, 2), data, TrainConfig(lr=0.0, epochs=3), ws)
    assert curve[0] == curve[1] == curve[2]


def test_single_demo_overfits(ws, basis):
    demo = _demo(6, basis)[0]
    _, curve = train(TrainedDecoder(basis.n_xi), [demo], TrainConfig(epochs=200, K_train=10), ws)
    assert curve[-1] <= 0.5 * curve[0]


def test_training_is_seeded(ws, basis):
    data = [_demo(s, basis)[0] for s in (7, 8, 9)]
    cfg = TrainConfig(epochs=3, batch_size=2, K_train=5, seed=4)
    d1, c1 = train(TrainedDecoder(basis.n_xi), data, cfg, ws)
    d2, c2 = train(TrainedDecoder(basis.n_xi), data, cfg, ws)
    assert c1 == c2
    assert np.array_equal(d1.weights, d2.weights)


def test_empty_dataset_and_divergence_raise(ws, basis):
    with pytest.raises(TrainingError):
        train(TrainedDecoder(basis.n_xi), [], TrainConfig(), ws)
    with pytest.raises(TrainingError) as err:
        train(TrainedDecoder(basis.n_xi), [_demo(10, basis)[0]], TrainConfig(lr=10.0, epochs=20, K_train=5), ws)
    assert err.value.curve and err.value.diagnostics["initial"] == err.value.curve[0]


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_heavier_penalty_does_not_raise_violation(ws, basis):
    data = [_demo(s, basis, (4, 10))[0] for s in (11, 12, 13)]
    viol = []
    for c_pen in (0.1, 1.0, 10.0):
        dec, _ = train(TrainedDecoder(basis.n_xi), data, TrainConfig(epochs=30, K_train=10, c_pen=c_pen), ws)
        total = 0.0
        for d in data:
            out = dec.decode(d.scene, basis)
            tt = predict_target(d.scene.target_p, d.scene.target_v, basis)
            xi = project(ws, out.xi_bar, out.q, d.scene, (out.xi0, out.lam0), tt, K=10).xi
            total += constraint_violations(xi, d.scene, out.q, ws.limits, basis, tt).penalty
        viol.append(total / len(data))
    assert viol[0] >= viol[1] - 1e-9 and viol[1] >= viol[2] - 1e-9
