import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackproj.basis import eval_at
from trackproj.constraints import Scene
from trackproj.policy import BaseSampler, CostWeights, plan, shift_xi
from trackproj.simulator import (
    LOG_COLUMNS,
    PlanSegment,
    Scenario,
    Script,
    SimConfig,
    StationaryPlanner,
    TrajectoryLog,
    WorldState,
    build_planner,
    compute_metrics,
    hold_segment,
    initial_world,
    los_occluded,
    run_episode,
    scene_from_world,
    step_world,
    synth_lidar,
)
from trackproj.suites import occlusion_oracle_scenario

Z = np.zeros(2)


def _world(obstacles=(), radius=1.0, robot=(0.0, 0.0), target=(3.0, 0.0), target_v=(0.0, 0.0)):
    op = np.array(obstacles, dtype=float).reshape(-1, 2)
    return WorldState(0.0, np.array(robot, float), Z.copy(), Z.copy(), np.array(target, float),
                      np.array(target_v, float), op, np.zeros_like(op), radius)


def test_lidar_empty_world():
    assert synth_lidar(_world(), 180, 15.0).points.shape == (0, 2)


def test_lidar_obstacle_dead_ahead():
    scan = synth_lidar(_world([(5.0, 0.0)], 1.0), 180, 20.0)
    zero = np.flatnonzero(scan.beam_angles == 0.0)
    assert zero.size == 1
    assert np.allclose(scan.points[zero[0]], [4.0, 0.0], atol=1e-12)


def test_lidar_points_lie_on_circles():
    rng = np.random.default_rng(0)
    obs = rng.uniform(-10, 10, (12, 2))
    obs = obs[np.linalg.norm(obs, axis=1) > 1.5]
    w = _world(obs, 0.7, robot=(0.3, -0.2))
    scan = synth_lidar(w, 360, 15.0)
    assert scan.points.shape[0] > 0
    centres = obs[scan.obstacle_ids] - w.robot_p
    r = np.linalg.norm(scan.points - centres, axis=1)
    assert np.max(np.abs(r - 0.7)) <= 1e-9
    # each point lies on its beam and within range
    d = np.linalg.norm(scan.points, axis=1)
    assert np.all(d <= 15.0)
    assert np.allclose(scan.points, d[:, None] * np.stack([np.cos(scan.beam_angles), np.sin(scan.beam_angles)], 1))


def test_lidar_range_limit_and_inside():
    assert synth_lidar(_world([(30.0, 0.0)]), 90, 15.0).points.shape == (0, 2)
    scan = synth_lidar(_world([(0.2, 0.0)], 1.0), 90, 15.0)
    assert scan.inside and np.array_equal(scan.points, np.zeros((1, 2)))
    with pytest.raises(ValueError):
        synth_lidar(_world(), 0, 15.0)


def test_scene_is_robot_centred():
    w = _world([(5.0, 1.0)], 1.0, robot=(2.0, 1.0), target=(4.0, 3.0), target_v=(0.5, 0.0))
    sc = scene_from_world(w, synth_lidar(w, 180, 15.0))
    assert np.array_equal(sc.robot_p, Z)
    assert np.allclose(sc.target_p, [2.0, 2.0])
    assert np.all(np.abs(np.linalg.norm(sc.obstacle_p - [3.0, 0.0], axis=1) - 1.0) <= 1e-9)


def test_step_world_stationary():
    w = _world([(5.0, 0.0)])
    w2 = step_world(w, 0.1, None)
    assert w2.t == pytest.approx(0.1)
    for name in ("robot_p", "target_p", "obstacle_p"):
        assert np.array_equal(getattr(w2, name), getattr(w, name))
    with pytest.raises(ValueError):
        step_world(w, 0.0, None)


def test_step_world_constant_velocity_target():
    w2 = step_world(_world(target_v=(1.0, 0.0)), 0.1, None)
    assert np.allclose(w2.target_p, [3.1, 0.0])


def test_robot_follows_plan(basis):
    xi = np.random.default_rng(1).standard_normal(basis.n_xi)
    origin = np.array([2.0, -1.0])
    seg = PlanSegment(xi, 0.0, origin, basis)
    w = _world()
    for _ in range(10):
        w = step_world(w, 0.1, seg)
    p, v, a = eval_at(xi, basis, 1.0)
    assert np.allclose(w.robot_p, origin + p, atol=1e-9)
    assert np.allclose(w.robot_v, v, atol=1e-9)
    assert np.allclose(w.robot_a, a, atol=1e-9)


def test_hold_segment_is_stationary(basis):
    seg = hold_segment(np.array([1.5, 2.0]), basis)
    for t in (0.0, 1.3, 4.9):
        p, v, a = seg.state_at(t)
        assert np.allclose(p, [1.5, 2.0]) and np.allclose(v, 0.0, atol=1e-9)


def test_script_motion():
    s = Script(((0.0, 0.0), (2.0, 0.0), (2.0, 2.0)), 1.0)
    assert np.allclose(s.state(1.0)[0], [1.0, 0.0])
    assert np.allclose(s.state(3.0)[0], [2.0, 1.0]) and np.allclose(s.state(3.0)[1], [0.0, 1.0])
    assert np.allclose(s.state(10.0)[0], [2.0, 2.0]) and not s.state(10.0)[1].any()
    loop = Script(((0.0, 0.0), (1.0, 0.0)), 1.0, loop=True)
    assert np.allclose(loop.state(2.5)[0], [0.5, 0.0])
    with pytest.raises(ValueError):
        Script((), 1.0)


def test_occlusion_oracle_two_seconds():
    sc = occlusion_oracle_scenario(0.05)
    m, log, _ = run_episode(sc, StationaryPlanner())
    assert abs(m.occlusion_time - 2.0) <= sc.sim.dt
    assert m.collision_count == 0 and not m.success


def test_obstacle_free_run_succeeds():
    sc = Scenario("free", (0.0, 0.0, 0.0, 0.0), Script(((2.5, 0.0), (8.0, 0.0)), 1.0), (),
                  sim=SimConfig(duration=1.0))
    m, log, times = run_episode(sc)
    assert m.occlusion_time == 0.0 and m.success and m.collision_count == 0
    assert m.acc_min <= m.acc_mean <= m.acc_max
    assert len(times) == 10


def test_metrics_recompute_exactly_and_runs_are_deterministic():
    sc = Scenario("pillar", (0.0, 0.0, 0.0, 0.0), Script(((2.5, 0.0), (8.0, 0.0)), 1.0),
                  (Script(((4.0, 0.6),), 0.0),), 0.5, sim=SimConfig(duration=1.5))
    m1, log1, _ = run_episode(sc)
    m2, log2, _ = run_episode(sc)
    assert compute_metrics(log1).deterministic_fields() == m1.deterministic_fields()
    assert log1.rows == log2.rows
    assert m1.deterministic_fields() == m2.deterministic_fields()


def test_three_step_log():
    def row(k, occ, ax):
        return (k, 0.1 * k, 0.0, 0.0, 0.0, 0.0, ax, 0.0, 1.0, 0.0, occ, 0, 1.0, 1, 0)

    log = TrajectoryLog(0.1, [row(0, 0, 1.0), row(1, 1, 2.0), row(2, 0, 4.0)])
    m = compute_metrics(log)
    assert m.occlusion_time == pytest.approx(0.1)
    assert (m.acc_min, m.acc_max) == (1.0, 4.0)
    assert m.acc_mean == pytest.approx(7.0 / 3.0)
    assert m.duration == pytest.approx(0.3)


def test_acceleration_stats_match_naive_loop():
    sc = Scenario("walk", (0.0, 0.0, 0.5, 0.0), Script(((2.5, 0.0), (2.5, 6.0)), 1.0), (), sim=SimConfig(duration=1.0))
    m, log, _ = run_episode(sc)
    a = [np.hypot(r[LOG_COLUMNS.index("robot_ax")], r[LOG_COLUMNS.index("robot_ay")]) for r in log.rows]
    assert m.acc_min == min(a) and m.acc_max == max(a)
    assert m.acc_mean == pytest.approx(sum(a) / len(a), rel=1e-12)


def test_malformed_log_rejected():
    with pytest.raises(ValueError):
        compute_metrics(TrajectoryLog(0.1, []))
    with pytest.raises(ValueError):
        compute_metrics(TrajectoryLog(0.1, [(0, 0.0, 1.0)]))


def test_collisions_count_entries():
    # the robot sits still while a looping obstacle passes over it twice per lap
    sc = Scenario("hit", (0.0, 0.0, 0.0, 0.0), Script(((3.0, 0.0),), 0.0),
                  (Script(((-2.0, 0.0), (2.0, 0.0)), 4.0, loop=True),), 0.5, sim=SimConfig(duration=4.0))
    m, log, _ = run_episode(sc, StationaryPlanner())
    assert m.collision_count == 4
    assert not m.success


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(0.2, 2.0))
def test_los_matches_dense_sampling(v, r):
    a, b, o = np.array(v[0:2]), np.array(v[2:4]), np.array(v[4:6])
    s = np.linspace(0.0, 1.0, 1000)
    d = np.min(np.linalg.norm(a + s[:, None] * (b - a) - o, axis=1))
    if abs(d - r) <= 1e-3 + np.linalg.norm(b - a) / 999:
        return  # too close to tangency for the sampled reference
    assert los_occluded(a, b, [o], r) == bool(d < r)


def test_executed_path_is_continuous():
    sc = Scenario("cont", (0.0, 0.0, 0.0, 0.0), Script(((2.5, 0.0), (8.0, 2.0)), 1.5),
                  (Script(((4.0, -1.0),), 0.0),), 0.5, sim=SimConfig(duration=2.0))
    _, log, _ = run_episode(sc)
    p = np.stack([log.column("robot_x"), log.column("robot_y")], 1)
    step = np.linalg.norm(np.diff(p, axis=0), axis=1)
    assert np.all(step <= sc.limits.v_max * sc.sim.dt + 1e-6)


def test_planning_is_frame_invariant(ws):
    local = Scene(Z, [0.4, 0.1], [0.0, 0.1], [2.5, 0.5], [0.6, 0.0], [[3.0, 1.5], [5.0, -0.5]], [], 0.5)
    pose = np.array([7.0, -3.0])
    world = local.shifted(pose)
    xi_l, d_l = plan(local, BaseSampler(n=8, seed=4), ws, CostWeights())
    xi_w, d_w = plan(world, BaseSampler(n=8, seed=4), ws, CostWeights())
    assert d_l.selected == d_w.selected
    assert np.allclose(shift_xi(xi_l, pose, ws.basis), xi_w, atol=1e-6)


def test_initial_world_reads_scripts():
    sc = occlusion_oracle_scenario()
    w = initial_world(sc)
    assert np.allclose(w.target_p, [10.0, -6.0]) and np.allclose(w.obstacle_p, [[5.0, 0.0]])


def test_build_planner_uses_scenario_seed():
    sc = occlusion_oracle_scenario().with_seed(3)
    assert build_planner(sc).sampler.seed == 3
