"""Scripted scenario suites used by the benchmarks, demos and acceptance tests."""
from __future__ import annotations


import numpy as np

from .simulator import PlannerConfig, Scenario, Script, SimConfig


def _static(points):
    return tuple(Script(((float(x), float(y)),), 0.0) for x, y in points)


def _scenario(name, target, obstacles=(), robot=(0.0, 0.0, 0.0, 0.0), duration=8.0, radius=0.5):
    return Scenario(name, robot, target, tuple(obstacles), radius, planner=PlannerConfig(),
                    sim=SimConfig(duration=duration))


def comparative_suite(duration: float = 8.0) -> list[Scenario]:
    """Ten scenarios: open field, pillars, corners, walls, crossing and wandering obstacles."""
    rng = np.random.default_rng(7)
    out = []
    out.append(_scenario("open_field", Script(((2.5, 0.0), (14.0, 0.0)), 1.0), (), duration=duration))
    out.append(_scenario("pillars", Script(((2.5, 0.0), (14.0, 0.0)), 1.0),
                         _static([(4.0, 1.3), (6.5, -1.3), (9.0, 1.3), (11.5, -1.3)]), duration=duration))
    out.append(_scenario("corner", Script(((2.5, 0.0), (6.0, 0.0), (6.0, 6.0)), 1.0),
                         _static([(5.0, 1.2), (4.2, 1.2), (3.4, 1.2), (4.8, 2.0)]), duration=duration))
    wall = [(x, 1.6) for x in np.arange(0.0, 5.5, 0.8)]
    out.append(_scenario("wall_turn", Script(((2.5, 0.0), (6.5, 0.0), (6.5, 5.0)), 1.0), _static(wall),
                         duration=duration))
    out.append(_scenario("slalom", Script(((2.5, 0.0), (5.0, 1.0), (7.5, -1.0), (10.0, 1.0), (12.5, -1.0)), 1.0),
                         _static([(5.0, -0.6), (7.5, 0.6), (10.0, -0.6)]), duration=duration))
    out.append(_scenario("fast_corridor", Script(((2.5, 0.0), (22.0, 0.0)), 2.0),
                         _static([(5.0, 1.4), (8.0, -1.4), (11.0, 1.4), (14.0, -1.4), (17.0, 1.4)]),
                         duration=duration))
    crossing = (Script(((3.0, -4.0), (3.0, 4.0)), 0.5), Script(((6.0, 4.0), (6.0, -4.0)), 0.5),
                Script(((9.0, -4.0), (9.0, 4.0)), 0.5))
    out.append(_scenario("crossing", Script(((2.5, 0.0), (12.0, 0.0)), 1.0), crossing, duration=duration))
    movers = []
    for _ in range(6):
        a = rng.uniform([3.0, -4.0], [12.0, 4.0])
        b = rng.uniform([3.0, -4.0], [12.0, 4.0])
        movers.append(Script((tuple(a), tuple(b)), 0.4, loop=True))
    out.append(_scenario("six_movers", Script(((2.5, 0.0), (12.0, 0.0)), 1.0), movers, duration=duration))
    out.append(_scenario("stationary_target", Script(((3.0, 0.0),), 0.0),
                         _static([(1.5, 1.0), (1.5, -1.0), (4.5, 1.2)]), robot=(0.0, 0.0, 0.0, 0.0),
                         duration=duration))
    out.append(_scenario("zigzag_movers", Script(((2.5, 0.0), (6.0, 2.5), (9.5, -2.5), (13.0, 2.5)), 1.0),
                         (Script(((5.0, -3.0), (5.0, 3.0)), 0.3, loop=True),
                          Script(((8.5, 3.0), (8.5, -3.0)), 0.3, loop=True)), duration=duration))
    return out


def heldout_suite(duration: float = 8.0) -> list[Scenario]:
    """Scenarios not used to generate training demonstrations."""
    return [
        _scenario("heldout_pillars", Script(((2.5, 0.0), (12.0, 0.0)), 1.2),
                  _static([(4.5, -1.3), (7.0, 1.3), (9.5, -1.3)]), duration=duration),
        _scenario("heldout_corner", Script(((2.5, 0.0), (5.5, 0.0), (5.5, -6.0)), 1.0),
                  _static([(4.5, -1.2), (3.7, -1.2), (2.9, -1.2)]), duration=duration),
        _scenario("heldout_movers", Script(((2.5, 0.0), (11.0, 0.0)), 1.0),
                  (Script(((4.0, 3.0), (4.0, -3.0)), 0.4, loop=True),
                   Script(((8.0, -3.0), (8.0, 3.0)), 0.4, loop=True)), duration=duration),
    ]


def training_suite(duration: float = 8.0) -> list[Scenario]:
    return [
        _scenario("train_pillars", Script(((2.5, 0.0), (12.0, 0.0)), 1.0),
                  _static([(5.0, 1.3), (7.5, -1.3), (10.0, 1.3)]), duration=duration),
        _scenario("train_corner", Script(((2.5, 0.0), (6.0, 0.0), (6.0, 6.0)), 1.0),
                  _static([(5.0, 1.2), (4.2, 1.2), (3.4, 1.2)]), duration=duration),
        _scenario("train_open", Script(((2.5, 0.0), (6.0, 3.0), (10.0, 0.0)), 1.0), (), duration=duration),
        _scenario("train_movers", Script(((2.5, 0.0), (11.0, 0.0)), 1.0),
                  (Script(((5.0, -3.0), (5.0, 3.0)), 0.4, loop=True),), duration=duration),
    ]


def with_seeds(suite, seeds):
    return [(sc.with_seed(s), s) for sc in suite for s in seeds]


def occlusion_oracle_scenario(dt: float = 0.05) -> Scenario:
    """Robot held at the origin; the target crosses behind a disk for exactly 2.0 s.

    Obstacle at (5, 0) with radius 1 and the target on the line x = 10: the
    segment is blocked while |y| < 10 / sqrt(24), so the target speed is
    chosen to cover that interval in 2.0 s.
    """
    y_star = 10.0 / np.sqrt(24.0)
    speed = y_star  # 2 * y_star metres in 2.0 s
    return Scenario("occlusion_oracle", (0.0, 0.0, 0.0, 0.0), Script(((10.0, -6.0), (10.0, 6.0)), speed),
                    _static([(5.0, 0.0)]), 1.0, sim=SimConfig(dt=dt, replan_dt=0.1, duration=12.0 / speed))


__all__ = ["comparative_suite", "heldout_suite", "training_suite", "with_seeds", "occlusion_oracle_scenario"]
