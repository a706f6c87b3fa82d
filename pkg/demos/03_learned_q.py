"""Learn the decoder from oracle plans, then compare learned q against the fixed nominal q.

Run: python3 demos/03_learned_q.py
Uses a reduced budget (short episodes, small oracle); expect a few minutes.
"""
from trackproj.learner import TrainConfig, generate_demonstrations, train
from trackproj.policy import TrainedDecoder
from trackproj.simulator import build_planner, run_episode
from trackproj.suites import heldout_suite, training_suite

suite = training_suite(duration=4.0)
demos = generate_demonstrations(suite, oracle_n=64, stride=2)
print(f"{len(demos)} demonstrations from {len(suite)} scenarios")

ws = build_planner(suite[0]).ws
decoder, curve = train(TrainedDecoder(ws.n_xi), demos, TrainConfig(epochs=50), ws)
print(f"training loss {curve[0]:.3f} -> {curve[-1]:.3f} over {len(curve)} epochs")

totals = {"trained": 0.0, "ablation-fixed-q": 0.0}
for sc in heldout_suite():
    for arm in totals:
        m, _, _ = run_episode(sc, build_planner(sc, arm, decoder))
        totals[arm] += m.occlusion_time
        print(f"{sc.name:<20}{arm:<18}occlusion {m.occlusion_time:.2f} s, collisions {m.collision_count}")
print(f"total occlusion: learned q {totals['trained']:.2f} s, fixed q {totals['ablation-fixed-q']:.2f} s")
