"""Project one raw sample onto the constraint set and watch the residual shrink.

Run: python3 demos/01_projection.py
"""
import numpy as np

from trackproj.basis import build_basis
from trackproj.constraints import KinematicLimits, constraint_violations
from trackproj.instances import random_instance
from trackproj.policy import predict_target
from trackproj.projection import make_workspace, project

basis = build_basis(family="bernstein")
limits = KinematicLimits(v_max=3.0, a_max=3.0)
ws = make_workspace(basis, limits, n_obs=20)

inst = random_instance(np.random.default_rng(0), basis, 20)
scene, q = inst.scene, inst.q
tt = predict_target(scene.target_p, scene.target_v, basis)
print(f"scene: {scene.n_obs} obstacles, radius {scene.radius:.2f} m, band [{q.s_los_min:.2f}, {q.s_los_max:.2f}] m")

before = constraint_violations(inst.xi_bar, scene, q, limits, basis, tt).group_max
res = project(ws, inst.xi_bar, q, scene, target_traj=tt, K=100)
after = constraint_violations(res.xi, scene, q, limits, basis, tt).group_max

print(f"{'group':<14}{'raw':>10}{'projected':>12}")
for g in before:
    print(f"{g:<14}{before[g]:>10.3f}{after[g]:>12.4f}")

h = res.residual_history
for k in (0, 1, 5, 20, 50, 100):
    print(f"iteration {k:>3}: |F xi - e| = {h[k, 0]:.2e}, worst row violation = {h[k, 1]:.2e}")
print(f"moved the sample by {np.linalg.norm(res.xi - inst.xi_bar):.2f} in coefficient space")
