"""Fitting the affine decoder through the unrolled projection.

Demonstrations come from a best-of-n oracle (the ordinary planner with a
large sample count and nominal q).  The loss per demonstration is::

    |W xi - tau_e|^2 + c_pen * sum |max(0, g(xi, q))|^2

with ``xi`` the output of ``K_train`` unrolled projection iterations started
from the decoder's warm start.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import eval_trajectory
from .constraints import Scene, constraint_violations, prune_obstacles, violation_penalty_grad
from .policy import TrainedDecoder, predict_target
from .projection import ProjectionWorkspace
from .unrolled import backward, project_with_tape

DEMO_TOLERANCE = 0.05


@dataclass
class Demonstration:
    scene: Scene  # robot-centred, obstacles pruned to the workspace count
    expert: np.ndarray  # (m, 2) positions
    cost: float


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 300
    batch_size: int = 8
    K_train: int = 15
    c_pen: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1 or self.K_train < 1 or self.c_pen < 0:
            raise ValueError("invalid training configuration")


class TrainingError(RuntimeError):
    def __init__(self, message, curve=None, diagnostics=None):
        super().__init__(message)
        self.curve = curve
        self.diagnostics = diagnostics


def demo_is_valid(xi, scene: Scene, ws: ProjectionWorkspace, q) -> bool:
    """Kinematic limits and obstacle clearance hold to ``DEMO_TOLERANCE``."""
    tt = predict_target(scene.target_p, scene.target_v, ws.basis)
    gm = constraint_violations(xi, scene, q, ws.limits, ws.basis, tt).group_max
    return max(gm["velocity"], gm["acceleration"], gm["obstacle"]) <= DEMO_TOLERANCE


class _Recorder:
    """Wraps a planner and keeps every valid selected plan as a demonstration."""

    def __init__(self, planner, stride: int = 1):
        self.planner = planner
        self.stride = max(1, int(stride))
        self.calls = 0
        self.demos: list[Demonstration] = []
        self.rejected = 0

    @property
    def basis(self):
        return self.planner.basis

    def plan(self, scene: Scene):
        xi, diag = self.planner.plan(scene)
        if self.calls % self.stride == 0:
            ws = self.planner.ws
            pruned = prune_obstacles(scene, ws.layout.n_obs)
            q = diag.qs[diag.selected]
            if demo_is_valid(xi, pruned, ws, q):
                pos = eval_trajectory(xi, ws.basis).pos
                self.demos.append(Demonstration(pruned, pos, float(diag.costs[diag.selected])))
            else:
                self.rejected += 1
        self.calls += 1
        return xi, diag


def generate_demonstrations(suite, oracle_n: int = 512, stride: int = 1, duration: float | None = None,
                            q_std=(0.0, 0.0, 0.0, 0.0)):
    """Run the best-of-``oracle_n`` planner over every scenario and record its plans.

    q is drawn around ``nominal_q`` with per-field spread ``q_std`` (zero
    keeps it fixed at the nominal values).  ``stride`` keeps every
    ``stride``-th planning cycle; ``duration`` optionally shortens each
    scenario.
    """
    from .simulator import build_planner, run_episode

    if oracle_n < 1:
        raise ValueError("oracle_n must be >= 1")
    demos: list[Demonstration] = []
    for scenario in suite:
        sc = replace(scenario, planner=replace(scenario.planner, n=int(oracle_n), q_std=tuple(q_std)))
        if duration is not None:
            sc = replace(sc, sim=replace(sc.sim, duration=duration))
        rec = _Recorder(build_planner(sc, "base"), stride)
        run_episode(sc, rec)
        demos.extend(rec.demos)
    return demos


def _reconstruction(xi, demo: Demonstration, basis):
    pos = eval_trajectory(xi, basis).pos
    err = pos - demo.expert
    loss = float(np.sum(err**2))
    g = 2 * np.concatenate([basis.W.T @ err[:, 0], basis.W.T @ err[:, 1]])
    return loss, g


def training_loss(decoder: TrainedDecoder, demo: Demonstration, ws: ProjectionWorkspace, K_train: int = 15,
                  c_pen: float = 10.0):
    """Loss of one demonstration and its gradient w.r.t. the decoder weights."""
    basis = ws.basis
    scene = demo.scene
    if scene.n_obs != ws.layout.n_obs:
        scene = prune_obstacles(scene, ws.layout.n_obs)
    dec = decoder.decode(scene, basis)
    tt = predict_target(scene.target_p, scene.target_v, basis)
    res, tape = project_with_tape(ws, dec.xi_bar, dec.q, scene, (dec.xi0, dec.lam0), K_train, tt)
    rec, g_xi = _reconstruction(res.xi, demo, basis)
    pen, gp_xi, d_smin, d_smax = violation_penalty_grad(res.xi, scene, dec.q, ws.limits, basis, tt)
    loss = rec + c_pen * pen
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss", diagnostics={"reconstruction": rec, "penalty": pen})
    grads = backward(tape, g_xi + c_pen * gp_xi)
    d_q = grads.d_q.copy()
    d_q[0] += c_pen * d_smin
    d_q[1] += c_pen * d_smax
    g_out = decoder.output_grad(dec, grads.d_xi_bar, d_q, grads.d_xi0, grads.d_lambda0)
    return loss, np.outer(g_out, dec.features)


def dataset_loss(decoder, dataset, ws, cfg: TrainConfig) -> float:
    return float(np.mean([training_loss(decoder, d, ws, cfg.K_train, cfg.c_pen)[0] for d in dataset]))


def train(decoder: TrainedDecoder, dataset, cfg: TrainConfig, ws: ProjectionWorkspace):
    """Minibatch gradient descent; returns ``(decoder, per-epoch mean loss)``.

    Minibatches follow a seeded permutation per epoch.  The epoch loss is the
    mean of the per-demonstration losses seen during that epoch.
    """
    dataset = list(dataset)
    if not dataset:
        raise TrainingError("empty dataset")
    dec = decoder.copy()
    rng = np.random.default_rng(cfg.seed)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grad = np.zeros_like(dec.weights)
            for i in batch:  # fixed reduction order
                loss, g = training_loss(dec, dataset[i], ws, cfg.K_train, cfg.c_pen)
                losses.append(loss)
                grad += g
            dec.weights = dec.weights - cfg.lr * grad / len(batch)
        curve.append(float(np.mean(losses)))
        if not np.isfinite(curve[-1]) or curve[-1] > 10.0 * curve[0]:
            raise TrainingError(f"training diverged at epoch {epoch}", curve=curve,
                                diagnostics={"epoch": epoch, "loss": curve[-1], "initial": curve[0]})
    return dec, curve
