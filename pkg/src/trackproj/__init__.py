"""Trajectory projection for occlusion-aware target tracking."""
from .basis import BasisSet, SampledTrajectory, build_basis, eval_trajectory, smoothness_cost
from .constraints import (
    AuxVars,
    BoundaryState,
    ConstraintParams,
    KinematicLimits,
    Scene,
    assemble_e,
    assemble_equality,
    assemble_F,
    constraint_violations,
    prune_obstacles,
    update_alpha_d,
)
from .learner import Demonstration, TrainConfig, generate_demonstrations, train, training_loss
from .policy import (
    BaseSampler,
    CostWeights,
    Planner,
    PlanningError,
    TrainedDecoder,
    nominal_q,
    occlusion_cost,
    plan,
    predict_target,
)
from .projection import ProjectionResult, ProjectionWorkspace, prefactorize, project, project_batch
from .simulator import RunMetrics, Scenario, compute_metrics, run_episode, step_world, synth_lidar
from .unrolled import DecoderGrads, UnrollTape, backward, grad_check, project_with_tape

__version__ = "0.1.0"
