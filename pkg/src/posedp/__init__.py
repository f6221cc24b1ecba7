"""posedp: pose-conditioned diffusion policies at desk scale.

Train DDPM policies over action chunks conditioned on observation windows of
robot state plus object poses, with an emulated perception stack (visibility
gating, canonical-orientation offset, calibrated noise) standing in for a
real segmentation / mesh-generation / pose-tracking pipeline, and 2D
manipulation tasks for benchmarking pose-conditioned vs image-conditioned
policies across capacity tiers.
"""

from .bench import run_benchmark, tier_configs
from .data import DemoDataset, Episode, generate_demonstrations, load_dataset, save_dataset
from .denoiser import (
    DenoiserConfig,
    DenoiserParams,
    init_params,
    parameter_count,
    predict_noise,
    solve_width_for_params,
    timestep_embedding,
)
from .diffusion import NoiseSchedule, ddpm_sample, make_schedule, q_sample, reverse_mean, training_loss
from .envs import TaskSpec, WorldState, render_grid, reset, scripted_expert, step, success
from .geometry import (
    ObservationFrame,
    Pose,
    assemble_condition,
    decode_pose,
    encode_pose,
    quat_angular_distance,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
)
from .harness import (
    Checkpoint,
    EpisodeReport,
    ExperimentConfig,
    evaluate,
    evaluate_detailed,
    load_checkpoint,
    rollout,
    save_checkpoint,
    train,
)
from .perception import EmulatedTracker, TrackerConfig, emulate_tracking, pose_errors, psnr
from .report import BenchmarkRow, write_report
from .tensor import AdamState, ShapeMismatch, Tape, Tensor, adam_step, backward, forward_primitive

__version__ = "0.1.0"
