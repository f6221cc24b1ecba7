"""End-to-end experiment driver: configuration, the training loop,
receding-horizon rollouts, checkpoint persistence, and evaluation.

Training slices (action chunk, observation window) pairs from demonstrations
at stride 1, front-padding windows at episode starts and repeating the last
action past episode ends. Actions are normalized per dimension to [-1, 1]
from dataset min/max; the statistics live in the checkpoint. An exponential
moving average of the weights (enabled by default) is what evaluation
samples from.

Observation modes:
    gt_pose    proprioception + ground-truth object pose encodings
    est_pose   proprioception + emulated tracker estimates (built online
               during rollouts)
    grid_image proprioception + flattened grid renders

Rollouts sample a chunk, execute the first `act_horizon` actions, then
replan from the updated observation window, until success or the step cap.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .data import ACTION_RANGE_FLOOR, DemoDataset
from .denoiser import DenoiserConfig, DenoiserParams, Tensor, init_params, param_layout, parameter_count
from .diffusion import NoiseSchedule, ddpm_sample, make_schedule, training_loss
from .envs import ACTION_DIM, ROBOT_STATE_DIM, TaskSpec, render_grid, reset, step, success
from .geometry import encode_pose, quat_angular_distance
from .perception import EmulatedTracker, TrackerConfig
from .tensor import AdamState, adam_step

Array = np.ndarray

OBS_MODES = ("gt_pose", "est_pose", "grid_image")
CHECKPOINT_MAGIC = b"PDPCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    task_id: str = "reach"
    mode: str = "gt_pose"
    hidden_width: int = 96
    depth: int = 2
    embed_dim: int = 32
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.06
    obs_horizon: int = 2
    pred_horizon: int = 8
    act_horizon: int = 4
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 2e-3
    ema_decay: float = 0.995
    ema_enabled: bool = True
    seed: int = 0
    n_demos: int = 200
    resolution: int = 32
    t_max: int | None = None
    n_eval_rollouts: int = 100
    eval_seed: int = 10_000
    tracker: TrackerConfig = field(default_factory=TrackerConfig)

    def __post_init__(self):
        if self.mode not in OBS_MODES:
            raise ValueError(f"unknown observation mode {self.mode!r}; choose from {OBS_MODES}")
        if not (1 <= self.act_horizon <= self.pred_horizon):
            raise ValueError(f"need 1 <= act_horizon <= pred_horizon, got "
                             f"{self.act_horizon} and {self.pred_horizon}")
        if self.obs_horizon < 1:
            raise ValueError("obs_horizon must be >= 1")
        for name in ("epochs", "batch_size", "n_demos", "n_eval_rollouts", "diffusion_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def task_spec(self) -> TaskSpec:
        return TaskSpec.for_task(self.task_id, t_max=self.t_max)

    def obs_dim(self) -> int:
        if self.mode == "grid_image":
            return ROBOT_STATE_DIM + self.resolution * self.resolution
        return ROBOT_STATE_DIM + 8 * self.task_spec().n_objects

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(
            action_dim=ACTION_DIM,
            pred_horizon=self.pred_horizon,
            obs_dim=self.obs_dim(),
            obs_horizon=self.obs_horizon,
            hidden_width=self.hidden_width,
            depth=self.depth,
            embed_dim=self.embed_dim,
        )

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)

    # -- flat dotted-key mapping, the config-file vocabulary ----------------

    _KEYMAP = {
        "task.id": ("task_id", str),
        "task.t_max": ("t_max", int),
        "observation.mode": ("mode", str),
        "model.hidden_width": ("hidden_width", int),
        "model.depth": ("depth", int),
        "model.embed_dim": ("embed_dim", int),
        "diffusion.steps": ("diffusion_steps", int),
        "diffusion.beta_start": ("beta_start", float),
        "diffusion.beta_end": ("beta_end", float),
        "horizon.obs": ("obs_horizon", int),
        "horizon.pred": ("pred_horizon", int),
        "horizon.act": ("act_horizon", int),
        "train.epochs": ("epochs", int),
        "train.batch_size": ("batch_size", int),
        "train.learning_rate": ("learning_rate", float),
        "train.ema_decay": ("ema_decay", float),
        "train.ema_enabled": ("ema_enabled", bool),
        "train.seed": ("seed", int),
        "data.n_demos": ("n_demos", int),
        "data.resolution": ("resolution", int),
        "eval.n_rollouts": ("n_eval_rollouts", int),
        "eval.seed": ("eval_seed", int),
        "tracker.sigma_pos": ("sigma_pos", float),
        "tracker.sigma_rot": ("sigma_rot", float),
        "tracker.offset_angle": ("offset_angle", float),
        "tracker.first_visible_frame": ("first_visible_frame", "frames"),
        "tracker.extra_noise": ("estimation_extra_noise", float),
    }

    @staticmethod
    def _coerce(key: str, kind, raw: str):
        if kind is bool:
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        if kind == "frames":
            parts = [p for p in str(raw).replace(",", " ").split() if p]
            values = tuple(int(p) for p in parts)
            return values[0] if len(values) == 1 else values
        try:
            return kind(raw)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from exc

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "ExperimentConfig":
        kwargs: dict[str, object] = {}
        tracker_kwargs: dict[str, object] = {}
        unknown = []
        for key, raw in mapping.items():
            entry = cls._KEYMAP.get(key)
            if entry is None:
                unknown.append(key)
                continue
            name, kind = entry
            value = cls._coerce(key, kind, raw)
            if key.startswith("tracker."):
                tracker_kwargs[name] = value
            else:
                kwargs[name] = value
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if tracker_kwargs:
            kwargs["tracker"] = TrackerConfig(**tracker_kwargs)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, str]:
        inverse: dict[str, str] = {}
        for key, (name, _kind) in self._KEYMAP.items():
            if key.startswith("tracker."):
                value = getattr(self.tracker, name)
                if name == "first_visible_frame" and isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
            else:
                value = getattr(self, name)
            if value is None:
                continue
            inverse[key] = str(value)
        return inverse

    @classmethod
    def from_file(cls, path, overrides: Mapping[str, object] | None = None) -> "ExperimentConfig":
        from .configio import load_config_file
        mapping = dict(load_config_file(path))
        if overrides:
            mapping.update(overrides)
        return cls.from_mapping(mapping)


# ---------------------------------------------------------------------------
# training-set assembly


def normalize_actions(actions: Array, amin: Array, amax: Array) -> Array:
    span = np.maximum(amax - amin, ACTION_RANGE_FLOOR)
    return (2.0 * (actions - amin) / span - 1.0).astype(np.float32)


def denormalize_action(norm: Array, amin: Array, amax: Array) -> Array:
    span = np.maximum(amax - amin, ACTION_RANGE_FLOOR)
    return (amin + (norm + 1.0) * 0.5 * span).astype(np.float64)


def _episode_obs_rows(episode, mode: str) -> Array:
    horizon = len(episode)
    if mode == "gt_pose":
        poses = episode.gt_poses.reshape(horizon, -1)
    elif mode == "est_pose":
        poses = episode.est_poses.reshape(horizon, -1)
    else:
        poses = episode.grids.reshape(horizon, -1)
    return np.concatenate([episode.robot_state, poses], axis=1).astype(np.float32)


def _window_rows(rows: Array, obs_horizon: int) -> Array:
    """Stride-1 observation windows; earlier-than-start rows repeat row 0."""
    horizon = rows.shape[0]
    offsets = np.arange(-obs_horizon + 1, 1)
    idx = np.clip(np.arange(horizon)[:, None] + offsets[None, :], 0, None)
    return rows[idx].reshape(horizon, -1)


def _chunk_rows(actions_norm: Array, pred_horizon: int) -> Array:
    """Stride-1 action chunks; past-the-end rows repeat the final action."""
    horizon = actions_norm.shape[0]
    idx = np.minimum(np.arange(horizon)[:, None] + np.arange(pred_horizon)[None, :], horizon - 1)
    return actions_norm[idx].reshape(horizon, -1)


def build_training_set(dataset: DemoDataset, config: ExperimentConfig,
                       amin: Array, amax: Array) -> tuple[Array, Array]:
    chunks, conds = [], []
    for episode in dataset.episodes:
        rows = _episode_obs_rows(episode, config.mode)
        norm = normalize_actions(episode.actions, amin, amax)
        conds.append(_window_rows(rows, config.obs_horizon))
        chunks.append(_chunk_rows(norm, config.pred_horizon))
    return np.concatenate(chunks, axis=0), np.concatenate(conds, axis=0)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: DenoiserParams
    ema_params: DenoiserParams | None
    action_min: Array
    action_max: Array
    metrics: dict
    version: int = CHECKPOINT_VERSION

    def sampling_params(self) -> DenoiserParams:
        if self.config.ema_enabled and self.ema_params is not None:
            return self.ema_params
        return self.params

    @property
    def parameter_count(self) -> int:
        return parameter_count(self.params.config)


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = Path(path)
    names = [n for n, _ in param_layout(checkpoint.params.config)]
    header = {
        "config": checkpoint.config.to_mapping(),
        "metrics": checkpoint.metrics,
        "tensor_order": names,
        "has_ema": checkpoint.ema_params is not None,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", checkpoint.version))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)

        def dump(arr: Array):
            arr = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<Q", arr.nbytes))
            f.write(arr.tobytes())

        for tensor in checkpoint.params.tensors():
            dump(tensor.data)
        if checkpoint.ema_params is not None:
            for tensor in checkpoint.ema_params.tensors():
                dump(tensor.data)
        dump(checkpoint.action_min)
        dump(checkpoint.action_max)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        config = ExperimentConfig.from_mapping(header["config"])
        layout = param_layout(config.denoiser_config())
        if header["tensor_order"] != [n for n, _ in layout]:
            raise ValueError(f"{path}: tensor order does not match the config layout")

        def read(shape) -> Array:
            (nbytes,) = struct.unpack("<Q", f.read(8))
            expected = int(np.prod(shape)) * 4
            if nbytes != expected:
                raise ValueError(f"{path}: tensor of {nbytes} bytes where {expected} expected")
            return np.frombuffer(f.read(nbytes), dtype="<f4").reshape(shape).astype(np.float32)

        tensors = {name: Tensor(read(shape), requires_grad=True, name=name)
                   for name, shape in layout}
        params = DenoiserParams(config.denoiser_config(), tensors)
        ema = None
        if header["has_ema"]:
            ema_tensors = {name: Tensor(read(shape), requires_grad=True, name=name)
                           for name, shape in layout}
            ema = DenoiserParams(config.denoiser_config(), ema_tensors)
        action_min = read((ACTION_DIM,))
        action_max = read((ACTION_DIM,))
    return Checkpoint(config=config, params=params, ema_params=ema,
                      action_min=action_min, action_max=action_max,
                      metrics=header["metrics"], version=version)


# ---------------------------------------------------------------------------
# training


def train(config: ExperimentConfig, dataset: DemoDataset) -> Checkpoint:
    """Train a denoiser on demonstration chunks; returns a ready checkpoint."""
    if dataset.task_id != config.task_id:
        raise ValueError(f"dataset task {dataset.task_id!r} does not match config task {config.task_id!r}")
    if config.mode == "grid_image" and dataset.resolution != config.resolution:
        raise ValueError(f"dataset resolution {dataset.resolution} does not match config {config.resolution}")

    if dataset.action_min is not None and dataset.action_max is not None:
        amin, amax = dataset.action_min, dataset.action_max
    else:
        stacked = np.concatenate([ep.actions for ep in dataset.episodes], axis=0)
        amin, amax = stacked.min(axis=0), stacked.max(axis=0)

    x0_all, cond_all = build_training_set(dataset, config, amin, amax)
    denoiser_cfg = config.denoiser_config()
    if cond_all.shape[1] != denoiser_cfg.cond_dim:
        raise ValueError(
            f"observation width mismatch: dataset gives {cond_all.shape[1]}, "
            f"denoiser expects {denoiser_cfg.cond_dim}")

    rng = np.random.default_rng(config.seed)
    params = init_params(denoiser_cfg, rng)
    sched = config.schedule()
    adam = AdamState(lr=config.learning_rate)
    ema_arrays = [t.data.copy() for t in params.tensors()] if config.ema_enabled else None

    n = x0_all.shape[0]
    batch = config.batch_size
    steps_per_epoch = math.ceil(n / batch)
    epoch_loss: list[float] = []
    epoch_seconds: list[float] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * batch:(b + 1) * batch]
            try:
                loss, grads = training_loss(params, x0_all[idx], cond_all[idx], sched, rng)
            except ValueError as exc:
                raise RuntimeError(f"training failed at epoch {epoch} step {b}: {exc}") from exc
            adam_step(params.tensors(), grads, adam)
            if ema_arrays is not None:
                for ema, p in zip(ema_arrays, params.tensors()):
                    ema *= config.ema_decay
                    ema += (1.0 - config.ema_decay) * p.data
            losses.append(loss)
        epoch_loss.append(float(np.mean(losses)))
        epoch_seconds.append(time.perf_counter() - started)

    ema_params = params.replace_arrays(ema_arrays) if ema_arrays is not None else None
    metrics = {
        "epoch_loss": epoch_loss,
        "epoch_seconds": epoch_seconds,
        "n_training_pairs": int(n),
        "steps_per_epoch": steps_per_epoch,
    }
    return Checkpoint(config=config, params=params, ema_params=ema_params,
                      action_min=np.asarray(amin, dtype=np.float32),
                      action_max=np.asarray(amax, dtype=np.float32),
                      metrics=metrics)


# ---------------------------------------------------------------------------
# rollouts and evaluation


@dataclass
class EpisodeReport:
    success: bool
    steps: int
    sampler_calls: int
    position_errors: list[float] = field(default_factory=list)
    orientation_errors: list[float] = field(default_factory=list)
    render_calls: int = 0
    pose_encodings: int = 0
    error: str | None = None


def rollout(checkpoint: Checkpoint, spec: TaskSpec | None = None,
            tracker_cfg: TrackerConfig | None = None, seed: int = 0) -> EpisodeReport:
    """One receding-horizon episode under the trained policy.

    Exactly `act_horizon` environment steps separate consecutive sampler
    calls, except at episode end. est_pose mode runs the emulated tracker
    online, frame by frame, and logs per-frame pose errors against ground
    truth for frames with a valid estimate.
    """
    config = checkpoint.config
    if spec is None:
        spec = config.task_spec()
    if spec.task_id != config.task_id:
        raise ValueError(f"checkpoint task {config.task_id!r} does not match spec {spec.task_id!r}")
    if tracker_cfg is None:
        tracker_cfg = config.tracker

    sched = config.schedule()
    sparams = checkpoint.sampling_params()
    sampler_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 1)))
    tracker_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 2)))
    tracker = EmulatedTracker(tracker_cfg, tracker_rng) if config.mode == "est_pose" else None

    report = EpisodeReport(success=False, steps=0, sampler_calls=0)
    state = reset(spec, seed)
    rows: list[Array] = []

    def observe(current) -> None:
        robot = current.robot_state().astype(np.float32)
        if config.mode == "gt_pose":
            enc = [encode_pose(p) for p in current.objects]
            report.pose_encodings += len(enc)
            rows.append(np.concatenate([robot] + enc))
        elif config.mode == "est_pose":
            estimates = tracker.observe(current.objects)
            enc = [encode_pose(p) for p in estimates]
            report.pose_encodings += len(enc)
            rows.append(np.concatenate([robot] + enc))
            for est, gt in zip(estimates, current.objects):
                if est.valid:
                    report.position_errors.append(
                        float(np.linalg.norm(est.translation - gt.translation)))
                    report.orientation_errors.append(
                        quat_angular_distance(est.rotation, gt.rotation))
        else:
            report.render_calls += 1
            img = render_grid(current, config.resolution)
            rows.append(np.concatenate([robot, img.ravel()]))

    observe(state)
    done = False
    while not done and state.step_count < spec.t_max:
        window = rows[-config.obs_horizon:]
        while len(window) < config.obs_horizon:
            window.insert(0, window[0])
        cond = np.concatenate(window)
        try:
            flat = ddpm_sample(sparams, cond, sched, sampler_rng)
        except ValueError as exc:
            report.error = str(exc)
            report.steps = state.step_count
            return report
        report.sampler_calls += 1
        chunk = flat.reshape(config.pred_horizon, ACTION_DIM)
        for j in range(config.act_horizon):
            action = denormalize_action(chunk[j], checkpoint.action_min, checkpoint.action_max)
            state = step(state, action)
            done = success(state, spec)
            if done or state.step_count >= spec.t_max:
                break
            observe(state)

    report.success = bool(done)
    report.steps = state.step_count
    return report


def evaluate_detailed(checkpoint: Checkpoint, spec: TaskSpec | None = None,
                      tracker_cfg: TrackerConfig | None = None, n: int = 100,
                      seed: int = 10_000,
                      rollout_fn: Callable[..., EpisodeReport] = rollout,
                      ) -> tuple[float, list[EpisodeReport]]:
    if n < 1:
        raise ValueError("n must be >= 1")
    reports = [rollout_fn(checkpoint, spec, tracker_cfg, s) for s in range(seed, seed + n)]
    sr = sum(1 for r in reports if r.success) / n
    return sr, reports


def evaluate(checkpoint: Checkpoint, spec: TaskSpec | None = None,
             tracker_cfg: TrackerConfig | None = None, n: int = 100,
             seed: int = 10_000,
             rollout_fn: Callable[..., EpisodeReport] = rollout) -> float:
    """Success rate (successes / n) over rollouts seeded seed .. seed+n-1."""
    sr, _ = evaluate_detailed(checkpoint, spec, tracker_cfg, n, seed, rollout_fn)
    return sr


def mean_epoch_seconds(checkpoint: Checkpoint) -> float:
    return float(np.mean(checkpoint.metrics["epoch_seconds"]))


def config_variant(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(config, **changes)
