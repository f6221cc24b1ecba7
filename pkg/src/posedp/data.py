"""Demonstration corpora: expert rollout recording and the on-disk format.

A dataset is one binary file (magic, version, JSON header, then per-episode
length-prefixed little-endian float32 arrays in a fixed order) plus a
JSON-lines sidecar `<path>.header.jsonl` carrying the header for humans.
Frames are stored raw, one record per environment step, independent of any
observation or prediction horizon; windowing happens at training time.

Per-frame arrays, in order: robot_state, ground-truth pose encodings,
estimated pose encodings, grid render, action. Only successful episodes are
kept; generation resamples until enough successes exist and aborts if the
expert fails more than half the time.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import ACTION_DIM, ROBOT_STATE_DIM, TaskSpec, render_grid, reset, scripted_expert, step, success
from .geometry import encode_pose
from .perception import TrackerConfig, emulate_tracking

Array = np.ndarray

DATASET_MAGIC = b"PDPDATA\x00"
DATASET_VERSION = 1
ACTION_RANGE_FLOOR = 1e-6


@dataclass
class Episode:
    """One successful demonstration; arrays are float32, first axis is time."""

    robot_state: Array   # (T, robot_dim)
    gt_poses: Array      # (T, n_objects, 8)
    est_poses: Array     # (T, n_objects, 8)
    grids: Array         # (T, res, res)
    actions: Array       # (T, action_dim)

    def __len__(self) -> int:
        return self.robot_state.shape[0]


@dataclass
class DemoDataset:
    task_id: str
    n_objects: int
    robot_dim: int
    action_dim: int
    resolution: int
    tracker: dict
    episodes: list[Episode] = field(default_factory=list)
    action_min: Array | None = None
    action_max: Array | None = None
    episode_env_seeds: list[int] = field(default_factory=list)
    format_version: int = DATASET_VERSION

    @property
    def n_frames(self) -> int:
        return sum(len(ep) for ep in self.episodes)

    def header(self) -> dict:
        return {
            "format_version": self.format_version,
            "task_id": self.task_id,
            "n_objects": self.n_objects,
            "robot_dim": self.robot_dim,
            "action_dim": self.action_dim,
            "resolution": self.resolution,
            "frames_are_raw": True,
            "tracker": self.tracker,
            "action_min": None if self.action_min is None else [float(v) for v in self.action_min],
            "action_max": None if self.action_max is None else [float(v) for v in self.action_max],
            "episode_env_seeds": self.episode_env_seeds,
            "n_episodes": len(self.episodes),
            "episode_lengths": [len(ep) for ep in self.episodes],
        }


def _run_episode(spec: TaskSpec, tracker_cfg: TrackerConfig, base_seed: int, attempt: int,
                 resolution: int) -> tuple[Episode | None, int]:
    seeds = np.random.SeedSequence(entropy=(base_seed, attempt))
    env_seed = int(seeds.generate_state(1)[0])
    expert_rng, tracker_rng = (np.random.default_rng(s) for s in seeds.spawn(2))

    state = reset(spec, env_seed)
    robot_rows, gt_frames, grids, actions = [], [], [], []
    succeeded = False
    for _ in range(spec.t_max):
        robot_rows.append(state.robot_state())
        gt_frames.append([p.copy() for p in state.objects])
        grids.append(render_grid(state, resolution))
        a = scripted_expert(state, spec, expert_rng)
        actions.append(a)
        state = step(state, a)
        if success(state, spec):
            succeeded = True
            break
    if not succeeded:
        return None, env_seed

    est_frames = emulate_tracking(gt_frames, tracker_cfg, tracker_rng)
    horizon = len(actions)
    n_obj = spec.n_objects
    gt_enc = np.zeros((horizon, n_obj, 8), dtype=np.float32)
    est_enc = np.zeros((horizon, n_obj, 8), dtype=np.float32)
    for t in range(horizon):
        for i in range(n_obj):
            gt_enc[t, i] = encode_pose(gt_frames[t][i])
            est_enc[t, i] = encode_pose(est_frames[t][i])
    episode = Episode(
        robot_state=np.asarray(robot_rows, dtype=np.float32),
        gt_poses=gt_enc,
        est_poses=est_enc,
        grids=np.asarray(grids, dtype=np.float32),
        actions=np.asarray(actions, dtype=np.float32),
    )
    return episode, env_seed


def generate_demonstrations(spec: TaskSpec, n_episodes: int, tracker_cfg: TrackerConfig,
                            seed: int, resolution: int = 32) -> DemoDataset:
    """Collect `n_episodes` successful expert demonstrations.

    Failed attempts are discarded and resampled. If after a warm-up the
    expert's success rate drops below 50%, generation aborts: that indicates
    a broken task setup, not bad luck.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    episodes: list[Episode] = []
    env_seeds: list[int] = []
    attempts = 0
    while len(episodes) < n_episodes:
        if attempts >= 20 and len(episodes) / attempts < 0.5:
            raise RuntimeError(
                f"expert failure rate exceeds 50% on {spec.task_id} "
                f"({len(episodes)}/{attempts} succeeded); aborting demonstration generation")
        attempts += 1
        episode, env_seed = _run_episode(spec, tracker_cfg, seed, attempts, resolution)
        if episode is not None:
            episodes.append(episode)
            env_seeds.append(env_seed)

    all_actions = np.concatenate([ep.actions for ep in episodes], axis=0)
    return DemoDataset(
        task_id=spec.task_id,
        n_objects=spec.n_objects,
        robot_dim=ROBOT_STATE_DIM,
        action_dim=ACTION_DIM,
        resolution=resolution,
        tracker=tracker_cfg.to_mapping(),
        episodes=episodes,
        action_min=all_actions.min(axis=0),
        action_max=all_actions.max(axis=0),
        episode_env_seeds=env_seeds,
    )


# ---------------------------------------------------------------------------
# serialization


def _write_array(f, arr: Array) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    f.write(struct.pack("<Q", arr.nbytes))
    f.write(arr.tobytes())


def _read_array(f, shape: tuple[int, ...]) -> Array:
    (nbytes,) = struct.unpack("<Q", f.read(8))
    expected = int(np.prod(shape)) * 4
    if nbytes != expected:
        raise ValueError(f"corrupt dataset: array of {nbytes} bytes where {expected} expected")
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise ValueError("corrupt dataset: truncated array payload")
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".header.jsonl")


def save_dataset(dataset: DemoDataset, path) -> Path:
    path = Path(path)
    header = dataset.header()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", dataset.format_version))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack("<I", len(dataset.episodes)))
        for ep in dataset.episodes:
            f.write(struct.pack("<I", len(ep)))
            _write_array(f, ep.robot_state)
            _write_array(f, ep.gt_poses)
            _write_array(f, ep.est_poses)
            _write_array(f, ep.grids)
            _write_array(f, ep.actions)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> DemoDataset:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: not a demonstration dataset (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        (n_episodes,) = struct.unpack("<I", f.read(4))
        n_obj = header["n_objects"]
        robot_dim = header["robot_dim"]
        action_dim = header["action_dim"]
        res = header["resolution"]
        episodes = []
        for _ in range(n_episodes):
            (horizon,) = struct.unpack("<I", f.read(4))
            episodes.append(Episode(
                robot_state=_read_array(f, (horizon, robot_dim)),
                gt_poses=_read_array(f, (horizon, n_obj, 8)),
                est_poses=_read_array(f, (horizon, n_obj, 8)),
                grids=_read_array(f, (horizon, res, res)),
                actions=_read_array(f, (horizon, action_dim)),
            ))
    amin = header.get("action_min")
    amax = header.get("action_max")
    return DemoDataset(
        task_id=header["task_id"],
        n_objects=n_obj,
        robot_dim=robot_dim,
        action_dim=action_dim,
        resolution=res,
        tracker=header["tracker"],
        episodes=episodes,
        action_min=None if amin is None else np.asarray(amin, dtype=np.float32),
        action_max=None if amax is None else np.asarray(amax, dtype=np.float32),
        episode_env_seeds=[int(s) for s in header.get("episode_env_seeds", [])],
        format_version=version,
    )
