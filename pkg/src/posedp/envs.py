"""Desk-scale 2-D manipulation tasks with scripted experts and grid rendering.

Kinematic world, no physics engine. A disc gripper moves in the [-1, 1]^2
workspace; while closed it can grasp the nearest object within reach (the
held object then follows rigidly), while open it pushes free objects it moves
into. Lifting is a boolean flag that turns on after an object has been held
for a full step. Actions are 4 floats in [-1, 1]: dx, dy, dyaw, grip; the
grip channel closes above +0.5, opens below -0.5, and holds in between.

Tasks: reach (grasp and lift the object), push_to_goal (deliver the object
into a fixed goal zone), stack (place object 0 onto object 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import Pose, quat_from_axis_angle, quat_multiply

Array = np.ndarray

TASKS = ("reach", "push_to_goal", "stack")

STEP_XY = 0.08          # max gripper translation per step
STEP_YAW = 0.3          # max gripper rotation per step, rad
GRASP_RADIUS = 0.05
GRIPPER_RADIUS = 0.03
OBJECT_RADIUS = 0.04
CONTACT_DIST = GRIPPER_RADIUS + OBJECT_RADIUS
MIN_SEPARATION = 0.2
SPAWN_BOUND = 0.85      # entities spawn inside this box so walls stay clear
EXPERT_NOISE_STD = 0.02

ROBOT_STATE_DIM = 7     # x, y, cos yaw, sin yaw, closed, holding, lifted
ACTION_DIM = 4


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    n_objects: int
    t_max: int
    goal_center: tuple[float, float] | None = None
    reach_radius: float = 0.05
    goal_radius: float = 0.07
    stack_radius: float = 0.06

    def __post_init__(self):
        if self.task_id not in TASKS:
            raise ValueError(f"unknown task {self.task_id!r}; choose from {TASKS}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")

    @staticmethod
    def for_task(task_id: str, t_max: int | None = None) -> "TaskSpec":
        if task_id == "reach":
            return TaskSpec("reach", n_objects=1, t_max=t_max or 60)
        if task_id == "push_to_goal":
            return TaskSpec("push_to_goal", n_objects=1, t_max=t_max or 140,
                            goal_center=(0.6, 0.6))
        if task_id == "stack":
            return TaskSpec("stack", n_objects=2, t_max=t_max or 140)
        raise ValueError(f"unknown task {task_id!r}; choose from {TASKS}")


@dataclass
class WorldState:
    spec: TaskSpec
    gripper_xy: Array
    gripper_yaw: float
    closed: bool
    lifted: bool
    held: int | None
    held_offset: Array | None
    held_steps: int
    on_top: bool
    objects: list[Pose]
    step_count: int

    def robot_state(self) -> Array:
        return np.array([
            self.gripper_xy[0],
            self.gripper_xy[1],
            math.cos(self.gripper_yaw),
            math.sin(self.gripper_yaw),
            1.0 if self.closed else 0.0,
            1.0 if self.held is not None else 0.0,
            1.0 if self.lifted else 0.0,
        ])

    def copy(self) -> "WorldState":
        return WorldState(
            spec=self.spec,
            gripper_xy=self.gripper_xy.copy(),
            gripper_yaw=self.gripper_yaw,
            closed=self.closed,
            lifted=self.lifted,
            held=self.held,
            held_offset=None if self.held_offset is None else self.held_offset.copy(),
            held_steps=self.held_steps,
            on_top=self.on_top,
            objects=[p.copy() for p in self.objects],
            step_count=self.step_count,
        )


def reset(spec: TaskSpec, seed) -> WorldState:
    """Fresh episode: entities placed uniformly with pairwise separation.

    The gripper, every object, and the goal zone (when the task has one) are
    all kept at least MIN_SEPARATION apart, so no task starts solved.
    """
    rng = np.random.default_rng(seed)
    fixed = [np.asarray(spec.goal_center, dtype=np.float64)] if spec.goal_center else []
    for _ in range(1000):
        pts = rng.uniform(-SPAWN_BOUND, SPAWN_BOUND, size=(spec.n_objects + 1, 2))
        entities = list(pts) + fixed
        ok = all(
            np.linalg.norm(entities[i] - entities[j]) >= MIN_SEPARATION
            for i in range(len(entities)) for j in range(i + 1, len(entities)))
        if ok:
            break
    else:
        raise RuntimeError("could not place entities with the required separation in 1000 tries")
    yaws = rng.uniform(-math.pi, math.pi, size=spec.n_objects)
    objects = [Pose.from_xy_yaw(pts[i][0], pts[i][1], yaws[i]) for i in range(spec.n_objects)]
    return WorldState(
        spec=spec,
        gripper_xy=pts[-1].copy(),
        gripper_yaw=0.0,
        closed=False,
        lifted=False,
        held=None,
        held_offset=None,
        held_steps=0,
        on_top=False,
        objects=objects,
        step_count=0,
    )


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _planar_pose(xy: Array, rotation: Array) -> Pose:
    return Pose(np.array([xy[0], xy[1], 0.0]), rotation)


def step(state: WorldState, action) -> WorldState:
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape ({ACTION_DIM},), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("action must be finite")
    a = np.clip(a, -1.0, 1.0)
    spec = state.spec
    s = state.copy()
    prev_xy = state.gripper_xy

    s.gripper_xy = np.clip(s.gripper_xy + a[:2] * STEP_XY, -1.0, 1.0)
    dyaw = a[2] * STEP_YAW
    s.gripper_yaw = _wrap_angle(s.gripper_yaw + dyaw)

    if s.held is not None:
        if dyaw != 0.0:
            c, sn = math.cos(dyaw), math.sin(dyaw)
            s.held_offset = np.array([
                c * s.held_offset[0] - sn * s.held_offset[1],
                sn * s.held_offset[0] + c * s.held_offset[1],
            ])
        obj = s.objects[s.held]
        rot = obj.rotation
        if dyaw != 0.0:
            rot = quat_multiply(quat_from_axis_angle((0.0, 0.0, 1.0), dyaw), rot)
        s.objects[s.held] = _planar_pose(s.gripper_xy + s.held_offset, rot)

    g = a[3]
    want_closed = True if g >= 0.5 else False if g <= -0.5 else s.closed
    if want_closed:
        if s.held is None:
            dists = [float(np.linalg.norm(o.xy - s.gripper_xy)) for o in s.objects]
            j = int(np.argmin(dists))
            if dists[j] <= GRASP_RADIUS:
                s.held = j
                s.held_offset = s.objects[j].xy - s.gripper_xy
                s.held_steps = 0
                if spec.task_id == "stack" and j == 0:
                    s.on_top = False
        else:
            s.held_steps += 1
    else:
        if s.held is not None:
            if spec.task_id == "stack" and s.held == 0:
                gap = np.linalg.norm(s.objects[0].xy - s.objects[1].xy)
                s.on_top = bool(gap <= spec.stack_radius)
            s.held = None
            s.held_offset = None
            s.held_steps = 0
    s.lifted = s.held is not None and s.held_steps >= 1

    # An open gripper shoves free objects it moves into; overlap is resolved
    # along the center line. Only on approach, so releases do not teleport.
    # A sweep past the object center carries it along the motion direction
    # instead of ejecting it backwards.
    if not state.closed and not want_closed:
        motion = s.gripper_xy - prev_xy
        motion_norm = float(np.linalg.norm(motion))
        for i, obj in enumerate(s.objects):
            if i == s.held:
                continue
            d_new = float(np.linalg.norm(obj.xy - s.gripper_xy))
            d_old = float(np.linalg.norm(obj.xy - prev_xy))
            if d_new < CONTACT_DIST and d_new < d_old - 1e-12:
                fallback = motion / motion_norm if motion_norm > 1e-12 else np.array([1.0, 0.0])
                if d_new < 1e-9:
                    push_dir = fallback
                else:
                    push_dir = (obj.xy - s.gripper_xy) / d_new
                    if float(np.dot(push_dir, motion)) < 0.0:
                        push_dir = fallback
                new_xy = np.clip(s.gripper_xy + push_dir * CONTACT_DIST, -1.0, 1.0)
                s.objects[i] = _planar_pose(new_xy, obj.rotation)

    s.closed = want_closed
    s.step_count += 1
    return s


def success(state: WorldState, spec: TaskSpec) -> bool:
    if spec.task_id == "reach":
        d = np.linalg.norm(state.objects[0].xy - state.gripper_xy)
        return state.closed and state.lifted and d <= spec.reach_radius
    if spec.task_id == "push_to_goal":
        goal = np.asarray(spec.goal_center)
        return bool(np.linalg.norm(state.objects[0].xy - goal) <= spec.goal_radius)
    if spec.task_id == "stack":
        gap = np.linalg.norm(state.objects[0].xy - state.objects[1].xy)
        return state.on_top and gap <= spec.stack_radius
    raise ValueError(f"unknown task {spec.task_id!r}")


def _toward(delta: Array) -> Array:
    return np.clip(delta / STEP_XY, -1.0, 1.0)


def _transport_controller(state: WorldState, spec: TaskSpec) -> Array:
    """Grasp the object and carry it into the goal zone.

    Success fires as soon as the object sits within the goal radius, held or
    not, so the carry leg alone completes the task.
    """
    a = np.zeros(ACTION_DIM)
    goal = np.asarray(spec.goal_center)
    if state.held == 0:
        a[:2] = _toward(goal - state.held_offset - state.gripper_xy)
        a[3] = 1.0
    elif state.held is not None:
        a[3] = -1.0
    else:
        a[:2] = _toward(state.objects[0].xy - state.gripper_xy)
        a[3] = 1.0
    return a


def scripted_expert(state: WorldState, spec: TaskSpec, rng: np.random.Generator) -> Array:
    """Proportional controller toward the current subgoal, with action noise."""
    a = np.zeros(ACTION_DIM)
    if spec.task_id == "reach":
        a[3] = 1.0
        if state.held != 0:
            a[:2] = _toward(state.objects[0].xy - state.gripper_xy)
    elif spec.task_id == "push_to_goal":
        a = _transport_controller(state, spec)
    elif spec.task_id == "stack":
        if state.held == 0:
            target = state.objects[1].xy - state.held_offset
            delta = target - state.gripper_xy
            if np.linalg.norm(delta) > 0.01:
                a[:2] = _toward(delta)
                a[3] = 1.0
            else:
                a[3] = -1.0  # release on target
        elif state.held is not None:
            a[3] = -1.0  # grabbed the wrong object, drop it
        else:
            a[:2] = _toward(state.objects[0].xy - state.gripper_xy)
            a[3] = 1.0
    else:
        raise ValueError(f"unknown task {spec.task_id!r}")
    return np.clip(a + rng.normal(0.0, EXPERT_NOISE_STD, size=ACTION_DIM), -1.0, 1.0)


# ---------------------------------------------------------------------------
# rendering

GOAL_LEVEL = 0.3
OBJECT_LEVELS = (0.65, 0.85)
GRIPPER_LEVEL = 1.0
GOAL_VIS_RADIUS = 0.10
OBJECT_VIS_RADIUS = 0.14
GRIPPER_VIS_RADIUS_OPEN = 0.13
GRIPPER_VIS_RADIUS_CLOSED = 0.08

_GRID_CACHE: dict[int, tuple[Array, Array]] = {}


def _pixel_grid(resolution: int) -> tuple[Array, Array]:
    cached = _GRID_CACHE.get(resolution)
    if cached is None:
        centers = (np.arange(resolution) + 0.5) * (2.0 / resolution)
        xs = -1.0 + centers
        ys = 1.0 - centers
        cached = np.meshgrid(xs, ys)  # X varies along columns, Y along rows
        _GRID_CACHE[resolution] = cached
    return cached


def render_grid(state: WorldState, resolution: int = 32) -> Array:
    """Anti-aliased single-channel rasterization of the scene in [0, 1].

    Entities are discs at distinct intensity levels, max-composited; the
    gripper narrows when closed so its state is visible in pixels.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    x_grid, y_grid = _pixel_grid(resolution)
    px = 2.0 / resolution
    img = np.zeros((resolution, resolution), dtype=np.float32)

    def splat(center, radius, level):
        d = np.hypot(x_grid - center[0], y_grid - center[1])
        cov = np.clip((radius - d) / px + 0.5, 0.0, 1.0)
        np.maximum(img, (level * cov).astype(np.float32), out=img)

    if state.spec.goal_center is not None:
        splat(state.spec.goal_center, GOAL_VIS_RADIUS, GOAL_LEVEL)
    for i, obj in enumerate(state.objects):
        splat(obj.xy, OBJECT_VIS_RADIUS, OBJECT_LEVELS[i % len(OBJECT_LEVELS)])
    grip_r = GRIPPER_VIS_RADIUS_CLOSED if state.closed else GRIPPER_VIS_RADIUS_OPEN
    splat(state.gripper_xy, grip_r, GRIPPER_LEVEL)
    return img
