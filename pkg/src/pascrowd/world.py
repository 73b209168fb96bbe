"""Scenario sampling and time integration for the crowd world.

The world holds one holonomic robot and a ring of humans crossing to
antipodal goals. Everything here is a pure function over immutable
snapshots: stepping returns a new WorldState, and a fixed (config, seed,
command sequence) reproduces the same trajectory bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

Vector2D = tuple[float, float]

# Canonical agent constants (not part of ScenarioConfig).
HUMAN_RADIUS_RANGE = (0.3, 0.4)
HUMAN_SPEED_RANGE = (0.5, 1.5)
ROBOT_RADIUS = 0.3
ROBOT_MAX_SPEED = 2.0
ROBOT_MAX_ACCEL = 1.0

# Agents closer than this to their goal count as arrived and stand still.
GOAL_TOLERANCE = 0.1

_SPAWN_RETRY_CAP = 1000


class ScenarioSampleError(RuntimeError):
    """Rejection sampling exhausted its retry budget."""


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class HumanAgent:
    position: Vector2D
    velocity: Vector2D
    radius: float
    goal: Vector2D
    preferred_speed: float


@dataclass(frozen=True)
class RobotAgent:
    position: Vector2D
    velocity: Vector2D
    goal: Vector2D
    radius: float = ROBOT_RADIUS
    max_speed: float = ROBOT_MAX_SPEED
    max_accel: float = ROBOT_MAX_ACCEL


@dataclass(frozen=True)
class VelocityCommand:
    """Target velocity for the robot; dynamics clamping happens in apply_command."""

    desired_velocity: Vector2D


@dataclass(frozen=True)
class ScenarioConfig:
    human_count: int = 6
    circle_radius: float = 4.0
    position_noise_halfwidth: float = 1.0
    robot_spawn_square_halfwidth: float = 5.0
    robot_min_goal_distance: float = 6.0
    dt: float = 0.25
    max_steps: int = 200
    fov_radius: float = 3.0
    discomfort_distance: float = 0.25

    def validate(self) -> None:
        numeric = {
            "human_count": self.human_count,
            "circle_radius": self.circle_radius,
            "robot_spawn_square_halfwidth": self.robot_spawn_square_halfwidth,
            "robot_min_goal_distance": self.robot_min_goal_distance,
            "dt": self.dt,
            "max_steps": self.max_steps,
            "fov_radius": self.fov_radius,
            "discomfort_distance": self.discomfort_distance,
        }
        for name, value in numeric.items():
            if not value > 0:
                raise ValueError(f"ScenarioConfig.{name} must be positive, got {value!r}")
        if self.position_noise_halfwidth < 0:
            raise ValueError("ScenarioConfig.position_noise_halfwidth must be >= 0")
        diagonal = 2.0 * self.robot_spawn_square_halfwidth * math.sqrt(2.0)
        if not self.robot_min_goal_distance < diagonal:
            raise ValueError(
                "robot_min_goal_distance must be smaller than the spawn square diagonal"
            )


@dataclass(frozen=True)
class WorldState:
    step_index: int
    time: float
    robot: RobotAgent
    humans: tuple[HumanAgent, ...]
    seed: int

    @property
    def human_count(self) -> int:
        return len(self.humans)


def _stream(seed: int, *key: int) -> np.random.Generator:
    """Sub-stream derived from the root seed by a fixed key.

    Per-agent keys keep sampling stable when unrelated draws are added.
    """
    entropy = seed & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=key)))


def sample_scenario(cfg: ScenarioConfig, seed: int) -> WorldState:
    """Sample the circle-crossing scenario deterministically from (cfg, seed).

    Humans start on a circle with uniform noise and head for the antipode of
    their noisy start. The robot spawns uniformly in the square, rejected
    until it is at least robot_min_goal_distance from its goal at the origin.
    """
    cfg.validate()
    humans = []
    for i in range(cfg.human_count):
        rng = _stream(seed, 0, i)
        theta = 2.0 * math.pi * i / cfg.human_count
        hw = cfg.position_noise_halfwidth
        noise_x = rng.uniform(-hw, hw) if hw > 0 else 0.0
        noise_y = rng.uniform(-hw, hw) if hw > 0 else 0.0
        px = cfg.circle_radius * math.cos(theta) + noise_x
        py = cfg.circle_radius * math.sin(theta) + noise_y
        radius = rng.uniform(*HUMAN_RADIUS_RANGE)
        speed = rng.uniform(*HUMAN_SPEED_RANGE)
        humans.append(
            HumanAgent(
                position=(px, py),
                velocity=(0.0, 0.0),
                radius=radius,
                goal=(-px, -py),
                preferred_speed=speed,
            )
        )

    rng = _stream(seed, 1)
    hw = cfg.robot_spawn_square_halfwidth
    for _ in range(_SPAWN_RETRY_CAP):
        rx = rng.uniform(-hw, hw)
        ry = rng.uniform(-hw, hw)
        if math.hypot(rx, ry) >= cfg.robot_min_goal_distance:
            break
    else:
        raise ScenarioSampleError(
            f"no robot spawn at least {cfg.robot_min_goal_distance} m from the goal "
            f"after {_SPAWN_RETRY_CAP} attempts"
        )

    robot = RobotAgent(position=(rx, ry), velocity=(0.0, 0.0), goal=(0.0, 0.0))
    return WorldState(step_index=0, time=0.0, robot=robot, humans=tuple(humans), seed=seed)


def apply_command(robot: RobotAgent, cmd: VelocityCommand, dt: float) -> RobotAgent:
    """Advance the robot one step: clamp the command to the acceleration disc
    around the current velocity, then to the speed disc, then integrate."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cx, cy = cmd.desired_velocity
    if not _finite(cx, cy):
        raise ValueError(f"command velocity must be finite, got {cmd.desired_velocity!r}")

    vx, vy = robot.velocity
    dvx, dvy = cx - vx, cy - vy
    dv = math.hypot(dvx, dvy)
    max_dv = robot.max_accel * dt
    if dv > max_dv:
        scale = max_dv / dv
        dvx *= scale
        dvy *= scale
    nvx, nvy = vx + dvx, vy + dvy

    speed = math.hypot(nvx, nvy)
    if speed > robot.max_speed:
        scale = robot.max_speed / speed
        nvx *= scale
        nvy *= scale

    px, py = robot.position
    return replace(robot, position=(px + nvx * dt, py + nvy * dt), velocity=(nvx, nvy))


def step_world(world: WorldState, cmd: VelocityCommand, dt: float, params=None) -> WorldState:
    """One synchronous simulation step.

    Human velocities come from the reciprocal-avoidance policy computed on the
    pre-step snapshot (the robot is invisible to humans). Humans that already
    reached their goal stand still and keep blocking sight lines. `params`
    overrides the avoidance parameters; its dt must match the integrator dt.
    """
    from . import orca  # local import: orca depends on world types

    if params is None:
        params = orca.OrcaParams(dt=dt)
    elif params.dt != dt:
        raise ValueError(f"params.dt={params.dt} does not match step dt={dt}")
    velocities = orca.human_policy_step(world, params)
    new_humans = []
    for human, (vx, vy) in zip(world.humans, velocities):
        px, py = human.position
        gx, gy = human.goal
        if math.hypot(gx - px, gy - py) < GOAL_TOLERANCE:
            new_humans.append(replace(human, velocity=(0.0, 0.0)))
        else:
            new_humans.append(
                replace(human, position=(px + vx * dt, py + vy * dt), velocity=(vx, vy))
            )

    robot = apply_command(world.robot, cmd, dt)
    step = world.step_index + 1
    return replace(
        world, step_index=step, time=step * dt, robot=robot, humans=tuple(new_humans)
    )


def min_separation(world: WorldState) -> float:
    """Surface distance from the robot to its closest human.

    Negative values mean overlapping discs; +inf when there are no humans.
    """
    rx, ry = world.robot.position
    best = math.inf
    for human in world.humans:
        hx, hy = human.position
        gap = math.hypot(hx - rx, hy - ry) - world.robot.radius - human.radius
        if gap < best:
            best = gap
    return best


def goal_distance(world: WorldState) -> float:
    rx, ry = world.robot.position
    gx, gy = world.robot.goal
    return math.hypot(gx - rx, gy - ry)
