"""Reciprocal collision avoidance in velocity space.

Each neighbor contributes one half-plane constraint (an OrcaLine) derived
from the velocity obstacle over a time horizon; the agent then takes the
feasible velocity closest to its preferred one via an incremental 2D linear
program. When the constraints are jointly infeasible inside the speed disc,
a secondary program minimizes the largest violation instead.

Scalar float math on purpose: these run per agent pair every step and the
arrays would be tiny.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .world import (
    GOAL_TOLERANCE,
    HumanAgent,
    RobotAgent,
    VelocityCommand,
    Vector2D,
    WorldState,
)

_EPSILON = 1e-10


@dataclass(frozen=True)
class OrcaLine:
    """Boundary of a half-plane constraint in velocity space.

    direction is unit length; the permitted side lies to its left.
    """

    point: Vector2D
    direction: Vector2D


@dataclass(frozen=True)
class OrcaParams:
    time_horizon: float = 5.0
    neighbor_distance: float = 10.0
    max_neighbors: int = 10
    dt: float = 0.25
    reciprocity_share: float = 0.5
    # Extra disc inflation in constraint construction only; absorbs the
    # millimeter grazes that show up when dense crossings go infeasible.
    safety_margin: float = 0.02
    # The robot plans on its own horizon (humans never yield to it, so it
    # profits from earlier commitment); None falls back to time_horizon.
    robot_time_horizon: float | None = 6.0

    def validate(self) -> None:
        for name in ("time_horizon", "neighbor_distance", "max_neighbors", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"OrcaParams.{name} must be positive")
        if not 0.0 < self.reciprocity_share <= 1.0:
            raise ValueError("OrcaParams.reciprocity_share must be in (0, 1]")
        if self.safety_margin < 0:
            raise ValueError("OrcaParams.safety_margin must be >= 0")
        if self.robot_time_horizon is not None and not self.robot_time_horizon > 0:
            raise ValueError("OrcaParams.robot_time_horizon must be positive")


def signed_distance(line: OrcaLine, velocity: Vector2D) -> float:
    """Perpendicular distance of a velocity to the line; >= 0 means permitted."""
    px, py = line.point
    dx, dy = line.direction
    vx, vy = velocity
    return dx * (vy - py) - dy * (vx - px)


def _agent_speed(agent) -> float:
    return agent.preferred_speed if isinstance(agent, HumanAgent) else agent.max_speed


def preferred_velocity(agent, dt: float) -> Vector2D:
    """Straight-to-goal velocity, slowed near the goal so one step lands on it."""
    px, py = agent.position
    gx, gy = agent.goal
    dx, dy = gx - px, gy - py
    dist = math.hypot(dx, dy)
    if dist < GOAL_TOLERANCE:
        return (0.0, 0.0)
    speed = min(_agent_speed(agent), dist / dt)
    return (dx / dist * speed, dy / dist * speed)


def _pair_line(
    pos: Vector2D,
    vel: Vector2D,
    radius: float,
    other_pos: Vector2D,
    other_vel: Vector2D,
    other_radius: float,
    params: OrcaParams,
    share: float,
) -> OrcaLine:
    """Half-plane constraint induced by one neighbor disc.

    Non-colliding discs: project the relative velocity onto the truncated
    velocity obstacle (cutoff arc or one of the legs). Colliding discs:
    resolve the penetration within one time step. Coincident centers fall
    into the colliding case with a fixed +x separation axis.
    """
    rel_x = other_pos[0] - pos[0]
    rel_y = other_pos[1] - pos[1]
    rvx = vel[0] - other_vel[0]
    rvy = vel[1] - other_vel[1]
    dist_sq = rel_x * rel_x + rel_y * rel_y
    combined = radius + other_radius + params.safety_margin
    combined_sq = combined * combined

    if dist_sq > combined_sq:
        inv_horizon = 1.0 / params.time_horizon
        # Vector from the cutoff-arc center to the relative velocity.
        wx = rvx - rel_x * inv_horizon
        wy = rvy - rel_y * inv_horizon
        w_sq = wx * wx + wy * wy
        dot1 = wx * rel_x + wy * rel_y
        if dot1 < 0.0 and dot1 * dot1 > combined_sq * w_sq:
            # Closest point is on the cutoff arc.
            w_len = math.sqrt(w_sq)
            ux, uy = wx / w_len, wy / w_len
            direction = (uy, -ux)
            change = combined * inv_horizon - w_len
            u = (change * ux, change * uy)
        else:
            leg = math.sqrt(dist_sq - combined_sq)
            if rel_x * wy - rel_y * wx >= 0.0:
                # Left leg; ties (apex-aligned relative velocity) land here.
                direction = (
                    (rel_x * leg - rel_y * combined) / dist_sq,
                    (rel_x * combined + rel_y * leg) / dist_sq,
                )
            else:
                direction = (
                    -(rel_x * leg + rel_y * combined) / dist_sq,
                    (rel_x * combined - rel_y * leg) / dist_sq,
                )
            dot2 = rvx * direction[0] + rvy * direction[1]
            u = (dot2 * direction[0] - rvx, dot2 * direction[1] - rvy)
    else:
        # Overlapping (or coincident) discs: push apart within one step.
        inv_dt = 1.0 / params.dt
        wx = rvx - rel_x * inv_dt
        wy = rvy - rel_y * inv_dt
        w_len = math.hypot(wx, wy)
        if w_len < _EPSILON:
            ux, uy = -1.0, 0.0  # fixed +x separation axis
        else:
            ux, uy = wx / w_len, wy / w_len
        direction = (uy, -ux)
        change = combined * inv_dt - w_len
        u = (change * ux, change * uy)

    return OrcaLine(
        point=(vel[0] + share * u[0], vel[1] + share * u[1]),
        direction=direction,
    )


def orca_lines(agent, neighbors, params: OrcaParams, share: float | None = None) -> list[OrcaLine]:
    """Constraints for one agent against the nearest neighbors in range."""
    if share is None:
        share = params.reciprocity_share
    px, py = agent.position
    cutoff_sq = params.neighbor_distance * params.neighbor_distance
    ranked = []
    for index, other in enumerate(neighbors):
        if other is agent:
            raise ValueError("agent must not appear in its own neighbor list")
        ox, oy = other.position
        d_sq = (ox - px) ** 2 + (oy - py) ** 2
        if d_sq < cutoff_sq:
            ranked.append((d_sq, index, other))
    ranked.sort(key=lambda item: (item[0], item[1]))

    lines = []
    for _, _, other in ranked[: params.max_neighbors]:
        lines.append(
            _pair_line(
                agent.position,
                agent.velocity,
                agent.radius,
                other.position,
                other.velocity,
                other.radius,
                params,
                share,
            )
        )
    return lines


def _lp1(
    lines: list[OrcaLine],
    line_no: int,
    radius: float,
    opt: Vector2D,
    direction_opt: bool,
) -> Vector2D | None:
    """Optimize along line line_no, restricted to the disc and lines < line_no."""
    line = lines[line_no]
    px, py = line.point
    dx, dy = line.direction
    dot = px * dx + py * dy
    discriminant = dot * dot + radius * radius - (px * px + py * py)
    if discriminant < 0.0:
        return None  # the speed disc misses this line entirely
    sqrt_disc = math.sqrt(discriminant)
    t_left = -dot - sqrt_disc
    t_right = -dot + sqrt_disc

    for i in range(line_no):
        other = lines[i]
        ox, oy = other.point
        ex, ey = other.direction
        denominator = dx * ey - dy * ex
        numerator = ex * (py - oy) - ey * (px - ox)
        if abs(denominator) <= _EPSILON:
            if numerator < 0.0:
                return None  # parallel and fully excluded
            continue
        t = numerator / denominator
        if denominator >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return None

    if direction_opt:
        if opt[0] * dx + opt[1] * dy > 0.0:
            t = t_right
        else:
            t = t_left
    else:
        t = dx * (opt[0] - px) + dy * (opt[1] - py)
        t = min(max(t, t_left), t_right)
    return (px + t * dx, py + t * dy)


def _lp2(
    lines: list[OrcaLine],
    radius: float,
    opt: Vector2D,
    direction_opt: bool,
) -> tuple[Vector2D, int]:
    """Incremental 2D LP; returns (result, index of the first failing line or len)."""
    if direction_opt:
        result = (opt[0] * radius, opt[1] * radius)
    else:
        opt_sq = opt[0] * opt[0] + opt[1] * opt[1]
        if opt_sq > radius * radius:
            norm = math.sqrt(opt_sq)
            result = (opt[0] / norm * radius, opt[1] / norm * radius)
        else:
            result = opt

    for i, line in enumerate(lines):
        if signed_distance(line, result) < 0.0:
            replacement = _lp1(lines, i, radius, opt, direction_opt)
            if replacement is None:
                return result, i
            result = replacement
    return result, len(lines)


def _lp3(lines: list[OrcaLine], begin: int, radius: float, result: Vector2D) -> Vector2D:
    """Secondary program: minimize the largest constraint violation in the disc."""
    distance = 0.0
    for i in range(begin, len(lines)):
        line = lines[i]
        if -signed_distance(line, result) <= distance:
            continue
        # Project the already-processed lines onto line i's boundary.
        proj: list[OrcaLine] = []
        dx, dy = line.direction
        px, py = line.point
        for j in range(i):
            other = lines[j]
            ex, ey = other.direction
            ox, oy = other.point
            determinant = dx * ey - dy * ex
            if abs(determinant) <= _EPSILON:
                if dx * ex + dy * ey > 0.0:
                    continue  # same direction: j never binds on line i
                point = ((px + ox) / 2.0, (py + oy) / 2.0)
            else:
                t = (ex * (py - oy) - ey * (px - ox)) / determinant
                point = (px + t * dx, py + t * dy)
            ndx, ndy = ex - dx, ey - dy
            norm = math.hypot(ndx, ndy)
            proj.append(OrcaLine(point=point, direction=(ndx / norm, ndy / norm)))

        candidate, fail = _lp2(proj, radius, (-dy, dx), True)
        if fail >= len(proj):
            # A failure here would be floating-point noise; keep the old result.
            result = candidate
        distance = -signed_distance(line, result)
    return result


def solve_velocity(lines: list[OrcaLine], preferred: Vector2D, max_speed: float) -> Vector2D:
    """Feasible velocity closest to `preferred` within the speed disc, or the
    minimax-violation velocity when the constraints exclude the whole disc."""
    if max_speed <= 0:
        raise ValueError("max_speed must be positive")
    result, fail = _lp2(lines, max_speed, preferred, False)
    if fail < len(lines):
        result = _lp3(lines, fail, max_speed, result)
    return result


def human_policy_step(world: WorldState, params: OrcaParams) -> list[Vector2D]:
    """New velocity for every human from the shared pre-step snapshot.

    Humans avoid each other reciprocally and never see the robot.
    """
    velocities = []
    for i, human in enumerate(world.humans):
        neighbors = [other for j, other in enumerate(world.humans) if j != i]
        lines = orca_lines(human, neighbors, params)
        pref = preferred_velocity(human, params.dt)
        velocities.append(solve_velocity(lines, pref, human.preferred_speed))
    return velocities


def orca_robot_policy(
    world: WorldState, detected_humans, params: OrcaParams
) -> VelocityCommand:
    """Avoidance command for the robot against the humans it can see.

    Humans do not yield to the robot, so the robot absorbs the full
    correction (reciprocity share 1.0) instead of splitting it, and it
    plans on its own horizon when one is configured.
    """
    robot = world.robot
    if params.robot_time_horizon is not None:
        params = dataclasses.replace(params, time_horizon=params.robot_time_horizon)
    lines = orca_lines(robot, list(detected_humans), params, share=1.0)
    pref = preferred_velocity(robot, params.dt)
    return VelocityCommand(solve_velocity(lines, pref, robot.max_speed))
