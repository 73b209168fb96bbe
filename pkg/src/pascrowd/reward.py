"""Piecewise navigation reward.

Strict top-down precedence: reaching the goal beats everything, then
collision, then the near-miss band, then plain progress shaping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

SUCCESS_REWARD = 10.0
COLLISION_REWARD = -5.0
DISCOMFORT_SCALE = 2.5
PROGRESS_SCALE = 2.0
DEFAULT_DISCOMFORT_DISTANCE = 0.25


@dataclass(frozen=True)
class RewardInputs:
    d_goal_prev: float  # robot-goal distance before the step, m
    d_goal: float  # robot-goal distance after the step, m
    d_min: float  # surface distance to the closest human, m (+inf if none)
    robot_radius: float


def compute_reward(
    inputs: RewardInputs, discomfort_distance: float = DEFAULT_DISCOMFORT_DISTANCE
) -> float:
    values = (inputs.d_goal_prev, inputs.d_goal, inputs.d_min, inputs.robot_radius)
    if any(math.isnan(v) for v in values):
        raise ValueError(f"reward inputs must not be NaN: {inputs!r}")

    if inputs.d_goal < inputs.robot_radius:
        return SUCCESS_REWARD
    if inputs.d_min < 0.0:
        return COLLISION_REWARD
    if inputs.d_min < discomfort_distance:
        return DISCOMFORT_SCALE * (inputs.d_min - discomfort_distance)
    return PROGRESS_SCALE * (inputs.d_goal_prev - inputs.d_goal)
