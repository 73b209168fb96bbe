import math

import numpy as np
import pytest

from pascrowd.reward import RewardInputs, compute_reward


def _r(d_goal_prev=5.0, d_goal=5.0, d_min=1.0, robot_radius=0.3):
    return RewardInputs(d_goal_prev=d_goal_prev, d_goal=d_goal, d_min=d_min, robot_radius=robot_radius)


def test_goal_case_dominates_everything():
    assert compute_reward(_r(d_goal=0.2, d_min=-1.0)) == 10.0
    assert compute_reward(_r(d_goal=0.2, d_min=0.1)) == 10.0


def test_collision_case():
    assert compute_reward(_r(d_min=-0.01, d_goal=5.0)) == -5.0


def test_near_miss_case_arithmetic():
    assert compute_reward(_r(d_min=0.10)) == pytest.approx(-0.375, abs=1e-12)


def test_progress_case():
    assert compute_reward(_r(d_goal_prev=5.0, d_goal=4.9, d_min=0.5)) == pytest.approx(0.2, abs=1e-12)


def test_boundary_d_min_zero():
    assert compute_reward(_r(d_min=0.0)) == pytest.approx(-0.625, abs=1e-12)


def test_boundary_d_min_at_threshold_falls_through():
    assert compute_reward(_r(d_min=0.25, d_goal_prev=5.0, d_goal=4.8)) == pytest.approx(0.4, abs=1e-12)


def test_precedence_collision_over_near_miss():
    # d_min < 0 cannot also be in [0, 0.25), but force the ordering check
    # through the goal/collision pair and collision/progress pair.
    assert compute_reward(_r(d_goal=0.1, d_min=-0.5)) == 10.0
    assert compute_reward(_r(d_goal_prev=9.0, d_goal=8.0, d_min=-0.5)) == -5.0
    assert compute_reward(_r(d_goal_prev=9.0, d_goal=8.0, d_min=0.2)) == pytest.approx(-0.125)


def test_infinite_d_min_means_no_humans():
    assert compute_reward(_r(d_min=math.inf, d_goal_prev=3.0, d_goal=2.9)) == pytest.approx(0.2)


def test_output_range_under_speed_bound():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        prev = rng.uniform(0.0, 12.0)
        step = rng.uniform(-0.5, 0.5)  # per-step progress bounded by max_speed*dt
        inputs = _r(d_goal_prev=prev, d_goal=max(0.0, prev - step), d_min=rng.uniform(-0.5, 3.0))
        value = compute_reward(inputs)
        assert -5.0 <= value <= 10.0


def test_nan_inputs_rejected():
    with pytest.raises(ValueError):
        compute_reward(_r(d_min=math.nan))
    with pytest.raises(ValueError):
        compute_reward(_r(d_goal=math.nan))
