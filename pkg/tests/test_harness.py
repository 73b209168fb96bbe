import dataclasses
import math

import pytest

from pascrowd.config import default_config
from pascrowd.harness import (
    COLLISION,
    SUCCESS,
    TIMEOUT,
    EpisodeEngine,
    EpisodeFinished,
    EpisodeRecord,
    StepRecord,
    aggregate,
    episode_to_json,
    evaluate,
    make_policy,
    report_to_json,
    run_episode,
)
from pascrowd.world import VelocityCommand, sample_scenario, step_world

CFG = default_config()


def _zero_policy(world, cfg):
    return VelocityCommand((0.0, 0.0))


def test_spawn_on_goal_is_immediate_success():
    cfg = dataclasses.replace(
        CFG,
        scenario=dataclasses.replace(
            CFG.scenario, robot_spawn_square_halfwidth=0.2, robot_min_goal_distance=0.1
        ),
    )
    record = run_episode(_zero_policy, cfg, seed=0)
    assert record.outcome == SUCCESS
    assert record.steps == ()
    assert record.nav_time == 0.0
    assert record.path_length == 0.0


def test_zero_policy_times_out_at_200_steps():
    record = run_episode(_zero_policy, CFG, seed=2)
    assert record.outcome == TIMEOUT
    assert len(record.steps) == 200
    assert record.nav_time == pytest.approx(50.0)


def test_episode_serialization_is_deterministic():
    a = run_episode("gt-orca", CFG, seed=7)
    b = run_episode("gt-orca", CFG, seed=7)
    assert episode_to_json(a) == episode_to_json(b)


def test_every_outcome_is_exclusive_and_truncated():
    for seed in range(25):
        record = run_episode("obs-orca", CFG, seed)
        assert record.outcome in (SUCCESS, COLLISION, TIMEOUT)
        if record.steps:
            # no step follows the first terminal event
            terminal = [i for i, s in enumerate(record.steps) if s.event in (SUCCESS, COLLISION, TIMEOUT)]
            assert terminal == [len(record.steps) - 1]
            final = record.steps[-1]
            if record.outcome == SUCCESS:
                assert final.d_goal < 0.3
            if record.outcome == COLLISION:
                assert final.d_min < 0.0


def test_replay_closure():
    """Re-simulating from (seed, recorded commands) reproduces every state."""
    record = run_episode("gt-orca", CFG, seed=4)
    world = sample_scenario(CFG.scenario, 4)
    for step in record.steps:
        world = step_world(world, VelocityCommand(step.command), CFG.scenario.dt, CFG.orca)
        assert world.robot.position == step.robot_position
        assert world.robot.velocity == step.robot_velocity
        assert tuple(h.position for h in world.humans) == step.human_positions


def test_engine_rejects_commands_after_done():
    cfg = dataclasses.replace(
        CFG,
        scenario=dataclasses.replace(
            CFG.scenario, robot_spawn_square_halfwidth=0.2, robot_min_goal_distance=0.1
        ),
    )
    engine = EpisodeEngine(cfg, seed=0)
    assert engine.done
    with pytest.raises(EpisodeFinished):
        engine.apply(VelocityCommand((0.0, 0.0)))


def _fake_record(outcome, steps=(), nav_time=0.0, path_length=0.0):
    return EpisodeRecord(
        seed=0,
        config_hash="x",
        outcome=outcome,
        steps=tuple(steps),
        nav_time=nav_time,
        path_length=path_length,
    )


def _fake_step(d_min=1.0, reward=0.0, event="none"):
    return StepRecord(
        step_index=0,
        robot_position=(0.0, 0.0),
        robot_velocity=(0.0, 0.0),
        human_positions=(),
        command=(0.0, 0.0),
        reward=reward,
        d_min=d_min,
        d_goal=1.0,
        event=event,
    )


def test_aggregate_excludes_timeouts_from_rates():
    records = [
        _fake_record(SUCCESS, [_fake_step()], nav_time=10.0, path_length=8.0),
        _fake_record(COLLISION, [_fake_step(d_min=-0.1)]),
        _fake_record(TIMEOUT, [_fake_step()]),
    ]
    report = aggregate(records, CFG)
    assert report.success_rate == pytest.approx(0.5)
    assert report.collision_rate == pytest.approx(0.5)
    assert report.timeout_count == 1
    assert report.episode_count == 3


def test_aggregate_means_cover_successes_only():
    records = [
        _fake_record(SUCCESS, [_fake_step()], nav_time=10.0, path_length=8.0),
        _fake_record(COLLISION, [_fake_step(d_min=-0.1)], nav_time=99.0, path_length=99.0),
    ]
    report = aggregate(records, CFG)
    assert report.mean_nav_time == pytest.approx(10.0)
    assert report.mean_path_length == pytest.approx(8.0)


def test_aggregate_discomfort_is_per_step():
    records = [
        _fake_record(SUCCESS, [_fake_step(d_min=0.1), _fake_step(d_min=0.5)]),
        _fake_record(COLLISION, [_fake_step(d_min=0.24), _fake_step(d_min=-0.1)]),
    ]
    report = aggregate(records, CFG)
    assert report.discomfort_rate == pytest.approx(2 / 4)


def test_aggregate_discomfort_zero_when_all_clear():
    records = [_fake_record(SUCCESS, [_fake_step(d_min=0.25), _fake_step(d_min=1.0)])]
    assert aggregate(records, CFG).discomfort_rate == 0.0


def test_aggregate_all_timeouts_yields_null_rates():
    records = [_fake_record(TIMEOUT, [_fake_step()])]
    report = aggregate(records, CFG)
    assert report.success_rate is None
    assert report.collision_rate is None
    text = report_to_json(report)
    assert '"success_rate": null' in text


def test_aggregate_rejects_empty_input():
    with pytest.raises(ValueError):
        aggregate([], CFG)


def test_rate_identity_on_real_episodes():
    report = evaluate("gt-orca", CFG, 30, base_seed=100)
    non_timeout = report.episode_count - report.timeout_count
    if non_timeout:
        total = report.success_rate * non_timeout + report.collision_rate * non_timeout
        assert total == pytest.approx(non_timeout)


def test_straight_run_path_length():
    cfg = dataclasses.replace(CFG, scenario=dataclasses.replace(CFG.scenario, human_count=1))

    def dash(world, cfg_):
        return VelocityCommand((2.0 if world.robot.position[0] < 0 else -2.0, 0.0))

    record = run_episode(dash, cfg, seed=12)
    traveled = sum(
        math.hypot(b.robot_position[0] - a.robot_position[0], b.robot_position[1] - a.robot_position[1])
        for a, b in zip(record.steps, record.steps[1:])
    )
    # path_length sums per-step displacements, including the first step
    assert record.path_length >= traveled


def test_evaluate_single_episode():
    report = evaluate("gt-orca", CFG, 1, base_seed=7)
    assert report.episode_count == 1


def test_evaluate_is_deterministic():
    a = evaluate("gt-orca", CFG, 10, base_seed=50)
    b = evaluate("gt-orca", CFG, 10, base_seed=50)
    assert report_to_json(a) == report_to_json(b)


def test_report_json_fixed_precision():
    report = evaluate("gt-orca", CFG, 5, base_seed=3)
    text = report_to_json(report)
    assert text.startswith('{"success_rate": ')
    for field in ("success_rate", "collision_rate", "discomfort_rate"):
        value = text.split(f'"{field}": ')[1].split(",")[0]
        if value != "null":
            assert len(value.split(".")[1]) == 6


def test_unknown_policy_name():
    with pytest.raises(ValueError):
        make_policy("rvo")
