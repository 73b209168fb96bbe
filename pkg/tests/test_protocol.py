import base64
import dataclasses
import io
import json
import socket
import threading

import numpy as np
import pytest

from pascrowd.config import config_hash, default_config
from pascrowd.harness import gt_orca_policy, run_episode
from pascrowd.ogm import CellClass, GridSpec, OccupancyGrid
from pascrowd.protocol import (
    GridPayloadError,
    RolloutFormatError,
    RolloutHashError,
    RolloutHeader,
    RolloutStep,
    RolloutTruncatedError,
    RolloutVersionError,
    RolloutWriter,
    Session,
    TcpServer,
    decode_grid,
    encode_grid,
    make_frame_sink,
    read_rollout,
    serve_stdio,
    write_rollout,
)
from pascrowd.world import VelocityCommand, sample_scenario, step_world

CFG = default_config()
SPEC = GridSpec(center=(0.0, 0.0))


def _random_grid(rng, spec=SPEC):
    cells = rng.integers(0, 3, size=(spec.height_cells, spec.width_cells)).astype(np.uint8)
    return OccupancyGrid(spec=spec, cells=cells)


# ---------- grid payloads ----------


def test_all_free_grid_encodes_to_zero_bytes():
    grid = OccupancyGrid(spec=SPEC, cells=np.zeros((100, 100), dtype=np.uint8))
    raw = base64.b64decode(encode_grid(grid))
    assert raw == bytes(10_000)


def test_grid_round_trip_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        grid = _random_grid(rng)
        assert decode_grid(encode_grid(grid), SPEC) == grid


def test_decode_rejects_bad_byte():
    raw = bytearray(10_000)
    raw[5] = 3
    payload = base64.b64encode(bytes(raw)).decode()
    with pytest.raises(GridPayloadError):
        decode_grid(payload, SPEC)


def test_decode_rejects_wrong_length():
    payload = base64.b64encode(bytes(9_999)).decode()
    with pytest.raises(GridPayloadError):
        decode_grid(payload, SPEC)


# ---------- rollout files ----------


def _steps(rng, n=3, with_gt=False):
    out = []
    for i in range(n):
        out.append(
            RolloutStep(
                step=i,
                robot=tuple(float(v) for v in rng.uniform(-5, 5, 4)),
                action=tuple(float(v) for v in rng.uniform(-2, 2, 2)),
                reward=float(rng.uniform(-5, 10)),
                done=(i == n - 1),
                event="none" if i < n - 1 else "success",
                obs=encode_grid(_random_grid(rng)),
                gt=encode_grid(_random_grid(rng)) if with_gt else None,
            )
        )
    return out


def test_rollout_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    steps = _steps(rng, 3, with_gt=True)
    path = tmp_path / "ep.ndjson"
    write_rollout(path, steps, 100, 100, 0.25, "cafe01234567")
    header, loaded = read_rollout(path)
    assert header == RolloutHeader(100, 100, 0.25, "cafe01234567")
    assert loaded == steps


def test_rollout_version_error(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text("PASROLL 2 100 100 0.25 cafe01234567\n")
    with pytest.raises(RolloutVersionError):
        read_rollout(path)


def test_rollout_magic_error(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text("NOTROLL 1 100 100 0.25 cafe01234567\n")
    with pytest.raises(RolloutFormatError):
        read_rollout(path)


def test_rollout_hash_error(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "ep.ndjson"
    write_rollout(path, _steps(rng, 1), 100, 100, 0.25, "cafe01234567")
    with pytest.raises(RolloutHashError):
        read_rollout(path, expected_hash="deadbeef0000")


def test_rollout_truncated_line_error(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "ep.ndjson"
    write_rollout(path, _steps(rng, 2), 100, 100, 0.25, "cafe01234567")
    text = path.read_text()
    path.write_text(text[: len(text) // 2])  # cut mid-line
    with pytest.raises(RolloutTruncatedError):
        read_rollout(path)


# ---------- session state machine ----------


def _send(session, message):
    replies = session.handle_raw(json.dumps(message))
    return [json.loads(r) for r in replies]


def test_reset_eval_has_no_gt():
    session = Session(CFG)
    (obs,) = _send(session, {"type": "reset", "seed": 7, "mode": "eval"})
    assert obs["type"] == "obs"
    assert obs["step"] == 0
    assert "gt" not in obs
    assert obs["done"] is False
    decode_grid(obs["obs"], CFG.grid)  # payload is a valid grid


def test_reset_train_includes_gt():
    session = Session(CFG)
    (obs,) = _send(session, {"type": "reset", "seed": 7, "mode": "train"})
    assert "gt" in obs
    decode_grid(obs["gt"], CFG.grid)


def test_step_before_reset_is_protocol_error():
    session = Session(CFG)
    (err,) = _send(session, {"type": "step", "action": [0.0, 0.0]})
    assert err["type"] == "error" and err["code"] == "protocol"


def test_malformed_json_gets_error_reply():
    session = Session(CFG)
    (err,) = [json.loads(r) for r in session.handle_raw("{not json")]
    assert err["type"] == "error" and err["code"] == "malformed"


def test_unknown_type_gets_error_reply():
    session = Session(CFG)
    (err,) = _send(session, {"type": "warp", "seed": 1})
    assert err["type"] == "error" and err["code"] == "protocol"


def test_reset_mid_episode_is_protocol_error():
    session = Session(CFG)
    _send(session, {"type": "reset", "seed": 7, "mode": "eval"})
    (err,) = _send(session, {"type": "reset", "seed": 8, "mode": "eval"})
    assert err["code"] == "protocol"


def test_bad_action_is_malformed():
    session = Session(CFG)
    _send(session, {"type": "reset", "seed": 7, "mode": "eval"})
    for action in ([0.0], "fast", [0.0, "x"], [float("nan"), 0.0]):
        (err,) = _send(session, {"type": "step", "action": action})
        assert err["code"] == "malformed"


def test_oversized_message_is_malformed():
    session = Session(CFG)
    big = json.dumps({"type": "reset", "seed": 1, "mode": "eval", "pad": "x" * (1 << 20)})
    (err,) = [json.loads(r) for r in session.handle_raw(big)]
    assert err["code"] == "malformed"


def test_session_survives_errors_and_runs_episode():
    session = Session(CFG)
    _send(session, {"type": "step", "action": [0.0, 0.0]})  # error, session alive
    (obs,) = _send(session, {"type": "reset", "seed": 3, "mode": "eval"})
    done = obs["done"]
    steps = 0
    while not done:
        (tr,) = _send(session, {"type": "step", "action": [0.0, 0.0]})
        assert tr["type"] == "transition"
        assert {"reward", "done", "event", "obs"} <= set(tr)
        done = tr["done"]
        steps += 1
    assert steps == CFG.scenario.max_steps
    (err,) = _send(session, {"type": "step", "action": [0.0, 0.0]})
    assert err["code"] == "protocol"  # after done only reset/close
    (obs2,) = _send(session, {"type": "reset", "seed": 4, "mode": "eval"})
    assert obs2["type"] == "obs"


def test_session_close_writes_report(tmp_path):
    report_path = tmp_path / "report.json"
    session = Session(CFG, report_path=report_path)
    (obs,) = _send(session, {"type": "reset", "seed": 3, "mode": "eval"})
    done = obs["done"]
    while not done:
        (tr,) = _send(session, {"type": "step", "action": [1.0, 0.0]})
        done = tr["done"]
    assert _send(session, {"type": "close"}) == []
    data = json.loads(report_path.read_text())
    assert data["episode_count"] == 1


# ---------- wire vs in-process ----------


def _drive_episode_over_wire(session, seed, mode, cfg):
    """Scripted client: mirrors the world locally to compute the same
    omniscient avoidance commands the in-process policy would."""
    (obs,) = _send(session, {"type": "reset", "seed": seed, "mode": mode})
    mirror = sample_scenario(cfg.scenario, seed)
    done = obs["done"]
    rewards = []
    while not done:
        cmd = gt_orca_policy(mirror, cfg)
        (tr,) = _send(session, {"type": "step", "action": list(cmd.desired_velocity)})
        mirror = step_world(mirror, cmd, cfg.scenario.dt, cfg.orca)
        assert tr["robot"] == [
            mirror.robot.position[0],
            mirror.robot.position[1],
            mirror.robot.velocity[0],
            mirror.robot.velocity[1],
        ]
        rewards.append(tr["reward"])
        done = tr["done"]
    return rewards


def test_wire_episode_matches_in_process_byte_for_byte(tmp_path):
    seed = 7
    in_proc = tmp_path / "in_process.ndjson"
    writer = RolloutWriter(
        in_proc, RolloutHeader(100, 100, CFG.scenario.dt, config_hash(CFG))
    )
    record = run_episode("gt-orca", CFG, seed, train_mode=True, frame_sink=make_frame_sink(writer))
    writer.close()

    wire_dir = tmp_path / "wire"
    session = Session(CFG, record_dir=wire_dir)
    rewards = _drive_episode_over_wire(session, seed, "train", CFG)
    _send(session, {"type": "close"})

    (wire_file,) = sorted(wire_dir.iterdir())
    assert wire_file.read_bytes() == in_proc.read_bytes()
    assert rewards == [s.reward for s in record.steps]


# ---------- transports ----------


def test_serve_stdio_round_trip(tmp_path):
    lines = [
        json.dumps({"type": "reset", "seed": 5, "mode": "eval"}),
        json.dumps({"type": "step", "action": [0.5, 0.5]}),
        json.dumps({"type": "close"}),
    ]
    out = io.StringIO()
    session = serve_stdio(CFG, in_stream=io.StringIO("\n".join(lines) + "\n"), out_stream=out)
    replies = [json.loads(l) for l in out.getvalue().splitlines()]
    assert replies[0]["type"] == "obs"
    assert replies[1]["type"] == "transition"
    assert session.closed


def test_serve_tcp_round_trip():
    server = TcpServer(("127.0.0.1", 0), CFG)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        with socket.create_connection(("127.0.0.1", port), timeout=10) as conn:
            handle = conn.makefile("rw", encoding="utf-8", newline="\n")
            handle.write(json.dumps({"type": "reset", "seed": 5, "mode": "eval"}) + "\n")
            handle.flush()
            obs = json.loads(handle.readline())
            assert obs["type"] == "obs"
            handle.write(json.dumps({"type": "step", "action": [0.5, 0.0]}) + "\n")
            handle.flush()
            tr = json.loads(handle.readline())
            assert tr["type"] == "transition"
            handle.write(json.dumps({"type": "close"}) + "\n")
            handle.flush()
    finally:
        server.shutdown()
        thread.join(timeout=5)
