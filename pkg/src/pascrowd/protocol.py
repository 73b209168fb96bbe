"""Wire protocol and rollout persistence.

Newline-delimited JSON on the wire, base64 row-major byte grids inside.
One session handles one episode at a time: reset -> obs, then step ->
transition until done, then reset again or close. Malformed or
out-of-order input gets an error reply and the session stays alive; only
close (or transport EOF) ends it.

Rollout files start with `PASROLL 1 <H> <W> <dt> <config-hash>` and carry
one JSON line per applied step; the hash binds the file to the exact
configuration that produced it.
"""
from __future__ import annotations

import base64
import json
import math
import socketserver
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SimConfig, config_hash
from .harness import EpisodeEngine, EvalReport, aggregate, report_to_json
from .ogm import GridSpec, OccupancyGrid
from .world import VelocityCommand

ROLLOUT_MAGIC = "PASROLL"
ROLLOUT_VERSION = 1
MAX_MESSAGE_BYTES = 1 << 20

GRID_BYTE_VALUES = frozenset((0, 1, 2))


class GridPayloadError(ValueError):
    """Payload does not decode to a valid grid."""


class RolloutError(Exception):
    pass


class RolloutFormatError(RolloutError):
    """Header is not a rollout header."""


class RolloutVersionError(RolloutError):
    """Header carries an unsupported version."""


class RolloutHashError(RolloutError):
    """Rollout was produced under a different configuration."""


class RolloutTruncatedError(RolloutError):
    """A step line is incomplete or unparseable."""


# ---------- grid payloads ----------


def encode_grid(grid: OccupancyGrid) -> str:
    return base64.b64encode(np.ascontiguousarray(grid.cells).tobytes()).decode("ascii")


def decode_grid(payload: str, spec: GridSpec) -> OccupancyGrid:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
    except Exception as exc:
        raise GridPayloadError(f"invalid base64 payload: {exc}") from exc
    expected = spec.height_cells * spec.width_cells
    if len(raw) != expected:
        raise GridPayloadError(f"payload holds {len(raw)} bytes, expected {expected}")
    cells = np.frombuffer(raw, dtype=np.uint8).copy()
    bad = set(np.unique(cells)) - GRID_BYTE_VALUES
    if bad:
        raise GridPayloadError(f"payload contains invalid byte values {sorted(bad)}")
    return OccupancyGrid(spec=spec, cells=cells.reshape(spec.height_cells, spec.width_cells))


# ---------- rollout files ----------


@dataclass(frozen=True)
class RolloutStep:
    step: int
    robot: tuple[float, float, float, float]
    action: tuple[float, float]
    reward: float
    done: bool
    event: str
    obs: str
    gt: str | None = None


@dataclass(frozen=True)
class RolloutHeader:
    height: int
    width: int
    dt: float
    config_hash: str


def _header_line(header: RolloutHeader) -> str:
    return (
        f"{ROLLOUT_MAGIC} {ROLLOUT_VERSION} {header.height} {header.width} "
        f"{header.dt!r} {header.config_hash}"
    )


def _step_line(step: RolloutStep) -> str:
    payload = {
        "step": step.step,
        "robot": list(step.robot),
        "action": list(step.action),
        "reward": step.reward,
        "done": step.done,
        "event": step.event,
        "obs": step.obs,
    }
    if step.gt is not None:
        payload["gt"] = step.gt
    return json.dumps(payload, separators=(",", ":"))


def _parse_header(line: str) -> RolloutHeader:
    parts = line.strip().split()
    if not parts or parts[0] != ROLLOUT_MAGIC:
        raise RolloutFormatError(f"not a rollout header: {line!r}")
    if len(parts) != 6:
        raise RolloutFormatError(f"malformed rollout header: {line!r}")
    if parts[1] != str(ROLLOUT_VERSION):
        raise RolloutVersionError(f"unsupported rollout version {parts[1]!r}")
    return RolloutHeader(
        height=int(parts[2]), width=int(parts[3]), dt=float(parts[4]), config_hash=parts[5]
    )


def _parse_step(line: str, line_no: int) -> RolloutStep:
    try:
        data = json.loads(line)
        return RolloutStep(
            step=int(data["step"]),
            robot=tuple(float(v) for v in data["robot"]),
            action=tuple(float(v) for v in data["action"]),
            reward=float(data["reward"]),
            done=bool(data["done"]),
            event=str(data["event"]),
            obs=str(data["obs"]),
            gt=str(data["gt"]) if "gt" in data else None,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise RolloutTruncatedError(f"bad step line {line_no}: {exc}") from exc


class RolloutWriter:
    """Append-only rollout sink; the header goes out before any step."""

    def __init__(self, path: str | Path, header: RolloutHeader):
        self.path = Path(path)
        self.header = header
        self._handle = open(self.path, "w", encoding="utf-8", newline="\n")
        self._handle.write(_header_line(header) + "\n")
        self._handle.flush()

    def append(self, step: RolloutStep) -> None:
        self._handle.write(_step_line(step) + "\n")
        self._handle.flush()

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()


def write_rollout(
    path: str | Path, steps, height: int, width: int, dt: float, cfg_hash: str
) -> None:
    writer = RolloutWriter(path, RolloutHeader(height, width, dt, cfg_hash))
    try:
        for step in steps:
            writer.append(step)
    finally:
        writer.close()


def read_rollout(
    path: str | Path, expected_hash: str | None = None
) -> tuple[RolloutHeader, list[RolloutStep]]:
    with open(path, "r", encoding="utf-8") as handle:
        first = handle.readline()
        if not first:
            raise RolloutFormatError("empty rollout file")
        header = _parse_header(first)
        if expected_hash is not None and header.config_hash != expected_hash:
            raise RolloutHashError(
                f"rollout bound to config {header.config_hash}, expected {expected_hash}"
            )
        steps = []
        for line_no, line in enumerate(handle, start=2):
            if not line.endswith("\n"):
                raise RolloutTruncatedError(f"step line {line_no} lacks a newline")
            steps.append(_parse_step(line, line_no))
    return header, steps


def make_frame_sink(writer: RolloutWriter):
    """Adapter from the episode engine's per-step callback to rollout lines."""

    def sink(step, robot, action, reward, done, event, obs_grid, gt_grid):
        writer.append(
            RolloutStep(
                step=step,
                robot=robot,
                action=action,
                reward=reward,
                done=done,
                event=event,
                obs=encode_grid(obs_grid),
                gt=encode_grid(gt_grid) if gt_grid is not None else None,
            )
        )

    return sink


# ---------- wire session ----------


def _error(code: str, detail: str) -> dict:
    return {"type": "error", "code": code, "detail": detail}


def dumps_message(message: dict) -> str:
    line = json.dumps(message, separators=(",", ":"))
    if len(line.encode("utf-8")) + 1 > MAX_MESSAGE_BYTES:
        raise ValueError("outbound message exceeds the 1 MiB limit")
    return line


class Session:
    """Per-connection protocol state machine.

    Feed raw lines in, get reply lines out. The session aggregates each
    completed episode; `end()` flushes the report and counts an unfinished
    episode as aborted (excluded from metrics).
    """

    def __init__(
        self,
        cfg: SimConfig,
        record_dir: str | Path | None = None,
        report_path: str | Path | None = None,
    ):
        cfg.validate()
        self.cfg = cfg
        self.cfg_hash = config_hash(cfg)
        self.record_dir = Path(record_dir) if record_dir is not None else None
        self.report_path = Path(report_path) if report_path is not None else None
        self.engine: EpisodeEngine | None = None
        self.mode: str | None = None
        self.completed = []
        self.aborted_episodes = 0
        self.closed = False
        self._episode_index = 0
        self._writer: RolloutWriter | None = None
        if self.record_dir is not None:
            self.record_dir.mkdir(parents=True, exist_ok=True)

    # -- transport facing --

    def handle_raw(self, line: str) -> list[str]:
        if len(line.encode("utf-8")) > MAX_MESSAGE_BYTES:
            return [dumps_message(_error("malformed", "message exceeds the 1 MiB limit"))]
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            return [dumps_message(_error("malformed", f"invalid JSON: {exc}"))]
        return [dumps_message(reply) for reply in self.handle(message)]

    # -- message dispatch --

    def handle(self, message) -> list[dict]:
        if not isinstance(message, dict) or "type" not in message:
            return [_error("malformed", "message must be an object with a 'type' field")]
        kind = message["type"]
        if kind == "reset":
            return self._on_reset(message)
        if kind == "step":
            return self._on_step(message)
        if kind == "close":
            return self._on_close()
        return [_error("protocol", f"unknown message type {kind!r}")]

    def _on_reset(self, message: dict) -> list[dict]:
        if self.engine is not None and not self.engine.done:
            return [_error("protocol", "reset while an episode is in progress")]
        seed = message.get("seed")
        mode = message.get("mode")
        if not isinstance(seed, int) or isinstance(seed, bool):
            return [_error("malformed", "reset needs an integer 'seed'")]
        if mode not in ("train", "eval"):
            return [_error("malformed", "reset needs 'mode' of 'train' or 'eval'")]

        self._finish_writer()
        self.mode = mode
        sink = None
        if self.record_dir is not None:
            path = self.record_dir / f"rollout_{self._episode_index:05d}_seed{seed}.ndjson"
            self._writer = RolloutWriter(
                path,
                RolloutHeader(
                    height=self.cfg.grid.height_cells,
                    width=self.cfg.grid.width_cells,
                    dt=self.cfg.scenario.dt,
                    config_hash=self.cfg_hash,
                ),
            )
            sink = make_frame_sink(self._writer)
        self._episode_index += 1
        self.engine = EpisodeEngine(
            self.cfg, seed, train_mode=(mode == "train"), frame_sink=sink
        )
        if self.engine.done:  # spawned on the goal: terminal before any step
            self._record_completed()
        return [self._state_message("obs")]

    def _on_step(self, message: dict) -> list[dict]:
        if self.engine is None:
            return [_error("protocol", "step before reset")]
        if self.engine.done:
            return [_error("protocol", "episode finished; only reset or close accepted")]
        action = message.get("action")
        if (
            not isinstance(action, (list, tuple))
            or len(action) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in action)
            or not all(math.isfinite(float(v)) for v in action)
        ):
            return [_error("malformed", "step needs 'action' = [vx, vy] finite numbers")]

        result = self.engine.apply(VelocityCommand((float(action[0]), float(action[1]))))
        if result.done:
            self._record_completed()
        reply = self._state_message("transition")
        reply["reward"] = result.reward
        reply["event"] = result.event
        return [reply]

    def _on_close(self) -> list[dict]:
        self.closed = True
        self.end()
        return []

    # -- helpers --

    def _state_message(self, kind: str) -> dict:
        engine = self.engine
        obs, gt = engine.observation()
        robot = engine.world.robot
        message = {
            "type": kind,
            "step": engine.world.step_index,
            "robot": [robot.position[0], robot.position[1], robot.velocity[0], robot.velocity[1]],
            "goal": [robot.goal[0], robot.goal[1]],
            "done": engine.done,
            "obs": encode_grid(obs),
        }
        if gt is not None:
            message["gt"] = encode_grid(gt)
        return message

    def _record_completed(self) -> None:
        self.completed.append(self.engine.record())
        self._finish_writer()

    def _finish_writer(self) -> None:
        if self._writer is not None:
            self._writer.close()
            self._writer = None

    def end(self) -> None:
        """Flush state at session end (close message or transport EOF)."""
        if self.engine is not None and not self.engine.done:
            self.aborted_episodes += 1
            self.engine = None
        self._finish_writer()
        if self.report_path is not None:
            if self.completed:
                report = aggregate(self.completed, self.cfg)
            else:
                report = EvalReport(None, None, None, None, None, 0, 0)
            self.report_path.write_text(report_to_json(report) + "\n", encoding="utf-8")
            self.report_path = None  # write once


# ---------- transports ----------


def serve_stdio(
    cfg: SimConfig,
    record_dir=None,
    report_path=None,
    in_stream=None,
    out_stream=None,
) -> Session:
    """Serve one session over line-delimited stdio; returns the ended session."""
    in_stream = in_stream if in_stream is not None else sys.stdin
    out_stream = out_stream if out_stream is not None else sys.stdout
    session = Session(cfg, record_dir=record_dir, report_path=report_path)
    for line in in_stream:
        if not line.strip():
            continue
        for reply in session.handle_raw(line):
            out_stream.write(reply + "\n")
        out_stream.flush()
        if session.closed:
            break
    session.end()
    return session


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server = self.server
        session = Session(
            server.sim_config, record_dir=server.record_dir, report_path=server.report_path
        )
        try:
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if not line.strip():
                    continue
                for reply in session.handle_raw(line):
                    self.wfile.write((reply + "\n").encode("utf-8"))
                self.wfile.flush()
                if session.closed:
                    break
        finally:
            session.end()


class TcpServer(socketserver.ThreadingTCPServer):
    """One independent session per connection."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, cfg: SimConfig, record_dir=None, report_path=None):
        super().__init__(address, _TcpHandler)
        self.sim_config = cfg
        self.record_dir = record_dir
        self.report_path = report_path


def serve_tcp(cfg: SimConfig, port: int, host: str = "127.0.0.1", record_dir=None, report_path=None):
    server = TcpServer((host, port), cfg, record_dir=record_dir, report_path=report_path)
    with server:
        server.serve_forever()
