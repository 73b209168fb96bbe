"""Client side of the simulator's line-delimited JSON stepping protocol.

Talks to `pascrowd serve` over a spawned stdio subprocess or a TCP address;
decodes the base64 grid payloads into numpy byte arrays (0 free, 1
occupied, 2 unknown).
"""
from __future__ import annotations

import base64
import json
import shlex
import socket
import subprocess
import sys
from collections import deque
from dataclasses import dataclass

import numpy as np

from .config import GRID_H, GRID_W, HISTORY_LEN

DEFAULT_SERVE_CMD = f"{sys.executable} -m pascrowd.cli serve --transport stdio"


class ProtocolError(RuntimeError):
    """The simulator replied with an error or something unparseable."""


def decode_grid(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload.encode("ascii"))
    if len(raw) != GRID_H * GRID_W:
        raise ProtocolError(f"grid payload holds {len(raw)} bytes")
    return np.frombuffer(raw, dtype=np.uint8).reshape(GRID_H, GRID_W).copy()


@dataclass
class SimState:
    step: int
    robot: tuple[float, float, float, float]
    goal: tuple[float, float]
    done: bool
    obs: np.ndarray
    gt: np.ndarray | None
    reward: float = 0.0
    event: str = ""

    @property
    def robot_state(self) -> np.ndarray:
        """Policy input: position relative to the goal plus velocity."""
        x, y, vx, vy = self.robot
        gx, gy = self.goal
        return np.array([x - gx, y - gy, vx, vy], dtype=np.float32)


def _parse_state(message: dict) -> SimState:
    return SimState(
        step=int(message["step"]),
        robot=tuple(float(v) for v in message["robot"]),
        goal=tuple(float(v) for v in message["goal"]),
        done=bool(message["done"]),
        obs=decode_grid(message["obs"]),
        gt=decode_grid(message["gt"]) if "gt" in message else None,
        reward=float(message.get("reward", 0.0)),
        event=str(message.get("event", "")),
    )


class SimulatorClient:
    """One protocol session against one serve process or TCP endpoint."""

    def __init__(self, sim: str | None = None, config_path: str | None = None):
        self._proc = None
        self._sock = None
        sim = sim or DEFAULT_SERVE_CMD
        if sim.startswith("tcp:"):
            host, port = sim[4:].rsplit(":", 1)
            self._sock = socket.create_connection((host, int(port)), timeout=60)
            stream = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._reader = self._writer = stream
        else:
            cmd = shlex.split(sim)
            if config_path:
                cmd += ["--config", config_path]
            self._proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
            self._reader = self._proc.stdout
            self._writer = self._proc.stdin

    def _round_trip(self, message: dict) -> dict:
        self._writer.write(json.dumps(message) + "\n")
        self._writer.flush()
        line = self._reader.readline()
        if not line:
            raise ProtocolError("simulator closed the connection")
        reply = json.loads(line)
        if reply.get("type") == "error":
            raise ProtocolError(f"{reply.get('code')}: {reply.get('detail')}")
        return reply

    def reset(self, seed: int, mode: str = "eval") -> SimState:
        reply = self._round_trip({"type": "reset", "seed": seed, "mode": mode})
        if reply.get("type") != "obs":
            raise ProtocolError(f"expected obs, got {reply.get('type')}")
        return _parse_state(reply)

    def step(self, action) -> SimState:
        reply = self._round_trip({"type": "step", "action": [float(action[0]), float(action[1])]})
        if reply.get("type") != "transition":
            raise ProtocolError(f"expected transition, got {reply.get('type')}")
        return _parse_state(reply)

    def close(self) -> None:
        try:
            if self._writer and not (self._proc and self._proc.poll() is not None):
                self._writer.write(json.dumps({"type": "close"}) + "\n")
                self._writer.flush()
        except (BrokenPipeError, OSError):
            pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class FrameHistory:
    """Rolling window of the last four frames, seeded by repetition."""

    def __init__(self, first: np.ndarray):
        self._frames = deque([first] * HISTORY_LEN, maxlen=HISTORY_LEN)

    def push(self, frame: np.ndarray) -> None:
        self._frames.append(frame)

    def stacked(self) -> np.ndarray:
        """(4, H, W) byte array, oldest first."""
        return np.stack(list(self._frames), axis=0)
