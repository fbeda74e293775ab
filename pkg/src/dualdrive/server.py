"""Live-session server: bridges a realtime episode to one websocket client.

In play mode the connected client drives the first opponent vehicle (latest
control message wins) and can type instructions that feed the slow system's
next prompt.  Frames go out once per environment tick (10 Hz); the session
survives a disconnect by reverting the opponent to its own decision model.

``replay`` streams a previously recorded trajectory CSV at its original
cadence without running any simulation.
"""

from __future__ import annotations

import asyncio
import json
import math
from pathlib import Path
from typing import Optional

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from dualdrive.actor import MemoryStore
from dualdrive.core import Instruction
from dualdrive.runtime import EpisodeResult, LiveSession, RunConfig

CONTROL_MIN = -3.0
CONTROL_MAX = 2.0


class ReplayError(ValueError):
    """A trajectory CSV row could not be parsed."""


def _clamp_control(accel: float) -> float:
    return min(max(accel, CONTROL_MIN), CONTROL_MAX)


class _SessionLog:
    def __init__(self, path):
        self._fh = open(path, "w", encoding="utf-8") if path else None
        self._records_flushed = 0

    def write(self, event: dict) -> None:
        if self._fh is None:
            return
        self._fh.write(json.dumps(event) + "\n")
        self._fh.flush()

    def flush_reasoner(self, session: LiveSession) -> None:
        records = session.core.reasoner_records
        while self._records_flushed < len(records):
            record = records[self._records_flushed]
            self.write({
                "event": "prompt",
                "t": record.t,
                "instruction": record.instruction,
                "text": record.prompt_text,
                "ehmi": record.output.ehmi,
                "style": record.output.style.value,
            })
            self._records_flushed += 1

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


async def _client_receiver(ws, session: LiveSession, log: _SessionLog) -> None:
    async for message in ws:
        try:
            payload = json.loads(message)
        except json.JSONDecodeError:
            await ws.send(json.dumps({"error": "invalid JSON"}))
            continue
        kind = payload.get("type")
        if kind == "control":
            accel = _clamp_control(float(payload.get("accel", 0.0)))
            session.board.set_control(accel)
        elif kind == "instruction":
            text = str(payload.get("text", ""))
            instruction = Instruction(text=text, issued_at=session.core.world.t,
                                      source="client")
            session.board.push_instruction(instruction)
            log.write({"event": "instruction", "t": instruction.issued_at, "text": text})
        else:
            await ws.send(json.dumps({"error": "unknown type"}))


async def serve_session(cfg: RunConfig, store: Optional[MemoryStore], port: int,
                        seed: int = 0, log_path=None, on_listening=None,
                        on_disconnect: str = "continue") -> Optional[EpisodeResult]:
    """Run one episode against one websocket client; returns its result.

    The episode starts on the first connection.  By default a disconnect
    reverts the opponent to its own decision model and the episode completes
    headless; ``on_disconnect="stop"`` aborts it instead (used by tests).
    """
    loop = asyncio.get_running_loop()
    frames: asyncio.Queue = asyncio.Queue()
    log = _SessionLog(log_path)
    done = asyncio.Event()
    holder: dict = {}

    def frame_sink(frame: dict) -> None:
        loop.call_soon_threadsafe(frames.put_nowait, frame)

    async def handler(ws):
        if "session" in holder:
            await ws.close(1013, "session already has a client")
            return
        session = LiveSession(cfg, store, seed, frame_sink=frame_sink)
        holder["session"] = session
        session.start()
        log.write({"event": "session_start", "seed": seed,
                   "scenario": cfg.scenario.value})
        receiver = asyncio.ensure_future(_client_receiver(ws, session, log))
        try:
            while True:
                frame = await frames.get()
                await ws.send(json.dumps(frame))
                log.flush_reasoner(session)
                if "outcome" in frame:
                    break
        except ConnectionClosed:
            session.board.set_control(None)
            log.write({"event": "client_disconnected"})
            if on_disconnect == "stop":
                session.stop()
        finally:
            receiver.cancel()
            done.set()

    server = await serve(handler, "127.0.0.1", port)
    bound_port = server.sockets[0].getsockname()[1]
    if on_listening is not None:
        on_listening(bound_port)
    try:
        await done.wait()
    finally:
        session = holder.get("session")
        result = None
        if session is not None:
            await asyncio.get_running_loop().run_in_executor(None, session.join, 90.0)
            log.flush_reasoner(session)
            result = session.result()
            log.write({"event": "session_end", "outcome": result.outcome.value})
        log.close()
        server.close()
        await server.wait_closed()
    return result


def load_replay_frames(csv_path) -> list[dict]:
    """Group a trajectory CSV into per-tick frames; raises on malformed rows."""
    path = Path(csv_path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",")[:3] != ["t", "vehicle_id", "role"]:
        raise ReplayError("row 1: missing trajectory header")
    by_t: dict[float, list[dict]] = {}
    order: list[float] = []
    last_pos: dict[int, tuple] = {}
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ReplayError(f"row {row_no}: expected 7 fields, got {len(parts)}")
        try:
            t = float(parts[0])
            vid = int(parts[1])
            role = parts[2]
            x, y, v = float(parts[3]), float(parts[4]), float(parts[5])
        except ValueError as exc:
            raise ReplayError(f"row {row_no}: {exc}") from None
        heading = 0.0
        if vid in last_pos:
            px, py = last_pos[vid]
            if (x - px, y - py) != (0.0, 0.0):
                heading = math.atan2(y - py, x - px)
        last_pos[vid] = (x, y)
        if t not in by_t:
            by_t[t] = []
            order.append(t)
        by_t[t].append({"id": vid, "role": role, "x": x, "y": y,
                        "heading": round(heading, 4), "v": v})
    frames = []
    for t in order:
        frames.append({
            "t": t, "vehicles": by_t[t], "ehmi": "", "style": "general",
            "intention": None, "metrics": {},
        })
    return frames


async def replay(csv_path, port: int, speed: float = 1.0,
                 on_listening=None) -> int:
    """Stream recorded frames to one client at the recorded cadence."""
    frames = load_replay_frames(csv_path)
    done = asyncio.Event()
    sent_count = 0

    async def handler(ws):
        nonlocal sent_count
        try:
            previous_t = None
            for frame in frames:
                if previous_t is not None:
                    await asyncio.sleep(max(frame["t"] - previous_t, 0.0) / speed)
                await ws.send(json.dumps(frame))
                sent_count += 1
                previous_t = frame["t"]
        except ConnectionClosed:
            pass
        finally:
            done.set()

    server = await serve(handler, "127.0.0.1", port)
    bound_port = server.sockets[0].getsockname()[1]
    if on_listening is not None:
        on_listening(bound_port)
    try:
        await done.wait()
    finally:
        server.close()
        await server.wait_closed()
    return sent_count
