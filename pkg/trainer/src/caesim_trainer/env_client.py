"""Client for the simulator's env-server protocol.

The server speaks newline-delimited JSON over stdin/stdout, one request
per line and one reply per request:

    {"cmd": "reset", "seed": 7}   -> {"obs": [...]}
    {"cmd": "step", "action": a}  -> {"obs": [...], "reward": r,
                                      "info": {"cae": .., "cost": .., "z": ..}}
    {"cmd": "close"}              -> {"ok": true}

Observations are 1-based (true state, estimate) pairs, one per source,
optionally followed by the normalised queue backlog.
"""

from __future__ import annotations

import json
import shlex
import subprocess


class ProtocolError(RuntimeError):
    """The env-server replied with an error or closed unexpectedly."""


class EnvClient:
    """One synchronous session against a spawned env-server process."""

    def __init__(self, command: str | list[str], record_transcript: bool = False):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(
            args,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.transcript: list[tuple[str, str]] | None = [] if record_transcript else None

    def request(self, message: dict) -> dict:
        line = json.dumps(message)
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        reply_line = self.proc.stdout.readline()
        if not reply_line:
            raise ProtocolError("env-server closed the connection")
        if self.transcript is not None:
            self.transcript.append((line, reply_line))
        reply = json.loads(reply_line)
        if "error" in reply:
            raise ProtocolError(reply["error"])
        return reply

    def reset(self, seed: int) -> list:
        return self.request({"cmd": "reset", "seed": int(seed)})["obs"]

    def step(self, action: int) -> tuple[list, float, dict]:
        reply = self.request({"cmd": "step", "action": int(action)})
        return reply["obs"], float(reply["reward"]), reply["info"]

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.request({"cmd": "close"})
            except (ProtocolError, BrokenPipeError, OSError):
                pass
        if self.proc.stdin and not self.proc.stdin.closed:
            self.proc.stdin.close()
        try:
            self.proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()

    def __enter__(self) -> "EnvClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
