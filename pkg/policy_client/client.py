#!/usr/bin/env python3
"""Reference external-policy client for the guard engine, wire protocol v1.

The engine launches this as a child process and exchanges one JSON object
per line over stdin/stdout:

    {"type": "hello", "version": "1"}            -> same hello back
    {"type": "decide", "history": [...],
     "prompt_suffix": "..."?}                    -> {"type": "decision",
                                                     "scores": {<all 8>}}
    {"type": "shutdown"}                         -> process exits 0

The decision logic is a deliberate stub: it reacts to the revision prompt,
not to the scene, so the file doubles as protocol documentation.  A real
integration replaces decide() with model inference and keeps the loop.

Malformed input never kills the process; it answers
{"type": "error", "reason": ...} and keeps serving.
"""

from __future__ import annotations

import json
import sys

PROTOCOL_VERSION = "1"

ACTIONS = (
    "Stop",
    "Decelerate",
    "KeepSpeed",
    "Accelerate",
    "TurnLeft",
    "TurnRight",
    "LaneChangeLeft",
    "LaneChangeRight",
)


class ClientState:
    """Per-session protocol state: hello handshake done, steps served."""

    def __init__(self) -> None:
        self.negotiated: str | None = None
        self.steps_served = 0


def decide(history: list, prompt_suffix: str | None) -> dict[str, float]:
    """Stub policy: slow down when the prompt demands it, else cruise."""
    scores = {action: 0.05 for action in ACTIONS}
    text = (prompt_suffix or "").lower()
    if "stop" in text and "decelerate" in text:
        scores["Decelerate"] = 1.0
        scores["Stop"] = 0.8
    else:
        scores["KeepSpeed"] = 1.0
    return scores


def handle(message: dict, state: ClientState) -> dict | None:
    """One reply per request; None means exit the loop."""
    kind = message.get("type")
    if kind == "hello":
        state.negotiated = PROTOCOL_VERSION
        return {"type": "hello", "version": PROTOCOL_VERSION}
    if kind == "shutdown":
        return None
    if kind == "decide":
        if state.negotiated is None:
            return {"type": "error", "reason": "decide before hello"}
        history = message.get("history")
        if not isinstance(history, list) or not history:
            return {"type": "error", "reason": "decide needs a non-empty history"}
        state.steps_served += 1
        return {
            "type": "decision",
            "scores": decide(history, message.get("prompt_suffix")),
            "step": state.steps_served,
        }
    return {"type": "error", "reason": f"unknown message type {kind!r}"}


def serve_stdio() -> int:
    state = ClientState()
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            message = json.loads(line)
            if not isinstance(message, dict):
                raise ValueError("message must be a JSON object")
        except ValueError as exc:
            reply = {"type": "error", "reason": f"malformed input: {exc}"}
            print(json.dumps(reply), flush=True)
            continue
        reply = handle(message, state)
        if reply is None:
            return 0
        print(json.dumps(reply), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(serve_stdio())
