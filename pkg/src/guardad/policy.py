"""Decision-policy abstraction and adapters.

The guard treats the driving policy as a black box mapping an observation
history (plus an optional prompt suffix) to a complete action distribution.
Three implementations ship:

* OraclePolicy  - replays a scenario's reference actions (always safe);
* FaultyPolicy  - oracle behavior, except that inside annotated hazard
                  windows it ignores the hazard with a seeded per-step
                  probability, and when prompted it complies with a seeded
                  probability;
* ExternalPolicy - drives an external process over a line-delimited JSON
                  stdio protocol (version "1").

Scripted policies draw per-event randomness from hash-derived streams, so a
fixed (seed, scenario) pair always yields the same decision sequence.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

from .scene import (
    ACTIONS,
    Action,
    ActionDistribution,
    Observation,
    serialize_observation,
)
from .seeding import stable_uniform

PROTOCOL_VERSION = "1"
DEFAULT_TIMEOUT = 5.0


class PolicyError(RuntimeError):
    """Base class for policy adapter failures; aborts the episode as OT."""


class ProtocolError(PolicyError):
    """External process sent a malformed or schema-violating message."""


class Timeout(PolicyError):
    """External process did not answer within the deadline."""


class VersionMismatch(PolicyError):
    """External process negotiated an unsupported protocol version."""


class LaunchError(PolicyError):
    """External process could not be started."""


@dataclass(frozen=True)
class PolicyRequest:
    """History of policy-visible observations (newest last) plus optional prompt."""

    history: tuple[Observation, ...]
    prompt_suffix: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.history:
            raise ValueError("request history must be non-empty")
        object.__setattr__(self, "history", tuple(self.history))

    @property
    def newest(self) -> Observation:
        return self.history[-1]


class PolicyVariant(Enum):
    ORACLE = "oracle"
    FAULTY = "faulty"
    EXTERNAL = "external"


@dataclass(frozen=True)
class PolicySpec:
    variant: PolicyVariant
    blind_rate: float = 0.0
    prompt_compliance: float = 0.0
    command: Optional[str] = None
    seed: int = 0
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if not 0.0 <= self.blind_rate <= 1.0:
            raise ValueError("blind_rate must be in [0, 1]")
        if not 0.0 <= self.prompt_compliance <= 1.0:
            raise ValueError("prompt_compliance must be in [0, 1]")
        if self.variant is PolicyVariant.EXTERNAL and not self.command:
            raise ValueError("external policies need a launch command")


def parse_policy_spec(text: str, default_seed: int = 0) -> PolicySpec:
    """Parse the CLI mini-syntax ``name:key=val,...``.

    Known keys: blind, comply, seed, cmd, timeout.
    """
    name, _, rest = text.partition(":")
    try:
        variant = PolicyVariant(name.strip())
    except ValueError:
        raise ValueError(f"unknown policy variant {name!r}") from None
    kwargs: dict[str, object] = {"seed": default_seed}
    if rest.strip():
        for pair in rest.split(","):
            key, sep, value = pair.partition("=")
            key = key.strip()
            if not sep:
                raise ValueError(f"malformed policy option {pair!r}")
            if key == "blind":
                kwargs["blind_rate"] = float(value)
            elif key == "comply":
                kwargs["prompt_compliance"] = float(value)
            elif key == "seed":
                kwargs["seed"] = int(value)
            elif key == "cmd":
                kwargs["command"] = value.strip()
            elif key == "timeout":
                kwargs["timeout"] = float(value)
            else:
                raise ValueError(f"unknown policy option {key!r}")
    return PolicySpec(variant=variant, **kwargs)


def decide(policy, request: PolicyRequest) -> ActionDistribution:
    """Dispatch a request to any policy object."""
    return policy.decide(request)


class OraclePolicy:
    """Replays the scenario's reference action with full confidence."""

    def __init__(self, reference_actions: Sequence[Action]):
        self._reference = tuple(reference_actions)

    def _reference_at(self, t: int) -> Action:
        if not 0 <= t < len(self._reference):
            raise PolicyError(f"no reference action for step {t}")
        return self._reference[t]

    def decide(self, request: PolicyRequest) -> ActionDistribution:
        return ActionDistribution.one_hot(self._reference_at(request.newest.t))


class FaultyPolicy(OraclePolicy):
    """Oracle with seeded hazard blindness and seeded prompt compliance.

    Inside a hazard window [onset, collision] the policy ignores the hazard
    with probability blind_rate, emitting the action it was taking right
    before onset.  When a prompt suffix is present it complies with
    probability prompt_compliance by reverting to reference behavior
    (which inside a hazard is a safe allowed action by construction).
    """

    def __init__(
        self,
        reference_actions: Sequence[Action],
        hazard_windows: Sequence[tuple[int, int]],
        blind_rate: float,
        prompt_compliance: float,
        seed: int,
        scenario_id: str,
    ):
        super().__init__(reference_actions)
        self._hazards = tuple(hazard_windows)
        self._pre_hazard = {
            onset: (self._reference[onset - 1] if onset > 0 else Action.KEEP_SPEED)
            for onset, _ in self._hazards
        }
        self.blind_rate = blind_rate
        self.prompt_compliance = prompt_compliance
        self.seed = seed
        self.scenario_id = scenario_id
        self._prompt_calls: dict[int, int] = {}

    def _enclosing_hazard(self, t: int) -> Optional[tuple[int, int]]:
        for onset, collision in self._hazards:
            if onset <= t <= collision:
                return onset, collision
        return None

    def is_blind_at(self, t: int) -> bool:
        """Deterministic per-step blindness draw (hazard steps only)."""
        if self._enclosing_hazard(t) is None:
            return False
        draw = stable_uniform("blind", self.seed, self.scenario_id, t)
        return draw < self.blind_rate

    def decide(self, request: PolicyRequest) -> ActionDistribution:
        t = request.newest.t
        if request.prompt_suffix is not None:
            attempt = self._prompt_calls.get(t, 0) + 1
            self._prompt_calls[t] = attempt
            draw = stable_uniform("comply", self.seed, self.scenario_id, t, attempt)
            if draw < self.prompt_compliance:
                return ActionDistribution.one_hot(self._reference_at(t))
        hazard = self._enclosing_hazard(t)
        if hazard is not None and self.is_blind_at(t):
            return ActionDistribution.one_hot(self._pre_hazard[hazard[0]])
        return ActionDistribution.one_hot(self._reference_at(t))


class _LineChannel:
    """Line-delimited byte IO over a child's pipes with a hard deadline."""

    def __init__(self, proc: subprocess.Popen):
        self._proc = proc
        self._buffer = b""

    def send(self, message: Mapping) -> None:
        data = (json.dumps(message) + "\n").encode("utf-8")
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolError(f"external process closed stdin: {exc}") from exc

    def receive(self, timeout: float) -> dict:
        deadline = time.monotonic() + timeout
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise Timeout(f"no reply within {timeout:.1f}s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise Timeout(f"no reply within {timeout:.1f}s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ProtocolError("external process closed stdout")
            self._buffer += chunk
        line, _, self._buffer = self._buffer.partition(b"\n")
        try:
            reply = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolError(f"reply is not valid JSON: {line[:200]!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError("reply must be a JSON object")
        return reply


class ExternalPolicy:
    """One child process per guard session, wire protocol version 1."""

    def __init__(self, command: str, timeout: float = DEFAULT_TIMEOUT):
        self.command = command
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._channel: Optional[_LineChannel] = None

    def start(self) -> str:
        """Launch the child and negotiate the protocol; returns its version."""
        if self._proc is not None:
            raise PolicyError("external policy already started")
        try:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise LaunchError(f"cannot launch {self.command!r}: {exc}") from exc
        self._channel = _LineChannel(self._proc)
        self._channel.send({"type": "hello", "version": PROTOCOL_VERSION})
        reply = self._channel.receive(self.timeout)
        if reply.get("type") != "hello" or "version" not in reply:
            raise ProtocolError(f"bad hello reply: {reply!r}")
        version = reply["version"]
        if version != PROTOCOL_VERSION:
            raise VersionMismatch(f"unsupported protocol version {version!r}")
        return version

    def decide(self, request: PolicyRequest) -> ActionDistribution:
        if self._channel is None:
            self.start()
        message: dict = {
            "type": "decide",
            "history": [serialize_observation(o) for o in request.history],
        }
        if request.prompt_suffix is not None:
            message["prompt_suffix"] = request.prompt_suffix
        self._channel.send(message)
        reply = self._channel.receive(self.timeout)
        if reply.get("type") == "error":
            raise ProtocolError(f"external policy error: {reply.get('reason')!r}")
        if reply.get("type") != "decision":
            raise ProtocolError(f"expected a decision reply, got {reply!r}")
        scores = reply.get("scores")
        if not isinstance(scores, dict):
            raise ProtocolError("decision reply carries no scores object")
        by_token = {a.value: a for a in ACTIONS}
        parsed: dict[Action, float] = {}
        for token, value in scores.items():
            if token not in by_token:
                raise ProtocolError(f"decision scores unknown action {token!r}")
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ProtocolError(f"score for {token!r} is not a number")
            parsed[by_token[token]] = float(value)
        missing = [a.value for a in ACTIONS if a not in parsed]
        if missing:
            raise ProtocolError(f"decision scores missing actions: {missing}")
        return ActionDistribution(parsed)

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            if self._proc.poll() is None:
                self._channel.send({"type": "shutdown"})
                self._proc.wait(timeout=self.timeout)
        except (PolicyError, subprocess.TimeoutExpired):
            self._proc.kill()
            self._proc.wait()
        finally:
            if self._proc.stdin:
                self._proc.stdin.close()
            if self._proc.stdout:
                self._proc.stdout.close()
            self._proc = None
            self._channel = None

    def __enter__(self) -> "ExternalPolicy":
        self.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def external_handshake(command: str, timeout: float = DEFAULT_TIMEOUT) -> str:
    """Launch a client, negotiate the protocol, shut it down; return the version."""
    policy = ExternalPolicy(command, timeout)
    try:
        return policy.start()
    finally:
        policy.close()
