"""Block mission language: parsing, validation, execution.

A mission is a JSON file mirroring a linear stack of visual blocks:

    {
      "when": "start",
      "vars": {"cmd_vel": 1},
      "blocks": [
        {"op": "set", "var": "take_off", "value": {}},
        {"op": "change", "var": "cmd_vel", "delta": 1},
        {"op": "publish", "var": "take_off", "topic": "/scratch_example/takeoff"},
        {"op": "wait", "seconds": 5},
        {"op": "repeat", "times": 3, "body": [...]}
      ]
    }

Variables are program-global.  The optional "vars" object is the stage's
initial variable state, so a mission can change-then-publish a variable it
never sets with a block.  Publish sends the variable's current value at
publish time; execution is strictly sequential against a pluggable clock.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

from .bus.envelope import MalformedTopic, ProtocolError, validate_topic

MAX_NESTING = 32
MISSION_SUFFIX = ".mission.json"


# ---------------------------------------------------------------------- AST


@dataclass
class SetVar:
    name: str
    value: object


@dataclass
class ChangeVar:
    name: str
    delta: float


@dataclass
class PublishVar:
    var: str
    topic: str


@dataclass
class Wait:
    seconds: float


@dataclass
class Repeat:
    times: int
    body: list


Block = SetVar | ChangeVar | PublishVar | Wait | Repeat


@dataclass
class BlockProgram:
    blocks: list
    initial_vars: dict = field(default_factory=dict)
    trigger: str = "start"


# ------------------------------------------------------------------- errors


class MissionError(ValueError):
    pass


class MalformedJson(MissionError):
    pass


class UnknownOpcode(MissionError):
    pass


class BadField(MissionError):
    pass


class DepthExceeded(MissionError):
    pass


class MissionAbort(RuntimeError):
    """Execution failed; `trace` holds everything that ran before the fault."""

    def __init__(self, reason: str, trace: "ExecutionTrace"):
        super().__init__(reason)
        self.reason = reason
        self.trace = trace


# ------------------------------------------------------------------ parsing


def _require(obj: dict, key: str, kinds, where: str):
    if key not in obj:
        raise BadField(f"{where}: missing {key!r}")
    val = obj[key]
    if kinds is not None and not isinstance(val, kinds):
        raise BadField(f"{where}: {key!r} has wrong type {type(val).__name__}")
    if isinstance(val, bool) and kinds is not None and bool not in _tuple(kinds):
        raise BadField(f"{where}: {key!r} must not be a boolean")
    return val


def _tuple(kinds):
    return kinds if isinstance(kinds, tuple) else (kinds,)


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise BadField(f"{where}: unknown keys {sorted(unknown)}")


def _parse_block(obj, depth: int, index: str) -> Block:
    if depth > MAX_NESTING:
        raise DepthExceeded(f"repeat nesting deeper than {MAX_NESTING}")
    if not isinstance(obj, dict):
        raise BadField(f"block {index}: not an object")
    if "op" not in obj:
        raise BadField(f"block {index}: missing op")
    op = obj["op"]
    where = f"block {index} ({op})"
    if op == "set":
        _check_keys(obj, {"op", "var", "value"}, where)
        name = _require(obj, "var", str, where)
        if "value" not in obj:
            raise BadField(f"{where}: missing 'value'")
        return SetVar(name, obj["value"])
    if op == "change":
        _check_keys(obj, {"op", "var", "delta"}, where)
        name = _require(obj, "var", str, where)
        delta = _require(obj, "delta", (int, float), where)
        if not math.isfinite(delta):
            raise BadField(f"{where}: delta must be finite")
        return ChangeVar(name, delta)
    if op == "publish":
        _check_keys(obj, {"op", "var", "topic"}, where)
        return PublishVar(_require(obj, "var", str, where), _require(obj, "topic", str, where))
    if op == "wait":
        _check_keys(obj, {"op", "seconds"}, where)
        seconds = _require(obj, "seconds", (int, float), where)
        if not math.isfinite(seconds):
            raise BadField(f"{where}: seconds must be finite")
        return Wait(float(seconds))
    if op == "repeat":
        _check_keys(obj, {"op", "times", "body"}, where)
        times = _require(obj, "times", int, where)
        if times < 1:
            raise BadField(f"{where}: times must be >= 1")
        body_json = _require(obj, "body", list, where)
        body = [_parse_block(b, depth + 1, f"{index}.{i}") for i, b in enumerate(body_json)]
        return Repeat(times, body)
    raise UnknownOpcode(f"block {index}: unknown opcode {op!r}")


def _reject_constant(name):
    raise MalformedJson(f"non-finite number {name} in mission")


def parse_program(data) -> BlockProgram:
    """Parse mission JSON (bytes, str or an already-loaded dict) into an AST."""
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise MalformedJson(f"mission is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise BadField("mission must be a JSON object")
    _check_keys(data, {"when", "vars", "blocks"}, "mission")
    trigger = _require(data, "when", str, "mission")
    if trigger != "start":
        raise BadField(f"mission: unsupported trigger {trigger!r}")
    initial = data.get("vars", {})
    if not isinstance(initial, dict):
        raise BadField("mission: 'vars' must be an object")
    blocks_json = _require(data, "blocks", list, "mission")
    blocks = [_parse_block(b, 1, str(i)) for i, b in enumerate(blocks_json)]
    return BlockProgram(blocks=blocks, initial_vars=dict(initial), trigger=trigger)


def load_mission(path) -> BlockProgram:
    with open(path, "rb") as fh:
        return parse_program(fh.read())


# --------------------------------------------------------------- validation


@dataclass
class ValidationIssue:
    kind: str  # use_before_set | malformed_topic | negative_wait
    detail: str

    def __str__(self):
        return f"{self.kind}: {self.detail}"


def validate(program: BlockProgram) -> list[ValidationIssue]:
    """Static checks; returns issues (empty list means the program is runnable)."""
    issues: list[ValidationIssue] = []
    defined = set(program.initial_vars)

    def walk(blocks):
        for block in blocks:
            if isinstance(block, SetVar):
                defined.add(block.name)
            elif isinstance(block, ChangeVar):
                if block.name not in defined:
                    issues.append(ValidationIssue("use_before_set", block.name))
                    defined.add(block.name)  # report once
            elif isinstance(block, PublishVar):
                if block.var not in defined:
                    issues.append(ValidationIssue("use_before_set", block.var))
                    defined.add(block.var)
                try:
                    validate_topic(block.topic)
                except MalformedTopic as exc:
                    issues.append(ValidationIssue("malformed_topic", str(exc)))
            elif isinstance(block, Wait):
                if block.seconds < 0:
                    issues.append(ValidationIssue("negative_wait", f"{block.seconds}"))
            elif isinstance(block, Repeat):
                walk(block.body)

    walk(program.blocks)
    return issues


# ---------------------------------------------------------------- execution


@dataclass
class TraceEvent:
    t: float
    kind: str  # set | change | publish | wait_start | wait_end
    detail: dict

    def as_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "detail": self.detail}


class ExecutionTrace(list):
    """Ordered event log of one mission run (event times never decrease)."""

    def publishes(self) -> list[TraceEvent]:
        return [e for e in self if e.kind == "publish"]

    def to_json(self) -> str:
        return json.dumps([e.as_dict() for e in self], indent=2)


def execute(program: BlockProgram, bus, clock) -> ExecutionTrace:
    """Run a validated program against a bus handle.

    `bus` needs a publish(topic, msg) method (in-process Broker or a
    network client); `clock` needs now()/sleep().  Raises MissionAbort with
    the partial trace when the bus dies or a change hits a non-number.
    """
    trace = ExecutionTrace()
    vars: dict = copy.deepcopy(program.initial_vars)
    t0 = clock.now()

    def stamp() -> float:
        return clock.now() - t0

    def run(blocks):
        for block in blocks:
            if isinstance(block, SetVar):
                vars[block.name] = copy.deepcopy(block.value)
                trace.append(TraceEvent(stamp(), "set", {"var": block.name, "value": block.value}))
            elif isinstance(block, ChangeVar):
                cur = vars.get(block.name)
                if isinstance(cur, bool) or not isinstance(cur, (int, float)):
                    raise MissionAbort(
                        f"change on non-number variable {block.name!r} ({cur!r})", trace
                    )
                vars[block.name] = cur + block.delta
                trace.append(
                    TraceEvent(stamp(), "change", {"var": block.name, "value": vars[block.name]})
                )
            elif isinstance(block, PublishVar):
                value = copy.deepcopy(vars[block.var])
                try:
                    bus.publish(block.topic, value)
                except (ProtocolError, ConnectionError, RuntimeError) as exc:
                    raise MissionAbort(f"bus unavailable: {exc}", trace) from exc
                trace.append(
                    TraceEvent(
                        stamp(), "publish", {"topic": block.topic, "var": block.var, "value": value}
                    )
                )
            elif isinstance(block, Wait):
                trace.append(TraceEvent(stamp(), "wait_start", {"seconds": block.seconds}))
                clock.sleep(block.seconds)
                trace.append(TraceEvent(stamp(), "wait_end", {"seconds": block.seconds}))
            elif isinstance(block, Repeat):
                for _ in range(block.times):
                    run(block.body)
            else:  # pragma: no cover - parse guarantees exhaustiveness
                raise MissionAbort(f"unknown block {block!r}", trace)

    run(program.blocks)
    return trace


def fig3_program() -> BlockProgram:
    """The demo mission: arm two command payloads, take off, cruise, land.

    The cruise speed variable starts at 1 in the stage state and a change
    block bumps it to 2 before it is published at t=5; the landing command
    goes out at t=25.
    """
    return BlockProgram(
        initial_vars={"cmd_vel": 1},
        blocks=[
            SetVar("take_off", {}),
            SetVar("land", {}),
            ChangeVar("cmd_vel", 1),
            PublishVar("take_off", "/scratch_example/takeoff"),
            Wait(5),
            PublishVar("cmd_vel", "/scratch_example/cmd_vel"),
            Wait(20),
            PublishVar("land", "/scratch_example/land"),
        ],
    )
