"""Structured vehicle commands: schema registry, parsing, validation, dispatch.

The canonical wire shape for a command is a JSON object with exactly the
keys "name" and "arguments", e.g.:

    {"name": "set_speed", "arguments": {"speed": 50}}

Model backends may wrap that object in prose; the parser extracts the first
balanced object from the text.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping


class ParseError(Exception):
    """No parseable command object found in the text."""


class ShapeError(Exception):
    """An object was found but lacks the exact name/arguments shape."""


class DuplicateName(Exception):
    """A schema with this name is already registered."""


class DispatchError(Exception):
    """The vehicle rejected a validated command."""


class ValidationError(Exception):
    """Base class for command validation failures."""


class UnknownFunction(ValidationError):
    pass


class MissingArgument(ValidationError):
    pass


class TypeMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class UnknownArgument(ValidationError):
    pass


PARAM_KINDS = ("integer", "number", "boolean", "enum")


@dataclass(frozen=True, slots=True)
class Parameter:
    """One schema parameter: kind plus optional range / allowed values."""

    name: str
    kind: str
    required: bool = True
    minimum: float | None = None
    maximum: float | None = None
    allowed: tuple[Any, ...] | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("parameter name must be non-empty")
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.kind == "enum" and not self.allowed:
            raise ValueError("enum parameter requires allowed values")


@dataclass(frozen=True, slots=True)
class FunctionSchema:
    """A callable vehicle command: parameters and the vehicle op it routes to."""

    name: str
    parameters: tuple[Parameter, ...]
    dispatch_target: str

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("schema name must be non-empty")
        names = [p.name for p in self.parameters]
        if len(names) != len(set(names)):
            raise ValueError("parameter names must be unique")


@dataclass(frozen=True)
class FunctionCall:
    """A concrete invocation: function name plus argument map."""

    name: str
    arguments: Mapping[str, Any]

    def __post_init__(self) -> None:
        object.__setattr__(self, "arguments", dict(self.arguments))


def serialize_call(call: FunctionCall) -> str:
    """Canonical serialization: keys exactly "name" then "arguments"."""
    return json.dumps({"name": call.name, "arguments": dict(call.arguments)})


def extract_balanced_object(text: str) -> str | None:
    """Return the first balanced {...} slice of text that parses as JSON.

    Brace matching respects string literals and escapes, so prose and
    non-JSON brace pairs before the object are skipped over.
    """
    i = 0
    n = len(text)
    while i < n:
        start = text.find("{", i)
        if start < 0:
            return None
        depth = 0
        in_string = False
        escaped = False
        for j in range(start, n):
            ch = text[j]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : j + 1]
                    try:
                        json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    return candidate
        i = start + 1
    return None


def parse_call(text: str) -> FunctionCall:
    """Parse a command object out of model output text.

    Raises ParseError when no balanced JSON object is present, ShapeError
    when the object does not have exactly a string "name" and an object
    "arguments".
    """
    raw = extract_balanced_object(text)
    if raw is None:
        raise ParseError("no command object found in text")
    obj = json.loads(raw)
    if not isinstance(obj, dict) or set(obj.keys()) != {"name", "arguments"}:
        raise ShapeError('command object must have exactly the keys "name" and "arguments"')
    if not isinstance(obj["name"], str) or not isinstance(obj["arguments"], dict):
        raise ShapeError('"name" must be a string and "arguments" an object')
    return FunctionCall(obj["name"], obj["arguments"])


# Built-in command set. set_speed is the only schema the system ships with;
# further schemas can be registered at wiring time.
SET_SPEED_SCHEMA = FunctionSchema(
    name="set_speed",
    parameters=(Parameter(name="speed", kind="integer", minimum=0, maximum=85),),
    dispatch_target="vehicle.set_speed",
)


@dataclass
class FunctionRegistry:
    """Write-once schema registry with validation and dispatch.

    Dispatch targets are bound separately from schema registration so the
    command vocabulary stays independent of any concrete vehicle.
    """

    _schemas: dict[str, FunctionSchema] = field(default_factory=dict)
    _targets: dict[str, Callable[..., str]] = field(default_factory=dict)

    def register_schema(self, schema: FunctionSchema) -> None:
        if schema.name in self._schemas:
            raise DuplicateName(f"schema {schema.name!r} already registered")
        self._schemas[schema.name] = schema

    def bind_target(self, dispatch_target: str, fn: Callable[..., str]) -> None:
        self._targets[dispatch_target] = fn

    def schema_for(self, name: str) -> FunctionSchema | None:
        return self._schemas.get(name)

    def validate(self, call: FunctionCall) -> None:
        """Check the call against its registered schema; raise on any defect."""
        schema = self._schemas.get(call.name)
        if schema is None:
            raise UnknownFunction(f"unknown function {call.name!r}")
        known = {p.name for p in schema.parameters}
        for arg in call.arguments:
            if arg not in known:
                raise UnknownArgument(f"{call.name}: unknown argument {arg!r}")
        for param in schema.parameters:
            if param.name not in call.arguments:
                if param.required:
                    raise MissingArgument(f"{call.name}: missing argument {param.name!r}")
                continue
            value = call.arguments[param.name]
            self._check_value(call.name, param, value)

    @staticmethod
    def _check_value(fn_name: str, param: Parameter, value: Any) -> None:
        label = f"{fn_name}.{param.name}"
        if param.kind == "integer":
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeMismatch(f"{label} must be an integer, got {value!r}")
        elif param.kind == "number":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeMismatch(f"{label} must be a number, got {value!r}")
        elif param.kind == "boolean":
            if not isinstance(value, bool):
                raise TypeMismatch(f"{label} must be a boolean, got {value!r}")
        elif param.kind == "enum":
            if value not in (param.allowed or ()):
                raise OutOfRange(f"{label} must be one of {param.allowed}, got {value!r}")
        if param.kind in ("integer", "number"):
            if param.minimum is not None and value < param.minimum:
                raise OutOfRange(f"{label}={value!r} below minimum {param.minimum}")
            if param.maximum is not None and value > param.maximum:
                raise OutOfRange(f"{label}={value!r} above maximum {param.maximum}")

    def dispatch(self, call: FunctionCall) -> str:
        """Route a call to its bound vehicle operation and return the acknowledgment.

        Validation is re-run here, so an unvalidated call can never reach a
        vehicle operation.
        """
        self.validate(call)
        schema = self._schemas[call.name]
        target = self._targets.get(schema.dispatch_target)
        if target is None:
            raise DispatchError(f"no binding for dispatch target {schema.dispatch_target!r}")
        try:
            return target(**call.arguments)
        except (ValidationError, DispatchError):
            raise
        except Exception as exc:
            raise DispatchError(str(exc)) from exc


def built_in_registry() -> FunctionRegistry:
    """Registry preloaded with the built-in command schemas (targets unbound)."""
    registry = FunctionRegistry()
    registry.register_schema(SET_SPEED_SCHEMA)
    return registry
