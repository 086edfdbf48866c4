"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class IntentCallError(Exception):
    """Base class for every error raised by this package."""


class PreconditionViolation(IntentCallError, ValueError):
    pass


# schema extraction / registry


class SchemaError(IntentCallError):
    pass


class MalformedSignature(SchemaError):
    pass


class DocstringMismatch(SchemaError):
    pass


class DuplicateParam(SchemaError):
    pass


class SchemaParseError(SchemaError):
    """Schema JSON could not be decoded; ``offset`` is a byte offset into the UTF-8 text."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MissingField(SchemaError):
    def __init__(self, field: str) -> None:
        super().__init__(f"missing required field {field!r}")
        self.field = field


class UnknownFunction(IntentCallError, KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown function {self.name!r}"


# call plans


class PlanError(IntentCallError):
    pass


class NotJson(PlanError):
    pass


class BadCallShape(PlanError):
    pass


class BadReference(PlanError):
    pass


class PlanSyntaxError(PlanError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnboundResultVar(PlanError):
    def __init__(self, name: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: unbound result variable {name!r}")
        self.name = name
        self.line = line
        self.column = column


class CycleDetected(PlanError):
    def __init__(self, cycle: list[int]) -> None:
        super().__init__("reference cycle: " + " -> ".join(str(i) for i in cycle))
        self.cycle = cycle


# generation


class InsufficientRecords(IntentCallError, ValueError):
    pass


class ModeArityMismatch(IntentCallError, ValueError):
    pass


class BackendError(IntentCallError):
    pass


class BackendUnavailable(BackendError):
    pass


class RetriesExhausted(BackendUnavailable):
    pass


class MissingScript(BackendError, KeyError):
    def __init__(self, digest: str) -> None:
        super().__init__(digest)
        self.digest = digest

    def __str__(self) -> str:
        return f"no scripted response for prompt digest {self.digest}"


# dispatch


class HandlerError(IntentCallError):
    pass


class UnresolvedRef(IntentCallError):
    pass


class CorruptSnapshot(IntentCallError, ValueError):
    pass


# retrieval / evaluation / config


class KTooLarge(IntentCallError, ValueError):
    pass


class EmptyTestSet(IntentCallError, ValueError):
    pass


class ConfigError(IntentCallError, ValueError):
    pass
