"""Call plans: parsed function calls with ``#k`` / ``resultK`` references between them.

Argument values are plain Python values (str, int, float, bool, list, dict) plus
:class:`Ref`, which stands for the return value of another call in the plan.
"""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from .errors import (
    BadCallShape,
    BadReference,
    CycleDetected,
    NotJson,
    PlanSyntaxError,
    UnboundResultVar,
)
from .schema import SchemaRegistry, value_matches_tag

DEFAULT_SEPARATOR = ("<sep>", "</sep>")
_REF_STRING = re.compile(r"#(\d+)")


@dataclass(frozen=True, order=True)
class Ref:
    """Reference to the return value of the call with this id."""

    id: int

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("Ref id must be >= 0")


@dataclass(frozen=True)
class FunctionCall:
    id: int
    name: str
    arguments: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class CallPlan:
    calls: tuple[FunctionCall, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "calls", tuple(self.calls))

    def __len__(self) -> int:
        return len(self.calls)

    def __iter__(self) -> Iterator[FunctionCall]:
        return iter(self.calls)

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.calls]

    @property
    def edges(self) -> set[tuple[int, int]]:
        """(caller id, referenced id) pairs."""
        return {(c.id, r.id) for c in self.calls for r in iter_refs(c.arguments)}

    def call(self, call_id: int) -> FunctionCall:
        for c in self.calls:
            if c.id == call_id:
                return c
        raise KeyError(call_id)


def iter_refs(value: Any) -> Iterator[Ref]:
    if isinstance(value, Ref):
        yield value
    elif isinstance(value, list):
        for v in value:
            yield from iter_refs(v)
    elif isinstance(value, dict):
        for v in value.values():
            yield from iter_refs(v)


def map_refs(value: Any, fn) -> Any:
    """Rebuild ``value`` with every Ref replaced by ``fn(ref)``."""
    if isinstance(value, Ref):
        return fn(value)
    if isinstance(value, list):
        return [map_refs(v, fn) for v in value]
    if isinstance(value, dict):
        return {k: map_refs(v, fn) for k, v in value.items()}
    return value


# graph helpers


def _check_targets(plan: CallPlan) -> None:
    ids = set()
    for c in plan.calls:
        if c.id in ids:
            raise BadReference(f"duplicate call id {c.id}")
        ids.add(c.id)
    for src, dst in sorted(plan.edges):
        if dst not in ids:
            raise BadReference(f"call {src} references missing call {dst}")


def _find_cycle(plan: CallPlan) -> list[int] | None:
    graph: dict[int, list[int]] = {c.id: [] for c in plan.calls}
    for src, dst in sorted(plan.edges):
        graph[src].append(dst)
    state: dict[int, int] = {}
    stack: list[int] = []

    def visit(node: int) -> list[int] | None:
        state[node] = 1
        stack.append(node)
        for nxt in graph[node]:
            if state.get(nxt) == 1:
                return stack[stack.index(nxt):] + [nxt]
            if nxt not in state:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        state[node] = 2
        return None

    for node in graph:
        if node not in state:
            found = visit(node)
            if found:
                return found
    return None


def topo_order(plan: CallPlan) -> list[int]:
    """Execution order: referenced calls first, otherwise ascending id."""
    _check_targets(plan)
    waiting = {c.id: {dst for src, dst in plan.edges if src == c.id} for c in plan.calls}
    users: dict[int, list[int]] = {c.id: [] for c in plan.calls}
    for src, dst in plan.edges:
        users[dst].append(src)
    ready = [i for i, deps in waiting.items() if not deps]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        node = heapq.heappop(ready)
        order.append(node)
        for user in users[node]:
            waiting[user].discard(node)
            if not waiting[user]:
                heapq.heappush(ready, user)
    if len(order) != len(plan.calls):
        raise CycleDetected(_find_cycle(plan) or [])
    return order


def check_acyclic(plan: CallPlan) -> None:
    _check_targets(plan)
    cycle = _find_cycle(plan)
    if cycle:
        raise BadReference(f"reference cycle {' -> '.join(map(str, cycle))}")


# JSON wire format


def _refs_from_json(value: Any) -> Any:
    if isinstance(value, str):
        m = _REF_STRING.fullmatch(value)
        return Ref(int(m.group(1))) if m else value
    if isinstance(value, list):
        return [_refs_from_json(v) for v in value]
    if isinstance(value, dict):
        return {k: _refs_from_json(v) for k, v in value.items()}
    return value


def _refs_to_json(value: Any) -> Any:
    return map_refs(value, lambda r: f"#{r.id}")


def plan_from_json_calls(items: Any) -> CallPlan:
    """Build a plan from decoded answer objects; ids are renumbered positionally."""
    if not isinstance(items, list):
        raise BadCallShape("answers must be a JSON array")
    raw_ids: list[int | None] = []
    for pos, item in enumerate(items):
        if not isinstance(item, dict):
            raise BadCallShape(f"answer {pos} is not an object")
        if not isinstance(item.get("name"), str) or not item["name"]:
            raise BadCallShape(f"answer {pos} has no function name")
        args = item.get("arguments", {})
        if not isinstance(args, dict):
            raise BadCallShape(f"answer {pos}: arguments must be an object")
        rid = item.get("id")
        if rid is not None and (isinstance(rid, bool) or not isinstance(rid, int)):
            raise BadCallShape(f"answer {pos}: id must be an integer")
        raw_ids.append(rid)

    if all(i is None for i in raw_ids):
        remap = {p: p for p in range(len(items))}
    elif any(i is None for i in raw_ids):
        raise BadCallShape("either every answer carries an id or none does")
    else:
        if len(set(raw_ids)) != len(raw_ids):
            raise BadCallShape("duplicate answer ids")
        remap = {rid: pos for pos, rid in enumerate(raw_ids)}

    def renumber(ref: Ref) -> Ref:
        if ref.id not in remap:
            raise BadReference(f"reference #{ref.id} has no target")
        return Ref(remap[ref.id])

    calls = []
    for pos, item in enumerate(items):
        args = map_refs(_refs_from_json(item.get("arguments", {})), renumber)
        calls.append(FunctionCall(pos, item["name"], args))
    plan = CallPlan(tuple(calls))
    check_acyclic(plan)
    return plan


def parse_json_answer(text: str) -> CallPlan:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NotJson(str(exc)) from exc
    if isinstance(data, dict) and "answers" in data:
        data = data["answers"]
    return plan_from_json_calls(data)


def plan_to_json_calls(plan: CallPlan) -> list[dict[str, Any]]:
    return [{"id": c.id, "name": c.name, "arguments": _refs_to_json(c.arguments)} for c in plan.calls]


def render_json_answer(plan: CallPlan, indent: int | None = 2) -> str:
    return json.dumps(plan_to_json_calls(plan), indent=indent, ensure_ascii=False)


# code wire format


def result_var(call_id: int) -> str:
    return f"result{call_id + 1}"


def render_literal(value: Any) -> str:
    if isinstance(value, Ref):
        return result_var(value.id)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return json.dumps(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, list):
        return "[" + ", ".join(render_literal(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k, ensure_ascii=False)}: {render_literal(v)}" for k, v in value.items()) + "}"
    raise TypeError(f"cannot render {type(value).__name__} as a call literal")


def render_code_answer(plan: CallPlan, separator: tuple[str, str] = DEFAULT_SEPARATOR) -> str:
    lines = []
    for c in plan.calls:
        args = ", ".join(f"{k}={render_literal(v)}" for k, v in c.arguments.items())
        lines.append(f"{result_var(c.id)} = {c.name}({args})")
    return separator[0] + "\n".join(lines) + separator[1]


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<punct>[=(),\[\]{}:])
    """,
    re.VERBOSE,
)


class _LineParser:
    def __init__(self, text: str, line: int, bindings: Mapping[str, int]) -> None:
        self.line = line
        self.bindings = bindings
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if not m:
                raise PlanSyntaxError(f"unexpected character {text[pos]!r}", line, pos + 1)
            if m.lastgroup != "ws":
                self.tokens.append((m.lastgroup, m.group(), pos + 1))
            pos = m.end()
        self.i = 0
        self.end_col = len(text) + 1

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "", self.end_col)

    def take(self, kind: str, value: str | None = None) -> tuple[str, str, int]:
        tok = self.peek()
        if tok[0] != kind or (value is not None and tok[1] != value):
            want = value or kind
            got = tok[1] or "end of line"
            raise PlanSyntaxError(f"expected {want!r}, got {got!r}", self.line, tok[2])
        self.i += 1
        return tok

    def statement(self) -> tuple[str, str, dict[str, Any]]:
        target = self.take("name")[1]
        self.take("punct", "=")
        fname = self.take("name")[1]
        self.take("punct", "(")
        args: dict[str, Any] = {}
        if self.peek()[1] != ")":
            while True:
                kind, key, col = self.take("name")
                if key in args:
                    raise PlanSyntaxError(f"duplicate keyword {key!r}", self.line, col)
                self.take("punct", "=")
                args[key] = self.value()
                if self.peek()[1] == ",":
                    self.i += 1
                    if self.peek()[1] == ")":
                        break
                    continue
                break
        self.take("punct", ")")
        if self.peek()[0] != "eof":
            tok = self.peek()
            raise PlanSyntaxError(f"trailing input {tok[1]!r}", self.line, tok[2])
        return target, fname, args

    def _decode(self, raw: str, col: int) -> str:
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise PlanSyntaxError(f"bad string literal: {exc.msg}", self.line, col) from exc

    def value(self) -> Any:
        kind, text, col = self.peek()
        if kind == "string":
            self.i += 1
            return self._decode(text, col)
        if kind == "number":
            self.i += 1
            return float(text) if any(ch in text for ch in ".eE") else int(text)
        if kind == "name":
            self.i += 1
            if text in ("true", "True"):
                return True
            if text in ("false", "False"):
                return False
            if self.peek()[1] == "(":
                raise PlanSyntaxError("nested calls are not allowed; bind the call to a result variable", self.line, col)
            if text not in self.bindings:
                raise UnboundResultVar(text, self.line, col)
            return Ref(self.bindings[text])
        if text == "[":
            self.i += 1
            items: list[Any] = []
            while self.peek()[1] != "]":
                items.append(self.value())
                if self.peek()[1] != ",":
                    break
                self.i += 1
            self.take("punct", "]")
            return items
        if text == "{":
            self.i += 1
            mapping: dict[str, Any] = {}
            while self.peek()[1] != "}":
                _, raw, kcol = self.take("string")
                key = self._decode(raw, kcol)
                self.take("punct", ":")
                mapping[key] = self.value()
                if self.peek()[1] != ",":
                    break
                self.i += 1
            self.take("punct", "}")
            return mapping
        raise PlanSyntaxError(f"expected a value, got {text or 'end of line'!r}", self.line, col)


def _strip_separator(text: str, separator: tuple[str, str] | None) -> str:
    text = text.strip()
    if separator:
        start, end = separator
        if start and start in text:
            text = text.split(start, 1)[1]
        if end and end in text:
            text = text.rsplit(end, 1)[0]
    return text


def parse_code_answer(text: str, separator: tuple[str, str] | None = DEFAULT_SEPARATOR) -> CallPlan:
    body = _strip_separator(text, separator)
    bindings: dict[str, int] = {}
    calls: list[FunctionCall] = []
    for lineno, line in enumerate(body.split("\n"), start=1):
        if not line.strip():
            continue
        target, fname, args = _LineParser(line, lineno, bindings).statement()
        call_id = len(calls)
        calls.append(FunctionCall(call_id, fname, args))
        bindings[target] = call_id
    plan = CallPlan(tuple(calls))
    check_acyclic(plan)
    return plan


# canonical form


def canonical_value(value: Any) -> tuple:
    """Hashable, type-tagged form; 8 and 8.0 stay distinct."""
    if isinstance(value, Ref):
        return ("ref", value.id)
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, int):
        return ("int", value)
    if isinstance(value, float):
        return ("float", value)
    if isinstance(value, str):
        return ("str", value)
    if isinstance(value, list):
        return ("list", tuple(canonical_value(v) for v in value))
    if isinstance(value, dict):
        return ("map", tuple(sorted((k, canonical_value(v)) for k, v in value.items())))
    raise TypeError(f"unsupported argument value {value!r}")


def _sorted_value(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _sorted_value(value[k]) for k in sorted(value)}
    if isinstance(value, list):
        return [_sorted_value(v) for v in value]
    return value


def canonicalize(plan: CallPlan) -> CallPlan:
    """Positional ids, argument maps sorted by name."""
    remap = {c.id: pos for pos, c in enumerate(plan.calls)}

    def renumber(ref: Ref) -> Ref:
        return Ref(remap[ref.id]) if ref.id in remap else ref

    calls = [
        FunctionCall(pos, c.name, _sorted_value(map_refs(c.arguments, renumber)))
        for pos, c in enumerate(plan.calls)
    ]
    return CallPlan(tuple(calls))


def plan_key(plan: CallPlan) -> tuple:
    canon = canonicalize(plan)
    return tuple((c.name, canonical_value(c.arguments)) for c in canon.calls)


def _shape(call: FunctionCall) -> tuple:
    # the call with every Ref blanked; only calls of equal shape can correspond
    return (call.name, canonical_value(map_refs(call.arguments, lambda _: Ref(0))))


def plans_equal(a: CallPlan, b: CallPlan) -> bool:
    """Equal up to id renumbering: some one-to-one pairing of calls agrees on
    names, literal arguments and the reference graph."""
    if len(a) != len(b):
        return False
    ca, cb = canonicalize(a), canonicalize(b)
    if plan_key(ca) == plan_key(cb):
        return True
    shapes_a = [_shape(c) for c in ca.calls]
    shapes_b = [_shape(c) for c in cb.calls]
    if Counter(shapes_a) != Counter(shapes_b):
        return False
    n = len(ca)
    mapping: list[int] = [-1] * n
    used = [False] * n

    def moved(ref: Ref) -> Ref:
        return Ref(mapping[ref.id]) if ref.id < n else ref

    def matches() -> bool:
        return all(
            canonical_value(map_refs(ca.calls[i].arguments, moved)) == canonical_value(cb.calls[mapping[i]].arguments)
            for i in range(n)
        )

    def search(i: int) -> bool:
        if i == n:
            return matches()
        for j in range(n):
            if not used[j] and shapes_a[i] == shapes_b[j]:
                mapping[i], used[j] = j, True
                if search(i + 1):
                    return True
                used[j] = False
        return False

    return search(0)


# schema conformance


@dataclass(frozen=True)
class Violation:
    kind: str
    call_id: int
    detail: str


def validate_plan(plan: CallPlan, registry: SchemaRegistry) -> list[Violation]:
    """Schema conformance problems; an empty list means the plan is valid."""
    out: list[Violation] = []
    ids = {c.id for c in plan.calls}
    for c in plan.calls:
        schema = registry.get(c.name)
        if schema is None:
            out.append(Violation("UnknownFunction", c.id, c.name))
            continue
        for key, value in c.arguments.items():
            spec = schema.arguments.get(key)
            if spec is None:
                out.append(Violation("UnknownArgument", c.id, f"{c.name}.{key}"))
            elif not isinstance(value, Ref) and not value_matches_tag(value, spec.type_tag):
                out.append(Violation("TypeMismatch", c.id, f"{c.name}.{key} expects {spec.type_tag}"))
        for key in schema.required_args:
            if key not in c.arguments:
                out.append(Violation("MissingRequiredArgument", c.id, f"{c.name}.{key}"))
        for ref in iter_refs(c.arguments):
            if ref.id not in ids or ref.id == c.id:
                out.append(Violation("BadReference", c.id, f"#{ref.id}"))
    return out

