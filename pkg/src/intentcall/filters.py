"""Filter chain applied to raw LLM output: JSON extraction, format check, dedup."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .calls import CallPlan, FunctionCall, canonical_value, iter_refs, plan_from_json_calls, plan_to_json_calls
from .errors import BadReference, PlanError
from .schema import SchemaRegistry

DEFAULT_THRESHOLD = 0.75


@dataclass(frozen=True)
class GenerationRecord:
    query: str
    answers: tuple[FunctionCall, ...]

    @property
    def plan(self) -> CallPlan:
        return CallPlan(self.answers)

    @property
    def function_names(self) -> list[str]:
        return [c.name for c in self.answers]

    def to_dict(self) -> dict[str, Any]:
        return {"query": self.query, "answers": plan_to_json_calls(self.plan)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    def key(self) -> tuple:
        return (self.query, tuple((c.id, c.name, canonical_value(c.arguments)) for c in self.answers))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GenerationRecord:
        plan = plan_from_json_calls(data["answers"])
        return cls(data["query"], plan.calls)


# JSON extraction


def extract_json_values(raw: str) -> list[Any]:
    """Maximal well-formed JSON objects/arrays found anywhere in ``raw``, in textual order.

    A top-level array whose elements are all objects is flattened into those objects.
    """
    decoder = json.JSONDecoder()
    values: list[Any] = []
    pos = 0
    n = len(raw)
    while pos < n:
        starts = [i for i in (raw.find("{", pos), raw.find("[", pos)) if i >= 0]
        if not starts:
            break
        start = min(starts)
        try:
            value, end = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(value, list) and value and all(isinstance(v, dict) for v in value):
            values.extend(value)
        else:
            values.append(value)
        pos = end
    return values


# format validation


class Reason(str, Enum):
    NOT_JSON = "NotJson"
    BAD_FORMAT = "BadFormat"
    DUPLICATE = "Duplicate"


@dataclass(frozen=True)
class Rejection:
    kind: str
    detail: str = ""

    def __bool__(self) -> bool:
        return False


_RECORD_KEYS = {"query", "answers"}
_CALL_KEYS = {"id", "name", "arguments"}


def validate_record(value: Any, registry: SchemaRegistry) -> GenerationRecord | Rejection:
    """Check one extracted value against the record layout and the registry.

    Never raises; failures come back as a falsy :class:`Rejection`.
    """
    if not isinstance(value, dict):
        return Rejection("BadShape", "record is not an object")
    missing = _RECORD_KEYS - value.keys()
    if missing:
        return Rejection("MissingKey", ", ".join(sorted(missing)))
    if value.keys() != _RECORD_KEYS:
        return Rejection("BadShape", f"unexpected keys {sorted(value.keys() - _RECORD_KEYS)}")
    query, answers = value["query"], value["answers"]
    if not isinstance(query, str) or not query.strip():
        return Rejection("BadShape", "query must be a non-empty string")
    if not isinstance(answers, list) or not answers:
        return Rejection("BadShape", "answers must be a non-empty array")
    for pos, item in enumerate(answers):
        if not isinstance(item, dict):
            return Rejection("BadShape", f"answer {pos} is not an object")
        missing = _CALL_KEYS - item.keys()
        if missing:
            return Rejection("MissingKey", f"answer {pos}: {', '.join(sorted(missing))}")
        if item.keys() != _CALL_KEYS:
            return Rejection("BadShape", f"answer {pos}: unexpected keys")
        if isinstance(item["id"], bool) or item["id"] != pos:
            return Rejection("BadShape", f"answer {pos}: id must be {pos}")
        if not isinstance(item["arguments"], dict):
            return Rejection("BadShape", f"answer {pos}: arguments must be an object")
    try:
        plan = plan_from_json_calls(answers)
    except BadReference as exc:
        return Rejection("BadReference", str(exc))
    except PlanError as exc:
        return Rejection("BadShape", str(exc))
    for call in plan.calls:
        schema = registry.get(call.name)
        if schema is None:
            return Rejection("UnknownFunction", call.name)
        for key in call.arguments:
            if key not in schema.arguments:
                return Rejection("UnknownArgument", f"{call.name}.{key}")
        for key in schema.required_args:
            if key not in call.arguments:
                return Rejection("MissingRequiredArgument", f"{call.name}.{key}")
        for ref in iter_refs(call.arguments):
            if ref.id >= call.id:
                return Rejection("BadReference", f"call {call.id} references #{ref.id}")
    return GenerationRecord(query, plan.calls)


# ROUGE-L similarity


def lcs_length(a: Sequence[Any], b: Sequence[Any]) -> int:
    if not a or not b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_f(candidate: Sequence[Any], reference: Sequence[Any]) -> float:
    """ROUGE-L F1 between two token sequences.

    With P = L/|c| and R = L/|r|, 2PR/(P+R) reduces to 2L/(|c|+|r|); one
    division keeps the result correctly rounded.
    """
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    return 2 * lcs / (len(candidate) + len(reference))


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace split, leading/trailing punctuation stripped per token."""
    tokens = []
    for tok in text.lower().split():
        start, end = 0, len(tok)
        while start < end and _is_punct(tok[start]):
            start += 1
        while end > start and _is_punct(tok[end - 1]):
            end -= 1
        if start < end:
            tokens.append(tok[start:end])
    return tokens


@dataclass
class SimilarityState:
    threshold: float = DEFAULT_THRESHOLD
    accepted_queries: list[list[str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")

    def max_score(self, tokens: Sequence[str]) -> float:
        return max((rouge_l_f(tokens, q) for q in self.accepted_queries), default=0.0)


def similarity_filter_step(record: GenerationRecord, state: SimilarityState) -> str:
    """Return "keep" (and remember the query) or "drop" for a near-duplicate."""
    tokens = tokenize(record.query)
    if state.accepted_queries and state.max_score(tokens) >= state.threshold:
        return "drop"
    state.accepted_queries.append(tokens)
    return "keep"


# the chain


@dataclass
class RejectedValue:
    raw: Any
    reason: Reason
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"reason": self.reason.value, "detail": self.detail, "raw": self.raw}


@dataclass
class FilterOutcome:
    accepted: list[GenerationRecord] = field(default_factory=list)
    rejected: list[RejectedValue] = field(default_factory=list)

    @property
    def examined(self) -> int:
        return len(self.accepted) + len(self.rejected)


def run_filter_chain(raw: str, registry: SchemaRegistry, state: SimilarityState) -> FilterOutcome:
    outcome = FilterOutcome()
    values = extract_json_values(raw)
    if not values and raw.strip():
        outcome.rejected.append(RejectedValue(raw, Reason.NOT_JSON))
        return outcome
    for value in values:
        checked = validate_record(value, registry)
        if isinstance(checked, Rejection):
            outcome.rejected.append(RejectedValue(value, Reason.BAD_FORMAT, f"{checked.kind}: {checked.detail}"))
        elif similarity_filter_step(checked, state) == "drop":
            outcome.rejected.append(RejectedValue(value, Reason.DUPLICATE))
        else:
            outcome.accepted.append(checked)
    return outcome


class FilterChain:
    """Stateful wrapper: one similarity state shared by every batch it sees."""

    def __init__(self, threshold: float = DEFAULT_THRESHOLD) -> None:
        self.state = SimilarityState(threshold)
        self.rejections: list[RejectedValue] = []

    def __call__(self, raw: str, registry: SchemaRegistry) -> FilterOutcome:
        outcome = run_filter_chain(raw, registry, self.state)
        self.rejections.extend(outcome.rejected)
        return outcome

    def seen(self, records: Iterable[GenerationRecord]) -> None:
        """Register already-accepted records so later output is deduplicated against them."""
        for rec in records:
            self.state.accepted_queries.append(tokenize(rec.query))

