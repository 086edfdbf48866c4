"""Prompt variants for evaluation and fine-tuning, chat-sample export, token statistics."""

from __future__ import annotations

import importlib
import json
import statistics
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

from .calls import DEFAULT_SEPARATOR, CallPlan, parse_code_answer, parse_json_answer, render_code_answer, render_json_answer
from .errors import ConfigError, PreconditionViolation
from .filters import GenerationRecord
from .schema import FunctionSchema, SchemaRegistry, serialize_schema

VARIANTS = ("json", "code", "json_short", "code_short")

SYSTEM_FULL = (
    "You are an expert in composing functions. You are given a query and a set of possible functions.\n"
    "Based on the query, you will need to make one or more function calls to achieve the purpose.\n"
    "If none of the function can be used, point it out. If the given question lacks the parameters required by the function,\n"
    "also point it out. Remember you should not use functions that is not suitable for the query and only return the "
    "function call in tools call sections."
)
SYSTEM_SHORT = "You are an expert in composing functions."

USER_FULL = """Here is a list of functions that you can invoke:
{functions}

Should you decide to return the function call(s), Put it in the format of
{format_description}

{example}If there is a way to achieve the purpose using the given functions, please provide the function call(s) in the above format.
REMEMBER TO ONLY RETURN THE FUNCTION CALLS LIKE THE EXAMPLE ABOVE, NO OTHER INFORMATION SHOULD BE RETURNED.

Now my query is: {query}"""

USER_SHORT = """Here is a list of functions:
{functions}

Now my query is: {query}"""

_JSON_CALLS = """[
    {{
      "id": 0,
      "name": "func0",
      "arguments": {{
          "arg1": "value1",
          "arg2": "value2",
          ...
      }}
    }},
    {{
      "id": 1,
      "name": "func1",
      "arguments": {{
          "arg1": "value1",
          "arg2": {arg2},
          ...
      }}
    }},
    ...
]"""

FORMAT_JSON = (
    _JSON_CALLS.format(arg2='"value2"')
    + "\nIf an argument is a response from a previous function call,\n"
    "you can reference it in the following way like the argument\n"
    "value of arg2 in func1:\n"
    + _JSON_CALLS.format(arg2='"#0"')
    + "\nThis means that the value of arg2 in func1 is the return\n"
    "value from func0 (#0 means the response from the function call with id 0)."
)

FORMAT_CODE = """result1 = func0(arg1="value1", arg2="value2", ...)
result2 = func1(arg1="value1", arg2="value2", ...)
...
You can do nested function calling in the following way:
result1 = func0(arg1="value1", arg2="value2", ...)
result2 = func1(arg1="value1", arg2=result1, ...)
...
This means that the value of arg2 in func1 is the return value from func0."""

_PY_TYPES = {"string": "str", "integer": "int", "number": "float", "boolean": "bool", "list": "list", "map": "dict"}


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown prompt variant {variant!r}; expected one of {VARIANTS}")


def is_code(variant: str) -> bool:
    _check_variant(variant)
    return variant.startswith("code")


def is_short(variant: str) -> bool:
    _check_variant(variant)
    return variant.endswith("_short")


def _indent(text: str, prefix: str = "    ") -> str:
    return "\n".join(prefix + line if line.strip() else "" for line in text.splitlines())


def render_function_doc(schema: FunctionSchema, variant: str) -> str:
    if not is_code(variant):
        return serialize_schema(schema)
    parts = ["Name:", _indent(schema.name), "Description:", _indent(schema.description)]
    if schema.arguments:
        parts.append("Args:")
        for p in schema.arguments.values():
            type_text = _PY_TYPES[p.type_tag] + ("" if p.required else ", optional")
            line = f"{p.name} ({type_text}): {p.description}".rstrip()
            if p.default is not None:
                line += f" Defaults to {json.dumps(p.default, ensure_ascii=False)}."
            parts.append(_indent(line))
    parts.append("Returns:")
    if schema.returns is None:
        parts.append(_indent("None"))
    else:
        parts.append(_indent(f"{_PY_TYPES[schema.returns.type_tag]}: {schema.returns.description}".rstrip()))
    if schema.examples:
        parts.append("Example:")
        parts.extend(_indent(e) for e in schema.examples)
    return "\n".join(parts)


def render_answer(plan: CallPlan, variant: str, separator: tuple[str, str] = DEFAULT_SEPARATOR) -> str:
    if is_code(variant):
        return render_code_answer(plan, separator)
    return render_json_answer(plan)


def parse_answer(text: str, variant: str, separator: tuple[str, str] = DEFAULT_SEPARATOR) -> CallPlan:
    if is_code(variant):
        return parse_code_answer(text, separator)
    return parse_json_answer(text)


def _render_fewshot(examples: Sequence[GenerationRecord], variant: str, separator: tuple[str, str]) -> str:
    blocks = [f"query: {ex.query}\nanswer:\n{render_answer(ex.plan, variant, separator)}" for ex in examples]
    return "Here are some examples:\n" + "\n\n".join(blocks) + "\n\n"


def render_eval_prompt(
    variant: str,
    functions: Sequence[FunctionSchema],
    query: str,
    fewshot: Sequence[GenerationRecord] | None = None,
    separator: tuple[str, str] = DEFAULT_SEPARATOR,
) -> tuple[str, str]:
    """Return the (system, user) pair for one query."""
    _check_variant(variant)
    if not functions:
        raise PreconditionViolation("at least one function is required")
    joiner = "\n\n" if is_code(variant) else "\n"
    docs = joiner.join(render_function_doc(f, variant) for f in functions)
    if is_short(variant):
        return SYSTEM_SHORT, USER_SHORT.format(functions=docs, query=query)
    user = USER_FULL.format(
        functions=docs,
        format_description=FORMAT_CODE if is_code(variant) else FORMAT_JSON,
        example=_render_fewshot(fewshot, variant, separator) if fewshot else "",
        query=query,
    )
    return SYSTEM_FULL, user


@dataclass(frozen=True)
class ChatSample:
    system: str
    user: str
    assistant: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)


def render_training_sample(
    record: GenerationRecord,
    variant: str,
    registry: SchemaRegistry,
    separator: tuple[str, str] = DEFAULT_SEPARATOR,
) -> ChatSample:
    """Chat sample whose prompt lists only the record's own functions."""
    functions = registry.select(record.function_names)
    system, user = render_eval_prompt(variant, functions, record.query, separator=separator)
    return ChatSample(system, user, render_answer(record.plan, variant, separator))


_QUERY_MARKER = "Now my query is: "


def record_from_training_sample(
    sample: ChatSample | dict,
    variant: str,
    separator: tuple[str, str] = DEFAULT_SEPARATOR,
) -> GenerationRecord:
    """Recover the (query, answers) record a chat sample was rendered from."""
    if isinstance(sample, dict):
        sample = ChatSample(sample["system"], sample["user"], sample["assistant"])
    head, marker, query = sample.user.rpartition(_QUERY_MARKER)
    if not marker:
        raise ValueError("chat sample has no query line")
    return GenerationRecord(query, parse_answer(sample.assistant, variant, separator).calls)


# token statistics


@dataclass(frozen=True)
class TokenizerHandle:
    id: str
    count_fn: Callable[[str], int]

    def count(self, text: str) -> int:
        return self.count_fn(text) if text else 0


WHITESPACE_TOKENIZER = TokenizerHandle("whitespace", lambda text: len(text.split()))


def load_tokenizer(spec: str) -> TokenizerHandle:
    """``whitespace``, ``chars`` or ``package.module:callable`` (text -> int)."""
    if spec == "whitespace":
        return WHITESPACE_TOKENIZER
    if spec == "chars":
        return TokenizerHandle("chars", len)
    module_name, sep, attr = spec.partition(":")
    if not sep:
        raise ConfigError(f"tokenizer must be 'whitespace', 'chars' or 'module:callable', got {spec!r}")
    try:
        fn = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load tokenizer {spec!r}: {exc}") from exc
    return TokenizerHandle(spec, fn)


def token_stats(
    dataset: Iterable[GenerationRecord],
    variant: str,
    tokenizer: TokenizerHandle,
    registry: SchemaRegistry,
) -> dict:
    per_sample = []
    for record in dataset:
        system, user = render_eval_prompt(variant, registry.select(record.function_names), record.query)
        per_sample.append(tokenizer.count(system + "\n" + user))
    return {"variant": variant, "tokenizer": tokenizer.id, "mean": statistics.fmean(per_sample), "per_sample": per_sample}


# fine-tuning hyperparameters


@dataclass(frozen=True)
class FinetuneConfig:
    lora_rank: int = 8
    lora_alpha: int = 16
    learning_rate: float = 1.41e-5
    warmup_ratio: float = 0.1
    epochs: int = 24
    scheduler: str = "linear"

    def __post_init__(self) -> None:
        if min(self.lora_rank, self.lora_alpha, self.epochs) <= 0 or self.learning_rate <= 0:
            raise ValueError("fine-tuning hyperparameters must be positive")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must be in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def export_finetune_config() -> FinetuneConfig:
    return FinetuneConfig()
