"""Function schemas: extraction from annotated Python sources, JSON layout, registry."""

from __future__ import annotations

import ast
import inspect
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import (
    DocstringMismatch,
    DuplicateParam,
    MalformedSignature,
    MissingField,
    PreconditionViolation,
    SchemaError,
    SchemaParseError,
    UnknownFunction,
)

TYPE_TAGS = ("string", "integer", "number", "boolean", "list", "map")
MATCH_MODES = ("exact", "semantic")

_SECTION_ALIASES = {
    "args": "args",
    "arguments": "args",
    "returns": "returns",
    "example": "example",
    "examples": "example",
}
_ARG_LINE = re.compile(r"^(?P<name>[A-Za-z_]\w*)\s*(?:\((?P<type>[^)]*)\))?\s*:\s*(?P<desc>.*)$")
_RETURNS_LINE = re.compile(r"^(?P<type>[A-Za-z_][\w\[\], .]*?)\s*:\s*(?P<desc>.*)$")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    description: str
    type_tag: str
    required: bool = True
    # None means "no default"; a literal None can never match a type tag anyway.
    default: Any = None

    def __post_init__(self) -> None:
        if self.type_tag not in TYPE_TAGS:
            raise SchemaError(f"parameter {self.name!r}: unknown type tag {self.type_tag!r}")
        if self.default is not None:
            if self.required:
                raise SchemaError(f"parameter {self.name!r}: required parameters take no default")
            if not value_matches_tag(self.default, self.type_tag):
                raise SchemaError(
                    f"parameter {self.name!r}: default {self.default!r} is not {self.type_tag}"
                )


@dataclass(frozen=True)
class Returns:
    type_tag: str
    description: str = ""


@dataclass(frozen=True)
class FunctionSchema:
    name: str
    description: str
    arguments: dict[str, ParamSpec] = field(default_factory=dict)
    returns: Returns | None = None
    examples: tuple[str, ...] | None = None

    def check(self) -> None:
        """Raise PreconditionViolation when the schema breaks its invariants."""
        if not self.name.isidentifier():
            raise PreconditionViolation(f"schema name {self.name!r} is not an identifier")
        if not self.description.strip():
            raise PreconditionViolation(f"schema {self.name!r} has an empty description")
        for key, spec in self.arguments.items():
            if key != spec.name:
                raise PreconditionViolation(f"schema {self.name!r}: argument key {key!r} != {spec.name!r}")

    @property
    def required_args(self) -> list[str]:
        return [n for n, p in self.arguments.items() if p.required]


def value_matches_tag(value: Any, tag: str) -> bool:
    if tag == "boolean":
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if tag == "integer":
        return isinstance(value, int)
    if tag == "number":
        return isinstance(value, (int, float))
    if tag == "string":
        return isinstance(value, str)
    if tag == "list":
        return isinstance(value, list)
    if tag == "map":
        return isinstance(value, dict)
    return False


def type_tag_of(annotation: str) -> str:
    """Map a Python annotation or docstring type (``List[str]``, ``int``...) to a type tag."""
    text = annotation.strip()
    m = re.fullmatch(r"(?:typing\.)?Optional\[(.*)\]", text)
    if m:
        text = m.group(1).strip()
    text = re.sub(r"\s*,\s*optional$", "", text)
    if "|" in text:
        parts = [p.strip() for p in text.split("|") if p.strip() != "None"]
        if len(parts) == 1:
            text = parts[0]
    base = re.split(r"[\[(]", text, maxsplit=1)[0].strip().lower()
    base = base.removeprefix("typing.")
    table = {
        "str": "string",
        "string": "string",
        "int": "integer",
        "integer": "integer",
        "float": "number",
        "number": "number",
        "bool": "boolean",
        "boolean": "boolean",
        "list": "list",
        "sequence": "list",
        "tuple": "list",
        "dict": "map",
        "mapping": "map",
        "map": "map",
    }
    if base not in table:
        raise MalformedSignature(f"unsupported type {annotation!r}")
    return table[base]


# source extraction


def _split_sections(doc: str) -> tuple[str, dict[str, list[str]]]:
    lines = doc.splitlines()
    head: list[str] = []
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in lines:
        key = line.strip().rstrip(":").lower() if line.rstrip().endswith(":") else None
        if key in _SECTION_ALIASES and not line.startswith((" ", "\t")):
            name = _SECTION_ALIASES[key]
            if name in sections:
                raise DocstringMismatch(f"repeated docstring section {line.strip()!r}")
            current = sections[name] = []
            continue
        (head if current is None else current).append(line)
    return "\n".join(head).strip(), sections


def _parse_args_section(lines: list[str]) -> dict[str, tuple[str | None, str]]:
    entries: dict[str, tuple[str | None, str]] = {}
    base_indent: int | None = None
    last: str | None = None
    for raw in lines:
        if not raw.strip():
            continue
        indent = len(raw) - len(raw.lstrip())
        if base_indent is None:
            base_indent = indent
        if indent > base_indent and last is not None:
            type_text, desc = entries[last]
            entries[last] = (type_text, (desc + " " + raw.strip()).strip())
            continue
        m = _ARG_LINE.match(raw.strip())
        if indent != base_indent or m is None:
            raise DocstringMismatch(f"cannot parse Args line {raw.strip()!r}")
        name = m.group("name")
        if name in entries:
            raise DuplicateParam(f"Args section lists {name!r} twice")
        entries[name] = (m.group("type"), m.group("desc").strip())
        last = name
    return entries


def _parse_returns_section(lines: list[str]) -> tuple[str | None, str] | None:
    text = inspect.cleandoc("\n".join(lines)) if lines else ""
    if not text or text == "None":
        return None
    first, _, rest = text.partition("\n")
    m = _RETURNS_LINE.match(first.strip())
    if m:
        desc = " ".join([m.group("desc").strip(), " ".join(r.strip() for r in rest.splitlines())]).strip()
        return m.group("type"), desc
    return None, " ".join(r.strip() for r in text.splitlines())


def _literal_default(node: ast.expr, pname: str) -> Any:
    try:
        return ast.literal_eval(node)
    except ValueError as exc:
        raise MalformedSignature(f"default of {pname!r} is not a literal") from exc


def parse_function_source(source: str) -> FunctionSchema:
    """Build a schema from one annotated function with a Google-style docstring."""
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise MalformedSignature(f"unparsable function header: {exc.msg}") from exc
    funcs = [n for n in tree.body if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    if len(funcs) != 1:
        raise MalformedSignature(f"expected exactly one function definition, found {len(funcs)}")
    fn = funcs[0]
    a = fn.args
    if a.vararg or a.kwarg:
        raise MalformedSignature("*args/**kwargs are not supported")

    positional = a.posonlyargs + a.args
    defaults: dict[str, ast.expr] = {}
    for arg, node in zip(positional[len(positional) - len(a.defaults):], a.defaults):
        defaults[arg.arg] = node
    for arg, node in zip(a.kwonlyargs, a.kw_defaults):
        if node is not None:
            defaults[arg.arg] = node

    sig_params = positional + a.kwonlyargs
    seen: set[str] = set()
    for arg in sig_params:
        if arg.arg in seen:
            raise DuplicateParam(f"parameter {arg.arg!r} declared twice")
        seen.add(arg.arg)

    doc = ast.get_docstring(fn, clean=True) or ""
    description, sections = _split_sections(doc)
    documented = _parse_args_section(sections.get("args", []))
    extra = set(documented) - seen
    if extra:
        raise DocstringMismatch(f"Args documents unknown parameters: {sorted(extra)}")

    arguments: dict[str, ParamSpec] = {}
    for arg in sig_params:
        doc_type, doc_desc = documented.get(arg.arg, (None, ""))
        type_text = ast.unparse(arg.annotation) if arg.annotation is not None else doc_type
        if type_text is None:
            raise MalformedSignature(f"parameter {arg.arg!r} has no type")
        tag = type_tag_of(type_text)
        required, default = True, None
        if arg.arg in defaults:
            required = False
            default = _literal_default(defaults[arg.arg], arg.arg)
            if default is not None and not value_matches_tag(default, tag):
                raise MalformedSignature(f"default of {arg.arg!r} does not match type {type_text!r}")
        arguments[arg.arg] = ParamSpec(arg.arg, doc_desc, tag, required, default)

    returns = None
    parsed_ret = _parse_returns_section(sections.get("returns", []))
    ret_annotation = ast.unparse(fn.returns) if fn.returns is not None else None
    if ret_annotation == "None":
        ret_annotation = None
    if parsed_ret is not None or ret_annotation is not None:
        ret_type, ret_desc = parsed_ret if parsed_ret is not None else (None, "")
        type_text = ret_annotation or ret_type
        if type_text is None:
            raise MalformedSignature("Returns section has no type")
        returns = Returns(type_tag_of(type_text), ret_desc)

    examples = None
    if sections.get("example"):
        text = inspect.cleandoc("\n".join(sections["example"]))
        if text:
            examples = (text,)

    return FunctionSchema(fn.name, description, arguments, returns, examples)


# JSON layout


def parse_module_source(source: str) -> list[FunctionSchema]:
    """Schemas for every top-level function in a module, in source order."""
    try:
        tree = ast.parse(source)
    except SyntaxError as exc:
        raise MalformedSignature(f"unparsable module: {exc.msg}") from exc
    return [
        parse_function_source(ast.get_source_segment(source, node, padded=True))
        for node in tree.body
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef))
    ]


def schema_to_dict(schema: FunctionSchema) -> dict[str, Any]:
    args: dict[str, Any] = {}
    for name, p in schema.arguments.items():
        entry: dict[str, Any] = {"description": p.description, "type": p.type_tag, "required": p.required}
        if p.default is not None:
            entry["default"] = p.default
        args[name] = entry
    out: dict[str, Any] = {"name": schema.name, "description": schema.description, "arguments": args}
    if schema.returns is not None:
        out["returns"] = {"type": schema.returns.type_tag, "description": schema.returns.description}
    if schema.examples is not None:
        out["example"] = list(schema.examples)
    return out


def _as_bool(value: Any, where: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("true", "false"):
        return value.lower() == "true"
    raise SchemaError(f"{where}: 'required' must be a boolean")


def schema_from_dict(data: Mapping[str, Any]) -> FunctionSchema:
    for key in ("name", "description", "arguments"):
        if key not in data:
            raise MissingField(key)
    if not isinstance(data["arguments"], dict):
        raise SchemaError("'arguments' must be an object")
    args: dict[str, ParamSpec] = {}
    for pname, entry in data["arguments"].items():
        if not isinstance(entry, dict) or "type" not in entry:
            raise SchemaError(f"argument {pname!r} needs at least a 'type'")
        tag = entry["type"] if entry["type"] in TYPE_TAGS else type_tag_of(entry["type"])
        required = _as_bool(entry.get("required", "default" not in entry), f"argument {pname!r}")
        args[pname] = ParamSpec(pname, entry.get("description", ""), tag, required, entry.get("default"))
    returns = None
    if "returns" in data and data["returns"] is not None:
        r = data["returns"]
        tag = r["type"] if r["type"] in TYPE_TAGS else type_tag_of(r["type"])
        returns = Returns(tag, r.get("description", ""))
    examples = tuple(data["example"]) if data.get("example") is not None else None
    return FunctionSchema(data["name"], data["description"], args, returns, examples)


def serialize_schema(schema: FunctionSchema, indent: int | None = 2) -> str:
    return json.dumps(schema_to_dict(schema), indent=indent, ensure_ascii=False)


def deserialize_schema(text: str) -> FunctionSchema:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaParseError(exc.msg, len(text[: exc.pos].encode("utf-8"))) from exc
    if not isinstance(data, dict):
        raise SchemaParseError("top-level value is not an object", 0)
    return schema_from_dict(data)


def example_calls(schema: FunctionSchema) -> list[tuple[str, list[str]]]:
    """Calls (name, keyword names) appearing in the schema's example snippets."""
    calls: list[tuple[str, list[str]]] = []
    for snippet in schema.examples or ():
        tree = ast.parse(snippet)
        for node in ast.walk(tree):
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
                calls.append((node.func.id, [k.arg for k in node.keywords if k.arg]))
    return calls


# registry


class SchemaRegistry:
    """Immutable name -> schema map plus per-parameter match modes."""

    def __init__(
        self,
        schemas: Iterable[FunctionSchema] = (),
        match_modes: Mapping[tuple[str, str], str] | None = None,
    ) -> None:
        self._schemas: dict[str, FunctionSchema] = {}
        for s in schemas:
            s.check()
            if s.name in self._schemas:
                raise SchemaError(f"duplicate schema name {s.name!r}")
            self._schemas[s.name] = s
        modes = dict(match_modes or {})
        for (fn, param), mode in modes.items():
            if mode not in MATCH_MODES:
                raise SchemaError(f"match mode for {fn}.{param} must be one of {MATCH_MODES}")
            if fn not in self._schemas or param not in self._schemas[fn].arguments:
                raise SchemaError(f"match mode refers to unknown parameter {fn}.{param}")
        self._modes = modes

    def __len__(self) -> int:
        return len(self._schemas)

    def __iter__(self) -> Iterator[FunctionSchema]:
        return iter(self._schemas.values())

    def __contains__(self, name: object) -> bool:
        return name in self._schemas

    def __getitem__(self, name: str) -> FunctionSchema:
        try:
            return self._schemas[name]
        except KeyError:
            raise UnknownFunction(name) from None

    def get(self, name: str) -> FunctionSchema | None:
        return self._schemas.get(name)

    @property
    def names(self) -> list[str]:
        return list(self._schemas)

    @property
    def match_modes(self) -> dict[tuple[str, str], str]:
        return dict(self._modes)

    def mode(self, function: str, param: str) -> str:
        return self._modes.get((function, param), "exact")

    def select(self, names: Iterable[str]) -> list[FunctionSchema]:
        """Distinct schemas for ``names`` in first-use order."""
        out: list[FunctionSchema] = []
        seen: set[str] = set()
        for n in names:
            if n not in seen:
                out.append(self[n])
                seen.add(n)
        return out

    def subset(self, names: Iterable[str]) -> SchemaRegistry:
        chosen = self.select(names)
        keep = {s.name for s in chosen}
        modes = {k: v for k, v in self._modes.items() if k[0] in keep}
        return SchemaRegistry(chosen, modes)


def _modes_from_json(data: Mapping[str, Mapping[str, str]]) -> dict[tuple[str, str], str]:
    return {(fn, p): m for fn, params in data.items() for p, m in params.items()}


def load_registry(directory: str | Path) -> SchemaRegistry:
    """Load ``<directory>/*.src`` plus an optional ``match_modes.json``."""
    root = Path(directory)
    schemas = [parse_function_source(p.read_text("utf-8")) for p in sorted(root.glob("*.src"))]
    modes_file = root / "match_modes.json"
    modes = _modes_from_json(json.loads(modes_file.read_text("utf-8"))) if modes_file.exists() else {}
    return SchemaRegistry(_bundle_order(schemas, root), modes)


def _bundle_order(schemas: list[FunctionSchema], root: Path) -> list[FunctionSchema]:
    order_file = root / "ORDER"
    if not order_file.exists():
        return schemas
    order = [ln.strip() for ln in order_file.read_text("utf-8").splitlines() if ln.strip()]
    rank = {name: i for i, name in enumerate(order)}
    return sorted(schemas, key=lambda s: (rank.get(s.name, len(rank)), s.name))


def bundled_functions_dir() -> Path:
    return Path(str(resources.files("intentcall") / "data" / "functions"))


_DEFAULT: SchemaRegistry | None = None


def load_default_registry() -> SchemaRegistry:
    """The bundled 24-function registry (cached; registries are immutable)."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_registry(bundled_functions_dir())
    return _DEFAULT
