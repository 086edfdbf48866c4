"""Fixture builders and independent oracles shared by the test modules."""

from __future__ import annotations

import itertools
import json
import math
import random
import re
from collections import Counter
from fractions import Fraction

from intentcall.calls import CallPlan, FunctionCall, Ref
from intentcall.digest import fnv1a_64
from intentcall.evaluation import fake_retrieve
from intentcall.filters import GenerationRecord
from intentcall.llm import MockBackend
from intentcall.prompts import render_eval_prompt

# Two reference records as wire-format values: a single alarm and an independent timer plus dial.
ALARM_RECORD = {
    "query": "Wake me up at 8:30",
    "answers": [{"id": 0, "name": "ACTION_SET_ALARM", "arguments": {"EXTRA_HOUR": 8, "EXTRA_MINUTE": 30}}],
}
TIMER_DIAL_RECORD = {
    "query": "Set a timer for 30 minutes and dial 123456",
    "answers": [
        {"id": 0, "name": "ACTION_SET_TIMER", "arguments": {"duration": "30 minutes"}},
        {"id": 1, "name": "dial", "arguments": {"phone_number": "123456"}},
    ],
}


def record(query: str, *calls: tuple[str, dict]) -> GenerationRecord:
    return GenerationRecord(query, tuple(FunctionCall(i, n, a) for i, (n, a) in enumerate(calls)))


def plan(*calls: tuple[str, dict]) -> CallPlan:
    return CallPlan(tuple(FunctionCall(i, n, a) for i, (n, a) in enumerate(calls)))


# 200-record test fixture

_PEOPLE = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Grace", "Heidi", "Ivan", "Judy", "Mallory", "Niaj"]
_TOPICS = [
    "budget review", "team lunch", "dentist appointment", "quarterly planning", "guitar lesson",
    "parent teacher meeting", "car service", "yoga class", "project kickoff", "book club",
]
_PLACES = ["coffee shops near me", "Central Park", "the nearest pharmacy", "gas stations on Route 9", "Louvre Museum"]
_SEARCHES = ["weather tomorrow in Paris", "how to bake sourdough bread", "latest football scores",
             "python list comprehension", "best hiking trails nearby"]
_PAGES = ["wifi", "bluetooth", "display", "sound", "location", "apps", "date"]


def _phone(rng: random.Random) -> str:
    return "".join(rng.choice("0123456789") for _ in range(rng.randint(6, 10)))


def _alarm(rng, i):
    h, m = rng.randint(0, 23), rng.randint(0, 59)
    if rng.random() < 0.5:
        return record(f"Wake me up at {h}:{m:02d}", ("ACTION_SET_ALARM", {"EXTRA_HOUR": h, "EXTRA_MINUTE": m}))
    label = rng.choice(_TOPICS)
    return record(f"Set an alarm at {h}:{m:02d} labelled {label}",
                  ("ACTION_SET_ALARM", {"EXTRA_HOUR": h, "EXTRA_MINUTE": m, "EXTRA_MESSAGE": label}))


def _timer_dial(rng, i):
    n, phone = rng.randint(1, 90), _phone(rng)
    return record(f"Set a timer for {n} minutes and dial {phone}",
                  ("ACTION_SET_TIMER", {"duration": f"{n} minutes"}), ("dial", {"phone_number": phone}))


def _event(rng, i):
    day, start = rng.randint(1, 28), rng.randint(8, 17)
    title = rng.choice(_TOPICS)
    return record(f"Put {title} on my calendar on May {day} at {start}:00", (
        "ACTION_INSERT_EVENT",
        {"TITLE": title, "EXTRA_EVENT_BEGIN_TIME": f"2024-05-{day:02d}T{start:02d}:00:00",
         "EXTRA_EVENT_END_TIME": f"2024-05-{day:02d}T{start + 1:02d}:00:00"},
    ))


def _text_contact(rng, i):
    name, topic = rng.choice(_PEOPLE), rng.choice(_TOPICS)
    return record(f"Text {name} that the {topic} moved to Friday",
                  ("get_contact_info", {"name": name, "key": "phone"}),
                  ("send_message", {"phone_number": Ref(0), "content": f"The {topic} moved to Friday"}))


def _photo_email(rng, i):
    who = rng.choice(_PEOPLE).lower()
    return record(f"Take a photo and email it to {who}@example.com",
                  ("ACTION_IMAGE_CAPTURE", {}),
                  ("send_email", {"to": [f"{who}@example.com"], "subject": "Photo", "attachments": [Ref(0)]}))


def _search(rng, i):
    q = rng.choice(_SEARCHES)
    return record(f"Search the web for {q}", ("web_search", {"query": q}))


def _map(rng, i):
    q = rng.choice(_PLACES)
    return record(f"Show me {q} on the map", ("search_location", {"query": q}))


def _settings(rng, i):
    page = rng.choice(_PAGES)
    return record(f"Open the {page} settings", ("open_settings", {"setting_type": page}))


def _view_contact(rng, i):
    name = rng.choice(_PEOPLE)
    return record(f"Show me {name}'s contact card",
                  ("get_contact_uri", {"name": name}), ("ACTION_VIEW_CONTACT", {"contact_uri": Ref(0)}))


def _add_contact(rng, i):
    name, phone = rng.choice(_PEOPLE), _phone(rng)
    return record(f"Save {name} with number {phone}", ("ACTION_INSERT_CONTACT", {"name": name, "phone": phone}))


def _alarm_show(rng, i):
    h = rng.randint(5, 9)
    return record(f"Set an alarm for {h} am then show me my alarms",
                  ("ACTION_SET_ALARM", {"EXTRA_HOUR": h, "EXTRA_MINUTE": 0}), ("ACTION_SHOW_ALARMS", {}))


_BUILDERS = [_alarm, _timer_dial, _event, _text_contact, _photo_email, _search, _map, _settings,
             _view_contact, _add_contact, _alarm_show]


def build_testset(n: int = 200, seed: int = 2024) -> list[GenerationRecord]:
    rng = random.Random(seed)
    return [_BUILDERS[i % len(_BUILDERS)](rng, i) for i in range(n)]


def corrupt_one(rec: GenerationRecord) -> tuple[GenerationRecord, int]:
    """Change one literal argument of the first call that has one; returns the record and call id."""
    calls = list(rec.answers)
    for idx, call in enumerate(calls):
        literal_keys = sorted(k for k, v in call.arguments.items() if not isinstance(v, Ref) and not _has_ref(v))
        if not literal_keys:
            continue
        key = literal_keys[0]
        value = call.arguments[key]
        if isinstance(value, bool):
            new = not value
        elif isinstance(value, int):
            new = value + 1
        elif isinstance(value, str):
            new = "xylophone quartz"
        elif isinstance(value, list):
            new = value + ["intruder@example.com"]
        else:
            raise AssertionError(f"unhandled literal {value!r}")
        calls[idx] = FunctionCall(call.id, call.name, {**call.arguments, key: new})
        return GenerationRecord(rec.query, tuple(calls)), call.id
    raise AssertionError(f"record has no literal argument: {rec.query}")


def _has_ref(value) -> bool:
    if isinstance(value, Ref):
        return True
    if isinstance(value, list):
        return any(_has_ref(v) for v in value)
    if isinstance(value, dict):
        return any(_has_ref(v) for v in value.values())
    return False


# random plans over a registry


_ALPHABET = "abcdefghij XYZ019_-\"\\/#é中 \t\n"


def random_string(rng: random.Random) -> str:
    while True:
        s = "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(0, 12)))
        # "#<digits>" is the reference spelling in the JSON wire format, so it cannot be a literal
        if not (s.startswith("#") and s[1:].isdigit() and len(s) > 1):
            return s


def random_literal(rng: random.Random, tag: str, depth: int = 0):
    if tag == "string":
        return random_string(rng)
    if tag == "integer":
        return rng.randint(-10**6, 10**6)
    if tag == "number":
        return rng.choice([rng.uniform(-1e3, 1e3), rng.randint(-50, 50) / 4, 1e-7, 2.5e10, 0.0])
    if tag == "boolean":
        return rng.random() < 0.5
    inner = ["string", "integer", "number", "boolean"] + (["list", "map"] if depth < 2 else [])
    if tag == "list":
        return [random_literal(rng, rng.choice(inner), depth + 1) for _ in range(rng.randint(0, 3))]
    if tag == "map":
        return {random_string(rng) or "k": random_literal(rng, rng.choice(inner), depth + 1)
                for _ in range(rng.randint(0, 3))}
    raise AssertionError(tag)


def _maybe_ref(rng: random.Random, value, call_id: int):
    if call_id == 0 or rng.random() > 0.25:
        return value
    ref = Ref(rng.randrange(call_id))
    if isinstance(value, list) and value and rng.random() < 0.5:
        return value[:-1] + [ref]
    if isinstance(value, dict) and value and rng.random() < 0.5:
        return {**value, next(iter(value)): ref}
    return ref


def random_plan(rng: random.Random, registry, max_calls: int = 4) -> CallPlan:
    schemas = list(registry)
    calls = []
    for call_id in range(rng.randint(1, max_calls)):
        schema = rng.choice(schemas)
        args = {}
        for p in schema.arguments.values():
            if p.required or rng.random() < 0.5:
                args[p.name] = _maybe_ref(rng, random_literal(rng, p.type_tag), call_id)
        calls.append(FunctionCall(call_id, schema.name, args))
    return CallPlan(tuple(calls))


# ROUGE-L oracle: longest common subsequence by enumerating subsequences


def _subsequences(seq) -> set:
    return {tuple(seq[i] for i in idx) for r in range(len(seq) + 1) for idx in itertools.combinations(range(len(seq)), r)}


def lcs_brute(a, b) -> int:
    common = _subsequences(a) & _subsequences(b)
    return max(len(s) for s in common)


def rouge_oracle(cand, ref, lcs=lcs_brute) -> Fraction:
    L = lcs(cand, ref)
    p = Fraction(L, len(cand)) if cand else Fraction(0)
    r = Fraction(L, len(ref)) if ref else Fraction(0)
    return 2 * p * r / (p + r) if p + r else Fraction(0)


# metric oracle: joint brute force over every name-respecting assignment


def _fnv(text: str) -> int:
    h = 14695981039346656037
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 1099511628211) % 2**64
    return h


def counter_cosine(a: str, b: str, dim: int = 256) -> float:
    """Cosine of bucket-count vectors, computed with plain integers and one sqrt."""
    ca = Counter(_fnv(t) % dim for t in a.lower().split())
    cb = Counter(_fnv(t) % dim for t in b.lower().split())
    dot = sum(ca[t] * cb[t] for t in ca)
    na, nb = math.sqrt(sum(v * v for v in ca.values())), math.sqrt(sum(v * v for v in cb.values()))
    return dot / (na * nb) if na and nb else 0.0


def _same(g, p, mapping) -> bool:
    if isinstance(g, Ref):
        return isinstance(p, Ref) and mapping.get(g.id) == p.id
    if type(g) is not type(p):
        return False
    if isinstance(g, list):
        return len(g) == len(p) and all(_same(x, y, mapping) for x, y in zip(g, p))
    if isinstance(g, dict):
        return set(g) == set(p) and all(_same(g[k], p[k], mapping) for k in g)
    return g == p


def _param_ok(g, p, semantic: bool, mapping) -> bool:
    if semantic and isinstance(g, str) and isinstance(p, str):
        return g == p or counter_cosine(g, p) >= 0.75
    return _same(g, p, mapping)


def oracle_sample(gold: list[FunctionCall], pred: list[FunctionCall] | None, semantic: set) -> tuple[bool, list[Fraction]]:
    """Best per-call fractions over all assignments, and whether some bijection is a perfect match."""
    if pred is None:
        return False, [Fraction(0)] * len(gold)
    options = [[None] + [j for j, pc in enumerate(pred) if pc.name == gc.name] for gc in gold]
    best, perfect = None, False
    for choice in itertools.product(*options):
        used = [c for c in choice if c is not None]
        if len(used) != len(set(used)):
            continue
        mapping = {gold[i].id: pred[c].id for i, c in enumerate(choice) if c is not None}
        fracs, exact_all = [], True
        for i, c in enumerate(choice):
            gc = gold[i]
            if c is None:
                fracs.append(Fraction(0))
                exact_all = False
                continue
            pc = pred[c]
            ok = sum(1 for k, v in gc.arguments.items()
                     if k in pc.arguments and _param_ok(v, pc.arguments[k], (gc.name, k) in semantic, mapping))
            fracs.append(Fraction(ok, len(gc.arguments)) if gc.arguments else Fraction(1))
            exact_all &= ok == len(gc.arguments) and set(pc.arguments) == set(gc.arguments)
        if best is None or sum(fracs) > sum(best):
            best = fracs
        if exact_all and len(pred) == len(gold):
            perfect = True
    return perfect, best


# 50-sample metric fixture: gold records paired with hand-shaped predictions


def _rename(value, where):
    if isinstance(value, Ref):
        return Ref(where[value.id])
    if isinstance(value, list):
        return [_rename(v, where) for v in value]
    if isinstance(value, dict):
        return {k: _rename(v, where) for k, v in value.items()}
    return value


def _reorder(calls: list[FunctionCall], order: list[int]) -> list[FunctionCall]:
    where = {old: new for new, old in enumerate(order)}
    return [FunctionCall(new, calls[old].name, _rename(calls[old].arguments, where)) for new, old in enumerate(order)]


def _perturb(kind: str, gold: GenerationRecord, rng: random.Random) -> list[FunctionCall] | None:
    calls = list(gold.answers)
    if kind == "same":
        return calls
    if kind == "unparsable":
        return None
    if kind == "corrupt":
        return list(corrupt_one(gold)[0].answers)
    if kind == "drop_last":
        return calls[:-1]
    if kind == "extra":
        return calls + [FunctionCall(len(calls), "ACTION_SHOW_TIMERS", {})]
    if kind == "reverse":
        return _reorder(calls, list(range(len(calls)))[::-1])
    if kind == "extra_param":
        c = calls[0]
        return [FunctionCall(c.id, c.name, {**c.arguments, "made_up": 1})] + calls[1:]
    if kind == "drop_param":
        c = calls[-1]
        keys = sorted(c.arguments)
        return calls[:-1] + [FunctionCall(c.id, c.name, {k: c.arguments[k] for k in keys[1:]})]
    if kind == "wrong_name":
        return [FunctionCall(c.id, "web_search" if c.name != "web_search" else "search_location", c.arguments)
                for c in calls]
    if kind == "broken_ref":
        # references retargeted at a fabricated call of the same function
        out = [FunctionCall(len(calls), calls[0].name, calls[0].arguments)] + calls
        return _reorder(out, list(range(len(out))))
    if kind == "shuffle_types":
        return [FunctionCall(c.id, c.name, {k: (str(v) if isinstance(v, int) and not isinstance(v, bool) else v)
                                            for k, v in c.arguments.items()}) for c in calls]
    raise AssertionError(kind)


_KINDS = ["same", "unparsable", "corrupt", "drop_last", "extra", "reverse", "extra_param", "drop_param",
          "wrong_name", "broken_ref", "shuffle_types"]


def _semantic_cases() -> list[tuple[GenerationRecord, list[FunctionCall]]]:
    event = {"EXTRA_EVENT_BEGIN_TIME": "2024-05-02T10:00:00", "EXTRA_EVENT_END_TIME": "2024-05-02T11:00:00"}
    cases = []
    for gold_title, pred_title in [("project meeting notes", "meeting notes for project"),
                                   ("Catch up over lunch", "Lunch catch-up"),
                                   ("Team sync", "team sync")]:
        gold = record(f"Add {gold_title} to my calendar", ("ACTION_INSERT_EVENT", {"TITLE": gold_title, **event}))
        cases.append((gold, [FunctionCall(0, "ACTION_INSERT_EVENT", {"TITLE": pred_title, **event})]))
    # two same-named lookups feeding two messages: only the crossed pairing keeps the refs straight
    gold = record("Text Bob and Carol",
                  ("get_contact_info", {"name": "Bob", "key": "phone"}),
                  ("get_contact_info", {"name": "Carol", "key": "phone"}),
                  ("send_message", {"phone_number": Ref(0), "content": "hi Bob"}),
                  ("send_message", {"phone_number": Ref(1), "content": "hi Carol"}))
    pred = [FunctionCall(0, "get_contact_info", {"name": "Carol", "key": "phone"}),
            FunctionCall(1, "get_contact_info", {"name": "Bob", "key": "phone"}),
            FunctionCall(2, "send_message", {"phone_number": Ref(1), "content": "hi Bob"}),
            FunctionCall(3, "send_message", {"phone_number": Ref(1), "content": "hi Carol"})]
    cases.append((gold, pred))
    return cases


def metric_fixture(n: int = 50, seed: int = 7) -> list[tuple[GenerationRecord, list[FunctionCall] | None]]:
    rng = random.Random(seed)
    golds = build_testset(n, seed=seed)
    cases = _semantic_cases()
    for i, gold in enumerate(golds[: n - len(cases)]):
        cases.append((gold, _perturb(_KINDS[i % len(_KINDS)], gold, rng)))
    return cases


def oracle_aggregate(cases, semantic: set) -> tuple[Fraction, Fraction]:
    """Acc and Acc_soft straight from the two formulas, as exact fractions."""
    n_perfect, fracs = 0, []
    for gold, pred in cases:
        perfect, best = oracle_sample(list(gold.answers), pred, semantic)
        n_perfect += perfect
        fracs.extend(best)
    return Fraction(n_perfect, len(cases)), sum(fracs, Fraction(0)) / len(fracs)


def answering_mock(testset, variant: str, registry, answer, fewshot=None):
    """MockBackend whose script maps each sample's fake-retriever prompt to ``answer(sample)``."""
    mock = MockBackend()
    for sample in testset:
        system, user = render_eval_prompt(variant, fake_retrieve(sample, registry), sample.query, fewshot)
        mock.add(user, answer(sample), system=system)
    return mock


# a synthetic generator LLM: reads the tools and batch size off the prompt


_SYLLABLES = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "po", "qua", "fi", "de", "gu", "ha", "jo"]
_VOCAB = sorted({a + b + c for a in _SYLLABLES for b in _SYLLABLES for c in ("", "n", "r")})


def _tool_names(prompt: str) -> list[str]:
    return list(dict.fromkeys(re.findall(r'"name": "(\w+)",\s*\n\s*"description"', prompt)))


def _batch_size(prompt: str) -> int:
    m = re.search(r"generate (\d+) query-answer pairs", prompt)
    return int(m.group(1)) if m else 1


class SyntheticLLM:
    """Deterministic stand-in for a generator model.

    Each reply holds ``valid`` (or the requested count, when ``valid`` is None)
    well-formed records over the prompt's tools, then ``malformed`` broken ones
    and ``duplicates`` verbatim repeats of earlier queries, wrapped in prose.
    """

    def __init__(self, registry, valid: int | None = 3, malformed: int = 1, duplicates: int = 0, words: int = 8):
        self.registry = registry
        self.valid, self.malformed, self.duplicates, self.words = valid, malformed, duplicates, words
        self.calls = 0

    def _record(self, rng: random.Random, names: list[str]) -> dict:
        answers = []
        for i, name in enumerate(names):
            schema = self.registry[name]
            args = {p.name: random_literal(rng, p.type_tag) for p in schema.arguments.values() if p.required}
            answers.append({"id": i, "name": name, "arguments": args})
        query = " ".join(rng.choice(_VOCAB) for _ in range(self.words))
        return {"query": query, "answers": answers}

    def __call__(self, prompt: str) -> str:
        self.calls += 1
        rng = random.Random(fnv1a_64(prompt.encode("utf-8")))
        names = _tool_names(prompt)
        n = _batch_size(prompt) if self.valid is None else self.valid
        items = [self._record(rng, names) for _ in range(n)]
        for j in range(self.malformed):
            items.insert(rng.randrange(len(items) + 1), {"query": f"broken {j}", "answers": [{"id": 0}]})
        for _ in range(self.duplicates):
            src = rng.choice([it for it in items if "name" in it["answers"][0]])
            items.append({"query": src["query"], "answers": src["answers"]})
        return "Sure, here you go:\n```json\n" + json.dumps(items, indent=2) + "\n```\nHope that helps."

    def complete(self, prompt: str, system: str | None = None) -> str:
        return self(prompt if system is None else f"{system}\n\n{prompt}")
