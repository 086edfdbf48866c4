import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from helpers import ALARM_RECORD, TIMER_DIAL_RECORD, plan, random_plan
from intentcall.calls import (
    CallPlan,
    FunctionCall,
    Ref,
    canonicalize,
    check_acyclic,
    parse_code_answer,
    parse_json_answer,
    plan_key,
    plans_equal,
    render_code_answer,
    render_json_answer,
    render_literal,
    topo_order,
    validate_plan,
)
from intentcall.errors import (
    BadCallShape,
    BadReference,
    CycleDetected,
    NotJson,
    PlanSyntaxError,
    UnboundResultVar,
)
from intentcall.schema import load_default_registry

REG = load_default_registry()


def test_timer_dial_json_has_no_edges():
    p = parse_json_answer(json.dumps(TIMER_DIAL_RECORD["answers"]))
    assert [c.name for c in p] == ["ACTION_SET_TIMER", "dial"]
    assert p.edges == set()


def test_hash_reference_becomes_edge():
    text = '[{"id":0,"name":"g","arguments":{}},{"id":1,"name":"f","arguments":{"arg2":"#0","note":"item #3"}}]'
    p = parse_json_answer(text)
    assert p.call(1).arguments == {"arg2": Ref(0), "note": "item #3"}
    assert p.edges == {(1, 0)}


@pytest.mark.parametrize("text, err", [
    ('[{"id":0,"name":"f","arguments":{"x":"#0"}}]', BadReference),
    ('[{"id":0,"name":"f","arguments":{"x":"#4"}}]', BadReference),
    ('[{"id":0,"name":"f","arguments":{"x":"#1"}},{"id":1,"name":"g","arguments":{"y":"#0"}}]', BadReference),
    ("not json", NotJson),
    ('[{"arguments":{}}]', BadCallShape),
    ('[{"id":0,"name":"f","arguments":[]}]', BadCallShape),
    ('{"x": 1}', BadCallShape),
])
def test_json_answer_errors(text, err):
    with pytest.raises(err):
        parse_json_answer(text)


def test_ids_renumbered_when_absent():
    p = parse_json_answer('[{"name":"g","arguments":{}},{"name":"f","arguments":{"a":"#0"}}]')
    assert p.ids == [0, 1] and p.edges == {(1, 0)}


def test_code_timer_dial():
    text = 'result1 = ACTION_SET_TIMER(duration="30 minutes")\nresult2 = dial(phone_number="123456")'
    p = parse_code_answer(text)
    assert [c.arguments for c in p] == [{"duration": "30 minutes"}, {"phone_number": "123456"}]
    assert p.edges == set()


def test_code_result_reference():
    p = parse_code_answer("<sep>result1 = g()\nresult2 = f(x=result1)</sep>")
    assert p.edges == {(1, 0)}
    assert p.call(1).arguments == {"x": Ref(0)}


def test_code_unbound_result():
    with pytest.raises(UnboundResultVar):
        parse_code_answer("result2 = f(x=result9)")


@pytest.mark.parametrize("text", [
    "result1 = f(x=)",
    "result1 = f(x=g())",
    "result1 = f(x=1",
    'result1 = f(x="\\q")',
    "f(x=1)",
])
def test_code_syntax_errors(text):
    with pytest.raises(PlanSyntaxError) as info:
        parse_code_answer(text)
    assert info.value.line == 1


def test_code_literals():
    p = parse_code_answer('r = f(a=-3, b=2.5, c=true, d=[1, "x"], e={"k": false}, g=1e3, h="é\\n")')
    assert p.call(0).arguments == {"a": -3, "b": 2.5, "c": True, "d": [1, "x"], "e": {"k": False}, "g": 1000.0,
                                   "h": "é\n"}
    assert type(p.call(0).arguments["g"]) is float


def test_render_literal_rules():
    assert render_literal("a\"b") == '"a\\"b"'
    assert render_literal(True) == "true"
    assert render_literal([1, Ref(0)]) == "[1, result1]"
    assert render_literal({"k": 2.0}) == '{"k": 2.0}'


def test_code_render_timer_dial_wrapped():
    p = parse_json_answer(json.dumps(TIMER_DIAL_RECORD["answers"]))
    text = render_code_answer(p, ("<sep>", "</sep>"))
    assert text == ('<sep>result1 = ACTION_SET_TIMER(duration="30 minutes")\n'
                    'result2 = dial(phone_number="123456")</sep>')
    assert parse_code_answer(text) == p


def test_validate_plan():
    assert validate_plan(parse_json_answer(json.dumps(ALARM_RECORD["answers"])), REG) == []
    kinds = [v.kind for v in validate_plan(plan(("dial", {})), REG)]
    assert kinds == ["MissingRequiredArgument"]
    kinds = [v.kind for v in validate_plan(plan(("ACTION_SET_ALARM", {"EXTRA_HOUR": "8", "EXTRA_MINUTE": 0})), REG)]
    assert kinds == ["TypeMismatch"]
    kinds = [v.kind for v in validate_plan(plan(("nope", {})), REG)]
    assert kinds == ["UnknownFunction"]
    kinds = [v.kind for v in validate_plan(plan(("dial", {"phone_number": "1", "x": 1})), REG)]
    assert kinds == ["UnknownArgument"]
    # a Ref satisfies a required argument and is not type checked
    ok = plan(("get_contact_info", {"name": "Bob", "key": "phone"}), ("dial", {"phone_number": Ref(0)}))
    assert validate_plan(ok, REG) == []


def test_topo_order():
    assert topo_order(plan(("a", {}), ("b", {}), ("c", {}))) == [0, 1, 2]
    assert topo_order(plan(("a", {}), ("b", {"x": Ref(0)}))) == [0, 1]
    assert topo_order(plan(("a", {"x": Ref(2)}), ("b", {}), ("c", {}))) == [1, 2, 0]
    cyclic = CallPlan((FunctionCall(0, "a", {"x": Ref(1)}), FunctionCall(1, "b", {"y": Ref(0)})))
    with pytest.raises(CycleDetected) as info:
        topo_order(cyclic)
    assert set(info.value.cycle) == {0, 1}
    with pytest.raises(BadReference):
        check_acyclic(cyclic)


def test_canonical_equality():
    a = plan(("f", {"a": 1, "b": "x"}))
    b = plan(("f", {"b": "x", "a": 1}))
    assert plans_equal(a, b) and plan_key(a) == plan_key(b)
    assert not plans_equal(a, plan(("f", {"a": 1, "b": "y"})))
    assert not plans_equal(plan(("f", {"a": 8})), plan(("f", {"a": 8.0})))
    # naming of result variables does not matter
    x = parse_code_answer("result1 = g()\nresult2 = f(x=result1)")
    y = parse_code_answer("first = g()\nsecond = f(x=first)")
    assert plans_equal(x, y)


def test_plans_equal_up_to_renumbering():
    a = plan(("g", {}), ("f", {"x": Ref(0)}), ("dial", {"p": "1"}))
    b = plan(("dial", {"p": "1"}), ("g", {}), ("f", {"x": Ref(1)}))
    c = plan(("dial", {"p": "1"}), ("g", {}), ("f", {"x": Ref(0)}))
    assert plans_equal(a, b)
    assert not plans_equal(a, c)


def test_round_trip_on_reference_plans():
    for value in (ALARM_RECORD, TIMER_DIAL_RECORD):
        p = parse_json_answer(json.dumps(value["answers"]))
        assert plan_key(parse_json_answer(render_json_answer(p))) == plan_key(p)
        assert plan_key(parse_code_answer(render_code_answer(p))) == plan_key(p)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_round_trip_property(seed):
    p = canonicalize(random_plan(random.Random(seed), REG))
    assert plan_key(canonicalize(parse_json_answer(render_json_answer(p)))) == plan_key(p)
    assert plan_key(canonicalize(parse_code_answer(render_code_answer(p)))) == plan_key(p)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.randoms(use_true_random=False))
def test_plans_equal_is_permutation_invariant(seed, shuffler):
    p = random_plan(random.Random(seed), REG)
    order = list(range(len(p)))
    shuffler.shuffle(order)
    where = {old: new for new, old in enumerate(order)}
    moved = CallPlan(tuple(
        FunctionCall(new, p.call(old).name, _remap(p.call(old).arguments, where)) for new, old in enumerate(order)
    ))
    assert plans_equal(p, moved) and plans_equal(moved, p)
    assert plans_equal(p, p)


def _remap(value, where):
    if isinstance(value, Ref):
        return Ref(where[value.id])
    if isinstance(value, list):
        return [_remap(v, where) for v in value]
    if isinstance(value, dict):
        return {k: _remap(v, where) for k, v in value.items()}
    return value


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_parsers_never_crash_unexpectedly(text):
    for parse in (parse_json_answer, parse_code_answer):
        try:
            p = parse(text)
        except (NotJson, BadCallShape, BadReference, PlanSyntaxError, UnboundResultVar):
            continue
        topo_order(p)
