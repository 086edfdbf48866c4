"""Scoring predicted call plans: exact accuracy, soft accuracy, and the evaluation loop."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .calls import DEFAULT_SEPARATOR, CallPlan, FunctionCall, Ref
from .errors import BackendError, BackendUnavailable, EmptyTestSet, PlanError
from .filters import GenerationRecord
from .llm import LLMBackend
from .prompts import is_code, parse_answer, render_eval_prompt
from .retriever import VectorIndex, cosine, hashed_bow
from .retriever import query as retrieve
from .schema import FunctionSchema, SchemaRegistry

log = logging.getLogger(__name__)

Modes = Mapping[tuple[str, str], str]


@dataclass(frozen=True)
class SemanticScorer:
    backend: str = "deterministic_overlap"
    threshold: float = 0.75
    external: Callable[[str, str], float] | None = None

    def similarity(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        if self.backend == "deterministic_overlap":
            return max(0.0, cosine(hashed_bow(a), hashed_bow(b)))
        if self.external is None:
            raise BackendUnavailable("external similarity backend not configured")
        try:
            value = float(self.external(a, b))
        except Exception as exc:
            raise BackendUnavailable(f"external similarity backend failed: {exc}") from exc
        return min(1.0, max(0.0, value))


def semantic_similarity(a: str, b: str, scorer: SemanticScorer | None = None) -> float:
    return (scorer or SemanticScorer()).similarity(a, b)


RefEq = Callable[[int, int], bool]


def _values_equal(gold: Any, pred: Any, ref_eq: RefEq) -> bool:
    if isinstance(gold, Ref):
        return isinstance(pred, Ref) and ref_eq(gold.id, pred.id)
    if isinstance(gold, bool) or isinstance(pred, bool):
        return type(gold) is type(pred) and gold == pred
    if isinstance(gold, (int, float, str)):
        return type(gold) is type(pred) and gold == pred
    if isinstance(gold, list):
        return (
            isinstance(pred, list)
            and len(gold) == len(pred)
            and all(_values_equal(g, p, ref_eq) for g, p in zip(gold, pred))
        )
    if isinstance(gold, dict):
        return (
            isinstance(pred, dict)
            and gold.keys() == pred.keys()
            and all(_values_equal(gold[k], pred[k], ref_eq) for k in gold)
        )
    return False


def _identity_ref_eq(a: int, b: int) -> bool:
    return a == b


def param_match(
    gold: Any,
    pred: Any,
    mode: str = "exact",
    scorer: SemanticScorer | None = None,
    ref_map: Mapping[int, int] | RefEq | None = None,
) -> bool:
    """Compare one parameter value; ``ref_map`` maps gold call ids to aligned pred ids."""
    if mode == "semantic" and isinstance(gold, str) and isinstance(pred, str):
        scorer = scorer or SemanticScorer()
        return scorer.similarity(gold, pred) >= scorer.threshold
    if ref_map is None:
        ref_eq = _identity_ref_eq
    elif callable(ref_map):
        ref_eq = ref_map
    else:
        mapping = ref_map
        ref_eq = lambda g, p: mapping.get(g) == p  # noqa: E731
    return _values_equal(gold, pred, ref_eq)


@dataclass(frozen=True)
class CallScore:
    gold_call_id: int
    matched_pred_id: int | None
    p_correct: int
    p_total: int
    score: float
    # every gold param matched and pred has no extra params
    exact: bool = False

    @property
    def fraction(self) -> Fraction:
        if self.matched_pred_id is None:
            return Fraction(0)
        return Fraction(self.p_correct, self.p_total) if self.p_total else Fraction(int(self.score))


def score_call(
    gold: FunctionCall,
    pred: FunctionCall | None,
    modes: Modes | None = None,
    scorer: SemanticScorer | None = None,
    ref_map: Mapping[int, int] | RefEq | None = None,
) -> CallScore:
    modes = modes or {}
    p_total = len(gold.arguments)
    if pred is None or pred.name != gold.name:
        return CallScore(gold.id, None, 0, p_total, 0.0, False)
    p_correct = sum(
        1
        for key, value in gold.arguments.items()
        if key in pred.arguments
        and param_match(value, pred.arguments[key], modes.get((gold.name, key), "exact"), scorer, ref_map)
    )
    score = p_correct / p_total if p_total else 1.0
    exact = p_correct == p_total and pred.arguments.keys() == gold.arguments.keys()
    return CallScore(gold.id, pred.id, p_correct, p_total, score, exact)


_BRUTE_FORCE_LIMIT = 8
# above this many joint candidates, groups are aligned independently
_JOINT_LIMIT = 5040


def align_calls(
    gold: CallPlan,
    pred: CallPlan,
    modes: Modes | None = None,
    scorer: SemanticScorer | None = None,
) -> dict[int, int | None]:
    """Pair gold calls with same-named predicted calls.

    Maximises the number of pairs, then the summed soft score, then the number of
    fully exact pairs; remaining ties go to the lexicographically smallest pairs.
    Refs are scored through the candidate pairing itself, so the choice of one
    group can decide whether references in another group line up.
    """
    names = list(dict.fromkeys(c.name for c in gold.calls))
    groups = []
    for name in names:
        g_ids = [c.id for c in gold.calls if c.name == name]
        p_ids = [c.id for c in pred.calls if c.name == name]
        if p_ids:
            groups.append((g_ids, p_ids))
    assignment: dict[int, int | None] = {c.id: None for c in gold.calls}
    small = all(max(len(g_ids), len(p_ids)) <= _BRUTE_FORCE_LIMIT for g_ids, p_ids in groups)
    options = [_max_matchings(g_ids, p_ids) for g_ids, p_ids in groups] if small else []
    if small and math.prod(len(opts) for opts in options) <= _JOINT_LIMIT:
        best_key, best_pairs = None, []
        for combo in itertools.product(*options):
            pairs = sorted(pr for group in combo for pr in group)
            ref_map = dict(pairs)
            scores = [score_call(gold.call(g), pred.call(p), modes, scorer, ref_map) for g, p in pairs]
            key = (sum((s.fraction for s in scores), Fraction(0)), sum(s.exact for s in scores))
            if best_key is None or key > best_key or (key == best_key and pairs < best_pairs):
                best_key, best_pairs = key, pairs
        assignment.update(best_pairs)
        return assignment

    # fallback: align each name group on its own, a Ref matching a Ref whose
    # target calls the same function
    gold_names = {c.id: c.name for c in gold.calls}
    pred_names = {c.id: c.name for c in pred.calls}

    def ref_eq(g: int, p: int) -> bool:
        return g in gold_names and gold_names.get(g) == pred_names.get(p)

    for g_ids, p_ids in groups:
        pair_score: dict[tuple[int, int], tuple[Fraction, int]] = {}
        for g in g_ids:
            for p in p_ids:
                s = score_call(gold.call(g), pred.call(p), modes, scorer, ref_eq)
                pair_score[(g, p)] = (s.fraction, int(s.exact))
        assignment.update(_best_matching(g_ids, p_ids, pair_score))
    return assignment


def _max_matchings(g_ids: list[int], p_ids: list[int]) -> list[list[tuple[int, int]]]:
    size = min(len(g_ids), len(p_ids))
    if len(g_ids) <= len(p_ids):
        return [list(zip(g_ids, perm)) for perm in itertools.permutations(p_ids, size)]
    return [sorted(zip(perm, p_ids)) for perm in itertools.permutations(g_ids, size)]


def _best_matching(
    g_ids: list[int], p_ids: list[int], pair_score: dict[tuple[int, int], tuple[Fraction, int]]
) -> list[tuple[int, int]]:
    if max(len(g_ids), len(p_ids)) > _BRUTE_FORCE_LIMIT:
        return _assignment_solver(g_ids, p_ids, pair_score)
    best_key = None
    best_pairs: list[tuple[int, int]] = []
    for pairs in _max_matchings(g_ids, p_ids):
        total = sum((pair_score[pr][0] for pr in pairs), Fraction(0))
        exact = sum(pair_score[pr][1] for pr in pairs)
        key = (total, exact)
        if best_key is None or key > best_key or (key == best_key and pairs < best_pairs):
            best_key, best_pairs = key, pairs
    return best_pairs


def _assignment_solver(g_ids, p_ids, pair_score):
    # large same-name groups are rare; fall back to the Hungarian method
    import numpy as np
    from scipy.optimize import linear_sum_assignment

    cost = np.array([[-(float(pair_score[(g, p)][0]) * 2 + pair_score[(g, p)][1] * 1e-3) for p in p_ids] for g in g_ids])
    rows, cols = linear_sum_assignment(cost)
    return sorted((g_ids[r], p_ids[c]) for r, c in zip(rows, cols))


@dataclass
class SampleResult:
    exact: bool
    scores: list[CallScore]
    error: str | None = None
    query: str = ""
    prediction: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "exact": self.exact,
            "error": self.error,
            "prediction": self.prediction,
            "call_scores": [
                {"gold_call_id": s.gold_call_id, "matched_pred_id": s.matched_pred_id,
                 "p_correct": s.p_correct, "p_total": s.p_total, "score": s.score}
                for s in self.scores
            ],
        }


def _zero_scores(gold: GenerationRecord) -> list[CallScore]:
    return [CallScore(c.id, None, 0, len(c.arguments), 0.0) for c in gold.answers]


def score_sample(
    gold: GenerationRecord,
    pred: CallPlan | None,
    modes: Modes | None = None,
    scorer: SemanticScorer | None = None,
) -> SampleResult:
    """Exact-match flag plus one CallScore per gold call (pred=None scores zero)."""
    if pred is None:
        return SampleResult(False, _zero_scores(gold), "no prediction", gold.query)
    assignment = align_calls(gold.plan, pred, modes, scorer)
    ref_map = {g: p for g, p in assignment.items() if p is not None}
    scores = [
        score_call(c, pred.call(assignment[c.id]) if assignment[c.id] is not None else None, modes, scorer, ref_map)
        for c in gold.answers
    ]
    exact = len(pred) == len(gold.answers) and all(s.exact for s in scores)
    return SampleResult(exact, scores, None, gold.query)


@dataclass
class EvalReport:
    n_total: int
    n_perfect: int
    acc: float
    acc_soft: float
    call_scores: list[CallScore] = field(default_factory=list)
    samples: list[SampleResult] = field(default_factory=list)
    partial: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_total": self.n_total,
            "n_perfect": self.n_perfect,
            "acc": self.acc,
            "acc_soft": self.acc_soft,
            "partial": self.partial,
            "samples": [s.to_dict() for s in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


def aggregate(results: Sequence[SampleResult]) -> EvalReport:
    if not results:
        raise EmptyTestSet("cannot aggregate an empty result list")
    n_perfect = sum(1 for r in results if r.exact)
    call_scores = [s for r in results for s in r.scores]
    acc_soft = sum(s.score for s in call_scores) / len(call_scores) if call_scores else 0.0
    return EvalReport(len(results), n_perfect, n_perfect / len(results), acc_soft, call_scores, list(results))


def fake_retrieve(sample: GenerationRecord, registry: SchemaRegistry) -> list[FunctionSchema]:
    """The gold functions of ``sample``, each once, in first-use order."""
    return registry.select(sample.function_names)


def _parse_prediction(text: str, variant: str, separator: tuple[str, str]) -> CallPlan:
    if is_code(variant):
        return parse_answer(text, variant, separator)
    try:
        return parse_answer(text, variant)
    except PlanError:
        # tolerate prose or code fences around the JSON array
        start = text.find("[")
        if start < 0:
            raise
        value, _ = json.JSONDecoder().raw_decode(text, start)
        return parse_answer(json.dumps(value), variant)


def evaluate_model(
    testset: Sequence[GenerationRecord],
    model: LLMBackend,
    variant: str,
    registry: SchemaRegistry,
    scorer: SemanticScorer | None = None,
    retriever: str | VectorIndex = "fake",
    k: int = 4,
    fewshot: Sequence[GenerationRecord] | None = None,
    separator: tuple[str, str] = DEFAULT_SEPARATOR,
    report_path: str | Path | None = None,
) -> EvalReport:
    """Prompt ``model`` on every test sample and score its answers.

    If the backend fails part-way, the samples scored so far are written to
    ``report_path`` (marked partial) before the error propagates.
    """
    scorer = scorer or SemanticScorer()
    modes = registry.match_modes
    results: list[SampleResult] = []
    for sample in testset:
        if retriever == "fake":
            functions = fake_retrieve(sample, registry)
        else:
            hits = retrieve(retriever, sample.query, min(k, len(retriever)))
            functions = [registry[name] for name, _ in hits]
        system, user = render_eval_prompt(variant, functions, sample.query, fewshot, separator)
        try:
            text = model.complete(user, system=system)
        except BackendError:
            if report_path is not None and results:
                report = aggregate(results)
                report.partial = True
                Path(report_path).write_text(report.to_json(), "utf-8")
            raise
        try:
            pred = _parse_prediction(text, variant, separator)
        except (PlanError, ValueError) as exc:
            log.info("unparsable prediction for %r: %s", sample.query, exc)
            result = SampleResult(False, _zero_scores(sample), f"parse failure: {exc}", sample.query, text)
        else:
            result = score_sample(sample, pred, modes, scorer)
            result.prediction = text
        results.append(result)
    return aggregate(results)
