"""Two-stage self-instruct data generation: seed stage from an external corpus, main stage from seeds."""

from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib.resources import files
from string import Template
from typing import Any, Callable, Iterable, MutableMapping, Sequence

from .errors import ConfigError, InsufficientRecords, ModeArityMismatch, PreconditionViolation
from .filters import DEFAULT_THRESHOLD, FilterChain, FilterOutcome, GenerationRecord, RejectedValue
from .llm import LLMBackend, LLMBackendConfig
from .schema import FunctionSchema, SchemaRegistry, serialize_schema

log = logging.getLogger(__name__)

SEED_BATCH = 15
MAIN_BATCH = 40
EXAMPLES_PER_PROMPT = 3
UNIFORM = "uniform_without_replacement"


@dataclass
class DataSource:
    """Append-only list of example records (corpus rows, seeds, ...)."""

    id: str
    records: list[Any] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> Any:
        return self.records[index]

    def append(self, record: Any) -> None:
        self.records.append(record)

    def extend(self, records: Iterable[Any]) -> None:
        self.records.extend(records)


def sample(source: DataSource | Sequence[Any], k: int, strategy: str = UNIFORM, rng_seed: int = 0) -> list[Any]:
    if strategy != UNIFORM:
        raise ValueError(f"unsupported sampling strategy {strategy!r}")
    records = source.records if isinstance(source, DataSource) else list(source)
    if k < 0 or k > len(records):
        raise InsufficientRecords(f"cannot draw {k} records from a source of {len(records)}")
    return random.Random(rng_seed).sample(records, k)


def _check_arity(mode: str, n: int) -> None:
    if mode == "simple" and n != 1:
        raise ModeArityMismatch(f"simple mode takes exactly 1 function, got {n}")
    if mode == "complex" and not 2 <= n <= 3:
        raise ModeArityMismatch(f"complex mode takes 2 or 3 functions, got {n}")
    if mode not in ("simple", "complex"):
        raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class GenerationJob:
    stage: str
    mode: str
    target_schemas: tuple[FunctionSchema, ...]
    example_count: int = EXAMPLES_PER_PROMPT
    examples: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        if self.stage not in ("seed", "main"):
            raise ValueError(f"unknown stage {self.stage!r}")
        _check_arity(self.mode, len(self.target_schemas))
        if self.example_count < 0:
            raise PreconditionViolation("example_count must be >= 0")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.target_schemas]

    @property
    def key(self) -> str:
        return pool_key(self.names)


def pool_key(names: Iterable[str]) -> str:
    """Seed pools are keyed by the sorted set of function names."""
    return "+".join(sorted(set(names)))


# prompt rendering


@lru_cache(maxsize=None)
def _template(name: str) -> Template:
    return Template(files("intentcall").joinpath("data", "templates", f"{name}.txt").read_text("utf-8"))


def _as_schemas(schemas: FunctionSchema | Sequence[FunctionSchema]) -> list[FunctionSchema]:
    return [schemas] if isinstance(schemas, FunctionSchema) else list(schemas)


def _tool_text(schemas: Sequence[FunctionSchema]) -> str:
    for s in schemas:
        s.check()
    return "\n".join(serialize_schema(s, indent=4) for s in schemas)


def _dump(value: Any) -> str:
    return json.dumps(value, indent=4, ensure_ascii=False)


def _record_dict(record: Any) -> dict[str, Any]:
    if isinstance(record, GenerationRecord):
        return record.to_dict()
    return {"query": record["query"], "answers": record["answers"]}


def _external_example(record: Any) -> str:
    # corpus rows may carry their own tool list; show it the way the seed examples expect
    head = f"tool: {_dump(record['tools'])}\n" if isinstance(record, dict) and "tools" in record else ""
    return head + f"response: {_dump(_record_dict(record))}"


def render_seed_prompt(
    schemas: FunctionSchema | Sequence[FunctionSchema],
    external_examples: Sequence[Any],
    mode: str = "simple",
    count: int = SEED_BATCH,
) -> str:
    schemas = _as_schemas(schemas)
    _check_arity(mode, len(schemas))
    tools = _tool_text(schemas)
    if not external_examples:
        raise PreconditionViolation("the seed prompt needs at least one example")
    examples = "\n".join(_external_example(e) for e in external_examples)
    name = "seed_simple" if mode == "simple" else "seed_complex"
    return _template(name).substitute(tool=tools, tools=tools, examples=examples, count=count)


def render_main_prompt(
    schemas: FunctionSchema | Sequence[FunctionSchema],
    seed_examples: Sequence[Any],
    mode: str = "simple",
    count: int = MAIN_BATCH,
) -> str:
    schemas = _as_schemas(schemas)
    _check_arity(mode, len(schemas))
    tools = _tool_text(schemas)
    if not seed_examples:
        raise PreconditionViolation("the main prompt needs at least one seed example")
    examples = _dump([_record_dict(r) for r in seed_examples])
    name = "main_simple" if mode == "simple" else "main_complex"
    return _template(name).substitute(tool=tools, tools=tools, examples=examples, count=count)


# stages


def _complete_all(llm: LLMBackend, prompts: list[str], concurrency: int) -> list[str]:
    if concurrency <= 1 or len(prompts) <= 1:
        return [llm.complete(p) for p in prompts]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        # map yields in submission order, so commits stay deterministic
        return list(pool.map(llm.complete, prompts))


def _waves(items: Sequence[Any], size: int) -> Iterable[Sequence[Any]]:
    size = max(1, size)
    for start in range(0, len(items), size):
        yield items[start:start + size]


CommitHook = Callable[[GenerationJob, FilterOutcome], None]


def _run_jobs(
    jobs: Sequence[GenerationJob],
    render: Callable[[GenerationJob], str],
    registry: SchemaRegistry,
    llm: LLMBackend,
    filters: FilterChain,
    concurrency: int,
    commit: CommitHook,
) -> None:
    for wave in _waves(jobs, concurrency):
        prompts = [render(job) for job in wave]
        outputs = _complete_all(llm, prompts, concurrency)
        for job, raw in zip(wave, outputs):
            outcome = filters(raw, registry.subset(job.names))
            if not outcome.accepted:
                log.info("%s job for %s produced no accepted records (%d rejected)",
                         job.stage, job.key, len(outcome.rejected))
            commit(job, outcome)


def run_seed_stage(
    registry: SchemaRegistry,
    external: DataSource,
    llm: LLMBackend,
    filters: FilterChain | None = None,
    per_function_batches: int = 1,
    *,
    complex_sets: Sequence[Sequence[str]] = (),
    batch_size: int = SEED_BATCH,
    examples_per_prompt: int = EXAMPLES_PER_PROMPT,
    rng_seed: int = 0,
    concurrency: int = 1,
    on_commit: CommitHook | None = None,
) -> dict[str, list[GenerationRecord]]:
    """Seed records per pool key (a function name, or ``a+b`` for complex sets)."""
    filters = filters if filters is not None else FilterChain()
    jobs = [
        GenerationJob("seed", "simple", (schema,), examples_per_prompt)
        for schema in registry
        for _ in range(per_function_batches)
    ]
    jobs += [
        GenerationJob("seed", "complex", tuple(registry.select(names)), examples_per_prompt)
        for names in complex_sets
        for _ in range(per_function_batches)
    ]
    if not jobs:
        return {}
    if len(external) == 0:
        raise PreconditionViolation("the external corpus is empty")
    rng = random.Random(rng_seed)
    seeds: dict[str, list[GenerationRecord]] = {job.key: [] for job in jobs}

    def render(job: GenerationJob) -> str:
        k = min(job.example_count, len(external)) or 1
        examples = sample(external, k, rng_seed=rng.getrandbits(32))
        return render_seed_prompt(list(job.target_schemas), examples, job.mode, batch_size)

    def commit(job: GenerationJob, outcome: FilterOutcome) -> None:
        seeds[job.key].extend(outcome.accepted)
        if on_commit:
            on_commit(job, outcome)

    _run_jobs(jobs, render, registry, llm, filters, concurrency, commit)
    return seeds


def make_main_job(registry: SchemaRegistry, names: Sequence[str], example_count: int = EXAMPLES_PER_PROMPT) -> GenerationJob:
    mode = "simple" if len(names) == 1 else "complex"
    return GenerationJob("main", mode, tuple(registry.select(names)), example_count)


def build_schedule(
    registry: SchemaRegistry,
    rounds: int = 1,
    complex_sets: Sequence[Sequence[str]] = (),
    example_count: int = EXAMPLES_PER_PROMPT,
) -> list[GenerationJob]:
    """One simple job per function plus one job per complex set, repeated ``rounds`` times."""
    one_round = [make_main_job(registry, [n], example_count) for n in registry.names]
    one_round += [make_main_job(registry, names, example_count) for names in complex_sets]
    return one_round * rounds


def run_main_stage(
    registry: SchemaRegistry,
    seeds: MutableMapping[str, list[GenerationRecord]],
    llm: LLMBackend,
    filters: FilterChain | None,
    schedule: Sequence[GenerationJob],
    *,
    batch_size: int = MAIN_BATCH,
    rng_seed: int = 0,
    concurrency: int = 1,
    on_commit: CommitHook | None = None,
) -> list[GenerationRecord]:
    """Run the schedule; accepted records are returned and also appended to ``seeds`` in place."""
    filters = filters if filters is not None else FilterChain()
    for job in schedule:
        if job.stage != "main":
            raise PreconditionViolation("the main stage only runs main-stage jobs")
        if not seeds.get(job.key):
            raise PreconditionViolation(f"no seed records available for {job.key}")
    rng = random.Random(rng_seed)
    output: list[GenerationRecord] = []

    def render(job: GenerationJob) -> str:
        pool = seeds[job.key]
        examples = sample(pool, min(job.example_count, len(pool)) or 1, rng_seed=rng.getrandbits(32))
        return render_main_prompt(list(job.target_schemas), examples, job.mode, batch_size)

    def commit(job: GenerationJob, outcome: FilterOutcome) -> None:
        output.extend(outcome.accepted)
        seeds[job.key].extend(outcome.accepted)
        if on_commit:
            on_commit(job, outcome)

    _run_jobs(list(schedule), render, registry, llm, filters, concurrency, commit)
    return output


def split_dataset(records: Sequence[Any], train_n: int, test_n: int, rng_seed: int = 0) -> tuple[list[Any], list[Any]]:
    if train_n < 0 or test_n < 0:
        raise PreconditionViolation("split sizes must be non-negative")
    if train_n + test_n > len(records):
        raise InsufficientRecords(f"need {train_n + test_n} records, have {len(records)}")
    picked = random.Random(rng_seed).sample(range(len(records)), train_n + test_n)
    return [records[i] for i in picked[:train_n]], [records[i] for i in picked[train_n:]]


# whole pipeline


@dataclass(frozen=True)
class PipelineConfig:
    llm: LLMBackendConfig = field(default_factory=LLMBackendConfig)
    seed_batch_size: int = SEED_BATCH
    main_batch_size: int = MAIN_BATCH
    seed_examples_per_prompt: int = EXAMPLES_PER_PROMPT
    main_examples_per_prompt: int = EXAMPLES_PER_PROMPT
    seed_batches_per_function: int = 1
    main_rounds: int = 1
    complex_sets: tuple[tuple[str, ...], ...] = ()
    rng_seed: int = 0
    concurrency: int = 1
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        for name in ("seed_batch_size", "main_batch_size", "seed_examples_per_prompt",
                     "main_examples_per_prompt", "seed_batches_per_function", "main_rounds"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
        data = dict(data)
        llm = data.pop("llm", {})
        llm_known = {f.name for f in fields(LLMBackendConfig)}
        if not isinstance(llm, dict) or set(llm) - llm_known:
            raise ConfigError(f"unknown llm config keys: {sorted(set(llm) - llm_known)}")
        if "complex_sets" in data:
            data["complex_sets"] = tuple(tuple(s) for s in data["complex_sets"])
        try:
            return cls(llm=LLMBackendConfig(**llm), **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class PipelineResult:
    seeds: dict[str, list[GenerationRecord]]
    records: list[GenerationRecord]
    rejected: list[RejectedValue]


def run_pipeline(
    registry: SchemaRegistry, external: DataSource, llm: LLMBackend, config: PipelineConfig = PipelineConfig()
) -> PipelineResult:
    """Seed stage then main stage over one shared filter chain."""
    filters = FilterChain(config.threshold)
    seeds = run_seed_stage(
        registry, external, llm, filters, config.seed_batches_per_function,
        complex_sets=config.complex_sets, batch_size=config.seed_batch_size,
        examples_per_prompt=config.seed_examples_per_prompt, rng_seed=config.rng_seed,
        concurrency=config.concurrency,
    )
    initial = {key: list(recs) for key, recs in seeds.items()}
    schedule = [
        job for job in build_schedule(registry, config.main_rounds, config.complex_sets, config.main_examples_per_prompt)
        if seeds.get(job.key)
    ]
    skipped = config.main_rounds * (len(registry) + len(config.complex_sets)) - len(schedule)
    if skipped:
        log.warning("skipping %d main-stage jobs whose seed pool is empty", skipped)
    records = run_main_stage(
        registry, seeds, llm, filters, schedule, batch_size=config.main_batch_size,
        rng_seed=config.rng_seed + 1, concurrency=config.concurrency,
    )
    return PipelineResult(initial, records, list(filters.rejections))

