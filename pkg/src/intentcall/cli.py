"""Command-line entry point: ``intentcall <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .calls import parse_code_answer, parse_json_answer, validate_plan
from .dispatch import DeviceState, execute_plan, restore, snapshot
from .errors import BackendError, ConfigError, IntentCallError, MalformedSignature
from .evaluation import SemanticScorer, evaluate_model
from .fileio import atomic_write_text, load_config_file, read_jsonl, read_records, write_jsonl, write_records
from .generation import DataSource, PipelineConfig, run_pipeline, split_dataset
from .llm import LLMBackendConfig, RecordingBackend, make_backend
from .prompts import VARIANTS, export_finetune_config, is_code, load_tokenizer, render_training_sample, token_stats
from .retriever import index_functions, query
from .schema import load_default_registry, load_registry, parse_module_source, serialize_schema

log = logging.getLogger("intentcall")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_IO, EXIT_BACKEND, EXIT_VALIDATION = 0, 1, 2, 3, 4, 5

_GENERATION_KEYS = {f.name for f in fields(PipelineConfig)} - {"llm", "rng_seed", "concurrency", "threshold"}


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by all commands; loaded from a config file, then overridden by flags."""

    rng_seed: int = 0
    format: str = "json"
    threshold: float = 0.75
    semantic_threshold: float = 0.75
    jobs: int = 1
    k: int = 4
    min_acc: float | None = None
    tokenizer: str = "whitespace"
    functions_dir: str | None = None
    llm: LLMBackendConfig = field(default_factory=LLMBackendConfig)
    generation: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.format not in VARIANTS:
            raise ConfigError(f"format must be one of {VARIANTS}, got {self.format!r}")
        for name in ("threshold", "semantic_threshold", "min_acc"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        unknown = set(self.generation) - _GENERATION_KEYS
        if unknown:
            raise ConfigError(f"unknown generation keys: {sorted(unknown)}")

    @classmethod
    def build(cls, data: dict[str, Any], overrides: dict[str, Any]) -> RunConfig:
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        llm = dict(data.pop("llm", {}) or {})
        llm_known = {f.name for f in fields(LLMBackendConfig)}
        for key in list(overrides):
            if key in llm_known:
                llm[key] = overrides.pop(key)
        if set(llm) - llm_known:
            raise ConfigError(f"unknown llm config keys: {sorted(set(llm) - llm_known)}")
        data.update(overrides)
        try:
            return cls(llm=LLMBackendConfig(**llm), **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def pipeline(self) -> PipelineConfig:
        gen = dict(self.generation)
        if "complex_sets" in gen:
            gen["complex_sets"] = tuple(tuple(s) for s in gen["complex_sets"])
        return PipelineConfig(llm=self.llm, rng_seed=self.rng_seed, concurrency=self.jobs, threshold=self.threshold, **gen)


def _registry(cfg: RunConfig):
    return load_registry(cfg.functions_dir) if cfg.functions_dir else load_default_registry()


def _backend(cfg: RunConfig):
    if cfg.llm.backend == "mock" and not cfg.llm.script_path:
        raise ConfigError("the mock backend needs a script file (--script)")
    return make_backend(cfg.llm)


def _emit(text: str, out: str | None) -> None:
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


# commands


def cmd_extract(args, cfg: RunConfig) -> int:
    src = Path(args.source)
    paths = sorted(p for p in src.iterdir() if p.suffix in (".py", ".src")) if src.is_dir() else [src]
    out = Path(args.out)
    for path in paths:
        schemas = parse_module_source(path.read_text("utf-8"))
        if not schemas:
            raise MalformedSignature(f"{path} defines no functions")
        for schema in schemas:
            atomic_write_text(out / f"{schema.name}.json", serialize_schema(schema) + "\n")
            print(schema.name)
    return EXIT_OK


def cmd_generate(args, cfg: RunConfig) -> int:
    registry = _registry(cfg)
    external = DataSource(Path(args.corpus).stem, read_jsonl(args.corpus))
    llm = _backend(cfg)
    if args.record_script:
        llm = RecordingBackend(llm)
    result = run_pipeline(registry, external, llm, cfg.pipeline())
    seeds = [rec for recs in result.seeds.values() for rec in recs]
    write_records(args.out, seeds + result.records)
    if args.rejections:
        write_jsonl(args.rejections, (r.to_dict() for r in result.rejected))
    if args.record_script:
        atomic_write_text(args.record_script, json.dumps(llm.script, indent=2, sort_keys=True, ensure_ascii=False))
    log.info("wrote %d seed and %d main records, %d rejected", len(seeds), len(result.records), len(result.rejected))
    return EXIT_OK


def cmd_split(args, cfg: RunConfig) -> int:
    records = read_records(args.dataset)
    train, test = split_dataset(records, args.train_n, args.test_n, cfg.rng_seed)
    write_records(args.train_out, train)
    write_records(args.test_out, test)
    return EXIT_OK


def cmd_format(args, cfg: RunConfig) -> int:
    registry = _registry(cfg)
    samples = [dataclasses.asdict(render_training_sample(r, cfg.format, registry)) for r in read_records(args.dataset)]
    write_jsonl(args.out, samples)
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    registry = _registry(cfg)
    testset = read_records(args.testset)
    fewshot = read_records(args.fewshot) if args.fewshot else None
    retriever = index_functions(registry) if args.retriever == "index" else "fake"
    report = evaluate_model(
        testset, _backend(cfg), cfg.format, registry,
        scorer=SemanticScorer(threshold=cfg.semantic_threshold),
        retriever=retriever, k=cfg.k, fewshot=fewshot, report_path=args.report,
    )
    _emit(report.to_json() + "\n", args.report)
    print(f"acc={report.acc:.4f} acc_soft={report.acc_soft:.4f} n={report.n_total}", file=sys.stderr)
    if cfg.min_acc is not None and report.acc < cfg.min_acc:
        print(f"accuracy {report.acc:.4f} is below the floor {cfg.min_acc}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _read_plan(path: str, variant: str | None):
    text = Path(path).read_text("utf-8")
    if variant is None:
        variant = "json" if text.lstrip()[:1] in ("[", "{") else "code"
    return parse_code_answer(text) if is_code(variant) else parse_json_answer(text)


def cmd_dispatch(args, cfg: RunConfig) -> int:
    registry = _registry(cfg)
    # plan files are auto-detected unless --format was given explicitly
    plan = _read_plan(args.plan, args.format)
    violations = validate_plan(plan, registry)
    if violations:
        for v in violations:
            print(f"call {v.call_id}: {v.kind}: {v.detail}", file=sys.stderr)
        return EXIT_VALIDATION
    state = restore(Path(args.snapshot).read_text("utf-8")) if args.snapshot else DeviceState()
    results, state = execute_plan(plan, state, registry)
    report = {"results": [r.to_dict() for r in results], "snapshot": json.loads(snapshot(state))}
    if args.out_snapshot:
        atomic_write_text(args.out_snapshot, snapshot(state) + "\n")
    _emit(json.dumps(report, indent=2, ensure_ascii=False) + "\n", args.results)
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAILED


def cmd_stats(args, cfg: RunConfig) -> int:
    report = token_stats(read_records(args.dataset), cfg.format, load_tokenizer(cfg.tokenizer), _registry(cfg))
    if not args.per_sample:
        report.pop("per_sample")
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_retrieve(args, cfg: RunConfig) -> int:
    index = index_functions(_registry(cfg))
    for name, score in query(index, args.query, cfg.k):
        print(f"{name}\t{score:.6f}")
    return EXIT_OK


def cmd_finetune_config(args, cfg: RunConfig) -> int:
    _emit(export_finetune_config().to_json() + "\n", args.out)
    return EXIT_OK


# argument parsing


def _common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="TOML or JSON run config; flags override its values")
    g.add_argument("--rng-seed", type=int, dest="rng_seed", help="seed for every random choice")
    g.add_argument("--format", choices=VARIANTS, help="prompt/answer variant")
    g.add_argument("--backend", choices=("mock", "http"), help="LLM backend")
    g.add_argument("--script", dest="script_path", help="mock backend script (JSON map digest -> response)")
    g.add_argument("--endpoint", help="chat-completions URL for the http backend")
    g.add_argument("--model", dest="model_name", help="model name sent to the http backend")
    g.add_argument("--jobs", type=int, help="max in-flight LLM calls")
    g.add_argument("--threshold", type=float,
                   help="dedup ROUGE-L threshold (generate) or semantic match threshold (evaluate)")
    g.add_argument("-k", type=int, dest="k", help="number of functions to retrieve")
    g.add_argument("--functions", dest="functions_dir", help="function bundle directory (default: bundled)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(prog="intentcall", description="Function-calling dataset and evaluation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("extract", cmd_extract, "Extract JSON schemas from annotated Python function sources.")
    p.add_argument("source", help="a .py/.src file or a directory of them")
    p.add_argument("--out", required=True, help="directory for <name>.json schema files")

    p = add("generate", cmd_generate, "Run seed and main generation stages.")
    p.add_argument("--corpus", required=True, help="external example corpus (JSON lines of query/answers)")
    p.add_argument("--out", required=True, help="output dataset (JSON lines)")
    p.add_argument("--rejections", help="write rejected outputs here (JSON lines)")
    p.add_argument("--record-script", help="record every completion into a replayable mock script")

    p = add("split", cmd_split, "Split a dataset into disjoint train and test files.")
    p.add_argument("dataset")
    p.add_argument("--train-n", type=int, required=True)
    p.add_argument("--test-n", type=int, required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)

    p = add("format", cmd_format, "Render a dataset as chat-format training samples.")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "Score a model on a test set.")
    p.add_argument("testset")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.add_argument("--retriever", choices=("fake", "index"), default="fake")
    p.add_argument("--fewshot", help="records to show as in-prompt examples")
    p.add_argument("--min-acc", type=float, dest="min_acc", help="exit 1 if accuracy falls below this")

    p = add("dispatch", cmd_dispatch, "Execute a call plan on the simulated device.")
    p.add_argument("plan", help="plan file (JSON calls or code lines)")
    p.add_argument("--snapshot", help="device snapshot to start from")
    p.add_argument("--out-snapshot", help="write the resulting device snapshot here")
    p.add_argument("--results", help="write results JSON here instead of stdout")

    p = add("stats", cmd_stats, "Average prompt length in tokens for a dataset.")
    p.add_argument("dataset")
    p.add_argument("--tokenizer", help="whitespace, chars or module:callable")
    p.add_argument("--per-sample", action="store_true", help="include per-sample counts")
    p.add_argument("--out")

    p = add("retrieve", cmd_retrieve, "Rank functions for a query.")
    p.add_argument("query")

    p = add("finetune-config", cmd_finetune_config, "Print the LoRA fine-tuning hyperparameters.")
    p.add_argument("--out")
    return parser


_OVERRIDES = ("rng_seed", "format", "backend", "script_path", "endpoint", "model_name", "jobs", "k",
              "functions_dir", "tokenizer", "min_acc")


def _run_config(args: argparse.Namespace) -> RunConfig:
    data = load_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, key) for key in _OVERRIDES if getattr(args, key, None) is not None}
    if args.threshold is not None:
        overrides["semantic_threshold" if args.command == "evaluate" else "threshold"] = args.threshold
    return RunConfig.build(data, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _run_config(args)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IntentCallError, ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
