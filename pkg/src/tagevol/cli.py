"""Command-line pipeline: tag, evolve, respond, merge, leakage, stats.

All randomness flows from a single --seed value; with the mock backend and a
fixed config every command is byte-reproducible. Exit codes: 0 success,
2 input error, 3 backend error, 4 precondition error. Failures print a
structured JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import PreconditionError, TagEvolError
from .evolution import PRESETS, evolve_rounds
from .gateway import (
    BackendError,
    Gateway,
    HttpBackend,
    MockBackend,
    ResponseCache,
)
from .leakage import count_matches
from .metrics import EmptyInput, MetricsFailed, evaluate_dataset
from .records import (
    DuplicateId,
    LoadError,
    WriteError,
    build_manifest,
    load_dataset,
    manifest_path,
    merge_rounds,
    write_dataset,
    write_manifest,
)
from .responding import generate_responses
from .tagging import BuildFailed, PoolFormatError, build_tag_pool, load_pool, save_pool

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3
EXIT_PRECONDITION = 4

DEFAULT_CACHE_DIR = ".tagevol_cache"

STAGES = ("tag", "evolve", "respond", "stats")


@dataclass
class RunConfig:
    """Effective run configuration: config file values overridden by flags."""

    endpoint: str | None = None
    model: str | None = None
    models: dict = field(default_factory=dict)
    seed: int = 0
    candidate_size: int = 30
    budgets: list[int] | None = None
    max_in_flight: int = 4
    retries: int = 3
    temperature: float = 0.7
    response_temperature: float = 0.0
    max_tokens: int = 2048
    top_p: float | None = None
    cache_dir: str = DEFAULT_CACHE_DIR
    no_cache: bool = False
    mock_script: str | None = None

    def validate(self) -> None:
        if self.max_in_flight < 1:
            raise PreconditionError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise PreconditionError("retries must be >= 0")
        if self.budgets is not None:
            if not self.budgets or any(b < 1 for b in self.budgets):
                raise PreconditionError("budgets must be a nonempty list of integers >= 1")
            if self.candidate_size < max(self.budgets):
                raise PreconditionError(
                    f"candidate_size {self.candidate_size} is smaller than the largest budget {max(self.budgets)}"
                )

    def model_for(self, stage: str) -> str:
        override = self.models.get(stage)
        if override:
            return str(override)
        if self.model:
            return self.model
        if self.mock_script:
            return "mock"
        raise PreconditionError("no model configured; pass --model or set it in the config file")

    def to_json(self) -> dict:
        return asdict(self)


_CONFIG_KEYS = {
    "endpoint",
    "model",
    "models",
    "seed",
    "candidate_size",
    "budgets",
    "max_in_flight",
    "retries",
    "temperature",
    "response_temperature",
    "max_tokens",
    "top_p",
    "cache_dir",
    "no_cache",
    "mock_script",
}

# Flags present on every subcommand; None means "not given, keep config value".
_FLAG_TO_CONFIG = {
    "endpoint": "endpoint",
    "model": "model",
    "seed": "seed",
    "candidate_size": "candidate_size",
    "max_in_flight": "max_in_flight",
    "retries": "retries",
    "temperature": "temperature",
    "response_temperature": "response_temperature",
    "max_tokens": "max_tokens",
    "top_p": "top_p",
    "cache_dir": "cache_dir",
    "mock_script": "mock_script",
}


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise LoadError(path, 0, "config file does not exist")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise LoadError(path, 0, f"config is not valid JSON: {err.msg}") from err
        if not isinstance(loaded, dict):
            raise LoadError(path, 0, "config must be a JSON object")
        unknown = set(loaded) - _CONFIG_KEYS
        if unknown:
            raise LoadError(path, 0, f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)
    for flag, key in _FLAG_TO_CONFIG.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[key] = flag_value
    if getattr(args, "no_cache", False):
        values["no_cache"] = True
    config = RunConfig(**values)
    config.validate()
    return config


def make_gateway(config: RunConfig) -> Gateway:
    if config.mock_script:
        backend = MockBackend.from_script_file(config.mock_script)
    elif config.endpoint:
        backend = HttpBackend(config.endpoint)
    else:
        raise PreconditionError("no backend configured; pass --endpoint or --mock-script")
    cache = None if config.no_cache else ResponseCache(config.cache_dir)
    return Gateway(
        backend,
        retries=config.retries,
        max_in_flight=config.max_in_flight,
        cache=cache,
    )


def _emit(payload: dict, out: str | None = None) -> None:
    text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_tag(args: argparse.Namespace, config: RunConfig) -> int:
    records = load_dataset(args.seed_dataset)
    gateway = make_gateway(config)
    model = config.model_for("tag")
    pool, report = build_tag_pool(
        records,
        gateway,
        retries_per_record=config.retries,
        model=model,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )
    pool.built_from = {"path": str(args.seed_dataset), "records": len(records)}
    save_pool(pool, args.out)
    Path(args.out).with_suffix(".report.json").write_text(
        json.dumps(report.to_json(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _emit(
        {
            "pool": str(args.out),
            "entries": pool.entry_count,
            "distinct_tags": pool.distinct_tag_count,
            "tagged_records": report.tagged_records,
            "failed_records": len(report.failures),
        }
    )
    return EXIT_OK


def cmd_evolve(args: argparse.Namespace, config: RunConfig) -> int:
    if args.preset:
        budgets = list(PRESETS[args.preset])
    elif args.budgets:
        budgets = list(args.budgets)
    elif config.budgets:
        budgets = list(config.budgets)
    else:
        raise PreconditionError("no budgets configured; pass --budgets or --preset")
    if any(b < 1 for b in budgets):
        raise PreconditionError("budgets must be integers >= 1")
    if config.candidate_size < max(budgets):
        raise PreconditionError(
            f"candidate_size {config.candidate_size} is smaller than the largest budget {max(budgets)}"
        )
    seeds = load_dataset(args.seed_dataset)
    pool = load_pool(args.pool)
    if pool.distinct_tag_count < max(budgets):
        raise PreconditionError(
            f"pool has {pool.distinct_tag_count} distinct tags but the largest budget is {max(budgets)}"
        )
    gateway = make_gateway(config)
    model = config.model_for("evolve")
    result = evolve_rounds(
        seeds,
        budgets,
        pool,
        gateway,
        config.seed,
        config.candidate_size,
        config.retries,
        model=model,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parameters = {
        "model": model,
        "rng_seed": config.seed,
        "candidate_size": config.candidate_size,
        "budgets": budgets,
        "config": config.to_json(),
    }
    written = []
    for round_index, (budget, round_records) in enumerate(zip(budgets, result.rounds), start=1):
        if args.drop_flagged:
            round_records = [r for r in round_records if not r.flags]
        path = out_dir / f"round{round_index}_budget{budget}.jsonl"
        write_dataset(round_records, path)
        manifest = build_manifest(
            name=path.stem,
            sources=[str(args.seed_dataset), str(args.pool)],
            records=round_records,
            parameters=parameters,
        )
        write_manifest(manifest, manifest_path(path))
        written.append({"path": str(path), "round": round_index, "budget": budget, "records": len(round_records)})
    (out_dir / "failures.json").write_text(
        json.dumps(result.failures, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _emit({"rounds": written, "failures": len(result.failures)})
    if seeds and any(not round_records for round_records in result.rounds):
        _stderr_json("backend_error", "every record of at least one round failed")
        return EXIT_BACKEND
    return EXIT_OK


def cmd_respond(args: argparse.Namespace, config: RunConfig) -> int:
    records = load_dataset(args.dataset)
    gateway = make_gateway(config)
    out_path = Path(args.out) if args.out else Path(args.dataset)
    filled, report = generate_responses(
        records,
        gateway,
        config.retries,
        model=config.model_for("respond"),
        overwrite=args.overwrite,
        temperature=config.response_temperature,
        max_tokens=config.max_tokens,
    )
    write_dataset(filled, out_path)
    out_path.with_suffix(".failures.json").write_text(
        json.dumps(report.failures, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _emit(
        {
            "dataset": str(out_path),
            "filled": report.filled,
            "skipped": report.skipped,
            "failures": len(report.failures),
        }
    )
    return EXIT_OK


def cmd_merge(args: argparse.Namespace, config: RunConfig) -> int:
    rounds = [load_dataset(path) for path in args.rounds]
    seed = load_dataset(args.seed_dataset) if args.seed_dataset else None
    if args.include_seed and seed is None:
        raise PreconditionError("--include-seed requires --seed-dataset")
    merged = merge_rounds(rounds, include_seed=args.include_seed, seed=seed)
    write_dataset(merged, args.out)
    sources = [str(p) for p in args.rounds]
    if args.include_seed and args.seed_dataset:
        sources = [str(args.seed_dataset)] + sources
    manifest = build_manifest(
        name=Path(args.out).stem,
        sources=sources,
        records=merged,
        parameters={"include_seed": bool(args.include_seed), "config": config.to_json()},
    )
    write_manifest(manifest, manifest_path(args.out))
    _emit({"dataset": str(args.out), "records": len(merged)})
    return EXIT_OK


def cmd_leakage(args: argparse.Namespace, config: RunConfig) -> int:
    synth = load_dataset(args.dataset)
    reports = []
    for bench_path in args.benchmarks:
        bench = load_dataset(bench_path)
        for n in args.ngrams:
            report = count_matches(synth, bench, n, benchmark_name=Path(bench_path).name)
            reports.append(report.to_json())
    _emit({"dataset": str(args.dataset), "reports": reports}, out=args.out)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, config: RunConfig) -> int:
    records = load_dataset(args.dataset)
    gateway = make_gateway(config)
    report = evaluate_dataset(
        records,
        gateway,
        sample_size=args.sample_size,
        rng=random.Random(config.seed),
        retries=config.retries,
        model=config.model_for("stats"),
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )
    _emit(report.to_json(), out=args.out)
    return EXIT_OK


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--endpoint", help="chat-completion endpoint URL")
    parser.add_argument("--model", help="model id sent to the backend")
    parser.add_argument("--seed", type=int, help="master rng seed (default 0)")
    parser.add_argument("--candidate-size", dest="candidate_size", type=int, help="candidate tag batch size (default 30)")
    parser.add_argument("--max-in-flight", dest="max_in_flight", type=int, help="max concurrent backend requests (default 4)")
    parser.add_argument("--retries", type=int, help="backend and parse retries (default 3)")
    parser.add_argument("--temperature", type=float, help="sampling temperature for tagging/evolution (default 0.7)")
    parser.add_argument("--response-temperature", dest="response_temperature", type=float, help="sampling temperature for responses (default 0.0)")
    parser.add_argument("--max-tokens", dest="max_tokens", type=int, help="max output tokens (default 2048)")
    parser.add_argument("--top-p", dest="top_p", type=float, help="nucleus sampling cutoff (off by default)")
    parser.add_argument("--cache-dir", dest="cache_dir", help=f"response cache directory (default {DEFAULT_CACHE_DIR})")
    parser.add_argument("--no-cache", dest="no_cache", action="store_true", help="disable the response cache")
    parser.add_argument("--mock-script", dest="mock_script", help="JSON mock script; replaces the HTTP backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagevol",
        description="Synthesize evolved instruction data by injecting knowledge-tag combinations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_tag = sub.add_parser("tag", help="build a tag pool from a seed dataset")
    p_tag.add_argument("seed_dataset", help="seed JSONL file")
    p_tag.add_argument("--out", required=True, help="output pool JSON file")
    _add_common_flags(p_tag)
    p_tag.set_defaults(func=cmd_tag)

    p_evolve = sub.add_parser("evolve", help="run budget-controlled evolution rounds")
    p_evolve.add_argument("seed_dataset", help="seed JSONL file")
    p_evolve.add_argument("pool", help="tag pool JSON file")
    p_evolve.add_argument("out_dir", help="output directory for round files")
    p_evolve.add_argument("--budgets", type=int, nargs="+", help="one budget per round, e.g. --budgets 1 3 5")
    p_evolve.add_argument("--preset", choices=sorted(PRESETS), help="budget preset: math=[1,3,5], code=[3,5,7]")
    p_evolve.add_argument("--drop-flagged", dest="drop_flagged", action="store_true", help="drop records with validation flags")
    _add_common_flags(p_evolve)
    p_evolve.set_defaults(func=cmd_evolve)

    p_respond = sub.add_parser("respond", help="generate responses for instructions")
    p_respond.add_argument("dataset", help="JSONL file to complete")
    p_respond.add_argument("--out", help="output path (default: rewrite in place)")
    p_respond.add_argument("--overwrite", action="store_true", help="regenerate existing responses")
    _add_common_flags(p_respond)
    p_respond.set_defaults(func=cmd_respond)

    p_merge = sub.add_parser("merge", help="merge round datasets with duplicate removal")
    p_merge.add_argument("rounds", nargs="+", help="round JSONL files, in round order")
    p_merge.add_argument("--out", required=True, help="merged output path")
    p_merge.add_argument("--include-seed", dest="include_seed", action="store_true", help="prepend the seed dataset")
    p_merge.add_argument("--seed-dataset", dest="seed_dataset", help="seed JSONL file for --include-seed")
    _add_common_flags(p_merge)
    p_merge.set_defaults(func=cmd_merge)

    p_leak = sub.add_parser("leakage", help="n-gram contamination report against benchmarks")
    p_leak.add_argument("dataset", help="synthesized JSONL file")
    p_leak.add_argument("benchmarks", nargs="+", help="benchmark JSONL files")
    p_leak.add_argument("--ngrams", type=int, nargs="+", default=[8, 13], help="gram sizes (default: 8 13)")
    p_leak.add_argument("--out", help="also write the report to this path")
    _add_common_flags(p_leak)
    p_leak.set_defaults(func=cmd_leakage)

    p_stats = sub.add_parser("stats", help="difficulty/diversity report by re-tagging a sample")
    p_stats.add_argument("dataset", help="JSONL file to evaluate")
    p_stats.add_argument("--sample-size", dest="sample_size", type=int, default=50, help="records to sample (default 50)")
    p_stats.add_argument("--out", help="also write the report to this path")
    _add_common_flags(p_stats)
    p_stats.set_defaults(func=cmd_stats)

    return parser


def _stderr_json(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
        return args.func(args, config)
    except (LoadError, DuplicateId, WriteError, PoolFormatError, FileNotFoundError) as err:
        _stderr_json("input_error", str(err))
        return EXIT_INPUT
    except (PreconditionError, EmptyInput) as err:
        _stderr_json("precondition_error", str(err))
        return EXIT_PRECONDITION
    except (BackendError, BuildFailed, MetricsFailed) as err:
        _stderr_json("backend_error", str(err))
        return EXIT_BACKEND
    except TagEvolError as err:
        _stderr_json("error", str(err))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
