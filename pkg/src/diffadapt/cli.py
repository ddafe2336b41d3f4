"""Command-line surface tying the pipeline stages together.

Subcommands: generate, train, route, serve, eval-fixed, eval-oracle,
report, simulate-curve. Flags override config-file keys; every run
writes a manifest sufficient to re-execute it.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .backend import (
    Backend,
    EmbeddingsEndpointProvider,
    FeatureFileProvider,
    GenRequest,
    OpenAIBackend,
)
from .config import ensure_layout, load_config, write_manifest
from .core import (
    Difficulty,
    Problem,
    Thresholds,
    read_problems,
    validate_dataset,
)
from .dispatch import BudgetTable, default_budget_table, route
from .entropy import TailMode, difficulty_curve, write_curve_csv
from .errors import ConfigError, DiffAdaptError
from .core import CLASS_ORDER
from .evaluation import (
    aggregate_outcomes,
    oracle_report,
    read_outcomes,
    run_strategy,
    token_savings,
    write_outcomes,
    write_plot_data,
    write_report_csv,
)
from .labeling import (
    SamplingConfig,
    generate_dataset,
    read_labeled_dataset,
    thresholds_for_model,
    write_labeled_dataset,
)
from .probe import TrainConfig, load_probe, save_probe, train
from .simulator import SimulatorBackend, load_profile, make_problems
from .verify import verdict as compute_verdict

log = logging.getLogger("diffadapt")


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument(
        "--backend", default=None, help="backend: base URL or sim[:PROFILE]"
    )
    common.add_argument("--jobs", type=int, default=None, help="parallel work items")
    common.add_argument("--model", default=None, help="model name for budgets/thresholds")
    common.add_argument("--features", type=Path, default=None,
                        help="DFFV feature file used as the representation provider")
    common.add_argument("--repr", choices=["features", "embeddings", "none"],
                        default=None, help="representation provider for live backends")
    common.add_argument("--flavor", choices=["chat", "completions"], default=None)
    common.add_argument("--tail-mode", choices=[m.value for m in TailMode], default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="diffadapt",
        description="Difficulty-adaptive inference routing pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="Stage 1: sample and label")
    p.add_argument("--problems", type=Path, required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--top-k-logprobs", type=int, default=None)
    p.add_argument("--thresholds", default=None, help="alpha,beta,gamma")

    p = sub.add_parser("train", parents=[common], help="Stage 2: train the probe")
    p.add_argument("--data", type=Path, required=True, help="labeled dataset (NDJSON)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--fingerprint", default=None,
                   help="representation-provider fingerprint to embed")

    p = sub.add_parser("route", parents=[common], help="route a single question")
    p.add_argument("--probe", type=Path, required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--benchmark", default=None)
    p.add_argument("--rating", type=int, default=None)
    p.add_argument("--budgets", type=Path, default=None)

    p = sub.add_parser("serve", parents=[common], help="Stage 3: run the proxy")
    p.add_argument("--probe", type=Path, required=True)
    p.add_argument("--budgets", type=Path, default=None)
    p.add_argument("--listen", default=None, help="host:port (default 127.0.0.1:8080)")
    p.add_argument("--allow-fingerprint-mismatch", action="store_true")

    p = sub.add_parser("eval-fixed", parents=[common], help="fixed-strategy baseline")
    p.add_argument("--problems", type=Path, required=True)
    p.add_argument("--strategy", required=True, choices=[s.value for s in Difficulty])
    p.add_argument("--budgets", type=Path, default=None)
    p.add_argument("--budget-scale", type=float, default=None)

    p = sub.add_parser("eval-oracle", parents=[common],
                       help="run all three strategies and the oracle analysis")
    p.add_argument("--problems", type=Path, required=True)
    p.add_argument("--budgets", type=Path, default=None)
    p.add_argument("--budget-scale", type=float, default=None)

    p = sub.add_parser("report", parents=[common], help="aggregate saved outcomes")
    p.add_argument("--outcomes", type=Path, nargs="+", required=True)
    p.add_argument("--problems", type=Path, required=True)

    p = sub.add_parser("simulate-curve", parents=[common],
                       help="reproduce the difficulty/entropy curve on the simulator")
    p.add_argument("--problems-per-rating", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--n", type=int, default=None, help="alias for --samples")
    p.add_argument("--temperature", type=float, default=None)

    return parser


class _Settings:
    """Merged view of CLI args over config-file values over defaults."""

    def __init__(self, args: argparse.Namespace, config: dict[str, Any]) -> None:
        self._args = args
        self._config = config

    def get(self, key: str, default: Any = None) -> Any:
        cli_value = getattr(self._args, key, None)
        if cli_value is not None:
            return cli_value
        if key in self._config:
            return self._config[key]
        return default

    def snapshot(self, keys: Sequence[str]) -> dict[str, Any]:
        return {k: _jsonable(self.get(k)) for k in keys}


def _jsonable(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    return value


def _parse_thresholds(raw: Any, model: str | None) -> Thresholds:
    if raw is None:
        return thresholds_for_model(model or "")
    if isinstance(raw, (list, tuple)):
        parts = [float(x) for x in raw]
    elif isinstance(raw, dict):
        return Thresholds(alpha=raw["alpha"], beta=raw["beta"], gamma=raw["gamma"])
    else:
        parts = [float(x) for x in str(raw).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"thresholds must have 3 values alpha,beta,gamma, got {raw!r}")
    return Thresholds(alpha=parts[0], beta=parts[1], gamma=parts[2])


def _make_backend(settings: _Settings, seed: int) -> Backend:
    spec = settings.get("backend", "sim:default")
    tail = TailMode(settings.get("tail_mode", TailMode.TAIL_BUCKET.value))
    if spec == "sim" or str(spec).startswith("sim:"):
        profile_spec = str(spec)[4:] if str(spec).startswith("sim:") else "default"
        return SimulatorBackend(profile=load_profile(profile_spec), seed=seed)
    representation = None
    features = settings.get("features")
    model = settings.get("model", "default")
    if features is not None:
        representation = FeatureFileProvider(features)
    elif settings.get("repr") == "embeddings":
        representation = EmbeddingsEndpointProvider(str(spec), model)
    return OpenAIBackend(
        base_url=str(spec),
        model=model,
        representation=representation,
        flavor=settings.get("flavor", "chat"),
        tail_mode=tail,
    )


def _load_budgets(settings: _Settings) -> BudgetTable:
    path = settings.get("budgets")
    table = BudgetTable.from_json(path) if path is not None else default_budget_table()
    scale = settings.get("budget_scale")
    if scale is not None:
        scale = float(scale)
        table = BudgetTable(
            entries={k: max(1, math.floor(v * scale)) for k, v in table.entries.items()},
            default_max_tokens=max(1, math.floor(table.default_max_tokens * scale)),
        )
    return table


def _load_problems_strict(path: Path) -> list[Problem]:
    problems = read_problems(path)
    violations = validate_dataset(problems)
    if violations:
        for v in violations:
            log.error("dataset violation [%s] %s: %s", v.kind, v.problem_id, v.message)
        raise DiffAdaptError(f"{len(violations)} dataset violations in {path}")
    return problems


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_generate(settings: _Settings) -> int:
    seed = int(settings.get("seed", 0))
    out = ensure_layout(settings.get("out", Path("out")))
    problems_path = Path(settings.get("problems"))
    problems = _load_problems_strict(problems_path)
    backend = _make_backend(settings, seed)
    sampling = SamplingConfig(
        n=int(settings.get("n", 10)),
        temperature=float(settings.get("temperature", 0.6)),
        max_tokens=int(settings.get("max_tokens", 32768)),
        top_k_logprobs=int(settings.get("top_k_logprobs", 20)),
        seed=seed,
    )
    thresholds = _parse_thresholds(settings.get("thresholds"), settings.get("model"))
    result = generate_dataset(
        problems,
        backend,
        sampling,
        thresholds,
        records_path=out.records / "records.ndjson",
        jobs=int(settings.get("jobs", os.cpu_count() or 1)),
    )
    labeled_path = out.root / "labeled.ndjson"
    write_labeled_dataset(labeled_path, result.examples)
    write_manifest(
        out.manifest,
        "generate",
        settings.snapshot(["backend", "problems", "n", "temperature", "max_tokens",
                          "top_k_logprobs", "thresholds", "model"]),
        seed,
        inputs={"problems": problems_path},
        extra={"generate": result.manifest},
    )
    print(
        f"labeled {result.manifest['n_labeled']}/{result.manifest['n_problems']} problems "
        f"-> {labeled_path} (distribution {result.manifest['label_distribution']})"
    )
    return 0


def _cmd_train(settings: _Settings) -> int:
    seed = int(settings.get("seed", 0))
    out = ensure_layout(settings.get("out", Path("out")))
    data_path = Path(settings.get("data"))
    examples = read_labeled_dataset(data_path)
    config = TrainConfig(
        epochs=int(settings.get("epochs", 100)),
        learning_rate=float(settings.get("lr", 1e-3)),
        weight_decay=float(settings.get("weight_decay", 0.01)),
        batch_size=int(settings.get("batch_size", 64)),
        hidden_dim=int(settings.get("hidden_dim", 128)),
        seed=seed,
    )
    params, train_log = train(examples, config)
    probe_path = out.probes / "probe.bin"
    save_probe(params, probe_path, provider_fingerprint=settings.get("fingerprint", ""))
    (out.reports / "train_log.json").write_text(
        json.dumps(
            {
                "epoch_losses": train_log.epoch_losses,
                "final_train_accuracy": train_log.final_train_accuracy,
                "class_counts": train_log.class_counts,
            },
            indent=2,
        )
    )
    write_manifest(
        out.manifest,
        "train",
        settings.snapshot(["data", "epochs", "lr", "weight_decay", "batch_size",
                          "hidden_dim", "fingerprint"]),
        seed,
        inputs={"data": data_path},
        extra={"final_train_accuracy": train_log.final_train_accuracy},
    )
    print(
        f"trained probe ({len(examples)} examples, {config.epochs} epochs) "
        f"train accuracy {train_log.final_train_accuracy:.3f} -> {probe_path}"
    )
    return 0


def _cmd_route(settings: _Settings) -> int:
    seed = int(settings.get("seed", 0))
    backend = _make_backend(settings, seed)
    loaded = load_probe(Path(settings.get("probe")))
    budgets = _load_budgets(settings)
    problem = Problem(
        id="cli-question",
        question=str(settings.get("question")),
        gold_answer="",
        difficulty_rating=settings.get("rating"),
        benchmark=settings.get("benchmark", "default"),
    )
    result = route(
        problem,
        loaded.params,
        backend,
        budgets,
        settings.get("model", "default"),
        seed=seed,
    )
    payload = {
        "label": result.label.value,
        "fallback": result.fallback,
        "error": result.error,
        "max_tokens": result.resolved.max_tokens,
        "temperature": result.resolved.temperature,
        "tokens": result.record.completion_tokens if result.record else None,
        "entropy": result.record.generation_entropy if result.record else None,
        "answer_text": result.record.completion_text if result.record else None,
    }
    print(json.dumps(payload, indent=2))
    return 0 if result.error is None else 1


def _cmd_serve(settings: _Settings) -> int:
    from .service import create_app, serve

    seed = int(settings.get("seed", 0))
    backend = _make_backend(settings, seed)
    loaded = load_probe(Path(settings.get("probe")))
    budgets = _load_budgets(settings)
    app = create_app(
        loaded,
        backend,
        budgets,
        settings.get("model", "default"),
        allow_fingerprint_mismatch=bool(settings.get("allow_fingerprint_mismatch", False)),
    )
    serve(str(settings.get("listen", "127.0.0.1:8080")), app)
    return 0


def _run_eval(settings: _Settings, strategies: Sequence[Difficulty]) -> int:
    seed = int(settings.get("seed", 0))
    out = ensure_layout(settings.get("out", Path("out")))
    problems_path = Path(settings.get("problems"))
    problems = _load_problems_strict(problems_path)
    backend = _make_backend(settings, seed)
    budgets = _load_budgets(settings)
    model = settings.get("model", "default")

    all_outcomes = []
    for strategy in strategies:
        all_outcomes.extend(
            run_strategy(problems, backend, strategy, budgets, model, seed=seed)
        )
    benchmark_by_problem = {p.id: p.benchmark for p in problems}
    excluded: list[str] = []
    if len(strategies) == 3:
        report = oracle_report(all_outcomes, benchmark_by_problem)
        rows = report.rows
        excluded = list(report.excluded_problems)
        name = "oracle"
    else:
        rows = tuple(
            aggregate_outcomes(all_outcomes, benchmark_by_problem, strategies[0].value)
        )
        name = f"fixed_{strategies[0].value.lower()}"
    write_report_csv(rows, out.reports / f"{name}.csv")
    write_plot_data(rows, out.reports / f"{name}_pareto.json")
    write_outcomes(out.reports / f"{name}_outcomes.ndjson", all_outcomes)
    write_manifest(
        out.manifest,
        name,
        settings.snapshot(["backend", "problems", "model", "budgets", "budget_scale"]),
        seed,
        inputs={"problems": problems_path},
        extra={"n_problems": len(problems), "excluded": excluded},
    )
    for r in rows:
        print(
            f"{r.benchmark:>16} {r.series:>7}: accuracy {r.accuracy:.3f} "
            f"mean tokens {r.mean_tokens:.1f} (n={r.n})"
        )
    return 0


def _cmd_eval_fixed(settings: _Settings) -> int:
    strategy = Difficulty(settings.get("strategy"))
    return _run_eval(settings, [strategy])


def _cmd_eval_oracle(settings: _Settings) -> int:
    return _run_eval(settings, list(CLASS_ORDER))


def _cmd_report(settings: _Settings) -> int:
    seed = int(settings.get("seed", 0))
    out = ensure_layout(settings.get("out", Path("out")))
    problems = _load_problems_strict(Path(settings.get("problems")))
    benchmark_by_problem = {p.id: p.benchmark for p in problems}
    outcomes = []
    for path in settings.get("outcomes"):
        outcomes.extend(read_outcomes(path))
    report = oracle_report(outcomes, benchmark_by_problem)
    write_report_csv(report.rows, out.reports / "report.csv")
    write_plot_data(report.rows, out.reports / "report_pareto.json")

    savings: dict[str, float] = {}
    benchmarks = sorted({r.benchmark for r in report.rows})
    for series in ("Easy", "Hard", "Oracle"):
        per_benchmark = {}
        for b in benchmarks:
            try:
                normal = report.row(b, "Normal")
                other = report.row(b, series)
            except KeyError:
                continue
            per_benchmark[b] = (normal.mean_tokens, other.mean_tokens)
        if per_benchmark:
            savings[series] = token_savings(per_benchmark)
    (out.reports / "savings.json").write_text(json.dumps(savings, indent=2))
    write_manifest(
        out.manifest,
        "report",
        settings.snapshot(["outcomes", "problems"]),
        seed,
        extra={"token_savings_vs_normal": savings},
    )
    for series, pct in savings.items():
        print(f"token savings vs Normal ({series}): {pct:.1f}%")
    return 0


def _cmd_simulate_curve(settings: _Settings) -> int:
    seed = int(settings.get("seed", 0))
    out = ensure_layout(settings.get("out", Path("out")))
    backend = _make_backend(settings, seed)
    if not isinstance(backend, SimulatorBackend):
        raise ConfigError("simulate-curve requires a sim backend (--backend sim[:PROFILE])")
    per_rating = int(settings.get("problems_per_rating", 300))
    samples = int(settings.get("samples", settings.get("n", 10)))
    temperature = float(settings.get("temperature", 0.6))
    ratings = sorted(backend.profile.ratings)
    problems = make_problems({r: per_rating for r in ratings}, benchmark="sim")
    rating_by_problem = {p.id: p.difficulty_rating for p in problems}

    def _records():
        for problem in problems:
            for j in range(samples):
                request = GenRequest(
                    strategy_id=Difficulty.NORMAL,
                    temperature=temperature,
                    top_p=None,
                    max_tokens=32768,
                    sample_index=j,
                    seed=seed,
                )
                record = backend.complete(problem, request)
                yield record.with_verdict(compute_verdict(record, problem))

    curve = difficulty_curve(_records(), rating_by_problem)
    curve_path = out.reports / "curve.csv"
    write_curve_csv(curve, curve_path)

    easy_rows = [r for r in curve.rows if r.rating in (1, 2)]
    medium_rows = [r for r in curve.rows if r.rating in (4, 5, 6)]
    reduction = None
    if easy_rows and medium_rows:
        easy_mean = sum(r.mean_entropy for r in easy_rows) / len(easy_rows)
        medium_mean = sum(r.mean_entropy for r in medium_rows) / len(medium_rows)
        reduction = (easy_mean - medium_mean) / easy_mean * 100.0
    write_manifest(
        out.manifest,
        "simulate-curve",
        settings.snapshot(["backend", "problems_per_rating", "samples", "temperature"]),
        seed,
        extra={
            "curve_csv": str(curve_path.relative_to(out.root)),
            "easy_to_medium_entropy_reduction_pct": reduction,
            "skipped_records": curve.skipped,
        },
    )
    for row in curve.rows:
        print(
            f"rating {row.rating:>2}: correctness {row.mean_correctness:.3f} "
            f"entropy {row.mean_entropy:.4f} (n={row.count})"
        )
    if reduction is not None:
        print(f"easy->medium entropy reduction: {reduction:.1f}%")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "route": _cmd_route,
    "serve": _cmd_serve,
    "eval-fixed": _cmd_eval_fixed,
    "eval-oracle": _cmd_eval_oracle,
    "report": _cmd_report,
    "simulate-curve": _cmd_simulate_curve,
}


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        settings = _Settings(args, config)
        return _COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DiffAdaptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
