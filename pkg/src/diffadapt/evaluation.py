"""Oracle strategy selection, fixed-strategy baselines, token savings,
and report emission (CSV tables + Pareto plot data).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backend import Backend, GenRequest
from .core import (
    CLASS_ORDER,
    Difficulty,
    Problem,
    StrategyId,
    StrategyOutcome,
)
from .dispatch import BudgetTable, resolve_strategy
from .errors import BackendError, DomainError
from .verify import verdict as compute_verdict

__all__ = [
    "oracle_select",
    "token_savings",
    "evaluate_fixed",
    "run_strategy",
    "oracle_report",
    "BenchmarkRow",
    "OracleReport",
    "write_report_csv",
    "write_plot_data",
    "read_outcomes",
    "write_outcomes",
]

log = logging.getLogger(__name__)

# Cheaper configured budgets break ties first: Easy (0.4x) < Hard (0.5x) < Normal (1.0x).
_ORACLE_TIE_RANK = {Difficulty.EASY: 0, Difficulty.HARD: 1, Difficulty.NORMAL: 2}


def oracle_select(outcomes: Sequence[StrategyOutcome]) -> StrategyId:
    """The post-hoc optimal strategy for one problem.

    Minimum-token strategy among the correct ones; if none is correct,
    minimum-token overall.
    """
    seen = {o.strategy_id for o in outcomes}
    if len(outcomes) != 3 or seen != set(CLASS_ORDER):
        raise DomainError(
            f"oracle_select needs exactly one outcome per strategy, got "
            f"{[o.strategy_id.value for o in outcomes]}"
        )
    correct = [o for o in outcomes if o.correct]
    pool = correct if correct else list(outcomes)
    best = min(pool, key=lambda o: (o.tokens, _ORACLE_TIE_RANK[o.strategy_id]))
    return best.strategy_id


def token_savings(per_benchmark: Mapping[str, tuple[float, float]]) -> float:
    """Benchmark-averaged relative token reduction vs the Normal strategy,
    in percent. Negative means the method used more tokens."""
    if not per_benchmark:
        raise DomainError("token_savings needs at least one benchmark")
    total = 0.0
    for benchmark, (normal_tokens, method_tokens) in per_benchmark.items():
        if normal_tokens <= 0.0:
            raise DomainError(f"benchmark {benchmark!r} has non-positive Normal tokens")
        total += (normal_tokens - method_tokens) / normal_tokens
    return total / len(per_benchmark) * 100.0


def run_strategy(
    problems: Sequence[Problem],
    backend: Backend,
    strategy: StrategyId,
    budget_table: BudgetTable,
    model_name: str,
    seed: int | None = None,
    logprobs_top_k: int = 20,
) -> list[StrategyOutcome]:
    """One completion per problem under a fixed strategy.

    Backend failures count as incorrect with zero tokens consumed.
    """
    outcomes = []
    for problem in problems:
        base = budget_table.lookup(model_name, problem.benchmark)
        resolved = resolve_strategy(strategy, base)
        request = GenRequest(
            strategy_id=strategy,
            temperature=resolved.temperature,
            top_p=resolved.top_p,
            max_tokens=resolved.max_tokens,
            reasoning_opener=resolved.reasoning_opener,
            logprobs_top_k=logprobs_top_k,
            sample_index=0,
            seed=seed,
        )
        try:
            record = backend.complete(problem, request)
            correct = compute_verdict(record, problem)
            tokens = record.completion_tokens
        except BackendError as exc:
            log.warning("completion failed for %s under %s: %s",
                        problem.id, strategy.value, exc)
            correct, tokens = False, 0
        outcomes.append(
            StrategyOutcome(
                problem_id=problem.id,
                strategy_id=strategy,
                correct=correct,
                tokens=tokens,
            )
        )
    return outcomes


@dataclass(frozen=True, slots=True)
class BenchmarkRow:
    benchmark: str
    series: str
    accuracy: float
    mean_tokens: float
    n: int
    accuracy_stderr: float
    tokens_stderr: float


@dataclass(frozen=True)
class OracleReport:
    rows: tuple[BenchmarkRow, ...]
    excluded_problems: tuple[str, ...]

    def row(self, benchmark: str, series: str) -> BenchmarkRow:
        for r in self.rows:
            if r.benchmark == benchmark and r.series == series:
                return r
        raise KeyError((benchmark, series))


def _aggregate(
    pairs: Sequence[tuple[bool, int]], benchmark: str, series: str
) -> BenchmarkRow:
    n = len(pairs)
    accuracy = sum(1 for correct, _ in pairs if correct) / n
    mean_tokens = sum(t for _, t in pairs) / n
    acc_se = math.sqrt(accuracy * (1.0 - accuracy) / n)
    if n > 1:
        var = sum((t - mean_tokens) ** 2 for _, t in pairs) / (n - 1)
        tok_se = math.sqrt(var / n)
    else:
        tok_se = 0.0
    return BenchmarkRow(
        benchmark=benchmark,
        series=series,
        accuracy=accuracy,
        mean_tokens=mean_tokens,
        n=n,
        accuracy_stderr=acc_se,
        tokens_stderr=tok_se,
    )


def aggregate_outcomes(
    outcomes: Sequence[StrategyOutcome],
    benchmark_by_problem: Mapping[str, str],
    series: str,
) -> list[BenchmarkRow]:
    """Per-benchmark (accuracy, mean tokens) rows for one outcome series."""
    grouped: dict[str, list[tuple[bool, int]]] = {}
    for o in sorted(
        outcomes, key=lambda o: (benchmark_by_problem.get(o.problem_id, "default"), o.problem_id)
    ):
        grouped.setdefault(benchmark_by_problem.get(o.problem_id, "default"), []).append(
            (o.correct, o.tokens)
        )
    return [
        _aggregate(pairs, benchmark, series)
        for benchmark, pairs in sorted(grouped.items())
    ]


def evaluate_fixed(
    problems: Sequence[Problem],
    backend: Backend,
    strategy: StrategyId,
    budget_table: BudgetTable,
    model_name: str,
    seed: int | None = None,
) -> tuple[list[BenchmarkRow], list[StrategyOutcome]]:
    """Fixed-strategy accuracy and mean tokens, aggregated per benchmark."""
    outcomes = run_strategy(problems, backend, strategy, budget_table, model_name, seed)
    benchmark_by_problem = {p.id: p.benchmark for p in problems}
    rows = aggregate_outcomes(outcomes, benchmark_by_problem, strategy.value)
    return rows, outcomes


def oracle_report(
    outcomes: Iterable[StrategyOutcome],
    benchmark_by_problem: Mapping[str, str],
) -> OracleReport:
    """Fixed-strategy rows plus the oracle row, per benchmark.

    Problems without a complete Easy/Normal/Hard triple are excluded and
    reported. Inputs are sorted by (benchmark, problem_id) before
    aggregation so the result is order-independent.
    """
    by_problem: dict[str, dict[StrategyId, StrategyOutcome]] = {}
    for o in outcomes:
        slot = by_problem.setdefault(o.problem_id, {})
        if o.strategy_id in slot:
            raise DomainError(
                f"duplicate outcome for ({o.problem_id}, {o.strategy_id.value})"
            )
        slot[o.strategy_id] = o

    excluded = []
    complete: list[tuple[str, str, dict[StrategyId, StrategyOutcome]]] = []
    for pid, slot in by_problem.items():
        if set(slot) != set(CLASS_ORDER):
            excluded.append(pid)
            log.warning("problem %s has an incomplete strategy triple; excluded", pid)
            continue
        complete.append((benchmark_by_problem.get(pid, "default"), pid, slot))
    complete.sort(key=lambda item: (item[0], item[1]))

    grouped: dict[str, list[dict[StrategyId, StrategyOutcome]]] = {}
    for benchmark, _, slot in complete:
        grouped.setdefault(benchmark, []).append(slot)

    rows: list[BenchmarkRow] = []
    for benchmark, slots in sorted(grouped.items()):
        for strategy in CLASS_ORDER:
            pairs = [(s[strategy].correct, s[strategy].tokens) for s in slots]
            rows.append(_aggregate(pairs, benchmark, strategy.value))
        oracle_pairs = []
        for slot in slots:
            pick = slot[oracle_select(list(slot.values()))]
            oracle_pairs.append((pick.correct, pick.tokens))
        rows.append(_aggregate(oracle_pairs, benchmark, "Oracle"))
    return OracleReport(rows=tuple(rows), excluded_problems=tuple(sorted(excluded)))


def write_report_csv(rows: Iterable[BenchmarkRow], path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["benchmark", "series", "accuracy", "mean_tokens", "n",
             "accuracy_stderr", "tokens_stderr"]
        )
        for r in rows:
            writer.writerow(
                [r.benchmark, r.series, r.accuracy, r.mean_tokens, r.n,
                 r.accuracy_stderr, r.tokens_stderr]
            )


def write_plot_data(rows: Sequence[BenchmarkRow], path: Path | str) -> None:
    """Pareto plot data: accuracy vs mean tokens per series, per benchmark."""
    benchmarks: dict[str, dict[str, list[list[float]]]] = {}
    for r in rows:
        series = benchmarks.setdefault(r.benchmark, {})
        series.setdefault(r.series, []).append([r.mean_tokens, r.accuracy])
    payload = [
        {
            "benchmark": benchmark,
            "series": [
                {"name": name, "points": points}
                for name, points in series.items()
            ],
        }
        for benchmark, series in sorted(benchmarks.items())
    ]
    Path(path).write_text(json.dumps(payload, indent=2))


def write_outcomes(path: Path | str, outcomes: Iterable[StrategyOutcome]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for o in outcomes:
            f.write(json.dumps(o.to_dict()) + "\n")


def read_outcomes(path: Path | str) -> list[StrategyOutcome]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(StrategyOutcome.from_dict(json.loads(line)))
    return out
