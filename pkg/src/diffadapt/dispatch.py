"""Stage 3: map a predicted difficulty to a resolved inference request
and execute it through a backend.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .backend import Backend, GenRequest
from .core import (
    Difficulty,
    GenerationRecord,
    Problem,
    ProbeParameters,
    StrategyConfig,
    StrategyId,
    default_strategy_registry,
)
from .errors import BackendError, DomainError, FormatError
from .probe import predict
from .verify import verdict as compute_verdict

__all__ = [
    "BudgetTable",
    "ResolvedStrategy",
    "RoutedResult",
    "resolve_strategy",
    "reasoning_opener",
    "route",
    "default_budget_table",
]

log = logging.getLogger(__name__)

# Strategies whose reasoning block is closed immediately after the prefix.
_CLOSED_THINK = frozenset({Difficulty.EASY})

_BENCHMARK_ALIASES = {
    "aime24": "aime2024",
    "aime25": "aime2025",
    "math500": "math",
}


def _normalize_key(s: str) -> str:
    key = s.casefold().replace(" ", "").replace("-", "").replace("_", "")
    return _BENCHMARK_ALIASES.get(key, key)


@dataclass(frozen=True)
class BudgetTable:
    """Per-(model, benchmark) base token budgets with a global fallback."""

    entries: Mapping[tuple[str, str], int]
    default_max_tokens: int = 32768

    def __post_init__(self) -> None:
        if self.default_max_tokens < 1:
            raise FormatError("default_max_tokens must be a positive integer")
        for key, tokens in self.entries.items():
            if not (isinstance(tokens, int) and tokens >= 1):
                raise FormatError(f"budget for {key} must be a positive integer, got {tokens!r}")

    def lookup(self, model_name: str, benchmark: str) -> int:
        key = (_normalize_key(model_name), _normalize_key(benchmark))
        return self.entries.get(key, self.default_max_tokens)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BudgetTable":
        entries: dict[tuple[str, str], int] = {}
        for model, row in (d.get("models") or {}).items():
            for benchmark, tokens in row.items():
                entries[(_normalize_key(model), _normalize_key(benchmark))] = int(tokens)
        return cls(entries=entries, default_max_tokens=int(d.get("default_max_tokens", 32768)))

    @classmethod
    def from_json(cls, path: Path | str) -> "BudgetTable":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid budget table {path}: {exc}") from exc


def default_budget_table() -> BudgetTable:
    """The packaged per-model/benchmark token limits."""
    path = Path(__file__).with_name("data").joinpath("default_budgets.json")
    return BudgetTable.from_json(path)


@dataclass(frozen=True, slots=True)
class ResolvedStrategy:
    """A fully resolved request: sampling knobs plus the rendered opener."""

    strategy_id: StrategyId
    temperature: float
    top_p: float | None
    max_tokens: int
    prompt_prefix: str
    reasoning_opener: str


def reasoning_opener(config: StrategyConfig) -> str:
    """Render the prefix inside the reasoning-block opener.

    The Easy variant closes the think tag immediately; Normal and Hard
    leave it open so the model continues reasoning.
    """
    if config.id in _CLOSED_THINK:
        return f"<think>\n{config.prompt_prefix}\n</think>"
    return f"<think>\n{config.prompt_prefix}\n"


def resolve_strategy(
    label: StrategyId,
    base_max_tokens: int,
    registry: Mapping[StrategyId, StrategyConfig] | None = None,
) -> ResolvedStrategy:
    """Turn (label, |Max|) into concrete request parameters."""
    if base_max_tokens < 1:
        raise DomainError(f"base_max_tokens must be >= 1, got {base_max_tokens}")
    config = (registry or default_strategy_registry())[label]
    max_tokens = math.floor(config.max_token_fraction * base_max_tokens)
    if max_tokens <= 1:
        # A 1-token budget is always degenerate; flag it even when the
        # floor lands exactly on 1.
        log.warning(
            "%s budget %.2f * %d floors to %d token(s); using 1",
            label.value,
            config.max_token_fraction,
            base_max_tokens,
            max_tokens,
        )
        max_tokens = 1
    return ResolvedStrategy(
        strategy_id=label,
        temperature=config.temperature,
        top_p=config.top_p,
        max_tokens=max_tokens,
        prompt_prefix=config.prompt_prefix,
        reasoning_opener=reasoning_opener(config),
    )


@dataclass(frozen=True)
class RoutedResult:
    problem_id: str
    label: StrategyId
    resolved: ResolvedStrategy
    record: GenerationRecord | None
    fallback: bool = False
    error: str | None = None


def route(
    problem: Problem,
    probe_params: ProbeParameters,
    backend: Backend,
    budget_table: BudgetTable,
    model_name: str,
    registry: Mapping[StrategyId, StrategyConfig] | None = None,
    sample_index: int = 0,
    seed: int | None = None,
    logprobs_top_k: int = 20,
) -> RoutedResult:
    """Classify one question and run the selected strategy.

    The difficulty prediction never touches generation state; if the
    representation fetch fails (or its dimension does not match the
    probe), routing falls back to the Normal strategy with the fallback
    flag set.
    """
    fallback = False
    try:
        feature = backend.get_representation(problem)
        if feature.dim != probe_params.input_dim:
            log.warning(
                "representation dim %d != probe dim %d for %s; falling back to Normal",
                feature.dim,
                probe_params.input_dim,
                problem.id,
            )
            label = Difficulty.NORMAL
            fallback = True
        else:
            label = predict(probe_params, feature)
    except (BackendError, DomainError) as exc:
        log.warning("representation fetch failed for %s (%s); falling back to Normal",
                    problem.id, exc)
        label = Difficulty.NORMAL
        fallback = True

    base = budget_table.lookup(model_name, problem.benchmark)
    resolved = resolve_strategy(label, base, registry)
    request = GenRequest(
        strategy_id=resolved.strategy_id,
        temperature=resolved.temperature,
        top_p=resolved.top_p,
        max_tokens=resolved.max_tokens,
        reasoning_opener=resolved.reasoning_opener,
        logprobs_top_k=logprobs_top_k,
        sample_index=sample_index,
        seed=seed,
    )
    try:
        record = backend.complete(problem, request)
    except (BackendError, DomainError) as exc:
        return RoutedResult(
            problem_id=problem.id,
            label=label,
            resolved=resolved,
            record=None,
            fallback=fallback,
            error=str(exc),
        )
    if problem.gold_answer:
        record = record.with_verdict(compute_verdict(record, problem))
    return RoutedResult(
        problem_id=problem.id,
        label=label,
        resolved=resolved,
        record=record,
        fallback=fallback,
        error=None,
    )
