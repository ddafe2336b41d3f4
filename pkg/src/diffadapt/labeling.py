"""Stage 1: sample completions per problem, compute correctness/entropy
stats, and assign Easy/Normal/Hard training labels.

Labeling rule, evaluated in order: Normal if correctness >= alpha and
mean entropy <= beta; Hard if correctness < gamma; Easy otherwise (the
overthinking band). Sampling uses the plain question prompt with no
strategy prefix.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .backend import Backend, GenRequest
from .core import (
    DEFAULT_THRESHOLDS,
    MODEL_THRESHOLDS,
    Difficulty,
    DifficultyLabel,
    FeatureVector,
    FinishReason,
    GenerationRecord,
    Problem,
    Thresholds,
)
from .entropy import correctness_rate
from .errors import BackendError, DomainError, InvariantError
from .verify import verdict as compute_verdict

__all__ = [
    "ProblemStats",
    "LabeledExample",
    "SamplingConfig",
    "GenerateResult",
    "assign_label",
    "generate_dataset",
    "thresholds_for_model",
    "read_labeled_dataset",
    "write_labeled_dataset",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ProblemStats:
    """Per-problem correctness rate and mean generation entropy."""

    problem_id: str
    correctness: float
    mean_entropy: float
    n_samples: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.correctness <= 1.0:
            raise InvariantError(f"correctness must be in [0, 1], got {self.correctness}")
        if self.mean_entropy < 0.0:
            raise InvariantError(f"mean_entropy must be >= 0, got {self.mean_entropy}")
        if self.n_samples < 1:
            raise InvariantError(f"n_samples must be >= 1, got {self.n_samples}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "correctness": self.correctness,
            "mean_entropy": self.mean_entropy,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProblemStats":
        return cls(
            problem_id=d["problem_id"],
            correctness=d["correctness"],
            mean_entropy=d["mean_entropy"],
            n_samples=d["n_samples"],
        )


@dataclass(frozen=True, slots=True)
class LabeledExample:
    """One probe-training example: feature vector plus heuristic label."""

    problem_id: str
    feature: FeatureVector
    label: DifficultyLabel
    stats: ProblemStats

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "feature": self.feature.to_dict(),
            "label": self.label.value,
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LabeledExample":
        return cls(
            problem_id=d["problem_id"],
            feature=FeatureVector.from_dict(d["feature"]),
            label=Difficulty(d["label"]),
            stats=ProblemStats.from_dict(d["stats"]),
        )


def assign_label(stats: ProblemStats, thresholds: Thresholds) -> DifficultyLabel:
    """The three-branch heuristic rule; total for any valid thresholds."""
    if stats.correctness >= thresholds.alpha and stats.mean_entropy <= thresholds.beta:
        return Difficulty.NORMAL
    if stats.correctness < thresholds.gamma:
        return Difficulty.HARD
    return Difficulty.EASY


def thresholds_for_model(model_name: str) -> Thresholds:
    """Per-model defaults; unknown models fall back with a warning."""
    key = model_name.casefold().replace("_", "-").replace(" ", "-")
    if key in MODEL_THRESHOLDS:
        return MODEL_THRESHOLDS[key]
    log.warning(
        "no threshold entry for model %r; using defaults (%.2f, %.2f, %.2f)",
        model_name,
        DEFAULT_THRESHOLDS.alpha,
        DEFAULT_THRESHOLDS.beta,
        DEFAULT_THRESHOLDS.gamma,
    )
    return DEFAULT_THRESHOLDS


@dataclass(frozen=True, slots=True)
class SamplingConfig:
    n: int = 10
    temperature: float = 0.6
    max_tokens: int = 32768
    top_k_logprobs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError("sampling n must be >= 1")
        if self.max_tokens < 1:
            raise DomainError("max_tokens must be >= 1")


@dataclass
class GenerateResult:
    examples: list[LabeledExample]
    manifest: dict[str, Any]


@dataclass
class _ProblemWork:
    records: list[GenerationRecord] = field(default_factory=list)
    example: LabeledExample | None = None
    excluded_reason: str | None = None
    shortfall: int = 0


def _sample_problem(
    problem: Problem,
    backend: Backend,
    sampling: SamplingConfig,
    thresholds: Thresholds,
) -> _ProblemWork:
    work = _ProblemWork()
    for j in range(sampling.n):
        request = GenRequest(
            strategy_id=Difficulty.NORMAL,
            temperature=sampling.temperature,
            top_p=None,
            max_tokens=sampling.max_tokens,
            reasoning_opener="",
            logprobs_top_k=sampling.top_k_logprobs,
            sample_index=j,
            seed=sampling.seed,
        )
        try:
            record = backend.complete(problem, request)
        except BackendError as exc:
            log.warning("sample %d for %s failed: %s", j, problem.id, exc)
            record = GenerationRecord(
                problem_id=problem.id,
                strategy_id=Difficulty.NORMAL,
                sample_index=j,
                completion_text="",
                steps=(),
                completion_tokens=0,
                finish_reason=FinishReason.ERROR,
                generation_entropy=None,
                verdict=None,
            )
        if record.has_steps and record.finish_reason != FinishReason.ERROR:
            record = record.with_verdict(compute_verdict(record, problem))
        work.records.append(record)

    good = [
        r
        for r in work.records
        if r.has_steps and r.finish_reason != FinishReason.ERROR
    ]
    work.shortfall = sampling.n - len(good)
    if work.shortfall > sampling.n / 2:
        work.excluded_reason = f"{work.shortfall}/{sampling.n} samples failed"
        return work

    stats = ProblemStats(
        problem_id=problem.id,
        correctness=correctness_rate([bool(r.verdict) for r in good]),
        mean_entropy=sum(r.generation_entropy for r in good) / len(good),
        n_samples=len(good),
    )
    label = assign_label(stats, thresholds)
    try:
        feature = backend.get_representation(problem)
    except (BackendError, DomainError) as exc:
        work.excluded_reason = f"feature retrieval failed: {exc}"
        return work
    work.example = LabeledExample(
        problem_id=problem.id, feature=feature, label=label, stats=stats
    )
    return work


def generate_dataset(
    problems: Sequence[Problem],
    backend: Backend,
    sampling: SamplingConfig = SamplingConfig(),
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    records_path: Path | str | None = None,
    jobs: int = 1,
) -> GenerateResult:
    """Run Stage 1 over a problem list.

    Per-problem work items are independent and run under a bounded thread
    pool; outputs keep the input problem order regardless of completion
    order. Problems with more than half their samples failed, or whose
    feature retrieval fails, are excluded and listed in the manifest.
    """
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            works = list(
                pool.map(
                    lambda p: _sample_problem(p, backend, sampling, thresholds),
                    problems,
                )
            )
    else:
        works = [_sample_problem(p, backend, sampling, thresholds) for p in problems]

    examples: list[LabeledExample] = []
    excluded: list[dict[str, str]] = []
    shortfalls: dict[str, int] = {}
    expected_dim: int | None = None
    for problem, work in zip(problems, works):
        if work.shortfall:
            shortfalls[problem.id] = work.shortfall
        if work.excluded_reason is not None:
            excluded.append({"problem_id": problem.id, "reason": work.excluded_reason})
            continue
        example = work.example
        assert example is not None
        if expected_dim is None:
            expected_dim = example.feature.dim
        elif example.feature.dim != expected_dim:
            excluded.append(
                {
                    "problem_id": problem.id,
                    "reason": f"feature dim {example.feature.dim} != dataset dim {expected_dim}",
                }
            )
            continue
        examples.append(example)

    if records_path is not None:
        with open(records_path, "w", encoding="utf-8") as f:
            for work in works:
                for record in work.records:
                    f.write(json.dumps(record.to_dict()) + "\n")

    distribution = {label.value: 0 for label in Difficulty}
    for ex in examples:
        distribution[ex.label.value] += 1
    manifest = {
        "stage": "generate",
        "created_at": datetime.now(timezone.utc).isoformat(),
        "sampling": asdict(sampling),
        "thresholds": thresholds.to_dict(),
        "backend": backend.describe(),
        "n_problems": len(problems),
        "n_labeled": len(examples),
        "feature_dim": expected_dim,
        "label_distribution": distribution,
        "excluded": excluded,
        "shortfalls": shortfalls,
    }
    return GenerateResult(examples=examples, manifest=manifest)


def write_labeled_dataset(path: Path | str, examples: Iterable[LabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_dict()) + "\n")


def read_labeled_dataset(path: Path | str) -> list[LabeledExample]:
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                examples.append(LabeledExample.from_dict(json.loads(line)))
    return examples
