"""Core domain types, their invariants, and the NDJSON dataset formats.

Every type validates its invariants at construction and is immutable
afterwards, so values can be shared freely across threads. JSON codecs
round-trip bit-for-bit (``decode(encode(x)) == x``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import InvariantError

__all__ = [
    "Difficulty",
    "DifficultyLabel",
    "StrategyId",
    "FinishReason",
    "CLASS_ORDER",
    "Problem",
    "TokenStep",
    "GenerationRecord",
    "Thresholds",
    "StrategyConfig",
    "FeatureVector",
    "ProbeParameters",
    "StrategyOutcome",
    "DatasetViolation",
    "validate_dataset",
    "default_strategy_registry",
    "read_problems",
    "write_problems",
    "read_records",
    "write_records",
]


class Difficulty(str, Enum):
    """The three-tier label space; doubles as the strategy identifier."""

    EASY = "Easy"
    NORMAL = "Normal"
    HARD = "Hard"

    @property
    def class_index(self) -> int:
        return CLASS_ORDER.index(self)


# Fixed global class order: (Easy, Normal, Hard) = indices (0, 1, 2).
CLASS_ORDER: tuple[Difficulty, ...] = (
    Difficulty.EASY,
    Difficulty.NORMAL,
    Difficulty.HARD,
)

# Labels and strategy ids share the same three values; keep both names so
# call sites read naturally.
DifficultyLabel = Difficulty
StrategyId = Difficulty


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvariantError(message)


def _finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)


@dataclass(frozen=True, slots=True)
class Problem:
    """One benchmark question with its canonical gold answer."""

    id: str
    question: str
    gold_answer: str
    difficulty_rating: int | None = None
    benchmark: str = "default"
    split: str = "eval"

    def __post_init__(self) -> None:
        _require(bool(self.id), "Problem.id must be non-empty")
        if self.difficulty_rating is not None:
            _require(
                isinstance(self.difficulty_rating, int)
                and 1 <= self.difficulty_rating <= 10,
                f"difficulty_rating must be in [1, 10], got {self.difficulty_rating!r}",
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "gold_answer": self.gold_answer,
            "difficulty_rating": self.difficulty_rating,
            "benchmark": self.benchmark,
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Problem":
        return cls(
            id=d["id"],
            question=d.get("question", ""),
            gold_answer=d.get("gold_answer", ""),
            difficulty_rating=d.get("difficulty_rating"),
            benchmark=d.get("benchmark", "default"),
            split=d.get("split", "eval"),
        )


@dataclass(frozen=True, slots=True)
class TokenStep:
    """Per-token sampling data: chosen token, top-k alternatives, entropy."""

    token_text: str
    chosen_logprob: float
    alternatives: tuple[tuple[str, float], ...]
    entropy_nats: float

    def __post_init__(self) -> None:
        _require(
            _finite(self.chosen_logprob) and self.chosen_logprob <= 0.0,
            f"chosen_logprob must be finite and <= 0, got {self.chosen_logprob!r}",
        )
        _require(len(self.alternatives) >= 1, "alternatives must be non-empty")
        prev = 0.0
        seen_chosen = False
        for i, (tok, lp) in enumerate(self.alternatives):
            _require(
                _finite(lp) and lp <= 0.0,
                f"alternative logprob must be finite and <= 0, got {lp!r}",
            )
            if i > 0:
                _require(lp <= prev, "alternatives must be sorted descending by logprob")
            prev = lp
            if tok == self.token_text and lp == self.chosen_logprob:
                seen_chosen = True
        _require(seen_chosen, "alternatives must include the chosen token")
        _require(
            _finite(self.entropy_nats) and self.entropy_nats >= 0.0,
            f"entropy_nats must be finite and >= 0, got {self.entropy_nats!r}",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "token_text": self.token_text,
            "chosen_logprob": self.chosen_logprob,
            "alternatives": [[t, lp] for t, lp in self.alternatives],
            "entropy_nats": self.entropy_nats,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TokenStep":
        return cls(
            token_text=d["token_text"],
            chosen_logprob=d["chosen_logprob"],
            alternatives=tuple((t, lp) for t, lp in d["alternatives"]),
            entropy_nats=d["entropy_nats"],
        )


@dataclass(frozen=True, slots=True)
class GenerationRecord:
    """One sampled completion with its per-token data and verdict.

    ``steps`` may be empty when the backend did not return logprobs; in
    that case ``generation_entropy`` must be absent and labeling refuses
    the record.
    """

    problem_id: str
    strategy_id: StrategyId
    sample_index: int
    completion_text: str
    steps: tuple[TokenStep, ...]
    completion_tokens: int
    finish_reason: FinishReason
    generation_entropy: float | None
    verdict: bool | None = None

    def __post_init__(self) -> None:
        _require(self.sample_index >= 0, "sample_index must be >= 0")
        _require(self.completion_tokens >= 0, "completion_tokens must be >= 0")
        if self.steps:
            _require(
                self.completion_tokens == len(self.steps),
                f"completion_tokens ({self.completion_tokens}) must equal "
                f"len(steps) ({len(self.steps)})",
            )
            _require(
                self.generation_entropy is not None,
                "generation_entropy required when steps are present",
            )
            mean = sum(s.entropy_nats for s in self.steps) / len(self.steps)
            _require(
                math.isclose(self.generation_entropy, mean, rel_tol=1e-9, abs_tol=1e-12),
                f"generation_entropy ({self.generation_entropy}) must equal the "
                f"mean of step entropies ({mean})",
            )
        else:
            _require(
                self.generation_entropy is None,
                "generation_entropy must be absent when steps are absent",
            )

    @property
    def has_steps(self) -> bool:
        return bool(self.steps)

    def with_verdict(self, verdict: bool) -> "GenerationRecord":
        return replace(self, verdict=verdict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "strategy_id": self.strategy_id.value,
            "sample_index": self.sample_index,
            "completion_text": self.completion_text,
            "steps": [s.to_dict() for s in self.steps],
            "completion_tokens": self.completion_tokens,
            "finish_reason": self.finish_reason.value,
            "generation_entropy": self.generation_entropy,
            "verdict": self.verdict,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GenerationRecord":
        return cls(
            problem_id=d["problem_id"],
            strategy_id=Difficulty(d["strategy_id"]),
            sample_index=d["sample_index"],
            completion_text=d["completion_text"],
            steps=tuple(TokenStep.from_dict(s) for s in d.get("steps") or ()),
            completion_tokens=d["completion_tokens"],
            finish_reason=FinishReason(d["finish_reason"]),
            generation_entropy=d.get("generation_entropy"),
            verdict=d.get("verdict"),
        )


@dataclass(frozen=True, slots=True)
class Thresholds:
    """The (alpha, beta, gamma) triple driving Easy/Normal/Hard labeling."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        _require(
            _finite(self.alpha) and 0.0 < self.alpha <= 1.0,
            f"alpha must be in (0, 1], got {self.alpha!r}",
        )
        _require(
            _finite(self.beta) and self.beta > 0.0,
            f"beta must be a positive number of nats, got {self.beta!r}",
        )
        _require(
            _finite(self.gamma) and 0.0 <= self.gamma < 1.0,
            f"gamma must be in [0, 1), got {self.gamma!r}",
        )
        # The three-branch rule is only unambiguous when alpha >= gamma.
        _require(
            self.alpha >= self.gamma,
            f"alpha ({self.alpha}) must be >= gamma ({self.gamma})",
        )

    def to_dict(self) -> dict[str, Any]:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Thresholds":
        return cls(alpha=d["alpha"], beta=d["beta"], gamma=d["gamma"])


# Per-model defaults; unknown models fall back to the first row (with a
# warning at the call site that resolves them).
MODEL_THRESHOLDS: dict[str, Thresholds] = {
    "deepseek-r1-qwen-7b": Thresholds(0.85, 0.35, 0.60),
    "deepseek-r1-llama-8b": Thresholds(0.85, 0.35, 0.60),
    "qwen3-4b": Thresholds(0.88, 0.32, 0.65),
}
DEFAULT_THRESHOLDS = Thresholds(0.85, 0.35, 0.60)


@dataclass(frozen=True, slots=True)
class StrategyConfig:
    """One inference strategy: sampling knobs plus the reasoning prefix."""

    id: StrategyId
    temperature: float
    top_p: float | None
    max_token_fraction: float
    prompt_prefix: str

    def __post_init__(self) -> None:
        _require(
            _finite(self.temperature) and self.temperature > 0.0,
            f"temperature must be positive, got {self.temperature!r}",
        )
        if self.top_p is not None:
            _require(
                _finite(self.top_p) and 0.0 < self.top_p <= 1.0,
                f"top_p must be in (0, 1], got {self.top_p!r}",
            )
        _require(
            _finite(self.max_token_fraction) and 0.0 < self.max_token_fraction <= 1.0,
            f"max_token_fraction must be in (0, 1], got {self.max_token_fraction!r}",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id.value,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_token_fraction": self.max_token_fraction,
            "prompt_prefix": self.prompt_prefix,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StrategyConfig":
        return cls(
            id=Difficulty(d["id"]),
            temperature=d["temperature"],
            top_p=d.get("top_p"),
            max_token_fraction=d["max_token_fraction"],
            prompt_prefix=d["prompt_prefix"],
        )


EASY_PREFIX = (
    "This looks straightforward. Let me solve it directly while "
    "double-checking my approach."
)
NORMAL_PREFIX = "I'll break this down into clear, logical steps and solve methodically."
HARD_PREFIX = (
    "This appears intricate. I'll outline the main method while being "
    "mindful of computational resources."
)


def default_strategy_registry() -> dict[StrategyId, StrategyConfig]:
    """The standard three-strategy registry: Easy (0.5, 0.4x), Normal
    (0.8 + top-p 0.95, 1.0x), Hard (0.4, 0.5x)."""
    return {
        Difficulty.EASY: StrategyConfig(
            id=Difficulty.EASY,
            temperature=0.5,
            top_p=None,
            max_token_fraction=0.4,
            prompt_prefix=EASY_PREFIX,
        ),
        Difficulty.NORMAL: StrategyConfig(
            id=Difficulty.NORMAL,
            temperature=0.8,
            top_p=0.95,
            max_token_fraction=1.0,
            prompt_prefix=NORMAL_PREFIX,
        ),
        Difficulty.HARD: StrategyConfig(
            id=Difficulty.HARD,
            temperature=0.4,
            top_p=None,
            max_token_fraction=0.5,
            prompt_prefix=HARD_PREFIX,
        ),
    }


@dataclass(frozen=True, slots=True)
class FeatureVector:
    """A finite real vector used as probe input."""

    dim: int
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        _require(self.dim > 0, "dim must be > 0")
        _require(
            len(self.values) == self.dim,
            f"len(values) ({len(self.values)}) != dim ({self.dim})",
        )
        for v in self.values:
            _require(_finite(v), f"feature values must be finite, got {v!r}")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "FeatureVector":
        vals = tuple(float(v) for v in values)
        return cls(dim=len(vals), values=vals)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureVector":
        return cls(dim=d["dim"], values=tuple(float(v) for v in d["values"]))


class ProbeParameters:
    """Two-layer MLP weights mapping a feature vector to 3-class logits.

    Arrays are float64, made read-only at construction.
    """

    __slots__ = ("input_dim", "hidden_dim", "W1", "b1", "W2", "b2")

    def __init__(
        self,
        W1: np.ndarray,
        b1: np.ndarray,
        W2: np.ndarray,
        b2: np.ndarray,
    ) -> None:
        # Copy so freezing never mutates caller-owned arrays.
        W1 = np.array(W1, dtype=np.float64, order="C")
        b1 = np.array(b1, dtype=np.float64, order="C")
        W2 = np.array(W2, dtype=np.float64, order="C")
        b2 = np.array(b2, dtype=np.float64, order="C")
        if W1.ndim != 2:
            raise InvariantError(f"W1 must be 2-D, got shape {W1.shape}")
        h, d = W1.shape
        if b1.shape != (h,):
            raise InvariantError(f"b1 shape {b1.shape} inconsistent with W1 {W1.shape}")
        if W2.shape != (3, h):
            raise InvariantError(f"W2 shape {W2.shape} must be (3, {h})")
        if b2.shape != (3,):
            raise InvariantError(f"b2 shape {b2.shape} must be (3,)")
        for name, arr in (("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2)):
            if not np.all(np.isfinite(arr)):
                raise InvariantError(f"{name} contains non-finite entries")
        for arr in (W1, b1, W2, b2):
            arr.flags.writeable = False
        object.__setattr__(self, "input_dim", d)
        object.__setattr__(self, "hidden_dim", h)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "W2", W2)
        object.__setattr__(self, "b2", b2)

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("ProbeParameters is immutable")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbeParameters):
            return NotImplemented
        return (
            np.array_equal(self.W1, other.W1)
            and np.array_equal(self.b1, other.b1)
            and np.array_equal(self.W2, other.W2)
            and np.array_equal(self.b2, other.b2)
        )

    def __repr__(self) -> str:
        return f"ProbeParameters(input_dim={self.input_dim}, hidden_dim={self.hidden_dim})"

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "ProbeParameters":
        return cls(
            W1=np.zeros((hidden_dim, input_dim)),
            b1=np.zeros(hidden_dim),
            W2=np.zeros((3, hidden_dim)),
            b2=np.zeros(3),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProbeParameters":
        params = cls(
            W1=np.array(d["W1"], dtype=np.float64),
            b1=np.array(d["b1"], dtype=np.float64),
            W2=np.array(d["W2"], dtype=np.float64),
            b2=np.array(d["b2"], dtype=np.float64),
        )
        if params.input_dim != d["input_dim"] or params.hidden_dim != d["hidden_dim"]:
            raise InvariantError("serialized dims inconsistent with array shapes")
        return params


@dataclass(frozen=True, slots=True)
class StrategyOutcome:
    """Result of running one strategy on one problem."""

    problem_id: str
    strategy_id: StrategyId
    correct: bool
    tokens: int

    def __post_init__(self) -> None:
        _require(
            isinstance(self.tokens, int) and self.tokens >= 0,
            f"tokens must be a nonnegative integer, got {self.tokens!r}",
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "strategy_id": self.strategy_id.value,
            "correct": self.correct,
            "tokens": self.tokens,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StrategyOutcome":
        return cls(
            problem_id=d["problem_id"],
            strategy_id=Difficulty(d["strategy_id"]),
            correct=d["correct"],
            tokens=d["tokens"],
        )


@dataclass(frozen=True, slots=True)
class DatasetViolation:
    problem_id: str
    kind: str
    message: str


def validate_dataset(
    problems: Iterable[Problem | Mapping[str, Any]],
) -> list[DatasetViolation]:
    """Report-only dataset validation.

    Accepts constructed ``Problem`` values or raw NDJSON rows (dicts), so
    it can run before strict construction rejects bad rows. Returns one
    violation per issue; an empty list means the dataset is valid.
    """
    violations: list[DatasetViolation] = []
    seen: set[str] = set()
    for row in problems:
        if isinstance(row, Problem):
            pid = row.id
            gold = row.gold_answer
            rating = row.difficulty_rating
        else:
            pid = str(row.get("id", ""))
            gold = row.get("gold_answer", "")
            rating = row.get("difficulty_rating")
        if not pid:
            violations.append(DatasetViolation(pid, "empty_id", "problem id is empty"))
        elif pid in seen:
            violations.append(
                DatasetViolation(pid, "duplicate_id", f"duplicate problem id {pid!r}")
            )
        else:
            seen.add(pid)
        if not gold:
            violations.append(
                DatasetViolation(pid, "missing_gold_answer", f"{pid!r} has no gold answer")
            )
        if rating is not None and not (
            isinstance(rating, int) and 1 <= rating <= 10
        ):
            violations.append(
                DatasetViolation(
                    pid, "rating_out_of_range", f"{pid!r} rating {rating!r} not in [1, 10]"
                )
            )
    return violations


# ---------------------------------------------------------------------------
# NDJSON dataset formats
# ---------------------------------------------------------------------------


def _iter_ndjson(path: Path | str) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_problems(path: Path | str) -> list[Problem]:
    return [Problem.from_dict(row) for row in _iter_ndjson(path)]


def write_problems(path: Path | str, problems: Iterable[Problem]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in problems:
            f.write(json.dumps(p.to_dict()) + "\n")


def read_records(path: Path | str) -> list[GenerationRecord]:
    return [GenerationRecord.from_dict(row) for row in _iter_ndjson(path)]


def write_records(path: Path | str, records: Iterable[GenerationRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict()) + "\n")
