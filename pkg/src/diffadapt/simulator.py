"""Deterministic synthetic backend with closed-form ground truth.

Every draw comes from a counter-based generator keyed by
(seed, problem_id, strategy, sample_index), so results are byte-identical
across runs and platforms and independent of execution order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .backend import Backend, GenRequest
from .core import (
    Difficulty,
    FeatureVector,
    FinishReason,
    GenerationRecord,
    Problem,
    StrategyId,
    TokenStep,
)
from .errors import DomainError, FormatError

__all__ = [
    "RatingProfile",
    "SimProfile",
    "SimulatorBackend",
    "default_profile",
    "load_profile",
    "make_problems",
]

_FILLER = ("the", "so", "let", "sum", "we", "if", "thus")


@dataclass(frozen=True)
class RatingProfile:
    """Closed-form behavior at one difficulty rating."""

    accuracy_by_strategy: Mapping[StrategyId, float]
    mean_entropy: float
    entropy_spread: float
    mean_length_by_strategy: Mapping[StrategyId, float]
    feature_center: FeatureVector
    feature_noise: float

    def __post_init__(self) -> None:
        for s, p in self.accuracy_by_strategy.items():
            if not 0.0 <= p <= 1.0:
                raise FormatError(f"accuracy for {s} must be in [0, 1], got {p}")
        for s, length in self.mean_length_by_strategy.items():
            if length < 1.0:
                raise FormatError(f"mean length for {s} must be >= 1, got {length}")
        if self.mean_entropy < 0.0 or self.entropy_spread < 0.0:
            raise FormatError("mean_entropy and entropy_spread must be >= 0")
        if self.feature_noise < 0.0:
            raise FormatError("feature_noise must be >= 0")


@dataclass(frozen=True)
class SimProfile:
    """Per-rating behavior table for the synthetic model."""

    ratings: Mapping[int, RatingProfile]
    feature_dim: int

    def rating(self, r: int) -> RatingProfile:
        try:
            return self.ratings[r]
        except KeyError:
            raise DomainError(f"profile has no rating {r}") from None

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature_dim": self.feature_dim,
            "ratings": {
                str(r): {
                    "accuracy": {s.value: p for s, p in rp.accuracy_by_strategy.items()},
                    "mean_entropy": rp.mean_entropy,
                    "entropy_spread": rp.entropy_spread,
                    "mean_length": {
                        s.value: l for s, l in rp.mean_length_by_strategy.items()
                    },
                    "feature_center": list(rp.feature_center.values),
                    "feature_noise": rp.feature_noise,
                }
                for r, rp in sorted(self.ratings.items())
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SimProfile":
        dim = int(d["feature_dim"])
        ratings: dict[int, RatingProfile] = {}
        for key, row in d["ratings"].items():
            center = FeatureVector.from_values(row["feature_center"])
            if center.dim != dim:
                raise FormatError(
                    f"rating {key}: feature_center dim {center.dim} != {dim}"
                )
            ratings[int(key)] = RatingProfile(
                accuracy_by_strategy={
                    Difficulty(s): float(p) for s, p in row["accuracy"].items()
                },
                mean_entropy=float(row["mean_entropy"]),
                entropy_spread=float(row["entropy_spread"]),
                mean_length_by_strategy={
                    Difficulty(s): float(l) for s, l in row["mean_length"].items()
                },
                feature_center=center,
                feature_noise=float(row["feature_noise"]),
            )
        return cls(ratings=ratings, feature_dim=dim)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def default_profile() -> SimProfile:
    """The packaged profile: U-shaped entropy over ratings 1..10 with a
    ~23% easy-to-medium dip, accuracy decreasing in rating."""
    data = json.loads(
        Path(__file__).with_name("data").joinpath("default_profile.json").read_text()
    )
    return SimProfile.from_dict(data)


def load_profile(spec: str | Path) -> SimProfile:
    """Load ``default`` or a JSON profile file path."""
    if str(spec) in ("", "default"):
        return default_profile()
    path = Path(spec)
    if not path.exists():
        raise FormatError(f"simulator profile not found: {path}")
    return SimProfile.from_dict(json.loads(path.read_text()))


def _derive_rng(*parts: Any) -> np.random.Generator:
    key = "|".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))


class SimulatorBackend(Backend):
    """Synthetic completions: Bernoulli correctness, geometric-ish lengths
    clamped to the request budget, Gaussian per-token entropies, and
    Gaussian feature clusters per rating."""

    def __init__(self, profile: SimProfile | None = None, seed: int = 0) -> None:
        self.profile = profile or default_profile()
        self.seed = seed

    def complete(self, problem: Problem, request: GenRequest) -> GenerationRecord:
        if problem.difficulty_rating is None:
            raise DomainError(f"problem {problem.id!r} has no difficulty rating")
        rp = self.profile.rating(problem.difficulty_rating)
        strategy = request.strategy_id
        if strategy not in rp.accuracy_by_strategy:
            raise DomainError(f"profile rating has no strategy {strategy}")
        base_seed = request.seed if request.seed is not None else self.seed
        rng = _derive_rng(base_seed, problem.id, strategy.value, request.sample_index)

        correct = bool(rng.random() < rp.accuracy_by_strategy[strategy])
        mean_len = rp.mean_length_by_strategy[strategy]
        length = int(rng.geometric(min(1.0, 1.0 / mean_len)))
        clamped = length > request.max_tokens
        if clamped:
            length = request.max_tokens
        entropies = rng.normal(rp.mean_entropy, rp.entropy_spread, size=length)
        np.maximum(entropies, 0.0, out=entropies)

        steps = []
        n_filler = len(_FILLER)
        for i in range(length):
            h = float(entropies[i])
            lp = -h
            tok = _FILLER[i % n_filler]
            steps.append(
                TokenStep(
                    token_text=tok,
                    chosen_logprob=lp,
                    alternatives=((tok, lp),),
                    entropy_nats=h,
                )
            )
        answer = problem.gold_answer if correct else f"{problem.gold_answer}_wrong"
        text = (
            f"{request.reasoning_opener}Synthetic reasoning over {length} tokens "
            f"for rating {problem.difficulty_rating}. "
            f"\\boxed{{{answer}}}"
        )
        return GenerationRecord(
            problem_id=problem.id,
            strategy_id=strategy,
            sample_index=request.sample_index,
            completion_text=text,
            steps=tuple(steps),
            completion_tokens=length,
            finish_reason=FinishReason.LENGTH if clamped else FinishReason.STOP,
            generation_entropy=float(np.mean(entropies)) if length else None,
            verdict=None,
        )

    def get_representation(self, problem: Problem) -> FeatureVector:
        if problem.difficulty_rating is None:
            raise DomainError(f"problem {problem.id!r} has no difficulty rating")
        rp = self.profile.rating(problem.difficulty_rating)
        rng = _derive_rng(self.seed, problem.id, "repr")
        center = rp.feature_center.as_array()
        if rp.feature_noise > 0.0:
            values = center + rp.feature_noise * rng.standard_normal(center.shape[0])
        else:
            values = center
        return FeatureVector.from_values(values)

    def representation_fingerprint(self) -> str:
        return f"sim:{self.profile.fingerprint()}"

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "simulator",
            "profile": self.profile.fingerprint(),
            "seed": self.seed,
            "feature_dim": self.profile.feature_dim,
        }


def make_problems(
    counts_by_rating: Mapping[int, int],
    benchmark: str = "sim",
    split: str = "eval",
) -> list[Problem]:
    """Synthetic problems covering the given ratings, deterministic ids."""
    problems = []
    for rating in sorted(counts_by_rating):
        for i in range(counts_by_rating[rating]):
            pid = f"{benchmark}-r{rating:02d}-{i:04d}"
            problems.append(
                Problem(
                    id=pid,
                    question=f"Synthetic question {i} at difficulty {rating}.",
                    gold_answer=str(rating * 1000 + i),
                    difficulty_rating=rating,
                    benchmark=benchmark,
                    split=split,
                )
            )
    return problems
