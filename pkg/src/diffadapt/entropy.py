"""Entropy and correctness metrics: the two axes of the difficulty analysis.

All entropies are Shannon entropies in natural-log units (nats), computed
on the sampling distribution reported by the backend.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import GenerationRecord, TokenStep
from .errors import DomainError

__all__ = [
    "TailMode",
    "token_entropy",
    "entropy_from_topk",
    "generation_entropy",
    "correctness_rate",
    "DifficultyCurve",
    "CurveRow",
    "difficulty_curve",
    "write_curve_csv",
]

_SUM_TOL = 1e-6


class TailMode(str, Enum):
    """How to treat probability mass missing from a top-k truncation."""

    RENORMALIZE = "renormalize"
    TAIL_BUCKET = "tail_bucket"


def token_entropy(probs: Sequence[float]) -> float:
    """Shannon entropy -sum(p * ln p) of a probability vector, in nats.

    0 * ln 0 is taken as 0 by continuity. The result lies in [0, ln m].
    """
    if len(probs) < 1:
        raise DomainError("token_entropy requires at least one outcome")
    total = 0.0
    h = 0.0
    for p in probs:
        if not (isinstance(p, (int, float)) and math.isfinite(p)) or p < 0.0:
            raise DomainError(f"probabilities must be finite and >= 0, got {p!r}")
        total += p
        if p > 0.0:
            h -= p * math.log(p)
    if abs(total - 1.0) > _SUM_TOL:
        raise DomainError(f"probabilities must sum to 1 within {_SUM_TOL}, got {total}")
    # Guard against -0.0 and tiny negative rounding.
    return max(h, 0.0)


def entropy_from_topk(
    alternatives: Sequence[tuple[str, float]],
    tail_mode: TailMode = TailMode.TAIL_BUCKET,
) -> float:
    """Entropy estimated from a top-k (token, logprob) truncation.

    renormalize: rescale the k probabilities to sum 1. tail_bucket: treat
    the residual mass 1 - sum(p) as one extra outcome. The two agree when
    the truncation covers the full distribution.
    """
    if len(alternatives) < 1:
        raise DomainError("entropy_from_topk requires k >= 1 alternatives")
    probs = []
    for _, lp in alternatives:
        if not math.isfinite(lp) or lp > 0.0:
            raise DomainError(f"logprobs must be finite and <= 0, got {lp!r}")
        probs.append(math.exp(lp))
    total = sum(probs)
    if total > 1.0 + _SUM_TOL:
        raise DomainError(f"top-k probabilities sum to {total} > 1")
    if tail_mode is TailMode.RENORMALIZE:
        return token_entropy([p / total for p in probs])
    residual = max(1.0 - total, 0.0)
    if residual > 0.0:
        probs.append(residual)
    return token_entropy(probs)


def generation_entropy(steps: Sequence[TokenStep | float]) -> float:
    """Arithmetic mean of per-token entropies over a completion."""
    if not steps:
        raise DomainError("generation_entropy is undefined for an empty completion")
    total = 0.0
    for s in steps:
        total += s.entropy_nats if isinstance(s, TokenStep) else float(s)
    return total / len(steps)


def correctness_rate(verdicts: Sequence[bool]) -> float:
    """Fraction of correct samples: (1/n) * sum of indicator verdicts."""
    if not verdicts:
        raise DomainError("correctness_rate is undefined for zero samples")
    return sum(1 for v in verdicts if v) / len(verdicts)


@dataclass(frozen=True, slots=True)
class CurveRow:
    rating: int
    mean_correctness: float
    mean_entropy: float
    count: int


@dataclass(frozen=True, slots=True)
class DifficultyCurve:
    rows: tuple[CurveRow, ...]
    skipped: int

    def row(self, rating: int) -> CurveRow:
        for r in self.rows:
            if r.rating == rating:
                return r
        raise KeyError(rating)


def difficulty_curve(
    records: Iterable[GenerationRecord],
    rating_by_problem: Mapping[str, int | None],
) -> DifficultyCurve:
    """Aggregate records into per-rating (mean correctness, mean entropy, count).

    Records missing a rating, an entropy, or a verdict are skipped and
    counted in the ``skipped`` total.
    """
    sums: dict[int, list[float]] = {}
    skipped = 0
    for rec in records:
        rating = rating_by_problem.get(rec.problem_id)
        if rating is None or rec.generation_entropy is None or rec.verdict is None:
            skipped += 1
            continue
        bucket = sums.setdefault(rating, [0.0, 0.0, 0])
        bucket[0] += 1.0 if rec.verdict else 0.0
        bucket[1] += rec.generation_entropy
        bucket[2] += 1
    rows = tuple(
        CurveRow(
            rating=r,
            mean_correctness=c_sum / n,
            mean_entropy=h_sum / n,
            count=n,
        )
        for r, (c_sum, h_sum, n) in sorted(sums.items())
    )
    return DifficultyCurve(rows=rows, skipped=skipped)


def write_curve_csv(curve: DifficultyCurve, path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["rating", "mean_correctness", "mean_entropy", "count"])
        for row in curve.rows:
            writer.writerow([row.rating, row.mean_correctness, row.mean_entropy, row.count])
