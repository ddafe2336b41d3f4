"""On-disk formats shared with the routing pipeline.

The feature file ("DFFV") and the generation-record NDJSON are written
here byte-compatibly with the router's readers; this package talks to
the router only through these files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

FEATURE_MAGIC = b"DFFV"
FEATURE_VERSION = 1


def write_feature_file(
    path: Path | str,
    features: Sequence[tuple[str, np.ndarray]],
    trailer: Mapping[str, Any],
) -> None:
    """magic, u32 version, u32 dim, u32 count, (u32 id-len, id, f32 x dim)
    entries, then a JSON trailer."""
    if not features:
        raise ValueError("refusing to write an empty feature file")
    dim = int(features[0][1].shape[0])
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, dim, len(features)))
        for problem_id, vector in features:
            if vector.shape != (dim,):
                raise ValueError(
                    f"feature for {problem_id!r} has shape {vector.shape}, expected ({dim},)"
                )
            encoded = problem_id.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(np.ascontiguousarray(vector, dtype="<f4").tobytes())
        f.write(json.dumps(dict(trailer)).encode("utf-8"))


def read_problems(path: Path | str) -> list[dict[str, Any]]:
    """Problems NDJSON: one object per line with at least id and question."""
    problems = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if not row.get("id"):
                raise ValueError("problem row missing id")
            problems.append(row)
    return problems


def record_dict(
    problem_id: str,
    sample_index: int,
    completion_text: str,
    steps: list[dict[str, Any]],
    finish_reason: str,
) -> dict[str, Any]:
    """One GenerationRecord row in the router's NDJSON schema."""
    entropies = [s["entropy_nats"] for s in steps]
    return {
        "problem_id": problem_id,
        "strategy_id": "Normal",
        "sample_index": sample_index,
        "completion_text": completion_text,
        "steps": steps,
        "completion_tokens": len(steps),
        "finish_reason": finish_reason,
        "generation_entropy": sum(entropies) / len(entropies) if entropies else None,
        "verdict": None,
    }


def write_records(path: Path | str, records: Iterable[dict[str, Any]]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")
            count += 1
    return count
