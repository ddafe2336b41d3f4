"""Run configuration loading, output layout, and manifest writing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

__all__ = ["load_config", "ensure_layout", "write_manifest", "file_sha256", "OutputLayout"]

# Every key a config file may set; CLI flags override these.
ALLOWED_CONFIG_KEYS = frozenset(
    {
        "seed",
        "out",
        "backend",
        "jobs",
        "problems",
        "n",
        "temperature",
        "max_tokens",
        "top_k_logprobs",
        "thresholds",
        "model",
        "data",
        "epochs",
        "lr",
        "weight_decay",
        "batch_size",
        "hidden_dim",
        "probe",
        "budgets",
        "budget_scale",
        "listen",
        "strategy",
        "benchmark",
        "question",
        "rating",
        "problems_per_rating",
        "samples",
        "outcomes",
        "features",
        "repr",
        "flavor",
        "fingerprint",
        "tail_mode",
    }
)


def load_config(path: Path | str | None) -> dict[str, Any]:
    """Load and validate a JSON config file; unknown keys are an error."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(data) - ALLOWED_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys in {p}: {', '.join(unknown)}")
    return data


@dataclass(frozen=True)
class OutputLayout:
    root: Path
    records: Path
    features: Path
    probes: Path
    reports: Path
    manifest: Path


def ensure_layout(out_dir: Path | str) -> OutputLayout:
    root = Path(out_dir)
    layout = OutputLayout(
        root=root,
        records=root / "records",
        features=root / "features",
        probes=root / "probes",
        reports=root / "reports",
        manifest=root / "manifest.json",
    )
    for d in (layout.root, layout.records, layout.features, layout.probes, layout.reports):
        d.mkdir(parents=True, exist_ok=True)
    return layout


def file_sha256(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(
    path: Path | str,
    command: str,
    config_snapshot: Mapping[str, Any],
    seed: int,
    inputs: Mapping[str, Path | str] | None = None,
    extra: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    from . import __version__

    manifest: dict[str, Any] = {
        "command": command,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "package_version": __version__,
        "seed": seed,
        "config": dict(config_snapshot),
        "inputs": {
            name: {"path": str(p), "sha256": file_sha256(p)}
            for name, p in (inputs or {}).items()
            if Path(p).exists()
        },
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, default=str))
    return manifest
