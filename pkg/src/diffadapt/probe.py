"""The difficulty probe: a two-layer MLP over prefill features.

softmax(W2 @ relu(W1 @ h + b1) + b2) -> 3-class distribution over
(Easy, Normal, Hard). Forward, cross-entropy loss, exact analytic
gradients, a minibatch AdamW loop, and the binary probe-file format.
All math in double precision; deterministic given the seed.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import CLASS_ORDER, Difficulty, FeatureVector, ProbeParameters, StrategyId
from .errors import DomainError, FormatError, ProbeTrainingError
from .labeling import LabeledExample

__all__ = [
    "TrainConfig",
    "TrainLog",
    "ProbeGradient",
    "forward",
    "loss",
    "gradient",
    "train",
    "predict",
    "save_probe",
    "load_probe",
    "LoadedProbe",
]

log = logging.getLogger(__name__)

PROBE_MAGIC = b"DFAP"
PROBE_VERSION = 1

# Tie-break preference: Normal first (safest budget), then Easy, then Hard.
_PREDICT_PREFERENCE = (1, 0, 2)


@dataclass(frozen=True, slots=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    hidden_dim: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        for name in ("learning_rate", "weight_decay", "adam_beta1", "adam_beta2",
                     "adam_eps", "batch_size", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")


@dataclass
class TrainLog:
    epoch_losses: list[float] = field(default_factory=list)
    final_train_accuracy: float = 0.0
    class_counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ProbeGradient:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


Batch = Sequence[tuple[FeatureVector, Difficulty]]


def _batch_arrays(batch: Batch, input_dim: int) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise DomainError("batch must be nonempty")
    X = np.empty((len(batch), input_dim), dtype=np.float64)
    y = np.empty(len(batch), dtype=np.int64)
    for i, (feature, label) in enumerate(batch):
        if feature.dim != input_dim:
            raise DomainError(
                f"feature dim {feature.dim} != probe input dim {input_dim}"
            )
        X[i] = feature.values
        y[i] = label.class_index
    return X, y


def _forward_batch(
    params: ProbeParameters, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (log_probs, probs, hidden activations) for a batch."""
    Z1 = X @ params.W1.T + params.b1
    A1 = np.maximum(Z1, 0.0)
    logits = A1 @ params.W2.T + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    return log_probs, np.exp(log_probs), A1


def forward(params: ProbeParameters, feature: FeatureVector) -> np.ndarray:
    """Predicted (Easy, Normal, Hard) probability triple for one feature."""
    if feature.dim != params.input_dim:
        raise DomainError(
            f"feature dim {feature.dim} != probe input dim {params.input_dim}"
        )
    X = np.asarray(feature.values, dtype=np.float64)[None, :]
    _, probs, _ = _forward_batch(params, X)
    return probs[0]


def loss(params: ProbeParameters, batch: Batch) -> float:
    """Mean cross-entropy of the batch, computed via log-softmax."""
    X, y = _batch_arrays(batch, params.input_dim)
    log_probs, _, _ = _forward_batch(params, X)
    return float(-log_probs[np.arange(len(y)), y].mean())


def gradient(params: ProbeParameters, batch: Batch) -> ProbeGradient:
    """Exact gradient of the mean cross-entropy w.r.t. every parameter.

    ReLU subgradient at exactly 0 is taken as 0.
    """
    X, y = _batch_arrays(batch, params.input_dim)
    return _gradient_arrays(params, X, y)


def _gradient_arrays(
    params: ProbeParameters, X: np.ndarray, y: np.ndarray
) -> ProbeGradient:
    n = X.shape[0]
    Z1 = X @ params.W1.T + params.b1
    A1 = np.maximum(Z1, 0.0)
    logits = A1 @ params.W2.T + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    P = expd / expd.sum(axis=1, keepdims=True)
    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G /= n
    dW2 = G.T @ A1
    db2 = G.sum(axis=0)
    dA1 = G @ params.W2
    dZ1 = dA1 * (Z1 > 0.0)
    dW1 = dZ1.T @ X
    db1 = dZ1.sum(axis=0)
    return ProbeGradient(W1=dW1, b1=db1, W2=dW2, b2=db2)


def _init_params(input_dim: int, hidden_dim: int, rng: np.random.Generator) -> ProbeParameters:
    # Uniform scaled by 1/sqrt(fan_in); biases zero.
    W1 = rng.uniform(-1.0, 1.0, size=(hidden_dim, input_dim)) / np.sqrt(input_dim)
    W2 = rng.uniform(-1.0, 1.0, size=(3, hidden_dim)) / np.sqrt(hidden_dim)
    return ProbeParameters(W1=W1, b1=np.zeros(hidden_dim), W2=W2, b2=np.zeros(3))


def train(
    dataset: Sequence[LabeledExample],
    config: TrainConfig = TrainConfig(),
) -> tuple[ProbeParameters, TrainLog]:
    """Minibatch AdamW (decoupled weight decay) over the labeled dataset."""
    if not dataset:
        raise DomainError("training dataset must be nonempty")
    input_dim = dataset[0].feature.dim
    X = np.empty((len(dataset), input_dim), dtype=np.float64)
    y = np.empty(len(dataset), dtype=np.int64)
    counts = {label.value: 0 for label in CLASS_ORDER}
    for i, ex in enumerate(dataset):
        if ex.feature.dim != input_dim:
            raise DomainError(
                f"inconsistent feature dims: {ex.feature.dim} != {input_dim}"
            )
        X[i] = ex.feature.values
        y[i] = ex.label.class_index
        counts[ex.label.value] += 1
    for label, count in counts.items():
        if count == 0:
            log.warning("training data has no %s examples", label)

    rng = np.random.default_rng(config.seed)
    params = _init_params(input_dim, config.hidden_dim, rng)
    weights = {
        "W1": params.W1.copy(),
        "b1": params.b1.copy(),
        "W2": params.W2.copy(),
        "b2": params.b2.copy(),
    }
    m = {k: np.zeros_like(v) for k, v in weights.items()}
    v = {k: np.zeros_like(val) for k, val in weights.items()}
    lr = config.learning_rate
    b1c, b2c = config.adam_beta1, config.adam_beta2
    eps, wd = config.adam_eps, config.weight_decay

    train_log = TrainLog(class_counts=counts)
    step = 0
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            Xb, yb = X[idx], y[idx]
            current = ProbeParameters(**weights)
            log_probs, _, _ = _forward_batch(current, Xb)
            batch_loss = float(-log_probs[np.arange(len(yb)), yb].mean())
            if not np.isfinite(batch_loss):
                raise ProbeTrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}: {batch_loss}"
                )
            grads = _gradient_arrays(current, Xb, yb)
            step += 1
            bias1 = 1.0 - b1c**step
            bias2 = 1.0 - b2c**step
            for key, g in (("W1", grads.W1), ("b1", grads.b1),
                           ("W2", grads.W2), ("b2", grads.b2)):
                m[key] = b1c * m[key] + (1.0 - b1c) * g
                v[key] = b2c * v[key] + (1.0 - b2c) * g * g
                update = (m[key] / bias1) / (np.sqrt(v[key] / bias2) + eps)
                weights[key] = weights[key] - lr * update - lr * wd * weights[key]
            epoch_loss += batch_loss
            n_batches += 1
        train_log.epoch_losses.append(epoch_loss / n_batches)

    final = ProbeParameters(**weights)
    _, probs, _ = _forward_batch(final, X)
    predictions = _argmax_preferred(probs)
    train_log.final_train_accuracy = float((predictions == y).mean())
    return final, train_log


def _argmax_preferred(probs: np.ndarray) -> np.ndarray:
    """Row argmax with ties broken toward Normal, then Easy, then Hard."""
    best = np.full(probs.shape[0], _PREDICT_PREFERENCE[0], dtype=np.int64)
    for idx in _PREDICT_PREFERENCE[1:]:
        better = probs[:, idx] > probs[np.arange(probs.shape[0]), best]
        best[better] = idx
    return best


def predict(params: ProbeParameters, feature: FeatureVector) -> StrategyId:
    """Argmax class of the forward pass, with the declared tie-break."""
    probs = forward(params, feature)
    best = _PREDICT_PREFERENCE[0]
    for idx in _PREDICT_PREFERENCE[1:]:
        if probs[idx] > probs[best]:
            best = idx
    return CLASS_ORDER[best]


# ---------------------------------------------------------------------------
# Probe file: magic "DFAP", u32 version, u32 d, u32 h, then W1, b1, W2, b2
# as little-endian float64 row-major, then a JSON trailer.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LoadedProbe:
    params: ProbeParameters
    class_order: tuple[str, ...]
    provider_fingerprint: str
    version: int


def save_probe(
    params: ProbeParameters,
    path: Path | str,
    provider_fingerprint: str = "",
) -> None:
    with open(path, "wb") as f:
        f.write(PROBE_MAGIC)
        f.write(struct.pack("<III", PROBE_VERSION, params.input_dim, params.hidden_dim))
        for arr in (params.W1, params.b1, params.W2, params.b2):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        trailer = {
            "class_order": [c.value for c in CLASS_ORDER],
            "provider_fingerprint": provider_fingerprint,
        }
        f.write(json.dumps(trailer).encode("utf-8"))


def load_probe(path: Path | str, expect_input_dim: int | None = None) -> LoadedProbe:
    data = Path(path).read_bytes()
    if data[:4] != PROBE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {PROBE_MAGIC!r}")
    version, d, h = struct.unpack_from("<III", data, 4)
    if version != PROBE_VERSION:
        raise FormatError(f"{path}: unsupported probe version {version}")
    if expect_input_dim is not None and d != expect_input_dim:
        raise FormatError(
            f"{path}: probe input dim {d} does not match expected {expect_input_dim}"
        )
    offset = 16
    arrays = []
    for shape in ((h, d), (h,), (3, h), (3,)):
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        arrays.append(arr.reshape(shape).copy())
    trailer_bytes = data[offset:]
    try:
        trailer = json.loads(trailer_bytes) if trailer_bytes else {}
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt JSON trailer: {exc}") from exc
    params = ProbeParameters(W1=arrays[0], b1=arrays[1], W2=arrays[2], b2=arrays[3])
    return LoadedProbe(
        params=params,
        class_order=tuple(trailer.get("class_order", [c.value for c in CLASS_ORDER])),
        provider_fingerprint=trailer.get("provider_fingerprint", ""),
        version=version,
    )
