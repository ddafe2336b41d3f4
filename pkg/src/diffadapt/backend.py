"""Backend abstraction: live OpenAI-compatible clients, representation
providers, and the binary feature-file format they share.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx
import numpy as np

from .core import (
    FeatureVector,
    FinishReason,
    GenerationRecord,
    Problem,
    StrategyId,
    TokenStep,
)
from .entropy import TailMode, entropy_from_topk, generation_entropy
from .errors import BackendError, FeatureLookupError, FormatError

__all__ = [
    "GenRequest",
    "Backend",
    "RepresentationProvider",
    "FeatureFileProvider",
    "EmbeddingsEndpointProvider",
    "OpenAIBackend",
    "FeatureFile",
    "read_feature_file",
    "write_feature_file",
    "feature_file_fingerprint",
]

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"DFFV"
FEATURE_VERSION = 1


@dataclass(frozen=True, slots=True)
class GenRequest:
    """A fully resolved completion request."""

    strategy_id: StrategyId
    temperature: float
    top_p: float | None
    max_tokens: int
    reasoning_opener: str = ""
    logprobs_top_k: int = 20
    sample_index: int = 0
    seed: int | None = None


class Backend(ABC):
    """One completion + representation source behind a uniform interface."""

    @abstractmethod
    def complete(self, problem: Problem, request: GenRequest) -> GenerationRecord:
        """Run one completion and return the full record."""

    @abstractmethod
    def get_representation(self, problem: Problem) -> FeatureVector:
        """Fetch the probe input vector for a question."""

    @abstractmethod
    def representation_fingerprint(self) -> str:
        """Identifier of the representation source, stored in probe files."""

    @abstractmethod
    def describe(self) -> dict[str, Any]:
        """Human/manifest-facing description of the backend."""

    def ping(self) -> bool:
        return True


class RepresentationProvider(ABC):
    @abstractmethod
    def get(self, problem: Problem) -> FeatureVector: ...

    @abstractmethod
    def fingerprint(self) -> str: ...


# ---------------------------------------------------------------------------
# Feature file: magic "DFFV", u32 version, u32 dim, u32 count, then
# (u32 id-length, id bytes, float32 x dim) entries, then a JSON trailer.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureFile:
    dim: int
    vectors: dict[str, FeatureVector]
    trailer: dict[str, Any]


def write_feature_file(
    path: Path | str,
    features: Mapping[str, Sequence[float]],
    trailer: Mapping[str, Any] | None = None,
) -> None:
    items = list(features.items())
    if not items:
        raise FormatError("cannot write an empty feature file")
    dim = len(items[0][1])
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, dim, len(items)))
        for pid, vec in items:
            if len(vec) != dim:
                raise FormatError(
                    f"feature for {pid!r} has dim {len(vec)}, expected {dim}"
                )
            encoded = pid.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(np.asarray(vec, dtype="<f4").tobytes())
        f.write(json.dumps(dict(trailer or {})).encode("utf-8"))


def read_feature_file(path: Path | str) -> FeatureFile:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {FEATURE_MAGIC!r}")
    version, dim, count = struct.unpack_from("<III", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported feature-file version {version}")
    if dim < 1:
        raise FormatError(f"{path}: dim {dim} in header must be >= 1")
    offset = 16
    vectors: dict[str, FeatureVector] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        pid = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
        # Stored single precision; widened to double in memory.
        vectors[pid] = FeatureVector.from_values(vec.astype(np.float64))
    trailer_bytes = data[offset:]
    trailer = json.loads(trailer_bytes) if trailer_bytes else {}
    return FeatureFile(dim=dim, vectors=vectors, trailer=trailer)


def feature_file_fingerprint(path: Path | str) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"dffv:sha256:{digest[:16]}"


class FeatureFileProvider(RepresentationProvider):
    """Looks up pre-extracted vectors by problem id (deterministic)."""

    def __init__(self, path: Path | str) -> None:
        self.path = Path(path)
        self._file = read_feature_file(self.path)
        self._fingerprint = feature_file_fingerprint(self.path)

    @property
    def dim(self) -> int:
        return self._file.dim

    @property
    def trailer(self) -> dict[str, Any]:
        return self._file.trailer

    def get(self, problem: Problem) -> FeatureVector:
        try:
            return self._file.vectors[problem.id]
        except KeyError:
            raise FeatureLookupError(
                f"no feature for problem {problem.id!r} in {self.path}"
            ) from None

    def fingerprint(self) -> str:
        return self._fingerprint


class EmbeddingsEndpointProvider(RepresentationProvider):
    """Approximates hidden states with an embeddings endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = _normalize_base_url(base_url)
        self.model = model
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = _auth_headers(api_key_env)

    def get(self, problem: Problem) -> FeatureVector:
        try:
            resp = self._client.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": problem.question},
                headers=self._headers,
            )
            resp.raise_for_status()
            payload = resp.json()
            return FeatureVector.from_values(payload["data"][0]["embedding"])
        except (httpx.HTTPError, KeyError, IndexError) as exc:
            raise BackendError(f"embeddings request failed: {exc}") from exc

    def fingerprint(self) -> str:
        return f"emb:{self.base_url}:{self.model}"


def _normalize_base_url(base_url: str) -> str:
    url = base_url.rstrip("/")
    if not url.endswith("/v1"):
        url += "/v1"
    return url


def _auth_headers(api_key_env: str) -> dict[str, str]:
    key = os.environ.get(api_key_env, "")
    return {"Authorization": f"Bearer {key}"} if key else {}


def _map_finish_reason(raw: str | None) -> FinishReason:
    if raw in ("stop", "eos", "end_turn", "stop_sequence"):
        return FinishReason.STOP
    if raw in ("length", "max_tokens"):
        return FinishReason.LENGTH
    return FinishReason.ERROR


class OpenAIBackend(Backend):
    """Client for OpenAI-compatible completion servers.

    Speaks the chat-completions wire format by default; ``flavor="completions"``
    switches to the legacy text-completions route (the reasoning opener is
    then appended to the prompt instead of sent as an assistant turn).
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        representation: RepresentationProvider | None = None,
        flavor: str = "chat",
        api_key_env: str = "OPENAI_API_KEY",
        tail_mode: TailMode = TailMode.TAIL_BUCKET,
        timeout: float = 600.0,
        retry_backoff: Sequence[float] = (0.5, 2.0, 8.0),
        client: httpx.Client | None = None,
    ) -> None:
        if flavor not in ("chat", "completions"):
            raise ValueError(f"unknown flavor {flavor!r}")
        self.base_url = _normalize_base_url(base_url)
        self.model = model
        self.flavor = flavor
        self.tail_mode = tail_mode
        self.representation = representation
        self.retry_backoff = tuple(retry_backoff)
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = _auth_headers(api_key_env)

    # -- completions --------------------------------------------------------

    def complete(self, problem: Problem, request: GenRequest) -> GenerationRecord:
        if self.flavor == "chat":
            payload = self._chat_payload(problem, request)
            route = "/chat/completions"
        else:
            payload = self._completions_payload(problem, request)
            route = "/completions"
        data = self._post_with_retries(route, payload)
        return self._parse_response(data, problem, request)

    def _chat_payload(self, problem: Problem, request: GenRequest) -> dict[str, Any]:
        messages: list[dict[str, str]] = [{"role": "user", "content": problem.question}]
        if request.reasoning_opener:
            messages.append({"role": "assistant", "content": request.reasoning_opener})
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.top_p is not None:
            payload["top_p"] = request.top_p
        if request.logprobs_top_k > 0:
            payload["logprobs"] = True
            payload["top_logprobs"] = request.logprobs_top_k
        if request.seed is not None:
            payload["seed"] = request.seed + request.sample_index
        return payload

    def _completions_payload(self, problem: Problem, request: GenRequest) -> dict[str, Any]:
        prompt = problem.question
        if request.reasoning_opener:
            prompt = prompt + "\n\n" + request.reasoning_opener
        payload: dict[str, Any] = {
            "model": self.model,
            "prompt": prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.top_p is not None:
            payload["top_p"] = request.top_p
        if request.logprobs_top_k > 0:
            payload["logprobs"] = request.logprobs_top_k
        if request.seed is not None:
            payload["seed"] = request.seed + request.sample_index
        return payload

    def _post_with_retries(self, route: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = self.base_url + route
        attempts = len(self.retry_backoff) + 1
        last_exc: Exception | None = None
        for attempt in range(attempts):
            try:
                resp = self._client.post(url, json=payload, headers=self._headers)
                if resp.status_code in (502, 503, 504):
                    raise httpx.TransportError(f"upstream {resp.status_code}")
                resp.raise_for_status()
                return resp.json()
            except httpx.TransportError as exc:
                last_exc = exc
                if attempt < attempts - 1:
                    wait = self.retry_backoff[attempt]
                    log.warning("transport failure (%s), retrying in %.1fs", exc, wait)
                    time.sleep(wait)
            except httpx.HTTPStatusError as exc:
                raise BackendError(f"backend returned {exc.response.status_code}: "
                                   f"{exc.response.text[:200]}") from exc
        raise BackendError(f"backend unreachable after {attempts} attempts: {last_exc}")

    def _parse_response(
        self, data: dict[str, Any], problem: Problem, request: GenRequest
    ) -> GenerationRecord:
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        if self.flavor == "chat":
            text = (choice.get("message") or {}).get("content") or ""
            steps = self._steps_from_chat_logprobs(choice.get("logprobs"))
        else:
            text = choice.get("text") or ""
            steps = self._steps_from_text_logprobs(choice.get("logprobs"))
        finish = _map_finish_reason(choice.get("finish_reason"))
        if steps:
            completion_tokens = len(steps)
            entropy = generation_entropy(steps)
        else:
            if request.logprobs_top_k > 0:
                log.warning(
                    "backend returned no logprobs for problem %s; record flagged steps-absent",
                    problem.id,
                )
            completion_tokens = int((data.get("usage") or {}).get("completion_tokens", 0))
            entropy = None
        return GenerationRecord(
            problem_id=problem.id,
            strategy_id=request.strategy_id,
            sample_index=request.sample_index,
            completion_text=text,
            steps=tuple(steps),
            completion_tokens=completion_tokens,
            finish_reason=finish,
            generation_entropy=entropy,
            verdict=None,
        )

    def _steps_from_chat_logprobs(self, logprobs: Any) -> list[TokenStep]:
        content = (logprobs or {}).get("content") or []
        steps = []
        for entry in content:
            chosen = entry["token"]
            chosen_lp = min(float(entry["logprob"]), 0.0)
            alts = [
                (alt["token"], min(float(alt["logprob"]), 0.0))
                for alt in entry.get("top_logprobs") or []
            ]
            steps.append(self._make_step(chosen, chosen_lp, alts))
        return steps

    def _steps_from_text_logprobs(self, logprobs: Any) -> list[TokenStep]:
        if not logprobs or not logprobs.get("tokens"):
            return []
        tokens = logprobs["tokens"]
        token_lps = logprobs.get("token_logprobs") or []
        tops = logprobs.get("top_logprobs") or []
        steps = []
        for i, tok in enumerate(tokens):
            lp = token_lps[i] if i < len(token_lps) and token_lps[i] is not None else 0.0
            chosen_lp = min(float(lp), 0.0)
            top = tops[i] if i < len(tops) and tops[i] else {}
            alts = [(t, min(float(v), 0.0)) for t, v in top.items()]
            steps.append(self._make_step(tok, chosen_lp, alts))
        return steps

    def _make_step(
        self, chosen: str, chosen_lp: float, alts: list[tuple[str, float]]
    ) -> TokenStep:
        if not any(t == chosen and lp == chosen_lp for t, lp in alts):
            alts.append((chosen, chosen_lp))
        alts.sort(key=lambda pair: -pair[1])
        return TokenStep(
            token_text=chosen,
            chosen_logprob=chosen_lp,
            alternatives=tuple(alts),
            entropy_nats=entropy_from_topk(alts, self.tail_mode),
        )

    # -- representations -----------------------------------------------------

    def get_representation(self, problem: Problem) -> FeatureVector:
        if self.representation is None:
            raise BackendError("no representation provider configured")
        return self.representation.get(problem)

    def representation_fingerprint(self) -> str:
        return self.representation.fingerprint() if self.representation else ""

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "openai",
            "base_url": self.base_url,
            "model": self.model,
            "flavor": self.flavor,
            "tail_mode": self.tail_mode.value,
            "representation": self.representation_fingerprint() or None,
        }

    def ping(self) -> bool:
        try:
            resp = self._client.get(f"{self.base_url}/models", headers=self._headers)
            return resp.status_code < 500
        except httpx.HTTPError:
            return False
