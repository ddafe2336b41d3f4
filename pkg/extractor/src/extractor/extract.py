"""Prefill hidden-state extraction and full-vocabulary entropy sampling.

Runs a local causal LM forward over each question (prefill only, no
generation) and records the last layer's hidden state, or samples
completions computing exact per-token Shannon entropy over the full
softmax at the sampling temperature.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .formats import record_dict, write_feature_file, write_records

log = logging.getLogger(__name__)

POSITION_RULES = ("last_token", "mean_pool")


@dataclass
class ExtractReport:
    model_name: str
    n_requested: int = 0
    n_done: int = 0
    skipped: list[dict[str, str]] = field(default_factory=list)
    shortfalls: dict[str, int] = field(default_factory=dict)
    mean_topk_entropy_gap: float | None = None


class LocalModel:
    """A loaded checkpoint plus its tokenizer, prompt rendering included."""

    def __init__(self, model_name: str, device: str = "cpu") -> None:
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.model_name = model_name
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModelForCausalLM.from_pretrained(model_name)
        self.model.to(device)
        self.model.eval()
        self.device = device

    @property
    def hidden_size(self) -> int:
        config = self.model.config
        return int(getattr(config, "hidden_size", None) or config.n_embd)

    @property
    def vocab_size(self) -> int:
        return int(self.model.config.vocab_size)

    def render_prompt(self, question: str) -> str:
        """Apply the chat template exactly as a serving router would; fall
        back to the raw question for template-less tokenizers."""
        if getattr(self.tokenizer, "chat_template", None):
            return self.tokenizer.apply_chat_template(
                [{"role": "user", "content": question}],
                tokenize=False,
                add_generation_prompt=True,
            )
        return question

    def encode(self, question: str) -> torch.Tensor:
        text = self.render_prompt(question)
        ids = self.tokenizer(text, return_tensors="pt")["input_ids"]
        return ids.to(self.device)


def _prefill_vector(local: LocalModel, ids: torch.Tensor, position_rule: str) -> np.ndarray:
    with torch.no_grad():
        out = local.model(ids, output_hidden_states=True)
    last_layer = out.hidden_states[-1][0]  # (seq, hidden)
    if position_rule == "last_token":
        vector = last_layer[-1]
    elif position_rule == "mean_pool":
        vector = last_layer.mean(dim=0)
    else:
        raise ValueError(f"unknown position_rule {position_rule!r}")
    return vector.to(torch.float32).cpu().numpy()


def extract_features(
    model_name: str,
    problems: list[dict[str, Any]],
    out_path: Path | str,
    position_rule: str = "last_token",
    device: str = "cpu",
    local: LocalModel | None = None,
) -> ExtractReport:
    """Prefill every question and write last-layer vectors to a DFFV file.

    Extraction is deterministic (no sampling); per-problem failures are
    skipped and logged, never fatal.
    """
    if position_rule not in POSITION_RULES:
        raise ValueError(f"position_rule must be one of {POSITION_RULES}")
    local = local or LocalModel(model_name, device=device)
    report = ExtractReport(model_name=model_name, n_requested=len(problems))
    features: list[tuple[str, np.ndarray]] = []
    for problem in problems:
        pid = problem["id"]
        try:
            ids = local.encode(problem.get("question", ""))
            if ids.shape[1] == 0:
                raise ValueError("question tokenized to zero tokens")
            features.append((pid, _prefill_vector(local, ids, position_rule)))
            report.n_done += 1
        except Exception as exc:  # per-problem fault isolation
            log.warning("skipping %s: %s", pid, exc)
            report.skipped.append({"problem_id": pid, "reason": str(exc)})
    if not features:
        raise RuntimeError("no problem could be extracted; refusing to write")
    write_feature_file(
        out_path,
        features,
        trailer={
            "model": local.model_name,
            "position_rule": position_rule,
            "hidden_size": local.hidden_size,
        },
    )
    return report


def _derive_seed(seed: int, problem_id: str, sample_index: int) -> int:
    key = f"{seed}|{problem_id}|{sample_index}".encode("utf-8")
    return zlib.crc32(key)


def _exact_entropy_nats(log_probs: torch.Tensor) -> float:
    probs = log_probs.exp()
    contrib = torch.where(probs > 0, probs * log_probs, torch.zeros_like(probs))
    return max(float(-contrib.sum()), 0.0)


def _tail_bucket_entropy(top_probs: torch.Tensor) -> float:
    residual = max(1.0 - float(top_probs.sum()), 0.0)
    ps = top_probs.tolist()
    if residual > 0.0:
        ps.append(residual)
    return max(-sum(p * math.log(p) for p in ps if p > 0.0), 0.0)


def extract_generations(
    model_name: str,
    problems: list[dict[str, Any]],
    out_path: Path | str,
    n: int = 10,
    temperature: float = 0.6,
    max_tokens: int = 256,
    top_k_alternatives: int = 20,
    seed: int = 0,
    device: str = "cpu",
    local: LocalModel | None = None,
) -> ExtractReport:
    """Sample n completions per problem with exact full-vocabulary entropy.

    Per-token entropy is computed over the entire softmax distribution at
    the sampling temperature (no top-k truncation); the emitted records
    carry top-k alternatives only as auxiliary data. Also logs the mean
    gap between the exact entropy and its top-k tail-bucket estimate, for
    calibrating truncation-based estimators.
    """
    local = local or LocalModel(model_name, device=device)
    report = ExtractReport(model_name=model_name, n_requested=len(problems) * n)
    records: list[dict[str, Any]] = []
    gap_sum, gap_count = 0.0, 0
    for problem in problems:
        pid = problem["id"]
        shortfall = 0
        for j in range(n):
            try:
                ids = local.encode(problem.get("question", ""))
                if ids.shape[1] == 0:
                    raise ValueError("question tokenized to zero tokens")
                torch.manual_seed(_derive_seed(seed, pid, j))
                with torch.no_grad():
                    gen = local.model.generate(
                        ids,
                        do_sample=True,
                        temperature=temperature,
                        max_new_tokens=max_tokens,
                        output_scores=True,
                        return_dict_in_generate=True,
                        pad_token_id=local.tokenizer.pad_token_id
                        or local.tokenizer.eos_token_id,
                    )
                new_ids = gen.sequences[0, ids.shape[1]:]
                steps = []
                for t, score_row in enumerate(gen.scores):
                    log_probs = torch.log_softmax(score_row[0].double(), dim=-1)
                    chosen_id = int(new_ids[t])
                    entropy = _exact_entropy_nats(log_probs)
                    k = min(top_k_alternatives, log_probs.shape[0])
                    top_lps, top_ids = torch.topk(log_probs, k)
                    gap_sum += abs(entropy - _tail_bucket_entropy(top_lps.exp()))
                    gap_count += 1
                    alts = [
                        (local.tokenizer.convert_ids_to_tokens(int(i)), min(float(lp), 0.0))
                        for lp, i in zip(top_lps, top_ids)
                    ]
                    chosen_text = local.tokenizer.convert_ids_to_tokens(chosen_id)
                    chosen_lp = min(float(log_probs[chosen_id]), 0.0)
                    if not any(t_ == chosen_text and lp == chosen_lp for t_, lp in alts):
                        alts.append((chosen_text, chosen_lp))
                        alts.sort(key=lambda pair: -pair[1])
                    steps.append(
                        {
                            "token_text": chosen_text,
                            "chosen_logprob": chosen_lp,
                            "alternatives": [[t_, lp] for t_, lp in alts],
                            "entropy_nats": entropy,
                        }
                    )
                finish = "length" if len(new_ids) >= max_tokens else "stop"
                records.append(
                    record_dict(
                        problem_id=pid,
                        sample_index=j,
                        completion_text=local.tokenizer.decode(
                            new_ids, skip_special_tokens=True
                        ),
                        steps=steps,
                        finish_reason=finish,
                    )
                )
                report.n_done += 1
            except Exception as exc:
                log.warning("generation %d for %s failed: %s", j, pid, exc)
                shortfall += 1
        if shortfall:
            report.shortfalls[pid] = shortfall
    if gap_count:
        report.mean_topk_entropy_gap = gap_sum / gap_count
        log.info(
            "mean |exact - top-%d tail-bucket| entropy gap: %.6f nats over %d tokens",
            top_k_alternatives,
            report.mean_topk_entropy_gap,
            gap_count,
        )
    write_records(out_path, records)
    return report
