"""Rule-based answer extraction and equivalence checking.

Extracts the final answer from a completion (last boxed marker, else the
last "answer is"/"Answer:" cue) and compares against the gold answer
under a light normalization with numeric tolerance. No symbolic solving.
"""

from __future__ import annotations

import math
import re

from .core import GenerationRecord, Problem
from .errors import DomainError

__all__ = ["extract_answer", "answers_equivalent", "verdict"]

_BOXED = re.compile(r"\\boxed")
_ANSWER_CUE = re.compile(r"(?:answer\s+is|answer\s*:)", re.IGNORECASE)
_WS = re.compile(r"\s+")
_FRACTION = re.compile(r"^([-+]?\d+(?:\.\d+)?)\s*/\s*([-+]?\d+(?:\.\d+)?)$")


def _boxed_content(text: str, start: int) -> str | None:
    """Balanced-brace content of a ``\\boxed{...}`` marker starting at ``start``."""
    i = start + len("\\boxed")
    while i < len(text) and text[i].isspace():
        i += 1
    if i >= len(text) or text[i] != "{":
        return None
    depth = 1
    i += 1
    begin = i
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[begin:i]
        i += 1
    return None


def extract_answer(completion_text: str) -> str | None:
    """Pull the final answer out of a completion, or None if unverifiable.

    The last well-formed boxed marker wins; otherwise the trailing
    expression (rest of line) after the last answer cue.
    """
    if not completion_text:
        return None
    starts = [m.start() for m in _BOXED.finditer(completion_text)]
    for start in reversed(starts):
        content = _boxed_content(completion_text, start)
        if content is not None:
            return content.strip()
    cues = list(_ANSWER_CUE.finditer(completion_text))
    if cues:
        tail = completion_text[cues[-1].end():]
        tail = tail.split("\n", 1)[0].strip()
        tail = tail.rstrip(".").strip()
        if tail:
            return tail
    return None


def _strip_wrappers(s: str) -> str:
    while len(s) >= 2:
        if s[0] == "$" and s[-1] == "$":
            s = s[1:-1].strip()
        elif s[0] == "{" and s[-1] == "}":
            s = s[1:-1].strip()
        else:
            break
    return s


def _normalize(s: str) -> str:
    s = s.strip()
    if s.endswith("."):
        s = s[:-1].strip()
    s = _strip_wrappers(s)
    if s.endswith("."):
        s = s[:-1].strip()
    s = s.casefold()
    s = _WS.sub(" ", s)
    return s


def _as_number(s: str) -> float | None:
    m = _FRACTION.match(s)
    if m:
        try:
            denom = float(m.group(2))
            if denom == 0.0:
                return None
            return float(m.group(1)) / denom
        except ValueError:
            return None
    try:
        return float(s)
    except ValueError:
        return None


def answers_equivalent(candidate: str, gold: str) -> bool:
    """True when the normalized forms match.

    Both sides are trimmed, case-folded, stripped of surrounding $/braces
    and trailing periods, and whitespace-collapsed. If both parse as
    numbers (fractions a/b included) they compare with relative tolerance
    1e-9; otherwise string equality of normalized forms.
    """
    a = _normalize(candidate)
    b = _normalize(gold)
    if not a or not b:
        return False
    na, nb = _as_number(a), _as_number(b)
    if na is not None and nb is not None:
        return math.isclose(na, nb, rel_tol=1e-9, abs_tol=0.0) or na == nb
    return a == b


def verdict(record: GenerationRecord, problem: Problem) -> bool:
    """The correctness indicator: extracted answer matches gold."""
    if not problem.gold_answer:
        raise DomainError(f"problem {problem.id!r} has no gold answer")
    candidate = extract_answer(record.completion_text)
    if candidate is None:
        return False
    return answers_equivalent(candidate, problem.gold_answer)
