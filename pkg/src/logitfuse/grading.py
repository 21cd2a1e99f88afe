"""Answer extraction, exact-match grading, and avg@k / pass@k metrics.

Grading is a deterministic desk-scale rule set: the last balanced
\\boxed{...} payload is the answer, normalization applies a fixed rewrite
list (outer $, \\dfrac -> \\frac, \\left/\\right removal, \\frac{a}{b} ->
a/b, whitespace collapse), and numeric-looking answers compare under exact
rational arithmetic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import DomainError, InsufficientSamples

_BOXED = "\\boxed{"
_CHOICE_RE = re.compile(r"\b([A-D])\b")


def extract_answer(text: str) -> Optional[str]:
    """Contents of the last \\boxed{...}, with balanced-brace matching.

    Returns None when no \\boxed{ occurs or the braces after the last one
    never balance.
    """
    start = text.rfind(_BOXED)
    if start < 0:
        return None
    depth = 1
    i = start + len(_BOXED)
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


def extract_choice_letter(text: str) -> Optional[str]:
    """Last standalone A-D token; the multiple-choice fallback when \\boxed{} is absent."""
    matches = _CHOICE_RE.findall(text)
    return matches[-1] if matches else None


def _strip_outer_dollars(s: str) -> str:
    while len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    return s


def _rewrite_fracs(s: str) -> str:
    # \frac{a}{b} -> a/b, innermost-last via repeated leftmost rewriting.
    marker = "\\frac{"
    for _ in range(32):
        start = s.find(marker)
        if start < 0:
            return s
        i = start + len(marker)
        depth = 1
        num_start = i
        num = None
        while i < len(s):
            if s[i] == "{":
                depth += 1
            elif s[i] == "}":
                depth -= 1
                if depth == 0:
                    num = s[num_start:i]
                    break
            i += 1
        if num is None or i + 1 >= len(s) or s[i + 1] != "{":
            return s
        i += 2
        depth = 1
        den_start = i
        den = None
        while i < len(s):
            if s[i] == "{":
                depth += 1
            elif s[i] == "}":
                depth -= 1
                if depth == 0:
                    den = s[den_start:i]
                    break
            i += 1
        if den is None:
            return s
        s = s[:start] + num + "/" + den + s[i + 1 :]
    return s


def normalize_answer(s: str) -> str:
    s = s.strip()
    s = _strip_outer_dollars(s)
    s = s.replace("\\dfrac", "\\frac")
    s = s.replace("\\left", "").replace("\\right", "")
    s = _rewrite_fracs(s)
    return " ".join(s.split())


def _as_rational(s: str) -> Optional[Fraction]:
    compact = s.replace(" ", "").lstrip("+")
    if not compact:
        return None
    try:
        return Fraction(compact)
    except (ValueError, ZeroDivisionError):
        return None


def exact_match(extracted: str, gold: str) -> bool:
    """True iff normalized forms agree (numerically, when both parse as rationals)."""
    a = normalize_answer(extracted)
    b = normalize_answer(gold)
    ra = _as_rational(a)
    rb = _as_rational(b)
    if ra is not None and rb is not None:
        return ra == rb
    return a == b


def grade_text(text: str, gold: str, kind: str = "free") -> tuple[Optional[str], bool]:
    """Extract an answer from a completion and exact-match it against gold.

    Multiple-choice items fall back to the last standalone choice letter
    when no \\boxed{} is present.
    """
    extracted = extract_answer(text)
    if extracted is None and kind == "mc":
        extracted = extract_choice_letter(text)
    correct = extracted is not None and exact_match(extracted, gold)
    return extracted, correct


@dataclass(frozen=True)
class EvalRecord:
    """One graded sample of one question."""

    question_id: str
    sample_idx: int
    completion_text: str
    extracted: Optional[str]
    correct: bool

    def __post_init__(self) -> None:
        if self.correct and self.extracted is None:
            raise ValueError("correct=True requires an extracted answer")

    def to_json_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "sample_idx": self.sample_idx,
            "text": self.completion_text,
            "extracted": self.extracted,
            "correct": self.correct,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "EvalRecord":
        return cls(
            question_id=payload["question_id"],
            sample_idx=int(payload["sample_idx"]),
            completion_text=payload["text"],
            extracted=payload["extracted"],
            correct=bool(payload["correct"]),
        )


def write_records(records: Iterable[EvalRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")


def read_records(path: str | Path) -> list[EvalRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(EvalRecord.from_json_dict(json.loads(line)))
    return records


def _group_by_question(records: Iterable[EvalRecord]) -> dict[str, list[EvalRecord]]:
    groups: dict[str, list[EvalRecord]] = {}
    for rec in records:
        groups.setdefault(rec.question_id, []).append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r.sample_idx)
    return groups


def avg_at_k(records: Iterable[EvalRecord], k: int) -> float:
    """Mean over questions of (correct among the first k samples) / k."""
    if k < 1:
        raise DomainError("k must be >= 1")
    groups = _group_by_question(records)
    if not groups:
        raise InsufficientSamples("no records")
    total = 0.0
    for qid, recs in groups.items():
        if len(recs) < k:
            raise InsufficientSamples(f"question {qid!r} has {len(recs)} samples, need {k}")
        total += sum(r.correct for r in recs[:k]) / k
    return total / len(groups)


def pass_at_k(n: int, c: int, k: int) -> float:
    """1 - C(n-c, k)/C(n, k): chance that k of n samples include a correct one.

    Evaluated as an exact rational product, converted to float at the end.
    """
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    miss = Fraction(1)
    for i in range(k):
        miss *= Fraction(n - c - i, n - i)
    return float(1 - miss)


@dataclass(frozen=True)
class MetricReport:
    """Per-question correct counts plus the aggregate avg@k / pass@k values."""

    n: int
    per_question: dict[str, int]
    avg_at_k: float
    pass_at_k: dict[int, float]

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "per_question": {qid: c for qid, c in self.per_question.items()},
            "avg_at_k": self.avg_at_k,
            "pass_at_k": {str(k): v for k, v in self.pass_at_k.items()},
        }


def compute_metric_report(
    records: Iterable[EvalRecord],
    k: Optional[int] = None,
    pass_ks: Sequence[int] = (),
) -> MetricReport:
    """Aggregate graded records; requires a uniform sample count per question."""
    groups = _group_by_question(records)
    if not groups:
        raise InsufficientSamples("no records")
    counts = {len(recs) for recs in groups.values()}
    if len(counts) != 1:
        raise DomainError(f"non-uniform samples per question: {sorted(counts)}")
    n = counts.pop()
    per_question = {qid: sum(r.correct for r in recs) for qid, recs in groups.items()}
    k = n if k is None else k
    avg = avg_at_k([r for recs in groups.values() for r in recs], k)
    pk = {
        kk: sum(pass_at_k(n, c, kk) for c in per_question.values()) / len(per_question)
        for kk in pass_ks
    }
    return MetricReport(n=n, per_question=per_question, avg_at_k=avg, pass_at_k=pk)
