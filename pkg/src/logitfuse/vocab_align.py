"""Cross-vocabulary alignment: min-edit-distance token maps and text re-tokenization.

A TokenMap sends every guider/base (source) token to exactly one target
(dest) token, chosen by minimum Levenshtein distance with deterministic
tie-breaking. Building it is a one-time offline step; applying it is a
scatter of the source-space logit delta into dest space.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Vocabulary
from .errors import UntokenizableText, VocabMismatch

ACCUMULATE_MODES = ("sum", "max-abs")


def levenshtein(a: str, b: str) -> int:
    """Minimum insert/delete/substitute edit count (two-row DP)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def vocab_hash(vocab: Vocabulary) -> str:
    h = hashlib.sha256()
    for tok in vocab.tokens:
        h.update(tok.encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def _strip_markers(token: str, markers: Sequence[str]) -> str:
    for marker in markers:
        if marker and token.startswith(marker):
            return token[len(marker):]
    return token


@dataclass(frozen=True)
class TokenMap:
    """source-token-id -> dest-token-id alignment table."""

    source_vocab: Vocabulary
    dest_vocab: Vocabulary
    map: np.ndarray
    mode: str = "sum"

    def __post_init__(self) -> None:
        arr = np.asarray(self.map, dtype=np.int64)
        if arr.shape != (self.source_vocab.size,):
            raise VocabMismatch(
                f"map length {arr.shape} != source vocabulary size {self.source_vocab.size}"
            )
        if arr.size and (arr.min() < 0 or arr.max() >= self.dest_vocab.size):
            raise VocabMismatch("map entry out of dest vocabulary range")
        if self.mode not in ACCUMULATE_MODES:
            raise ValueError(f"mode must be one of {ACCUMULATE_MODES}")
        arr.setflags(write=False)
        object.__setattr__(self, "map", arr)

    def save(self, path: str | Path) -> None:
        payload = {
            "source_hash": vocab_hash(self.source_vocab),
            "dest_hash": vocab_hash(self.dest_vocab),
            "map": [int(i) for i in self.map],
            "mode": self.mode,
        }
        Path(path).write_text(json.dumps(payload) + "\n")

    @classmethod
    def load(cls, path: str | Path, source_vocab: Vocabulary, dest_vocab: Vocabulary) -> "TokenMap":
        payload = json.loads(Path(path).read_text())
        if payload["source_hash"] != vocab_hash(source_vocab):
            raise VocabMismatch("stored source_hash does not match the supplied source vocabulary")
        if payload["dest_hash"] != vocab_hash(dest_vocab):
            raise VocabMismatch("stored dest_hash does not match the supplied dest vocabulary")
        return cls(source_vocab, dest_vocab, np.asarray(payload["map"], dtype=np.int64), payload["mode"])


def build_token_map(
    source: Vocabulary,
    dest: Vocabulary,
    mode: str = "sum",
    marker_prefixes: Sequence[str] = (),
) -> TokenMap:
    """Map each source token to its minimum-edit-distance dest token.

    Ties break by (a) shorter dest token string, then (b) lower dest index;
    an exact string match (distance 0) always wins and is resolved by a hash
    pre-pass without scanning. Tokens are compared after stripping any
    configured whitespace-marker prefix (default: none).
    """
    if source.size == 0 or dest.size == 0:
        raise ValueError("vocabularies must be non-empty")
    dest_norm = [_strip_markers(t, marker_prefixes) for t in dest.tokens]
    exact: dict[str, int] = {}
    for j, norm in enumerate(dest_norm):
        best = exact.get(norm)
        if best is None or (len(dest.tokens[j]), j) < (len(dest.tokens[best]), best):
            exact[norm] = j

    mapping = np.empty(source.size, dtype=np.int64)
    for i, tok in enumerate(source.tokens):
        norm = _strip_markers(tok, marker_prefixes)
        hit = exact.get(norm)
        if hit is not None:
            mapping[i] = hit
            continue
        best_key = None
        best_j = -1
        for j, dnorm in enumerate(dest_norm):
            key = (levenshtein(norm, dnorm), len(dest.tokens[j]), j)
            if best_key is None or key < best_key:
                best_key = key
                best_j = j
        mapping[i] = best_j
    return TokenMap(source, dest, mapping, mode)


def project_delta(delta: np.ndarray, token_map: TokenMap, mode: str | None = None) -> np.ndarray:
    """Scatter a source-space logit delta into dest space (float64).

    "sum" accumulates contributors; "max-abs" keeps the contributor with
    the largest |value| (lowest source index on ties). Dest entries with no
    contributor stay exactly 0.
    """
    mode = mode or token_map.mode
    if mode not in ACCUMULATE_MODES:
        raise ValueError(f"mode must be one of {ACCUMULATE_MODES}")
    d = np.asarray(delta, dtype=np.float64)
    if d.shape != (token_map.source_vocab.size,):
        raise VocabMismatch(
            f"delta length {d.shape} != source vocabulary size {token_map.source_vocab.size}"
        )
    out = np.zeros(token_map.dest_vocab.size, dtype=np.float64)
    if mode == "sum":
        np.add.at(out, token_map.map, d)
    else:
        # Largest |value| wins; assign in increasing |value| so winners land last.
        order = np.lexsort((np.arange(d.size), -np.abs(d)))[::-1]
        out[token_map.map[order]] = d[order]
    return out


def retokenize_prefix(text: str, vocab: Vocabulary) -> list[int]:
    """Greedy longest-match tokenization; concatenating the tokens reproduces text."""
    if not text:
        return []
    token_to_id = vocab.token_to_id
    max_len = max((len(t) for t in vocab.tokens), default=0)
    ids: list[int] = []
    i = 0
    n = len(text)
    while i < n:
        for length in range(min(max_len, n - i), 0, -1):
            tid = token_to_id.get(text[i : i + length])
            if tid is not None:
                ids.append(tid)
                i += length
                break
        else:
            raise UntokenizableText(f"no vocabulary token covers text at position {i}: {text[i:i+10]!r}")
    return ids
