"""Shared domain types, the deterministic RNG contract, and numeric primitives.

Logits travel as 32-bit floats on the wire and in fixture files; every
fusion/softmax computation here and downstream is done in 64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidLogits, VocabMismatch

# Dense per-vocabulary pre-softmax scores (float32 at provider boundaries,
# float64 inside the fusion arithmetic) and their normalized counterpart.
LogitVector = np.ndarray
Distribution = np.ndarray

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Vocabulary:
    """An ordered token inventory with dense ids in [0, size)."""

    tokens: tuple[str, ...]
    eos_id: int
    pad_id: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary token strings must be unique")
        if not 0 <= self.eos_id < len(self.tokens):
            raise ValueError(f"eos_id {self.eos_id} out of range")
        if self.pad_id is not None and not 0 <= self.pad_id < len(self.tokens):
            raise ValueError(f"pad_id {self.pad_id} out of range")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @cached_property
    def token_to_id(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    def validate_ids(self, ids: Sequence[int]) -> None:
        if len(ids) and not (0 <= min(ids) and max(ids) < self.size):
            bad = next(t for t in ids if not 0 <= t < self.size)
            raise VocabMismatch(f"token id {bad} out of range for vocabulary of size {self.size}")

    def detokenize(self, ids: Sequence[int]) -> str:
        self.validate_ids(ids)
        return "".join(self.tokens[i] for i in ids)


@dataclass(frozen=True)
class RepetitionGuard:
    """Stop generation once an ngram repeats more than max_repeats times in a row."""

    ngram: int = 8
    max_repeats: int = 4

    def __post_init__(self) -> None:
        if self.ngram < 2:
            raise ValueError("repetition guard ngram must be >= 2")
        if self.max_repeats < 1:
            raise ValueError("repetition guard max_repeats must be >= 1")


@dataclass(frozen=True)
class DecodeConfig:
    """Guidance strength, warm-up length, sampling knobs, and stop conditions.

    warmup_T counts generated tokens: the first warmup_T sampled tokens come
    from the target distribution alone, guidance applies afterwards.
    """

    alpha: float = 1.0
    warmup_T: int = 100
    temperature: float = 0.6
    top_p: float = 1.0
    max_tokens: int = 8192
    seed: int = 0
    stop_on_eos: bool = True
    repetition_guard: Optional[RepetitionGuard] = None
    log_steps: bool = False

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.warmup_T < 0:
            raise ValueError("warmup_T must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


def check_logits(values: np.ndarray, expected_size: Optional[int] = None) -> np.ndarray:
    """Validate a provider-emitted logit vector: 1-D, finite, expected length."""
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidLogits(f"logit vector must be 1-D and non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidLogits("logit vector contains NaN or Inf")
    if expected_size is not None and arr.size != expected_size:
        raise VocabMismatch(f"logit vector length {arr.size} != vocabulary size {expected_size}")
    return arr


def softmax(logits: np.ndarray, temperature: float) -> Distribution:
    """Temperature softmax with max-subtraction, computed in float64.

    probs[i] = exp(values[i]/temperature) / sum_j exp(values[j]/temperature).
    """
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    x = np.asarray(logits, dtype=np.float64)
    check_logits(x)
    z = (x - x.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def argmax_lowest(values: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest index."""
    return int(np.argmax(np.asarray(values)))


def seeded_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Counter-based generator fully determined by (seed, stream_id).

    Distinct stream_ids give statistically independent streams; the same pair
    reproduces the same draw sequence on any platform.
    """
    key = np.array([seed & _MASK64, stream_id & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
