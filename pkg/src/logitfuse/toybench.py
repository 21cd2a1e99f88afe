"""Deterministic desk-scale fixtures: a synthetic arithmetic benchmark and
engineered table models.

The target model answers hastily: after a two-token preamble it emits a
boxed digit whose distribution is only 30% correct at temperature 0.6.
The guider/base delta boosts a verification token at the decision step;
the scripted verification restates the operands (bringing them back inside
the order-8 context window) and computes the sum with p~0.98 before boxing
it. Applying guidance from the very first token instead boosts a filler
token whose self-reinforcing loop trips the repetition guard, so a zero
warm-up run answers (almost) nothing — the reason the recommended config
warms up for two tokens.

Also ships a deterministic 200x180-token vocabulary pair for alignment
tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DecodeConfig, RepetitionGuard, Vocabulary, seeded_rng
from .harness import Dataset, DatasetItem
from .providers import TableModel

_TOKENS = (
    "<eos>", "Q", "+", "=", "=?", " ans", "wer:", " check:", " \\boxed{", "}", " hmm",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
)
_EOS, _Q, _PLUS, _EQ, _EQQ, _ANS, _WER, _CHK, _BOX, _RB, _HMM = range(11)
_D0 = 11

_ORDER = 8
_MAIN = 12.0  # scripted moves: ~e^{20} odds over silent tokens at tau=0.6
_TEMPERATURE = 0.6
_HASTY_P_CORRECT = 0.30
_VERIFY_P_CORRECT = 0.98
_CHECK_BOOST = 20.0
_BOX_SUPPRESS = -6.0
_HMM_BOOST = 20.0
_DEFAULT_EOS = 10.0


def _digit(d: int) -> int:
    return _D0 + d


def _vec(size: int, **_ignored) -> np.ndarray:
    return np.zeros(size, dtype=np.float32)


def _entry(size: int, pairs: dict[int, float]) -> np.ndarray:
    v = np.zeros(size, dtype=np.float32)
    for tok, logit in pairs.items():
        v[tok] = logit
    return v


def toy_vocabulary() -> Vocabulary:
    return Vocabulary(tokens=_TOKENS, eos_id=_EOS)


def toy_decode_config(alpha: float = 1.0, warmup_T: int = 2, seed: int = 0) -> DecodeConfig:
    """The configuration the fixture is calibrated for (temperature 0.6)."""
    return DecodeConfig(
        alpha=alpha,
        warmup_T=warmup_T,
        temperature=_TEMPERATURE,
        top_p=1.0,
        max_tokens=48,
        seed=seed,
        stop_on_eos=True,
        repetition_guard=RepetitionGuard(ngram=4, max_repeats=3),
    )


@dataclass
class ToyBenchmark:
    dataset: Dataset
    target: TableModel
    guider: TableModel
    base: TableModel


def _question_pairs(n_items: int) -> list[tuple[int, int]]:
    pairs = [(a, b) for a in range(10) for b in range(10) if a + b <= 9]
    if n_items > len(pairs):
        raise ValueError(f"at most {len(pairs)} single-digit-sum items available")
    return pairs[:n_items]


def build_toy_benchmark(n_items: int = 50) -> ToyBenchmark:
    vocab = toy_vocabulary()
    size = vocab.size
    hasty_bonus = _TEMPERATURE * math.log(9 * _HASTY_P_CORRECT / (1 - _HASTY_P_CORRECT))
    verify_gap = _TEMPERATURE * math.log(9 * _VERIFY_P_CORRECT / (1 - _VERIFY_P_CORRECT))

    target_entries: dict[tuple[int, ...], np.ndarray] = {}
    guider_entries: dict[tuple[int, ...], np.ndarray] = {}
    items = []

    for a, b in _question_pairs(n_items):
        c = a + b
        prompt = (_Q, _digit(a), _PLUS, _digit(b), _EQQ)
        items.append(
            DatasetItem(id=f"q{a}{b}", question=f"Q{a}+{b}=?", gold_answer=str(c), kind="free")
        )

        def key(*suffix: int) -> tuple[int, ...]:
            full = prompt + suffix
            return full[-(_ORDER - 1):]

        # Preamble and the answer-format decision.
        target_entries[key()] = _entry(size, {_ANS: _MAIN})
        target_entries[key(_ANS)] = _entry(size, {_WER: _MAIN})
        target_entries[key(_ANS, _WER)] = _entry(size, {_BOX: _MAIN})

        # Hasty branch: box a digit right away, 30% correct.
        hasty = {_digit(d): 8.0 for d in range(10)}
        hasty[_digit(c)] = 8.0 + hasty_bonus
        target_entries[key(_ANS, _WER, _BOX)] = _entry(size, hasty)
        for d in range(10):
            target_entries[key(_ANS, _WER, _BOX, _digit(d))] = _entry(size, {_RB: _MAIN})
            target_entries[key(_ANS, _WER, _BOX, _digit(d), _RB)] = _entry(size, {_EOS: _MAIN})

        # Verification branch: restate the operands, compute, then box.
        target_entries[key(_ANS, _WER, _CHK)] = _entry(size, {_digit(a): _MAIN})
        target_entries[key(_ANS, _WER, _CHK, _digit(a))] = _entry(size, {_PLUS: _MAIN})
        target_entries[key(_ANS, _WER, _CHK, _digit(a), _PLUS)] = _entry(size, {_digit(b): _MAIN})
        target_entries[key(_ANS, _WER, _CHK, _digit(a), _PLUS, _digit(b))] = _entry(size, {_EQ: _MAIN})
        compute = {_digit(d): _MAIN - verify_gap for d in range(10)}
        compute[_digit(c)] = _MAIN
        target_entries[key(_ANS, _WER, _CHK, _digit(a), _PLUS, _digit(b), _EQ)] = _entry(size, compute)
        for d in range(10):
            tail = (_CHK, _digit(a), _PLUS, _digit(b), _EQ, _digit(d))
            target_entries[key(_ANS, _WER, *tail)] = _entry(size, {_BOX: _MAIN})
            target_entries[key(_ANS, _WER, *tail, _BOX)] = _entry(size, {_digit(d): _MAIN})
            target_entries[key(_ANS, _WER, *tail, _BOX, _digit(d))] = _entry(size, {_RB: _MAIN})
            target_entries[key(_ANS, _WER, *tail, _BOX, _digit(d), _RB)] = _entry(size, {_EOS: _MAIN})

        # Guider-minus-base delta (base is all zeros): push verification at
        # the decision step; push the filler loop on the first two steps.
        guider_entries[key(_ANS, _WER)] = _entry(size, {_CHK: _CHECK_BOOST, _BOX: _BOX_SUPPRESS})
        guider_entries[key()] = _entry(size, {_HMM: _HMM_BOOST})
        guider_entries[key(_ANS)] = _entry(size, {_HMM: _HMM_BOOST})
        for j in range(1, _ORDER):
            guider_entries[key(*([_HMM] * j))] = _entry(size, {_HMM: _HMM_BOOST})

    target = TableModel(
        vocabulary=vocab,
        order=_ORDER,
        entries=target_entries,
        default_logits=_entry(size, {_EOS: _DEFAULT_EOS}),
    )
    guider = TableModel(
        vocabulary=vocab,
        order=_ORDER,
        entries=guider_entries,
        default_logits=_vec(size),
    )
    base = TableModel(
        vocabulary=vocab,
        order=_ORDER,
        entries={},
        default_logits=_vec(size),
    )
    return ToyBenchmark(dataset=Dataset(tuple(items)), target=target, guider=guider, base=base)


def build_alignment_vocabs(
    n_source: int = 200,
    n_dest: int = 180,
    n_overlap: int = 40,
    seed: int = 20240801,
) -> tuple[Vocabulary, Vocabulary]:
    """Deterministic word-vocabulary pair for token-map tests.

    n_overlap source tokens are verbatim copies of dest tokens (the
    distance-0 fast path); the rest are random words of length 1-8 over a
    small alphabet.
    """
    rng = seeded_rng(seed)
    alphabet = "abcdefgh"

    def fresh_words(count: int, taken: set[str]) -> list[str]:
        words = []
        while len(words) < count:
            length = int(rng.integers(1, 9))
            word = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=length))
            if word not in taken:
                taken.add(word)
                words.append(word)
        return words

    taken: set[str] = {"<eos>"}
    dest_words = ["<eos>"] + fresh_words(n_dest - 1, taken)
    overlap = [dest_words[int(i)] for i in rng.choice(np.arange(1, n_dest), size=n_overlap, replace=False)]
    source_words = ["<eos>"] + overlap + fresh_words(n_source - 1 - n_overlap, set(taken))
    return (
        Vocabulary(tokens=tuple(source_words), eos_id=0),
        Vocabulary(tokens=tuple(dest_words), eos_id=0),
    )
