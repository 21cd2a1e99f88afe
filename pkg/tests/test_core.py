import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logitfuse.core import (
    DecodeConfig,
    RepetitionGuard,
    Vocabulary,
    argmax_lowest,
    seeded_rng,
    softmax,
)
from logitfuse.errors import InvalidLogits, VocabMismatch

finite_vecs = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=24,
).map(lambda xs: np.asarray(xs, dtype=np.float64))


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(softmax(np.zeros(3), 1.0), [1 / 3] * 3, atol=1e-12)

    def test_closed_form_two_entries(self):
        probs = softmax(np.array([math.log(2), 0.0]), 1.0)
        np.testing.assert_allclose(probs, [2 / 3, 1 / 3], atol=1e-12)

    def test_high_precision_reference(self):
        # Oracle: 50-digit evaluation of exp(l/tau)/sum exp(l/tau).
        mp = pytest.importorskip("mpmath")
        mp.mp.dps = 50
        logits = [mp.mpf("5.1"), mp.mpf("3.7"), mp.mpf("0.2")]
        es = [mp.exp(l / mp.mpf("0.6")) for l in logits]
        expected = [float(e / sum(es)) for e in es]
        assert expected == pytest.approx(
            [0.9113644063212144, 0.0883767999225434, 0.0002587937562421919], abs=1e-16
        )
        probs = softmax(np.array([5.1, 3.7, 0.2]), 0.6)
        np.testing.assert_allclose(probs, expected, atol=1e-12)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_nonfinite(self, bad):
        with pytest.raises(InvalidLogits):
            softmax(np.array([0.0, bad]), 1.0)

    @pytest.mark.parametrize("temp", [0.0, -1.0])
    def test_rejects_bad_temperature(self, temp):
        with pytest.raises(ValueError):
            softmax(np.zeros(2), temp)

    @given(vec=finite_vecs, shift=st.floats(min_value=-100, max_value=100, allow_nan=False))
    def test_shift_invariance(self, vec, shift):
        np.testing.assert_allclose(softmax(vec + shift, 0.7), softmax(vec, 0.7), atol=1e-9)

    @given(vec=finite_vecs)
    def test_low_temperature_limit_matches_argmax(self, vec):
        # Quantize so distinct entries differ by at least 0.01: a gap below
        # float64 resolution at tau=1e-6 is indistinguishable from a tie.
        vec = np.round(vec, 2)
        probs = softmax(vec, 1e-6)
        assert argmax_lowest(probs) == argmax_lowest(vec)

    @given(vec=finite_vecs, temp=st.floats(min_value=0.05, max_value=5.0))
    def test_valid_distribution(self, vec, temp):
        probs = softmax(vec, temp)
        assert np.all(probs >= 0) and np.all(probs <= 1)
        assert abs(probs.sum() - 1.0) <= 1e-9


class TestSeededRng:
    def test_same_key_same_draws(self):
        a = seeded_rng(42, 3).random(100)
        b = seeded_rng(42, 3).random(100)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = seeded_rng(42, 0).random(100)
        b = seeded_rng(42, 1).random(100)
        assert not np.array_equal(a, b)

    def test_negative_seed_accepted(self):
        seeded_rng(-7, 0).random()


def test_argmax_breaks_ties_low():
    assert argmax_lowest(np.array([1.0, 3.0, 3.0, 2.0])) == 1
    assert argmax_lowest(np.array([5.0, 5.0])) == 0


class TestVocabulary:
    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(("a", "a"), eos_id=0)

    def test_eos_range_checked(self):
        with pytest.raises(ValueError):
            Vocabulary(("a", "b"), eos_id=2)

    def test_detokenize_and_validate(self):
        vocab = Vocabulary(("<eos>", "ab", "c"), eos_id=0)
        assert vocab.detokenize([1, 2, 1]) == "abcab"
        with pytest.raises(VocabMismatch):
            vocab.validate_ids([3])
        assert vocab.token_to_id["c"] == 2
        assert vocab.size == 3


class TestDecodeConfig:
    def test_defaults_valid(self):
        cfg = DecodeConfig()
        assert cfg.alpha == 1.0 and cfg.warmup_T == 100 and cfg.temperature == 0.6

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": -0.1},
            {"warmup_T": -1},
            {"temperature": 0.0},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"max_tokens": 0},
        ],
    )
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(ValueError):
            DecodeConfig(**kwargs)

    def test_repetition_guard_validation(self):
        with pytest.raises(ValueError):
            RepetitionGuard(ngram=1)
        with pytest.raises(ValueError):
            RepetitionGuard(max_repeats=0)
