import itertools
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logitfuse.errors import DomainError, InsufficientSamples
from logitfuse.grading import (
    EvalRecord,
    avg_at_k,
    compute_metric_report,
    exact_match,
    extract_answer,
    extract_choice_letter,
    grade_text,
    normalize_answer,
    pass_at_k,
    read_records,
    write_records,
)


class TestExtractAnswer:
    def test_single_occurrence(self):
        assert extract_answer("the answer is \\boxed{42}.") == "42"

    def test_nested_braces(self):
        assert extract_answer("\\boxed{\\frac{1}{2}}") == "\\frac{1}{2}"

    def test_last_occurrence_wins(self):
        assert extract_answer("\\boxed{1} ... \\boxed{7}") == "7"

    def test_absent_returns_none(self):
        assert extract_answer("no boxes here") is None

    def test_unbalanced_after_last_box_returns_none(self):
        assert extract_answer("\\boxed{ok} then \\boxed{broken") is None

    def test_empty_payload(self):
        assert extract_answer("\\boxed{}") == ""

    @given(
        payload=st.recursive(
            st.text(alphabet="ab \\c123", max_size=8),
            lambda inner: st.tuples(inner, inner).map(lambda t: t[0] + "{" + t[1] + "}"),
            max_leaves=4,
        )
    )
    @settings(max_examples=80)
    def test_wrap_then_extract_is_identity(self, payload):
        assert extract_answer(f"junk \\boxed{{{payload}}} trailing") == payload


class TestChoiceExtraction:
    def test_last_standalone_letter(self):
        assert extract_choice_letter("maybe A, but finally (C)") == "C"

    def test_embedded_letters_ignored(self):
        assert extract_choice_letter("CAB DAB") is None

    def test_absent(self):
        assert extract_choice_letter("nothing here") is None

    def test_grade_text_mc_fallback(self):
        extracted, correct = grade_text("I pick B", "B", kind="mc")
        assert extracted == "B" and correct

    def test_grade_text_prefers_boxed(self):
        extracted, correct = grade_text("A B \\boxed{D}", "D", kind="mc")
        assert extracted == "D" and correct


class TestExactMatch:
    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ("42", "42", True),
            ("42", "41", False),
            ("\\frac{1}{2}", "0.5", True),
            ("  42  ", "42", True),
            ("$42$", "42", True),
            ("\\dfrac{3}{4}", "3/4", True),
            ("\\left(x\\right)", "(x)", True),
            ("1/3", "0.333", False),
            ("2/4", "1/2", True),
            ("-0.25", "-1/4", True),
            ("x + y", "x  +  y", True),
            ("alpha", "beta", False),
        ],
    )
    def test_cases(self, a, b, expected):
        assert exact_match(a, b) is expected

    def test_rational_oracle_agreement(self):
        # Independent oracle: parse both sides with Fraction directly.
        assert Fraction(1, 2) == Fraction("0.5")
        assert exact_match("\\frac{1}{2}", "0.5")
        assert Fraction(5, 10) == Fraction(1, 2)
        assert exact_match("5/10", "1/2")

    def test_normalization_is_deterministic(self):
        assert normalize_answer(" $\\dfrac{1}{2}$ ") == "1/2"


class TestAvgAtK:
    def _records(self, flags, qid="q0"):
        return [
            EvalRecord(qid, i, f"t{i}", "x" if ok else None, ok) for i, ok in enumerate(flags)
        ]

    def test_single_question(self):
        recs = self._records([True] * 5 + [False] * 3)
        assert avg_at_k(recs, 8) == pytest.approx(0.625)

    def test_all_correct(self):
        assert avg_at_k(self._records([True] * 8), 8) == 1.0

    def test_mean_over_questions(self):
        recs = (
            self._records([False] * 8, "q0")
            + self._records([True] * 4 + [False] * 4, "q1")
            + self._records([True] * 8, "q2")
        )
        assert avg_at_k(recs, 8) == pytest.approx(0.5)

    def test_uses_first_k_by_sample_idx(self):
        recs = self._records([False, False, True, True])
        assert avg_at_k(recs, 2) == 0.0

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamples):
            avg_at_k(self._records([True] * 3), 4)


def oracle_pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Exhaustive enumeration: fraction of k-subsets containing a correct sample."""
    hits = 0
    total = 0
    for subset in itertools.combinations(range(n), k):
        total += 1
        hits += any(i < c for i in subset)
    return Fraction(hits, total)


class TestPassAtK:
    def test_no_correct_samples(self):
        assert pass_at_k(8, 0, 3) == 0.0

    def test_all_correct(self):
        assert pass_at_k(8, 8, 1) == 1.0

    def test_spot_value_against_enumeration(self):
        expected = oracle_pass_at_k(10, 3, 4)
        assert expected == Fraction(5, 6)
        assert pass_at_k(10, 3, 4) == float(expected)

    def test_matches_enumeration_for_all_small_cases(self):
        for n in range(1, 9):
            for c in range(n + 1):
                for k in range(1, n + 1):
                    assert pass_at_k(n, c, k) == float(oracle_pass_at_k(n, c, k))

    @pytest.mark.parametrize("n,c,k", [(5, -1, 1), (5, 6, 1), (5, 2, 0), (5, 2, 6)])
    def test_domain_errors(self, n, c, k):
        with pytest.raises(DomainError):
            pass_at_k(n, c, k)

    def test_monotone_in_k_and_c(self):
        for n in (6, 9):
            for c in range(n + 1):
                values = [pass_at_k(n, c, k) for k in range(1, n + 1)]
                assert values == sorted(values)
            for k in (1, 3):
                values = [pass_at_k(n, c, k) for c in range(n + 1)]
                assert values == sorted(values)

    def test_pass_at_n_is_one_iff_any_correct(self):
        for n in (3, 7):
            assert pass_at_k(n, 0, n) == 0.0
            for c in range(1, n + 1):
                assert pass_at_k(n, c, n) == 1.0


class TestMetricReport:
    def _records(self):
        recs = []
        flags = {"q0": [True, False, True, False], "q1": [False] * 4, "q2": [True] * 4}
        for qid, samples in flags.items():
            for i, ok in enumerate(samples):
                recs.append(EvalRecord(qid, i, "t", "x" if ok else None, ok))
        return recs

    def test_report_fields(self):
        report = compute_metric_report(self._records(), pass_ks=(1, 2, 4))
        assert report.n == 4
        assert report.per_question == {"q0": 2, "q1": 0, "q2": 4}
        assert report.avg_at_k == pytest.approx((0.5 + 0.0 + 1.0) / 3)
        assert report.pass_at_k[4] == pytest.approx((1.0 + 0.0 + 1.0) / 3)

    def test_avg_equals_mean_pass_at_1(self):
        report = compute_metric_report(self._records(), pass_ks=(1,))
        assert abs(report.avg_at_k - report.pass_at_k[1]) < 1e-12

    def test_nonuniform_counts_rejected(self):
        recs = self._records() + [EvalRecord("q0", 4, "t", None, False)]
        with pytest.raises(DomainError):
            compute_metric_report(recs)

    def test_records_jsonl_round_trip(self, tmp_path):
        recs = self._records()
        path = tmp_path / "records.jsonl"
        write_records(recs, path)
        assert read_records(path) == recs

    def test_correct_requires_extraction(self):
        with pytest.raises(ValueError):
            EvalRecord("q", 0, "text", None, True)
