import pytest

from logitfuse.preference import GradedCompletion
from logitfuse.toybench import build_toy_benchmark


@pytest.fixture(scope="session")
def toybench():
    return build_toy_benchmark(50)


def corpus_quadruples() -> list[tuple[int, int, int, int]]:
    """Per-question (target_correct, target_wrong, guider_correct, guider_wrong)
    counts reproducing the published corpus totals.

    Side sums: 12412 / 16448 / 18651 / 10209; product sums: 11974 Type-1 and
    43209 Type-2 pairs (55183 total). The grouping is necessarily non-uniform:
    no uniform 5+5-per-question split is consistent with all six numbers.
    """
    ad = [(2, 1)] * 1765 + [(1, 1)] * 8444 + [(3, 0)] * 146
    cb = [(3, 3)] * 4801 + [(5, 0)] * 849 + [(3, 0)] + [(0, 5)] * 409
    cb += [(0, 0)] * (len(ad) - len(cb))
    return [(a, b, c, d) for (a, d), (c, b) in zip(ad, cb)]


def completions_from_quads(quads) -> list[GradedCompletion]:
    """Materialize synthetic graded completions (unique texts) from count metadata."""
    comps = []
    for qi, (a, b, c, d) in enumerate(quads):
        qid = f"q{qi}"
        for i in range(a):
            comps.append(GradedCompletion(qid, "target", f"{qid}-L-ok-{i}", (), True))
        for i in range(b):
            comps.append(GradedCompletion(qid, "target", f"{qid}-L-bad-{i}", (), False))
        for i in range(c):
            comps.append(GradedCompletion(qid, "guider", f"{qid}-S-ok-{i}", (), True))
        for i in range(d):
            comps.append(GradedCompletion(qid, "guider", f"{qid}-S-bad-{i}", (), False))
    return comps
