"""Preference-pair construction and the lambda-mixed DPO objective.

Type-1 pairs prefer a correct target completion over an incorrect guider
completion; Type-2 the reverse sources. The mixed objective weighs the two
per-type mean losses by lambda, whose "auto" setting (the Type-1 fraction)
makes the mixture equal the plain mean over the concatenated pair set.

No neural training happens here: the objective and its gradient are
evaluated and verified against a tiny differentiable table policy.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import seeded_rng
from .errors import DomainError, EmptyPairSet, InsufficientPairs

SOURCE_TARGET = "target"
SOURCE_GUIDER = "guider"


@dataclass(frozen=True)
class GradedCompletion:
    question_id: str
    source: str
    text: str
    token_ids: tuple[int, ...] = ()
    correct: bool = False

    def __post_init__(self) -> None:
        if self.source not in (SOURCE_TARGET, SOURCE_GUIDER):
            raise ValueError(f"source must be '{SOURCE_TARGET}' or '{SOURCE_GUIDER}'")
        object.__setattr__(self, "token_ids", tuple(self.token_ids))

    def to_json_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "source": self.source,
            "text": self.text,
            "tokens": list(self.token_ids),
            "correct": self.correct,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "GradedCompletion":
        return cls(
            question_id=payload["question_id"],
            source=payload["source"],
            text=payload["text"],
            token_ids=tuple(payload.get("tokens", ())),
            correct=bool(payload["correct"]),
        )


@dataclass(frozen=True)
class PreferencePair:
    question_id: str
    chosen: GradedCompletion
    rejected: GradedCompletion
    pair_type: int

    def __post_init__(self) -> None:
        if self.pair_type not in (1, 2):
            raise ValueError("pair_type must be 1 or 2")
        if not (self.chosen.question_id == self.rejected.question_id == self.question_id):
            raise ValueError("pair members must share the question id")
        want_chosen = SOURCE_TARGET if self.pair_type == 1 else SOURCE_GUIDER
        want_rejected = SOURCE_GUIDER if self.pair_type == 1 else SOURCE_TARGET
        if self.chosen.source != want_chosen or not self.chosen.correct:
            raise ValueError(f"type-{self.pair_type} chosen must be a correct {want_chosen} completion")
        if self.rejected.source != want_rejected or self.rejected.correct:
            raise ValueError(f"type-{self.pair_type} rejected must be an incorrect {want_rejected} completion")

    def to_json_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "type": self.pair_type,
            "chosen": self.chosen.to_json_dict(),
            "rejected": self.rejected.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "PreferencePair":
        return cls(
            question_id=payload["question_id"],
            chosen=GradedCompletion.from_json_dict(payload["chosen"]),
            rejected=GradedCompletion.from_json_dict(payload["rejected"]),
            pair_type=int(payload["type"]),
        )


@dataclass(frozen=True)
class MixWeights:
    n_type1: int
    n_type2: int

    @property
    def lambda_auto(self) -> float:
        total = self.n_type1 + self.n_type2
        return self.n_type1 / total if total else 0.0


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    lambda_: Union[float, str] = "auto"

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.lambda_ != "auto" and not 0 <= float(self.lambda_) <= 1:
            raise ValueError("lambda must be 'auto' or in [0, 1]")


def build_pairs(
    completions: Iterable[GradedCompletion],
) -> tuple[list[PreferencePair], MixWeights]:
    """Per-question Cartesian products -> Type-1 and Type-2 pairs.

    Within a question, pairs with identical (chosen.text, rejected.text)
    are collapsed. Questions lacking one side contribute no pairs of that
    type.
    """
    groups: dict[str, list[GradedCompletion]] = {}
    for comp in completions:
        groups.setdefault(comp.question_id, []).append(comp)

    pairs: list[PreferencePair] = []
    n1 = n2 = 0
    for qid, comps in groups.items():
        l_ok = [c for c in comps if c.source == SOURCE_TARGET and c.correct]
        l_bad = [c for c in comps if c.source == SOURCE_TARGET and not c.correct]
        s_ok = [c for c in comps if c.source == SOURCE_GUIDER and c.correct]
        s_bad = [c for c in comps if c.source == SOURCE_GUIDER and not c.correct]
        seen: set[tuple[str, str]] = set()
        for chosen, rejected in itertools.product(l_ok, s_bad):
            key = (chosen.text, rejected.text)
            if key in seen:
                continue
            seen.add(key)
            pairs.append(PreferencePair(qid, chosen, rejected, 1))
            n1 += 1
        seen.clear()
        for chosen, rejected in itertools.product(s_ok, l_bad):
            key = (chosen.text, rejected.text)
            if key in seen:
                continue
            seen.add(key)
            pairs.append(PreferencePair(qid, chosen, rejected, 2))
            n2 += 1
    return pairs, MixWeights(n_type1=n1, n_type2=n2)


def select_pairs(pairs: Sequence[PreferencePair], n: int, seed: int) -> list[PreferencePair]:
    """Uniform sample of n pairs without replacement, deterministic in seed."""
    if n > len(pairs):
        raise InsufficientPairs(f"asked for {n} of {len(pairs)} pairs")
    rng = seeded_rng(seed)
    idx = rng.permutation(len(pairs))[:n]
    return [pairs[i] for i in idx]


def implicit_reward(logp_policy: float, logp_ref: float, beta: float) -> float:
    """beta * (log pi_policy - log pi_ref)."""
    if beta <= 0:
        raise DomainError("beta must be > 0")
    return beta * (logp_policy - logp_ref)


def dpo_pair_loss(r_chosen: float, r_rejected: float) -> float:
    """-log sigmoid(r_chosen - r_rejected), the minimized per-pair quantity."""
    delta = r_chosen - r_rejected
    return float(np.logaddexp(0.0, -delta))


def dpo_loss_ddelta(delta: float) -> float:
    """d/d(delta) of the pair loss: -sigmoid(-delta)."""
    if delta >= 0:
        e = math.exp(-delta)
        return -e / (1.0 + e)
    return -1.0 / (1.0 + math.exp(delta))


@dataclass(frozen=True)
class ScoredPair:
    pair_type: int
    r_chosen: float
    r_rejected: float


@dataclass(frozen=True)
class DpoResult:
    loss: float
    lambda_used: float
    mean_loss_type1: float
    mean_loss_type2: float
    n_type1: int
    n_type2: int

    def to_json_dict(self) -> dict:
        return {
            "loss": self.loss,
            "lambda": self.lambda_used,
            "mean_loss_type1": self.mean_loss_type1,
            "mean_loss_type2": self.mean_loss_type2,
            "n_type1": self.n_type1,
            "n_type2": self.n_type2,
        }


def dpo_objective(scored: Sequence[ScoredPair], config: DpoConfig) -> DpoResult:
    """lambda * mean(Type-1 losses) + (1 - lambda) * mean(Type-2 losses).

    With lambda="auto" (= n1/(n1+n2)) the mixture equals the unweighted
    mean over the concatenation. An empty type contributes 0.
    """
    losses1 = [dpo_pair_loss(p.r_chosen, p.r_rejected) for p in scored if p.pair_type == 1]
    losses2 = [dpo_pair_loss(p.r_chosen, p.r_rejected) for p in scored if p.pair_type == 2]
    n1, n2 = len(losses1), len(losses2)
    if n1 + n2 == 0:
        raise EmptyPairSet("dpo objective needs at least one pair")
    lam = MixWeights(n1, n2).lambda_auto if config.lambda_ == "auto" else float(config.lambda_)
    m1 = sum(losses1) / n1 if n1 else 0.0
    m2 = sum(losses2) / n2 if n2 else 0.0
    return DpoResult(
        loss=lam * m1 + (1.0 - lam) * m2,
        lambda_used=lam,
        mean_loss_type1=m1,
        mean_loss_type2=m2,
        n_type1=n1,
        n_type2=n2,
    )


def sequence_logprob(provider, token_ids: Sequence[int], temperature: float = 1.0) -> float:
    """Sum of per-token log softmax(next_logits) along the sequence (float64)."""
    total = 0.0
    ids = list(token_ids)
    for t, tok in enumerate(ids):
        logits = np.asarray(provider.next_logits(ids[:t]), dtype=np.float64)
        z = (logits - logits.max()) / temperature
        total += float(z[tok] - math.log(np.exp(z).sum()))
    return total


# A sequence scored by the toy policy: (context index, token index) steps.
ScoredSeq = Sequence[tuple[int, int]]


class TableScorer:
    """Tiny softmax table policy with trainable logit entries.

    Sequence log-probability is the sum of log softmax(params[ctx])[tok]
    over the steps; the reference policy is a frozen parameter copy. Used
    to verify the DPO objective's analytic gradient numerically.
    """

    def __init__(self, params: np.ndarray, ref_params: Optional[np.ndarray] = None) -> None:
        self.params = np.array(params, dtype=np.float64)
        if self.params.ndim != 2:
            raise ValueError("params must be (n_contexts, vocab) shaped")
        self.ref_params = np.array(ref_params if ref_params is not None else params, dtype=np.float64)
        if self.ref_params.shape != self.params.shape:
            raise ValueError("ref_params shape must match params")

    @staticmethod
    def _log_softmax(row: np.ndarray) -> np.ndarray:
        z = row - row.max()
        return z - math.log(np.exp(z).sum())

    def seq_logprob(self, seq: ScoredSeq, params: Optional[np.ndarray] = None) -> float:
        p = self.params if params is None else params
        return float(sum(self._log_softmax(p[ctx])[tok] for ctx, tok in seq))

    def seq_logprob_ref(self, seq: ScoredSeq) -> float:
        return self.seq_logprob(seq, self.ref_params)

    def seq_logprob_grad(self, seq: ScoredSeq) -> np.ndarray:
        """d log p(seq) / d params: onehot(tok) - softmax(params[ctx]) per step."""
        grad = np.zeros_like(self.params)
        for ctx, tok in seq:
            z = self.params[ctx] - self.params[ctx].max()
            sm = np.exp(z)
            sm /= sm.sum()
            grad[ctx] -= sm
            grad[ctx, tok] += 1.0
        return grad


@dataclass(frozen=True)
class ScorerPair:
    """A preference pair expressed as two scoreable sequences."""

    pair_type: int
    chosen: tuple[tuple[int, int], ...]
    rejected: tuple[tuple[int, int], ...]


def _scorer_objective(scorer: TableScorer, pairs: Sequence[ScorerPair], config: DpoConfig, params: np.ndarray) -> float:
    scored = []
    for pair in pairs:
        r_c = implicit_reward(scorer.seq_logprob(pair.chosen, params), scorer.seq_logprob_ref(pair.chosen), config.beta)
        r_r = implicit_reward(scorer.seq_logprob(pair.rejected, params), scorer.seq_logprob_ref(pair.rejected), config.beta)
        scored.append(ScoredPair(pair.pair_type, r_c, r_r))
    return dpo_objective(scored, config).loss


def dpo_gradient_check(
    scorer: TableScorer,
    pairs: Sequence[ScorerPair],
    config: DpoConfig,
    h: float = 1e-5,
) -> float:
    """Max relative error between the analytic objective gradient and central differences."""
    n1 = sum(1 for p in pairs if p.pair_type == 1)
    n2 = sum(1 for p in pairs if p.pair_type == 2)
    if n1 + n2 == 0:
        raise EmptyPairSet("gradient check needs at least one pair")
    lam = MixWeights(n1, n2).lambda_auto if config.lambda_ == "auto" else float(config.lambda_)

    analytic = np.zeros_like(scorer.params)
    for pair in pairs:
        r_c = implicit_reward(scorer.seq_logprob(pair.chosen), scorer.seq_logprob_ref(pair.chosen), config.beta)
        r_r = implicit_reward(scorer.seq_logprob(pair.rejected), scorer.seq_logprob_ref(pair.rejected), config.beta)
        weight = (lam / n1) if pair.pair_type == 1 else ((1.0 - lam) / n2)
        ddelta = dpo_loss_ddelta(r_c - r_r)
        dgrad = config.beta * (scorer.seq_logprob_grad(pair.chosen) - scorer.seq_logprob_grad(pair.rejected))
        analytic += weight * ddelta * dgrad

    max_rel = 0.0
    flat = scorer.params.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        up = _scorer_objective(scorer, pairs, config, scorer.params)
        flat[idx] = orig - h
        down = _scorer_objective(scorer, pairs, config, scorer.params)
        flat[idx] = orig
        numeric = (up - down) / (2 * h)
        ga = analytic.reshape(-1)[idx]
        rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel


def write_pairs(pairs: Iterable[PreferencePair], path: str | Path) -> None:
    with open(path, "w") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_json_dict()) + "\n")


def read_pairs(path: str | Path) -> list[PreferencePair]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(PreferencePair.from_json_dict(json.loads(line)))
    return out


def write_completions(completions: Iterable[GradedCompletion], path: str | Path) -> None:
    with open(path, "w") as fh:
        for comp in completions:
            fh.write(json.dumps(comp.to_json_dict()) + "\n")


def read_completions(path: str | Path) -> list[GradedCompletion]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(GradedCompletion.from_json_dict(json.loads(line)))
    return out
