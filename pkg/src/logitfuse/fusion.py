"""The fused decoding loop: warm-up gated logit fusion, sampling, stop handling.

Per step the target, guider, and base are queried for next-token logits;
past the warm-up horizon the fused scores are
target + alpha * (guider - base), elementwise in float64. Guidance during
the first warmup_T generated tokens is withheld entirely (the target's
logits pass through bit-identically).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import DecodeConfig, argmax_lowest, check_logits, softmax
from .errors import VocabMismatch
from .providers import LogitProvider, ProviderRole, fanout_logits
from .vocab_align import TokenMap, project_delta, retokenize_prefix


class StopReason(str, Enum):
    EOS = "eos"
    MAX_TOKENS = "max_tokens"
    REPETITION_GUARD = "repetition_guard"


@dataclass(frozen=True)
class StepRecord:
    step: int
    alpha_applied: float
    fused_argmax: int


@dataclass(frozen=True)
class Completion:
    """The generated portion of a decode, with its stop reason."""

    token_ids: tuple[int, ...]
    text: str
    stop_reason: StopReason
    n_generated: int
    per_step_log: Optional[tuple[StepRecord, ...]] = None

    def to_json_dict(self) -> dict:
        out = {
            "token_ids": list(self.token_ids),
            "text": self.text,
            "stop_reason": self.stop_reason.value,
            "n_generated": self.n_generated,
        }
        if self.per_step_log is not None:
            out["per_step_log"] = [
                {"step": r.step, "alpha_applied": r.alpha_applied, "fused_argmax": r.fused_argmax}
                for r in self.per_step_log
            ]
        return out

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Completion":
        log = payload.get("per_step_log")
        return cls(
            token_ids=tuple(payload["token_ids"]),
            text=payload["text"],
            stop_reason=StopReason(payload["stop_reason"]),
            n_generated=int(payload["n_generated"]),
            per_step_log=None
            if log is None
            else tuple(StepRecord(r["step"], r["alpha_applied"], r["fused_argmax"]) for r in log),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n")


def apply_guidance(
    target_l: np.ndarray, delta: np.ndarray, alpha: float, step: int, warmup_T: int
) -> np.ndarray:
    """Warm-up gate and the fusion arithmetic, shared by both vocabulary paths."""
    if step < 1:
        raise ValueError("step counts generated tokens and starts at 1")
    t = np.asarray(target_l, dtype=np.float64)
    if step <= warmup_T:
        return t
    d = np.asarray(delta, dtype=np.float64)
    if d.shape != t.shape:
        raise VocabMismatch(f"delta length {d.shape} != target length {t.shape}")
    return t + alpha * d


def fuse_logits(
    target_l: np.ndarray,
    guider_l: np.ndarray,
    base_l: np.ndarray,
    alpha: float,
    step: int,
    warmup_T: int,
) -> np.ndarray:
    """Fused logits over a shared vocabulary (float64).

    Returns the target logits unchanged for step <= warmup_T, otherwise
    target + alpha * (guider - base).
    """
    t = np.asarray(target_l, dtype=np.float64)
    g = np.asarray(guider_l, dtype=np.float64)
    b = np.asarray(base_l, dtype=np.float64)
    if not (t.shape == g.shape == b.shape):
        raise VocabMismatch(f"logit lengths differ: {t.shape}, {g.shape}, {b.shape}")
    if step < 1:
        raise ValueError("step counts generated tokens and starts at 1")
    if step <= warmup_T:
        return t
    return apply_guidance(t, g - b, alpha, step, warmup_T)


def sample_token(logits: np.ndarray, config: DecodeConfig, rng: np.random.Generator) -> int:
    """Temperature softmax, nucleus truncation, one categorical draw.

    The nucleus is the smallest prefix of probability-sorted tokens whose
    cumulative mass reaches top_p (probability ties sort by token index).
    """
    check_logits(np.asarray(logits))
    probs = softmax(logits, config.temperature)
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    threshold = min(config.top_p, float(csum[-1]))
    k = int(np.searchsorted(csum, threshold - 1e-12, side="left")) + 1
    kept = order[:k]
    kept_probs = probs[kept]
    kept_csum = np.cumsum(kept_probs / kept_probs.sum())
    u = rng.random()
    j = int(np.searchsorted(kept_csum, u, side="right"))
    return int(kept[min(j, k - 1)])


@dataclass
class FusionSession:
    """Binds the three providers, the prompt, and the decode configuration.

    Guider and base must share a vocabulary. A token map is required when
    the guider vocabulary differs from the target's and optional (identity
    semantics) when they coincide.
    """

    target: LogitProvider
    guider: LogitProvider
    base: LogitProvider
    prompt: Sequence[int]
    config: DecodeConfig
    token_map: Optional[TokenMap] = None
    concurrent_providers: bool = False

    def __post_init__(self) -> None:
        if self.guider.vocabulary.tokens != self.base.vocabulary.tokens:
            raise VocabMismatch("guider and base must share a vocabulary")
        self.shared_vocab = self.guider.vocabulary.tokens == self.target.vocabulary.tokens
        if not self.shared_vocab and self.token_map is None:
            raise VocabMismatch("token map required when guider and target vocabularies differ")
        if self.token_map is not None:
            if self.token_map.source_vocab.tokens != self.guider.vocabulary.tokens:
                raise VocabMismatch("token map source vocabulary != guider vocabulary")
            if self.token_map.dest_vocab.tokens != self.target.vocabulary.tokens:
                raise VocabMismatch("token map dest vocabulary != target vocabulary")
        self.target.vocabulary.validate_ids(self.prompt)
        self.prompt = tuple(self.prompt)


def _repetition_triggered(generated: list[int], ngram: int, max_repeats: int) -> bool:
    span = ngram * (max_repeats + 1)
    if len(generated) < span:
        return False
    tail = generated[-span:]
    unit = tail[:ngram]
    return all(tail[i * ngram : (i + 1) * ngram] == unit for i in range(1, max_repeats + 1))


def decode(session: FusionSession, rng: np.random.Generator) -> Completion:
    """Run the fused decoding loop to eos, max_tokens, or the repetition guard.

    Step 1 is the first generated token; warm-up counts generated tokens,
    not prompt tokens. On the cross-vocabulary path the accumulated text is
    re-tokenized for the guider/base each step and their delta is projected
    through the token map (when the vocabularies are string-identical the
    target's ids are reused directly).
    """
    cfg = session.config
    tvocab = session.target.vocabulary
    gvocab = session.guider.vocabulary
    providers = {
        ProviderRole.TARGET: session.target,
        ProviderRole.GUIDER: session.guider,
        ProviderRole.BASE: session.base,
    }
    generated: list[int] = []
    prefix: list[int] = list(session.prompt)
    step_log: Optional[list[StepRecord]] = [] if cfg.log_steps else None
    guard = cfg.repetition_guard
    executor = ThreadPoolExecutor(max_workers=3) if session.concurrent_providers else None
    stop_reason = StopReason.MAX_TOKENS
    try:
        for step in range(1, cfg.max_tokens + 1):
            if session.token_map is None or session.shared_vocab:
                side_prefix = prefix
            else:
                side_prefix = retokenize_prefix(tvocab.detokenize(prefix), gvocab)
            try:
                logits = fanout_logits(
                    providers,
                    {
                        ProviderRole.TARGET: prefix,
                        ProviderRole.GUIDER: side_prefix,
                        ProviderRole.BASE: side_prefix,
                    },
                    executor=executor,
                )
            except Exception as exc:
                exc.decode_step = step
                raise
            t_l = logits[ProviderRole.TARGET]
            if session.token_map is None:
                fused = fuse_logits(
                    t_l, logits[ProviderRole.GUIDER], logits[ProviderRole.BASE],
                    cfg.alpha, step, cfg.warmup_T,
                )
            else:
                delta_src = np.asarray(logits[ProviderRole.GUIDER], dtype=np.float64) - np.asarray(
                    logits[ProviderRole.BASE], dtype=np.float64
                )
                delta = project_delta(delta_src, session.token_map)
                fused = apply_guidance(t_l, delta, cfg.alpha, step, cfg.warmup_T)
            token = sample_token(fused, cfg, rng)
            generated.append(token)
            prefix.append(token)
            if step_log is not None:
                step_log.append(
                    StepRecord(step, cfg.alpha if step > cfg.warmup_T else 0.0, argmax_lowest(fused))
                )
            if cfg.stop_on_eos and token == tvocab.eos_id:
                stop_reason = StopReason.EOS
                break
            if guard is not None and _repetition_triggered(generated, guard.ngram, guard.max_repeats):
                stop_reason = StopReason.REPETITION_GUARD
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=False)

    visible = generated[:-1] if stop_reason is StopReason.EOS else generated
    return Completion(
        token_ids=tuple(generated),
        text=tvocab.detokenize(visible),
        stop_reason=stop_reason,
        n_generated=len(generated),
        per_step_log=tuple(step_log) if step_log is not None else None,
    )


def decode_single(
    provider: LogitProvider, prompt: Sequence[int], config: DecodeConfig, rng: np.random.Generator
) -> Completion:
    """Plain ancestral sampling from one provider (the no-guidance reference)."""
    vocab = provider.vocabulary
    vocab.validate_ids(prompt)
    generated: list[int] = []
    prefix: list[int] = list(prompt)
    guard = config.repetition_guard
    stop_reason = StopReason.MAX_TOKENS
    for _step in range(1, config.max_tokens + 1):
        logits = provider.next_logits(prefix)
        token = sample_token(logits, config, rng)
        generated.append(token)
        prefix.append(token)
        if config.stop_on_eos and token == vocab.eos_id:
            stop_reason = StopReason.EOS
            break
        if guard is not None and _repetition_triggered(generated, guard.ngram, guard.max_repeats):
            stop_reason = StopReason.REPETITION_GUARD
            break
    visible = generated[:-1] if stop_reason is StopReason.EOS else generated
    return Completion(
        token_ids=tuple(generated),
        text=vocab.detokenize(visible),
        stop_reason=stop_reason,
        n_generated=len(generated),
    )
