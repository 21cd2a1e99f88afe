"""Decoding-time logit fusion and its supporting pipeline.

A small "guider" model and its pre-fine-tuning "base" steer a frozen
"target" model at each decoding step by adding alpha * (guider - base) to
the target's logits after a warm-up horizon. The package also ships
cross-vocabulary token mapping, preference-pair construction with the
mixed DPO objective, \\boxed{} grading with avg@k / pass@k metrics, and a
reproducible evaluation harness.
"""

from .core import (
    DecodeConfig,
    Distribution,
    LogitVector,
    RepetitionGuard,
    Vocabulary,
    argmax_lowest,
    seeded_rng,
    softmax,
)
from .errors import (
    BackendUnavailable,
    DomainError,
    EmptyPairSet,
    InsufficientPairs,
    InsufficientSamples,
    InvalidLogits,
    LogitFuseError,
    ReplayExhausted,
    UntokenizableText,
    VocabMismatch,
)
from .fusion import (
    Completion,
    FusionSession,
    StopReason,
    decode,
    decode_single,
    fuse_logits,
    sample_token,
)
from .grading import (
    EvalRecord,
    MetricReport,
    avg_at_k,
    compute_metric_report,
    exact_match,
    extract_answer,
    pass_at_k,
)
from .harness import (
    Dataset,
    DatasetItem,
    ProviderBundle,
    RunConfig,
    RunManifest,
    SweepSpec,
    measure_throughput,
    run_eval,
    run_sweep,
)
from .preference import (
    DpoConfig,
    GradedCompletion,
    MixWeights,
    PreferencePair,
    ScoredPair,
    build_pairs,
    dpo_gradient_check,
    dpo_objective,
    dpo_pair_loss,
    implicit_reward,
    select_pairs,
)
from .providers import (
    HttpLogitProvider,
    ProviderRole,
    ReplayTrace,
    TableModel,
    fanout_logits,
    next_logits,
)
from .vocab_align import TokenMap, build_token_map, levenshtein, project_delta, retokenize_prefix

__version__ = "0.1.0"
