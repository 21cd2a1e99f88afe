"""Logit providers for the three model roles, plus the network client.

A provider is anything with a `vocabulary` and a pure
`next_logits(prefix) -> float32 vector` function of the token-id prefix.
Deterministic desk-scale providers are TableModel (n-gram context lookup)
and ReplayTrace (golden fixture); HttpLogitProvider speaks the stateless
wire protocol below.

Wire protocol (bit-exact):
    POST /v1/logits
    request  {"model": "<id>", "tokens": [<int>, ...]}
    response {"logits": [<float32 as JSON number>, ...], "vocab_size": <int>}
    200 on success, 422 on unknown model or bad token id, 503 on overload.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, runtime_checkable

import numpy as np
import requests

from .core import Vocabulary, check_logits
from .errors import BackendUnavailable, ReplayExhausted, VocabMismatch

DEFAULT_TIMEOUT_MS = 30_000
BACKEND_URL_ENV = "LOGITFUSE_BACKEND_URL"
TIMEOUT_ENV = "LOGITFUSE_TIMEOUT_MS"


class ProviderRole(Enum):
    TARGET = "target"
    GUIDER = "guider"
    BASE = "base"


ROLE_ORDER = (ProviderRole.TARGET, ProviderRole.GUIDER, ProviderRole.BASE)


@runtime_checkable
class LogitProvider(Protocol):
    vocabulary: Vocabulary

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray: ...


def _freeze(vec: np.ndarray) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float32)
    arr.setflags(write=False)
    return arr


@dataclass
class TableModel:
    """Deterministic n-gram-context -> logits lookup model.

    The lookup key is the last min(len(prefix), order-1) token ids, so
    entries may carry contexts shorter than order-1 for positions early in
    a sequence. Absent contexts fall back to default_logits.
    """

    vocabulary: Vocabulary
    order: int
    entries: dict[tuple[int, ...], np.ndarray]
    default_logits: np.ndarray

    def __post_init__(self) -> None:
        if self.order < 1:
            raise ValueError("order must be >= 1")
        size = self.vocabulary.size
        self.default_logits = _freeze(check_logits(self.default_logits, size))
        frozen = {}
        for ctx, vec in self.entries.items():
            key = tuple(int(t) for t in ctx)
            if len(key) > self.order - 1:
                raise ValueError(f"context {key} longer than order-1={self.order - 1}")
            self.vocabulary.validate_ids(key)
            frozen[key] = _freeze(check_logits(vec, size))
        self.entries = frozen

    def context_key(self, prefix: Sequence[int]) -> tuple[int, ...]:
        k = self.order - 1
        return tuple(prefix[-k:]) if k > 0 else ()

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        self.vocabulary.validate_ids(prefix)
        return self.entries.get(self.context_key(prefix), self.default_logits)

    def to_json_dict(self) -> dict:
        return {
            "order": self.order,
            "vocab": list(self.vocabulary.tokens),
            "eos": self.vocabulary.eos_id,
            "entries": {
                "-".join(str(t) for t in ctx): [float(x) for x in vec]
                for ctx, vec in self.entries.items()
            },
            "default": [float(x) for x in self.default_logits],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n")

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TableModel":
        vocab = Vocabulary(tuple(payload["vocab"]), eos_id=int(payload["eos"]))
        entries = {}
        for key, vec in payload["entries"].items():
            ctx = tuple(int(t) for t in key.split("-")) if key else ()
            entries[ctx] = np.asarray(vec, dtype=np.float32)
        return cls(
            vocabulary=vocab,
            order=int(payload["order"]),
            entries=entries,
            default_logits=np.asarray(payload["default"], dtype=np.float32),
        )

    @classmethod
    def load(cls, path: str | Path) -> "TableModel":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


@dataclass
class ReplayTrace:
    """Replays a recorded list of logit vectors, keyed by prefix length.

    steps[i] answers the prefix of length offset+i; querying outside the
    trace raises ReplayExhausted.
    """

    vocabulary: Vocabulary
    steps: list[np.ndarray]
    offset: int = 0

    def __post_init__(self) -> None:
        self.steps = [_freeze(check_logits(v, self.vocabulary.size)) for v in self.steps]

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        self.vocabulary.validate_ids(prefix)
        idx = len(prefix) - self.offset
        if not 0 <= idx < len(self.steps):
            raise ReplayExhausted(
                f"trace covers prefix lengths [{self.offset}, {self.offset + len(self.steps)}), got {len(prefix)}"
            )
        return self.steps[idx]


class HttpLogitProvider:
    """Stateless client for the wire protocol; sends the full prefix each call."""

    def __init__(
        self,
        model_id: str,
        vocabulary: Vocabulary,
        base_url: Optional[str] = None,
        timeout_ms: Optional[float] = None,
    ) -> None:
        url = base_url or os.environ.get(BACKEND_URL_ENV)
        if not url:
            raise ValueError(f"no backend url: pass base_url or set {BACKEND_URL_ENV}")
        if timeout_ms is None:
            timeout_ms = float(os.environ.get(TIMEOUT_ENV, DEFAULT_TIMEOUT_MS))
        self.model_id = model_id
        self.vocabulary = vocabulary
        self.base_url = url.rstrip("/")
        self.timeout_s = timeout_ms / 1000.0
        self._session = requests.Session()

    def request_body(self, prefix: Sequence[int]) -> bytes:
        # Canonical serialization: fixed key order, no whitespace.
        return json.dumps(
            {"model": self.model_id, "tokens": [int(t) for t in prefix]},
            separators=(",", ":"),
        ).encode("utf-8")

    def next_logits(self, prefix: Sequence[int]) -> np.ndarray:
        self.vocabulary.validate_ids(prefix)
        try:
            resp = self._session.post(
                f"{self.base_url}/v1/logits",
                data=self.request_body(prefix),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"backend request failed: {exc}") from exc
        if resp.status_code == 422:
            raise VocabMismatch(f"backend rejected request: {resp.text}")
        if resp.status_code != 200:
            raise BackendUnavailable(f"backend returned status {resp.status_code}")
        payload = resp.json()
        arr = np.asarray(payload["logits"], dtype=np.float32)
        if int(payload.get("vocab_size", arr.size)) != self.vocabulary.size:
            raise VocabMismatch(
                f"backend vocab_size {payload.get('vocab_size')} != expected {self.vocabulary.size}"
            )
        return _freeze(check_logits(arr, self.vocabulary.size))

    def close(self) -> None:
        self._session.close()


def next_logits(provider: LogitProvider, prefix: Sequence[int]) -> np.ndarray:
    """Free-function form of the provider query."""
    return provider.next_logits(prefix)


def fanout_logits(
    providers: Mapping[ProviderRole, LogitProvider],
    prefixes: Mapping[ProviderRole, Sequence[int]],
    executor: Optional[ThreadPoolExecutor] = None,
) -> dict[ProviderRole, np.ndarray]:
    """Query all three roles; concurrent when an executor is supplied.

    Results are identical either way (providers are pure functions of the
    prefix). On failure the first error in role order (target, guider, base)
    is raised with `.provider_role` attached, after draining the other
    queries.
    """
    missing = [r for r in ROLE_ORDER if r not in providers or r not in prefixes]
    if missing:
        raise ValueError(f"all three roles must be bound, missing {missing}")

    results: dict[ProviderRole, np.ndarray] = {}
    errors: dict[ProviderRole, BaseException] = {}
    if executor is None:
        for role in ROLE_ORDER:
            try:
                results[role] = providers[role].next_logits(prefixes[role])
            except Exception as exc:
                errors[role] = exc
                break
    else:
        futures = {role: executor.submit(providers[role].next_logits, prefixes[role]) for role in ROLE_ORDER}
        for role in ROLE_ORDER:
            try:
                results[role] = futures[role].result()
            except Exception as exc:
                errors[role] = exc

    for role in ROLE_ORDER:
        if role in errors:
            err = errors[role]
            err.provider_role = role
            raise err
    return results
