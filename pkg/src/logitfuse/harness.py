"""Experiment orchestration: dataset ingestion, multi-sample runs, sweeps.

Every (item, sample) decode draws from its own RNG stream keyed by
(run seed, item id, sample index), so results are byte-identical at any
worker-pool width. A run directory holds manifest.json, records.jsonl,
metrics.json, and completions/; sweeps add summary.csv and summary.json.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import DecodeConfig, RepetitionGuard, Vocabulary, seeded_rng
from .errors import LogitFuseError
from .fusion import Completion, FusionSession, decode
from .grading import EvalRecord, MetricReport, compute_metric_report, grade_text, write_records
from .providers import LogitProvider, TableModel
from .vocab_align import TokenMap, retokenize_prefix

SWEEPABLE_PARAMS = ("alpha", "warmup_T")


@dataclass(frozen=True)
class DatasetItem:
    id: str
    question: str
    gold_answer: str
    kind: str = "free"

    def __post_init__(self) -> None:
        if self.kind not in ("free", "mc"):
            raise ValueError("kind must be 'free' or 'mc'")


@dataclass(frozen=True)
class Dataset:
    items: tuple[DatasetItem, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("dataset item ids must be unique")

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for item in self.items:
                fh.write(
                    json.dumps(
                        {"id": item.id, "question": item.question, "answer": item.gold_answer, "kind": item.kind}
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        items = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                payload = json.loads(line)
                items.append(
                    DatasetItem(
                        id=payload["id"],
                        question=payload["question"],
                        gold_answer=payload["answer"],
                        kind=payload.get("kind", "free"),
                    )
                )
        return cls(tuple(items))


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.param not in SWEEPABLE_PARAMS:
            raise ValueError(f"sweep param must be one of {SWEEPABLE_PARAMS}")
        if not self.values:
            raise ValueError("sweep values must be nonempty")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str
    output_dir: str
    decode: DecodeConfig = DecodeConfig()
    n_samples: int = 8
    pass_ks: tuple[int, ...] = (1, 2, 4, 8)
    sweep: Optional[SweepSpec] = None
    workers: int = 1
    target_path: Optional[str] = None
    guider_path: Optional[str] = None
    base_path: Optional[str] = None
    token_map_path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "pass_ks", tuple(self.pass_ks))

    def to_json_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["pass_ks"] = list(self.pass_ks)
        if self.sweep is not None:
            out["sweep"] = {"param": self.sweep.param, "values": list(self.sweep.values)}
        return out

    @classmethod
    def from_json_dict(cls, payload: dict) -> "RunConfig":
        decode_payload = dict(payload.get("decode", {}))
        guard = decode_payload.get("repetition_guard")
        if guard is not None:
            decode_payload["repetition_guard"] = RepetitionGuard(**guard)
        sweep = payload.get("sweep")
        return cls(
            dataset_path=payload["dataset_path"],
            output_dir=payload["output_dir"],
            decode=DecodeConfig(**decode_payload),
            n_samples=payload.get("n_samples", 8),
            pass_ks=tuple(payload.get("pass_ks", (1, 2, 4, 8))),
            sweep=None if sweep is None else SweepSpec(sweep["param"], tuple(sweep["values"])),
            workers=payload.get("workers", 1),
            target_path=payload.get("target_path"),
            guider_path=payload.get("guider_path"),
            base_path=payload.get("base_path"),
            token_map_path=payload.get("token_map_path"),
        )


@dataclass
class ProviderBundle:
    target: LogitProvider
    guider: LogitProvider
    base: LogitProvider
    token_map: Optional[TokenMap] = None

    @classmethod
    def from_config(cls, config: RunConfig) -> "ProviderBundle":
        if not (config.target_path and config.guider_path and config.base_path):
            raise ValueError("config lacks provider paths; pass a ProviderBundle explicitly")
        target = TableModel.load(config.target_path)
        guider = TableModel.load(config.guider_path)
        base = TableModel.load(config.base_path)
        token_map = None
        if config.token_map_path:
            token_map = TokenMap.load(config.token_map_path, guider.vocabulary, target.vocabulary)
        return cls(target, guider, base, token_map)


def sample_stream_id(item_id: str, sample_idx: int) -> int:
    """Stable 64-bit stream id for (item, sample); platform/process independent."""
    digest = hashlib.blake2b(f"{item_id}\x1f{sample_idx}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def measure_throughput(completions: Sequence[Completion], wall_seconds: float) -> dict:
    """Wall-clock-derived stats; all entries defined (0, not NaN) on empty runs."""
    total_tokens = sum(c.n_generated for c in completions)
    n = len(completions)
    return {
        "tokens_per_second": total_tokens / wall_seconds if wall_seconds > 0 and total_tokens else 0.0,
        "mean_generation_length": total_tokens / n if n else 0.0,
        "latency_per_generation_s": wall_seconds / n if n else 0.0,
    }


@dataclass
class RunManifest:
    config: RunConfig
    records_path: str
    metrics: Optional[MetricReport]
    completion_paths: dict[str, str]
    throughput: dict
    incomplete: list[dict]

    @property
    def ok(self) -> bool:
        return not self.incomplete

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "records": self.records_path,
            "metrics": self.metrics.to_json_dict() if self.metrics is not None else None,
            "completions": self.completion_paths,
            "throughput": self.throughput,
            "incomplete": self.incomplete,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")

    @staticmethod
    def load_config(path: str | Path) -> RunConfig:
        payload = json.loads(Path(path).read_text())
        return RunConfig.from_json_dict(payload["config"])


def _safe_name(item_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", item_id)


def _decode_one(
    item: DatasetItem,
    sample_idx: int,
    config: RunConfig,
    bundle: ProviderBundle,
) -> tuple[EvalRecord, Completion]:
    prompt = retokenize_prefix(item.question, bundle.target.vocabulary)
    session = FusionSession(
        target=bundle.target,
        guider=bundle.guider,
        base=bundle.base,
        prompt=prompt,
        config=config.decode,
        token_map=bundle.token_map,
    )
    rng = seeded_rng(config.decode.seed, sample_stream_id(item.id, sample_idx))
    completion = decode(session, rng)
    extracted, correct = grade_text(completion.text, item.gold_answer, item.kind)
    record = EvalRecord(
        question_id=item.id,
        sample_idx=sample_idx,
        completion_text=completion.text,
        extracted=extracted,
        correct=correct,
    )
    return record, completion


def run_eval(config: RunConfig, bundle: Optional[ProviderBundle] = None) -> RunManifest:
    """Decode n_samples completions per item, grade, persist, and aggregate."""
    dataset = Dataset.load(config.dataset_path)
    if bundle is None:
        bundle = ProviderBundle.from_config(config)
    outdir = Path(config.output_dir)
    (outdir / "completions").mkdir(parents=True, exist_ok=True)

    tasks = [(i, item, s) for i, item in enumerate(dataset.items) for s in range(config.n_samples)]
    results: dict[tuple[int, int], tuple[EvalRecord, Completion]] = {}
    failures: list[dict] = []

    start = time.perf_counter()
    if config.workers == 1:
        for i, item, s in tasks:
            try:
                results[(i, s)] = _decode_one(item, s, config, bundle)
            except Exception as exc:
                failures.append({"item": item.id, "sample": s, "error": f"{type(exc).__name__}: {exc}"})
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = {(i, s): pool.submit(_decode_one, item, s, config, bundle) for i, item, s in tasks}
            for (i, s), fut in futures.items():
                try:
                    results[(i, s)] = fut.result()
                except Exception as exc:
                    item_id = dataset.items[i].id
                    failures.append({"item": item_id, "sample": s, "error": f"{type(exc).__name__}: {exc}"})
    wall = time.perf_counter() - start

    failures.sort(key=lambda f: (f["item"], f["sample"]))
    ordered = [results[key] for key in sorted(results)]
    records = [rec for rec, _ in ordered]
    completions = [comp for _, comp in ordered]

    completion_paths: dict[str, str] = {}
    for (i, s), (rec, comp) in sorted(results.items()):
        rel = f"completions/{_safe_name(rec.question_id)}_{s}.json"
        comp.save(outdir / rel)
        completion_paths[f"{rec.question_id}/{s}"] = rel

    records_rel = "records.jsonl"
    write_records(records, outdir / records_rel)

    metrics: Optional[MetricReport] = None
    if not failures and records:
        pass_ks = tuple(k for k in config.pass_ks if k <= config.n_samples)
        metrics = compute_metric_report(records, k=config.n_samples, pass_ks=pass_ks)
        (outdir / "metrics.json").write_text(json.dumps(metrics.to_json_dict(), indent=2) + "\n")

    manifest = RunManifest(
        config=config,
        records_path=records_rel,
        metrics=metrics,
        completion_paths=completion_paths,
        throughput=measure_throughput(completions, wall),
        incomplete=failures,
    )
    manifest.save(outdir / "manifest.json")
    return manifest


def run_sweep(config: RunConfig, bundle: Optional[ProviderBundle] = None) -> tuple[list[RunManifest], list[dict]]:
    """One run_eval per sweep value with identical seeds; emits a summary table."""
    if config.sweep is None:
        raise ValueError("config has no sweep spec")
    if bundle is None:
        bundle = ProviderBundle.from_config(config)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    manifests = []
    rows = []
    for value in config.sweep.values:
        if config.sweep.param == "warmup_T":
            point_decode = replace(config.decode, warmup_T=int(value))
        else:
            point_decode = replace(config.decode, alpha=float(value))
        point_dir = outdir / f"sweep_{config.sweep.param}_{value:g}"
        point = replace(config, decode=point_decode, output_dir=str(point_dir), sweep=None)
        manifest = run_eval(point, bundle)
        manifests.append(manifest)
        rows.append(
            {
                "param": config.sweep.param,
                "value": float(value),
                "avg_at_k": manifest.metrics.avg_at_k if manifest.metrics else None,
                "mean_generation_length": manifest.throughput["mean_generation_length"],
            }
        )

    (outdir / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    header = ["param", "value", "avg_at_k", "mean_generation_length"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if row[col] is None else repr(row[col]) if isinstance(row[col], float) else str(row[col]) for col in header))
    (outdir / "summary.csv").write_text("\n".join(lines) + "\n")
    return manifests, rows
