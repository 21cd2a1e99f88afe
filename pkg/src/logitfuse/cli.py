"""Unified command-line surface.

Subcommands: decode, eval, sweep, metrics, build-pairs, dpo-eval,
vocab-map, mock-server. Global flags (--config/--workers/--seed) sit before
the subcommand; config-file keys mirror RunConfig field names.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .core import DecodeConfig, RepetitionGuard, Vocabulary, seeded_rng
from .fusion import FusionSession, decode
from .grading import compute_metric_report, read_records
from .harness import (
    ProviderBundle,
    RunConfig,
    RunManifest,
    SweepSpec,
    run_eval,
    run_sweep,
)
from .mock_server import MockLogitServer
from .preference import (
    DpoConfig,
    ScoredPair,
    build_pairs,
    dpo_objective,
    implicit_reward,
    read_completions,
    read_pairs,
    select_pairs,
    sequence_logprob,
    write_pairs,
)
from .providers import TableModel
from .vocab_align import TokenMap, build_token_map, retokenize_prefix


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode("utf-8"))
    return json.loads(text)


def load_vocabulary(path: str) -> Vocabulary:
    """Read a vocabulary from a vocab JSON ({"tokens", "eos"}) or a table-model file."""
    payload = json.loads(Path(path).read_text())
    if "vocab" in payload:
        return Vocabulary(tuple(payload["vocab"]), eos_id=int(payload["eos"]))
    return Vocabulary(tuple(payload["tokens"]), eos_id=int(payload["eos"]), pad_id=payload.get("pad"))


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _decode_config_from_args(args, file_cfg: dict, global_seed: Optional[int]) -> DecodeConfig:
    base = dict(file_cfg.get("decode", {}))
    guard = base.get("repetition_guard")
    if guard is not None:
        base["repetition_guard"] = RepetitionGuard(**guard)
    for flag, key in (
        ("alpha", "alpha"),
        ("warmup", "warmup_T"),
        ("temperature", "temperature"),
        ("top_p", "top_p"),
        ("max_tokens", "max_tokens"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    seed = getattr(args, "seed", None)
    if seed is None:
        seed = global_seed
    if seed is None:
        seed = base.get("seed", 0)
    base["seed"] = seed
    if getattr(args, "rep_ngram", None) is not None:
        base["repetition_guard"] = RepetitionGuard(
            ngram=args.rep_ngram,
            max_repeats=args.rep_max_repeats if args.rep_max_repeats is not None else 4,
        )
    return DecodeConfig(**base)


def _bundle_from_args(args) -> tuple[TableModel, TableModel, TableModel, Optional[TokenMap]]:
    target = TableModel.load(args.target)
    guider = TableModel.load(args.guider)
    base = TableModel.load(args.base)
    token_map = None
    if getattr(args, "token_map", None):
        token_map = TokenMap.load(args.token_map, guider.vocabulary, target.vocabulary)
    return target, guider, base, token_map


def cmd_decode(args, global_opts) -> int:
    target, guider, base, token_map = _bundle_from_args(args)
    prompt_text = Path(args.prompt_file).read_text()
    if prompt_text.endswith("\n"):
        prompt_text = prompt_text[:-1]
    prompt = retokenize_prefix(prompt_text, target.vocabulary)
    cfg = _decode_config_from_args(args, {}, global_opts.get("seed"))
    session = FusionSession(
        target=target, guider=guider, base=base, prompt=prompt, config=cfg, token_map=token_map
    )
    completion = decode(session, seeded_rng(cfg.seed))
    payload = completion.to_json_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    else:
        print(json.dumps(payload, indent=2))
    return 0


def _run_config_from_args(args, global_opts) -> RunConfig:
    file_cfg = global_opts.get("config", {})
    decode_cfg = _decode_config_from_args(args, file_cfg, global_opts.get("seed"))

    def pick(name: str, default=None):
        value = getattr(args, name, None)
        if value is not None:
            return value
        return file_cfg.get(name, default)

    def pick_path(flag: str, key: str):
        value = getattr(args, flag, None)
        if value is not None:
            return value
        return file_cfg.get(key)

    workers = global_opts.get("workers")
    if workers is None:
        workers = file_cfg.get("workers", 1)
    pass_ks = pick("pass_ks")
    if isinstance(pass_ks, str):
        pass_ks = _parse_int_list(pass_ks)
    return RunConfig(
        dataset_path=pick("dataset_path"),
        output_dir=pick("output_dir"),
        decode=decode_cfg,
        n_samples=pick("n_samples", 8),
        pass_ks=tuple(pass_ks) if pass_ks else (1, 2, 4, 8),
        workers=workers,
        target_path=pick_path("target", "target_path"),
        guider_path=pick_path("guider", "guider_path"),
        base_path=pick_path("base", "base_path"),
        token_map_path=pick_path("token_map", "token_map_path"),
    )


def cmd_eval(args, global_opts) -> int:
    if args.from_manifest:
        config = RunManifest.load_config(args.from_manifest)
        if args.output_dir:
            config = replace(config, output_dir=args.output_dir)
        if global_opts.get("workers") is not None:
            config = replace(config, workers=global_opts["workers"])
    else:
        config = _run_config_from_args(args, global_opts)
    manifest = run_eval(config)
    summary = {
        "output_dir": config.output_dir,
        "avg_at_k": manifest.metrics.avg_at_k if manifest.metrics else None,
        "incomplete": len(manifest.incomplete),
        "tokens_per_second": manifest.throughput["tokens_per_second"],
    }
    print(json.dumps(summary))
    return 0 if manifest.ok else 1


def cmd_sweep(args, global_opts) -> int:
    config = _run_config_from_args(args, global_opts)
    values = _parse_float_list(args.values)
    config = replace(config, sweep=SweepSpec(param=args.param, values=values))
    manifests, rows = run_sweep(config)
    print(json.dumps(rows))
    return 0 if all(m.ok for m in manifests) else 1


def cmd_metrics(args, global_opts) -> int:
    records = read_records(args.records)
    report = compute_metric_report(records, k=args.k, pass_ks=_parse_int_list(args.pass_k))
    payload = json.dumps(report.to_json_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_build_pairs(args, global_opts) -> int:
    completions = read_completions(args.infile)
    pairs, weights = build_pairs(completions)
    if args.select is not None:
        seed = args.seed if args.seed is not None else global_opts.get("seed") or 0
        pairs = select_pairs(pairs, args.select, seed)
    write_pairs(pairs, args.out)
    print(
        json.dumps(
            {
                "n_type1": weights.n_type1,
                "n_type2": weights.n_type2,
                "total": weights.n_type1 + weights.n_type2,
                "lambda_auto": weights.lambda_auto,
                "written": len(pairs),
            }
        )
    )
    return 0


def cmd_dpo_eval(args, global_opts) -> int:
    pairs = read_pairs(args.pairs)
    policy = TableModel.load(args.policy)
    ref = TableModel.load(args.ref)
    lam = "auto" if args.lambda_ == "auto" else float(args.lambda_)
    config = DpoConfig(beta=args.beta, lambda_=lam)
    scored = []
    for pair in pairs:
        r_c = implicit_reward(
            sequence_logprob(policy, pair.chosen.token_ids),
            sequence_logprob(ref, pair.chosen.token_ids),
            config.beta,
        )
        r_r = implicit_reward(
            sequence_logprob(policy, pair.rejected.token_ids),
            sequence_logprob(ref, pair.rejected.token_ids),
            config.beta,
        )
        scored.append(ScoredPair(pair.pair_type, r_c, r_r))
    result = dpo_objective(scored, config)
    print(json.dumps(result.to_json_dict(), indent=2))
    return 0


def cmd_vocab_map(args, global_opts) -> int:
    if args.action != "build":
        raise SystemExit(f"unknown vocab-map action {args.action!r}")
    source = load_vocabulary(args.source)
    dest = load_vocabulary(args.dest)
    token_map = build_token_map(source, dest, mode=args.mode, marker_prefixes=tuple(args.marker or ()))
    token_map.save(args.out)
    print(json.dumps({"source_size": source.size, "dest_size": dest.size, "out": args.out}))
    return 0


def cmd_mock_server(args, global_opts) -> int:
    models = {}
    for spec in args.model:
        name, _, path = spec.partition("=")
        if not path:
            raise SystemExit(f"--model expects name=path, got {spec!r}")
        models[name] = TableModel.load(path)
    delays = {}
    for spec in args.delay_ms or ():
        name, _, ms = spec.partition("=")
        delays[name] = float(ms)
    server = MockLogitServer(
        models, delays_ms=delays, host=args.host, port=args.port, max_inflight=args.max_inflight
    )
    print(f"serving {sorted(models)} on {server.url}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logitfuse", description=__doc__)
    parser.add_argument("--config", help="TOML or JSON config file (keys mirror RunConfig)")
    parser.add_argument("--workers", type=int, help="worker pool width for eval/sweep")
    parser.add_argument("--seed", type=int, dest="global_seed", help="default RNG seed")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_args(p, required=True):
        p.add_argument("--target", required=required)
        p.add_argument("--guider", required=required)
        p.add_argument("--base", required=required)
        p.add_argument("--token-map", dest="token_map")

    def add_decode_args(p):
        p.add_argument("--alpha", type=float)
        p.add_argument("--warmup", type=int)
        p.add_argument("--temperature", type=float)
        p.add_argument("--top-p", dest="top_p", type=float)
        p.add_argument("--max-tokens", dest="max_tokens", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--rep-ngram", dest="rep_ngram", type=int)
        p.add_argument("--rep-max-repeats", dest="rep_max_repeats", type=int)

    p = sub.add_parser("decode", help="fused decode of one prompt")
    p.add_argument("--prompt-file", required=True)
    add_model_args(p)
    add_decode_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="multi-sample evaluation run")
    p.add_argument("--dataset", dest="dataset_path")
    p.add_argument("--out-dir", dest="output_dir")
    add_model_args(p, required=False)
    add_decode_args(p)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--pass-k", dest="pass_ks")
    p.add_argument("--from-manifest", dest="from_manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="hyperparameter sweep of eval runs")
    p.add_argument("--dataset", dest="dataset_path")
    p.add_argument("--out-dir", dest="output_dir")
    add_model_args(p, required=False)
    add_decode_args(p)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--pass-k", dest="pass_ks")
    p.add_argument("--param", required=True, choices=("alpha", "warmup_T"))
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="aggregate graded records")
    p.add_argument("--records", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--pass-k", dest="pass_k", default="")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("build-pairs", help="construct preference pairs from graded completions")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--select", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("dpo-eval", help="evaluate the mixed DPO objective over scored pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--policy", required=True, help="table-model file scoring the policy")
    p.add_argument("--ref", required=True, help="table-model file scoring the reference")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lambda", dest="lambda_", default="auto")
    p.set_defaults(func=cmd_dpo_eval)

    p = sub.add_parser("vocab-map", help="build a cross-vocabulary token map")
    p.add_argument("action", choices=("build",))
    p.add_argument("--source", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("sum", "max-abs"), default="sum")
    p.add_argument("--marker", action="append", help="whitespace-marker prefix to strip (repeatable)")
    p.set_defaults(func=cmd_vocab_map)

    p = sub.add_parser("mock-server", help="serve table models over the wire protocol")
    p.add_argument("--model", action="append", required=True, help="name=path (repeatable)")
    p.add_argument("--delay-ms", dest="delay_ms", action="append", help="name=milliseconds (repeatable)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8777)
    p.add_argument("--max-inflight", dest="max_inflight", type=int)
    p.set_defaults(func=cmd_mock_server)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    global_opts = {
        "config": _load_config_file(args.config) if args.config else {},
        "workers": args.workers,
        "seed": args.global_seed,
    }
    return args.func(args, global_opts)


if __name__ == "__main__":
    sys.exit(main())
