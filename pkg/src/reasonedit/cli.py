"""Command-line surface.

Subcommands: topology-sweep, fit-dual, edit, query, eval, seq-run,
prep-locality. One subcommand per process invocation; everything is
deterministic given (config, seed, inputs) under the mock and file
providers.

Exit codes: 0 success, 1 input error, 2 provider unreachable,
3 infeasible fit, 4 compatibility error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import codebook as cb_mod
from .config import EngineConfig, build_provider, load_engine_config
from .dual import DualConfig, DualEmbedder, LayerEmbedder, fit_dual_config
from .edits import parse_edits, parse_eval_samples, serialize_eval_samples
from .errors import (
    ArgumentError,
    CompatibilityError,
    InputFormatError,
    NoFeasibleWeightError,
    ProviderTransportError,
    ReasonEditError,
    SnapshotFormatError,
    ValidationError,
)
from .harness import (
    PredictionRecord,
    SequentialConfig,
    build_report,
    prepare_locality_set,
    sequential_run,
)
from .provider import LayerSpec
from .retrieval import assemble_prompt, retrieve
from .topology import (
    default_fact_pool,
    language_bias,
    load_line_pool,
    load_pair_pool,
    sample_modularity,
    vision_bias,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PROVIDER = 2
EXIT_INFEASIBLE = 3
EXIT_COMPAT = 4


def _read_lines(path: str) -> list[str]:
    try:
        return Path(path).read_text("utf-8").splitlines()
    except FileNotFoundError:
        raise InputFormatError(f"file not found: {path}")


def _load_pools(cfg: EngineConfig) -> tuple[list, list[str], list[str]]:
    if not cfg.pair_pool:
        raise InputFormatError("config does not name a pair pool file")
    pairs = load_pair_pool(_read_lines(cfg.pair_pool))
    if cfg.mismatch_text_pool:
        texts = load_line_pool(_read_lines(cfg.mismatch_text_pool))
    else:
        texts = default_fact_pool()
    images = (
        load_line_pool(_read_lines(cfg.mismatch_image_pool))
        if cfg.mismatch_image_pool
        else [p.image_ref for p in pairs]
    )
    return pairs, texts, images


def _load_dual(cfg: EngineConfig, override: str | None) -> DualConfig:
    path = override or cfg.dual_config_path
    if not path:
        raise InputFormatError("no dual-embedding config path given")
    try:
        return DualConfig.load(path)
    except FileNotFoundError:
        raise InputFormatError(f"dual config not found: {path}")
    except (KeyError, ValueError, TypeError) as exc:
        raise InputFormatError(f"bad dual config {path}: {exc}")


def _load_codebook(path: str, dual: DualConfig) -> cb_mod.Codebook:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise InputFormatError(f"codebook snapshot not found: {path}")
    return cb_mod.load(data, dual)


def _parse_layer_range(value: str) -> list[int]:
    if "-" in value:
        start, end = value.split("-", 1)
        return list(range(int(start), int(end) + 1))
    return [int(value)]


def _write_json_lines(path: str, rows: list[dict]) -> None:
    text = "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    Path(path).write_text(text, "utf-8")


def cmd_topology_sweep(args: argparse.Namespace) -> int:
    cfg = load_engine_config(args.config)
    provider = build_provider(cfg.provider)
    pairs, texts, images = _load_pools(cfg)
    manifest = provider.manifest()
    indexes = (
        _parse_layer_range(args.layers)
        if args.layers
        else list(range(manifest.blocks.get(args.block, 0)))
    )
    rows = []
    for index in indexes:
        layer = LayerSpec(block=args.block, index=index, pooling=args.pooling)
        manifest.check_layer(layer)
        embedder = LayerEmbedder(provider, layer)
        q_vis = sample_modularity(pairs, "vision", cfg.batch, embedder)
        q_lang = sample_modularity(pairs, "language", cfg.batch, embedder)
        q_bi = sample_modularity(pairs, "bimodal", cfg.batch, embedder)
        b_vis = vision_bias(pairs, cfg.batch, embedder, texts, cfg.bias)
        b_lang = language_bias(pairs, cfg.batch, embedder, images, cfg.bias)
        rows.append({
            "block": layer.block,
            "index": layer.index,
            "pooling": layer.pooling,
            "q_vis": q_vis.mean, "q_vis_std": q_vis.std,
            "q_lang": q_lang.mean, "q_lang_std": q_lang.std,
            "q_bi": q_bi.mean, "q_bi_std": q_bi.std,
            "bias_vis": b_vis.mean, "bias_vis_std": b_vis.std,
            "bias_lang": b_lang.mean, "bias_lang_std": b_lang.std,
        })
    _write_json_lines(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_fit_dual(args: argparse.Namespace) -> int:
    cfg = load_engine_config(args.config)
    provider = build_provider(cfg.provider)
    pairs, _, _ = _load_pools(cfg)
    dual, sweep, curve = fit_dual_config(
        provider, pairs, cfg.batch, weight_grid=cfg.weight_grid, pooling=args.pooling
    )
    out = args.out or cfg.dual_config_path
    if not out:
        raise InputFormatError("no output path for the dual config")
    dual.save(out)
    if args.report:
        rows = [{"kind": "layer", "block": l.block, "index": l.index, "q_bi": q}
                for l, q in sweep]
        rows += [{"kind": "weight", "weight": p.weight, "q_vis": p.q_vis,
                  "q_lang": p.q_lang, "score": p.score} for p in curve]
        _write_json_lines(args.report, rows)
    print(f"selected layer {dual.layer.block}:{dual.layer.index} "
          f"weight {dual.text_weight:.6g} -> {out}")
    return EXIT_OK


def cmd_edit(args: argparse.Namespace) -> int:
    cfg = load_engine_config(args.config)
    provider = build_provider(cfg.provider)
    dual = _load_dual(cfg, args.dual_config)
    embedder = DualEmbedder(provider, dual)
    codebook_path = args.codebook or cfg.codebook_path
    if not codebook_path:
        raise InputFormatError("no codebook path given")
    if Path(codebook_path).exists():
        cb = _load_codebook(codebook_path, dual)
    else:
        cb = cb_mod.Codebook(dual)
    edits = parse_edits(_read_lines(args.edits))
    merge = cfg.merge_enabled if args.merge is None else args.merge
    for edit in edits:
        cb_mod.add_edit(cb, edit, embedder, merge_enabled=merge,
                        patch_config=cfg.patch_config())
    Path(codebook_path).write_bytes(cb_mod.snapshot(cb))
    print(f"codebook now holds {len(cb.entries)} entries from {cb.edit_count} edits "
          f"({cb.merges} merges) -> {codebook_path}")
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    cfg = load_engine_config(args.config)
    provider = build_provider(cfg.provider)
    dual = _load_dual(cfg, args.dual_config)
    embedder = DualEmbedder(provider, dual)
    cb = _load_codebook(args.codebook or cfg.codebook_path, dual)
    rows = []
    for lineno, raw in enumerate(_read_lines(args.queries), start=1):
        line = raw.strip()
        if not line:
            continue
        # lenient per-line handling: one bad query must not kill a session
        try:
            obj = json.loads(line)
            sample_id = obj["sample_id"]
            query = embedder.embed(obj["image_ref"], obj["question"])
            result = retrieve(cb, query, cfg.retrieval)
            rows.append({
                "sample_id": sample_id,
                "retrieved": result.retrieved,
                "sentences": list(result.sentences),
                "neighbor_ids": list(result.neighbor_ids),
                "distances": list(result.distances),
                "final_prompt": assemble_prompt(result.sentences, obj["question"],
                                                cfg.prompt_template),
            })
        except ProviderTransportError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ReasonEditError) as exc:
            rows.append({"line": lineno, "error": str(exc)})
    _write_json_lines(args.out, rows)
    print(f"wrote {len(rows)} result rows to {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_engine_config(args.config)
    samples = parse_eval_samples(_read_lines(args.eval_file))
    predictions: dict[str, dict] = {}
    for lineno, raw in enumerate(_read_lines(args.predictions), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            predictions[obj["sample_id"]] = obj
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputFormatError(f"bad prediction record: {exc}", line=lineno)

    records = []
    for sample in samples:
        pred = predictions.get(sample.sample_id)
        if pred is None:
            raise InputFormatError(f"no prediction for sample {sample.sample_id!r}")
        record = PredictionRecord(
            sample_id=sample.sample_id,
            kind=sample.kind,
            predicted=str(pred.get("predicted", "")),
            reference=sample.reference_answer,
            parent_edit_id=sample.parent_edit_id,
            pre_edit_predicted=pred.get("pre_edit_predicted"),
        )
        record.validate()
        records.append(record)

    cb = None
    codebook_path = args.codebook or cfg.codebook_path
    if codebook_path and Path(codebook_path).exists():
        dual = _load_dual(cfg, args.dual_config)
        cb = _load_codebook(codebook_path, dual)
    report = build_report(records, cb)
    Path(args.out).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_seq_run(args: argparse.Namespace) -> int:
    cfg = load_engine_config(args.config)
    provider = build_provider(cfg.provider)
    dual = _load_dual(cfg, args.dual_config)
    embedder = DualEmbedder(provider, dual)
    edits = parse_edits(_read_lines(args.stream))
    eval_pool = parse_eval_samples(_read_lines(args.eval_file)) if args.eval_file else []
    cb = cb_mod.Codebook(dual)
    seq_cfg = SequentialConfig(eval_every=args.eval_every, batch=args.batch, seed=args.seed)
    trajectory = sequential_run(
        edits, eval_pool, cb, embedder, seq_cfg, cfg.retrieval,
        merge_enabled=cfg.merge_enabled, patch_config=cfg.patch_config(),
    )
    rows = [cp.to_json() for cp in trajectory.checkpoints]
    if trajectory.error:
        rows.append({"error": trajectory.error, "completed_edits": trajectory.completed_edits})
    _write_json_lines(args.out, rows)
    if args.codebook:
        Path(args.codebook).write_bytes(cb_mod.snapshot(cb))
    print(f"completed {trajectory.completed_edits} edits, "
          f"{len(trajectory.checkpoints)} checkpoints -> {args.out}")
    return EXIT_OK


def cmd_prep_locality(args: argparse.Namespace) -> int:
    correct = parse_eval_samples(_read_lines(args.corpus))
    edits = parse_edits(_read_lines(args.edits))
    unrelated = prepare_locality_set(
        correct, edits, seed=args.seed,
        random_count=args.random_count, similar_count=args.similar_count,
    )
    Path(args.out).write_text(serialize_eval_samples(unrelated), "utf-8")
    print(f"wrote {len(unrelated)} unrelated samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reasonedit")
    parser.add_argument("--config", help="engine config JSON", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology-sweep", help="per-layer modularity and bias report")
    p.add_argument("--block", default="vision", choices=["vision", "merger", "language"])
    p.add_argument("--layers", help="layer index or inclusive range, e.g. 0-3")
    p.add_argument("--pooling", default="mean", choices=["mean", "last_token"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topology_sweep)

    p = sub.add_parser("fit-dual", help="fit the dual embedding config")
    p.add_argument("--pooling", default="mean", choices=["mean", "last_token"])
    p.add_argument("--out", help="dual config output path")
    p.add_argument("--report", help="optional sweep report path")
    p.set_defaults(func=cmd_fit_dual)

    p = sub.add_parser("edit", help="apply an edits file to a codebook")
    p.add_argument("--edits", required=True)
    p.add_argument("--codebook")
    p.add_argument("--dual-config")
    merge_group = p.add_mutually_exclusive_group()
    merge_group.add_argument("--merge", dest="merge", action="store_true", default=None)
    merge_group.add_argument("--no-merge", dest="merge", action="store_false")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("query", help="run retrieval for a query stream")
    p.add_argument("--queries", required=True)
    p.add_argument("--codebook")
    p.add_argument("--dual-config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score predictions against an eval set")
    p.add_argument("--eval-file", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--codebook")
    p.add_argument("--dual-config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("seq-run", help="sequential editing with checkpoints")
    p.add_argument("--stream", required=True)
    p.add_argument("--eval-file")
    p.add_argument("--eval-every", type=int, default=200)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--codebook", help="optional final snapshot path")
    p.add_argument("--dual-config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_seq_run)

    p = sub.add_parser("prep-locality", help="build the unrelated eval set")
    p.add_argument("--corpus", required=True, help="correctly-answered samples")
    p.add_argument("--edits", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--random-count", type=int, default=100)
    p.add_argument("--similar-count", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep_locality)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProviderTransportError as exc:
        print(f"provider unreachable: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except NoFeasibleWeightError as exc:
        print(f"infeasible fit: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CompatibilityError as exc:
        print(f"compatibility error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (InputFormatError, ValidationError, ArgumentError, SnapshotFormatError,
            ReasonEditError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
