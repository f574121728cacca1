"""Command-line interface: per-stage subcommands plus an end-to-end pipeline.

Stages: ingest | index | embed | graph | train | rank | eval | pipeline | synth.
One JSON config file can drive all stages; command-line flags override config
values, which override built-in defaults. Every stage writes a ``manifest.json``
into its output directory (before outputs are finalized) recording the resolved
config, sha256 digests of all inputs, output paths, the tool version, and
per-stage wall-clock timings.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
The env var ``CASELINK_CACHE_DIR`` names a directory for reusable BM25 index
caches keyed by corpus digest.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .bm25 import Bm25Index, build_index, load_index, save_index
from .corpus import (
    CorpusStore,
    attach_charges,
    ingest_corpus,
    load_charge_lexicon,
    load_labels,
)
from .embeddings import (
    EmbeddingTable,
    ProviderConfig,
    ProviderMode,
    RemoteEmbeddingProvider,
    check_coverage,
    load_embedding_file,
    normalize_table,
    read_binary_embeddings,
    truncate_text,
    write_binary_embeddings,
)
from .errors import CaseLinkError, LabelError, NumericalError, ParseError
from .gat import load_checkpoint, model_forward
from .graph import build_global_case_graph, load_graph, save_graph
from .retrieval import (
    evaluate_runs,
    rank_all,
    read_run_tsv,
    representations_from_rows,
    write_report_json,
    write_run_json,
    write_run_tsv,
)
from .synthetic import SyntheticSpec, generate, write_dataset
from .training import TrainingConfig, train

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "CASELINK_CACHE_DIR"


class UsageError(Exception):
    """Bad command line; mapped to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


# ---------------------------------------------------------------------------
# manifest plumbing


def _digest_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(path.rglob("*")):
            if p.is_file():
                h.update(p.name.encode("utf-8"))
                h.update(p.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


class StageManifest:
    """Run record: resolved config, input digests, outputs, timings.

    Written once before stage outputs are finalized and rewritten with
    timings at the end, so a finalized artifact never exists without one.
    """

    def __init__(self, out_dir: Path, command: str, config_path, config: dict):
        self.path = Path(out_dir) / "manifest.json"
        self.data = {
            "tool": "caselink",
            "version": __version__,
            "command": command,
            "config_path": str(config_path) if config_path else None,
            "config": config,
            "inputs": {},
            "outputs": [],
            "timings_ms": {},
        }
        self._t0: dict[str, float] = {}

    def add_input(self, path) -> None:
        p = Path(path)
        self.data["inputs"][str(p)] = _digest_path(p)

    def add_output(self, path) -> None:
        s = str(path)
        if s not in self.data["outputs"]:
            self.data["outputs"].append(s)

    def start(self, stage: str) -> None:
        self._t0[stage] = time.perf_counter()

    def stop(self, stage: str) -> None:
        self.data["timings_ms"][stage] = round(
            (time.perf_counter() - self._t0[stage]) * 1e3, 3
        )

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(
            json.dumps(self.data, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )


def _finalize(renames: list[tuple[Path, Path]]) -> None:
    for tmp, final in renames:
        os.replace(tmp, final)


def _tmp(path: Path) -> Path:
    return path.with_name(path.name + ".tmp")


# ---------------------------------------------------------------------------
# config resolution: CLI flag > config file > built-in default


def _load_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ParseError("config root must be a JSON object")
    return cfg


def _opt(args, cfg: dict, name: str, default=None, flag: str | None = None):
    v = getattr(args, flag or name, None)
    if v is not None:
        return v
    if name in cfg:
        return cfg[name]
    return default


def _path_opt(args, cfg, name, flag=None) -> Path | None:
    v = _opt(args, cfg, name, flag=flag)
    return Path(v) if v is not None else None


def _require_path(args, cfg, name, flag=None) -> Path:
    v = _path_opt(args, cfg, name, flag=flag)
    if v is None:
        raise UsageError(f"--{(flag or name).replace('_', '-')} is required "
                         f"(flag or config key {name!r})")
    return v


def _out_dir(args, cfg) -> Path:
    v = _opt(args, cfg, "out_dir", default="out", flag="out")
    out = Path(v)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_training_config(args, cfg: dict) -> TrainingConfig:
    """Merge training settings: flags > config file > dataclass defaults."""
    merged: dict = {}
    section = cfg.get("training", {})
    if not isinstance(section, dict):
        raise ParseError("config key 'training' must be an object")
    aliases = {"lambda": "lam", "K_edges": "k_edges"}
    valid = {f.name for f in dataclasses.fields(TrainingConfig)}
    for key, value in section.items():
        name = aliases.get(key, key)
        if name not in valid:
            raise ParseError(f"unknown training config key {key!r}")
        merged[name] = value
    for name in valid:
        v = getattr(args, name, None)
        if v is not None:
            merged[name] = v
    try:
        return TrainingConfig(**merged)
    except ValueError as exc:
        raise ParseError(f"invalid training config: {exc}") from exc


def _cache_dir() -> Path | None:
    v = os.environ.get(CACHE_ENV_VAR)
    if not v:
        return None
    p = Path(v)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _get_index(
    store: CorpusStore, corpus_path: Path, k1: float, b: float
) -> tuple[Bm25Index, str]:
    """Build the BM25 index, consulting the digest-keyed cache directory."""
    digest = _digest_path(corpus_path)
    cache = _cache_dir()
    cache_file = None
    if cache is not None:
        cache_file = cache / f"bm25_{digest[:16]}_{k1:g}_{b:g}.bin"
        if cache_file.exists():
            index, cached_digest = load_index(cache_file)
            if cached_digest == digest and index.k1 == k1 and index.b == b:
                logger.info("reusing BM25 cache %s", cache_file)
                return index, digest
    index = build_index(store, k1=k1, b=b)
    if cache_file is not None:
        tmp = _tmp(cache_file)
        save_index(index, tmp, digest)
        os.replace(tmp, cache_file)
    return index, digest


# ---------------------------------------------------------------------------
# shared stage helpers


def _load_store(args, cfg, need_labels: bool) -> tuple[CorpusStore, Path, Path | None]:
    corpus_path = _require_path(args, cfg, "corpus")
    labels_path = _path_opt(args, cfg, "labels")
    if need_labels and labels_path is None:
        raise UsageError("--labels is required (flag or config key 'labels')")
    store = ingest_corpus(corpus_path, labels_path)
    return store, corpus_path, labels_path


def _load_table_for(args, cfg, store: CorpusStore) -> tuple[EmbeddingTable, Path]:
    emb_path = _require_path(args, cfg, "embeddings")
    dim = _opt(args, cfg, "dim")
    table = load_embedding_file(emb_path, expected_dim=dim)
    table = normalize_table(table)
    check_coverage(table, store)
    return table, emb_path


def _attach_lexicon(args, cfg, store: CorpusStore) -> tuple[CorpusStore, Path]:
    lex_path = _require_path(args, cfg, "lexicon")
    charges = load_charge_lexicon(lex_path)
    return attach_charges(store, charges), lex_path


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    cfg = _load_config(args.config)
    store, corpus_path, labels_path = _load_store(args, cfg, need_labels=False)
    out = _out_dir(args, cfg)
    manifest = StageManifest(out, "ingest", args.config, {"corpus": str(corpus_path)})
    manifest.add_input(corpus_path)
    if labels_path is not None:
        manifest.add_input(labels_path)
    manifest.start("ingest")

    norm_path = out / "corpus_normalized.jsonl"
    stats_path = out / "stats.json"
    tmp_norm, tmp_stats = _tmp(norm_path), _tmp(stats_path)
    with tmp_norm.open("w", encoding="utf-8") as fh:
        for case in store.cases:
            fh.write(
                json.dumps(
                    {
                        "id": case.id,
                        "role": case.role.value,
                        "text": case.text,
                        "year": case.year,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    stats = {
        "n_cases": store.n_cases,
        "n_queries": len(store.queries()),
        "n_candidates": len(store.candidates()),
        "n_labeled_queries": len(store.labels),
    }
    tmp_stats.write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n", "utf-8")
    manifest.add_output(norm_path)
    manifest.add_output(stats_path)
    manifest.stop("ingest")
    manifest.write()
    _finalize([(tmp_norm, norm_path), (tmp_stats, stats_path)])
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_index(args) -> int:
    cfg = _load_config(args.config)
    store, corpus_path, labels_path = _load_store(args, cfg, need_labels=False)
    out = _out_dir(args, cfg)
    k1 = float(_opt(args, cfg, "k1", default=1.2))
    b = float(_opt(args, cfg, "b", default=0.75))
    manifest = StageManifest(
        out, "index", args.config, {"corpus": str(corpus_path), "k1": k1, "b": b}
    )
    manifest.add_input(corpus_path)
    if labels_path is not None:
        manifest.add_input(labels_path)
    manifest.start("index")

    index, digest = _get_index(store, corpus_path, k1, b)
    index_path = out / "bm25.bin"
    tmp = _tmp(index_path)
    save_index(index, tmp, digest)
    manifest.add_output(index_path)
    manifest.stop("index")
    manifest.write()
    _finalize([(tmp, index_path)])
    print(
        json.dumps(
            {"documents": len(index.doc_ids), "terms": len(index.postings),
             "avgdl": index.avgdl},
            sort_keys=True,
        )
    )
    return 0


def _fetch_remote_table(
    args, cfg, store: CorpusStore, endpoint: str
) -> EmbeddingTable:
    provider_cfg = ProviderConfig(
        mode=ProviderMode.REMOTE,
        endpoint=endpoint,
        truncation_tokens=int(_opt(args, cfg, "truncation_tokens", default=4096)),
        max_in_flight=int(_opt(args, cfg, "threads", default=4, flag="threads") or 4),
    )
    provider = RemoteEmbeddingProvider(provider_cfg)
    items = [
        (case.id, truncate_text(case.text, provider_cfg.truncation_tokens))
        for case in store.cases
    ]
    items += [(charge.id, charge.name) for charge in store.charges]
    return provider.fetch_many(items)


def cmd_embed(args) -> int:
    cfg = _load_config(args.config)
    store, corpus_path, _ = _load_store(args, cfg, need_labels=False)
    store, lex_path = _attach_lexicon(args, cfg, store)
    out = _out_dir(args, cfg)
    endpoint = _opt(args, cfg, "endpoint")
    manifest = StageManifest(
        out,
        "embed",
        args.config,
        {"corpus": str(corpus_path), "lexicon": str(lex_path), "endpoint": endpoint},
    )
    manifest.add_input(corpus_path)
    manifest.add_input(lex_path)
    manifest.start("embed")

    if endpoint:
        table = _fetch_remote_table(args, cfg, store, endpoint)
    else:
        emb_path = _require_path(args, cfg, "embeddings")
        manifest.add_input(emb_path)
        dim = _opt(args, cfg, "dim")
        table = load_embedding_file(emb_path, expected_dim=dim)
    table = normalize_table(table)
    check_coverage(table, store)

    out_path = out / "embeddings.emb1"
    tmp = _tmp(out_path)
    ids = [c.id for c in store.cases] + [ch.id for ch in store.charges]
    write_binary_embeddings(table, tmp, ids)
    manifest.add_output(out_path)
    manifest.stop("embed")
    manifest.write()
    _finalize([(tmp, out_path)])
    print(json.dumps({"vectors": len(ids), "dim": table.dim}, sort_keys=True))
    return 0


def cmd_graph(args) -> int:
    cfg = _load_config(args.config)
    store, corpus_path, _ = _load_store(args, cfg, need_labels=False)
    store, lex_path = _attach_lexicon(args, cfg, store)
    table, emb_path = _load_table_for(args, cfg, store)
    out = _out_dir(args, cfg)
    training = resolve_training_config(args, cfg)
    manifest = StageManifest(
        out,
        "graph",
        args.config,
        {
            "corpus": str(corpus_path),
            "lexicon": str(lex_path),
            "embeddings": str(emb_path),
            "k_edges": training.k_edges,
            "delta": training.delta,
        },
    )
    for p in (corpus_path, lex_path, emb_path):
        manifest.add_input(p)
    manifest.start("graph")

    index, _digest = _get_index(
        store, corpus_path,
        float(_opt(args, cfg, "k1", default=1.2)),
        float(_opt(args, cfg, "b", default=0.75)),
    )
    gcg = build_global_case_graph(
        store, table, index, k=training.k_edges, delta=training.delta
    )
    graph_path = out / "graph.gcg1"
    tmp = _tmp(graph_path)
    save_graph(gcg, tmp)
    manifest.add_output(graph_path)
    manifest.stop("graph")
    manifest.write()
    _finalize([(tmp, graph_path)])
    print(
        json.dumps(
            {
                "n_cases": gcg.n_cases,
                "n_charges": gcg.n_charges,
                "edges": int(gcg.adjacency.nnz // 2),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    store, corpus_path, labels_path = _load_store(args, cfg, need_labels=True)
    store, lex_path = _attach_lexicon(args, cfg, store)
    out = _out_dir(args, cfg)
    training = resolve_training_config(args, cfg)

    graph_path = _path_opt(args, cfg, "graph", flag="graph_file")
    manifest = StageManifest(
        out, "train", args.config,
        {
            "corpus": str(corpus_path),
            "labels": str(labels_path),
            "lexicon": str(lex_path),
            "training": dataclasses.asdict(training),
        },
    )
    manifest.add_input(corpus_path)
    manifest.add_input(labels_path)
    manifest.add_input(lex_path)
    manifest.start("train")

    index, _digest = _get_index(
        store, corpus_path,
        float(_opt(args, cfg, "k1", default=1.2)),
        float(_opt(args, cfg, "b", default=0.75)),
    )
    if graph_path is not None:
        manifest.add_input(graph_path)
        gcg = load_graph(graph_path)
    else:
        table, emb_path = _load_table_for(args, cfg, store)
        manifest.add_input(emb_path)
        gcg = build_global_case_graph(
            store, table, index, k=training.k_edges, delta=training.delta
        )

    ckpt_dir = out / "checkpoints"
    manifest.add_output(ckpt_dir / "checkpoint.gatc")
    manifest.add_output(ckpt_dir / "training_log.jsonl")
    manifest.write()  # before checkpoints land

    result = train(
        store, gcg, store.labels, training,
        checkpoint_dir=ckpt_dir, bm25_index=index,
    )
    manifest.stop("train")
    manifest.write()
    best = result.log[result.best_epoch] if result.log else None
    print(
        json.dumps(
            {
                "best_epoch": result.best_epoch,
                "best_loss": best.mean_loss if best else None,
                "epochs_run": len(result.log),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_rank(args) -> int:
    cfg = _load_config(args.config)
    store, corpus_path, labels_path = _load_store(args, cfg, need_labels=False)
    store, lex_path = _attach_lexicon(args, cfg, store)
    out = _out_dir(args, cfg)
    training = resolve_training_config(args, cfg)
    ckpt_path = _require_path(args, cfg, "checkpoint")
    graph_path = _path_opt(args, cfg, "graph", flag="graph_file")
    prefilter_size = int(_opt(args, cfg, "prefilter_size", default=10))
    final_size = int(_opt(args, cfg, "final_size", default=5))

    manifest = StageManifest(
        out, "rank", args.config,
        {
            "corpus": str(corpus_path),
            "lexicon": str(lex_path),
            "checkpoint": str(ckpt_path),
            "prefilter_size": prefilter_size,
            "final_size": final_size,
        },
    )
    manifest.add_input(corpus_path)
    manifest.add_input(lex_path)
    manifest.add_input(ckpt_path)
    manifest.start("rank")

    index, _digest = _get_index(
        store, corpus_path,
        float(_opt(args, cfg, "k1", default=1.2)),
        float(_opt(args, cfg, "b", default=0.75)),
    )
    if graph_path is not None:
        manifest.add_input(graph_path)
        gcg = load_graph(graph_path)
    else:
        table, emb_path = _load_table_for(args, cfg, store)
        manifest.add_input(emb_path)
        gcg = build_global_case_graph(
            store, table, index, k=training.k_edges, delta=training.delta
        )
    params = load_checkpoint(ckpt_path)
    h, _trace = model_forward(params, gcg.features, gcg.adjacency, train_mode=False)
    reps = representations_from_rows(gcg.node_ids, h)
    run = rank_all(store, index, reps, prefilter_size=prefilter_size, final_size=final_size)

    run_tsv, run_json = out / "run.tsv", out / "run.json"
    tmp_tsv, tmp_json = _tmp(run_tsv), _tmp(run_json)
    write_run_tsv(run, tmp_tsv)
    write_run_json(run, tmp_json)
    manifest.add_output(run_tsv)
    manifest.add_output(run_json)
    manifest.stop("rank")
    manifest.write()
    _finalize([(tmp_tsv, run_tsv), (tmp_json, run_json)])
    print(json.dumps({"queries": len(run.results)}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    run_path = _require_path(args, cfg, "run")
    labels_path = _require_path(args, cfg, "labels")
    retrieved = read_run_tsv(run_path)
    labels = load_labels(labels_path)
    missing = sorted(set(retrieved) - set(labels))
    if missing:
        raise LabelError(f"run queries missing from labels: {missing[:5]}")
    report = evaluate_runs(retrieved, labels)
    print(json.dumps(report.to_dict(), sort_keys=True))
    if args.out is not None:
        out = _out_dir(args, cfg)
        manifest = StageManifest(
            out, "eval", args.config,
            {"run": str(run_path), "labels": str(labels_path)},
        )
        manifest.add_input(run_path)
        manifest.add_input(labels_path)
        manifest.start("eval")
        report_path = out / "report.json"
        tmp = _tmp(report_path)
        write_report_json(report, tmp)
        manifest.add_output(report_path)
        manifest.stop("eval")
        manifest.write()
        _finalize([(tmp, report_path)])
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    store, corpus_path, labels_path = _load_store(args, cfg, need_labels=True)
    store, lex_path = _attach_lexicon(args, cfg, store)
    training = resolve_training_config(args, cfg)
    prefilter_size = int(_opt(args, cfg, "prefilter_size", default=10))
    final_size = int(_opt(args, cfg, "final_size", default=5))
    k1 = float(_opt(args, cfg, "k1", default=1.2))
    b = float(_opt(args, cfg, "b", default=0.75))

    manifest = StageManifest(
        out, "pipeline", args.config,
        {
            "corpus": str(corpus_path),
            "labels": str(labels_path),
            "lexicon": str(lex_path),
            "k1": k1,
            "b": b,
            "prefilter_size": prefilter_size,
            "final_size": final_size,
            "training": dataclasses.asdict(training),
        },
    )
    manifest.add_input(corpus_path)
    manifest.add_input(labels_path)
    manifest.add_input(lex_path)

    # index
    manifest.start("index")
    index, digest = _get_index(store, corpus_path, k1, b)
    index_path = out / "bm25.bin"
    tmp = _tmp(index_path)
    save_index(index, tmp, digest)
    manifest.add_output(index_path)
    renames = [(tmp, index_path)]
    manifest.stop("index")

    # embed
    manifest.start("embed")
    endpoint = _opt(args, cfg, "endpoint")
    if endpoint:
        table = _fetch_remote_table(args, cfg, store, endpoint)
    else:
        emb_path = _require_path(args, cfg, "embeddings")
        manifest.add_input(emb_path)
        table = load_embedding_file(emb_path, expected_dim=_opt(args, cfg, "dim"))
    table = normalize_table(table)
    check_coverage(table, store)
    emb_out = out / "embeddings.emb1"
    tmp = _tmp(emb_out)
    ids = [c.id for c in store.cases] + [ch.id for ch in store.charges]
    write_binary_embeddings(table, tmp, ids)
    renames.append((tmp, emb_out))
    manifest.add_output(emb_out)
    _finalize(renames)
    renames = []
    table = read_binary_embeddings(emb_out)  # stage-equivalent rounding
    manifest.stop("embed")

    # graph
    manifest.start("graph")
    gcg = build_global_case_graph(
        store, table, index, k=training.k_edges, delta=training.delta
    )
    graph_path = out / "graph.gcg1"
    tmp = _tmp(graph_path)
    save_graph(gcg, tmp)
    manifest.add_output(graph_path)
    _finalize([(tmp, graph_path)])
    gcg = load_graph(graph_path)
    manifest.stop("graph")

    # train
    manifest.start("train")
    ckpt_dir = out / "checkpoints"
    manifest.add_output(ckpt_dir / "checkpoint.gatc")
    manifest.add_output(ckpt_dir / "training_log.jsonl")
    manifest.write()
    result = train(
        store, gcg, store.labels, training, checkpoint_dir=ckpt_dir, bm25_index=index
    )
    manifest.stop("train")

    # rank
    manifest.start("rank")
    h, _trace = model_forward(
        result.params, gcg.features, gcg.adjacency, train_mode=False
    )
    reps = representations_from_rows(gcg.node_ids, h)
    run = rank_all(store, index, reps, prefilter_size=prefilter_size, final_size=final_size)
    run_tsv, run_json = out / "run.tsv", out / "run.json"
    tmp_tsv, tmp_json = _tmp(run_tsv), _tmp(run_json)
    write_run_tsv(run, tmp_tsv)
    write_run_json(run, tmp_json)
    manifest.add_output(run_tsv)
    manifest.add_output(run_json)
    manifest.write()
    _finalize([(tmp_tsv, run_tsv), (tmp_json, run_json)])
    manifest.stop("rank")

    # eval
    manifest.start("eval")
    report = evaluate_runs(run.retrieved(), store.labels)
    report_path = out / "report.json"
    tmp = _tmp(report_path)
    write_report_json(report, tmp)
    manifest.add_output(report_path)
    manifest.stop("eval")
    manifest.write()
    _finalize([(tmp, report_path)])
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    section = cfg.get("synth", {})
    spec_kwargs = {}
    for f in dataclasses.fields(SyntheticSpec):
        v = getattr(args, f.name, None)
        if v is None:
            v = section.get(f.name)
        if v is not None:
            spec_kwargs[f.name] = v
    try:
        spec = SyntheticSpec(**spec_kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    manifest = StageManifest(
        out, "synth", args.config, {"synth": dataclasses.asdict(spec)}
    )
    manifest.start("synth")
    ds = generate(spec)
    paths = write_dataset(ds, out)
    pipeline_cfg = {
        "corpus": str(paths["corpus"]),
        "labels": str(paths["labels"]),
        "lexicon": str(paths["lexicon"]),
        "embeddings": str(paths["embeddings"]),
        "out_dir": str(out / "pipeline"),
        "training": {"seed": spec.seed},
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(
        json.dumps(pipeline_cfg, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for p in [*paths.values(), cfg_path]:
        manifest.add_output(p)
    manifest.stop("synth")
    manifest.write()
    print(
        json.dumps(
            {
                "cases": ds.store.n_cases,
                "queries": ds.n_queries,
                "charges": ds.store.n_charges,
                "config": str(cfg_path),
            },
            sort_keys=True,
        )
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_io_flags(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "corpus": "path to corpus JSONL file or directory of .txt files",
        "labels": "path to labels JSON (query id -> relevant candidate ids)",
        "lexicon": "path to charge lexicon (one name per line, or JSONL)",
        "embeddings": "path to embeddings (JSONL or EMB1 binary)",
        "checkpoint": "path to a trained checkpoint (GATC)",
        "run": "path to a run TSV file",
    }
    for name in names:
        p.add_argument(f"--{name}", default=None, help=flags[name])


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--n-easy-neg", dest="n_easy_neg", type=int, default=None)
    p.add_argument("--n-hard-neg", dest="n_hard_neg", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="degree-regularization coefficient")
    p.add_argument("--tau", type=float, default=None, help="InfoNCE temperature")
    p.add_argument("--k-edges", dest="k_edges", type=int, default=None,
                   help="BM25 neighbors per case for graph edges")
    p.add_argument("--delta", type=float, default=None,
                   help="charge-charge cosine threshold")
    p.add_argument("--hard-neg-pool-size", dest="hard_neg_pool_size", type=int,
                   default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)


def _add_bm25_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k1", type=float, default=None)
    p.add_argument("--b", type=float, default=None)


def _add_rank_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prefilter-size", dest="prefilter_size", type=int, default=None)
    p.add_argument("--final-size", dest="final_size", type=int, default=None)


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="cap on worker threads (remote embedding fetches)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="caselink", description=__doc__)
    parser.add_argument("--version", action="version", version=f"caselink {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="validate and normalize a corpus")
    _add_io_flags(p, "corpus", "labels")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", parents=[common], help="build the BM25 index cache")
    _add_io_flags(p, "corpus", "labels")
    _add_bm25_flags(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("embed", parents=[common],
                       help="load or fetch embeddings into a binary table")
    _add_io_flags(p, "corpus", "lexicon", "embeddings")
    p.add_argument("--endpoint", default=None, help="remote embedding HTTP endpoint")
    p.add_argument("--dim", type=int, default=None, help="expected embedding dim")
    p.add_argument("--truncation-tokens", dest="truncation_tokens", type=int,
                   default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("graph", parents=[common], help="assemble the global case graph")
    _add_io_flags(p, "corpus", "labels", "lexicon", "embeddings")
    p.add_argument("--dim", type=int, default=None)
    _add_bm25_flags(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", parents=[common], help="train the graph encoder")
    _add_io_flags(p, "corpus", "labels", "lexicon", "embeddings")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--graph", dest="graph_file", default=None,
                   help="pre-built graph file (skips graph assembly)")
    _add_bm25_flags(p)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", parents=[common], help="rank candidates per query")
    _add_io_flags(p, "corpus", "labels", "lexicon", "embeddings", "checkpoint")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--graph", dest="graph_file", default=None)
    _add_bm25_flags(p)
    _add_training_flags(p)
    _add_rank_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", parents=[common], help="score a run file against labels")
    _add_io_flags(p, "run", "labels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", parents=[common],
                       help="run ingest through eval end-to-end")
    _add_io_flags(p, "corpus", "labels", "lexicon", "embeddings")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--truncation-tokens", dest="truncation_tokens", type=int,
                   default=None)
    _add_bm25_flags(p)
    _add_training_flags(p)
    _add_rank_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a planted-cluster synthetic dataset")
    for f in dataclasses.fields(SyntheticSpec):
        flag = "--" + f.name.replace("_", "-")
        kind = float if f.type == "float" else int
        p.add_argument(flag, dest=f.name, type=kind, default=None)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (CaseLinkError, OSError, ValueError, KeyError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
