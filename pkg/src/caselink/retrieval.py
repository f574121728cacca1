"""Retrieval: temporal filtering, two-stage ranking (lexical prefilter, then
dense re-ranking), a lexical-only baseline, and micro-averaged evaluation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bm25 import Bm25Index, score_all
from .corpus import CaseDocument, CorpusStore
from .errors import DimensionError, MissingEmbeddingError, NumericalError

logger = logging.getLogger(__name__)

PREFILTER_SIZE = 10
FINAL_SIZE = 5


def cosine_score(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise NumericalError("zero-norm vector in cosine similarity")
    return float(a @ b) / (na * nb)


def year_filter(query: CaseDocument, candidates: list[CaseDocument]) -> list[CaseDocument]:
    """Keep candidates strictly older than the query.

    Candidates with no extractable year are kept; a query with no year
    disables filtering entirely.
    """
    if query.year is None:
        return list(candidates)
    return [c for c in candidates if c.year is None or c.year < query.year]


@dataclass(frozen=True)
class RankResult:
    query_id: str
    eligible_ids: tuple[str, ...]  # after the year filter, corpus order
    prefilter_ids: tuple[str, ...]  # lexical top-10, rank order
    final_ids: tuple[str, ...]  # dense top-5, rank order
    prefilter_scores: tuple[float, ...]
    final_scores: tuple[float, ...]


@dataclass(frozen=True)
class RetrievalRun:
    results: tuple[RankResult, ...]

    def retrieved(self) -> dict[str, tuple[str, ...]]:
        return {r.query_id: r.final_ids for r in self.results}


def _rank_ids(scores: dict[str, float], limit: int) -> list[tuple[str, float]]:
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ordered[:limit]


def two_stage_rank(
    store: CorpusStore,
    index: Bm25Index,
    representations: dict[str, np.ndarray],
    query_id: str,
    prefilter_size: int = PREFILTER_SIZE,
    final_size: int = FINAL_SIZE,
) -> RankResult:
    """Rank candidates for one query: year filter, lexical top-``prefilter_size``,
    then cosine top-``final_size`` on the learned representations.

    Ties break toward the lexically smaller id at both stages.
    """
    idx_of = store.case_index()
    if query_id not in idx_of:
        raise IndexError(f"unknown query id {query_id!r}")
    query = store.cases[idx_of[query_id]]
    eligible = year_filter(query, list(store.candidates()))
    eligible_ids = tuple(c.id for c in eligible)

    all_scores = score_all(index, query.tokens)
    lexical = {c.id: float(all_scores[idx_of[c.id]]) for c in eligible}
    prefilter = _rank_ids(lexical, prefilter_size)

    if query.id not in representations:
        raise MissingEmbeddingError(f"no representation for query {query.id!r}")
    qv = representations[query.id]
    dense: dict[str, float] = {}
    for cid, _ in prefilter:
        if cid not in representations:
            raise MissingEmbeddingError(f"no representation for candidate {cid!r}")
        dense[cid] = cosine_score(qv, representations[cid])
    final = _rank_ids(dense, final_size)

    return RankResult(
        query_id=query_id,
        eligible_ids=eligible_ids,
        prefilter_ids=tuple(cid for cid, _ in prefilter),
        final_ids=tuple(cid for cid, _ in final),
        prefilter_scores=tuple(s for _, s in prefilter),
        final_scores=tuple(s for _, s in final),
    )


def bm25_baseline_rank(
    store: CorpusStore,
    index: Bm25Index,
    query_id: str,
    final_size: int = FINAL_SIZE,
) -> RankResult:
    """Lexical-only baseline: year filter then BM25 top-``final_size``."""
    idx_of = store.case_index()
    if query_id not in idx_of:
        raise IndexError(f"unknown query id {query_id!r}")
    query = store.cases[idx_of[query_id]]
    eligible = year_filter(query, list(store.candidates()))
    eligible_ids = tuple(c.id for c in eligible)

    all_scores = score_all(index, query.tokens)
    lexical = {c.id: float(all_scores[idx_of[c.id]]) for c in eligible}
    ranked = _rank_ids(lexical, final_size)
    return RankResult(
        query_id=query_id,
        eligible_ids=eligible_ids,
        prefilter_ids=tuple(cid for cid, _ in ranked),
        final_ids=tuple(cid for cid, _ in ranked),
        prefilter_scores=tuple(s for _, s in ranked),
        final_scores=tuple(s for _, s in ranked),
    )


def rank_all(
    store: CorpusStore,
    index: Bm25Index,
    representations: dict[str, np.ndarray],
    query_ids: list[str] | tuple[str, ...] | None = None,
    prefilter_size: int = PREFILTER_SIZE,
    final_size: int = FINAL_SIZE,
) -> RetrievalRun:
    if query_ids is None:
        query_ids = [q.id for q in store.queries()]
    results = tuple(
        two_stage_rank(store, index, representations, qid, prefilter_size, final_size)
        for qid in query_ids
    )
    return RetrievalRun(results=results)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    n_queries: int
    n_retrieved: int
    n_relevant: int
    n_hits: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "retrieved": self.n_retrieved,
            "relevant": self.n_relevant,
            "correct": self.n_hits,
        }


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate_runs(
    retrieved: dict[str, tuple[str, ...]],
    labels: dict[str, tuple[str, ...]],
) -> EvalReport:
    """Micro-averaged precision/recall/F1 over the queries present in the run.

    Counts (hits, retrieved, relevant) are summed across queries before any
    division. A run with zero retrieved items scores zero precision and logs
    a warning rather than raising.
    """
    hits = 0
    n_retrieved = 0
    n_relevant = 0
    for qid, ret in retrieved.items():
        gold = set(labels.get(qid, ()))
        n_retrieved += len(ret)
        n_relevant += len(gold)
        hits += sum(1 for cid in ret if cid in gold)
    if n_retrieved == 0:
        logger.warning("evaluation over %d queries retrieved nothing", len(retrieved))
        precision = 0.0
    else:
        precision = hits / n_retrieved
    recall = hits / n_relevant if n_relevant else 0.0
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f_measure(precision, recall),
        n_queries=len(retrieved),
        n_retrieved=n_retrieved,
        n_relevant=n_relevant,
        n_hits=hits,
    )


def representations_from_rows(
    node_ids: list[str] | tuple[str, ...], h: np.ndarray
) -> dict[str, np.ndarray]:
    if len(node_ids) != h.shape[0]:
        raise DimensionError("node id list does not match representation rows")
    return {nid: h[i] for i, nid in enumerate(node_ids)}


def write_run_tsv(run: RetrievalRun, path: str | Path) -> None:
    """TSV run file: one line per retrieved item,
    ``query_id<TAB>candidate_id<TAB>rank<TAB>score`` with six-decimal scores."""
    lines = []
    for r in run.results:
        for rank, (cid, score) in enumerate(zip(r.final_ids, r.final_scores), start=1):
            lines.append(f"{r.query_id}\t{cid}\t{rank}\t{score:.6f}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_run_json(run: RetrievalRun, path: str | Path) -> None:
    """JSON run file: query id mapped to its ordered candidate id array."""
    payload = {r.query_id: list(r.final_ids) for r in run.results}
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_report_json(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def read_run_tsv(path: str | Path) -> dict[str, tuple[str, ...]]:
    """Parse a TSV run file back into query -> retrieved ids (rank order)."""
    per_query: dict[str, list[tuple[int, str]]] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"line {line_no}: expected 4 tab-separated fields")
        qid, cid, rank, _score = parts
        per_query.setdefault(qid, []).append((int(rank), cid))
    return {
        qid: tuple(cid for _, cid in sorted(items)) for qid, items in per_query.items()
    }
