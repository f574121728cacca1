"""Training: contrastive InfoNCE objective with easy/hard/in-batch negatives,
degree regularization on candidate rows of the cosine pseudo-adjacency, and a
hand-rolled Adam optimizer.

The loss per batch entry is

    -log[ exp(cos(h_q, h_pos)/tau) /
          (exp(cos(h_q, h_pos)/tau) + sum_i exp(cos(h_q, h_neg_i)/tau)) ]

where the negatives are the entry's sampled easy and hard negatives plus the
positives of the other entries in the batch (excluding any that are labeled
positives of this query). The degree regularizer sums cos(h_i, h_j) over all
candidate rows i and all case columns j, diagonal included.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .bm25 import Bm25Index, build_index, score_all
from .corpus import CorpusStore, Role
from .errors import DimensionError, LabelError, NumericalError
from .gat import (
    ForwardTrace,
    GatParams,
    LayerGrads,
    backward_gradients,
    init_params,
    model_forward,
    save_checkpoint,
)
from .graph import GlobalCaseGraph

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    layers: int = 2
    hidden_dim: int | None = None  # defaults to the embedding dim
    dropout: float = 0.2
    lr: float = 1e-3
    weight_decay: float = 1e-4
    n_easy_neg: int = 1
    n_hard_neg: int = 5
    lam: float = 1e-3  # degree-regularization coefficient
    tau: float = 0.1
    k_edges: int = 5
    delta: float = 0.9
    hard_neg_pool_size: int = 10
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.batch_size < 1 or self.layers < 1 or self.epochs < 0:
            raise ValueError("batch_size/layers must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lr <= 0 or self.weight_decay < 0 or self.lam < 0:
            raise ValueError("lr must be > 0; weight_decay and lam must be >= 0")
        if min(self.n_easy_neg, self.n_hard_neg, self.k_edges, self.hard_neg_pool_size) < 0:
            raise ValueError("sampling sizes must be >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")


# Hyperparameter search ranges shipped as a documented preset grid.
SWEEP_GRID: dict[str, tuple] = {
    "batch_size": (256, 512, 1024, 1678),
    "layers": (1, 2, 3),
    "dropout": (0.1, 0.2, 0.5),
    "lr": (1e-2, 1e-3, 1e-4),
    "weight_decay": (1e-3, 1e-4, 1e-5),
    "n_hard_neg": (1, 5, 10),
    "lam": (0.0, 5e-4, 1e-3, 5e-3),
    "k_edges": (3, 5, 10),
    "delta": (0.85, 0.9, 0.95),
}


@dataclass(frozen=True)
class BatchEntry:
    query_id: str
    positive_id: str
    easy_negative_ids: tuple[str, ...]
    hard_negative_ids: tuple[str, ...]
    known_positive_ids: frozenset[str]

    @property
    def negative_ids(self) -> tuple[str, ...]:
        return self.easy_negative_ids + self.hard_negative_ids


@dataclass(frozen=True)
class TrainingBatch:
    entries: tuple[BatchEntry, ...]
    epoch: int = 0


@dataclass
class AdamState:
    m: list[LayerGrads]
    v: list[LayerGrads]
    t: int = 0

    @staticmethod
    def zeros_like(params: GatParams) -> "AdamState":
        def z(layer):
            return LayerGrads(
                W=np.zeros_like(layer.W),
                a_src=np.zeros_like(layer.a_src),
                a_dst=np.zeros_like(layer.a_dst),
            )

        return AdamState(
            m=[z(layer) for layer in params.layers],
            v=[z(layer) for layer in params.layers],
            t=0,
        )


def hard_negative_pools(
    store: CorpusStore,
    index: Bm25Index,
    labels: dict[str, tuple[str, ...]],
    pool_size: int,
) -> dict[str, tuple[str, ...]]:
    """Per query: candidates in the BM25 top ``pool_size``, positives excluded."""
    cand_rows = np.array(
        [i for i, c in enumerate(store.cases) if c.role is Role.CANDIDATE], dtype=np.int64
    )
    pools: dict[str, tuple[str, ...]] = {}
    idx_of = store.case_index()
    for qid in labels:
        q = store.cases[idx_of[qid]]
        scores = score_all(index, q.tokens)
        ranked = sorted(cand_rows, key=lambda i: (-scores[i], store.cases[i].id))
        top = [store.cases[i].id for i in ranked[:pool_size]]
        positives = set(labels[qid])
        pools[qid] = tuple(c for c in top if c not in positives)
    return pools


def sample_batch(
    labels: dict[str, tuple[str, ...]],
    hard_pools: dict[str, tuple[str, ...]],
    candidate_ids: list[str] | tuple[str, ...],
    config: TrainingConfig,
    rng: np.random.Generator,
    query_subset: list[str] | tuple[str, ...],
    epoch: int = 0,
) -> TrainingBatch:
    """Sample one positive plus easy and hard negatives for each query.

    Hard negatives come from the query's BM25 pool; if exclusion empties the
    pool, sampling falls back to easy negatives with a logged warning.
    """
    entries: list[BatchEntry] = []
    candidate_ids = list(candidate_ids)
    for qid in query_subset:
        positives = labels.get(qid, ())
        if not positives:
            raise LabelError(f"query {qid!r} has no labeled positive")
        positive = positives[int(rng.integers(len(positives)))]
        pos_set = set(positives)

        easy_pool = [c for c in candidate_ids if c not in pos_set]
        if len(easy_pool) < config.n_easy_neg:
            raise LabelError(f"not enough easy negatives for query {qid!r}")
        easy_idx = rng.choice(len(easy_pool), size=config.n_easy_neg, replace=False)
        easy = tuple(easy_pool[int(i)] for i in easy_idx)

        hard_pool = list(hard_pools.get(qid, ()))
        if config.n_hard_neg == 0:
            hard = ()
        elif not hard_pool:
            logger.warning(
                "query %s: hard-negative pool empty after excluding positives; "
                "falling back to easy sampling",
                qid,
            )
            extra_idx = rng.choice(
                len(easy_pool), size=min(config.n_hard_neg, len(easy_pool)), replace=False
            )
            hard = tuple(easy_pool[int(i)] for i in extra_idx)
        else:
            take = min(config.n_hard_neg, len(hard_pool))
            hard_idx = rng.choice(len(hard_pool), size=take, replace=False)
            hard = tuple(hard_pool[int(i)] for i in hard_idx)

        entries.append(
            BatchEntry(
                query_id=qid,
                positive_id=positive,
                easy_negative_ids=easy,
                hard_negative_ids=hard,
                known_positive_ids=frozenset(positives),
            )
        )
    return TrainingBatch(entries=tuple(entries), epoch=epoch)


def _cosine_and_partials(a: np.ndarray, b: np.ndarray):
    """cos(a, b) and its partial derivatives with respect to a and b."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise NumericalError("zero-norm representation row in cosine")
    c = float(a @ b) / (na * nb)
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return c, da, db


def infonce_loss(
    h: np.ndarray,
    batch: TrainingBatch,
    tau: float,
    row_of: dict[str, int],
) -> tuple[float, np.ndarray]:
    """Batch-mean InfoNCE loss and its analytic gradient with respect to h."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if not batch.entries:
        raise ValueError("empty batch")
    dh = np.zeros_like(h)
    total = 0.0
    batch_positive_rows = [row_of[e.positive_id] for e in batch.entries]

    for ei, entry in enumerate(batch.entries):
        q = row_of[entry.query_id]
        rows = [row_of[entry.positive_id]]
        rows += [row_of[nid] for nid in entry.negative_ids]
        # in-batch negatives: other entries' positives, minus labeled positives
        for ej, other in enumerate(batch.entries):
            if ej == ei:
                continue
            if other.positive_id in entry.known_positive_ids:
                continue
            rows.append(batch_positive_rows[ej])

        cos = np.empty(len(rows))
        d_q = np.zeros(h.shape[1])
        partials = []
        for k, r in enumerate(rows):
            c, da, db = _cosine_and_partials(h[q], h[r])
            cos[k] = c
            partials.append(db)
        logits = cos / tau
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        denom = exp.sum()
        total += float(np.log(denom) - shifted[0])  # -log softmax[0]
        probs = exp / denom

        dlogit = probs.copy()
        dlogit[0] -= 1.0
        dcos = dlogit / tau
        for k, r in enumerate(rows):
            c, da, db = _cosine_and_partials(h[q], h[r])
            d_q += dcos[k] * da
            dh[r] += dcos[k] * db
        dh[q] += d_q

    n = len(batch.entries)
    dh /= n
    return total / n, dh


def degreg_loss(
    h: np.ndarray,
    n_cases: int,
    candidate_rows: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Sum of cos(h_i, h_j) over candidate rows i and all case columns j.

    The diagonal contributes a constant 1 per candidate row and has zero
    gradient. Returns the loss and its gradient with respect to h.
    """
    if len(candidate_rows) == 0:
        raise ValueError("degree regularization requires at least one candidate")
    cases = h[:n_cases]
    norms = np.linalg.norm(cases, axis=1)
    if np.any(norms == 0.0):
        raise NumericalError("zero-norm case representation row")
    unit = cases / norms[:, None]

    cand_mask = np.zeros(n_cases, dtype=bool)
    cand_mask[candidate_rows] = True
    s_all = unit.sum(axis=0)
    s_cand = unit[cand_mask].sum(axis=0)
    loss = float(s_cand @ s_all)

    d_unit = np.tile(s_cand, (n_cases, 1))
    d_unit[cand_mask] += s_all
    # through row normalization: (g - (u.g) u) / ||h||
    proj = np.einsum("ij,ij->i", unit, d_unit)
    d_cases = (d_unit - proj[:, None] * unit) / norms[:, None]

    dh = np.zeros_like(h)
    dh[:n_cases] = d_cases
    return loss, dh


def _flatten_ids(batch: TrainingBatch) -> set[str]:
    ids: set[str] = set()
    for e in batch.entries:
        ids.add(e.query_id)
        ids.add(e.positive_id)
        ids.update(e.negative_ids)
    return ids


def total_loss_and_grads(
    params: GatParams,
    graph: GlobalCaseGraph,
    batch: TrainingBatch,
    config: TrainingConfig,
    rng: np.random.Generator | None = None,
    train_mode: bool = True,
) -> tuple[float, float, float, list[LayerGrads], ForwardTrace]:
    """Combined objective: InfoNCE + lam * DegReg, backpropagated once.

    Returns (total, infonce, degreg, parameter gradients, forward trace).
    """
    h, trace = model_forward(
        params, graph.features, graph.adjacency, train_mode=train_mode, rng=rng
    )
    row_of = {nid: i for i, nid in enumerate(graph.node_ids)}
    nce, dh = infonce_loss(h, batch, config.tau, row_of)
    if config.lam > 0.0:
        reg, dh_reg = degreg_loss(h, graph.n_cases, graph.candidate_rows())
        dh = dh + config.lam * dh_reg
    else:
        reg = 0.0
    grads, _ = backward_gradients(params, trace, dh)
    return nce + config.lam * reg, nce, reg, grads, trace


def adam_step(
    params: GatParams,
    grads: list[LayerGrads],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[GatParams, AdamState]:
    """One classic Adam update (L2 weight decay folded into the gradient).

    Pure function: inputs are not mutated.
    """
    if len(grads) != len(params.layers):
        raise DimensionError("gradient list does not match layer count")
    new_params = params.copy()
    new_state = AdamState(
        m=[LayerGrads(g.W.copy(), g.a_src.copy(), g.a_dst.copy()) for g in state.m],
        v=[LayerGrads(g.W.copy(), g.a_src.copy(), g.a_dst.copy()) for g in state.v],
        t=state.t + 1,
    )
    t = new_state.t
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for layer, g, m, v in zip(new_params.layers, grads, new_state.m, new_state.v):
        for name in ("W", "a_src", "a_dst"):
            p = getattr(layer, name)
            grad = getattr(g, name)
            if grad.shape != p.shape:
                raise DimensionError(f"gradient shape mismatch on {name}")
            if weight_decay:
                grad = grad + weight_decay * p
            mt = getattr(m, name)
            vt = getattr(v, name)
            mt[:] = ADAM_BETA1 * mt + (1.0 - ADAM_BETA1) * grad
            vt[:] = ADAM_BETA2 * vt + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = mt / bc1
            v_hat = vt / bc2
            p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return new_params, new_state


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    infonce: float
    degreg: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "mean_loss": self.mean_loss,
                "infonce": self.infonce,
                "degreg": self.degreg,
                "wall_ms": self.wall_ms,
            },
            sort_keys=True,
        )


@dataclass
class TrainResult:
    params: GatParams
    log: list[EpochLog]
    best_epoch: int
    final_params: GatParams


def _atomic_checkpoint(params: GatParams, path: Path, sidecar: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    save_checkpoint(params, tmp, sidecar=sidecar)
    os.replace(tmp, path)
    tmp_side = Path(str(tmp) + ".json")
    if tmp_side.exists():
        os.replace(tmp_side, Path(str(path) + ".json"))


def train(
    store: CorpusStore,
    graph: GlobalCaseGraph,
    labels: dict[str, tuple[str, ...]],
    config: TrainingConfig,
    checkpoint_dir: str | Path | None = None,
    bm25_index: Bm25Index | None = None,
) -> TrainResult:
    """Optimize encoder parameters on one training graph.

    Each epoch shuffles the labeled queries, partitions them into batches,
    and runs a full-graph forward per batch with the loss restricted to the
    batch entries. Checkpoints are written per epoch (atomically) when
    ``checkpoint_dir`` is given; the returned params are the best-epoch ones.
    """
    queries = sorted(labels)
    if not queries:
        raise LabelError("no labeled queries to train on")
    for qid in queries:
        if not labels[qid]:
            raise LabelError(f"query {qid!r} has no labeled positive")

    if bm25_index is None:
        bm25_index = build_index(store)
    hard_pools = hard_negative_pools(store, bm25_index, labels, config.hard_neg_pool_size)
    candidate_ids = [c.id for c in store.candidates()]

    rng = np.random.default_rng(config.seed)
    dims = [graph.dim] + [config.hidden_dim or graph.dim] * config.layers
    params = init_params(config.seed, dims, dropout=config.dropout)

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {"config": asdict(config), "dims": dims}

    logs: list[EpochLog] = []
    best_params = params.copy()
    best_loss = np.inf
    best_epoch = -1
    adam = AdamState.zeros_like(params)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = list(queries)
        rng.shuffle(order)
        losses: list[float] = []
        nces: list[float] = []
        regs: list[float] = []
        for start in range(0, len(order), config.batch_size):
            subset = order[start : start + config.batch_size]
            batch = sample_batch(
                labels, hard_pools, candidate_ids, config, rng, subset, epoch=epoch
            )
            total, nce, reg, grads, _ = total_loss_and_grads(
                params, graph, batch, config, rng=rng, train_mode=True
            )
            if not np.isfinite(total):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}; last good checkpoint retained"
                )
            params, adam = adam_step(params, grads, adam, config.lr, config.weight_decay)
            losses.append(total)
            nces.append(nce)
            regs.append(reg)

        mean_loss = float(np.mean(losses))
        logs.append(
            EpochLog(
                epoch=epoch,
                mean_loss=mean_loss,
                infonce=float(np.mean(nces)),
                degreg=float(np.mean(regs)),
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if mean_loss < best_loss:
            best_loss = mean_loss
            best_params = params.copy()
            best_epoch = epoch
        if ckpt_dir is not None:
            _atomic_checkpoint(
                params, ckpt_dir / f"checkpoint_ep{epoch:04d}.gatc", sidecar
            )

    if best_epoch < 0:  # epochs == 0
        best_params = params.copy()
        best_epoch = 0
    if ckpt_dir is not None:
        _atomic_checkpoint(best_params, ckpt_dir / "checkpoint.gatc", sidecar)
        log_path = ckpt_dir / "training_log.jsonl"
        log_path.write_text(
            "".join(entry.to_json() + "\n" for entry in logs), encoding="utf-8"
        )
    return TrainResult(params=best_params, log=logs, best_epoch=best_epoch, final_params=params)
