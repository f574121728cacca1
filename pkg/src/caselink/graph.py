"""Global case graph construction: case-case edges from BM25 neighborhoods,
charge-charge edges from embedding similarity, case-charge edges from charge
name occurrence, assembled into one undirected, unweighted adjacency.

Node order is canonical: cases 0..n-1 (corpus order), charges n..n+m-1.
Self-loops are not stored; the encoder adds them transiently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bm25 import Bm25Index, topk_similar
from .corpus import CorpusStore, Role, normalize_charge_name
from .embeddings import EmbeddingTable, check_coverage
from .errors import DimensionError, GraphConstructionError, MissingEmbeddingError

_MAGIC = b"GCG1"


@dataclass
class GlobalCaseGraph:
    n_cases: int
    n_charges: int
    adjacency: sp.csr_matrix  # (n+m) x (n+m), symmetric, binary, zero diagonal
    features: np.ndarray  # (n+m) x d_emb, float64
    node_ids: tuple[str, ...]
    roles: tuple[Role, ...]  # per case node

    @property
    def n_nodes(self) -> int:
        return self.n_cases + self.n_charges

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def row_of(self, node_id: str) -> int:
        return self._index[node_id]

    def __post_init__(self):
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}

    def case_rows(self) -> np.ndarray:
        return np.arange(self.n_cases)

    def candidate_rows(self) -> np.ndarray:
        return np.array(
            [i for i, r in enumerate(self.roles) if r is Role.CANDIDATE], dtype=np.int64
        )

    def query_rows(self) -> np.ndarray:
        return np.array(
            [i for i, r in enumerate(self.roles) if r is Role.QUERY], dtype=np.int64
        )


def build_case_case_edges(index: Bm25Index, store: CorpusStore, k: int) -> sp.csr_matrix:
    """OR-symmetrized top-k BM25 neighborhood adjacency over case nodes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    n = store.n_cases
    rows: list[int] = []
    cols: list[int] = []
    idx = store.case_index()
    for case in store.cases:
        i = idx[case.id]
        for pair in topk_similar(index, store, case.id, k):
            j = idx[pair.target_id]
            rows.extend((i, j))
            cols.extend((j, i))
    data = np.ones(len(rows), dtype=np.int8)
    adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    adj.data[:] = 1  # OR-union of duplicate entries
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.sort_indices()
    return adj


def build_charge_charge_edges(
    charge_ids: list[str] | tuple[str, ...],
    table: EmbeddingTable,
    delta: float,
) -> sp.csr_matrix:
    """Edges between charges whose embedding cosine similarity exceeds delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must be in (0, 1)")
    missing = [c for c in charge_ids if c not in table]
    if missing:
        raise MissingEmbeddingError(f"missing charge embeddings: {missing}")
    m = len(charge_ids)
    if m == 0:
        return sp.csr_matrix((0, 0), dtype=np.int8)
    mat = table.matrix(charge_ids)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise MissingEmbeddingError("zero-norm charge embedding")
    unit = mat / norms
    cos = unit @ unit.T
    adj = (cos > delta).astype(np.int8)
    np.fill_diagonal(adj, 0)
    out = sp.csr_matrix(adj)
    out.sort_indices()
    return out


def build_case_charge_edges(store: CorpusStore) -> sp.csr_matrix:
    """m x n matrix: 1 where the normalized charge name occurs in the case text."""
    m, n = store.n_charges, store.n_cases
    norm_texts = [" ".join(c.text.lower().split()) for c in store.cases]
    rows: list[int] = []
    cols: list[int] = []
    for i, charge in enumerate(store.charges):
        name = normalize_charge_name(charge.name)
        for j, text in enumerate(norm_texts):
            if name in text:
                rows.append(i)
                cols.append(j)
    data = np.ones(len(rows), dtype=np.int8)
    out = sp.coo_matrix((data, (rows, cols)), shape=(m, n)).tocsr()
    out.sort_indices()
    return out


def _check_block(name: str, block: sp.spmatrix, shape: tuple[int, int], symmetric: bool) -> sp.csr_matrix:
    if block.shape != shape:
        raise DimensionError(f"{name} has shape {block.shape}, expected {shape}")
    block = sp.csr_matrix(block)
    if block.nnz and not np.all(block.data == 1):
        raise GraphConstructionError(f"{name} must be binary")
    if symmetric and (block - block.T).nnz != 0:
        raise GraphConstructionError(f"{name} must be symmetric")
    if symmetric and block.diagonal().any():
        raise GraphConstructionError(f"{name} must have a zero diagonal")
    return block


def assemble_gcg(
    a_case: sp.spmatrix,
    a_bridge: sp.spmatrix,
    a_charge: sp.spmatrix,
    case_features: np.ndarray,
    charge_features: np.ndarray,
    case_ids: list[str] | tuple[str, ...],
    charge_ids: list[str] | tuple[str, ...],
    roles: list[Role] | tuple[Role, ...],
) -> GlobalCaseGraph:
    """Assemble [[A_case, A_bridge^T], [A_bridge, A_charge]] plus node features."""
    n = len(case_ids)
    m = len(charge_ids)
    a_case = _check_block("case-case block", a_case, (n, n), symmetric=True)
    a_charge = _check_block("charge-charge block", a_charge, (m, m), symmetric=True)
    a_bridge = _check_block("case-charge block", a_bridge, (m, n), symmetric=False)

    case_features = np.asarray(case_features, dtype=np.float64)
    charge_features = np.asarray(charge_features, dtype=np.float64)
    if case_features.shape[0] != n or charge_features.shape[0] != m:
        raise DimensionError("feature row counts do not match node counts")
    if m > 0 and n > 0 and case_features.shape[1] != charge_features.shape[1]:
        raise DimensionError("case and charge feature dims differ")
    if len(roles) != n:
        raise DimensionError("one role per case node required")

    if m == 0:
        adjacency = sp.csr_matrix(a_case, dtype=np.int8)
    else:
        adjacency = sp.bmat(
            [[a_case, a_bridge.T], [a_bridge, a_charge]], format="csr", dtype=np.int8
        )
    adjacency.sort_indices()
    features = (
        np.vstack([case_features, charge_features]) if m > 0 else case_features.copy()
    )
    return GlobalCaseGraph(
        n_cases=n,
        n_charges=m,
        adjacency=adjacency,
        features=features,
        node_ids=tuple(case_ids) + tuple(charge_ids),
        roles=tuple(roles),
    )


def build_global_case_graph(
    store: CorpusStore,
    table: EmbeddingTable,
    index: Bm25Index,
    k: int,
    delta: float,
) -> GlobalCaseGraph:
    """Construct all three edge blocks from one corpus and assemble the graph."""
    check_coverage(table, store)
    case_ids = [c.id for c in store.cases]
    charge_ids = [c.id for c in store.charges]
    a_case = build_case_case_edges(index, store, k) if store.n_cases > 1 else sp.csr_matrix(
        (store.n_cases, store.n_cases), dtype=np.int8
    )
    a_charge = build_charge_charge_edges(charge_ids, table, delta)
    a_bridge = build_case_charge_edges(store)
    return assemble_gcg(
        a_case,
        a_bridge,
        a_charge,
        table.matrix(case_ids),
        table.matrix(charge_ids) if charge_ids else np.zeros((0, table.dim)),
        case_ids,
        charge_ids,
        tuple(c.role for c in store.cases),
    )


# ---------------------------------------------------------------------------
# Serialization: JSON header + upper-triangle edge list + float32 features
# ---------------------------------------------------------------------------

def save_graph(graph: GlobalCaseGraph, path: str | Path) -> None:
    header = {
        "n": graph.n_cases,
        "m": graph.n_charges,
        "dim": graph.dim,
        "ids": list(graph.node_ids),
        "roles": [r.value for r in graph.roles],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    upper = sp.triu(graph.adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    rows = upper.row[order].astype("<u4")
    cols = upper.col[order].astype("<u4")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(rows)))
        fh.write(np.column_stack([rows, cols]).tobytes())
        fh.write(graph.features.astype("<f4").tobytes())


def load_graph(path: str | Path) -> GlobalCaseGraph:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise GraphConstructionError(f"{path} is not a serialized case graph")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        (n_edges,) = struct.unpack("<Q", fh.read(8))
        edges = np.frombuffer(fh.read(8 * n_edges), dtype="<u4").reshape(-1, 2)
        n_nodes = header["n"] + header["m"]
        features = np.frombuffer(
            fh.read(4 * n_nodes * header["dim"]), dtype="<f4"
        ).astype(np.float64).reshape(n_nodes, header["dim"])
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sp.coo_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n_nodes, n_nodes)
    ).tocsr()
    adjacency.sort_indices()
    return GlobalCaseGraph(
        n_cases=header["n"],
        n_charges=header["m"],
        adjacency=adjacency,
        features=features,
        node_ids=tuple(header["ids"]),
        roles=tuple(Role(r) for r in header["roles"]),
    )
