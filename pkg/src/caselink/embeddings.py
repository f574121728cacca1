"""Node embeddings: file-backed tables, a binary cache format, and a remote
HTTP provider standing in for an external text-embedding model.

Binary cache layout ("EMB1", little-endian):
    magic "EMB1" | u32 dim | u64 count | records of
    (u16 id byte-length, id utf-8 bytes, dim float32 components)

Remote protocol: POST {"id": str, "text": str} -> {"vector": [float, ...]}.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import CorpusStore
from .errors import DimensionError, IngestError, MissingEmbeddingError, ProviderError

_MAGIC = b"EMB1"


class ProviderMode(Enum):
    FILE = "file"
    REMOTE = "remote"


@dataclass(frozen=True)
class ProviderConfig:
    mode: ProviderMode = ProviderMode.FILE
    endpoint: str | None = None
    truncation_tokens: int = 4096
    normalize: bool = True
    max_retries: int = 3
    retry_base_delay: float = 0.1
    max_in_flight: int = 4

    def __post_init__(self):
        if self.mode is ProviderMode.REMOTE and not self.endpoint:
            raise ValueError("remote mode requires an endpoint URL")
        if self.truncation_tokens < 1:
            raise ValueError("truncation_tokens must be >= 1")


@dataclass
class EmbeddingTable:
    """Ordered map of node id -> float64 vector; all vectors share one dim."""

    dim: int
    vectors: dict[str, np.ndarray]

    def __getitem__(self, node_id: str) -> np.ndarray:
        return self.vectors[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        """Stack vectors for ``ids`` into an (len(ids), dim) float64 matrix."""
        missing = [i for i in ids if i not in self.vectors]
        if missing:
            raise MissingEmbeddingError(f"missing embeddings for ids: {missing[:10]}")
        return np.stack([self.vectors[i] for i in ids]).astype(np.float64)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||_2; raises ValueError on a zero vector."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


def _validate_vector(node_id: str, vec: np.ndarray, dim: int | None) -> int:
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"non-finite component in vector for id {node_id!r}")
    if dim is None:
        return len(vec)
    if len(vec) != dim:
        raise DimensionError(
            f"vector for id {node_id!r} has dim {len(vec)}, expected {dim}"
        )
    return dim


def load_embedding_file(path: str | Path, expected_dim: int | None = None) -> EmbeddingTable:
    """Load embeddings from JSONL ({"id", "vector"}) or the EMB1 binary format."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _MAGIC:
        table = read_binary_embeddings(path)
        if expected_dim is not None and table.dim != expected_dim:
            raise DimensionError(f"file dim {table.dim} != expected {expected_dim}")
        return table

    vectors: dict[str, np.ndarray] = {}
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            node_id = str(rec["id"])
            if node_id in vectors:
                raise IngestError(f"duplicate embedding id {node_id!r}")
            vec = np.asarray(rec["vector"], dtype=np.float64)
            dim = _validate_vector(node_id, vec, dim)
            vectors[node_id] = vec
    if not vectors:
        raise IngestError(f"embedding file {path} is empty")
    return EmbeddingTable(dim=int(dim), vectors=vectors)


def write_binary_embeddings(
    table: EmbeddingTable, path: str | Path, ids: Sequence[str] | None = None
) -> None:
    """Write vectors in EMB1 layout; ``ids`` fixes the record order (and may
    select a subset), defaulting to the table's insertion order."""
    ordered = list(ids) if ids is not None else list(table.vectors)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", table.dim))
        fh.write(struct.pack("<Q", len(ordered)))
        for node_id in ordered:
            if node_id not in table.vectors:
                raise MissingEmbeddingError(f"no embedding for {node_id!r}")
            id_bytes = node_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(table.vectors[node_id].astype("<f4").tobytes())


def read_binary_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise IngestError(f"{path} is not an EMB1 embedding cache")
        (dim,) = struct.unpack("<I", fh.read(4))
        (count,) = struct.unpack("<Q", fh.read(8))
        vectors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            node_id = fh.read(id_len).decode("utf-8")
            vec = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
            if node_id in vectors:
                raise IngestError(f"duplicate embedding id {node_id!r}")
            _validate_vector(node_id, vec, dim)
            vectors[node_id] = vec
    return EmbeddingTable(dim=int(dim), vectors=vectors)


def normalize_table(table: EmbeddingTable) -> EmbeddingTable:
    return EmbeddingTable(
        dim=table.dim,
        vectors={k: l2_normalize(v) for k, v in table.vectors.items()},
    )


def check_coverage(table: EmbeddingTable, store: CorpusStore) -> None:
    """Every case and charge id must resolve to a vector before graph assembly."""
    missing = [c.id for c in store.cases if c.id not in table]
    missing += [c.id for c in store.charges if c.id not in table]
    if missing:
        shown = ", ".join(repr(m) for m in missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        raise MissingEmbeddingError(f"no embedding for: {shown}{more}")


def truncate_text(text: str, max_tokens: int) -> str:
    """Keep the first ``max_tokens`` whitespace-delimited tokens."""
    parts = text.split()
    if len(parts) <= max_tokens:
        return text
    return " ".join(parts[:max_tokens])


def _http_post_json(endpoint: str, payload: dict, timeout: float = 30.0) -> dict:
    import requests

    resp = requests.post(endpoint, json=payload, timeout=timeout)
    resp.raise_for_status()
    return resp.json()


class RemoteEmbeddingProvider:
    """Fetches embeddings over HTTP with retries, caching, and a dim check.

    Responses are cached in memory by (id, sha256 of the truncated text), so a
    repeated fetch makes no network call. The first response fixes the
    provider dimension; any later mismatch raises DimensionError.
    """

    def __init__(
        self,
        config: ProviderConfig,
        transport: Callable[[str, dict], dict] | None = None,
    ):
        if config.mode is not ProviderMode.REMOTE:
            raise ValueError("RemoteEmbeddingProvider requires remote mode")
        self.config = config
        self._transport = transport or _http_post_json
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self._dim: int | None = None
        self._lock = threading.Lock()

    @property
    def dim(self) -> int | None:
        return self._dim

    def fetch(self, node_id: str, text: str) -> np.ndarray:
        if not text:
            raise ValueError("text must be non-empty")
        sent = truncate_text(text, self.config.truncation_tokens)
        key = (node_id, hashlib.sha256(sent.encode("utf-8")).hexdigest())
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached.copy()

        payload = {"id": node_id, "text": sent}
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                body = self._transport(self.config.endpoint, payload)
                break
            except Exception as exc:  # transport decides what is transient
                last_exc = exc
                if attempt == self.config.max_retries:
                    raise ProviderError(
                        f"embedding fetch for {node_id!r} failed after "
                        f"{attempt + 1} attempts: {exc}"
                    ) from exc
                time.sleep(self.config.retry_base_delay * (2**attempt))
        else:  # pragma: no cover
            raise ProviderError(str(last_exc))

        vec = np.asarray(body["vector"], dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite component in response for {node_id!r}")
        with self._lock:
            if self._dim is None:
                self._dim = len(vec)
            elif len(vec) != self._dim:
                raise DimensionError(
                    f"provider returned dim {len(vec)}, previous responses had {self._dim}"
                )
            if self.config.normalize:
                vec = l2_normalize(vec)
            self._cache[key] = vec
        return vec.copy()

    def fetch_many(self, items: Iterable[tuple[str, str]]) -> EmbeddingTable:
        """Fetch embeddings for (id, text) pairs, at most max_in_flight concurrently."""
        items = list(items)
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            results = list(pool.map(lambda it: self.fetch(it[0], it[1]), items))
        vectors = {node_id: vec for (node_id, _), vec in zip(items, results)}
        if self._dim is None:
            raise ProviderError("no embeddings fetched")
        return EmbeddingTable(dim=self._dim, vectors=vectors)


def load_table(
    config: ProviderConfig,
    path: str | Path | None = None,
    expected_dim: int | None = None,
) -> EmbeddingTable:
    """File-mode entry point: load and (per config) normalize an embedding table."""
    if config.mode is not ProviderMode.FILE:
        raise ValueError("load_table is for file mode; use RemoteEmbeddingProvider")
    if path is None:
        raise ValueError("file mode requires a path")
    table = load_embedding_file(path, expected_dim=expected_dim)
    return normalize_table(table) if config.normalize else table
