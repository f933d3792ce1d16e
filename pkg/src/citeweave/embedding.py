"""Dense text-embedding storage, cosine similarity, and the embedding
service client.

Vector file format (binary, little-endian, bit-exact):
  magic b"EMB1" | u32 n | u32 d | n*d float32 row-major
The companion ids file is UTF-8 text with exactly n lines; line i names the
pub_id of row i.

Vectors are stored as float32; dot products and norms accumulate in float64.
"""

from __future__ import annotations

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .corpus import CorpusGraph, PublicationRecord

__all__ = [
    "EmbeddingMatrix",
    "EmbeddingFormatError",
    "EmbeddingServiceError",
    "load_embeddings",
    "save_embeddings",
    "normalize_rows",
    "bind_to_graph",
    "cosine",
    "pairwise_cosine",
    "embed_via_service",
]

MAGIC = b"EMB1"


class EmbeddingFormatError(ValueError):
    """Raised for malformed vector/ids files or id mismatches."""


class EmbeddingServiceError(RuntimeError):
    """Raised when the embedding HTTP service fails or misbehaves."""


@dataclass(frozen=True)
class EmbeddingMatrix:
    """n x d float32 matrix; row i belongs to ids[i] (or node i once bound)."""

    data: np.ndarray
    ids: tuple[str, ...] | None = None
    normalized: bool = False

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def load_embeddings(vectors_path: str | Path, ids_path: str | Path) -> EmbeddingMatrix:
    """Read an EMB1 vectors file and its ids file; row order follows the
    ids file."""
    raw = Path(vectors_path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise EmbeddingFormatError(f"{vectors_path}: not an EMB1 vectors file")
    n, d = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * n * d
    if len(raw) != expected:
        raise EmbeddingFormatError(
            f"{vectors_path}: payload size mismatch (header says {n}x{d}, "
            f"expected {expected} bytes, got {len(raw)})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n, d).copy()

    ids = Path(ids_path).read_text(encoding="utf-8").splitlines()
    if len(ids) != n:
        raise EmbeddingFormatError(
            f"{ids_path}: id count mismatch (header says {n} rows, ids file has {len(ids)} lines)"
        )
    return EmbeddingMatrix(data=data, ids=tuple(ids), normalized=False)


def save_embeddings(m: EmbeddingMatrix, vectors_path: str | Path, ids_path: str | Path) -> None:
    """Write the EMB1 vectors file and ids file (inverse of load_embeddings)."""
    if m.ids is None:
        raise ValueError("matrix has no ids to save")
    data = np.ascontiguousarray(m.data, dtype="<f4")
    with open(vectors_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", m.n, m.d))
        fh.write(data.tobytes())
    Path(ids_path).write_text("".join(pid + "\n" for pid in m.ids), encoding="utf-8")


def normalize_rows(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Divide each row by its Euclidean norm (float64 accumulation).

    Zero rows are forbidden; the error names the first offending row.
    """
    norms = np.sqrt(np.einsum("ij,ij->i", m.data.astype(np.float64), m.data.astype(np.float64)))
    zero = np.flatnonzero(norms == 0.0)
    if len(zero):
        raise EmbeddingFormatError(f"row {int(zero[0])} has zero norm; cannot normalize")
    data = (m.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return replace(m, data=data, normalized=True)


def bind_to_graph(m: EmbeddingMatrix, graph: CorpusGraph, allow_extra: bool = False) -> EmbeddingMatrix:
    """Permute rows into node-index order for ``graph``.

    Every graph node must have an embedding. Embedding ids absent from the
    graph are an error unless ``allow_extra``, in which case they are dropped.
    """
    if m.ids is None:
        raise ValueError("matrix has no ids; cannot bind")
    row_of = {pid: i for i, pid in enumerate(m.ids)}
    missing = [pid for pid in graph.ids if pid not in row_of]
    if missing:
        raise EmbeddingFormatError(
            f"corpus node without embedding: {missing[0]!r} ({len(missing)} missing)"
        )
    if not allow_extra and len(m.ids) > graph.n:
        extra = set(m.ids) - set(graph.ids)
        raise EmbeddingFormatError(
            f"embedding id not in corpus: {sorted(extra)[0]!r} ({len(extra)} extra)"
        )
    rows = np.fromiter((row_of[pid] for pid in graph.ids), count=graph.n, dtype=np.int64)
    return EmbeddingMatrix(data=m.data[rows], ids=tuple(graph.ids), normalized=m.normalized)


def cosine(u: int, v: int, m: EmbeddingMatrix) -> float:
    """Cosine similarity of rows u and v.

    Symmetric by construction: the reduction order of the dot product does
    not depend on argument order. Equals the plain dot product on normalized
    matrices.
    """
    if not (0 <= u < m.n and 0 <= v < m.n):
        raise IndexError(f"row index out of range: {u}, {v} (n={m.n})")
    # single reduction path shared with batch scoring, so scalar and batch
    # results agree bit for bit
    return float(pairwise_cosine(m, np.array([u]), np.array([v]))[0])


def pairwise_cosine(m: EmbeddingMatrix, u: np.ndarray, v: np.ndarray, block: int = 65536) -> np.ndarray:
    """Cosine similarity for index arrays u[i], v[i], blocked for memory."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    out = np.empty(len(u), dtype=np.float64)
    for start in range(0, len(u), block):
        stop = min(start + block, len(u))
        a = m.data[u[start:stop]].astype(np.float64)
        b = m.data[v[start:stop]].astype(np.float64)
        dots = np.einsum("ij,ij->i", a, b)
        if not m.normalized:
            dots /= np.sqrt(np.einsum("ij,ij->i", a, a)) * np.sqrt(np.einsum("ij,ij->i", b, b))
        out[start:stop] = dots
    return out


def _post_batch(
    endpoint: str,
    texts: list[str],
    first_id: str,
    timeout: float,
    max_retries: int,
    backoff: float,
    session: requests.Session,
) -> list[list[float]]:
    delay = backoff
    last_err: Exception | None = None
    for attempt in range(max_retries + 1):
        try:
            resp = session.post(endpoint, json={"texts": texts}, timeout=timeout)
            if resp.status_code >= 500:
                raise EmbeddingServiceError(f"server error {resp.status_code}")
            resp.raise_for_status()
            vectors = resp.json()["vectors"]
            if len(vectors) != len(texts):
                raise EmbeddingServiceError(
                    f"service returned {len(vectors)} vectors for {len(texts)} texts "
                    f"(batch starting at {first_id!r})"
                )
            return vectors
        except (requests.RequestException, EmbeddingServiceError, KeyError, ValueError) as exc:
            last_err = exc
            if attempt < max_retries:
                time.sleep(delay)
                delay = min(delay * 2, 30.0)
    raise EmbeddingServiceError(
        f"embedding request failed for batch starting at {first_id!r}: {last_err}"
    )


def embed_via_service(
    records: Sequence[PublicationRecord],
    endpoint: str,
    batch_size: int = 64,
    *,
    timeout: float = 60.0,
    max_retries: int = 3,
    backoff: float = 0.5,
    workers: int = 1,
) -> EmbeddingMatrix:
    """Fetch embeddings for title + " " + abstract of each record.

    Batches are issued with at most one in-flight request per worker and the
    result rows follow record order. Any batch failing after retries aborts
    the whole call; a change of vector dimension between batches is an error.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not records:
        return EmbeddingMatrix(data=np.empty((0, 0), dtype=np.float32), ids=())

    texts = [r.title + " " + r.abstract for r in records]
    batches = [
        (i, texts[i : i + batch_size], records[i].pub_id)
        for i in range(0, len(texts), batch_size)
    ]
    results: dict[int, list[list[float]]] = {}
    with requests.Session() as session:
        if workers <= 1:
            for start, chunk, first_id in batches:
                results[start] = _post_batch(
                    endpoint, chunk, first_id, timeout, max_retries, backoff, session
                )
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {
                    pool.submit(
                        _post_batch, endpoint, chunk, first_id, timeout, max_retries, backoff, session
                    ): start
                    for start, chunk, first_id in batches
                }
                for fut, start in futures.items():
                    results[start] = fut.result()

    dim: int | None = None
    rows: list[list[float]] = []
    for start, _, first_id in batches:
        vectors = results[start]
        for vec in vectors:
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise EmbeddingServiceError(
                    f"dimension drift: expected {dim}, got {len(vec)} "
                    f"(batch starting at {first_id!r})"
                )
        rows.extend(vectors)
    data = np.array(rows, dtype=np.float32)
    return EmbeddingMatrix(data=data, ids=tuple(r.pub_id for r in records), normalized=False)
