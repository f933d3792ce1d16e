"""Exact top-k cosine nearest-neighbor search.

The search is a blocked matrix scan: queries are processed in fixed-size
chunks, each chunk scored against all candidates with a float64 matrix
product, and the top k selected per query with ties broken by ascending
node index. The chunk decomposition is independent of the worker count, so
results are bit-identical under any parallelism degree.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingMatrix, pairwise_cosine

__all__ = [
    "NeighborList",
    "TextualEdgeSet",
    "knn_search",
    "neighbor_lists_to_edges",
    "write_textual_edges",
]

_CHUNK = 128  # queries per scoring task; fixed so worker count cannot alter results


@dataclass(frozen=True)
class NeighborList:
    """Top neighbors of one query: (node index, cosine), score-descending."""

    query: int
    neighbors: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class TextualEdgeSet:
    """Undirected weighted edges from kNN lists; pairs (u < v), weight = cosine."""

    n: int
    pairs: np.ndarray  # (T, 2) int64, lexicographically sorted
    weights: np.ndarray  # float64
    origin: str = "textual"


def _scan_chunk(
    queries: np.ndarray,
    candidates: np.ndarray,
    cand_data: np.ndarray,
    data: np.ndarray,
    k: int,
) -> list[NeighborList]:
    scores = cand_data @ data[queries].T.astype(np.float64)  # (C, Q)
    out = []
    for col, q in enumerate(queries):
        s = scores[:, col]
        # exclude the query itself when it is among the candidates
        order = np.lexsort((candidates, -s))
        picked: list[tuple[int, float]] = []
        for pos in order:
            node = int(candidates[pos])
            if node == q:
                continue
            picked.append((node, float(s[pos])))
            if len(picked) == k:
                break
        out.append(NeighborList(query=int(q), neighbors=tuple(picked)))
    return out


def knn_search(
    queries: Sequence[int] | np.ndarray,
    candidates: Sequence[int] | np.ndarray,
    m: EmbeddingMatrix,
    k: int,
    workers: int = 1,
) -> list[NeighborList]:
    """Exact top-k cosine neighbors of each query within the candidate set.

    Requires a normalized matrix. The query itself is never returned. When k
    exceeds the available candidates, all of them are returned (callers can
    flag the truncation). Ties on score break by ascending node index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not m.normalized:
        raise ValueError("knn_search requires a normalized embedding matrix")
    queries = np.unique(np.asarray(queries, dtype=np.int64))
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    if len(candidates) == 0:
        raise ValueError("candidate set is empty")
    for arr, name in ((queries, "query"), (candidates, "candidate")):
        if len(arr) and (arr[0] < 0 or arr[-1] >= m.n):
            raise IndexError(f"{name} index out of range")
    if len(queries) == 0:
        return []

    cand_data = m.data[candidates].astype(np.float64)
    chunks = [queries[i : i + _CHUNK] for i in range(0, len(queries), _CHUNK)]
    if workers <= 1 or len(chunks) == 1:
        parts = [_scan_chunk(c, candidates, cand_data, m.data, k) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(lambda c: _scan_chunk(c, candidates, cand_data, m.data, k), chunks)
            )
    return [nl for part in parts for nl in part]


def neighbor_lists_to_edges(lists: Sequence[NeighborList], m: EmbeddingMatrix) -> TextualEdgeSet:
    """Collapse (query, neighbor) pairs into an undirected simple edge set.

    Reciprocal pairs merge into one edge. Weights are recomputed with the
    canonical pairwise cosine so textual and citing edge weights come from
    one code path.
    """
    if not lists:
        return TextualEdgeSet(
            n=m.n,
            pairs=np.empty((0, 2), dtype=np.int64),
            weights=np.empty(0, dtype=np.float64),
        )
    us, vs = [], []
    for nl in lists:
        for node, _ in nl.neighbors:
            us.append(min(nl.query, node))
            vs.append(max(nl.query, node))
    pairs = np.stack([np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64)], axis=1)
    pairs = np.unique(pairs, axis=0)
    weights = pairwise_cosine(m, pairs[:, 0], pairs[:, 1])
    return TextualEdgeSet(n=m.n, pairs=pairs, weights=weights)


def write_textual_edges(edges: TextualEdgeSet, ids: Sequence[str], path: str | Path) -> None:
    """Serialize as TSV: u_id, v_id, weight with 6 decimal places."""
    with open(path, "w", encoding="utf-8") as fh:
        for (u, v), w in zip(edges.pairs, edges.weights):
            fh.write(f"{ids[u]}\t{ids[v]}\t{w:.6f}\n")
