"""Edge augmentation: attach nearest-neighbor similarity edges for nodes in
small clusters, weight existing citation edges by endpoint similarity, and
merge both edge sets under a single blending parameter.

Blended weight per unordered pair {u, v}:

    w = alpha * w_textual + (1 - alpha) * w_citing

where w_textual is the clamped cosine (absent treated as 0) and w_citing is
the binary citation indicator. Bookkeeping counts satisfy the exact integer
identity e_total = e_citing + e_textual - e_overlap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .community import Partition
from .corpus import CorpusGraph
from .embedding import EmbeddingMatrix, pairwise_cosine
from .knn import TextualEdgeSet

__all__ = [
    "WeightedEdge",
    "CitingEdgeSet",
    "AugmentedGraph",
    "select_small_cluster_nodes",
    "weight_citation_edges",
    "blend",
    "unweighted_view",
    "weighted_view",
    "write_augmented_tsv",
    "write_bookkeeping_json",
]


@dataclass(frozen=True)
class WeightedEdge:
    """One undirected augmented edge, u < v. ``w_textual`` is None when the
    pair has no similarity weight (citation edge outside the weighted set)."""

    u: int
    v: int
    w_textual: float | None
    w_citing: int
    w_blend: float


@dataclass(frozen=True)
class CitingEdgeSet:
    """Undirected citation pairs, optionally weighted by clamped cosines.

    ``weights`` is None for the plain unweighted citation graph.
    """

    n: int
    pairs: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.weights is not None and len(self.weights) != len(self.pairs):
            raise ValueError("weights length must match pairs")


@dataclass(frozen=True)
class AugmentedGraph:
    """Union of citation and similarity pairs with per-edge weights.

    ``pairs`` is (E, 2) with u < v, lexicographically sorted. ``w_textual``
    holds NaN where the pair carries no similarity weight.
    """

    n: int
    pairs: np.ndarray
    w_textual: np.ndarray
    w_citing: np.ndarray
    w_blend: np.ndarray
    alpha: float
    bookkeeping: dict[str, int]

    @property
    def edges(self) -> tuple[WeightedEdge, ...]:
        out = []
        for i in range(len(self.pairs)):
            wt = self.w_textual[i]
            out.append(
                WeightedEdge(
                    u=int(self.pairs[i, 0]),
                    v=int(self.pairs[i, 1]),
                    w_textual=None if np.isnan(wt) else float(wt),
                    w_citing=int(self.w_citing[i]),
                    w_blend=float(self.w_blend[i]),
                )
            )
        return tuple(out)


def select_small_cluster_nodes(p: Partition, size_threshold: int = 1000) -> set[int]:
    """Union of the members of every cluster of size <= size_threshold."""
    if size_threshold < 1:
        raise ValueError("size_threshold must be >= 1")
    if len(p.sizes) and size_threshold >= int(p.sizes[0]):
        raise ValueError(
            f"threshold selects entire graph: size_threshold={size_threshold} "
            f">= largest cluster size {int(p.sizes[0])}"
        )
    small = np.flatnonzero(p.sizes <= size_threshold)
    mask = np.isin(p.assignment, small)
    return set(int(i) for i in np.flatnonzero(mask))


def weight_citation_edges(graph: CorpusGraph, m: EmbeddingMatrix) -> CitingEdgeSet:
    """Clamped cosine weight for every undirected citation edge.

    Cost is proportional to the number of edges (one dot product each, done
    in batches).
    """
    pairs = graph.undirected
    if len(pairs) == 0:
        return CitingEdgeSet(n=graph.n, pairs=pairs.copy(), weights=np.empty(0))
    cos = pairwise_cosine(m, pairs[:, 0], pairs[:, 1])
    return CitingEdgeSet(n=graph.n, pairs=pairs.copy(), weights=np.maximum(cos, 0.0))


def _pair_keys(pairs: np.ndarray, n: int) -> np.ndarray:
    return pairs[:, 0].astype(np.int64) * np.int64(n) + pairs[:, 1].astype(np.int64)


def blend(textual: TextualEdgeSet, citing: CitingEdgeSet, alpha: float = 0.5) -> AugmentedGraph:
    """Merge the similarity and citation edge sets into one weighted graph."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if textual.n != citing.n:
        raise ValueError(
            f"edge sets cover different node universes: {textual.n} != {citing.n}"
        )
    n = citing.n

    t_keys = _pair_keys(textual.pairs, n) if len(textual.pairs) else np.empty(0, dtype=np.int64)
    c_keys = _pair_keys(citing.pairs, n) if len(citing.pairs) else np.empty(0, dtype=np.int64)
    all_keys = np.union1d(t_keys, c_keys)
    e_total = len(all_keys)

    in_t = np.isin(all_keys, t_keys, assume_unique=True)
    in_c = np.isin(all_keys, c_keys, assume_unique=True)
    e_overlap = int(np.sum(in_t & in_c))

    w_textual = np.full(e_total, np.nan)
    if len(t_keys):
        # textual weights are raw cosines; clamp at use time
        t_pos = np.searchsorted(all_keys, t_keys)
        w_textual[t_pos] = np.maximum(textual.weights, 0.0)
    if len(c_keys) and citing.weights is not None:
        c_pos = np.searchsorted(all_keys, c_keys)
        w_textual[c_pos] = citing.weights

    w_citing = in_c.astype(np.float64)
    w_blend = alpha * np.where(np.isnan(w_textual), 0.0, w_textual) + (1.0 - alpha) * w_citing

    pairs = np.column_stack([all_keys // n, all_keys % n]).astype(np.int64)
    bookkeeping = {
        "e_citing": len(c_keys),
        "e_textual": len(t_keys),
        "e_overlap": e_overlap,
        "e_total": e_total,
    }
    assert bookkeeping["e_total"] == (
        bookkeeping["e_citing"] + bookkeeping["e_textual"] - bookkeeping["e_overlap"]
    )
    return AugmentedGraph(
        n=n,
        pairs=pairs,
        w_textual=w_textual,
        w_citing=w_citing,
        w_blend=w_blend,
        alpha=float(alpha),
        bookkeeping=bookkeeping,
    )


def unweighted_view(g: AugmentedGraph, overlap_multiplicity: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Edge pairs with unit weights.

    Pairs present in both origins appear once; with ``overlap_multiplicity=2``
    they carry weight 2 instead (a collapsed parallel edge, for sensitivity
    analysis).
    """
    if overlap_multiplicity not in (1, 2):
        raise ValueError("overlap_multiplicity must be 1 or 2")
    weights = np.ones(len(g.pairs), dtype=np.float64)
    if overlap_multiplicity == 2:
        overlap = (g.w_citing > 0.0) & ~np.isnan(g.w_textual)
        weights[overlap] = 2.0
    return g.pairs.copy(), weights


def weighted_view(g: AugmentedGraph) -> tuple[np.ndarray, np.ndarray]:
    """Edge pairs with blended weights, zero-weight pairs dropped.

    Zero-weight edges contribute nothing to any quality term, so dropping
    them cannot change a partition; the clustering stage requires strictly
    positive weights.
    """
    keep = g.w_blend > 0.0
    return g.pairs[keep].copy(), g.w_blend[keep].copy()


def write_augmented_tsv(g: AugmentedGraph, ids: Sequence[str], path: str | Path) -> None:
    """One line per edge: u_id, v_id, w_textual (or "-"), w_citing, w_blend."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(g.pairs)):
            wt = g.w_textual[i]
            wt_s = "-" if np.isnan(wt) else f"{wt:.6f}"
            fh.write(
                f"{ids[g.pairs[i, 0]]}\t{ids[g.pairs[i, 1]]}\t"
                f"{wt_s}\t{int(g.w_citing[i])}\t{g.w_blend[i]:.6f}\n"
            )


def write_bookkeeping_json(g: AugmentedGraph, path: str | Path) -> None:
    payload = dict(g.bookkeeping)
    payload["alpha"] = g.alpha
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
