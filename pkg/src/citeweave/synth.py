"""Seeded synthetic corpora for desk-scale experiments.

Provides planted-partition citation graphs whose records carry community
labels, embedding vectors correlated with the planted communities, and a
controlled fragmentation transform that carves small groups off a chosen
community. Output uses the same metadata JSONL / edges TSV / EMB1 files as
the ingestion modules, so synthetic corpora flow through the normal
pipeline unchanged.

Conventions: node i of community c gets pub_id ``p{i:06d}`` and the single
label ``field_{c}``; every edge is directed from the higher node index to
the lower one, and each record's refs list its out-edges. All generation is
driven by one numpy Generator per call, so outputs are reproducible for a
fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusGraph, PublicationRecord, _undirected_from_directed, write_edges, write_metadata
from .embedding import EmbeddingMatrix, normalize_rows, save_embeddings

__all__ = [
    "PlantedSpec",
    "FragmentSpec",
    "planted_graph",
    "planted_membership",
    "fragment",
    "emit_corpus",
    "preset",
    "PRESETS",
]


@dataclass(frozen=True)
class PlantedSpec:
    """Parameters for a planted-partition corpus.

    ``center_separation`` is the exact pairwise cosine between community
    embedding centers; ``noise_sigma`` is the per-coordinate Gaussian noise
    added before unit normalization. The embedding dimension must leave room
    for one shared axis plus one axis per community.
    """

    community_sizes: tuple[int, ...]
    p_intra: float
    p_inter: float
    embed_dim: int = 64
    center_separation: float = 0.3
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.community_sizes)
        object.__setattr__(self, "community_sizes", sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("community_sizes must be a non-empty list of sizes >= 1")
        if not (0.0 <= self.p_inter <= 1.0 and 0.0 <= self.p_intra <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.p_intra <= self.p_inter:
            raise ValueError("p_intra must exceed p_inter")
        if self.embed_dim < len(sizes) + 1:
            raise ValueError(
                f"embed_dim {self.embed_dim} too small for {len(sizes)} communities "
                f"(needs >= {len(sizes) + 1})"
            )
        if not (0.0 <= self.center_separation < 1.0):
            raise ValueError("center_separation must lie in [0, 1)")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class FragmentSpec:
    """Parameters for carving fragments out of one community.

    Fragment sizes are drawn uniformly from the inclusive range; member
    nodes are drawn disjointly from the source community.
    """

    fragment_count: int
    fragment_size_range: tuple[int, int]
    source_community: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.fragment_count < 0:
            raise ValueError("fragment_count must be >= 0")
        lo, hi = self.fragment_size_range
        if not (1 <= lo <= hi):
            raise ValueError(f"invalid fragment size range [{lo}, {hi}]")
        if self.source_community < 0:
            raise ValueError("source_community must be a community index")


def _block_edges(rng: np.random.Generator, lo1: int, s1: int, lo2: int, s2: int, p: float) -> list[np.ndarray]:
    """Bernoulli edges between block [lo1, lo1+s1) and [lo2, lo2+s2).

    Same block: pairs u < v. Distinct blocks: the full bipartite pair set.
    Draws row by row to bound memory; consumption order is fixed.
    """
    out: list[np.ndarray] = []
    if p <= 0.0:
        return out
    same = lo1 == lo2
    for i in range(s1):
        u = lo1 + i
        if same:
            m = s1 - i - 1
            base = u + 1
        else:
            m = s2
            base = lo2
        if m == 0:
            continue
        hits = np.flatnonzero(rng.random(m) < p)
        if len(hits):
            v = base + hits
            out.append(np.column_stack((np.full(len(v), u, dtype=np.int64), v)))
    return out


def planted_graph(spec: PlantedSpec) -> tuple[CorpusGraph, list[PublicationRecord], EmbeddingMatrix]:
    """Generate a planted-partition corpus.

    Edges within a community appear with probability p_intra, edges across
    communities with p_inter. Embeddings are unit vectors around per-community
    centers whose pairwise cosine equals center_separation exactly. Returned
    records carry the community as their single label and their out-edges as
    refs.
    """
    rng = np.random.default_rng(spec.seed)
    sizes = spec.community_sizes
    n = sum(sizes)
    starts = np.concatenate(([0], np.cumsum(sizes)))[:-1]
    membership = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)

    pair_chunks: list[np.ndarray] = []
    for b1 in range(len(sizes)):
        for b2 in range(b1, len(sizes)):
            p = spec.p_intra if b1 == b2 else spec.p_inter
            pair_chunks.extend(
                _block_edges(rng, int(starts[b1]), sizes[b1], int(starts[b2]), sizes[b2], p)
            )
    if pair_chunks:
        pairs = np.vstack(pair_chunks)  # (E, 2) with u < v
        directed = np.column_stack((pairs[:, 1], pairs[:, 0]))  # higher index cites lower
    else:
        directed = np.empty((0, 2), dtype=np.int64)

    ids = tuple(f"p{i:06d}" for i in range(n))
    refs_of: list[list[str]] = [[] for _ in range(n)]
    for citing, cited in directed:
        refs_of[int(citing)].append(ids[int(cited)])
    records = [
        PublicationRecord(
            pub_id=ids[i],
            title=f"Synthetic publication {i}",
            abstract=(
                f"Generated abstract for publication {ids[i]} of community "
                f"field_{int(membership[i])}. It exercises clustering, augmentation "
                "and reporting on a corpus with known ground truth."
            ),
            year=2000 + (i % 5),
            labels=frozenset({f"field_{int(membership[i])}"}),
            refs=tuple(sorted(refs_of[i])),
        )
        for i in range(n)
    ]
    graph = CorpusGraph(
        n=n,
        directed=directed,
        undirected=_undirected_from_directed(n, directed),
        ids=ids,
    )

    centers = np.zeros((len(sizes), spec.embed_dim), dtype=np.float64)
    centers[:, 0] = np.sqrt(spec.center_separation)
    for c in range(len(sizes)):
        centers[c, c + 1] = np.sqrt(1.0 - spec.center_separation)
    rows = centers[membership] + spec.noise_sigma * rng.standard_normal((n, spec.embed_dim))
    matrix = normalize_rows(EmbeddingMatrix(data=rows.astype(np.float32), ids=ids))
    return graph, records, matrix


def planted_membership(records: list[PublicationRecord]) -> np.ndarray:
    """Recover the planted community index from each record's label."""
    out = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        (label,) = rec.labels
        out[i] = int(label.rsplit("_", 1)[1])
    return out


def fragment(graph: CorpusGraph, membership: np.ndarray, spec: FragmentSpec) -> CorpusGraph:
    """Detach fragments from their community by deleting boundary edges.

    Every edge between a fragment and the rest of the graph (including other
    fragments) is removed; edges internal to a fragment are kept and a random
    spanning tree over the fragment is added, so each fragment forms exactly
    one connected component. Node set and ids are unchanged.
    """
    membership = np.asarray(membership, dtype=np.int64)
    if len(membership) != graph.n:
        raise ValueError("membership must label every node of the graph")
    if spec.fragment_count == 0:
        return graph
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.fragment_size_range
    sizes = rng.integers(lo, hi + 1, size=spec.fragment_count)
    pool = np.flatnonzero(membership == spec.source_community)
    if int(sizes.sum()) > len(pool):
        raise ValueError(
            f"fragments need {int(sizes.sum())} nodes but community "
            f"{spec.source_community} has only {len(pool)}"
        )
    order = rng.permutation(pool)
    frag_id = np.full(graph.n, -1, dtype=np.int64)
    fragments: list[np.ndarray] = []
    pos = 0
    for s in sizes:
        nodes = order[pos : pos + int(s)]
        frag_id[nodes] = len(fragments)
        fragments.append(nodes)
        pos += int(s)

    d = graph.directed
    if len(d):
        keep = frag_id[d[:, 0]] == frag_id[d[:, 1]]
        directed = d[keep]
    else:
        directed = d
    present = {(min(int(u), int(v)), max(int(u), int(v))) for u, v in directed}

    added: list[tuple[int, int]] = []
    for nodes in fragments:
        perm = rng.permutation(nodes)
        for i in range(1, len(perm)):
            a = int(perm[i])
            b = int(perm[int(rng.integers(0, i))])
            key = (min(a, b), max(a, b))
            if key in present:
                continue
            present.add(key)
            added.append((max(a, b), min(a, b)))  # keep the higher-cites-lower rule
    if added:
        directed = np.vstack((directed, np.array(added, dtype=np.int64)))
    return CorpusGraph(
        n=graph.n,
        directed=directed,
        undirected=_undirected_from_directed(graph.n, directed),
        ids=graph.ids,
    )


def emit_corpus(
    records: list[PublicationRecord],
    graph: CorpusGraph,
    matrix: EmbeddingMatrix,
    out_dir: str | Path,
) -> dict[str, Path]:
    """Write the corpus in pipeline input formats under out_dir.

    Produces metadata.jsonl, edges.tsv, vectors.emb1 and vectors.ids; returns
    the paths keyed by pipeline config field names.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metadata": out / "metadata.jsonl",
        "edges": out / "edges.tsv",
        "vectors": out / "vectors.emb1",
        "ids": out / "vectors.ids",
    }
    write_metadata(records, paths["metadata"])
    write_edges(
        ((graph.ids[int(c)], graph.ids[int(d)]) for c, d in graph.directed),
        paths["edges"],
    )
    save_embeddings(matrix, paths["vectors"], paths["ids"])
    return paths


def preset(name: str, seed: int = 0) -> tuple[PlantedSpec, FragmentSpec]:
    """Named generator presets for the command line."""
    try:
        planted_kwargs, frag_kwargs = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    return (
        PlantedSpec(seed=seed, **planted_kwargs),
        FragmentSpec(seed=seed + 1, **frag_kwargs),
    )


# paper-mini: two dominant communities plus 30 small detached fragments,
# sized so a full pipeline run stays in the seconds range.
PRESETS: dict[str, tuple[dict, dict]] = {
    "paper-mini": (
        dict(
            community_sizes=(2000, 1000),
            p_intra=0.01,
            p_inter=0.0005,
            embed_dim=64,
            center_separation=0.3,
            noise_sigma=0.1,
        ),
        dict(fragment_count=30, fragment_size_range=(8, 20), source_community=0),
    ),
}
