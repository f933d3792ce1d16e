"""Graph partitioning: Leiden with a choice of quality function, a k-means
baseline over embeddings, and an exhaustive optimum for tiny graphs.

Quality functions (gamma = resolution):
  * rb  - resolution-scaled modularity
        Q = sum_c [ W_c/m - gamma * (K_c/(2m))^2 ]
    with W_c the internal edge weight of community c, K_c its total
    (weighted) degree and m the total edge weight.
  * cpm - constant Potts model
        H = sum_c [ W_c - gamma * n_c*(n_c-1)/2 ]
    with n_c the number of original nodes in c.

Leiden proceeds in passes of queue-based local moving, refinement of each
community into well-connected pieces, and aggregation over the refined
pieces. Because refinement only ever merges a node with a community it has
an edge to, every aggregate node induces a connected subgraph, and so does
every community of the final partition.

All randomness (node visit orders) comes from a 64-bit hash of the seed, so
runs are reproducible and independent of the kernel backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .embedding import EmbeddingMatrix

__all__ = [
    "Partition",
    "QualityFunction",
    "QualityConfig",
    "KMeansConfig",
    "leiden",
    "quality",
    "kmeans",
    "brute_force_best_partition",
    "write_partition_csv",
    "read_partition_csv",
]


class QualityFunction(str, Enum):
    RB_MODULARITY = "rb"
    CPM = "cpm"


@dataclass
class QualityConfig:
    function: QualityFunction = QualityFunction.RB_MODULARITY
    resolution: float = 0.05
    use_weights: bool = False
    seed: int = 0
    max_passes: int = 10
    restarts: int = 16

    def __post_init__(self) -> None:
        self.function = QualityFunction(self.function)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class KMeansConfig:
    k: int
    seed: int = 0
    max_iter: int = 300
    tol: float = 1e-6
    init: str = "kmeans++"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass(frozen=True)
class Partition:
    """Node -> cluster assignment with canonical cluster ids.

    Cluster ids are dense 0..C-1, ordered by descending size and, among
    equal sizes, by smallest member index.
    """

    assignment: np.ndarray
    sizes: np.ndarray

    @property
    def n(self) -> int:
        return len(self.assignment)

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "Partition":
        labels = np.asarray(labels, dtype=np.int64)
        uniq, first, inv, counts = np.unique(
            labels, return_index=True, return_inverse=True, return_counts=True
        )
        rank = np.lexsort((first, -counts))
        new_id = np.empty(len(uniq), dtype=np.int64)
        new_id[rank] = np.arange(len(uniq), dtype=np.int64)
        return cls(assignment=new_id[inv], sizes=counts[rank])

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == cluster)


# ---------------------------------------------------------------------------
# shared helpers


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64."""
    z = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return z ^ (z >> np.uint64(31))


def _hash_words(seed: int, stream: int, n: int) -> np.ndarray:
    """n reproducible pseudo-random 64-bit words."""
    # scalar mixing in Python ints: numpy scalar overflow would warn
    base = np.uint64((seed ^ (stream * 0xD1B54A32D192ED03)) & 0xFFFFFFFFFFFFFFFF)
    return _mix64(np.arange(n, dtype=np.uint64) + base)


def _hash_order(seed: int, stream: int, n: int) -> np.ndarray:
    """Deterministic pseudo-random visit order for n nodes."""
    return np.argsort(_hash_words(seed, stream, n), kind="stable").astype(np.int64)


def _validate_edges(edges: np.ndarray, n: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size == 0:
        return edges.reshape(0, 2)
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise ValueError("edges must be an (E, 2) array")
    if edges.min() < 0 or edges.max() >= n:
        raise ValueError("edge endpoint out of range")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ValueError("self-loops are not allowed")
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    if len(np.unique(lo * n + hi)) != len(edges):
        raise ValueError("duplicate undirected edges")
    return edges


def _edge_weights(edges: np.ndarray, weights: np.ndarray | None, cfg: QualityConfig) -> np.ndarray:
    if not cfg.use_weights or weights is None:
        if cfg.use_weights and weights is None:
            raise ValueError("use_weights requires a weights array")
        return np.ones(len(edges), dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(edges):
        raise ValueError("weights length must match edges")
    if len(weights) and weights.min() <= 0:
        raise ValueError("weights must be positive when use_weights is set")
    return weights


def _csr(edges: np.ndarray, weights: np.ndarray, n: int):
    """Symmetric CSR adjacency (no self-loops), neighbors sorted by index."""
    if len(edges) == 0:
        return (
            np.zeros(n + 1, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
        )
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    w = np.concatenate([weights, weights])
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst, w


# ---------------------------------------------------------------------------
# Leiden


def leiden(
    edges: np.ndarray,
    n: int,
    cfg: QualityConfig,
    weights: np.ndarray | None = None,
    trace: list | None = None,
    kernel_impl=None,
) -> Partition:
    """Partition an undirected simple graph into connected communities.

    Runs ``cfg.restarts`` independent greedy searches (visit orders drawn
    from disjoint streams of the seed) and keeps the highest-quality result,
    earliest restart winning ties. ``trace``, when given, receives the
    winning run's partition quality after each pass. ``kernel_impl``
    overrides the kernel backend (used by the backend-comparison benchmark);
    the default is the module selected at import time.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    impl = kernel_impl if kernel_impl is not None else kernels.impl
    edges = _validate_edges(edges, n)
    w = _edge_weights(edges, weights, cfg)

    best_labels: np.ndarray | None = None
    best_trace: list[float] = []
    for r in range(cfg.restarts):
        labels, run_trace = _leiden_run(edges, n, cfg, w, impl, r)
        if best_labels is None or run_trace[-1] > best_trace[-1]:
            best_labels = labels
            best_trace = run_trace
    if trace is not None:
        trace.extend(best_trace)
    assert best_labels is not None
    return Partition.from_labels(best_labels)


_MAX_ITERATIONS = 10


def _split_disconnected(edges: np.ndarray, n: int, labels: np.ndarray) -> np.ndarray:
    """Split every cluster into its connected components (dense relabel).

    For both quality functions this strictly improves the objective when it
    changes anything: internal weight is unchanged while the penalty term
    strictly shrinks.
    """
    same = labels[edges[:, 0]] == labels[edges[:, 1]] if len(edges) else np.zeros(0, dtype=bool)
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in edges[same].tolist():
        ru, rv = find(u), find(v)
        if ru != rv:
            if ru < rv:
                parent[rv] = ru
            else:
                parent[ru] = rv
    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    combined = labels.astype(np.int64) * np.int64(n) + roots
    _, dense = np.unique(combined, return_inverse=True)
    return dense.astype(np.int64)


def _leiden_run(
    edges: np.ndarray, n: int, cfg: QualityConfig, w: np.ndarray, impl, restart: int
) -> tuple[np.ndarray, list[float]]:
    """One restart: repeat the full move/refine/aggregate process, feeding
    each round's flat partition back in as the start of the next, until the
    quality stops improving. Restarting local moving at the original nodes
    lets single nodes leave groups that aggregation had made atomic.

    The first restart begins from singletons; later ones begin from a
    random assignment so they can settle into basins the greedy
    singleton-start trajectory never visits.
    """
    mode = 0 if cfg.function is QualityFunction.RB_MODULARITY else 1
    gamma = float(cfg.resolution)
    if restart == 0 or n < 2:
        labels = np.arange(n, dtype=np.int64)
    else:
        words = _hash_words(cfg.seed, 0x5EED + restart, n)
        labels = (words % np.uint64(n)).astype(np.int64)
    run_trace: list[float] = []
    for it in range(_MAX_ITERATIONS):
        stream_base = (restart * _MAX_ITERATIONS + it) * (3 * cfg.max_passes)
        labels, t = _leiden_once(edges, n, cfg, w, impl, stream_base, labels)
        split = _split_disconnected(edges, n, labels)
        if len(np.unique(split)) != len(np.unique(labels)):
            labels = split
            t.append(_flat_quality(edges, n, labels, w, mode, gamma))
        improved = not run_trace or t[-1] > run_trace[-1]
        run_trace.extend(t)
        if not improved:
            break
    return labels, run_trace


def _leiden_once(
    edges: np.ndarray,
    n: int,
    cfg: QualityConfig,
    w: np.ndarray,
    impl,
    stream_base: int,
    init_labels: np.ndarray,
) -> tuple[np.ndarray, list[float]]:
    """One full move/refine/aggregate run from an initial assignment.
    Returns flat labels and the per-pass quality trace (the last entry is
    the final quality)."""
    mode = 0 if cfg.function is QualityFunction.RB_MODULARITY else 1
    gamma = float(cfg.resolution)

    indptr, nbr, nbr_w = _csr(edges, w, n)
    self_w = np.zeros(n, dtype=np.float64)
    node_size = np.ones(n, dtype=np.int64)
    mapping = np.arange(n, dtype=np.int64)
    membership = init_labels.copy()
    level_n = n
    two_m = 2.0 * float(w.sum())
    run_trace: list[float] = []

    for p in range(cfg.max_passes):
        # strength = row sums of CSR weights plus twice the self weight
        row = np.repeat(np.arange(level_n, dtype=np.int64), np.diff(indptr))
        strength = np.bincount(row, weights=nbr_w, minlength=level_n) + 2.0 * self_w

        comm_strength = np.zeros(level_n, dtype=np.float64)
        np.add.at(comm_strength, membership, strength)
        comm_size = np.zeros(level_n, dtype=np.int64)
        np.add.at(comm_size, membership, node_size)
        # free stack holds exactly the unused community ids, ascending
        free_ids = np.zeros(level_n, dtype=np.int64)
        unused = np.setdiff1d(np.arange(level_n, dtype=np.int64), membership)
        free_ids[: len(unused)] = unused
        n_free = len(unused)

        order = _hash_order(cfg.seed, stream_base + 3 * p, level_n)
        moves, n_free = impl.move_nodes(
            indptr,
            nbr,
            nbr_w,
            strength,
            node_size,
            membership,
            comm_strength,
            comm_size,
            free_ids,
            n_free,
            order,
            gamma,
            mode,
            two_m,
        )
        run_trace.append(_flat_quality(edges, n, membership[mapping], w, mode, gamma))

        # every community is a single aggregate node: nothing left to do,
        # and connectivity of the result follows from how aggregates form
        if len(np.unique(membership)) == level_n:
            break

        order = _hash_order(cfg.seed, stream_base + 3 * p + 1, level_n)
        rand_words = _hash_words(cfg.seed, stream_base + 3 * p + 2, level_n)
        refined = impl.refine(
            indptr,
            nbr,
            nbr_w,
            strength,
            node_size,
            membership,
            comm_strength,
            comm_size,
            order,
            rand_words,
            gamma,
            mode,
            two_m,
        )
        ref_ids, ref_dense = np.unique(refined, return_inverse=True)
        r = len(ref_ids)
        if r == level_n:
            # refinement kept every node singleton, so aggregation would
            # reproduce the current graph; once local moving also settles
            # there is nothing further to gain
            if moves == 0:
                break
            continue

        # aggregate the graph over refined communities
        rs, rt = ref_dense[row], ref_dense[nbr]
        cross = rs != rt
        new_self = np.bincount(ref_dense, weights=self_w, minlength=r)
        if np.any(~cross):
            # each internal edge appears twice in the symmetric CSR
            new_self = new_self + 0.5 * np.bincount(rs[~cross], weights=nbr_w[~cross], minlength=r)
        keys = rs[cross] * r + rt[cross]
        uniq_keys, inv = np.unique(keys, return_inverse=True)
        # bincount yields int64 for empty input even with float weights
        agg_w = np.bincount(inv, weights=nbr_w[cross]).astype(np.float64)
        agg_src = (uniq_keys // r).astype(np.int64)
        agg_dst = (uniq_keys % r).astype(np.int64)
        indptr = np.zeros(r + 1, dtype=np.int64)
        np.cumsum(np.bincount(agg_src, minlength=r), out=indptr[1:])
        nbr = agg_dst
        nbr_w = agg_w
        self_w = new_self
        node_size = np.bincount(ref_dense, weights=node_size, minlength=r).astype(np.int64)

        _, memb_dense = np.unique(membership, return_inverse=True)
        new_membership = np.zeros(r, dtype=np.int64)
        new_membership[ref_dense] = memb_dense
        membership = new_membership
        mapping = ref_dense[mapping]
        level_n = r

    return membership[mapping], run_trace


def _flat_quality(
    edges: np.ndarray, n: int, labels: np.ndarray, w: np.ndarray, mode: int, gamma: float
) -> float:
    """Objective for an assignment given resolved edge weights.

    ``labels`` may be non-dense; absent ids contribute nothing.
    """
    c = int(labels.max()) + 1
    if len(edges):
        same = labels[edges[:, 0]] == labels[edges[:, 1]]
        internal = np.bincount(labels[edges[:, 0][same]], weights=w[same], minlength=c)
    else:
        internal = np.zeros(c, dtype=np.float64)

    if mode == 1:
        sizes = np.bincount(labels, minlength=c).astype(np.float64)
        return float(internal.sum() - gamma * np.sum(sizes * (sizes - 1.0) / 2.0))

    m = float(w.sum())
    if m == 0.0:
        return 0.0
    strength = np.zeros(n, dtype=np.float64)
    np.add.at(strength, edges[:, 0], w)
    np.add.at(strength, edges[:, 1], w)
    k_c = np.bincount(labels, weights=strength, minlength=c)
    return float(np.sum(internal / m) - gamma * np.sum((k_c / (2.0 * m)) ** 2))


def quality(
    edges: np.ndarray,
    n: int,
    partition: Partition,
    cfg: QualityConfig,
    weights: np.ndarray | None = None,
) -> float:
    """Evaluate the configured objective for a partition. Pure function."""
    edges = _validate_edges(edges, n)
    if partition.n != n:
        raise ValueError("partition size does not match n")
    w = _edge_weights(edges, weights, cfg)
    mode = 1 if cfg.function is QualityFunction.CPM else 0
    return _flat_quality(edges, n, partition.assignment, w, mode, cfg.resolution)


# ---------------------------------------------------------------------------
# exhaustive optimum for tiny graphs


def _set_partitions(n: int) -> Iterator[list[int]]:
    """All set partitions of range(n) as restricted-growth strings, in
    lexicographic order."""
    a = [0] * n
    b = [1] * n  # b[i] = largest value a[i] may take
    while True:
        yield a[:]
        j = n - 1
        while j > 0 and a[j] == b[j]:
            j -= 1
        if j == 0:
            return
        a[j] += 1
        for i in range(j + 1, n):
            a[i] = 0
        for i in range(1, n):
            b[i] = max(b[i - 1], a[i - 1] + 1)


def _quality_plain(
    edge_list: list[tuple[int, int]],
    weight_list: list[float],
    n: int,
    labels: Sequence[int],
    gamma: float,
    cpm: bool,
) -> float:
    """Scalar re-evaluation of the objective, used by the exhaustive search."""
    if cpm:
        h = 0.0
        counts: dict[int, int] = {}
        for lbl in labels:
            counts[lbl] = counts.get(lbl, 0) + 1
        for (u, v), w in zip(edge_list, weight_list):
            if labels[u] == labels[v]:
                h += w
        for cnt in counts.values():
            h -= gamma * cnt * (cnt - 1) / 2.0
        return h
    m = sum(weight_list)
    if m == 0.0:
        return 0.0
    strength = [0.0] * n
    internal: dict[int, float] = {}
    for (u, v), w in zip(edge_list, weight_list):
        strength[u] += w
        strength[v] += w
        if labels[u] == labels[v]:
            internal[labels[u]] = internal.get(labels[u], 0.0) + w
    k_c: dict[int, float] = {}
    for v in range(n):
        k_c[labels[v]] = k_c.get(labels[v], 0.0) + strength[v]
    q = sum(internal.values()) / m
    for kc in k_c.values():
        q -= gamma * (kc / (2.0 * m)) ** 2
    return q


def brute_force_best_partition(
    edges: np.ndarray,
    n: int,
    cfg: QualityConfig,
    weights: np.ndarray | None = None,
) -> Partition:
    """Globally optimal partition by enumerating all set partitions.

    Limited to n <= 10. Quality ties resolve to the partition with more
    clusters, then to the lexicographically smallest assignment string.
    """
    if n > 10:
        raise ValueError("brute force is limited to n <= 10")
    if n < 1:
        raise ValueError("n must be >= 1")
    edges = _validate_edges(edges, n)
    w = _edge_weights(edges, weights, cfg)
    edge_list = [(int(u), int(v)) for u, v in edges]
    weight_list = [float(x) for x in w]
    cpm = cfg.function is QualityFunction.CPM
    gamma = float(cfg.resolution)

    best_labels: list[int] | None = None
    best_q = -math.inf
    best_nc = -1
    for labels in _set_partitions(n):
        q = _quality_plain(edge_list, weight_list, n, labels, gamma, cpm)
        nc = max(labels) + 1
        if (
            q > best_q
            or (q == best_q and nc > best_nc)
            or (q == best_q and nc == best_nc and best_labels is not None and labels < best_labels)
        ):
            best_labels = labels[:]
            best_q = q
            best_nc = nc
    assert best_labels is not None
    return Partition.from_labels(np.array(best_labels, dtype=np.int64))


# ---------------------------------------------------------------------------
# k-means baseline


def kmeans(m: EmbeddingMatrix, cfg: KMeansConfig, trace: list | None = None) -> Partition:
    """Lloyd iterations with kmeans++ seeding over the embedding rows.

    Deterministic for a fixed seed. Empty clusters are re-seeded at the
    point farthest from its assigned centroid (smallest index on ties).
    ``trace``, when given, receives the inertia after each assignment step.
    """
    x = m.data.astype(np.float64)
    n = x.shape[0]
    if cfg.k > n:
        raise ValueError(f"k={cfg.k} exceeds the number of points ({n})")
    rng = np.random.default_rng(cfg.seed)

    centers = np.empty((cfg.k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    closest = np.full(n, np.inf)
    for j in range(1, cfg.k):
        dist = np.sum((x - centers[j - 1]) ** 2, axis=1)
        np.minimum(closest, dist, out=closest)
        total = closest.sum()
        if total == 0.0:
            centers[j] = x[rng.integers(n)]
            continue
        centers[j] = x[rng.choice(n, p=closest / total)]

    sq_norms = np.einsum("ij,ij->i", x, x)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(cfg.max_iter):
        dists = sq_norms[:, None] - 2.0 * (x @ centers.T) + np.einsum("ij,ij->i", centers, centers)
        labels = np.argmin(dists, axis=1)

        # re-seed empty clusters at the farthest point (smallest index on
        # ties); repeat in case a re-seeded center steals its point back
        for _ in range(cfg.k):
            counts = np.bincount(labels, minlength=cfg.k)
            if not np.any(counts == 0):
                break
            assigned = dists[np.arange(n), labels].copy()
            for c in np.flatnonzero(counts == 0):
                far = int(np.argmax(assigned))
                centers[c] = x[far]
                labels[far] = c
                assigned[far] = -np.inf
            dists = sq_norms[:, None] - 2.0 * (x @ centers.T) + np.einsum("ij,ij->i", centers, centers)
            labels = np.argmin(dists, axis=1)

        if trace is not None:
            diffs = x - centers[labels]
            trace.append(float(np.einsum("ij,ij->", diffs, diffs)))

        # a cluster can stay empty only when distinct points run out;
        # keep its center in place rather than averaging nothing
        new_centers = centers.copy()
        for c in range(cfg.k):
            mask = labels == c
            if mask.any():
                new_centers[c] = x[mask].mean(axis=0)
        shift = float(np.sqrt(np.max(np.sum((new_centers - centers) ** 2, axis=1))))
        centers = new_centers
        if shift < cfg.tol:
            break

    return Partition.from_labels(labels)


# ---------------------------------------------------------------------------
# serialization


def write_partition_csv(p: Partition, ids: Sequence[str], path: str | Path) -> None:
    """CSV with header pub_id,cluster and one row per node."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("pub_id,cluster\n")
        for pid, c in zip(ids, p.assignment):
            fh.write(f"{pid},{int(c)}\n")


def read_partition_csv(path: str | Path, index_of: dict[str, int]) -> Partition:
    labels = np.full(len(index_of), -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "pub_id,cluster":
            raise ValueError(f"{path}: unexpected partition header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            pid, _, cluster = line.rpartition(",")
            if pid not in index_of:
                raise ValueError(f"{path} line {lineno}: unknown pub_id {pid!r}")
            labels[index_of[pid]] = int(cluster)
    if np.any(labels < 0):
        raise ValueError(f"{path}: missing assignment for some nodes")
    return Partition.from_labels(labels)
