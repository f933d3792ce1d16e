"""Evaluation artifacts for clusterings of a citation corpus.

Covers label homogeneity per cluster, cluster-size distributions, the
cluster-by-cluster edge-count matrix, two-label confusion tables, the
reference-retention funnel, and edge-weight histograms. Everything here is
a pure function over immutable inputs; writers emit JSON or CSV only.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path
from typing import Callable, Collection, Mapping, Sequence

import numpy as np

from .community import Partition
from .corpus import CorpusGraph, PublicationRecord

__all__ = [
    "ClusterHomogeneity",
    "HomogeneityReport",
    "LinkMatrix",
    "ConfusionTable",
    "RetentionFunnel",
    "WeightHistogram",
    "homogeneity",
    "cluster_size_distribution",
    "link_distribution",
    "confusion",
    "retention_funnel",
    "weight_histogram",
    "write_link_csv",
    "write_confusion_csv",
    "write_histogram_csv",
]


@dataclass(frozen=True)
class ClusterHomogeneity:
    """Dominant-label share for one cluster.

    ``labeled`` counts members carrying at least one label; unlabeled
    members are excluded from the denominator. A record carrying several
    labels counts toward each of them, so a cluster whose members all share
    one label scores exactly 1.0 even when some also carry a second label.
    ``homogeneity`` is None when the cluster has no labeled member.
    """

    cluster: int
    size: int
    labeled: int
    dominant_label: str | None
    dominant_count: int
    homogeneity: float | None


@dataclass(frozen=True)
class HomogeneityReport:
    """Per-cluster homogeneity rows, cluster id order."""

    rows: tuple[ClusterHomogeneity, ...]

    def summary(self, label_pair: tuple[str, str] | None = None) -> dict:
        """Headline numbers: cluster count, two largest sizes, and for each
        label in ``label_pair`` the homogeneity of the largest cluster that
        label dominates (None when it dominates no cluster)."""
        by_size = sorted(self.rows, key=lambda r: (-r.size, r.cluster))
        out: dict = {
            "clusters": len(self.rows),
            "largest_sizes": [r.size for r in by_size[:2]],
        }
        if label_pair is not None:
            per_label = {}
            for label in label_pair:
                hom = None
                for row in by_size:
                    if row.dominant_label == label:
                        hom = row.homogeneity
                        break
                per_label[label] = hom
            out["dominant_homogeneity"] = per_label
        return out

    def to_json(self, label_pair: tuple[str, str] | None = None) -> str:
        payload = {
            "clusters": [
                {
                    "cluster": r.cluster,
                    "size": r.size,
                    "labeled": r.labeled,
                    "dominant_label": r.dominant_label,
                    "dominant_count": r.dominant_count,
                    "homogeneity": r.homogeneity,
                }
                for r in self.rows
            ],
            "summary": self.summary(label_pair),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class LinkMatrix:
    """Symmetric C x C matrix of undirected edge counts between clusters.

    Entry (c, c') counts edges with one endpoint in c and the other in c';
    the diagonal counts intra-cluster edges. Each cross pair appears at
    both (c, c') and (c', c), so the edge total is the upper triangle sum.
    """

    matrix: np.ndarray

    @property
    def total_edges(self) -> int:
        return int(np.triu(self.matrix).sum())

    def to_json(self) -> str:
        payload = {
            "clusters": self.matrix.shape[0],
            "total_edges": self.total_edges,
            "matrix": self.matrix.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class ConfusionTable:
    """Per-cluster counts over a two-label split.

    Columns: only the first label, only the second, both labels, and an
    ``other`` spill for members carrying neither. The first three columns
    sum to the cluster's pair-labeled size; all four sum to cluster size.
    """

    label_pair: tuple[str, str]
    counts: np.ndarray

    @property
    def columns(self) -> tuple[str, str, str, str]:
        return (self.label_pair[0], self.label_pair[1], "both", "other")

    def to_json(self) -> str:
        payload = {
            "columns": list(self.columns),
            "rows": self.counts.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class RetentionFunnel:
    """Reference attrition across coverage, year-window, and extraction.

    Counts are nested: a reference counts at a stage only if it passed all
    previous stages, so each stage count is <= the one before. Percentages
    are relative to ``total_refs`` and rounded half-up to one decimal;
    ``overall_retention_pct`` restates the final stage at two decimals.
    When there are no references at all, percentages are reported as 0.0
    and ``empty`` is set.
    """

    total_refs: int
    in_coverage: int
    in_window: int
    in_graph: int
    coverage_pct: float
    window_pct: float
    graph_pct: float
    overall_retention_pct: float
    empty: bool

    def to_json(self) -> str:
        payload = {
            "total_refs": self.total_refs,
            "in_coverage": self.in_coverage,
            "in_window": self.in_window,
            "in_graph": self.in_graph,
            "coverage_pct": self.coverage_pct,
            "window_pct": self.window_pct,
            "graph_pct": self.graph_pct,
            "overall_retention_pct": self.overall_retention_pct,
            "empty": self.empty,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class WeightHistogram:
    """Fixed-width histogram over [0, 1].

    ``bin_edges`` has one more entry than ``counts``; every bin is
    half-open [low, high) except the last, which includes 1.0. Counts sum
    to the number of input weights.
    """

    bin_edges: np.ndarray
    counts: np.ndarray

    def to_json(self) -> str:
        payload = {
            "bin_edges": [round(float(e), 10) for e in self.bin_edges],
            "counts": self.counts.tolist(),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _check_alignment(p: Partition, records: Sequence[PublicationRecord]) -> None:
    if len(records) != p.n:
        raise ValueError(
            f"records ({len(records)}) and partition ({p.n}) cover different node sets"
        )


def homogeneity(p: Partition, records: Sequence[PublicationRecord]) -> HomogeneityReport:
    """Dominant-label fraction per cluster.

    The dominant label maximizes the number of members carrying it (a
    multi-labeled member is counted for every label it carries); ties break
    toward the lexicographically smallest label. The denominator is the
    number of labeled members only. Clusters with zero labeled members get
    homogeneity None.
    """
    _check_alignment(p, records)
    rows = []
    for c in range(p.n_clusters):
        members = p.members(c)
        tally: Counter[str] = Counter()
        labeled = 0
        for i in members:
            labels = records[int(i)].labels
            if labels:
                labeled += 1
                tally.update(labels)
        if labeled == 0:
            rows.append(
                ClusterHomogeneity(
                    cluster=c,
                    size=len(members),
                    labeled=0,
                    dominant_label=None,
                    dominant_count=0,
                    homogeneity=None,
                )
            )
            continue
        dominant_label = min(tally, key=lambda lab: (-tally[lab], lab))
        dominant_count = tally[dominant_label]
        rows.append(
            ClusterHomogeneity(
                cluster=c,
                size=len(members),
                labeled=labeled,
                dominant_label=dominant_label,
                dominant_count=dominant_count,
                homogeneity=dominant_count / labeled,
            )
        )
    return HomogeneityReport(rows=tuple(rows))


def cluster_size_distribution(p: Partition) -> np.ndarray:
    """Cluster sizes in descending order."""
    sizes = np.asarray(p.sizes, dtype=np.int64)
    return np.sort(sizes)[::-1].copy()


def link_distribution(p: Partition, edges: np.ndarray) -> LinkMatrix:
    """Count undirected edges within and between clusters."""
    edges = np.asarray(edges, dtype=np.int64)
    if edges.ndim != 2 or (len(edges) and edges.shape[1] != 2):
        raise ValueError("edges must be an (E, 2) array")
    edges = edges.reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= p.n):
        raise ValueError("edge endpoint outside the partition's node range")
    c = p.n_clusters
    mat = np.zeros((c, c), dtype=np.int64)
    if len(edges):
        cu = p.assignment[edges[:, 0]]
        cv = p.assignment[edges[:, 1]]
        lo = np.minimum(cu, cv)
        hi = np.maximum(cu, cv)
        np.add.at(mat, (lo, hi), 1)
        mat = mat + mat.T - np.diag(np.diag(mat))
    return LinkMatrix(matrix=mat)


def confusion(
    p: Partition,
    records: Sequence[PublicationRecord],
    label_pair: tuple[str, str],
) -> ConfusionTable:
    """Per-cluster counts of first-label-only, second-label-only, both,
    and neither (``other``)."""
    _check_alignment(p, records)
    l1, l2 = label_pair
    if l1 == l2:
        raise ValueError("label_pair must name two distinct labels")
    counts = np.zeros((p.n_clusters, 4), dtype=np.int64)
    assignment = p.assignment
    for i, rec in enumerate(records):
        has1 = l1 in rec.labels
        has2 = l2 in rec.labels
        if has1 and has2:
            col = 2
        elif has1:
            col = 0
        elif has2:
            col = 1
        else:
            col = 3
        counts[assignment[i], col] += 1
    return ConfusionTable(label_pair=(l1, l2), counts=counts)


def _pct(count: int, total: int, places: str) -> float:
    return float((Decimal(count * 100) / Decimal(total)).quantize(Decimal(places), ROUND_HALF_UP))


def retention_funnel(
    records: Sequence[PublicationRecord],
    coverage: Callable[[str], bool] | Collection[str],
    window: tuple[int, int],
    graph: CorpusGraph,
    year_of: Mapping[str, int | None] | None = None,
) -> RetentionFunnel:
    """Trace how many outgoing references survive each retention stage.

    Stage 1 counts every reference listed by ``records``. Stage 2 keeps
    those whose target satisfies ``coverage`` (a predicate or an allowlist
    of pub_ids). Stage 3 additionally requires the target's publication
    year to fall inside the inclusive ``window``; target years come from
    ``year_of`` when given, else from ``records`` themselves, and an
    unknown year fails the stage. Stage 4 keeps references that appear as
    directed edges in ``graph``.
    """
    lo, hi = window
    if lo > hi:
        raise ValueError(f"empty year window [{lo}, {hi}]")
    if callable(coverage):
        covered = coverage
    else:
        allow = frozenset(coverage)
        covered = allow.__contains__
    if year_of is None:
        year_of = {rec.pub_id: rec.year for rec in records}

    edge_set: set[tuple[int, int]] = set(map(tuple, graph.directed.tolist()))
    index_of = graph.index_of

    total = n_cov = n_win = n_graph = 0
    for rec in records:
        src = index_of.get(rec.pub_id)
        for target in rec.refs:
            total += 1
            if not covered(target):
                continue
            n_cov += 1
            year = year_of.get(target)
            if year is None or not (lo <= year <= hi):
                continue
            n_win += 1
            dst = index_of.get(target)
            if src is not None and dst is not None and (src, dst) in edge_set:
                n_graph += 1

    if total == 0:
        return RetentionFunnel(
            total_refs=0,
            in_coverage=0,
            in_window=0,
            in_graph=0,
            coverage_pct=0.0,
            window_pct=0.0,
            graph_pct=0.0,
            overall_retention_pct=0.0,
            empty=True,
        )
    return RetentionFunnel(
        total_refs=total,
        in_coverage=n_cov,
        in_window=n_win,
        in_graph=n_graph,
        coverage_pct=_pct(n_cov, total, "0.1"),
        window_pct=_pct(n_win, total, "0.1"),
        graph_pct=_pct(n_graph, total, "0.1"),
        overall_retention_pct=_pct(n_graph, total, "0.01"),
        empty=False,
    )


def weight_histogram(weights: Sequence[float] | np.ndarray, bin_width: float = 0.05) -> WeightHistogram:
    """Histogram of weights over fixed bins covering [0, 1].

    ``bin_width`` must divide 1 evenly. Values sitting exactly on a decimal
    bin boundary belong to the upper bin even when their nearest float
    representation falls a hair below it.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    nbins = int(round(1.0 / bin_width))
    if nbins < 1 or abs(nbins * bin_width - 1.0) > 1e-9:
        raise ValueError(f"bin width {bin_width} does not evenly divide [0, 1]")
    if len(w) and (w.min() < 0.0 or w.max() > 1.0):
        raise ValueError("weight outside [0, 1]")
    edges = np.arange(nbins + 1, dtype=np.float64) * bin_width
    if len(w):
        # nudge past boundary values whose float form rounds just below
        idx = np.floor((w + 1e-12) / bin_width).astype(np.int64)
        idx = np.minimum(idx, nbins - 1)
        counts = np.bincount(idx, minlength=nbins)
    else:
        counts = np.zeros(nbins, dtype=np.int64)
    return WeightHistogram(bin_edges=edges, counts=counts.astype(np.int64))


def write_link_csv(m: LinkMatrix, path: str | Path) -> None:
    """CSV with cluster ids as both header and row labels."""
    c = m.matrix.shape[0]
    lines = ["cluster," + ",".join(str(j) for j in range(c))]
    for i in range(c):
        lines.append(str(i) + "," + ",".join(str(int(x)) for x in m.matrix[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_confusion_csv(t: ConfusionTable, path: str | Path) -> None:
    lines = ["cluster," + ",".join(t.columns)]
    for i, row in enumerate(t.counts):
        lines.append(str(i) + "," + ",".join(str(int(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram_csv(h: WeightHistogram, path: str | Path) -> None:
    lines = ["bin_low,bin_high,count"]
    for i, count in enumerate(h.counts):
        low = h.bin_edges[i]
        high = h.bin_edges[i + 1]
        lines.append(f"{low:.6g},{high:.6g},{int(count)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
