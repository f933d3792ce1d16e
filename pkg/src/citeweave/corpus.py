"""Publication metadata ingestion and citation-graph construction.

Input formats:
  * metadata: JSON Lines, one object per line with keys
    ``id``, ``title``, ``abstract``, ``year``, ``labels`` and optional ``refs``.
    ``year`` may be null for records whose publication year is unknown; such
    records are removed by the missing-metadata filter, not at parse time.
  * edges: TSV with two columns ``citing_id<TAB>cited_id``, no header.

Node indices are assigned by record order and re-densified whenever a
subgraph is taken, so ``ids[i]`` and ``index_of[pub_id]`` stay mutually
inverse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PublicationRecord",
    "CorpusGraph",
    "IngestReport",
    "FilterReport",
    "CorpusFormatError",
    "load_corpus",
    "write_metadata",
    "write_edges",
    "apply_filters",
    "build_graph",
    "largest_component",
    "prune_degree_one",
    "undirected_projection",
]


class CorpusFormatError(ValueError):
    """Raised for malformed or inconsistent corpus input files."""


@dataclass(frozen=True)
class PublicationRecord:
    """One publication: identifier, text fields, year, subject labels, refs."""

    pub_id: str
    title: str
    abstract: str
    year: int | None
    labels: frozenset[str]
    refs: tuple[str, ...] = ()


@dataclass
class IngestReport:
    """Counts collected while reading the metadata/edges files."""

    records: int = 0
    unlabeled_records: int = 0
    edge_lines: int = 0
    directed_edges: int = 0
    duplicate_edges: int = 0
    unmatched_edges: int = 0
    self_citations: int = 0
    unmatched_ids: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class FilterReport:
    """Removal counts per preprocessing rule, stage by stage.

    For every stage, removed + survivors equals that stage's input count.
    ``lcc_removed`` and ``degree_one_removed`` are filled in by the caller
    that runs those graph-level stages.
    """

    input_records: int = 0
    missing_metadata: int = 0
    abstract_too_short: int = 0
    outside_year_window: int = 0
    survivors: int = 0
    edges_dropped_by_filters: int = 0
    lcc_removed: int = 0
    degree_one_removed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class CorpusGraph:
    """Directed citation graph plus its simple undirected projection.

    ``directed`` is an (E, 2) int array of (citing, cited) node indices and
    may contain duplicates of meaning only through distinct pairs (loader
    collapses duplicate lines). ``undirected`` holds each unordered pair
    {u, v} with u < v exactly once and never a self-loop.
    """

    n: int
    directed: np.ndarray
    undirected: np.ndarray
    ids: tuple[str, ...]

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.ids)}

    def degrees(self) -> np.ndarray:
        """Undirected degree per node."""
        deg = np.zeros(self.n, dtype=np.int64)
        if len(self.undirected):
            np.add.at(deg, self.undirected[:, 0], 1)
            np.add.at(deg, self.undirected[:, 1], 1)
        return deg

    def components(self) -> np.ndarray:
        """Connected-component label per node (undirected), root-minimal."""
        return _components(self.n, self.undirected)


_METADATA_KEYS = {"id", "title", "abstract", "year", "labels", "refs"}
_REQUIRED_KEYS = {"id", "title", "abstract", "year", "labels"}


def _parse_metadata_line(line: str, lineno: int) -> PublicationRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"metadata line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise CorpusFormatError(f"metadata line {lineno}: expected a JSON object")
    unknown = set(obj) - _METADATA_KEYS
    if unknown:
        raise CorpusFormatError(f"metadata line {lineno}: unknown keys {sorted(unknown)}")
    missing = _REQUIRED_KEYS - set(obj)
    if missing:
        raise CorpusFormatError(f"metadata line {lineno}: missing keys {sorted(missing)}")
    pub_id = obj["id"]
    if not isinstance(pub_id, str) or not pub_id:
        raise CorpusFormatError(f"metadata line {lineno}: 'id' must be a non-empty string")
    year = obj["year"]
    if year is not None and not isinstance(year, int):
        raise CorpusFormatError(f"metadata line {lineno}: 'year' must be an integer or null")
    labels = obj["labels"]
    refs = obj.get("refs", [])
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise CorpusFormatError(f"metadata line {lineno}: 'labels' must be an array of strings")
    if not isinstance(refs, list) or not all(isinstance(x, str) for x in refs):
        raise CorpusFormatError(f"metadata line {lineno}: 'refs' must be an array of strings")
    title = obj["title"]
    abstract = obj["abstract"]
    if not isinstance(title, str) or not isinstance(abstract, str):
        raise CorpusFormatError(f"metadata line {lineno}: 'title'/'abstract' must be strings")
    return PublicationRecord(
        pub_id=pub_id,
        title=title,
        abstract=abstract,
        year=year,
        labels=frozenset(labels),
        refs=tuple(refs),
    )


def load_corpus(
    metadata_path: str | Path, edges_path: str | Path
) -> tuple[list[PublicationRecord], list[tuple[str, str]], IngestReport]:
    """Read metadata JSONL and edges TSV.

    Returns records in file order, the deduplicated directed edge list
    restricted to known endpoints, and an IngestReport. Edges whose endpoints
    do not resolve to a record are dropped and listed as unmatched; duplicate
    directed edges are collapsed and counted.
    """
    report = IngestReport()
    records: list[PublicationRecord] = []
    seen_ids: set[str] = set()
    with open(metadata_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = _parse_metadata_line(line, lineno)
            if rec.pub_id in seen_ids:
                raise CorpusFormatError(f"metadata line {lineno}: duplicate pub_id {rec.pub_id!r}")
            seen_ids.add(rec.pub_id)
            if not rec.labels:
                report.unlabeled_records += 1
            records.append(rec)
    report.records = len(records)

    edges: list[tuple[str, str]] = []
    seen_edges: set[tuple[str, str]] = set()
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CorpusFormatError(f"edges line {lineno}: expected 'citing<TAB>cited'")
            report.edge_lines += 1
            citing, cited = parts
            if citing not in seen_ids or cited not in seen_ids:
                report.unmatched_edges += 1
                for pid in (citing, cited):
                    if pid not in seen_ids:
                        report.unmatched_ids.append(pid)
                continue
            if citing == cited:
                report.self_citations += 1
            pair = (citing, cited)
            if pair in seen_edges:
                report.duplicate_edges += 1
                continue
            seen_edges.add(pair)
            edges.append(pair)
    report.directed_edges = len(edges)
    return records, edges, report


def write_metadata(records: Iterable[PublicationRecord], path: str | Path) -> None:
    """Write records as metadata JSONL (inverse of load_corpus)."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.pub_id,
                "title": rec.title,
                "abstract": rec.abstract,
                "year": rec.year,
                "labels": sorted(rec.labels),
                "refs": list(rec.refs),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_edges(edges: Iterable[tuple[str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for citing, cited in edges:
            fh.write(f"{citing}\t{cited}\n")


def normalized_abstract_length(abstract: str) -> int:
    """Character count after collapsing whitespace runs to single spaces."""
    return len(" ".join(abstract.split()))


def apply_filters(
    records: Sequence[PublicationRecord],
    min_abstract_chars: int = 100,
    year_window: tuple[int, int] = (2000, 2024),
) -> tuple[list[PublicationRecord], FilterReport]:
    """Apply the metadata filters in stages: missing metadata, abstract
    length, year window. A record survives iff it has a non-empty title,
    id and year, its normalized abstract has at least ``min_abstract_chars``
    characters, and its year falls inside the inclusive window."""
    if min_abstract_chars < 0:
        raise ValueError("min_abstract_chars must be >= 0")
    lo, hi = year_window
    if lo > hi:
        raise ValueError("year_window must be non-empty")
    report = FilterReport(input_records=len(records))

    stage = [r for r in records if r.pub_id and r.title and r.year is not None]
    report.missing_metadata = len(records) - len(stage)

    stage2 = [r for r in stage if normalized_abstract_length(r.abstract) >= min_abstract_chars]
    report.abstract_too_short = len(stage) - len(stage2)

    stage3 = [r for r in stage2 if lo <= r.year <= hi]
    report.outside_year_window = len(stage2) - len(stage3)

    report.survivors = len(stage3)
    return stage3, report


def _undirected_from_directed(n: int, directed: np.ndarray) -> np.ndarray:
    if len(directed) == 0:
        return np.empty((0, 2), dtype=np.int64)
    u = np.minimum(directed[:, 0], directed[:, 1])
    v = np.maximum(directed[:, 0], directed[:, 1])
    mask = u != v
    pairs = np.stack([u[mask], v[mask]], axis=1)
    if len(pairs) == 0:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.unique(pairs, axis=0)
    return pairs.astype(np.int64)


def build_graph(
    records: Sequence[PublicationRecord], edges: Iterable[tuple[str, str]]
) -> CorpusGraph:
    """Build a CorpusGraph over the given records.

    Node index i corresponds to records[i]. Edges whose endpoints are not in
    the record set are dropped silently here; callers that need the dropped
    count compare edge list lengths.
    """
    ids = tuple(r.pub_id for r in records)
    index_of = {pid: i for i, pid in enumerate(ids)}
    pairs = [
        (index_of[c], index_of[d]) for c, d in edges if c in index_of and d in index_of
    ]
    directed = (
        np.array(pairs, dtype=np.int64) if pairs else np.empty((0, 2), dtype=np.int64)
    )
    undirected = _undirected_from_directed(len(ids), directed)
    return CorpusGraph(n=len(ids), directed=directed, undirected=undirected, ids=ids)


def _components(n: int, undirected: np.ndarray) -> np.ndarray:
    """Union-find with path halving; labels = minimum node index per root."""
    parent = np.arange(n, dtype=np.int64)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in undirected:
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            # keep the smaller index as root so labels are canonical
            if ru < rv:
                parent[rv] = ru
            else:
                parent[ru] = rv
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        labels[i] = find(i)
    return labels


def induced_subgraph(graph: CorpusGraph, keep: np.ndarray) -> CorpusGraph:
    """Subgraph on ``keep`` (sorted node indices) with re-densified indices."""
    keep = np.asarray(keep, dtype=np.int64)
    new_index = np.full(graph.n, -1, dtype=np.int64)
    new_index[keep] = np.arange(len(keep), dtype=np.int64)
    ids = tuple(graph.ids[i] for i in keep)
    if len(graph.directed):
        mask = (new_index[graph.directed[:, 0]] >= 0) & (new_index[graph.directed[:, 1]] >= 0)
        directed = new_index[graph.directed[mask]]
    else:
        directed = np.empty((0, 2), dtype=np.int64)
    undirected = _undirected_from_directed(len(keep), directed)
    return CorpusGraph(n=len(keep), directed=directed, undirected=undirected, ids=ids)


def largest_component(graph: CorpusGraph) -> CorpusGraph:
    """Induced subgraph on the largest undirected connected component.

    Ties between equally large components go to the one containing the
    smallest node index.
    """
    if graph.n == 0:
        return graph
    labels = graph.components()
    roots, counts = np.unique(labels, return_counts=True)
    # roots are minimal member indices; np.unique returns them ascending, so
    # argmax picks the smallest root among maximal counts.
    best_root = roots[np.argmax(counts)]
    keep = np.flatnonzero(labels == best_root)
    return induced_subgraph(graph, keep)


def prune_degree_one(graph: CorpusGraph, fixpoint: bool = False) -> CorpusGraph:
    """Remove nodes of undirected degree exactly one.

    By default a single pass over the input degrees; with ``fixpoint`` the
    pass repeats until no degree-one node remains.
    """
    current = graph
    while True:
        deg = current.degrees()
        keep = np.flatnonzero(deg != 1)
        if len(keep) == current.n:
            return current
        current = induced_subgraph(current, keep)
        if not fixpoint:
            return current


def undirected_projection(graph: CorpusGraph) -> np.ndarray:
    """The simple undirected edge set of the graph, (U, 2) with u < v."""
    return graph.undirected
