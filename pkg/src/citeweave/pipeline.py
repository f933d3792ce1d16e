"""End-to-end orchestration: ingest, cluster, augment, re-cluster, report.

A run reads a publication corpus plus embeddings, computes a baseline
clustering, repairs fragmentation by adding nearest-neighbor similarity
edges for members of small clusters, re-clusters the augmented graph both
unweighted and weighted, and writes every report under one output
directory together with a manifest sufficient to reproduce the run
byte-for-byte (timings aside).

Configuration comes from a flat ``key = value`` text file whose keys match
PipelineConfig field names exactly; command-line flags override file
values. Every randomized stage derives its seed from the master seed keyed
by the stage name, so adding a stage never disturbs earlier stages.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .augment import (
    blend,
    select_small_cluster_nodes,
    unweighted_view,
    weight_citation_edges,
    weighted_view,
    write_augmented_tsv,
    write_bookkeeping_json,
)
from .community import (
    KMeansConfig,
    Partition,
    QualityConfig,
    kmeans,
    leiden,
    quality,
    write_partition_csv,
)
from .corpus import (
    apply_filters,
    build_graph,
    largest_component,
    load_corpus,
    prune_degree_one,
)
from .embedding import bind_to_graph, load_embeddings, normalize_rows
from .kernels import BACKEND
from .knn import knn_search, neighbor_lists_to_edges, write_textual_edges
from .metrics import (
    confusion,
    homogeneity,
    link_distribution,
    retention_funnel,
    weight_histogram,
    write_confusion_csv,
    write_histogram_csv,
    write_link_csv,
)

__all__ = [
    "PipelineConfig",
    "RunManifest",
    "PipelineError",
    "parse_config_file",
    "build_config",
    "stage_seed",
    "run_pipeline",
    "run_from_manifest",
]

_QUALITIES = ("rb", "cpm")


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name and the original cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Everything a run needs. Paths are resolved at validation time."""

    metadata: Path
    edges: Path
    vectors: Path
    ids: Path
    out_dir: Path
    coverage: Path | None = None
    k: int = 10
    alpha: float = 0.5
    resolution: float = 0.05
    quality_function: str = "rb"
    use_weights: bool = False
    size_threshold: int = 1000
    seed: int = 0
    year_window: tuple[int, int] = (2000, 2024)
    min_abstract_chars: int = 100
    use_lcc: bool = True
    prune_degree_one: bool = False
    kmeans_k: int = 0
    workers: int = 1

    def validate(self) -> None:
        for name in ("metadata", "edges", "vectors", "ids", "coverage"):
            p = getattr(self, name)
            if p is None:
                continue
            p = Path(p)
            object.__setattr__(self, name, p)
            if not p.is_file():
                raise ValueError(f"{name} file does not exist: {p}")
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be > 0")
        if self.quality_function not in _QUALITIES:
            raise ValueError(f"quality_function must be one of {_QUALITIES}")
        if self.size_threshold < 1:
            raise ValueError("size_threshold must be >= 1")
        lo, hi = self.year_window
        if lo > hi:
            raise ValueError(f"empty year_window [{lo}, {hi}]")
        if self.min_abstract_chars < 0:
            raise ValueError("min_abstract_chars must be >= 0")
        if self.kmeans_k < 0 or self.kmeans_k == 1:
            raise ValueError("kmeans_k must be 0 (skip) or >= 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def snapshot(self) -> dict:
        out: dict = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = str(v.resolve())
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_window(raw: str) -> tuple[int, int]:
    lo, sep, hi = raw.partition(":")
    if not sep:
        raise ValueError(f"year_window must look like 2000:2024, got {raw!r}")
    return int(lo), int(hi)


_PARSERS: dict[str, object] = {
    "metadata": Path,
    "edges": Path,
    "vectors": Path,
    "ids": Path,
    "coverage": Path,
    "out_dir": Path,
    "k": int,
    "alpha": float,
    "resolution": float,
    "quality_function": str,
    "use_weights": _parse_bool,
    "size_threshold": int,
    "seed": int,
    "year_window": _parse_window,
    "min_abstract_chars": int,
    "use_lcc": _parse_bool,
    "prune_degree_one": _parse_bool,
    "kmeans_k": int,
    "workers": int,
}


def parse_config_file(path: str | Path) -> dict:
    """Read a flat ``key = value`` file into typed config values.

    Blank lines and ``#`` comments are skipped; keys must match
    PipelineConfig field names.
    """
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {stripped!r}")
        key = key.strip()
        raw = raw.strip()
        if key not in _PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
        try:
            values[key] = _PARSERS[key](raw)  # type: ignore[operator]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return values


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Merge config-file values with (higher-priority) flag overrides."""
    merged: dict = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    required = {"metadata", "edges", "vectors", "ids", "out_dir"}
    missing = sorted(required - set(merged))
    if missing:
        raise ValueError(f"missing required config keys: {', '.join(missing)}")
    unknown = sorted(set(merged) - set(_PARSERS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    cfg = PipelineConfig(**merged)
    cfg.validate()
    return cfg


def stage_seed(master: int, stage: str) -> int:
    """Per-stage seed keyed on the stage name.

    Independent of stage order, so inserting a stage leaves the seeds of
    the existing ones unchanged.
    """
    key = (master & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(stage.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF


@dataclass
class RunManifest:
    """Reproducibility record for one pipeline run."""

    version: str
    backend: str
    config: dict
    seeds: dict
    counts: dict
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            version=data["version"],
            backend=data["backend"],
            config=data["config"],
            seeds=data["seeds"],
            counts=data["counts"],
            timings=data.get("timings", {}),
        )


class _StageClock:
    def __init__(self) -> None:
        self.timings: dict[str, float] = {}
        self._name: str | None = None
        self._t0 = 0.0

    def stage(self, name: str) -> "_StageClock":
        self._name = name
        return self

    def __enter__(self) -> None:
        self._t0 = time.perf_counter()

    def __exit__(self, exc_type, exc, tb) -> None:
        assert self._name is not None
        self.timings[self._name] = round(time.perf_counter() - self._t0, 6)
        name, self._name = self._name, None
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(name, exc) from exc


def _label_pair(records) -> tuple[str, str] | None:
    tally: Counter[str] = Counter()
    for rec in records:
        tally.update(rec.labels)
    if len(tally) < 2:
        return None
    (l1, _), (l2, _) = sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))[:2]
    return (l1, l2)


def _partition_reports(
    tag: str,
    part: Partition,
    graph_ids,
    records,
    edge_pairs: np.ndarray,
    label_pair: tuple[str, str] | None,
    out: Path,
) -> dict:
    write_partition_csv(part, graph_ids, out / f"partition_{tag}.csv")
    report = homogeneity(part, records)
    (out / f"homogeneity_{tag}.json").write_text(report.to_json(label_pair), encoding="utf-8")
    write_link_csv(link_distribution(part, edge_pairs), out / f"links_{tag}.csv")
    if label_pair is not None:
        write_confusion_csv(confusion(part, records, label_pair), out / f"confusion_{tag}.csv")
    return {"clusters": part.n_clusters, "largest_sizes": [int(s) for s in part.sizes[:5]]}


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Run every stage, write all reports under cfg.out_dir, return the manifest.

    Any stage failure leaves the outputs written so far in place, adds a
    FAILED marker naming the stage and cause, and raises PipelineError.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failed_marker = out / "FAILED"
    if failed_marker.exists():
        failed_marker.unlink()

    clock = _StageClock()
    seeds = {
        name: stage_seed(cfg.seed, name)
        for name in ("leiden-baseline", "leiden-unweighted", "leiden-weighted", "kmeans")
    }
    counts: dict = {}
    try:
        with clock.stage("ingest"):
            records, edge_ids, ingest_rep = load_corpus(cfg.metadata, cfg.edges)
            (out / "ingest_report.json").write_text(ingest_rep.to_json(), encoding="utf-8")
            counts["ingest"] = {
                "records": ingest_rep.records,
                "directed_edges": ingest_rep.directed_edges,
                "duplicate_edges": ingest_rep.duplicate_edges,
                "unmatched_edges": ingest_rep.unmatched_edges,
            }

        with clock.stage("filter"):
            kept, filter_rep = apply_filters(
                records,
                min_abstract_chars=cfg.min_abstract_chars,
                year_window=cfg.year_window,
            )
            graph = build_graph(kept, edge_ids)
            filter_rep.edges_dropped_by_filters = len(edge_ids) - len(graph.directed)

        with clock.stage("lcc"):
            if cfg.use_lcc:
                reduced = largest_component(graph)
                filter_rep.lcc_removed = graph.n - reduced.n
                graph = reduced

        with clock.stage("prune"):
            if cfg.prune_degree_one:
                reduced = prune_degree_one(graph)
                filter_rep.degree_one_removed += graph.n - reduced.n
                graph = reduced
            (out / "filter_report.json").write_text(filter_rep.to_json(), encoding="utf-8")
            counts["graph"] = {"n": graph.n, "undirected_edges": len(graph.undirected)}

        with clock.stage("embeddings"):
            matrix = normalize_rows(bind_to_graph(load_embeddings(cfg.vectors, cfg.ids), graph, allow_extra=True))
            rec_of = {rec.pub_id: rec for rec in records}
            bound_records = [rec_of[pid] for pid in graph.ids]
            label_pair = _label_pair(bound_records)

        with clock.stage("leiden-baseline"):
            base_cfg = QualityConfig(
                function=cfg.quality_function,
                resolution=cfg.resolution,
                seed=seeds["leiden-baseline"],
            )
            baseline = leiden(graph.undirected, graph.n, base_cfg)
            counts["baseline"] = _partition_reports(
                "baseline", baseline, graph.ids, bound_records, graph.undirected, label_pair, out
            )
            counts["baseline"]["quality"] = quality(graph.undirected, graph.n, baseline, base_cfg)

        with clock.stage("select"):
            small = select_small_cluster_nodes(baseline, cfg.size_threshold)
            small_sorted = sorted(small)
            (out / "small_nodes.txt").write_text(
                "".join(graph.ids[i] + "\n" for i in small_sorted), encoding="utf-8"
            )
            counts["small_nodes"] = len(small)

        with clock.stage("knn"):
            lists = knn_search(
                np.array(small_sorted, dtype=np.int64),
                np.arange(graph.n, dtype=np.int64),
                matrix,
                cfg.k,
                workers=cfg.workers,
            )
            textual = neighbor_lists_to_edges(lists, matrix)
            write_textual_edges(textual, graph.ids, out / "textual_edges.tsv")
            counts["textual_edges"] = len(textual.pairs)

        with clock.stage("weigh"):
            citing = weight_citation_edges(graph, matrix)
            hist = weight_histogram(np.clip(citing.weights, 0.0, 1.0))
            write_histogram_csv(hist, out / "weight_histogram.csv")

        with clock.stage("blend"):
            augmented = blend(textual, citing, cfg.alpha)
            write_augmented_tsv(augmented, graph.ids, out / "augmented.tsv")
            write_bookkeeping_json(augmented, out / "bookkeeping.json")
            counts["augment"] = dict(augmented.bookkeeping)

        with clock.stage("leiden-unweighted"):
            pairs_u, _ = unweighted_view(augmented)
            cfg_u = QualityConfig(
                function=cfg.quality_function,
                resolution=cfg.resolution,
                seed=seeds["leiden-unweighted"],
            )
            part_u = leiden(pairs_u, graph.n, cfg_u)
            counts["unweighted"] = _partition_reports(
                "unweighted", part_u, graph.ids, bound_records, pairs_u, label_pair, out
            )
            counts["unweighted"]["quality"] = quality(pairs_u, graph.n, part_u, cfg_u)

        with clock.stage("leiden-weighted"):
            pairs_w, w_blend = weighted_view(augmented)
            cfg_w = QualityConfig(
                function=cfg.quality_function,
                resolution=cfg.resolution,
                use_weights=True,
                seed=seeds["leiden-weighted"],
            )
            part_w = leiden(pairs_w, graph.n, cfg_w, weights=w_blend)
            counts["weighted"] = _partition_reports(
                "weighted", part_w, graph.ids, bound_records, pairs_w, label_pair, out
            )
            counts["weighted"]["quality"] = quality(pairs_w, graph.n, part_w, cfg_w, weights=w_blend)

        with clock.stage("funnel"):
            if cfg.coverage is not None:
                allow = frozenset(
                    line.strip()
                    for line in Path(cfg.coverage).read_text(encoding="utf-8").splitlines()
                    if line.strip()
                )
                year_of = {rec.pub_id: rec.year for rec in records}
                funnel = retention_funnel(
                    [bound_records[i] for i in small_sorted],
                    allow,
                    cfg.year_window,
                    graph,
                    year_of=year_of,
                )
                (out / "funnel.json").write_text(funnel.to_json(), encoding="utf-8")
                counts["funnel"] = {
                    "total_refs": funnel.total_refs,
                    "in_graph": funnel.in_graph,
                }

        with clock.stage("kmeans"):
            if cfg.kmeans_k >= 2:
                part_k = kmeans(matrix, KMeansConfig(k=cfg.kmeans_k, seed=seeds["kmeans"]))
                counts["kmeans"] = _partition_reports(
                    "kmeans", part_k, graph.ids, bound_records, graph.undirected, label_pair, out
                )

        counts["primary"] = "weighted" if cfg.use_weights else "unweighted"
        manifest = RunManifest(
            version=__version__,
            backend=BACKEND,
            config=cfg.snapshot(),
            seeds=seeds,
            counts=counts,
            timings=clock.timings,
        )
        manifest.save(out / "manifest.json")
        return manifest
    except PipelineError as err:
        failed_marker.write_text(f"stage: {err.stage}\ncause: {err.cause!r}\n", encoding="utf-8")
        raise


def run_from_manifest(manifest_path: str | Path, out_dir: str | Path | None = None) -> RunManifest:
    """Re-run a recorded pipeline; same inputs and seeds, optional new out_dir.

    With unchanged input files this reproduces partition CSVs and
    bookkeeping JSON byte for byte.
    """
    manifest = RunManifest.load(manifest_path)
    raw = dict(manifest.config)
    raw["year_window"] = tuple(raw["year_window"])
    for name in ("metadata", "edges", "vectors", "ids", "coverage", "out_dir"):
        if raw.get(name) is not None:
            raw[name] = Path(raw[name])
    if out_dir is not None:
        raw["out_dir"] = Path(out_dir)
    cfg = PipelineConfig(**raw)
    return run_pipeline(cfg)
