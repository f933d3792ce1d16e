"""Command-line entry points for every pipeline stage.

Exit codes: 0 on success, 1 on validation problems (bad flags, malformed
or missing inputs), 2 on runtime failures.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .augment import (
    blend,
    select_small_cluster_nodes,
    weight_citation_edges,
    write_augmented_tsv,
    write_bookkeeping_json,
)
from .community import (
    KMeansConfig,
    QualityConfig,
    kmeans as kmeans_fit,
    leiden,
    quality,
    read_partition_csv,
    write_partition_csv,
)
from .corpus import (
    CorpusFormatError,
    apply_filters,
    build_graph,
    largest_component,
    load_corpus,
    prune_degree_one,
    write_edges,
    write_metadata,
)
from .embedding import (
    EmbeddingFormatError,
    bind_to_graph,
    load_embeddings,
    normalize_rows,
    save_embeddings,
    embed_via_service,
)
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
from .pipeline import (
    PipelineError,
    build_config,
    parse_config_file,
    run_from_manifest,
    run_pipeline,
)
from .synth import (
    FragmentSpec,
    PlantedSpec,
    PRESETS,
    emit_corpus,
    fragment,
    planted_graph,
    planted_membership,
    preset,
)

_IN = click.Path(exists=True, dir_okay=False, path_type=Path)
_OUT_DIR = click.Path(file_okay=False, path_type=Path)


def _window(ctx, param, value):
    if value is None:
        return None
    lo, sep, hi = value.partition(":")
    try:
        if not sep:
            raise ValueError
        return int(lo), int(hi)
    except ValueError:
        raise click.BadParameter(f"expected LO:HI, got {value!r}") from None


def _pair(ctx, param, value):
    if value is None:
        return None
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2 or not all(parts):
        raise click.BadParameter(f"expected two comma-separated labels, got {value!r}")
    return (parts[0], parts[1])


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        return tuple(int(p) for p in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}") from None


@click.group()
@click.version_option(__version__, prog_name="citeweave")
def cli() -> None:
    """Repair fragmented citation networks with embedding-similarity edges."""


@cli.command()
@click.option("--metadata", type=_IN, required=True, help="Metadata JSONL file.")
@click.option("--edges", type=_IN, required=True, help="Citations TSV (citing<TAB>cited).")
@click.option("--out", type=_OUT_DIR, required=True, help="Output directory.")
@click.option("--min-abstract-chars", type=int, default=100, show_default=True)
@click.option("--year-window", callback=_window, default="2000:2024", show_default=True)
@click.option("--lcc/--no-lcc", "use_lcc", default=True, show_default=True)
@click.option("--prune/--no-prune", "use_prune", default=False, show_default=True)
def ingest(metadata, edges, out, min_abstract_chars, year_window, use_lcc, use_prune):
    """Load, filter and store a corpus graph plus ingest/filter reports."""
    out.mkdir(parents=True, exist_ok=True)
    records, edge_ids, ingest_rep = load_corpus(metadata, edges)
    kept, filter_rep = apply_filters(
        records, min_abstract_chars=min_abstract_chars, year_window=year_window
    )
    graph = build_graph(kept, edge_ids)
    filter_rep.edges_dropped_by_filters = len(edge_ids) - len(graph.directed)
    if use_lcc:
        reduced = largest_component(graph)
        filter_rep.lcc_removed = graph.n - reduced.n
        graph = reduced
    if use_prune:
        reduced = prune_degree_one(graph)
        filter_rep.degree_one_removed += graph.n - reduced.n
        graph = reduced
    (out / "ingest_report.json").write_text(ingest_rep.to_json(), encoding="utf-8")
    (out / "filter_report.json").write_text(filter_rep.to_json(), encoding="utf-8")
    keep_ids = set(graph.ids)
    rec_of = {r.pub_id: r for r in records}
    write_metadata((rec_of[pid] for pid in graph.ids), out / "metadata_filtered.jsonl")
    write_edges(
        ((graph.ids[int(c)], graph.ids[int(d)]) for c, d in graph.directed),
        out / "graph_edges.tsv",
    )
    click.echo(f"nodes: {graph.n}  edges: {len(graph.undirected)}  (of {len(records)} records)")


@cli.command()
@click.option("--metadata", type=_IN, required=True)
@click.option("--edges", type=_IN, required=True)
@click.option("--out", type=_OUT_DIR, required=True)
@click.option("--resolution", type=float, default=0.05, show_default=True)
@click.option("--quality", "quality_function", type=click.Choice(["rb", "cpm"]), default="rb", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def cluster(metadata, edges, out, resolution, quality_function, seed):
    """Cluster a stored graph; write the partition CSV and a quality report."""
    out.mkdir(parents=True, exist_ok=True)
    records, edge_ids, _ = load_corpus(metadata, edges)
    graph = build_graph(records, edge_ids)
    cfg = QualityConfig(function=quality_function, resolution=resolution, seed=seed)
    part = leiden(graph.undirected, graph.n, cfg)
    write_partition_csv(part, graph.ids, out / "partition.csv")
    q = quality(graph.undirected, graph.n, part, cfg)
    report = {
        "clusters": part.n_clusters,
        "quality": q,
        "quality_function": quality_function,
        "resolution": resolution,
        "seed": seed,
        "sizes": [int(s) for s in part.sizes],
    }
    (out / "cluster_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"clusters: {part.n_clusters}  quality: {q:.6f}")


@cli.command()
@click.option("--metadata", type=_IN, required=True)
@click.option("--edges", type=_IN, required=True)
@click.option("--vectors", type=_IN, required=True)
@click.option("--ids", type=_IN, required=True)
@click.option("--partition", type=_IN, required=True, help="Baseline partition CSV.")
@click.option("--out", type=_OUT_DIR, required=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--alpha", type=float, default=0.5, show_default=True)
@click.option("--small-threshold", type=int, default=1000, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
def augment(metadata, edges, vectors, ids, partition, out, k, alpha, small_threshold, workers):
    """Add nearest-neighbor edges for small-cluster members and blend weights."""
    out.mkdir(parents=True, exist_ok=True)
    records, edge_ids, _ = load_corpus(metadata, edges)
    graph = build_graph(records, edge_ids)
    matrix = normalize_rows(bind_to_graph(load_embeddings(vectors, ids), graph, allow_extra=True))
    part = read_partition_csv(partition, graph.index_of)
    small = sorted(select_small_cluster_nodes(part, small_threshold))
    lists = knn_search(
        np.array(small, dtype=np.int64), np.arange(graph.n, dtype=np.int64), matrix, k, workers=workers
    )
    textual = neighbor_lists_to_edges(lists, matrix)
    write_textual_edges(textual, graph.ids, out / "textual_edges.tsv")
    citing = weight_citation_edges(graph, matrix)
    augmented = blend(textual, citing, alpha)
    write_augmented_tsv(augmented, graph.ids, out / "augmented.tsv")
    write_bookkeeping_json(augmented, out / "bookkeeping.json")
    bk = augmented.bookkeeping
    click.echo(
        f"small nodes: {len(small)}  textual: {bk['e_textual']}  "
        f"citing: {bk['e_citing']}  overlap: {bk['e_overlap']}  total: {bk['e_total']}"
    )


@cli.command()
@click.option("--metadata", type=_IN, required=True)
@click.option("--edges", type=_IN, required=True)
@click.option("--vectors", type=_IN, required=True)
@click.option("--ids", type=_IN, required=True)
@click.option("--out", type=_OUT_DIR, required=True)
def weigh(metadata, edges, vectors, ids, out):
    """Weight every citation edge by endpoint cosine similarity."""
    out.mkdir(parents=True, exist_ok=True)
    records, edge_ids, _ = load_corpus(metadata, edges)
    graph = build_graph(records, edge_ids)
    matrix = normalize_rows(bind_to_graph(load_embeddings(vectors, ids), graph, allow_extra=True))
    citing = weight_citation_edges(graph, matrix)
    with open(out / "citing_weights.tsv", "w", encoding="utf-8") as fh:
        for (u, v), w in zip(citing.pairs, citing.weights):
            fh.write(f"{graph.ids[int(u)]}\t{graph.ids[int(v)]}\t{w:.6f}\n")
    write_histogram_csv(
        weight_histogram(np.clip(citing.weights, 0.0, 1.0)), out / "weight_histogram.csv"
    )
    click.echo(f"weighted edges: {len(citing.pairs)}")


@cli.command()
@click.option("--metadata", type=_IN, required=True)
@click.option("--edges", type=_IN, required=True)
@click.option("--partition", type=_IN, required=True)
@click.option("--out", type=_OUT_DIR, required=True)
@click.option("--label-pair", callback=_pair, default=None, help="Two labels, comma separated.")
@click.option("--coverage", type=_IN, default=None, help="Allowlist of covered pub ids.")
@click.option("--year-window", callback=_window, default="2000:2024", show_default=True)
def metrics(metadata, edges, partition, out, label_pair, coverage, year_window):
    """Evaluate a stored partition: homogeneity, links, confusion, funnel."""
    out.mkdir(parents=True, exist_ok=True)
    records, edge_ids, _ = load_corpus(metadata, edges)
    graph = build_graph(records, edge_ids)
    part = read_partition_csv(partition, graph.index_of)
    rec_of = {r.pub_id: r for r in records}
    bound = [rec_of[pid] for pid in graph.ids]
    report = homogeneity(part, bound)
    (out / "homogeneity.json").write_text(report.to_json(label_pair), encoding="utf-8")
    write_link_csv(link_distribution(part, graph.undirected), out / "links.csv")
    if label_pair is not None:
        write_confusion_csv(confusion(part, bound, label_pair), out / "confusion.csv")
    if coverage is not None:
        allow = frozenset(
            line.strip() for line in coverage.read_text(encoding="utf-8").splitlines() if line.strip()
        )
        funnel = retention_funnel(bound, allow, year_window, graph)
        (out / "funnel.json").write_text(funnel.to_json(), encoding="utf-8")
    click.echo(f"clusters: {part.n_clusters}")


@cli.command()
@click.option("--vectors", type=_IN, required=True)
@click.option("--ids", type=_IN, required=True)
@click.option("--kmeans-k", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-iter", type=int, default=300, show_default=True)
@click.option("--out", type=_OUT_DIR, required=True)
def kmeans(vectors, ids, kmeans_k, seed, max_iter, out):
    """Cluster embedding vectors directly with k-means."""
    out.mkdir(parents=True, exist_ok=True)
    matrix = load_embeddings(vectors, ids)
    trace: list[float] = []
    part = kmeans_fit(matrix, KMeansConfig(k=kmeans_k, seed=seed, max_iter=max_iter), trace=trace)
    write_partition_csv(part, matrix.ids, out / "partition_kmeans.csv")
    report = {
        "clusters": part.n_clusters,
        "sizes": [int(s) for s in part.sizes],
        "inertia": trace[-1] if trace else None,
        "iterations": len(trace),
        "seed": seed,
    }
    (out / "kmeans_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(f"clusters: {part.n_clusters}  inertia: {report['inertia']}")


@cli.command()
@click.option("--preset", "preset_name", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--sizes", callback=_int_list, default=None, help="Community sizes, e.g. 2000,1000.")
@click.option("--p-intra", type=float, default=0.01, show_default=True)
@click.option("--p-inter", type=float, default=0.0005, show_default=True)
@click.option("--embed-dim", type=int, default=64, show_default=True)
@click.option("--separation", type=float, default=0.3, show_default=True)
@click.option("--noise-sigma", type=float, default=0.1, show_default=True)
@click.option("--fragments", type=int, default=0, show_default=True)
@click.option("--fragment-size", callback=_window, default="8:20", show_default=True)
@click.option("--source-community", type=int, default=0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=_OUT_DIR, required=True)
def synth(preset_name, sizes, p_intra, p_inter, embed_dim, separation, noise_sigma,
          fragments, fragment_size, source_community, seed, out):
    """Generate a synthetic corpus (metadata, edges, embeddings)."""
    if (preset_name is None) == (sizes is None):
        raise click.UsageError("pass exactly one of --preset or --sizes")
    if preset_name is not None:
        planted_spec, fragment_spec = preset(preset_name, seed=seed)
    else:
        planted_spec = PlantedSpec(
            community_sizes=sizes,
            p_intra=p_intra,
            p_inter=p_inter,
            embed_dim=embed_dim,
            center_separation=separation,
            noise_sigma=noise_sigma,
            seed=seed,
        )
        fragment_spec = (
            FragmentSpec(
                fragment_count=fragments,
                fragment_size_range=fragment_size,
                source_community=source_community,
                seed=seed + 1,
            )
            if fragments > 0
            else None
        )
    graph, records, matrix = planted_graph(planted_spec)
    components_before = len(np.unique(graph.components()))
    edges_before = len(graph.undirected)
    if fragment_spec is not None and fragment_spec.fragment_count > 0:
        graph = fragment(graph, planted_membership(records), fragment_spec)
    paths = emit_corpus(records, graph, matrix, out)
    report = {
        "n": graph.n,
        "communities": len(planted_spec.community_sizes),
        "components_before": components_before,
        "components_after": len(np.unique(graph.components())),
        "edges_before": edges_before,
        "edges_after": len(graph.undirected),
        "seed": seed,
    }
    (out / "synth_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    click.echo(
        f"n: {report['n']}  edges: {report['edges_after']}  "
        f"components: {report['components_after']}  files: {', '.join(p.name for p in paths.values())}"
    )


@cli.command()
@click.option("--config", "config_path", type=_IN, default=None, help="Flat key = value config file.")
@click.option("--from-manifest", type=_IN, default=None, help="Re-run a recorded pipeline.")
@click.option("--metadata", type=_IN, default=None)
@click.option("--edges", type=_IN, default=None)
@click.option("--vectors", type=_IN, default=None)
@click.option("--ids", type=_IN, default=None)
@click.option("--coverage", type=_IN, default=None)
@click.option("--out", "out_dir", type=_OUT_DIR, default=None, help="Output directory.")
@click.option("--k", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--resolution", type=float, default=None)
@click.option("--quality", "quality_function", type=click.Choice(["rb", "cpm"]), default=None)
@click.option("--weighted/--unweighted", "use_weights", default=None)
@click.option("--small-threshold", "size_threshold", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--year-window", callback=_window, default=None)
@click.option("--min-abstract-chars", type=int, default=None)
@click.option("--lcc/--no-lcc", "use_lcc", default=None)
@click.option("--prune/--no-prune", "prune", default=None)
@click.option("--kmeans-k", type=int, default=None)
@click.option("--workers", type=int, default=None)
def pipeline(config_path, from_manifest, **overrides):
    """Run the full experiment pipeline from a config file and/or flags."""
    if from_manifest is not None:
        extra = [k for k, v in overrides.items() if v is not None and k != "out_dir"]
        if config_path is not None or extra:
            raise click.UsageError("--from-manifest only combines with --out")
        manifest = run_from_manifest(from_manifest, out_dir=overrides.get("out_dir"))
    else:
        file_values = parse_config_file(config_path) if config_path is not None else {}
        if "prune" in overrides:
            overrides["prune_degree_one"] = overrides.pop("prune")
        cfg = build_config(file_values, overrides)
        manifest = run_pipeline(cfg)
    c = manifest.counts
    click.echo(
        "clusters: baseline={} unweighted={} weighted={}".format(
            c["baseline"]["clusters"], c["unweighted"]["clusters"], c["weighted"]["clusters"]
        )
    )
    click.echo(f"manifest: {Path(manifest.config['out_dir']) / 'manifest.json'}")


@cli.command()
@click.option("--metadata", type=_IN, required=True)
@click.option("--vectors", "vectors_out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--ids", "ids_out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
def embed(metadata, vectors_out, ids_out, batch_size, workers):
    """Fetch embeddings from the service named by CITEWEAVE_EMBED_URL."""
    endpoint = os.environ.get("CITEWEAVE_EMBED_URL")
    if not endpoint:
        raise click.UsageError("CITEWEAVE_EMBED_URL is not set")
    records, _, _ = load_corpus(metadata, os.devnull)
    matrix = embed_via_service(records, endpoint, batch_size=batch_size, workers=workers)
    save_embeddings(matrix, vectors_out, ids_out)
    click.echo(f"embedded {matrix.n} records at dimension {matrix.d}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except PipelineError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1 if isinstance(exc.cause, (ValueError, OSError)) else 2
    except (ValueError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 2
    except Exception as exc:  # anything else is a runtime failure
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
