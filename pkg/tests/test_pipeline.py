import json
from pathlib import Path

import numpy as np
import pytest

from citeweave.pipeline import (
    PipelineConfig,
    PipelineError,
    RunManifest,
    build_config,
    parse_config_file,
    run_from_manifest,
    run_pipeline,
    stage_seed,
)


def base_config(synth_corpus_dir, out_dir, **kw):
    cfg = dict(
        metadata=synth_corpus_dir["metadata"],
        edges=synth_corpus_dir["edges"],
        vectors=synth_corpus_dir["vectors"],
        ids=synth_corpus_dir["ids"],
        coverage=synth_corpus_dir["coverage"],
        out_dir=out_dir,
        k=5,
        alpha=0.5,
        resolution=0.05,
        quality_function="rb",
        size_threshold=100,
        seed=7,
        year_window=(2000, 2024),
        min_abstract_chars=10,
        use_lcc=False,
        workers=1,
    )
    cfg.update(kw)
    return PipelineConfig(**cfg)


class TestConfigFile:
    def test_parse_types_and_comments(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            "# comment line\n"
            "\n"
            "k = 12\n"
            "alpha=0.25\n"
            "use_lcc = off\n"
            "year_window = 1990:2010\n"
            "quality_function = cpm\n"
            "metadata = meta.jsonl\n"
        )
        values = parse_config_file(path)
        assert values == {
            "k": 12,
            "alpha": 0.25,
            "use_lcc": False,
            "year_window": (1990, 2010),
            "quality_function": "cpm",
            "metadata": Path("meta.jsonl"),
        }

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nope = 3\n")
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_file(path)

    def test_duplicate_key(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("k = 3\nk = 4\n")
        with pytest.raises(ValueError, match="duplicate config key"):
            parse_config_file(path)

    def test_missing_equals(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("just a line\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("k = not-a-number\n")
        with pytest.raises(ValueError, match=":1: bad value for k"):
            parse_config_file(path)

    def test_bad_window_format(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("year_window = 2000-2024\n")
        with pytest.raises(ValueError, match="2000:2024"):
            parse_config_file(path)

    def test_bad_bool(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("use_lcc = maybe\n")
        with pytest.raises(ValueError, match="boolean"):
            parse_config_file(path)


class TestBuildConfig:
    def _required(self, tmp_path):
        files = {}
        for name in ("metadata", "edges", "vectors", "ids"):
            p = tmp_path / name
            p.write_text("")
            files[name] = p
        files["out_dir"] = tmp_path / "out"
        return files

    def test_overrides_beat_file_values(self, tmp_path):
        required = self._required(tmp_path)
        cfg = build_config(dict(required, k=3), {"k": 9})
        assert cfg.k == 9

    def test_none_overrides_ignored(self, tmp_path):
        required = self._required(tmp_path)
        cfg = build_config(dict(required, k=3), {"k": None})
        assert cfg.k == 3

    def test_missing_required(self):
        with pytest.raises(ValueError, match="missing required config keys"):
            build_config({}, {"k": 5})

    def test_unknown_override(self, tmp_path):
        required = self._required(tmp_path)
        with pytest.raises(ValueError, match="unknown config keys"):
            build_config(dict(required), {"bogus": 1})

    def test_validation_runs(self, tmp_path):
        required = self._required(tmp_path)
        with pytest.raises(ValueError, match="alpha"):
            build_config(dict(required), {"alpha": 2.0})
        with pytest.raises(ValueError, match="does not exist"):
            build_config(dict(required, metadata=tmp_path / "missing.jsonl"), None)
        with pytest.raises(ValueError, match="kmeans_k"):
            build_config(dict(required), {"kmeans_k": 1})


class TestStageSeed:
    def test_deterministic_and_distinct(self):
        s1 = stage_seed(42, "leiden-baseline")
        assert s1 == stage_seed(42, "leiden-baseline")
        assert s1 != stage_seed(42, "leiden-weighted")
        assert s1 != stage_seed(43, "leiden-baseline")

    def test_non_negative_int64(self):
        for master in (0, 1, 2**63 - 1, 2**64 - 1):
            for stage in ("a", "b", "kmeans"):
                s = stage_seed(master, stage)
                assert 0 <= s < 2**63

    def test_independent_of_other_stages(self):
        # a stage's seed is a pure function of (master, name); no ordering input
        assert stage_seed(7, "knn") == stage_seed(7, "knn")


@pytest.fixture(scope="module")
def run(synth_corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = base_config(synth_corpus_dir, out, kmeans_k=2)
    manifest = run_pipeline(cfg)
    return out, manifest


class TestRunPipeline:
    def test_artifacts_exist(self, run):
        out, _ = run
        expected = [
            "ingest_report.json",
            "filter_report.json",
            "partition_baseline.csv",
            "homogeneity_baseline.json",
            "links_baseline.csv",
            "confusion_baseline.csv",
            "small_nodes.txt",
            "textual_edges.tsv",
            "weight_histogram.csv",
            "augmented.tsv",
            "bookkeeping.json",
            "partition_unweighted.csv",
            "partition_weighted.csv",
            "partition_kmeans.csv",
            "funnel.json",
            "manifest.json",
        ]
        for name in expected:
            assert (out / name).is_file(), name
        assert not (out / "FAILED").exists()

    def test_manifest_counts(self, run):
        out, manifest = run
        assert manifest.counts["graph"]["n"] == 500
        assert manifest.counts["baseline"]["clusters"] >= 7  # 2 communities + 6 fragments
        assert manifest.counts["augment"]["e_total"] == (
            manifest.counts["augment"]["e_citing"]
            + manifest.counts["augment"]["e_textual"]
            - manifest.counts["augment"]["e_overlap"]
        )
        assert manifest.counts["primary"] == "unweighted"
        assert manifest.backend in ("pure", "cython")
        saved = RunManifest.load(out / "manifest.json")
        assert saved.counts == manifest.counts
        assert saved.seeds == manifest.seeds

    def test_repair_reduces_clusters(self, run):
        _, manifest = run
        assert manifest.counts["unweighted"]["clusters"] < manifest.counts["baseline"]["clusters"]

    def test_all_stages_timed(self, run):
        _, manifest = run
        for stage in (
            "ingest",
            "filter",
            "lcc",
            "prune",
            "embeddings",
            "leiden-baseline",
            "select",
            "knn",
            "weigh",
            "blend",
            "leiden-unweighted",
            "leiden-weighted",
            "funnel",
            "kmeans",
        ):
            assert stage in manifest.timings

    def test_funnel_written_with_counts(self, run):
        out, manifest = run
        payload = json.loads((out / "funnel.json").read_text())
        assert payload["total_refs"] == manifest.counts["funnel"]["total_refs"]
        assert payload["total_refs"] >= payload["in_coverage"] >= payload["in_graph"]

    def test_replay_is_byte_identical(self, run, tmp_path_factory):
        out, _ = run
        replay = tmp_path_factory.mktemp("replay")
        run_from_manifest(out / "manifest.json", replay)
        for name in (
            "partition_baseline.csv",
            "partition_unweighted.csv",
            "partition_weighted.csv",
            "partition_kmeans.csv",
            "bookkeeping.json",
            "textual_edges.tsv",
            "augmented.tsv",
        ):
            assert (replay / name).read_bytes() == (out / name).read_bytes(), name

    def test_seed_changes_baseline_seed(self, synth_corpus_dir, tmp_path, run):
        _, manifest = run
        assert manifest.seeds["leiden-baseline"] == stage_seed(7, "leiden-baseline")


class TestPipelineInvariants:
    def test_alpha_zero_weighted_matches_citing_only_clustering(
        self, synth_corpus_dir, tmp_path
    ):
        # alpha = 0 blends down to the pure citation indicator, so the
        # weighted partition must match clustering the citation pairs with
        # unit weights and the same seed
        from citeweave.community import QualityConfig, leiden
        from citeweave.corpus import load_corpus, apply_filters, build_graph
        from citeweave.augment import blend, weight_citation_edges, weighted_view
        from citeweave.embedding import bind_to_graph, load_embeddings, normalize_rows
        from citeweave.knn import knn_search, neighbor_lists_to_edges
        from citeweave.augment import select_small_cluster_nodes

        out = tmp_path / "a0"
        cfg = base_config(synth_corpus_dir, out, alpha=0.0)
        manifest = run_pipeline(cfg)

        records, edge_ids, _ = load_corpus(cfg.metadata, cfg.edges)
        kept, _ = apply_filters(
            records, min_abstract_chars=cfg.min_abstract_chars, year_window=cfg.year_window
        )
        graph = build_graph(kept, edge_ids)
        seed_w = manifest.seeds["leiden-weighted"]
        qc = QualityConfig(
            function="rb", resolution=cfg.resolution, use_weights=True, seed=seed_w
        )
        # all blended weights are 0 or 1; surviving edges are citation pairs
        matrix = normalize_rows(
            bind_to_graph(load_embeddings(cfg.vectors, cfg.ids), graph, allow_extra=True)
        )
        citing = weight_citation_edges(graph, matrix)
        baseline_seed = manifest.seeds["leiden-baseline"]
        base = leiden(
            graph.undirected,
            graph.n,
            QualityConfig(function="rb", resolution=cfg.resolution, seed=baseline_seed),
        )
        small = sorted(select_small_cluster_nodes(base, cfg.size_threshold))
        lists = knn_search(
            np.array(small, dtype=np.int64), np.arange(graph.n, dtype=np.int64), matrix, cfg.k
        )
        textual = neighbor_lists_to_edges(lists, matrix)
        aug = blend(textual, citing, alpha=0.0)
        pairs_w, w = weighted_view(aug)
        expect = leiden(pairs_w, graph.n, qc, weights=w)

        got = (out / "partition_weighted.csv").read_text()
        lines = got.splitlines()[1:]
        got_assign = np.array([int(line.split(",")[1]) for line in lines])
        assert np.array_equal(got_assign, expect.assignment)

    def test_failed_marker_names_stage(self, synth_corpus_dir, tmp_path):
        bad_vectors = tmp_path / "bad.emb1"
        bad_vectors.write_text("not an emb1 file\n")
        out = tmp_path / "out"
        cfg = base_config(synth_corpus_dir, out, vectors=bad_vectors)
        with pytest.raises(PipelineError) as exc_info:
            run_pipeline(cfg)
        assert exc_info.value.stage == "embeddings"
        marker = (out / "FAILED").read_text()
        assert "stage: embeddings" in marker
        assert "cause:" in marker

    def test_failed_marker_cleared_on_success(self, synth_corpus_dir, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        (out / "FAILED").write_text("stage: old\n")
        run_pipeline(base_config(synth_corpus_dir, out))
        assert not (out / "FAILED").exists()

    def test_validation_failures_use_value_error(self, synth_corpus_dir, tmp_path):
        with pytest.raises(ValueError, match="does not exist"):
            run_pipeline(
                base_config(synth_corpus_dir, tmp_path / "o", metadata=tmp_path / "nope")
            )
