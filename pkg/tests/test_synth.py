import numpy as np
import pytest

from citeweave.community import QualityConfig, leiden
from citeweave.embedding import pairwise_cosine
from citeweave.synth import (
    FragmentSpec,
    PlantedSpec,
    PRESETS,
    emit_corpus,
    fragment,
    planted_graph,
    planted_membership,
    preset,
)

from conftest import ari, connected_components_oracle


class TestSpecs:
    def test_planted_validation(self):
        with pytest.raises(ValueError, match="non-empty"):
            PlantedSpec(community_sizes=(), p_intra=0.1, p_inter=0.01)
        with pytest.raises(ValueError, match="exceed"):
            PlantedSpec(community_sizes=(10,), p_intra=0.01, p_inter=0.01)
        with pytest.raises(ValueError, match="too small"):
            PlantedSpec(community_sizes=(5, 5, 5), p_intra=0.5, p_inter=0.01, embed_dim=3)
        with pytest.raises(ValueError, match="separation"):
            PlantedSpec(community_sizes=(5,), p_intra=0.5, p_inter=0.01, center_separation=1.0)

    def test_fragment_validation(self):
        with pytest.raises(ValueError):
            FragmentSpec(fragment_count=-1, fragment_size_range=(2, 4))
        with pytest.raises(ValueError, match="size range"):
            FragmentSpec(fragment_count=1, fragment_size_range=(5, 3))
        with pytest.raises(ValueError, match="size range"):
            FragmentSpec(fragment_count=1, fragment_size_range=(0, 3))


class TestPlantedGraph:
    def _spec(self, **kw):
        base = dict(
            community_sizes=(60, 40),
            p_intra=0.15,
            p_inter=0.01,
            embed_dim=8,
            center_separation=0.3,
            noise_sigma=0.1,
            seed=7,
        )
        base.update(kw)
        return PlantedSpec(**base)

    def test_shape_and_labels(self):
        graph, records, m = planted_graph(self._spec())
        assert graph.n == 100
        assert len(records) == 100
        assert m.data.shape == (100, 8)
        member = planted_membership(records)
        assert member[:60].tolist() == [0] * 60
        assert member[60:].tolist() == [1] * 40

    def test_deterministic(self):
        g1, r1, m1 = planted_graph(self._spec())
        g2, r2, m2 = planted_graph(self._spec())
        assert np.array_equal(g1.directed, g2.directed)
        assert np.array_equal(m1.data, m2.data)
        assert [r.pub_id for r in r1] == [r.pub_id for r in r2]

    def test_seed_changes_draw(self):
        g1, _, _ = planted_graph(self._spec())
        g2, _, _ = planted_graph(self._spec(seed=8))
        assert not np.array_equal(g1.directed, g2.directed)

    def test_direction_higher_cites_lower(self):
        graph, _, _ = planted_graph(self._spec())
        assert np.all(graph.directed[:, 0] > graph.directed[:, 1])

    def test_refs_match_out_edges(self):
        graph, records, _ = planted_graph(self._spec())
        for i, rec in enumerate(records):
            out = graph.directed[graph.directed[:, 0] == i][:, 1]
            assert tuple(graph.ids[int(j)] for j in out) == rec.refs

    def test_embeddings_unit_norm(self):
        _, _, m = planted_graph(self._spec())
        norms = np.linalg.norm(m.data.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)

    def test_center_cosine_without_noise(self):
        # zero noise collapses every member onto its community center, so
        # cross-community cosine equals the requested separation
        _, _, m = planted_graph(self._spec(noise_sigma=0.0, center_separation=0.25))
        cross = pairwise_cosine(m, np.array([0]), np.array([70]))[0]
        assert cross == pytest.approx(0.25, abs=1e-6)
        intra = pairwise_cosine(m, np.array([0]), np.array([1]))[0]
        assert intra == pytest.approx(1.0, abs=1e-6)

    def test_edge_density_tracks_probabilities(self):
        spec = self._spec(community_sizes=(300, 300), p_intra=0.1, p_inter=0.005, embed_dim=8)
        graph, records, _ = planted_graph(spec)
        member = planted_membership(records)
        und = graph.undirected
        same = member[und[:, 0]] == member[und[:, 1]]
        n_intra_pairs = 2 * (300 * 299 // 2)
        n_inter_pairs = 300 * 300
        rate_intra = same.sum() / n_intra_pairs
        rate_inter = (~same).sum() / n_inter_pairs
        assert rate_intra == pytest.approx(0.1, rel=0.15)
        assert rate_inter == pytest.approx(0.005, rel=0.35)


class TestFragment:
    def test_component_count_increases_exactly(self, planted_small):
        graph = planted_small["graph"]
        frag_graph = planted_small["fragmented"]
        frag_spec = planted_small["frag"]
        before = len(np.unique(connected_components_oracle(graph.n, graph.undirected)))
        after = len(np.unique(connected_components_oracle(frag_graph.n, frag_graph.undirected)))
        assert after == before + frag_spec.fragment_count

    def test_ids_and_node_set_unchanged(self, planted_small):
        graph = planted_small["graph"]
        frag_graph = planted_small["fragmented"]
        assert frag_graph.n == graph.n
        assert frag_graph.ids == graph.ids

    def test_fragments_are_components_in_size_range(self, planted_small):
        frag_graph = planted_small["fragmented"]
        frag_spec = planted_small["frag"]
        comp = connected_components_oracle(frag_graph.n, frag_graph.undirected)
        _, counts = np.unique(comp, return_counts=True)
        lo, hi = frag_spec.fragment_size_range
        frag_sized = counts[(counts >= lo) & (counts <= hi)]
        assert len(frag_sized) >= frag_spec.fragment_count

    def test_new_edges_only_inside_fragments(self, planted_small):
        graph = planted_small["graph"]
        frag_graph = planted_small["fragmented"]
        orig = {(int(u), int(v)) for u, v in graph.undirected}
        comp = connected_components_oracle(frag_graph.n, frag_graph.undirected)
        _, counts = np.unique(comp, return_counts=True)
        big = np.argmax(counts)
        for u, v in frag_graph.undirected:
            pair = (int(u), int(v))
            if pair not in orig:
                # added spanning-tree edges live inside a detached fragment,
                # never in the untouched bulk of the graph
                assert comp[u] == comp[v]
                assert comp[u] != np.unique(comp)[big]

    def test_deterministic(self, planted_small):
        graph = planted_small["graph"]
        frag_graph = planted_small["fragmented"]
        member = planted_membership(planted_small["records"])
        again = fragment(graph, member, planted_small["frag"])
        assert np.array_equal(again.undirected, frag_graph.undirected)
        assert np.array_equal(again.directed, frag_graph.directed)

    def test_zero_fragments_identity(self, planted_small):
        graph = planted_small["graph"]
        member = planted_membership(planted_small["records"])
        spec = FragmentSpec(fragment_count=0, fragment_size_range=(2, 4), seed=1)
        out = fragment(graph, member, spec)
        assert np.array_equal(out.undirected, graph.undirected)

    def test_source_community_too_small(self, planted_small):
        graph = planted_small["graph"]
        member = planted_membership(planted_small["records"])
        spec = FragmentSpec(fragment_count=200, fragment_size_range=(8, 20), seed=1)
        with pytest.raises(ValueError, match="has only"):
            fragment(graph, member, spec)

    def test_unknown_source_community(self, planted_small):
        graph = planted_small["graph"]
        member = planted_membership(planted_small["records"])
        spec = FragmentSpec(fragment_count=1, fragment_size_range=(2, 3), source_community=9)
        with pytest.raises(ValueError, match="community 9 has only 0"):
            fragment(graph, member, spec)


class TestRecovery:
    def test_leiden_recovers_planted_partition(self):
        spec = PlantedSpec(
            community_sizes=(50, 50),
            p_intra=0.2,
            p_inter=0.005,
            embed_dim=8,
            seed=11,
        )
        graph, records, _ = planted_graph(spec)
        part = leiden(
            graph.undirected, graph.n, QualityConfig(function="rb", resolution=1.0, seed=0)
        )
        assert ari(part.assignment, planted_membership(records)) >= 0.95


class TestEmitAndPresets:
    def test_emit_corpus_files(self, tmp_path):
        spec = PlantedSpec(community_sizes=(10, 8), p_intra=0.3, p_inter=0.02, embed_dim=4, seed=3)
        graph, records, m = planted_graph(spec)
        paths = emit_corpus(records, graph, m, tmp_path)
        assert set(paths) == {"metadata", "edges", "vectors", "ids"}
        assert paths["metadata"].name == "metadata.jsonl"
        meta_lines = paths["metadata"].read_text().splitlines()
        assert len(meta_lines) == 18
        edge_lines = paths["edges"].read_text().splitlines()
        assert len(edge_lines) == len(graph.directed)
        id_lines = paths["ids"].read_text().splitlines()
        assert tuple(id_lines) == graph.ids

    def test_emit_roundtrips_through_loader(self, tmp_path):
        from citeweave.corpus import load_corpus
        from citeweave.embedding import load_embeddings

        spec = PlantedSpec(community_sizes=(10, 8), p_intra=0.3, p_inter=0.02, embed_dim=4, seed=3)
        graph, records, m = planted_graph(spec)
        paths = emit_corpus(records, graph, m, tmp_path)
        got_records, edges, report = load_corpus(paths["metadata"], paths["edges"])
        assert [r.pub_id for r in got_records] == [r.pub_id for r in records]
        assert [r.labels for r in got_records] == [r.labels for r in records]
        assert report.unmatched_edges == 0
        assert len(edges) == len(graph.directed)
        got_m = load_embeddings(paths["vectors"], paths["ids"])
        assert np.array_equal(got_m.data, m.data)

    def test_preset_known(self):
        planted, frag = preset("paper-mini", seed=5)
        assert planted.community_sizes == (2000, 1000)
        assert planted.p_intra == 0.01
        assert planted.p_inter == 0.0005
        assert planted.embed_dim == 64
        assert frag.fragment_count == 30
        assert frag.fragment_size_range == (8, 20)
        assert planted.seed == 5
        assert frag.seed == 6

    def test_preset_unknown(self):
        with pytest.raises(ValueError, match="unknown preset"):
            preset("nope")

    def test_presets_registry_well_formed(self):
        for name, (pk, fk) in PRESETS.items():
            p = PlantedSpec(seed=0, **pk)
            f = FragmentSpec(seed=1, **fk)
            assert f.source_community < len(p.community_sizes)
