import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from citeweave.synth import FragmentSpec, PlantedSpec, emit_corpus, fragment, planted_graph, planted_membership

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def make_record(pub_id, labels=("math",), year=2005, refs=(), abstract=None, title=None):
    from citeweave.corpus import PublicationRecord

    if abstract is None:
        abstract = f"Abstract body for {pub_id}. " * 8
    if title is None:
        title = f"Title {pub_id}"
    return PublicationRecord(
        pub_id=pub_id,
        title=title,
        abstract=abstract,
        year=year,
        labels=frozenset(labels),
        refs=tuple(refs),
    )


@pytest.fixture
def tiny_corpus(tmp_path):
    """Six records (one per edge case) plus an edges file exercising the
    duplicate / unmatched / self-citation counters."""
    rows = [
        {"id": "a", "title": "A", "abstract": "alpha " * 30, "year": 2001, "labels": ["math"], "refs": ["b", "zz"]},
        {"id": "b", "title": "B", "abstract": "beta " * 30, "year": 2002, "labels": ["math", "orms"]},
        {"id": "c", "title": "C", "abstract": "gamma " * 30, "year": 2003, "labels": ["orms"], "refs": ["a"]},
        {"id": "d", "title": "D", "abstract": "short", "year": 2004, "labels": ["math"]},
        {"id": "e", "title": "E", "abstract": "epsilon " * 30, "year": None, "labels": []},
        {"id": "f", "title": "F", "abstract": "zeta " * 30, "year": 1980, "labels": ["orms"]},
    ]
    metadata = tmp_path / "metadata.jsonl"
    metadata.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    edges = tmp_path / "edges.tsv"
    edges.write_text(
        "a\tb\n"
        "a\tb\n"  # duplicate
        "c\ta\n"
        "b\tb\n"  # self-citation
        "a\tzz\n"  # unmatched endpoint
        "d\ta\n"
        "f\tc\n",
        encoding="utf-8",
    )
    return metadata, edges


@pytest.fixture(scope="session")
def planted_small():
    """In-memory planted corpus: 2 communities, 6 detached fragments."""
    spec = PlantedSpec(
        community_sizes=(300, 200),
        p_intra=0.05,
        p_inter=0.002,
        embed_dim=16,
        center_separation=0.3,
        noise_sigma=0.1,
        seed=42,
    )
    graph, records, matrix = planted_graph(spec)
    membership = planted_membership(records)
    frag = FragmentSpec(fragment_count=6, fragment_size_range=(4, 8), source_community=0, seed=43)
    fragmented = fragment(graph, membership, frag)
    return {
        "spec": spec,
        "frag": frag,
        "graph": graph,
        "fragmented": fragmented,
        "records": records,
        "matrix": matrix,
        "membership": membership,
    }


@pytest.fixture(scope="session")
def synth_corpus_dir(tmp_path_factory, planted_small):
    """The planted corpus emitted to disk in pipeline input formats."""
    out = tmp_path_factory.mktemp("synth_corpus")
    paths = emit_corpus(
        planted_small["records"], planted_small["fragmented"], planted_small["matrix"], out
    )
    coverage = out / "coverage.txt"
    coverage.write_text(
        "".join(pid + "\n" for pid in planted_small["fragmented"].ids), encoding="utf-8"
    )
    paths = dict(paths)
    paths["coverage"] = coverage
    return paths


def ari(a, b) -> float:
    """Adjusted Rand index between two label arrays (test-local oracle)."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    assert len(b) == n and n > 1

    def pairs(x: int) -> int:
        return x * (x - 1) // 2

    from collections import Counter

    joint = Counter(zip(a.tolist(), b.tolist()))
    sum_ij = sum(pairs(v) for v in joint.values())
    sum_a = sum(pairs(v) for v in Counter(a.tolist()).values())
    sum_b = sum(pairs(v) for v in Counter(b.tolist()).values())
    expected = sum_a * sum_b / pairs(n)
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def connected_components_oracle(n: int, edges: np.ndarray) -> np.ndarray:
    """Independent union-find used to verify cluster connectivity claims."""
    parent = list(range(n))

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for u, v in np.asarray(edges).reshape(-1, 2):
        ru, rv = find(int(u)), find(int(v))
        if ru != rv:
            parent[max(ru, rv)] = min(ru, rv)
    return np.array([find(i) for i in range(n)], dtype=np.int64)
