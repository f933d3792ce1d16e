import json
import struct
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, strategies as st

from citeweave.corpus import build_graph
from citeweave.embedding import (
    EmbeddingFormatError,
    EmbeddingMatrix,
    EmbeddingServiceError,
    bind_to_graph,
    cosine,
    embed_via_service,
    load_embeddings,
    normalize_rows,
    pairwise_cosine,
    save_embeddings,
)

from conftest import make_record


def matrix_of(rows, ids=None, normalized=False):
    data = np.asarray(rows, dtype=np.float32)
    if ids is None:
        ids = tuple(f"p{i}" for i in range(len(data)))
    return EmbeddingMatrix(data=data, ids=tuple(ids), normalized=normalized)


class TestFileFormat:
    def test_roundtrip(self, tmp_path):
        m = matrix_of([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        save_embeddings(m, tmp_path / "v.emb1", tmp_path / "v.ids")
        loaded = load_embeddings(tmp_path / "v.emb1", tmp_path / "v.ids")
        assert np.array_equal(loaded.data, m.data)
        assert loaded.ids == m.ids
        assert loaded.normalized is False

    def test_header_layout(self, tmp_path):
        m = matrix_of([[1.0, -1.0]])
        save_embeddings(m, tmp_path / "v.emb1", tmp_path / "v.ids")
        raw = (tmp_path / "v.emb1").read_bytes()
        assert raw[:4] == b"EMB1"
        n, d = struct.unpack_from("<II", raw, 4)
        assert (n, d) == (1, 2)
        assert len(raw) == 12 + 4 * n * d

    def test_bad_magic(self, tmp_path):
        (tmp_path / "v.emb1").write_bytes(b"XXXX" + b"\0" * 8)
        (tmp_path / "v.ids").write_text("a\n")
        with pytest.raises(EmbeddingFormatError, match="not an EMB1"):
            load_embeddings(tmp_path / "v.emb1", tmp_path / "v.ids")

    def test_size_mismatch(self, tmp_path):
        (tmp_path / "v.emb1").write_bytes(b"EMB1" + struct.pack("<II", 2, 3) + b"\0" * 4)
        (tmp_path / "v.ids").write_text("a\nb\n")
        with pytest.raises(EmbeddingFormatError, match="size mismatch"):
            load_embeddings(tmp_path / "v.emb1", tmp_path / "v.ids")

    def test_id_count_mismatch(self, tmp_path):
        m = matrix_of([[1.0], [2.0]])
        save_embeddings(m, tmp_path / "v.emb1", tmp_path / "v.ids")
        (tmp_path / "v.ids").write_text("only-one\n")
        with pytest.raises(EmbeddingFormatError, match="id count mismatch"):
            load_embeddings(tmp_path / "v.emb1", tmp_path / "v.ids")


class TestNormalize:
    def test_unit_norms(self):
        m = normalize_rows(matrix_of([[3.0, 4.0], [0.5, 0.0]]))
        norms = np.linalg.norm(m.data.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)
        assert m.normalized is True

    def test_zero_row_rejected(self):
        with pytest.raises(EmbeddingFormatError, match="row 1"):
            normalize_rows(matrix_of([[1.0, 0.0], [0.0, 0.0]]))

    def test_idempotent_within_float32(self):
        rng = np.random.default_rng(5)
        m1 = normalize_rows(matrix_of(rng.normal(size=(20, 8))))
        m2 = normalize_rows(m1)
        assert np.allclose(m1.data, m2.data, atol=2e-7)

    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**31))
    def test_direction_preserved(self, d, seed):
        rng = np.random.default_rng(seed)
        row = rng.normal(size=(1, d))
        if np.linalg.norm(row) == 0.0:
            return
        m = normalize_rows(matrix_of(row))
        expected = row / np.linalg.norm(row)
        assert np.allclose(m.data[0], expected[0], atol=1e-6)


class TestBind:
    def _graph(self):
        return build_graph([make_record("x"), make_record("y"), make_record("z")], [("x", "y")])

    def test_permutes_rows(self):
        graph = self._graph()
        m = matrix_of([[1.0], [2.0], [3.0]], ids=("z", "x", "y"))
        bound = bind_to_graph(m, graph)
        assert bound.ids == ("x", "y", "z")
        assert bound.data[:, 0].tolist() == [2.0, 3.0, 1.0]

    def test_missing_embedding(self):
        graph = self._graph()
        m = matrix_of([[1.0], [2.0]], ids=("x", "y"))
        with pytest.raises(EmbeddingFormatError, match="without embedding"):
            bind_to_graph(m, graph)

    def test_extra_id_rejected_unless_allowed(self):
        graph = self._graph()
        m = matrix_of([[1.0], [2.0], [3.0], [4.0]], ids=("x", "y", "z", "extra"))
        with pytest.raises(EmbeddingFormatError, match="not in corpus"):
            bind_to_graph(m, graph)
        bound = bind_to_graph(m, graph, allow_extra=True)
        assert bound.ids == ("x", "y", "z")
        assert bound.n == 3


class TestCosine:
    def test_known_value(self):
        m = normalize_rows(matrix_of([[1.0, 0.0], [1.0, 1.0]]))
        assert cosine(0, 1, m) == pytest.approx(1 / np.sqrt(2), abs=1e-6)

    def test_pairwise_matches_scalar(self):
        rng = np.random.default_rng(17)
        m = normalize_rows(matrix_of(rng.normal(size=(40, 5))))
        u = rng.integers(0, 40, size=60)
        v = rng.integers(0, 40, size=60)
        batch = pairwise_cosine(m, u, v)
        singles = np.array([cosine(int(a), int(b), m) for a, b in zip(u, v)])
        assert np.array_equal(batch, singles)

    def test_blocked_matches_unblocked(self):
        rng = np.random.default_rng(3)
        m = normalize_rows(matrix_of(rng.normal(size=(30, 4))))
        u = rng.integers(0, 30, size=50)
        v = rng.integers(0, 30, size=50)
        assert np.array_equal(pairwise_cosine(m, u, v, block=7), pairwise_cosine(m, u, v))

    def test_self_cosine_is_one(self):
        rng = np.random.default_rng(11)
        m = normalize_rows(matrix_of(rng.normal(size=(10, 6))))
        vals = pairwise_cosine(m, np.arange(10), np.arange(10))
        assert np.allclose(vals, 1.0, atol=1e-6)


class _StubHandler(BaseHTTPRequestHandler):
    behavior = "ok"
    dim = 3
    fail_first = 0
    calls = 0

    def do_POST(self):
        cls = type(self)
        cls.calls += 1
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        texts = body["texts"]
        if cls.behavior == "flaky" and cls.calls <= cls.fail_first:
            self.send_response(500)
            self.end_headers()
            return
        if cls.behavior == "short":
            vectors = [[0.0] * cls.dim] * max(0, len(texts) - 1)
        elif cls.behavior == "drift":
            vectors = [[float(len(t))] * (cls.dim + (1 if i else 0)) for i, t in enumerate(texts)]
        else:
            vectors = [[float(len(t)), 1.0, -1.0] for t in texts]
        payload = json.dumps({"vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_service():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _StubHandler.behavior = "ok"
    _StubHandler.calls = 0
    _StubHandler.fail_first = 0
    yield f"http://127.0.0.1:{server.server_address[1]}/embed"
    server.shutdown()
    thread.join()


class TestEmbedService:
    def test_success_order_and_ids(self, stub_service):
        records = [make_record(f"r{i}", abstract="x" * (10 + i)) for i in range(5)]
        m = embed_via_service(records, stub_service, batch_size=2)
        assert m.ids == tuple(f"r{i}" for i in range(5))
        lengths = [len(r.title + " " + r.abstract) for r in records]
        assert m.data[:, 0].tolist() == [float(v) for v in lengths]
        assert m.d == 3

    def test_retries_then_succeeds(self, stub_service):
        _StubHandler.behavior = "flaky"
        _StubHandler.fail_first = 2
        records = [make_record("r0")]
        m = embed_via_service(records, stub_service, batch_size=8, backoff=0.01)
        assert m.n == 1
        assert _StubHandler.calls == 3

    def test_gives_up_after_retries(self, stub_service):
        _StubHandler.behavior = "flaky"
        _StubHandler.fail_first = 99
        with pytest.raises(EmbeddingServiceError, match="failed for batch"):
            embed_via_service([make_record("r0")], stub_service, max_retries=1, backoff=0.01)

    def test_count_mismatch(self, stub_service):
        _StubHandler.behavior = "short"
        with pytest.raises(EmbeddingServiceError):
            embed_via_service([make_record("r0"), make_record("r1")], stub_service, max_retries=0, backoff=0.01)

    def test_dimension_drift(self, stub_service):
        _StubHandler.behavior = "drift"
        with pytest.raises(EmbeddingServiceError, match="dimension drift"):
            embed_via_service([make_record("r0"), make_record("r1")], stub_service, max_retries=0)

    def test_empty_records(self, stub_service):
        m = embed_via_service([], stub_service)
        assert m.n == 0

    def test_parallel_workers_same_result(self, stub_service):
        records = [make_record(f"r{i}", abstract="y" * (5 + i)) for i in range(9)]
        a = embed_via_service(records, stub_service, batch_size=2, workers=1)
        b = embed_via_service(records, stub_service, batch_size=2, workers=4)
        assert np.array_equal(a.data, b.data)
