import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latesearch.errors import DimMismatch, DuplicateId, EmptyMatrix
from latesearch.scoring import maxsim, maxsim_batch, maxsim_many, rerank

from .conftest import naive_maxsim, unit_rows


class TestMaxsim:
    def test_hand_computed(self):
        q = np.array([[1, 0], [0, 1]], dtype=np.float32)
        d = np.array([[0.6, 0.8], [1, 0]], dtype=np.float32)
        assert maxsim(q, d) == pytest.approx(1.8, abs=1e-6)

    def test_identical_unit_vectors(self):
        v = np.array([[1.0, 0.0]], dtype=np.float32)
        assert maxsim(v, v) == pytest.approx(1.0, abs=1e-7)

    def test_antipodal(self):
        v = np.array([[1.0, 0.0]], dtype=np.float32)
        assert maxsim(v, -v) == pytest.approx(-1.0, abs=1e-7)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            maxsim(np.ones((1, 2), dtype=np.float32), np.ones((1, 3), dtype=np.float32))

    def test_empty(self):
        with pytest.raises(EmptyMatrix):
            maxsim(np.ones((0, 2), dtype=np.float32), np.ones((1, 2), dtype=np.float32))

    def test_normalize_by_query_length(self):
        q = np.array([[1, 0], [0, 1]], dtype=np.float32)
        d = np.array([[1, 0]], dtype=np.float32)
        assert maxsim(q, d, normalize_by_query_length=True) == pytest.approx(
            maxsim(q, d) / 2
        )

    def test_oracle_equivalence_100_random(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            q = unit_rows(rng, int(rng.integers(1, 33)), int(rng.integers(2, 17)))
            d = unit_rows(rng, int(rng.integers(1, 33)), q.shape[1])
            assert maxsim(q, d) == pytest.approx(naive_maxsim(q, d), abs=1e-5)

    @settings(deadline=None, max_examples=50)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        q = unit_rows(rng, int(rng.integers(1, 8)), 6)
        d = unit_rows(rng, int(rng.integers(1, 8)), 6)
        before = maxsim(q, d)
        perm_d = d[rng.permutation(d.shape[0])]
        perm_q = q[rng.permutation(q.shape[0])]
        assert maxsim(q, perm_d) == pytest.approx(before, abs=1e-6)
        assert maxsim(perm_q, d) == pytest.approx(before, abs=1e-6)

    @settings(deadline=None, max_examples=50)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_appending_doc_row_never_decreases(self, seed):
        rng = np.random.default_rng(seed)
        q = unit_rows(rng, int(rng.integers(1, 6)), 5)
        d = unit_rows(rng, int(rng.integers(1, 6)), 5)
        extra = unit_rows(rng, 1, 5)
        assert maxsim(q, np.concatenate([d, extra])) >= maxsim(q, d) - 1e-9

    def test_self_score_equals_query_length(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            q = unit_rows(rng, int(rng.integers(1, 20)), int(rng.integers(2, 12)))
            assert maxsim(q, q) == pytest.approx(q.shape[0], abs=1e-4)


class TestMaxsimBatch:
    def test_degenerate_1x1(self):
        rng = np.random.default_rng(0)
        q, d = unit_rows(rng, 3, 4), unit_rows(rng, 5, 4)
        out = maxsim_batch([q], [d])
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(maxsim(q, d), abs=1e-9)

    def test_matches_per_pair_oracle(self):
        rng = np.random.default_rng(1)
        queries = [unit_rows(rng, int(rng.integers(1, 6)), 4) for _ in range(2)]
        docs = [unit_rows(rng, int(rng.integers(1, 6)), 4) for _ in range(3)]
        out = maxsim_batch(queries, docs)
        assert out.shape == (2, 3)
        for i, q in enumerate(queries):
            for j, d in enumerate(docs):
                assert out[i, j] == pytest.approx(maxsim(q, d), abs=1e-5)

    def test_empty_doc_list(self):
        rng = np.random.default_rng(2)
        out = maxsim_batch([unit_rows(rng, 2, 4), unit_rows(rng, 3, 4)], [])
        assert out.shape == (2, 0)

    def test_mixed_dims_rejected(self):
        rng = np.random.default_rng(3)
        with pytest.raises(DimMismatch):
            maxsim_batch([unit_rows(rng, 2, 4)], [unit_rows(rng, 2, 5)])

    def test_many_matches_loop(self):
        rng = np.random.default_rng(4)
        q = unit_rows(rng, 4, 6)
        docs = [unit_rows(rng, int(rng.integers(1, 9)), 6) for _ in range(7)]
        out = maxsim_many(q, docs)
        for j, d in enumerate(docs):
            assert out[j] == pytest.approx(maxsim(q, d), abs=1e-9)


class TestRerank:
    def test_orders_by_score(self):
        q = np.array([[1, 0], [0, 1]], dtype=np.float32)
        a = np.array([[0.6, 0.8], [1, 0]], dtype=np.float32)  # maxsim 1.8
        b = np.array([[1, 0]], dtype=np.float32)  # maxsim 1.0
        out = rerank(q, [("B", b), ("A", a)])
        assert [sd.doc_id for sd in out] == ["A", "B"]
        assert out[0].score == pytest.approx(1.8, abs=1e-6)
        assert out[1].score == pytest.approx(1.0, abs=1e-6)

    def test_tie_breaks_ascending_id(self):
        q = np.array([[1, 0]], dtype=np.float32)
        m = np.array([[1, 0]], dtype=np.float32)
        out = rerank(q, [("b", m.copy()), ("a", m.copy())])
        assert [sd.doc_id for sd in out] == ["a", "b"]

    def test_singleton(self):
        rng = np.random.default_rng(5)
        q, d = unit_rows(rng, 3, 4), unit_rows(rng, 2, 4)
        out = rerank(q, [("only", d)])
        assert len(out) == 1
        assert out[0].doc_id == "only"
        assert out[0].score == pytest.approx(maxsim(q, d), abs=1e-9)

    def test_duplicate_id(self):
        q = np.array([[1, 0]], dtype=np.float32)
        with pytest.raises(DuplicateId):
            rerank(q, [("x", q), ("x", q)])
