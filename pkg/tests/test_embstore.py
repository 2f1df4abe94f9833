import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latesearch.embstore import (
    KIND_DOCUMENT,
    KIND_QUERY,
    EmbeddingSet,
    normalize_rows,
    read_embeddings,
    write_embeddings,
)
from latesearch.errors import (
    BadMagic,
    DuplicateId,
    EmptyMatrix,
    FormatError,
    TruncatedFile,
    UnsupportedVersion,
    ZeroRow,
)


class TestNormalizeRows:
    def test_hand_computed(self):
        out = normalize_rows(np.array([[3.0, 4.0]], dtype=np.float32))
        assert out.dtype == np.float32
        assert out[0, 0] == np.float32(0.6)
        assert out[0, 1] == np.float32(0.8)

    def test_already_unit_unchanged(self):
        m = np.array([[1, 0], [0, 1]], dtype=np.float32)
        out = normalize_rows(m)
        assert np.array_equal(out, m)

    def test_zero_row(self):
        with pytest.raises(ZeroRow) as exc:
            normalize_rows(np.array([[0.0, 0.0]], dtype=np.float32))
        assert exc.value.index == 0

    def test_zero_row_reports_first_offender(self):
        m = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        with pytest.raises(ZeroRow) as exc:
            normalize_rows(m)
        assert exc.value.index == 1

    @settings(deadline=None, max_examples=100)
    @given(
        st.integers(min_value=1, max_value=8),
        st.integers(min_value=1, max_value=16),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_idempotent_bit_exact(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        m = (rng.standard_normal((n, dim)) * rng.uniform(0.1, 10)).astype(np.float32)
        if (np.linalg.norm(m.astype(np.float64), axis=1) < 1e-6).any():
            m = m + np.float32(1.0)
        once = normalize_rows(m)
        twice = normalize_rows(once)
        assert np.array_equal(once, twice)
        norms = np.linalg.norm(once.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6


def _set(kind=KIND_DOCUMENT, ids=("a", "b"), dim=3, seed=0):
    rng = np.random.default_rng(seed)
    entries = [
        (ident, rng.standard_normal((rng.integers(1, 5), dim)).astype(np.float32))
        for ident in ids
    ]
    return EmbeddingSet(dim=dim, kind=kind, entries=entries)


class TestPlemRoundTrip:
    def test_round_trip_identity(self, tmp_path):
        s = _set(ids=("a", "b"))
        path = tmp_path / "x.plem"
        write_embeddings(s, path)
        back = read_embeddings(path)
        assert back.kind == s.kind
        assert back.dim == s.dim
        assert back.ids == s.ids
        for (_, m1), (_, m2) in zip(s.entries, back.entries):
            assert m1.dtype == m2.dtype == np.float32
            assert np.array_equal(m1, m2)

    def test_order_preserved(self, tmp_path):
        s = _set(ids=("zz", "aa", "mm"))
        path = tmp_path / "x.plem"
        write_embeddings(s, path)
        assert read_embeddings(path).ids == ["zz", "aa", "mm"]

    def test_writes_are_byte_deterministic(self, tmp_path):
        s = _set(kind=KIND_QUERY)
        p1, p2 = tmp_path / "a.plem", tmp_path / "b.plem"
        write_embeddings(s, p1)
        write_embeddings(s, p2)
        assert p1.read_bytes() == p2.read_bytes()

    @settings(deadline=None, max_examples=50)
    @given(
        ids=st.lists(
            st.text(min_size=0, max_size=20),
            min_size=1,
            max_size=5,
            unique=True,
        ),
        dim=st.integers(min_value=1, max_value=6),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        kind=st.sampled_from([KIND_DOCUMENT, KIND_QUERY]),
    )
    def test_round_trip_property(self, tmp_path_factory, ids, dim, seed, kind):
        rng = np.random.default_rng(seed)
        entries = [
            (ident, rng.standard_normal((int(rng.integers(1, 4)), dim)).astype(np.float32))
            for ident in ids
        ]
        s = EmbeddingSet(dim=dim, kind=kind, entries=entries)
        path = tmp_path_factory.mktemp("plem") / "x.plem"
        write_embeddings(s, path)
        back = read_embeddings(path)
        assert back.ids == s.ids and back.kind == kind and back.dim == dim
        for (_, m1), (_, m2) in zip(s.entries, back.entries):
            assert np.array_equal(m1, m2)


def _raw_plem(kind=0, version=1, dim=2, entries=(("a", [[1.0, 0.0]]),), magic=b"PLEM"):
    out = struct.pack("<4sIBIQ", magic, version, kind, dim, len(entries))
    for ident, rows in entries:
        raw = ident.encode("utf-8")
        rows = np.asarray(rows, dtype="<f4")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", rows.shape[0] if rows.size else 0)
        out += rows.tobytes()
    return out


class TestPlemGuards:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(_raw_plem(magic=b"NOPE"))
        with pytest.raises(BadMagic):
            read_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(_raw_plem(version=9))
        with pytest.raises(UnsupportedVersion):
            read_embeddings(path)

    def test_truncated_mid_matrix(self, tmp_path):
        s = _set()
        path = tmp_path / "x.plem"
        write_embeddings(s, path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(TruncatedFile):
            read_embeddings(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(b"PLE")
        with pytest.raises(TruncatedFile):
            read_embeddings(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(
            _raw_plem(entries=(("a", [[1.0, 0.0]]), ("a", [[0.0, 1.0]])))
        )
        with pytest.raises(DuplicateId):
            read_embeddings(path)

    def test_empty_matrix_rejected(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(_raw_plem(entries=(("a", np.zeros((0, 2))),)))
        with pytest.raises(EmptyMatrix):
            read_embeddings(path)

    def test_trailing_data(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(_raw_plem() + b"junk")
        with pytest.raises(FormatError):
            read_embeddings(path)

    def test_unknown_kind_byte(self, tmp_path):
        path = tmp_path / "x.plem"
        path.write_bytes(_raw_plem(kind=7))
        with pytest.raises(FormatError):
            read_embeddings(path)


class TestEmbeddingSet:
    def test_duplicate_ids_rejected(self):
        m = np.ones((1, 2), dtype=np.float32)
        with pytest.raises(DuplicateId):
            EmbeddingSet(dim=2, kind=KIND_DOCUMENT, entries=[("a", m), ("a", m)])

    def test_dim_mismatch_rejected(self):
        from latesearch.errors import DimMismatch

        with pytest.raises(DimMismatch):
            EmbeddingSet(
                dim=2, kind=KIND_DOCUMENT, entries=[("a", np.ones((1, 3), dtype=np.float32))]
            )

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            EmbeddingSet(dim=2, kind="corpus", entries=[])

    def test_total_tokens(self):
        s = _set(ids=("a", "b", "c"))
        assert s.total_tokens == sum(m.shape[0] for _, m in s.entries)
