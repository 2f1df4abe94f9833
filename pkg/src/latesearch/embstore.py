"""Token-embedding data model and the PLEM-v1 binary container.

A token matrix is a plain ``float32`` ndarray of shape ``(n_tokens, dim)``;
one row per token. An :class:`EmbeddingSet` is an ordered collection of
``(id, matrix)`` pairs sharing one dimensionality, tagged as holding either
queries or documents.

PLEM-v1 on-disk layout (little-endian, no padding, no trailing bytes):

    magic   4 bytes   b"PLEM"
    version u32       1
    kind    u8        0 = document, 1 = query
    dim     u32
    count   u64       number of entries
    entry   repeated  id_len u16, id bytes (UTF-8),
                      n_tokens u32, n_tokens*dim f32 row-major

Writes are byte-deterministic: the same set always serializes to the same
bytes, so files can be diffed and checksummed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    EmptyMatrix,
    FormatError,
    TruncatedFile,
    UnsupportedVersion,
    ZeroRow,
)

MAGIC = b"PLEM"
VERSION = 1
KIND_DOCUMENT = "document"
KIND_QUERY = "query"
_KIND_TO_BYTE = {KIND_DOCUMENT: 0, KIND_QUERY: 1}
_BYTE_TO_KIND = {0: KIND_DOCUMENT, 1: KIND_QUERY}
MAX_ID_BYTES = 0xFFFF

# Rows whose norm is already this close to 1 are returned unchanged, which
# makes normalize_rows bit-exactly idempotent (float32 normalization leaves
# norms within ~1.2e-7 of 1).
_SNAP_TOL = 2e-7
_ZERO_NORM_TOL = 1e-12

_HEADER = struct.Struct("<4sIBIQ")
_ENTRY_HEAD = struct.Struct("<H")
_ENTRY_NTOK = struct.Struct("<I")


def as_token_matrix(rows, dim: int | None = None) -> np.ndarray:
    """Coerce input to a float32 (n_tokens, dim) matrix and validate shape."""
    m = np.asarray(rows, dtype=np.float32)
    if m.ndim != 2:
        raise DimMismatch(f"token matrix must be 2-D, got shape {m.shape}")
    if m.shape[0] == 0:
        raise EmptyMatrix("token matrix has zero rows")
    if dim is not None and m.shape[1] != dim:
        raise DimMismatch(f"expected dim {dim}, got {m.shape[1]}")
    return m


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Rows already within ``2e-7`` of unit norm pass through unchanged, so the
    operation is idempotent at the bit level. Raises :class:`ZeroRow` for any
    degenerate row.
    """
    m = as_token_matrix(m)
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    tiny = np.flatnonzero(norms < _ZERO_NORM_TOL)
    if tiny.size:
        raise ZeroRow(int(tiny[0]))
    out = m.copy()
    needs = np.abs(norms - 1.0) > _SNAP_TOL
    if needs.any():
        scaled = m[needs].astype(np.float64) / norms[needs, None]
        out[needs] = scaled.astype(np.float32)
    return out


@dataclass
class EmbeddingSet:
    """Ordered, id-keyed collection of token matrices with a shared dim.

    Entry order is significant and survives serialization; ids must be
    unique UTF-8 strings of at most 65,535 encoded bytes.
    """

    dim: int
    kind: str
    entries: list[tuple[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in _KIND_TO_BYTE:
            raise ValueError(f"kind must be 'document' or 'query', got {self.kind!r}")
        seen: set[str] = set()
        coerced = []
        for ident, m in self.entries:
            if ident in seen:
                raise DuplicateId(ident)
            seen.add(ident)
            coerced.append((ident, as_token_matrix(m, self.dim)))
        self.entries = coerced

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [ident for ident, _ in self.entries]

    @property
    def total_tokens(self) -> int:
        return sum(m.shape[0] for _, m in self.entries)

    def matrix(self, ident: str) -> np.ndarray:
        for entry_id, m in self.entries:
            if entry_id == ident:
                return m
        raise KeyError(ident)

    def normalized(self) -> "EmbeddingSet":
        """Copy of the set with every matrix row-normalized."""
        return EmbeddingSet(
            dim=self.dim,
            kind=self.kind,
            entries=[(ident, normalize_rows(m)) for ident, m in self.entries],
        )


def write_embeddings(emb_set: EmbeddingSet, path: str | Path) -> None:
    """Serialize a set to PLEM-v1. Output bytes depend only on the content."""
    chunks = [
        _HEADER.pack(
            MAGIC, VERSION, _KIND_TO_BYTE[emb_set.kind], emb_set.dim, len(emb_set.entries)
        )
    ]
    for ident, m in emb_set.entries:
        raw_id = ident.encode("utf-8")
        if len(raw_id) > MAX_ID_BYTES:
            raise ValueError(f"id exceeds {MAX_ID_BYTES} UTF-8 bytes: {ident[:32]!r}...")
        if m.shape[1] != emb_set.dim:
            raise DimMismatch(f"entry {ident!r} has dim {m.shape[1]}, set dim {emb_set.dim}")
        chunks.append(_ENTRY_HEAD.pack(len(raw_id)))
        chunks.append(raw_id)
        chunks.append(_ENTRY_NTOK.pack(m.shape[0]))
        chunks.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_embeddings(path: str | Path) -> EmbeddingSet:
    """Parse a PLEM-v1 file; the exact inverse of :func:`write_embeddings`."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedFile("file shorter than header")
    magic, version, kind_byte, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if kind_byte not in _BYTE_TO_KIND:
        raise FormatError(f"unknown kind byte {kind_byte}")
    if dim < 1:
        raise FormatError(f"dim must be >= 1, got {dim}")

    offset = _HEADER.size
    entries: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for _ in range(count):
        if offset + _ENTRY_HEAD.size > len(data):
            raise TruncatedFile("truncated before id length")
        (id_len,) = _ENTRY_HEAD.unpack_from(data, offset)
        offset += _ENTRY_HEAD.size
        if offset + id_len + _ENTRY_NTOK.size > len(data):
            raise TruncatedFile("truncated inside entry header")
        ident = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        (n_tokens,) = _ENTRY_NTOK.unpack_from(data, offset)
        offset += _ENTRY_NTOK.size
        if n_tokens == 0:
            raise EmptyMatrix(f"entry {ident!r} has zero tokens")
        nbytes = n_tokens * dim * 4
        if offset + nbytes > len(data):
            raise TruncatedFile(f"truncated inside matrix of {ident!r}")
        m = np.frombuffer(data, dtype="<f4", count=n_tokens * dim, offset=offset)
        m = m.reshape(n_tokens, dim).copy()
        offset += nbytes
        if ident in seen:
            raise DuplicateId(ident)
        seen.add(ident)
        entries.append((ident, m))
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last entry")
    return EmbeddingSet(dim=dim, kind=_BYTE_TO_KIND[kind_byte], entries=entries)
