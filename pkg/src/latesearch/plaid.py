"""Compressed multi-vector index with staged retrieval.

The index stores, per document token, the id of its nearest spherical
k-means centroid plus a b-bit quantization of the residual (token minus
centroid). Residual components share one global table of equal-mass bucket
cutoffs; each bucket reconstructs to the mean of the training components
that fell into it. Inverted lists map centroid id -> sorted document
ordinals, giving candidate generation.

Search runs in stages: (1) probe the nprobe best centroids per query token
and union their inverted lists; (2) if over budget, rank candidates by a
centroid-only approximation of the late-interaction score and keep the best;
(3) decompress the survivors and score them exactly on the reconstructions.
Every stage tie-breaks on lowest centroid id / ascending doc id, so results
are reproducible bit for bit given the build seed.

Original embeddings are not retained: reported scores are reconstruction
scores, and the residual payload is exactly total_tokens * dim * nbits / 8
bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .embstore import KIND_DOCUMENT, EmbeddingSet
from .errors import (
    BadManifest,
    ChecksumMismatch,
    DimMismatch,
    DimNotPackable,
    DuplicateId,
    EmptyIndex,
    EmptyMatrix,
    KindMismatch,
    KTooLarge,
    OrdinalOutOfRange,
    UnsupportedVersion,
)
from .scoring import ScoredDoc, maxsim_many

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "latesearch-plaid"
MANIFEST_VERSION = 1

_ASSIGN_CHUNK = 8192


@dataclass(frozen=True)
class PlaidConfig:
    """Build and search parameters; all defaults are engineering choices."""

    n_centroids: int | str = "auto"
    nbits: int = 2
    nprobe: int = 4
    n_candidate_docs: int = 4096
    n_full_docs: int = 512
    kmeans_iters: int = 20
    seed: int = 42
    sample_size: int = 1 << 18

    def __post_init__(self):
        if self.nbits not in (1, 2, 4):
            raise ValueError(f"nbits must be 1, 2 or 4, got {self.nbits}")
        if self.nprobe < 1:
            raise ValueError("nprobe must be >= 1")
        if self.n_full_docs > self.n_candidate_docs:
            raise ValueError("n_full_docs must be <= n_candidate_docs")
        if isinstance(self.n_centroids, str) and self.n_centroids != "auto":
            raise ValueError(f"n_centroids must be an int or 'auto', got {self.n_centroids!r}")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


def auto_n_centroids(total_tokens: int) -> int:
    """Power-of-two centroid count: 2^ceil(log2(4 * sqrt(total_tokens)))."""
    target = 4.0 * math.sqrt(total_tokens)
    return 1 << max(0, math.ceil(math.log2(target)))


def _assign(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row by max dot product, lowest id on ties."""
    out = np.empty(vectors.shape[0], dtype=np.uint32)
    for start in range(0, vectors.shape[0], _ASSIGN_CHUNK):
        block = vectors[start : start + _ASSIGN_CHUNK] @ centroids.T
        out[start : start + _ASSIGN_CHUNK] = block.argmax(axis=1)
    return out


def _cluster_sums(vectors: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(assign, kind="stable")
    sorted_assign = assign[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_assign)) + 1))
    sums = np.add.reduceat(vectors[order].astype(np.float64), starts, axis=0)
    out = np.zeros((k, vectors.shape[1]), dtype=np.float64)
    out[sorted_assign[starts]] = sums
    return out


def _kmeans_pp_init(sample: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = sample.shape[0]
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    dist = np.clip(1.0 - sample.astype(np.float64) @ sample[chosen[0]].astype(np.float64), 0.0, None)
    taken = {int(chosen[0])}
    for i in range(1, k):
        weights = dist * dist
        total = weights.sum()
        if total <= 0.0:
            # remaining mass is zero (duplicated points); take the lowest
            # index not yet chosen to stay deterministic
            idx = next(j for j in range(n) if j not in taken)
        else:
            idx = int(rng.choice(n, p=weights / total))
        chosen[i] = idx
        taken.add(idx)
        dist = np.minimum(
            dist, np.clip(1.0 - sample.astype(np.float64) @ sample[idx].astype(np.float64), 0.0, None)
        )
    return sample[chosen].astype(np.float32).copy()


def train_centroids(
    sample: np.ndarray, k: int, iters: int = 20, seed: int = 42
) -> np.ndarray:
    """Spherical k-means over unit-norm sample rows.

    Assignment is by max dot product; updates re-normalize the member mean.
    Empty clusters re-seed from the farthest point of the largest cluster.
    Stops at the iteration cap or when assignments reach a fixpoint.
    """
    sample = np.asarray(sample, dtype=np.float32)
    n = sample.shape[0]
    if n == 0:
        raise EmptyMatrix("cannot train centroids on an empty sample")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds sample size {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(sample, k, rng)
    prev = None
    for _ in range(iters):
        assign = _assign(sample, centroids).astype(np.int64)
        counts = np.bincount(assign, minlength=k)
        for e in np.flatnonzero(counts == 0):
            largest = int(np.argmax(counts))
            members = np.flatnonzero(assign == largest)
            dots = sample[members] @ centroids[largest]
            farthest = members[int(np.argmin(dots))]
            assign[farthest] = e
            counts[largest] -= 1
            counts[e] += 1
        if prev is not None and np.array_equal(assign, prev):
            break
        sums = _cluster_sums(sample, assign, k)
        norms = np.linalg.norm(sums, axis=1)
        ok = norms > 1e-12
        centroids = centroids.copy()
        centroids[ok] = (sums[ok] / norms[ok, None]).astype(np.float32)
        prev = assign
    return centroids


# --- residual quantization --------------------------------------------------


def pack_buckets(buckets: np.ndarray, nbits: int) -> np.ndarray:
    """Pack (n, dim) bucket indices into bytes, low bits first within a byte."""
    per_byte = 8 // nbits
    flat = buckets.astype(np.uint8).reshape(-1, per_byte)
    shifts = (np.arange(per_byte, dtype=np.uint8) * nbits).astype(np.uint8)
    return (flat << shifts).sum(axis=1, dtype=np.uint16).astype(np.uint8)


def unpack_buckets(packed: np.ndarray, n_tokens: int, dim: int, nbits: int) -> np.ndarray:
    per_byte = 8 // nbits
    mask = (1 << nbits) - 1
    shifts = np.arange(per_byte, dtype=np.uint8) * nbits
    vals = (packed[:, None] >> shifts) & mask
    return vals.reshape(n_tokens, dim)


@dataclass
class CompressedCorpus:
    """Centroid codes plus packed residual buckets for a document corpus."""

    ids: list[str]
    doc_lens: np.ndarray  # int64, tokens per doc
    codes: np.ndarray  # uint32, one centroid id per token
    residuals: np.ndarray  # uint8 packed payload
    cutoffs: np.ndarray  # float32, 2^nbits - 1 ascending bucket boundaries
    midpoints: np.ndarray  # float32, 2^nbits reconstruction values
    nbits: int
    dim: int

    @property
    def n_docs(self) -> int:
        return len(self.ids)

    @property
    def total_tokens(self) -> int:
        return int(self.doc_lens.sum())

    @property
    def doc_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.doc_lens)[:-1]))

    @property
    def residual_bytes_per_token(self) -> int:
        return self.dim * self.nbits // 8


def _bucketize(residuals: np.ndarray, cutoffs: np.ndarray) -> np.ndarray:
    # bucket i covers (cutoffs[i-1], cutoffs[i]]; side='left' lands exact
    # boundary values in the lower bucket
    return np.searchsorted(cutoffs, residuals, side="left")


def _train_buckets(residuals: np.ndarray, nbits: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-mass cutoffs plus per-bucket means from a residual sample."""
    n_buckets = 1 << nbits
    flat = residuals.ravel().astype(np.float64)
    qs = np.arange(1, n_buckets) / n_buckets
    cutoffs = np.quantile(flat, qs).astype(np.float32)
    buckets = _bucketize(flat.astype(np.float32), cutoffs)
    midpoints = np.empty(n_buckets, dtype=np.float32)
    sums = np.bincount(buckets, weights=flat, minlength=n_buckets)
    counts = np.bincount(buckets, minlength=n_buckets)
    for b in range(n_buckets):
        if counts[b] > 0:
            midpoints[b] = sums[b] / counts[b]
        elif b == 0:
            midpoints[b] = cutoffs[0]
        elif b == n_buckets - 1:
            midpoints[b] = cutoffs[-1]
        else:
            midpoints[b] = 0.5 * (cutoffs[b - 1] + cutoffs[b])
    return cutoffs, midpoints


def _quantize_tokens(
    tokens: np.ndarray, centroids: np.ndarray, cutoffs: np.ndarray, nbits: int
) -> tuple[np.ndarray, np.ndarray]:
    codes = _assign(tokens, centroids)
    residuals = tokens - centroids[codes]
    buckets = _bucketize(residuals, cutoffs)
    return codes, pack_buckets(buckets, nbits)


def quantize_corpus(
    emb_set: EmbeddingSet, centroids: np.ndarray, nbits: int
) -> CompressedCorpus:
    """Compress every document against trained centroids.

    Bucket cutoffs are trained on this corpus's own residual components;
    use :func:`requantize` to encode additional documents against an
    existing bucket table.
    """
    dim = emb_set.dim
    if dim * nbits % 8 != 0:
        raise DimNotPackable(f"dim {dim} x nbits {nbits} is not byte-aligned")
    tokens = np.concatenate([m for _, m in emb_set.entries], axis=0).astype(np.float32)
    codes = _assign(tokens, centroids)
    residuals = tokens - centroids[codes]
    cutoffs, midpoints = _train_buckets(residuals, nbits)
    packed = pack_buckets(_bucketize(residuals, cutoffs), nbits)
    return CompressedCorpus(
        ids=list(emb_set.ids),
        doc_lens=np.array([m.shape[0] for _, m in emb_set.entries], dtype=np.int64),
        codes=codes,
        residuals=packed,
        cutoffs=cutoffs,
        midpoints=midpoints,
        nbits=nbits,
        dim=dim,
    )


def decompress_doc(
    corpus: CompressedCorpus, centroids: np.ndarray, doc_ordinal: int
) -> np.ndarray:
    """Reconstruct one document's token matrix (unit-normalized rows)."""
    if not 0 <= doc_ordinal < corpus.n_docs:
        raise OrdinalOutOfRange(f"ordinal {doc_ordinal} not in [0, {corpus.n_docs})")
    offset = int(corpus.doc_offsets[doc_ordinal])
    n_tokens = int(corpus.doc_lens[doc_ordinal])
    bpt = corpus.residual_bytes_per_token
    packed = corpus.residuals[offset * bpt : (offset + n_tokens) * bpt]
    buckets = unpack_buckets(packed, n_tokens, corpus.dim, corpus.nbits)
    recon = centroids[corpus.codes[offset : offset + n_tokens]] + corpus.midpoints[buckets]
    norms = np.maximum(np.linalg.norm(recon, axis=1, keepdims=True), 1e-12)
    return (recon / norms).astype(np.float32)


# --- the index ---------------------------------------------------------------


@dataclass
class PlaidIndex:
    config: PlaidConfig
    centroids: np.ndarray
    corpus: CompressedCorpus
    inverted_lists: list[np.ndarray] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.corpus.dim

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def residual_payload_bytes(self) -> int:
        return int(self.corpus.residuals.nbytes)


def _build_inverted_lists(corpus: CompressedCorpus, k: int) -> list[np.ndarray]:
    doc_of_token = np.repeat(np.arange(corpus.n_docs, dtype=np.int64), corpus.doc_lens)
    pairs = np.unique(corpus.codes.astype(np.int64) * corpus.n_docs + doc_of_token)
    cents = pairs // corpus.n_docs
    docs = pairs % corpus.n_docs
    bounds = np.searchsorted(cents, np.arange(k + 1))
    return [docs[bounds[c] : bounds[c + 1]] for c in range(k)]


def build_index(emb_set: EmbeddingSet, cfg: PlaidConfig | None = None) -> PlaidIndex:
    """Train centroids on a seeded token sample, compress, and index a corpus."""
    cfg = cfg or PlaidConfig()
    if emb_set.kind != KIND_DOCUMENT:
        raise KindMismatch("plaid indexes document sets only")
    if len(emb_set) == 0:
        raise EmptyIndex("cannot index an empty corpus")
    seen: set[str] = set()
    for ident in emb_set.ids:
        if ident in seen:
            raise DuplicateId(ident)
        seen.add(ident)

    tokens = np.concatenate([m for _, m in emb_set.entries], axis=0).astype(np.float32)
    total = tokens.shape[0]
    sample_seed, kmeans_seed = (int(s) for s in np.random.SeedSequence(cfg.seed).generate_state(2))
    if cfg.sample_size < total:
        rng = np.random.default_rng(sample_seed)
        pick = np.sort(rng.choice(total, size=cfg.sample_size, replace=False))
        sample = tokens[pick]
    else:
        sample = tokens
    k = auto_n_centroids(total) if cfg.n_centroids == "auto" else int(cfg.n_centroids)
    k = max(1, min(k, sample.shape[0]))

    centroids = train_centroids(sample, k, iters=cfg.kmeans_iters, seed=kmeans_seed)
    corpus = quantize_corpus(emb_set, centroids, cfg.nbits)
    return PlaidIndex(
        config=replace(cfg, n_centroids=k),
        centroids=centroids,
        corpus=corpus,
        inverted_lists=_build_inverted_lists(corpus, k),
    )


def _approx_scores(index: PlaidIndex, q_cent: np.ndarray, ordinals: np.ndarray) -> np.ndarray:
    """Centroid-only late-interaction score for each candidate ordinal.

    Each document token is stood in for by its centroid: score = sum over
    query tokens of the best q_cent entry among the doc's codes.
    """
    offsets = index.corpus.doc_offsets
    lens = index.corpus.doc_lens
    chunks = [index.corpus.codes[offsets[d] : offsets[d] + lens[d]] for d in ordinals]
    all_codes = np.concatenate(chunks).astype(np.int64)
    sim = q_cent[:, all_codes]
    starts = np.concatenate(([0], np.cumsum(lens[ordinals])[:-1]))
    return np.maximum.reduceat(sim, starts, axis=1).sum(axis=0)


def search(
    index: PlaidIndex,
    query: np.ndarray,
    k: int,
    nprobe: int | None = None,
    n_candidate_docs: int | None = None,
    n_full_docs: int | None = None,
) -> list[ScoredDoc]:
    """Staged retrieval; scores are exact late-interaction on reconstructions."""
    if index.corpus.n_docs == 0:
        raise EmptyIndex("index holds no documents")
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float32)
    if query.ndim != 2 or query.shape[0] == 0:
        raise EmptyMatrix("query matrix must have at least one row")
    if query.shape[1] != index.dim:
        raise DimMismatch(f"query dim {query.shape[1]} != index dim {index.dim}")
    cfg = index.config
    n_docs = index.corpus.n_docs
    nprobe = min(nprobe or cfg.nprobe, index.k)
    n_candidate_docs = n_candidate_docs or cfg.n_candidate_docs
    n_full_docs = min(n_full_docs or cfg.n_full_docs, n_candidate_docs)

    q_cent = query.astype(np.float64) @ index.centroids.astype(np.float64).T
    if k >= n_docs:
        # the caller asked for a full ranking; probing cannot narrow that
        candidates = np.arange(n_docs, dtype=np.int64)
        n_full_docs = max(n_full_docs, n_docs)
    else:
        # stage 1: probe centroids per query token, union their posting lists
        probed: set[int] = set()
        for row in q_cent:
            order = np.argsort(-row, kind="stable")  # ties fall to lowest id
            probed.update(int(c) for c in order[:nprobe])
        candidates = np.unique(
            np.concatenate([index.inverted_lists[c] for c in sorted(probed)])
        )
    if candidates.size == 0:
        return []

    # stage 2: centroid-only pruning down to the exact-scoring budget
    ids = index.corpus.ids
    if candidates.size > n_full_docs:
        approx = _approx_scores(index, q_cent, candidates)
        order = sorted(range(candidates.size), key=lambda i: (-approx[i], ids[candidates[i]]))
        keep = order[: min(n_candidate_docs, len(order))][:n_full_docs]
        candidates = candidates[keep]

    # stage 3: exact scoring on decompressed embeddings
    recon = [decompress_doc(index.corpus, index.centroids, int(d)) for d in candidates]
    scores = maxsim_many(query, recon)
    ranked = sorted(
        (ScoredDoc(ids[int(d)], float(s)) for d, s in zip(candidates, scores)),
        key=lambda sd: (-sd.score, sd.doc_id),
    )
    return ranked[:k]


def add_documents(index: PlaidIndex, new_docs: EmbeddingSet) -> PlaidIndex:
    """New index with extra documents quantized against the existing model.

    Centroids and bucket tables are reused, never retrained; the original
    index object is untouched, so readers can keep using it while the
    returned index replaces it.
    """
    if new_docs.kind != KIND_DOCUMENT:
        raise KindMismatch("can only add document sets")
    if new_docs.dim != index.dim:
        raise DimMismatch(f"new docs dim {new_docs.dim} != index dim {index.dim}")
    if len(new_docs) == 0:
        return index
    existing = set(index.corpus.ids)
    for ident in new_docs.ids:
        if ident in existing:
            raise DuplicateId(ident)
    tokens = np.concatenate([m for _, m in new_docs.entries], axis=0).astype(np.float32)
    codes, packed = _quantize_tokens(
        tokens, index.centroids, index.corpus.cutoffs, index.corpus.nbits
    )
    corpus = CompressedCorpus(
        ids=index.corpus.ids + list(new_docs.ids),
        doc_lens=np.concatenate(
            [index.corpus.doc_lens, [m.shape[0] for _, m in new_docs.entries]]
        ).astype(np.int64),
        codes=np.concatenate([index.corpus.codes, codes]),
        residuals=np.concatenate([index.corpus.residuals, packed]),
        cutoffs=index.corpus.cutoffs,
        midpoints=index.corpus.midpoints,
        nbits=index.corpus.nbits,
        dim=index.corpus.dim,
    )
    return PlaidIndex(
        config=index.config,
        centroids=index.centroids,
        corpus=corpus,
        inverted_lists=_build_inverted_lists(corpus, index.k),
    )


# --- persistence -------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _escape_id(ident: str) -> str:
    return (
        ident.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")
    )


def _unescape_id(raw: str) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\" and i + 1 < len(raw):
            nxt = raw[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def save_index(index: PlaidIndex, directory: str | Path) -> None:
    """Write the index directory; every binary file is checksummed."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus = index.corpus
    files = {
        "centroids.bin": np.ascontiguousarray(index.centroids, dtype="<f4").tobytes(),
        "codes.bin": np.ascontiguousarray(corpus.codes, dtype="<u4").tobytes(),
        "residuals.bin": corpus.residuals.tobytes(),
        "buckets.bin": (
            np.ascontiguousarray(corpus.cutoffs, dtype="<f4").tobytes()
            + np.ascontiguousarray(corpus.midpoints, dtype="<f4").tobytes()
        ),
        "doclens.bin": np.ascontiguousarray(corpus.doc_lens, dtype="<u4").tobytes(),
        "ids.tsv": "".join(
            f"{i}\t{_escape_id(ident)}\n" for i, ident in enumerate(corpus.ids)
        ).encode("utf-8"),
    }
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dim": index.dim,
        "k": index.k,
        "nbits": corpus.nbits,
        "seed": index.config.seed,
        "n_docs": corpus.n_docs,
        "total_tokens": corpus.total_tokens,
        "residual_payload_bytes": index.residual_payload_bytes,
        "config": {
            "n_centroids": index.config.n_centroids,
            "nbits": index.config.nbits,
            "nprobe": index.config.nprobe,
            "n_candidate_docs": index.config.n_candidate_docs,
            "n_full_docs": index.config.n_full_docs,
            "kmeans_iters": index.config.kmeans_iters,
            "seed": index.config.seed,
            "sample_size": index.config.sample_size,
        },
        "files": {name: {"bytes": len(data), "sha256": _sha256(data)} for name, data in files.items()},
    }
    for name, data in files.items():
        (directory / name).write_bytes(data)
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_manifest(directory: Path, expected_format: str) -> dict:
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise BadManifest(f"missing {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BadManifest(f"unreadable manifest: {exc}") from exc
    if manifest.get("format") != expected_format:
        raise BadManifest(f"not a {expected_format} directory")
    if manifest.get("version") != MANIFEST_VERSION:
        raise UnsupportedVersion(f"manifest version {manifest.get('version')}")
    return manifest


def _read_checked(directory: Path, manifest: dict, name: str) -> bytes:
    entry = manifest.get("files", {}).get(name)
    if not isinstance(entry, dict) or "bytes" not in entry or "sha256" not in entry:
        raise BadManifest(f"manifest lists no usable entry for {name}")
    path = directory / name
    if not path.exists():
        raise BadManifest(f"missing file {name}")
    data = path.read_bytes()
    if len(data) != entry["bytes"] or _sha256(data) != entry["sha256"]:
        raise ChecksumMismatch(name)
    return data


def load_index(directory: str | Path) -> PlaidIndex:
    """Load a directory written by :func:`save_index`; verifies checksums."""
    directory = Path(directory)
    manifest = _read_manifest(directory, MANIFEST_FORMAT)
    try:
        dim, k, nbits = manifest["dim"], manifest["k"], manifest["nbits"]
        n_docs = manifest["n_docs"]
        cfg = PlaidConfig(**manifest["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise BadManifest(f"manifest missing or malformed field: {exc}") from exc
    centroids = np.frombuffer(_read_checked(directory, manifest, "centroids.bin"), dtype="<f4")
    if centroids.size != k * dim:
        raise BadManifest("centroids.bin size disagrees with manifest")
    centroids = centroids.reshape(k, dim).copy()
    codes = np.frombuffer(_read_checked(directory, manifest, "codes.bin"), dtype="<u4").copy()
    residuals = np.frombuffer(_read_checked(directory, manifest, "residuals.bin"), dtype=np.uint8).copy()
    buckets_raw = np.frombuffer(_read_checked(directory, manifest, "buckets.bin"), dtype="<f4")
    n_buckets = 1 << nbits
    if buckets_raw.size != 2 * n_buckets - 1:
        raise BadManifest(f"buckets.bin holds {buckets_raw.size} floats, expected {2 * n_buckets - 1}")
    doc_lens = np.frombuffer(_read_checked(directory, manifest, "doclens.bin"), dtype="<u4").astype(np.int64)
    # split on \n only: escaped ids may contain exotic unicode line breaks
    id_lines = _read_checked(directory, manifest, "ids.tsv").decode("utf-8").split("\n")
    if id_lines and id_lines[-1] == "":
        id_lines.pop()
    ids: list[str] = []
    for line_no, line in enumerate(id_lines):
        ordinal, _, raw = line.partition("\t")
        if not ordinal.isdigit() or int(ordinal) != line_no:
            raise BadManifest(f"ids.tsv out of order at line {line_no}")
        ids.append(_unescape_id(raw))
    if len(ids) != n_docs or len(doc_lens) != n_docs:
        raise BadManifest("document count mismatch across files")
    corpus = CompressedCorpus(
        ids=ids,
        doc_lens=doc_lens,
        codes=codes,
        residuals=residuals,
        cutoffs=buckets_raw[: n_buckets - 1].copy(),
        midpoints=buckets_raw[n_buckets - 1 :].copy(),
        nbits=nbits,
        dim=dim,
    )
    return PlaidIndex(
        config=cfg,
        centroids=centroids,
        corpus=corpus,
        inverted_lists=_build_inverted_lists(corpus, k),
    )
