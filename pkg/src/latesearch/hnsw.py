"""Token-level HNSW index with exact late-interaction reranking.

Every corpus token becomes one node of a layered navigable-small-world
graph; payloads map nodes back to (document ordinal, token position).
Retrieval generates candidate documents by running an approximate
nearest-neighbor search per query token, then scores the candidates
exactly on the retained original embeddings.

Distance is the negative dot product (rank-equivalent to cosine distance
on unit vectors). All comparisons tie-break on ascending node id, and
levels come from a seeded generator, so a fixed seed and insertion order
reproduce the graph and its search results bit for bit.

Neighbor links are kept symmetric: when a full node drops a neighbor, the
reverse edge is dropped too. Neighbor selection is plain top-m by
similarity (no diversification heuristic); the hot loops are numba-jitted
because insertion is inherently sequential.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .embstore import KIND_DOCUMENT, EmbeddingSet, read_embeddings, write_embeddings
from .errors import (
    BadManifest,
    ChecksumMismatch,
    DimMismatch,
    EmptyIndex,
    EmptyMatrix,
    KindMismatch,
    UnsupportedVersion,
)
from .scoring import ScoredDoc, maxsim_many

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "latesearch-hnsw"
MANIFEST_VERSION = 1

# levels above this are astronomically unlikely for any level_norm_factor
# derived from m >= 2; capping keeps upper-layer storage bounded
MAX_LEVEL = 8


@dataclass(frozen=True)
class HnswConfig:
    m: int = 16
    ef_construction: int = 128
    ef_search: int = 64
    seed: int = 42

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.ef_search < 1 or self.ef_construction < 1:
            raise ValueError("ef values must be >= 1")

    @property
    def level_norm_factor(self) -> float:
        return 1.0 / math.log(self.m)


# --- jitted graph kernels ----------------------------------------------------
#
# Heaps are binary heaps over parallel (key, id) arrays ordered by the
# lexicographic pair, which bakes the ascending-id tie-break into every
# comparison. The result set reuses the same min-heap with negated keys
# and ids, turning it into a max-heap that evicts the worst (dist, id).


@njit(cache=True)
def _neg_dot(vecs, i, q):
    s = 0.0
    for t in range(q.shape[0]):
        s -= vecs[i, t] * q[t]
    return s


@njit(cache=True)
def _heap_push(hd, hi, size, d, i):
    hd[size] = d
    hi[size] = i
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if hd[parent] > hd[pos] or (hd[parent] == hd[pos] and hi[parent] > hi[pos]):
            hd[parent], hd[pos] = hd[pos], hd[parent]
            hi[parent], hi[pos] = hi[pos], hi[parent]
            pos = parent
        else:
            break
    return size + 1


@njit(cache=True)
def _heap_pop(hd, hi, size):
    d = hd[0]
    i = hi[0]
    size -= 1
    hd[0] = hd[size]
    hi[0] = hi[size]
    pos = 0
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and (
            hd[left] < hd[best] or (hd[left] == hd[best] and hi[left] < hi[best])
        ):
            best = left
        if right < size and (
            hd[right] < hd[best] or (hd[right] == hd[best] and hi[right] < hi[best])
        ):
            best = right
        if best == pos:
            break
        hd[best], hd[pos] = hd[pos], hd[best]
        hi[best], hi[pos] = hi[pos], hi[best]
        pos = best
    return d, i, size


@njit(cache=True)
def _greedy(vecs, adj, deg, q, cur, cur_d):
    improved = True
    while improved:
        improved = False
        for j in range(deg[cur]):
            nb = adj[cur, j]
            d = _neg_dot(vecs, nb, q)
            if d < cur_d or (d == cur_d and nb < cur):
                cur_d = d
                cur = nb
                improved = True
    return cur, cur_d


@njit(cache=True)
def _search_layer(vecs, adj, deg, q, entries, ef, n_valid):
    visited = np.zeros(n_valid, dtype=np.uint8)
    cand_d = np.empty(n_valid + 1, dtype=np.float64)
    cand_i = np.empty(n_valid + 1, dtype=np.int64)
    res_d = np.empty(ef + 1, dtype=np.float64)
    res_i = np.empty(ef + 1, dtype=np.int64)
    nc = 0
    nr = 0
    for t in range(entries.shape[0]):
        e = entries[t]
        if visited[e]:
            continue
        visited[e] = 1
        d = _neg_dot(vecs, e, q)
        nc = _heap_push(cand_d, cand_i, nc, d, e)
        nr = _heap_push(res_d, res_i, nr, -d, -e)
        if nr > ef:
            _, _, nr = _heap_pop(res_d, res_i, nr)
    while nc > 0:
        d, ci, nc = _heap_pop(cand_d, cand_i, nc)
        if nr >= ef:
            wd = -res_d[0]
            wi = -res_i[0]
            if d > wd or (d == wd and ci > wi):
                break
        for j in range(deg[ci]):
            nb = adj[ci, j]
            if visited[nb]:
                continue
            visited[nb] = 1
            nd = _neg_dot(vecs, nb, q)
            take = nr < ef
            if not take:
                wd = -res_d[0]
                wi = -res_i[0]
                take = nd < wd or (nd == wd and nb < wi)
            if take:
                nc = _heap_push(cand_d, cand_i, nc, nd, nb)
                nr = _heap_push(res_d, res_i, nr, -nd, -nb)
                if nr > ef:
                    _, _, nr = _heap_pop(res_d, res_i, nr)
    out_d = np.empty(nr, dtype=np.float64)
    out_i = np.empty(nr, dtype=np.int64)
    size = nr
    while size > 0:
        nd, ni, size = _heap_pop(res_d, res_i, size)
        out_d[size] = -nd
        out_i[size] = -ni
    return out_d, out_i


@njit(cache=True)
def _prune(vecs, adj, deg, e, cap):
    n = deg[e]
    dists = np.empty(n, dtype=np.float64)
    ids = np.empty(n, dtype=np.int64)
    for j in range(n):
        ids[j] = adj[e, j]
        dists[j] = _neg_dot(vecs, ids[j], vecs[e])
    for a in range(1, n):
        dv = dists[a]
        iv = ids[a]
        b = a - 1
        while b >= 0 and (dists[b] > dv or (dists[b] == dv and ids[b] > iv)):
            dists[b + 1] = dists[b]
            ids[b + 1] = ids[b]
            b -= 1
        dists[b + 1] = dv
        ids[b + 1] = iv
    for j in range(cap, n):
        r = ids[j]
        for x in range(deg[r]):
            if adj[r, x] == e:
                adj[r, x] = adj[r, deg[r] - 1]
                deg[r] -= 1
                break
    for j in range(cap):
        adj[e, j] = ids[j]
    deg[e] = cap


@njit(cache=True)
def _connect(vecs, adj, deg, new_id, sel, cap):
    for t in range(sel.shape[0]):
        e = sel[t]
        adj[new_id, deg[new_id]] = e
        deg[new_id] += 1
        adj[e, deg[e]] = new_id
        deg[e] += 1
        if deg[e] > cap:
            _prune(vecs, adj, deg, e, cap)


@njit(cache=True)
def _entry_dist(vecs, i, q):
    return _neg_dot(vecs, i, q)


# --- the index ----------------------------------------------------------------


class TokenGraphIndex:
    """Layered proximity graph over token embeddings.

    Nodes may be inserted directly (see :meth:`insert`) or in bulk from an
    :class:`EmbeddingSet` via :func:`build_token_graph`, which also retains
    the original set for exact reranking in :meth:`retrieve`.
    """

    def __init__(self, dim: int, config: HnswConfig | None = None):
        self.config = config or HnswConfig()
        self.dim = dim
        self.docs: EmbeddingSet | None = None
        self._rng = np.random.default_rng(self.config.seed)
        m = self.config.m
        cap = 1024
        self._vecs = np.zeros((cap, dim), dtype=np.float32)
        self._levels = np.zeros(cap, dtype=np.int8)
        self._payloads = np.zeros((cap, 2), dtype=np.int64)
        self._adj0 = np.zeros((cap, 2 * m + 1), dtype=np.int64)
        self._deg0 = np.zeros(cap, dtype=np.int64)
        self._adj_hi = np.zeros((MAX_LEVEL, cap, m + 1), dtype=np.int64)
        self._deg_hi = np.zeros((MAX_LEVEL, cap), dtype=np.int64)
        self.n_nodes = 0
        self.entry_point = -1
        self.entry_level = -1

    # -- plumbing --

    def _grow(self, needed: int) -> None:
        cap = self._vecs.shape[0]
        if needed <= cap:
            return
        new_cap = max(2 * cap, needed)

        def spread(arr, shape):
            out = np.zeros(shape, dtype=arr.dtype)
            out[tuple(slice(0, s) for s in arr.shape)] = arr
            return out

        self._vecs = spread(self._vecs, (new_cap, self.dim))
        self._levels = spread(self._levels, (new_cap,))
        self._payloads = spread(self._payloads, (new_cap, 2))
        self._adj0 = spread(self._adj0, (new_cap, self._adj0.shape[1]))
        self._deg0 = spread(self._deg0, (new_cap,))
        self._adj_hi = spread(self._adj_hi, (MAX_LEVEL, new_cap, self._adj_hi.shape[2]))
        self._deg_hi = spread(self._deg_hi, (MAX_LEVEL, new_cap))

    def _layer(self, level: int) -> tuple[np.ndarray, np.ndarray, int]:
        if level == 0:
            return self._adj0, self._deg0, 2 * self.config.m
        return self._adj_hi[level - 1], self._deg_hi[level - 1], self.config.m

    def _sample_level(self) -> int:
        u = 1.0 - self._rng.random()  # in (0, 1], avoids log(0)
        return min(int(-math.log(u) * self.config.level_norm_factor), MAX_LEVEL)

    def node_level(self, node: int) -> int:
        return int(self._levels[node])

    def neighbors(self, node: int, level: int) -> list[int]:
        adj, deg, _ = self._layer(level)
        return [int(x) for x in adj[node, : deg[node]]]

    def payload(self, node: int) -> tuple[int, int]:
        return int(self._payloads[node, 0]), int(self._payloads[node, 1])

    # -- construction --

    def insert(self, vector: np.ndarray, payload: tuple[int, int] = (0, 0)) -> int:
        """Insert one unit vector; returns the new node id."""
        vector = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vector.shape[0] != self.dim:
            raise DimMismatch(f"vector dim {vector.shape[0]} != index dim {self.dim}")
        level = self._sample_level()
        node = self.n_nodes
        self._grow(node + 1)
        self._vecs[node] = vector
        self._levels[node] = level
        self._payloads[node] = payload
        self.n_nodes += 1

        if node == 0:
            self.entry_point = 0
            self.entry_level = level
            return 0

        q = self._vecs[node]
        cur = self.entry_point
        cur_d = float(_entry_dist(self._vecs, cur, q))
        for lvl in range(self.entry_level, level, -1):
            adj, deg, _ = self._layer(lvl)
            cur, cur_d = _greedy(self._vecs, adj, deg, q, cur, cur_d)

        entries = np.array([cur], dtype=np.int64)
        for lvl in range(min(level, self.entry_level), -1, -1):
            adj, deg, cap = self._layer(lvl)
            _, found = _search_layer(
                self._vecs, adj, deg, q, entries, self.config.ef_construction, node
            )
            sel = found[: min(self.config.m, found.shape[0])]
            _connect(self._vecs, adj, deg, node, sel, cap)
            entries = found

        if level > self.entry_level:
            self.entry_point = node
            self.entry_level = level
        return node

    # -- queries --

    def search(self, vector: np.ndarray, k: int, ef: int | None = None) -> list[tuple[int, float]]:
        """Top-k nodes by dot product, best first, ties by ascending id.

        When k or the effective ef reaches the node count the graph walk
        degenerates into an exact scan, so asking for everything returns
        everything.
        """
        if self.n_nodes == 0:
            raise EmptyIndex("no nodes inserted")
        vector = np.asarray(vector, dtype=np.float32).reshape(-1)
        if vector.shape[0] != self.dim:
            raise DimMismatch(f"vector dim {vector.shape[0]} != index dim {self.dim}")
        if k < 1:
            raise ValueError("k must be >= 1")
        n = self.n_nodes
        ef_eff = max(ef if ef is not None else self.config.ef_search, min(k, n))

        if k >= n or ef_eff >= n:
            sims = self._vecs[:n].astype(np.float64) @ vector.astype(np.float64)
            order = np.lexsort((np.arange(n), -sims))[: min(k, n)]
            return [(int(i), float(sims[i])) for i in order]

        # a small beam through the upper layers seeds layer 0 with entry
        # points from several basins, which matters on heavily clustered data
        beam = min(self.config.m, ef_eff)
        entries = np.array([self.entry_point], dtype=np.int64)
        for lvl in range(self.entry_level, 0, -1):
            adj, deg, _ = self._layer(lvl)
            _, entries = _search_layer(self._vecs, adj, deg, vector, entries, beam, n)
        adj, deg, _ = self._layer(0)
        dists, ids = _search_layer(self._vecs, adj, deg, vector, entries, ef_eff, n)
        return [(int(i), float(-d)) for d, i in zip(dists[:k], ids[:k])]

    def _doc_matrices(self) -> tuple[dict[int, str], dict[int, np.ndarray]]:
        if self.docs is not None:
            ids = {i: ident for i, ident in enumerate(self.docs.ids)}
            mats = {i: m for i, (_, m) in enumerate(self.docs.entries)}
            return ids, mats
        # raw-insert fallback: group node vectors by payload doc ordinal
        n = self.n_nodes
        ordinals = self._payloads[:n, 0]
        positions = self._payloads[:n, 1]
        ids = {}
        mats = {}
        for d in np.unique(ordinals):
            mask = ordinals == d
            rows = self._vecs[:n][mask][np.argsort(positions[mask], kind="stable")]
            mats[int(d)] = rows
            ids[int(d)] = str(int(d))
        return ids, mats

    def retrieve(self, query: np.ndarray, k: int, k_token: int = 100) -> list[ScoredDoc]:
        """Candidate generation per query token, exact rerank on originals."""
        if self.n_nodes == 0:
            raise EmptyIndex("no nodes inserted")
        query = np.asarray(query, dtype=np.float32)
        if query.ndim != 2 or query.shape[0] == 0:
            raise EmptyMatrix("query matrix must have at least one row")
        if query.shape[1] != self.dim:
            raise DimMismatch(f"query dim {query.shape[1]} != index dim {self.dim}")
        ef = max(self.config.ef_search, k_token)
        cand: set[int] = set()
        for row in query:
            for node, _ in self.search(row, k_token, ef=ef):
                cand.add(int(self._payloads[node, 0]))
        ids, mats = self._doc_matrices()
        ordinals = sorted(cand)
        scores = maxsim_many(query, [mats[d] for d in ordinals])
        ranked = sorted(
            (ScoredDoc(ids[d], float(s)) for d, s in zip(ordinals, scores)),
            key=lambda sd: (-sd.score, sd.doc_id),
        )
        return ranked[:k]


def build_token_graph(emb_set: EmbeddingSet, config: HnswConfig | None = None) -> TokenGraphIndex:
    """Index every token of a document set; insertion order is corpus order."""
    if emb_set.kind != KIND_DOCUMENT:
        raise KindMismatch("token graph indexes document sets only")
    if len(emb_set) == 0:
        raise EmptyIndex("cannot index an empty corpus")
    index = TokenGraphIndex(dim=emb_set.dim, config=config)
    index.docs = emb_set
    for ordinal, (_, matrix) in enumerate(emb_set.entries):
        for pos in range(matrix.shape[0]):
            index.insert(matrix[pos], (ordinal, pos))
    return index


# --- persistence ---------------------------------------------------------------


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_token_graph(index: TokenGraphIndex, directory: str | Path) -> None:
    """Write manifest + graph + payloads + an embedded copy of the originals."""
    if index.docs is None:
        raise ValueError("only indexes built from an EmbeddingSet can be saved")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    graph = bytearray()
    n = index.n_nodes
    for node in range(n):
        level = index.node_level(node)
        graph += struct.pack("<B", level)
        for lvl in range(level + 1):
            adj, deg, _ = index._layer(lvl)
            d = int(deg[node])
            graph += struct.pack("<H", d)
            graph += np.ascontiguousarray(adj[node, :d], dtype="<u4").tobytes()
    payloads = np.ascontiguousarray(index._payloads[:n], dtype="<u4").tobytes()

    plem_path = directory / "originals.plem"
    write_embeddings(index.docs, plem_path)
    files = {
        "graph.bin": bytes(graph),
        "payloads.bin": payloads,
        "originals.plem": plem_path.read_bytes(),
    }
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dim": index.dim,
        "n_nodes": n,
        "entry_point": index.entry_point,
        "entry_level": index.entry_level,
        "n_docs": len(index.docs),
        "config": {
            "m": index.config.m,
            "ef_construction": index.config.ef_construction,
            "ef_search": index.config.ef_search,
            "seed": index.config.seed,
        },
        "files": {name: {"bytes": len(data), "sha256": _sha256(data)} for name, data in files.items()},
    }
    (directory / "graph.bin").write_bytes(files["graph.bin"])
    (directory / "payloads.bin").write_bytes(files["payloads.bin"])
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_token_graph(directory: str | Path) -> TokenGraphIndex:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise BadManifest(f"missing {MANIFEST_NAME} in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BadManifest(f"unreadable manifest: {exc}") from exc
    if manifest.get("format") != MANIFEST_FORMAT:
        raise BadManifest(f"not a {MANIFEST_FORMAT} directory")
    if manifest.get("version") != MANIFEST_VERSION:
        raise UnsupportedVersion(f"manifest version {manifest.get('version')}")
    try:
        config = HnswConfig(**manifest["config"])
        dim = manifest["dim"]
        n = manifest["n_nodes"]
        entry_point = manifest["entry_point"]
        entry_level = manifest["entry_level"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadManifest(f"manifest missing or malformed field: {exc}") from exc

    def read_checked(name: str) -> bytes:
        entry = manifest.get("files", {}).get(name)
        if not isinstance(entry, dict) or "bytes" not in entry or "sha256" not in entry:
            raise BadManifest(f"manifest lists no usable entry for {name}")
        fpath = directory / name
        if not fpath.exists():
            raise BadManifest(f"missing file {name}")
        data = fpath.read_bytes()
        if len(data) != entry["bytes"] or _sha256(data) != entry["sha256"]:
            raise ChecksumMismatch(name)
        return data

    graph = read_checked("graph.bin")
    payload_bytes = read_checked("payloads.bin")
    read_checked("originals.plem")
    docs = read_embeddings(directory / "originals.plem")

    index = TokenGraphIndex(dim=dim, config=config)
    index.docs = docs
    index._grow(n)
    index.n_nodes = n
    index.entry_point = entry_point
    index.entry_level = entry_level
    index._payloads[:n] = (
        np.frombuffer(payload_bytes, dtype="<u4").reshape(n, 2).astype(np.int64)
    )

    # token vectors come back from the embedded originals via the payloads
    all_tokens = np.concatenate([m for _, m in docs.entries], axis=0)
    lens = np.array([m.shape[0] for _, m in docs.entries], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(lens)[:-1]))
    flat = offsets[index._payloads[:n, 0]] + index._payloads[:n, 1]
    index._vecs[:n] = all_tokens[flat]

    pos = 0
    for node in range(n):
        if pos + 1 > len(graph):
            raise BadManifest("graph.bin truncated")
        level = graph[pos]
        pos += 1
        index._levels[node] = level
        for lvl in range(level + 1):
            if pos + 2 > len(graph):
                raise BadManifest("graph.bin truncated")
            (d,) = struct.unpack_from("<H", graph, pos)
            pos += 2
            adj, deg, cap = index._layer(lvl)
            if d > cap:
                raise BadManifest(f"degree {d} exceeds cap {cap}")
            if pos + 4 * d > len(graph):
                raise BadManifest("graph.bin truncated")
            adj[node, :d] = np.frombuffer(graph, dtype="<u4", count=d, offset=pos).astype(np.int64)
            deg[node] = d
            pos += 4 * d
    if pos != len(graph):
        raise BadManifest("trailing bytes in graph.bin")
    return index
