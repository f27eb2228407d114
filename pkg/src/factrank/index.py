"""Vector indexes over triplet embeddings.

Two backends share the (score desc, id asc) ranking order:
  * ExactIndex — full-precision brute-force top-k, the correctness oracle.
  * HnswIndex  — layered small-world graph over int8 scalar-quantized vectors.

Similarity is the raw dot product (maximum inner product); HNSW runs on it
directly without a metric reduction. Quantization ranges are global per
dimension, computed at build time; queries stay full precision.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

INDEX_MAGIC = b"DIFARIDX"
INDEX_VERSION = 1

RankedList = list[tuple[int, float]]


class SnapshotError(ValueError):
    pass


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Permutation sorting by score descending, ties broken by ascending id."""
    return np.lexsort((np.arange(len(scores)), -scores))


def top_k(scores: np.ndarray, k: int) -> RankedList:
    order = rank_order(scores)[:k]
    return [(int(i), float(scores[i])) for i in order]


# ---------------------------------------------------------------------------
# exact search


class ExactIndex:
    """Brute-force dot-product index; id equals insertion position."""

    def __init__(self, vectors: np.ndarray):
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("expected a non-empty (n, d) vector matrix")
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float64)

    @classmethod
    def build(cls, embeddings: np.ndarray) -> "ExactIndex":
        return cls(embeddings)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def search(self, q: np.ndarray, k: int) -> RankedList:
        if k < 1:
            raise ValueError("k must be >= 1")
        if q.shape != (self.dim,):
            raise ValueError(f"query dimension {q.shape} does not match index dim {self.dim}")
        scores = self.vectors @ q
        return top_k(scores, min(k, len(self)))


# ---------------------------------------------------------------------------
# scalar quantization


@dataclass
class QuantizationRanges:
    """Per-dimension [min, max] over the indexed collection."""
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def fit(cls, vectors: np.ndarray) -> "QuantizationRanges":
        # ranges pass through float32 so a snapshot round-trip is exact
        mn = vectors.min(axis=0).astype("<f4").astype(np.float64)
        mx = vectors.max(axis=0).astype("<f4").astype(np.float64)
        return cls(mn, mx)

    @property
    def span(self) -> np.ndarray:
        return self.max - self.min


def quantize(v: np.ndarray, ranges: QuantizationRanges) -> np.ndarray:
    """Map a float vector to uint8 codes; round half away from zero, clamp to [0, 255].

    Dimensions with zero span always code to 0.
    """
    span = ranges.span
    safe = np.where(span > 0.0, span, 1.0)
    x = (v - ranges.min) / safe * 255.0
    codes = np.clip(np.floor(np.abs(x) + 0.5) * np.sign(x), 0.0, 255.0)
    codes[..., span == 0.0] = 0.0
    return codes.astype(np.uint8)


def dequantize(codes: np.ndarray, ranges: QuantizationRanges) -> np.ndarray:
    """Inverse map: min_j + code_j * (max_j - min_j) / 255.

    Evaluated in lerp form so codes 0 and 255 recover min_j and max_j exactly.
    """
    c = codes.astype(np.float64) / 255.0
    return ranges.min * (1.0 - c) + ranges.max * c


# ---------------------------------------------------------------------------
# HNSW


@dataclass
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64


class HnswIndex:
    """Hierarchical navigable small world graph over quantized vectors.

    Construction is single-writer; search on a built index is read-only and
    safe for concurrent callers. Distances during both build and search are
    computed against dequantized stored vectors.
    """

    def __init__(self, params: HnswParams, seed: int,
                 ranges: QuantizationRanges, codes: np.ndarray,
                 levels: np.ndarray, graph: list[dict[int, list[int]]],
                 entry_point: int, fingerprint: bytes = b"\x00" * 16):
        self.params = params
        self.seed = seed
        self.ranges = ranges
        self.codes = codes
        self.levels = levels
        self.graph = graph          # graph[level][node] -> neighbor id list
        self.entry_point = entry_point
        self.fingerprint = fingerprint
        self.deq = dequantize(codes, ranges)

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @property
    def max_level(self) -> int:
        return len(self.graph) - 1

    # -- construction -----------------------------------------------------

    @classmethod
    def build(cls, embeddings: np.ndarray, params: HnswParams = HnswParams(),
              seed: int = 0, fingerprint: bytes = b"\x00" * 16) -> "HnswIndex":
        if embeddings.ndim != 2 or embeddings.shape[0] == 0:
            raise ValueError("expected a non-empty (n, d) vector matrix")
        vectors = np.ascontiguousarray(embeddings, dtype=np.float64)
        n = vectors.shape[0]
        ranges = QuantizationRanges.fit(vectors)
        codes = quantize(vectors, ranges)

        rng = np.random.default_rng(seed)
        m_l = 1.0 / np.log(params.M)
        u = 1.0 - rng.random(n)  # uniform in (0, 1]
        levels = np.floor(-np.log(u) * m_l).astype(np.int64)

        index = cls(params, seed, ranges, codes, levels,
                    [{} for _ in range(int(levels.max()) + 1)], -1, fingerprint)
        for i in range(n):
            index._insert(i)
        return index

    def _degree_cap(self, level: int) -> int:
        return 2 * self.params.M if level == 0 else self.params.M

    def _insert(self, i: int) -> None:
        level = int(self.levels[i])
        for lc in range(level + 1):
            self.graph[lc][i] = []
        if self.entry_point < 0:
            self.entry_point = i
            return
        q = self.deq[i]
        top = int(self.levels[self.entry_point])
        ep = [self.entry_point]
        for lc in range(top, level, -1):
            ep = [self._search_layer(q, ep, 1, lc)[0][0]]
        for lc in range(min(level, top), -1, -1):
            found = self._search_layer(q, ep, self.params.ef_construction, lc)
            neighbors = [nid for nid, _ in found[:self.params.M]]
            self.graph[lc][i] = list(neighbors)
            for nid in neighbors:
                self.graph[lc][nid].append(i)
                self._prune(nid, lc)
            ep = [nid for nid, _ in found]
        if level > top:
            self.entry_point = i

    def _prune(self, node: int, level: int) -> None:
        """Trim a node back to its degree cap, keeping the most similar neighbors;
        dropped edges are removed from both endpoints to keep the layer symmetric."""
        cap = self._degree_cap(level)
        neigh = self.graph[level][node]
        if len(neigh) <= cap:
            return
        ids = np.array(neigh, dtype=np.int64)
        sims = self.deq[ids] @ self.deq[node]
        order = np.lexsort((ids, -sims))
        keep = set(int(ids[j]) for j in order[:cap])
        for dropped in neigh:
            if dropped not in keep:
                self.graph[level][dropped].remove(node)
        self.graph[level][node] = [nid for nid in neigh if nid in keep]

    # -- search -----------------------------------------------------------

    def _search_layer(self, q: np.ndarray, entry_points: list[int], ef: int,
                      level: int) -> RankedList:
        """Best-first beam search on one layer; returns (id, score) sorted by
        (score desc, id asc)."""
        graph = self.graph[level]
        sims = self.deq[np.array(entry_points, dtype=np.int64)] @ q
        visited = set(entry_points)
        # candidates: max-heap via (-score, id); results: min-heap via (score, -id)
        candidates = [(-s, nid) for nid, s in zip(entry_points, sims)]
        heapq.heapify(candidates)
        results = [(s, -nid) for nid, s in zip(entry_points, sims)]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)
        while candidates:
            neg_s, nid = heapq.heappop(candidates)
            if len(results) == ef and -neg_s < results[0][0]:
                break
            fresh = [v for v in graph[nid] if v not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            fresh_ids = np.array(fresh, dtype=np.int64)
            fresh_sims = self.deq[fresh_ids] @ q
            worst = results[0][0] if len(results) == ef else -np.inf
            for v, s in zip(fresh, fresh_sims):
                if len(results) < ef or s > worst:
                    heapq.heappush(candidates, (-s, v))
                    heapq.heappush(results, (s, -v))
                    if len(results) > ef:
                        heapq.heappop(results)
                    worst = results[0][0] if len(results) == ef else -np.inf
        out = [(-nid, s) for s, nid in results]
        out.sort(key=lambda e: (-e[1], e[0]))
        return out

    def search(self, q: np.ndarray, k: int, ef_search: Optional[int] = None) -> RankedList:
        if len(self) == 0 or self.entry_point < 0:
            return []
        if k < 1:
            raise ValueError("k must be >= 1")
        ef = max(ef_search if ef_search is not None else self.params.ef_search, k)
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query dimension {q.shape} does not match index dim {self.dim}")
        ep = [self.entry_point]
        for lc in range(int(self.levels[self.entry_point]), 0, -1):
            ep = [self._search_layer(q, ep, 1, lc)[0][0]]
        found = self._search_layer(q, ep, ef, 0)
        return found[:k]

    # -- structural checks (used by tests) --------------------------------

    def check_invariants(self) -> None:
        n = len(self)
        assert len(self.graph[0]) == n, "layer 0 must contain every node"
        for lc, layer in enumerate(self.graph):
            for node, neigh in layer.items():
                assert self.levels[node] >= lc
                assert len(neigh) <= self._degree_cap(lc), \
                    f"node {node} exceeds degree cap on layer {lc}"
                assert len(set(neigh)) == len(neigh)
                for v in neigh:
                    assert node in layer[v], f"edge {node}->{v} not symmetric on layer {lc}"

    # -- snapshot ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        p = self.params
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sIIIIIQ", INDEX_MAGIC, INDEX_VERSION, self.dim,
                                 len(self), p.M, p.ef_construction, self.seed))
            fh.write(self.fingerprint)
            fh.write(self.ranges.min.astype("<f4").tobytes())
            fh.write(self.ranges.max.astype("<f4").tobytes())
            fh.write(self.codes.tobytes())
            fh.write(struct.pack("<II", self.entry_point & 0xFFFFFFFF, self.max_level))
            for node in range(len(self)):
                fh.write(struct.pack("<I", int(self.levels[node])))
                for lc in range(int(self.levels[node]) + 1):
                    neigh = self.graph[lc][node]
                    fh.write(_varint(len(neigh)))
                    fh.write(np.array(neigh, dtype="<u4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "HnswIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        header_fmt = "<8sIIIIIQ"
        off = struct.calcsize(header_fmt)
        magic, version, dim, n, M, ef_c, seed = struct.unpack_from(header_fmt, data)
        if magic != INDEX_MAGIC:
            raise SnapshotError(f"{path}: not an index snapshot (magic {magic!r})")
        if version != INDEX_VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot version {version}")
        fingerprint = data[off:off + 16]
        off += 16
        mn = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += 4 * dim
        mx = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += 4 * dim
        codes = np.frombuffer(data, dtype=np.uint8, count=n * dim, offset=off)
        codes = codes.reshape(n, dim).copy()
        off += n * dim
        entry_raw, max_level = struct.unpack_from("<II", data, off)
        off += 8
        entry = entry_raw if entry_raw != 0xFFFFFFFF else -1
        levels = np.zeros(n, dtype=np.int64)
        graph: list[dict[int, list[int]]] = [{} for _ in range(max_level + 1)]
        for node in range(n):
            (lvl,) = struct.unpack_from("<I", data, off)
            off += 4
            levels[node] = lvl
            for lc in range(lvl + 1):
                count, off = _read_varint(data, off)
                neigh = np.frombuffer(data, dtype="<u4", count=count, offset=off)
                off += 4 * count
                graph[lc][node] = [int(v) for v in neigh]
        ranges = QuantizationRanges(mn, mx)
        return cls(HnswParams(M, ef_c), seed, ranges, codes, levels, graph,
                   entry, fingerprint)


def _varint(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(data: bytes, offset: int) -> tuple[int, int]:
    shift = 0
    value = 0
    while True:
        byte = data[offset]
        offset += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, offset
        shift += 7
