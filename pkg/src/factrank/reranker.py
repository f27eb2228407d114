"""Joint cross-scorer for (query, triplet) pairs.

Unlike the bi-encoder, the score is not decomposable: besides two mean-pooled
hashed embeddings it uses token-level interaction features (overlap count,
Jaccard ratio, pooled-embedding dot product) computed from the pair jointly.
Trained with binary cross-entropy on gold pairs vs hard negatives mined from
retrieval output.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .encoder import EncoderModel
from .index import RankedList, top_k
from .kg import KGStore
from .queries import Query
from .verbalizer import hash_ids, tokenize, verbalize_triplet

RERANKER_MAGIC = b"DIFARRRK"
RERANKER_VERSION = 1

_EPS = 1e-7  # probability clamp for the BCE logs


class SnapshotError(ValueError):
    pass


@dataclass
class RerankerModel:
    buckets: int
    dim: int
    embedding: np.ndarray  # (buckets, dim)
    weights: np.ndarray    # (2*dim + 3,): [w_x | w_t | w_overlap, w_jaccard, w_dot]
    bias: float

    @classmethod
    def create(cls, buckets: int = 1 << 16, dim: int = 32, seed: int = 0) -> "RerankerModel":
        """Seeded init. The pooled-dot interaction weight starts at 1 rather
        than 0: with all-zero weights the embedding table receives no gradient
        through the dot feature, which stalls training near the saddle."""
        rng = np.random.default_rng(seed)
        emb = rng.uniform(-0.05, 0.05, size=(buckets, dim))
        weights = np.zeros(2 * dim + 3)
        weights[2 * dim + 2] = 1.0
        return cls(buckets, dim, emb, weights, 0.0)

    def copy(self) -> "RerankerModel":
        return RerankerModel(self.buckets, self.dim, self.embedding.copy(),
                             self.weights.copy(), self.bias)

    def to_bytes(self) -> bytes:
        header = struct.pack("<8sIII", RERANKER_MAGIC, RERANKER_VERSION,
                             self.buckets, self.dim)
        return b"".join([header,
                         self.embedding.astype("<f4").tobytes(),
                         self.weights.astype("<f4").tobytes(),
                         np.array([self.bias], dtype="<f4").tobytes()])

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "RerankerModel":
        with open(path, "rb") as fh:
            data = fh.read()
        fmt = "<8sIII"
        magic, version, buckets, dim = struct.unpack_from(fmt, data)
        if magic != RERANKER_MAGIC:
            raise SnapshotError(f"{path}: not a reranker snapshot (magic {magic!r})")
        if version != RERANKER_VERSION:
            raise SnapshotError(f"{path}: unsupported snapshot version {version}")
        off = struct.calcsize(fmt)
        emb = np.frombuffer(data, dtype="<f4", count=buckets * dim, offset=off)
        emb = emb.reshape(buckets, dim).astype(np.float64)
        off += 4 * buckets * dim
        weights = np.frombuffer(data, dtype="<f4", count=2 * dim + 3,
                                offset=off).astype(np.float64)
        off += 4 * (2 * dim + 3)
        bias = float(np.frombuffer(data, dtype="<f4", count=1, offset=off)[0])
        return cls(buckets, dim, emb, weights, bias)


@dataclass
class Pair:
    """One labeled training pair, with token ids and overlap stats precomputed."""
    x_ids: np.ndarray
    t_ids: np.ndarray
    overlap: float   # |x ∩ t| on distinct tokens
    jaccard: float   # |x ∩ t| / |x ∪ t|, 0 when both empty
    label: float

    @classmethod
    def from_tokens(cls, model: RerankerModel, x_tokens: list[str],
                    t_tokens: list[str], label: float = 0.0) -> "Pair":
        xs, ts = set(x_tokens), set(t_tokens)
        union = len(xs | ts)
        inter = len(xs & ts)
        return cls(hash_ids(x_tokens, model.buckets), hash_ids(t_tokens, model.buckets),
                   float(inter), float(inter) / union if union else 0.0, label)


def _pool(model: RerankerModel, ids: np.ndarray) -> np.ndarray:
    if len(ids) == 0:
        return np.zeros(model.dim)
    return model.embedding[ids].mean(axis=0)


def _logit(model: RerankerModel, pair: Pair) -> tuple[float, np.ndarray, np.ndarray]:
    px = _pool(model, pair.x_ids)
    pt = _pool(model, pair.t_ids)
    d = model.dim
    s = (float(model.weights[:d] @ px) + float(model.weights[d:2 * d] @ pt)
         + model.weights[2 * d] * pair.overlap
         + model.weights[2 * d + 1] * pair.jaccard
         + model.weights[2 * d + 2] * float(px @ pt)
         + model.bias)
    return s, px, pt


def score_pair(model: RerankerModel, x_tokens: list[str], t_tokens: list[str]) -> float:
    """Joint relevance probability of a (query, triplet) token-sequence pair."""
    pair = Pair.from_tokens(model, x_tokens, t_tokens)
    s, _, _ = _logit(model, pair)
    return 1.0 / (1.0 + math.exp(-s))


@dataclass
class RerankerGradients:
    emb_rows: np.ndarray
    emb: np.ndarray
    weights: np.ndarray
    bias: float


def _pool_batch(model: RerankerModel, id_lists: list[np.ndarray]) -> np.ndarray:
    """Mean-pooled embedding per id list, stacked; empty lists pool to zero."""
    m = len(id_lists)
    out = np.zeros((m, model.dim))
    lengths = np.array([len(ids) for ids in id_lists], dtype=np.int64)
    if lengths.sum():
        flat = np.concatenate([ids for ids in id_lists if len(ids)])
        seg = np.repeat(np.flatnonzero(lengths), lengths[lengths > 0])
        np.add.at(out, seg, model.embedding[flat])
        out[lengths > 0] /= lengths[lengths > 0, None]
    return out


def _forward(model: RerankerModel, batch: list[Pair]):
    d = model.dim
    px = _pool_batch(model, [p.x_ids for p in batch])
    pt = _pool_batch(model, [p.t_ids for p in batch])
    dots = np.einsum("ij,ij->i", px, pt)
    s = (px @ model.weights[:d] + pt @ model.weights[d:2 * d]
         + model.weights[2 * d] * np.array([p.overlap for p in batch])
         + model.weights[2 * d + 1] * np.array([p.jaccard for p in batch])
         + model.weights[2 * d + 2] * dots
         + model.bias)
    return s, px, pt, dots


def bce_loss(model: RerankerModel, batch: list[Pair]) -> float:
    """Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    if not batch:
        raise ValueError("batch must be non-empty")
    s, _, _, _ = _forward(model, batch)
    p = np.clip(1.0 / (1.0 + np.exp(-s)), _EPS, 1.0 - _EPS)
    y = np.array([pair.label for pair in batch])
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def bce_gradients(model: RerankerModel, batch: list[Pair]) -> RerankerGradients:
    """Analytic gradients of bce_loss over all parameter groups."""
    if not batch:
        raise ValueError("batch must be non-empty")
    d = model.dim
    s, px, pt, dots = _forward(model, batch)
    p = 1.0 / (1.0 + np.exp(-s))
    y = np.array([pair.label for pair in batch])
    ds = (p - y) / len(batch)

    d_weights = np.concatenate([
        ds @ px, ds @ pt,
        [float(ds @ [pair.overlap for pair in batch]),
         float(ds @ [pair.jaccard for pair in batch]),
         float(ds @ dots)]])
    d_bias = float(ds.sum())

    w_dot = model.weights[2 * d + 2]
    d_px = ds[:, None] * (model.weights[None, :d] + w_dot * pt)
    d_pt = ds[:, None] * (model.weights[None, d:2 * d] + w_dot * px)
    flat_ids: list[np.ndarray] = []
    flat_grads: list[np.ndarray] = []
    for i, pair in enumerate(batch):
        if len(pair.x_ids):
            flat_ids.append(pair.x_ids)
            flat_grads.append(np.repeat(d_px[i:i + 1] / len(pair.x_ids),
                                        len(pair.x_ids), axis=0))
        if len(pair.t_ids):
            flat_ids.append(pair.t_ids)
            flat_grads.append(np.repeat(d_pt[i:i + 1] / len(pair.t_ids),
                                        len(pair.t_ids), axis=0))
    if flat_ids:
        all_ids = np.concatenate(flat_ids)
        all_grads = np.concatenate(flat_grads)
        rows, inverse = np.unique(all_ids, return_inverse=True)
        emb_grad = np.zeros((len(rows), d))
        np.add.at(emb_grad, inverse, all_grads)
    else:
        rows = np.empty(0, dtype=np.int64)
        emb_grad = np.zeros((0, d))
    return RerankerGradients(rows, emb_grad, d_weights, d_bias)


# ---------------------------------------------------------------------------
# hard-negative mining


@dataclass
class MinedNegatives:
    negatives: dict[str, list[int]]   # query id -> negative triplet ids, retrieval order
    top_k: int
    subset_fraction: float
    epoch: int = 0


def mine_negatives(enc_model: EncoderModel, store: KGStore, queries: list[Query],
                   subset_fraction: float, top_k_mine: int, seed: int,
                   epoch: int = 0) -> MinedNegatives:
    """Top-ranked wrong triplets per query, retrieved over a seeded KG subset.

    Each query's golds always join the candidate pool so that dropping them is
    meaningful; surviving candidates keep retrieval order.
    """
    if not (0.0 < subset_fraction <= 1.0):
        raise ValueError("subset_fraction must be in (0, 1]")
    if top_k_mine < 1:
        raise ValueError("top_k must be >= 1")
    n = len(store)
    if n == 0:
        raise ValueError("cannot mine negatives from an empty store")
    rng = np.random.default_rng(seed)
    m = int(math.ceil(subset_fraction * n))
    subset = np.sort(rng.choice(n, size=m, replace=False))

    all_golds = sorted({g for q in queries for g in q.gold})
    cand_ids = np.unique(np.concatenate([subset, np.array(all_golds, dtype=np.int64)])
                         if all_golds else subset)
    id_lists = [hash_ids(verbalize_triplet(store.get(int(i))), enc_model.buckets)
                for i in cand_ids]
    cand_vecs = enc_model.encode_ids_batch(id_lists)
    subset_mask = np.isin(cand_ids, subset)

    negatives: dict[str, list[int]] = {}
    for q in queries:
        gold = set(q.gold)
        pool = subset_mask | np.isin(cand_ids, np.array(q.gold, dtype=np.int64))
        pool_ids = cand_ids[pool]
        scores = cand_vecs[pool] @ enc_model.encode_text(q.text)
        ranked = top_k(scores, min(top_k_mine, len(pool_ids)))
        negatives[q.id] = [int(pool_ids[i]) for i, _ in ranked
                           if int(pool_ids[i]) not in gold]
    return MinedNegatives(negatives, top_k_mine, subset_fraction, epoch)


# ---------------------------------------------------------------------------
# training


@dataclass
class RerankTrainConfig:
    epochs: int = 100
    refresh_interval: int = 10
    negatives_per_query: int = 4
    batch_size: int = 64
    lr: float = 2.0
    subset_fraction: float = 1.0
    mine_top_k: int = 100
    seed: int = 0


def train_reranker(model: RerankerModel, queries: list[Query], store: KGStore,
                   enc_model: EncoderModel,
                   config: RerankTrainConfig) -> tuple[RerankerModel, list[float]]:
    """BCE SGD with hard negatives re-mined every refresh_interval epochs.

    Positive pairs are (query, each gold); negatives are drawn per query per
    epoch from the current mined list. Mutates and returns the model, plus the
    per-epoch mean loss trace.
    """
    if not queries:
        raise ValueError("training data is empty")
    if config.refresh_interval < 1:
        raise ValueError("refresh_interval must be >= 1")
    if config.lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {config.lr}")

    q_tokens = {q.id: tokenize(q.text) for q in queries}
    t_tokens: dict[int, list[str]] = {}

    def triplet_tokens(tid: int) -> list[str]:
        if tid not in t_tokens:
            t_tokens[tid] = verbalize_triplet(store.get(tid))
        return t_tokens[tid]

    pair_cache: dict[tuple[str, int, float], Pair] = {}

    def make_pair(qid: str, tid: int, label: float) -> Pair:
        key = (qid, tid, label)
        if key not in pair_cache:
            pair_cache[key] = Pair.from_tokens(model, q_tokens[qid],
                                               triplet_tokens(tid), label)
        return pair_cache[key]

    rng = np.random.default_rng(config.seed)
    mined: Optional[MinedNegatives] = None
    trace = []
    for epoch in range(config.epochs):
        if epoch % config.refresh_interval == 0:
            mined = mine_negatives(enc_model, store, queries,
                                   config.subset_fraction, config.mine_top_k,
                                   seed=_mining_seed(config.seed, epoch), epoch=epoch)
        pairs: list[Pair] = []
        for q in queries:
            for g in q.gold:
                pairs.append(make_pair(q.id, g, 1.0))
            negs = mined.negatives.get(q.id, [])
            if negs:
                take = min(config.negatives_per_query, len(negs))
                picks = rng.choice(len(negs), size=take, replace=False)
                for j in sorted(int(p) for p in picks):
                    pairs.append(make_pair(q.id, negs[j], 0.0))
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[start:start + config.batch_size]]
            losses.append(bce_loss(model, batch))
            grads = bce_gradients(model, batch)
            model.embedding[grads.emb_rows] -= config.lr * grads.emb
            model.weights -= config.lr * grads.weights
            model.bias -= config.lr * grads.bias
        trace.append(float(np.mean(losses)))
    return model, trace


def _mining_seed(seed: int, epoch: int) -> int:
    digest = hashlib.blake2b(f"mine:{seed}:{epoch}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# inference


def rerank(model: RerankerModel, query_text: str, ranked: RankedList,
           store: KGStore, top_k_rerank: int = 100) -> RankedList:
    """Re-score and re-sort the first min(top_k_rerank, len) entries; the tail
    keeps retriever order and follows the reranked block unchanged."""
    if top_k_rerank < 1:
        raise ValueError("top_k_rerank must be >= 1")
    x_tokens = tokenize(query_text)
    block = ranked[:top_k_rerank]
    tail = ranked[top_k_rerank:]
    rescored = [(tid, score_pair(model, x_tokens, verbalize_triplet(store.get(tid))))
                for tid, _ in block]
    rescored.sort(key=lambda e: (-e[1], e[0]))
    return rescored + tail
