"""Trainable bi-encoder: hashed embedding bag + affine projection.

One shared parameter set encodes both query texts and verbalized triplets.
Relevance is the dot product of the two vectors. Training minimizes an
in-batch softmax contrastive loss with hand-written analytic gradients,
updated by plain SGD.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import KGStore
from .queries import Query
from .verbalizer import hash_ids, tokenize, verbalize_triplet

ENCODER_MAGIC = b"DIFARENC"
ENCODER_VERSION = 1


class SnapshotError(ValueError):
    """Bad magic/version or truncated model snapshot."""


@dataclass
class EncoderModel:
    buckets: int
    dim: int
    embedding: np.ndarray   # (buckets, dim)
    projection: np.ndarray  # (dim, dim), applied as pooled @ projection.T + bias
    bias: np.ndarray        # (dim,)
    normalize: bool = True

    @classmethod
    def create(cls, buckets: int = 1 << 16, dim: int = 64, normalize: bool = True,
               seed: int = 0) -> "EncoderModel":
        """Fresh model: uniform[-0.05, 0.05] embeddings, identity projection, zero bias."""
        rng = np.random.default_rng(seed)
        emb = rng.uniform(-0.05, 0.05, size=(buckets, dim))
        return cls(buckets, dim, emb, np.eye(dim), np.zeros(dim), normalize)

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.buckets, self.dim, self.embedding.copy(),
                            self.projection.copy(), self.bias.copy(), self.normalize)

    # -- encoding ---------------------------------------------------------

    def encode_ids(self, ids: np.ndarray) -> np.ndarray:
        """Encode a sequence already mapped to embedding-row indices."""
        return self.encode_ids_batch([ids])[0]

    def encode_ids_batch(self, id_lists: list[np.ndarray]) -> np.ndarray:
        """Vectorized encode of many sequences; returns an (m, dim) matrix."""
        m = len(id_lists)
        pooled = np.zeros((m, self.dim))
        for i, ids in enumerate(id_lists):
            if len(ids):
                pooled[i] = self.embedding[ids].mean(axis=0)
        out = pooled @ self.projection.T + self.bias
        if self.normalize:
            norms = np.linalg.norm(out, axis=1, keepdims=True)
            nonzero = norms[:, 0] > 0.0
            out[nonzero] /= norms[nonzero]
        return out

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        return self.encode_ids(hash_ids(tokens, self.buckets))

    def encode_text(self, text: str) -> np.ndarray:
        return self.encode_tokens(tokenize(text))

    # -- snapshot ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = struct.pack("<8sIIIB", ENCODER_MAGIC, ENCODER_VERSION,
                             self.buckets, self.dim, int(self.normalize))
        return b"".join([header,
                         self.embedding.astype("<f4").tobytes(),
                         self.projection.astype("<f4").tobytes(),
                         self.bias.astype("<f4").tobytes()])

    def fingerprint(self) -> bytes:
        """16-byte digest of the snapshot bytes; binds indexes to the model."""
        import hashlib
        return hashlib.blake2b(self.to_bytes(), digest_size=16).digest()

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "EncoderModel":
        with open(path, "rb") as fh:
            header = fh.read(struct.calcsize("<8sIIIB"))
            magic, version, buckets, dim, normalize = struct.unpack("<8sIIIB", header)
            if magic != ENCODER_MAGIC:
                raise SnapshotError(f"{path}: not an encoder snapshot (magic {magic!r})")
            if version != ENCODER_VERSION:
                raise SnapshotError(f"{path}: unsupported snapshot version {version}")
            def read_array(shape):
                n = int(np.prod(shape))
                buf = fh.read(4 * n)
                if len(buf) != 4 * n:
                    raise SnapshotError(f"{path}: truncated snapshot")
                return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)
            emb = read_array((buckets, dim))
            proj = read_array((dim, dim))
            bias = read_array((dim,))
        return cls(buckets, dim, emb, proj, bias, bool(normalize))


def score(q: np.ndarray, t: np.ndarray) -> float:
    """Dot-product relevance between a query vector and a triplet vector."""
    if q.shape != t.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {t.shape}")
    return float(np.dot(q, t))


@dataclass
class TrainingBatch:
    """(query token sequence, positive triplet id) pairs; other positives in the
    batch act as in-batch negatives."""
    pairs: list[tuple[list[str], int]]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("training batch must contain at least one pair")


@dataclass
class EncoderGradients:
    """Gradients of the in-batch loss; embedding rows are sparse (touched only)."""
    emb_rows: np.ndarray   # (r,) unique row indices, ascending
    emb: np.ndarray        # (r, dim)
    projection: np.ndarray
    bias: np.ndarray


def _batch_id_lists(model: EncoderModel, batch: TrainingBatch, store: KGStore):
    q_ids = [hash_ids(tokens, model.buckets) for tokens, _ in batch.pairs]
    t_ids = [hash_ids(verbalize_triplet(store.get(pid)), model.buckets)
             for _, pid in batch.pairs]
    return q_ids, t_ids


def _forward(model: EncoderModel, id_lists: list[np.ndarray]):
    """Forward pass keeping intermediates needed for backprop."""
    m = len(id_lists)
    pooled = np.zeros((m, model.dim))
    for i, ids in enumerate(id_lists):
        if len(ids):
            pooled[i] = model.embedding[ids].mean(axis=0)
    y = pooled @ model.projection.T + model.bias
    if model.normalize:
        norms = np.linalg.norm(y, axis=1)
        safe = np.where(norms > 0.0, norms, 1.0)
        z = y / safe[:, None]
        z[norms == 0.0] = 0.0
    else:
        norms = None
        z = y
    return pooled, y, norms, z


def _softmax_terms(z_q: np.ndarray, z_t: np.ndarray):
    scores = z_q @ z_t.T
    mx = scores.max(axis=1, keepdims=True)
    exp = np.exp(scores - mx)
    denom = exp.sum(axis=1, keepdims=True)
    softmax = exp / denom
    lse = mx[:, 0] + np.log(denom[:, 0])
    return scores, softmax, lse


def contrastive_loss(model: EncoderModel, batch: TrainingBatch, store: KGStore) -> float:
    """Mean over queries of -log softmax of the positive against in-batch negatives."""
    q_ids, t_ids = _batch_id_lists(model, batch, store)
    _, _, _, z = _forward(model, q_ids + t_ids)
    m = len(batch.pairs)
    scores, _, lse = _softmax_terms(z[:m], z[m:])
    return float(np.mean(lse - np.diag(scores)))


def loss_gradients(model: EncoderModel, batch: TrainingBatch,
                   store: KGStore) -> EncoderGradients:
    """Exact analytic gradients of contrastive_loss w.r.t. all parameter groups."""
    q_ids, t_ids = _batch_id_lists(model, batch, store)
    id_lists = q_ids + t_ids
    pooled, y, norms, z = _forward(model, id_lists)
    m = len(batch.pairs)
    _, softmax, _ = _softmax_terms(z[:m], z[m:])

    g = (softmax - np.eye(m)) / m           # dL/dscores
    dz = np.zeros_like(z)
    dz[:m] = g @ z[m:]
    dz[m:] = g.T @ z[:m]

    if model.normalize:
        dy = np.zeros_like(y)
        for i in range(len(y)):
            n = norms[i]
            if n > 0.0:
                u = y[i] / n
                dy[i] = (dz[i] - np.dot(u, dz[i]) * u) / n
            # zero-norm output is pinned at the zero vector: no gradient
    else:
        dy = dz

    d_proj = dy.T @ pooled
    d_bias = dy.sum(axis=0)
    d_pooled = dy @ model.projection

    flat_ids = []
    flat_grads = []
    for i, ids in enumerate(id_lists):
        if len(ids):
            flat_ids.append(ids)
            flat_grads.append(np.repeat(d_pooled[i:i + 1] / len(ids), len(ids), axis=0))
    if flat_ids:
        all_ids = np.concatenate(flat_ids)
        all_grads = np.concatenate(flat_grads)
        rows, inverse = np.unique(all_ids, return_inverse=True)
        emb_grad = np.zeros((len(rows), model.dim))
        np.add.at(emb_grad, inverse, all_grads)
    else:
        rows = np.empty(0, dtype=np.int64)
        emb_grad = np.zeros((0, model.dim))
    return EncoderGradients(rows, emb_grad, d_proj, d_bias)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    seed: int = 0


def train_retriever(model: EncoderModel, data: list[Query], store: KGStore,
                    config: TrainConfig) -> tuple[EncoderModel, list[float]]:
    """SGD over the in-batch contrastive loss.

    One positive is sampled per query per epoch when a query has several golds.
    Mutates and returns the model, plus the per-epoch mean loss trace.
    """
    if not data:
        raise ValueError("training data is empty")
    if config.lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {config.lr}")
    for q in data:
        if not q.gold:
            raise ValueError(f"query {q.id!r} has no gold triplet id")

    token_cache = [tokenize(q.text) for q in data]
    rng = np.random.default_rng(config.seed)
    trace = []
    for _epoch in range(config.epochs):
        golds = [q.gold[int(rng.integers(len(q.gold)))] for q in data]
        order = rng.permutation(len(data))
        losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = order[start:start + config.batch_size]
            batch = TrainingBatch([(token_cache[i], golds[i]) for i in chunk])
            losses.append(contrastive_loss(model, batch, store))
            grads = loss_gradients(model, batch, store)
            model.embedding[grads.emb_rows] -= config.lr * grads.emb
            model.projection -= config.lr * grads.projection
            model.bias -= config.lr * grads.bias
        trace.append(float(np.mean(losses)))
    return model, trace
