"""End-to-end retrieval: encode the query, search an index, return ranked facts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .encoder import EncoderModel
from .index import ExactIndex, HnswIndex, RankedList
from .kg import KGStore
from .queries import Query
from .verbalizer import hash_ids, verbalize_triplet


class StaleIndexError(RuntimeError):
    """Index was built from a different model snapshot than the one in use."""


@dataclass
class RetrievalConfig:
    k: int = 1000
    backend: str = "exact"          # "exact" | "hnsw"
    ef_search: Optional[int] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.backend not in ("exact", "hnsw"):
            raise ValueError(f"unknown backend {self.backend!r}")


def encode_store(model: EncoderModel, store: KGStore) -> np.ndarray:
    """Embed every triplet of the store, rows in id order."""
    id_lists = [hash_ids(verbalize_triplet(t), model.buckets) for t in store]
    return model.encode_ids_batch(id_lists)


def build_exact_index(model: EncoderModel, store: KGStore) -> ExactIndex:
    return ExactIndex.build(encode_store(model, store))


def retrieve(model: EncoderModel, index: Union[ExactIndex, HnswIndex],
             store: KGStore, query_text: str,
             config: RetrievalConfig = RetrievalConfig()) -> RankedList:
    """Return the top min(k, n) triplet ids with scores for one query text.

    HNSW indexes carry the fingerprint of the model snapshot they were built
    from; a mismatch with the supplied model raises StaleIndexError.
    """
    if len(store) == 0:
        return []
    if isinstance(index, HnswIndex) and index.fingerprint != model.fingerprint():
        raise StaleIndexError(
            "stale index: built from a different model snapshot than the one supplied")
    q = model.encode_text(query_text)
    k = min(config.k, len(store))
    if isinstance(index, HnswIndex):
        ef = config.ef_search if config.ef_search is not None else index.params.ef_search
        return index.search(q, k, ef_search=max(ef, k))
    return index.search(q, k)


def retrieve_all(model: EncoderModel, index: Union[ExactIndex, HnswIndex],
                 store: KGStore, queries: list[Query],
                 config: RetrievalConfig = RetrievalConfig()) -> dict[str, RankedList]:
    return {q.id: retrieve(model, index, store, q.text, config) for q in queries}
