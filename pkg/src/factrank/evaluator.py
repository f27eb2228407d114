"""Ranking metrics: MRR (top-1000 cutoff), Hits@K, hop-stratified breakdowns,
and the entity-containment proxy for entity-linking quality."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .index import RankedList
from .kg import KGStore
from .queries import Query

MRR_CUTOFF = 1000


def reciprocal_rank(ranking: RankedList, gold: set[int], cutoff: int = MRR_CUTOFF) -> float:
    """1 / (1-based position of the first gold id within the cutoff); 0 if absent."""
    if not gold:
        raise ValueError("gold set must be non-empty")
    for pos, (tid, _) in enumerate(ranking[:cutoff], start=1):
        if tid in gold:
            return 1.0 / pos
    return 0.0


def hits_at_k(ranking: RankedList, gold: set[int], k: int) -> int:
    """1 iff any gold id appears within the first k entries."""
    if not gold:
        raise ValueError("gold set must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(tid in gold for tid, _ in ranking[:k]))


def entity_containment(ranking: RankedList, gold_entities: list[str], store: KGStore,
                       k: int = 1) -> int:
    """1 iff any top-k triplet's head or tail equals a gold entity
    (case-insensitive, whitespace-trimmed)."""
    if not gold_entities:
        raise ValueError("gold_entities must be non-empty")
    wanted = {e.strip().lower() for e in gold_entities}
    for tid, _ in ranking[:k]:
        t = store.get(tid)
        if t.head.strip().lower() in wanted or t.tail.strip().lower() in wanted:
            return 1
    return 0


@dataclass
class StratumReport:
    mrr: float
    hits: dict[int, float]
    n: int


@dataclass
class EvalReport:
    mrr: float
    hits: dict[int, float]
    strata: dict[str, StratumReport]
    entity_containment: Optional[float]
    n: int

    def to_dict(self) -> dict:
        out: dict = {
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in sorted(self.hits.items())},
            "strata": {
                name: {"mrr": s.mrr,
                       "hits": {str(k): v for k, v in sorted(s.hits.items())},
                       "n": s.n}
                for name, s in sorted(self.strata.items())
            },
            "entity_containment": self.entity_containment,
            "n": self.n,
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def evaluate(results: dict[str, RankedList], queries: list[Query],
             store: Optional[KGStore] = None,
             hits_ks: tuple[int, ...] = (1, 10),
             containment_k: int = 1) -> EvalReport:
    """Macro-average metrics over queries; strata keyed by the hops field.

    Entity containment is averaged only over queries carrying gold_entities and
    needs the store for label lookup.
    """
    query_ids = {q.id for q in queries}
    missing = sorted(set(results) ^ query_ids)
    if missing:
        raise ValueError(f"query/result id mismatch: {missing[:10]}")

    per_query = []
    for q in queries:
        gold = set(q.gold)
        ranking = results[q.id]
        rr = reciprocal_rank(ranking, gold)
        hits = {k: hits_at_k(ranking, gold, k) for k in hits_ks}
        per_query.append((q, rr, hits))

    def summarize(rows) -> StratumReport:
        n = len(rows)
        mrr = sum(rr for _, rr, _ in rows) / n
        hits = {k: sum(h[k] for _, _, h in rows) / n for k in hits_ks}
        return StratumReport(mrr, hits, n)

    overall = summarize(per_query)
    strata: dict[str, StratumReport] = {}
    keys = sorted({str(q.hops) if q.hops is not None else "unknown" for q, _, _ in per_query})
    for key in keys:
        rows = [r for r in per_query
                if (str(r[0].hops) if r[0].hops is not None else "unknown") == key]
        strata[key] = summarize(rows)

    containment = None
    with_entities = [q for q in queries if q.gold_entities]
    if with_entities and store is not None:
        containment = sum(
            entity_containment(results[q.id], q.gold_entities, store, containment_k)
            for q in with_entities) / len(with_entities)

    return EvalReport(overall.mrr, overall.hits, strata, containment, overall.n)
