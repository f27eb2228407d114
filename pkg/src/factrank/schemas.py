"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class LoadRequest(BaseModel):
    kg: str
    model_in: str
    index_in: Optional[str] = None
    reranker_in: Optional[str] = None


class StatusResponse(BaseModel):
    loaded: bool
    n_triplets: int = 0
    backend: Optional[str] = None
    reranker_available: bool = False


class RankedEntry(BaseModel):
    triplet_id: int
    score: float
    head: str
    relation: str
    tail: str


class RetrieveRequest(BaseModel):
    text: str
    k: int = Field(default=10, ge=1)
    backend: Optional[str] = None          # "exact" | "hnsw"; default: whatever is loaded
    ef_search: Optional[int] = Field(default=None, ge=1)


class RetrieveResponse(BaseModel):
    ranking: list[RankedEntry]


class RerankRequest(BaseModel):
    text: str
    k: int = Field(default=10, ge=1)
    top_k_rerank: int = Field(default=100, ge=1)
    backend: Optional[str] = None


class RerankResponse(BaseModel):
    ranking: list[RankedEntry]


class TripletResponse(BaseModel):
    id: int
    head: str
    relation: str
    tail: str


class EvaluateRequest(BaseModel):
    queries: str        # path to a JSONL query file
    results: str        # path to a JSONL results file
    containment_k: int = Field(default=1, ge=1)


class StratumModel(BaseModel):
    mrr: float
    hits: dict[str, float]
    n: int


class EvaluateResponse(BaseModel):
    mrr: float
    hits: dict[str, float]
    strata: dict[str, StratumModel]
    entity_containment: Optional[float]
    n: int
