"""FastAPI service wrapping the retrieval pipeline for long-running use.

Artifacts (KG, encoder, index, reranker) are loaded once into process state;
retrieval and reranking are read-only afterwards, so concurrent requests are
safe. Batch stages (data generation, training, index builds) stay in the CLI.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException

from . import evaluator
from .encoder import EncoderModel, SnapshotError
from .index import ExactIndex, HnswIndex
from .kg import KGFormatError, KGStore, load_triples
from .queries import QueryFormatError, read_queries, read_results
from .reranker import RerankerModel, rerank
from .retriever import RetrievalConfig, StaleIndexError, build_exact_index, retrieve
from .schemas import (EvaluateRequest, EvaluateResponse, LoadRequest, RankedEntry,
                      RerankRequest, RerankResponse, RetrieveRequest,
                      RetrieveResponse, StatusResponse, StratumModel,
                      TripletResponse)


class Engine:
    """Loaded artifact bundle backing the endpoints."""

    def __init__(self):
        self.store: Optional[KGStore] = None
        self.model: Optional[EncoderModel] = None
        self.hnsw: Optional[HnswIndex] = None
        self.exact: Optional[ExactIndex] = None
        self.reranker: Optional[RerankerModel] = None

    @property
    def loaded(self) -> bool:
        return self.store is not None and self.model is not None

    def load(self, req: LoadRequest) -> None:
        try:
            store = load_triples(req.kg)
            model = EncoderModel.load(req.model_in)
            hnsw = HnswIndex.load(req.index_in) if req.index_in else None
            reranker = RerankerModel.load(req.reranker_in) if req.reranker_in else None
        except FileNotFoundError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        except (KGFormatError, SnapshotError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        if hnsw is not None and hnsw.fingerprint != model.fingerprint():
            raise HTTPException(status_code=409,
                                detail="stale index: fingerprint does not match model")
        self.store, self.model, self.hnsw, self.reranker = store, model, hnsw, reranker
        self.exact = build_exact_index(model, store) if len(store) else None

    def require_loaded(self) -> None:
        if not self.loaded:
            raise HTTPException(status_code=409, detail="no artifacts loaded; POST /artifacts/load first")

    def search(self, text: str, k: int, backend: Optional[str],
               ef_search: Optional[int]):
        self.require_loaded()
        if backend is None:
            backend = "hnsw" if self.hnsw is not None else "exact"
        if backend == "hnsw" and self.hnsw is None:
            raise HTTPException(status_code=409, detail="no hnsw index loaded")
        if backend not in ("exact", "hnsw"):
            raise HTTPException(status_code=422, detail=f"unknown backend {backend!r}")
        config = RetrievalConfig(k=k, backend=backend, ef_search=ef_search)
        search_index = self.hnsw if backend == "hnsw" else self.exact
        try:
            return retrieve(self.model, search_index, self.store, text, config)
        except StaleIndexError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e


def _entries(engine: Engine, ranking) -> list[RankedEntry]:
    out = []
    for tid, score in ranking:
        t = engine.store.get(tid)
        out.append(RankedEntry(triplet_id=tid, score=score, head=t.head,
                               relation=t.relation, tail=t.tail))
    return out


def create_app(engine: Optional[Engine] = None) -> FastAPI:
    app = FastAPI(title="factrank", version="0.1.0")
    engine = engine or Engine()
    app.state.engine = engine

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/status", response_model=StatusResponse)
    def status() -> StatusResponse:
        return StatusResponse(
            loaded=engine.loaded,
            n_triplets=len(engine.store) if engine.store else 0,
            backend="hnsw" if engine.hnsw is not None else ("exact" if engine.loaded else None),
            reranker_available=engine.reranker is not None)

    @app.post("/artifacts/load", response_model=StatusResponse)
    def load_artifacts(req: LoadRequest) -> StatusResponse:
        engine.load(req)
        return status()

    @app.get("/triplets/{triplet_id}", response_model=TripletResponse)
    def get_triplet(triplet_id: int) -> TripletResponse:
        engine.require_loaded()
        try:
            t = engine.store.get(triplet_id)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        return TripletResponse(id=t.id, head=t.head, relation=t.relation, tail=t.tail)

    @app.post("/retrieve", response_model=RetrieveResponse)
    def retrieve_endpoint(req: RetrieveRequest) -> RetrieveResponse:
        ranking = engine.search(req.text, req.k, req.backend, req.ef_search)
        return RetrieveResponse(ranking=_entries(engine, ranking))

    @app.post("/rerank", response_model=RerankResponse)
    def rerank_endpoint(req: RerankRequest) -> RerankResponse:
        engine.require_loaded()
        if engine.reranker is None:
            raise HTTPException(status_code=409, detail="no reranker loaded")
        k = max(req.k, req.top_k_rerank)
        ranking = engine.search(req.text, k, req.backend, None)
        reranked = rerank(engine.reranker, req.text, ranking, engine.store,
                          req.top_k_rerank)
        return RerankResponse(ranking=_entries(engine, reranked[:req.k]))

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate_endpoint(req: EvaluateRequest) -> EvaluateResponse:
        engine.require_loaded()
        try:
            queries = read_queries(req.queries)
            results = read_results(req.results)
            report = evaluator.evaluate(results, queries, engine.store,
                                        containment_k=req.containment_k)
        except FileNotFoundError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        except (QueryFormatError, ValueError) as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        d = report.to_dict()
        return EvaluateResponse(
            mrr=d["mrr"], hits=d["hits"],
            strata={k: StratumModel(**v) for k, v in d["strata"].items()},
            entity_containment=d["entity_containment"], n=d["n"])

    return app


def run_server(host: str, port: int, kg: Optional[str] = None,
               model_in: Optional[str] = None, index_in: Optional[str] = None,
               reranker_in: Optional[str] = None) -> None:
    import uvicorn

    engine = Engine()
    if kg and model_in:
        engine.load(LoadRequest(kg=kg, model_in=model_in, index_in=index_in,
                                reranker_in=reranker_in))
    uvicorn.run(create_app(engine), host=host, port=port)
