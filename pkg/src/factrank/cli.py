"""Command-line pipeline driver.

Thin client over the library: each subcommand reads and writes only the
declared file formats (TSV triples, JSONL queries/results, binary snapshots,
JSON reports). Exit codes: 0 success, 2 usage error, 3 data/format error,
4 consistency (stale index fingerprint) error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import encoder as enc
from . import evaluator, index as idx, reranker as rrk, retriever as ret, synth
from .kg import KGFormatError, load_triples
from .queries import QueryFormatError, read_queries, read_results, write_results

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONSISTENCY = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# every tunable, with its type and default; config-file keys must come from here
DEFAULTS: dict[str, object] = {
    "seed": 0,
    "k": 1000,
    "top_k_rerank": 100,
    "backend": "hnsw",
    "ef_search": 64,
    "m": 16,
    "ef_construction": 200,
    "dim": 64,
    "buckets": 1 << 16,
    "normalize": 1,
    "epochs": 30,
    "batch_size": 64,
    "lr": 0.05,
    "rr_dim": 32,
    "rr_buckets": 1 << 16,
    "rr_epochs": 100,
    "rr_refresh_interval": 10,
    "rr_negatives_per_query": 4,
    "rr_batch_size": 64,
    "rr_lr": 2.0,
    "rr_subset_fraction": 1.0,
    "rr_mine_top_k": 100,
    "n_entities": 50,
    "n_relations": 16,
    "n_triplets": 1000,
    "queries_per_triplet": 1,
    "multi_hop_fraction": 0.2,
    "distractor_rate": 0.1,
    "containment_k": 1,
}


def stage_seed(root_seed: int, stage: str) -> int:
    """Fan the root seed out per stage so stages re-run independently."""
    digest = hashlib.blake2b(f"{root_seed}:{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def load_config(path: str | None, overrides: dict[str, object]) -> dict[str, object]:
    """Defaults < key=value config file < command-line flags."""
    config = dict(DEFAULTS)
    if path:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(EXIT_USAGE, f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in DEFAULTS:
                raise CliError(EXIT_USAGE, f"{path}:{lineno}: unknown config key {key!r}")
            config[key] = _coerce(key, value.strip())
    for key, value in overrides.items():
        if value is not None:
            config[key] = value
    return config


def _coerce(key: str, value: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError as e:
        raise CliError(EXIT_USAGE, f"config key {key!r}: {e}") from e


def print_config(config: dict[str, object]) -> None:
    print("resolved config: " + " ".join(f"{k}={config[k]}" for k in sorted(config)))


# ---------------------------------------------------------------------------
# stage implementations (shared by subcommands and run-all)


def _load_store(path: str):
    try:
        return load_triples(path)
    except FileNotFoundError as e:
        raise CliError(EXIT_DATA, f"kg file not found: {path}") from e
    except KGFormatError as e:
        raise CliError(EXIT_DATA, str(e)) from e


def _load_queries(path: str):
    try:
        return read_queries(path)
    except FileNotFoundError as e:
        raise CliError(EXIT_DATA, f"query file not found: {path}") from e
    except QueryFormatError as e:
        raise CliError(EXIT_DATA, str(e)) from e


def _load_model(path: str) -> enc.EncoderModel:
    try:
        return enc.EncoderModel.load(path)
    except FileNotFoundError as e:
        raise CliError(EXIT_DATA, f"model snapshot not found: {path}") from e
    except enc.SnapshotError as e:
        raise CliError(EXIT_DATA, str(e)) from e


def _load_index(path: str) -> idx.HnswIndex:
    try:
        return idx.HnswIndex.load(path)
    except FileNotFoundError as e:
        raise CliError(EXIT_DATA, f"index snapshot not found: {path}") from e
    except idx.SnapshotError as e:
        raise CliError(EXIT_DATA, str(e)) from e


def _load_reranker(path: str) -> rrk.RerankerModel:
    try:
        return rrk.RerankerModel.load(path)
    except FileNotFoundError as e:
        raise CliError(EXIT_DATA, f"reranker snapshot not found: {path}") from e
    except rrk.SnapshotError as e:
        raise CliError(EXIT_DATA, str(e)) from e


def do_synth_gen(config, out_dir: str) -> dict:
    sc = synth.SynthConfig(
        n_entities=config["n_entities"], n_relations=config["n_relations"],
        n_triplets=config["n_triplets"],
        queries_per_triplet=config["queries_per_triplet"],
        multi_hop_fraction=config["multi_hop_fraction"],
        distractor_rate=config["distractor_rate"],
        seed=stage_seed(config["seed"], "synth"))
    paths = synth.generate(sc, out_dir)
    print(f"[synth-gen] wrote {', '.join(str(p) for p in paths.values())}")
    return paths


def do_train_retriever(config, kg_path, queries_path, model_out) -> None:
    store = _load_store(kg_path)
    queries = _load_queries(queries_path)
    model = enc.EncoderModel.create(
        buckets=config["buckets"], dim=config["dim"],
        normalize=bool(config["normalize"]),
        seed=stage_seed(config["seed"], "train-retriever-init"))
    tc = enc.TrainConfig(epochs=config["epochs"], batch_size=config["batch_size"],
                         lr=config["lr"],
                         seed=stage_seed(config["seed"], "train-retriever"))
    start = time.perf_counter()
    try:
        _, trace = enc.train_retriever(model, queries, store, tc)
    except ValueError as e:
        raise CliError(EXIT_DATA, f"train-retriever: {e}") from e
    model.save(model_out)
    print(f"[train-retriever] epochs={tc.epochs} first_loss={trace[0]:.4f} "
          f"last_loss={trace[-1]:.4f} elapsed={time.perf_counter() - start:.1f}s "
          f"-> {model_out}")


def do_build_index(config, kg_path, model_in, index_out) -> None:
    store = _load_store(kg_path)
    model = _load_model(model_in)
    embeddings = ret.encode_store(model, store)
    params = idx.HnswParams(M=config["m"], ef_construction=config["ef_construction"],
                            ef_search=config["ef_search"])
    start = time.perf_counter()
    hnsw = idx.HnswIndex.build(embeddings, params,
                               seed=stage_seed(config["seed"], "build-index"),
                               fingerprint=model.fingerprint())
    hnsw.save(index_out)
    print(f"[build-index] n={len(hnsw)} M={params.M} "
          f"elapsed={time.perf_counter() - start:.1f}s -> {index_out}")


def do_retrieve(config, kg_path, model_in, index_in, queries_path, results_out) -> None:
    store = _load_store(kg_path)
    model = _load_model(model_in)
    queries = _load_queries(queries_path)
    rc = ret.RetrievalConfig(k=config["k"], backend=config["backend"],
                             ef_search=config["ef_search"])
    if config["backend"] == "hnsw":
        search_index = _load_index(index_in)
    else:
        search_index = ret.build_exact_index(model, store)
    start = time.perf_counter()
    try:
        results = ret.retrieve_all(model, search_index, store, queries, rc)
    except ret.StaleIndexError as e:
        raise CliError(EXIT_CONSISTENCY, f"stale index: {e}") from e
    elapsed = time.perf_counter() - start
    write_results(results, results_out)
    qps = len(queries) / elapsed if elapsed > 0 else float("inf")
    print(f"[retrieve] backend={config['backend']} n_queries={len(queries)} "
          f"k={rc.k} {qps:.1f} queries/second -> {results_out}")


def do_mine_negatives(config, kg_path, model_in, queries_path, negatives_out) -> None:
    store = _load_store(kg_path)
    model = _load_model(model_in)
    queries = _load_queries(queries_path)
    try:
        mined = rrk.mine_negatives(model, store, queries,
                                   config["rr_subset_fraction"], config["rr_mine_top_k"],
                                   seed=stage_seed(config["seed"], "mine-negatives"))
    except ValueError as e:
        raise CliError(EXIT_DATA, f"mine-negatives: {e}") from e
    payload = {"provenance": {"epoch": mined.epoch, "top_k": mined.top_k,
                              "subset_fraction": mined.subset_fraction},
               "negatives": mined.negatives}
    Path(negatives_out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"[mine-negatives] n_queries={len(queries)} -> {negatives_out}")


def do_train_reranker(config, kg_path, queries_path, model_in, reranker_out) -> None:
    store = _load_store(kg_path)
    queries = _load_queries(queries_path)
    enc_model = _load_model(model_in)
    model = rrk.RerankerModel.create(
        buckets=config["rr_buckets"], dim=config["rr_dim"],
        seed=stage_seed(config["seed"], "train-reranker-init"))
    tc = rrk.RerankTrainConfig(
        epochs=config["rr_epochs"], refresh_interval=config["rr_refresh_interval"],
        negatives_per_query=config["rr_negatives_per_query"],
        batch_size=config["rr_batch_size"], lr=config["rr_lr"],
        subset_fraction=config["rr_subset_fraction"],
        mine_top_k=config["rr_mine_top_k"],
        seed=stage_seed(config["seed"], "train-reranker"))
    start = time.perf_counter()
    try:
        _, trace = rrk.train_reranker(model, queries, store, enc_model, tc)
    except ValueError as e:
        raise CliError(EXIT_DATA, f"train-reranker: {e}") from e
    model.save(reranker_out)
    print(f"[train-reranker] epochs={tc.epochs} first_loss={trace[0]:.4f} "
          f"last_loss={trace[-1]:.4f} elapsed={time.perf_counter() - start:.1f}s "
          f"-> {reranker_out}")


def do_rerank(config, kg_path, reranker_in, queries_path, results_in, results_out) -> None:
    store = _load_store(kg_path)
    model = _load_reranker(reranker_in)
    queries = _load_queries(queries_path)
    try:
        results = read_results(results_in)
    except (FileNotFoundError, QueryFormatError) as e:
        raise CliError(EXIT_DATA, f"rerank: {e}") from e
    text_by_id = {q.id: q.text for q in queries}
    missing = sorted(set(results) - set(text_by_id))
    if missing:
        raise CliError(EXIT_DATA, f"rerank: result ids missing from queries: {missing[:5]}")
    start = time.perf_counter()
    reranked = {qid: rrk.rerank(model, text_by_id[qid], ranking, store,
                                config["top_k_rerank"])
                for qid, ranking in results.items()}
    elapsed = time.perf_counter() - start
    write_results(reranked, results_out)
    qps = len(reranked) / elapsed if elapsed > 0 else float("inf")
    print(f"[rerank] top_k={config['top_k_rerank']} {qps:.1f} queries/second "
          f"-> {results_out}")


def do_eval(config, kg_path, queries_path, results_in, report_out) -> evaluator.EvalReport:
    store = _load_store(kg_path)
    queries = _load_queries(queries_path)
    try:
        results = read_results(results_in)
    except (FileNotFoundError, QueryFormatError) as e:
        raise CliError(EXIT_DATA, f"eval: {e}") from e
    try:
        report = evaluator.evaluate(results, queries, store,
                                    containment_k=config["containment_k"])
    except ValueError as e:
        raise CliError(EXIT_DATA, f"eval: {e}") from e
    text = report.to_json()
    if report_out:
        Path(report_out).write_text(text + "\n")
        print(f"[eval] mrr={report.mrr:.4f} hits@1={report.hits[1]:.4f} "
              f"hits@10={report.hits[10]:.4f} -> {report_out}")
    else:
        print(text)
    return report


def do_run_all(config, out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = do_synth_gen(config, out_dir)
    kg = str(paths["kg"])
    train_q, test_q = str(paths["train"]), str(paths["test"])
    model_path = str(out / "encoder.bin")
    index_path = str(out / "index.bin")
    reranker_path = str(out / "reranker.bin")
    results_path = str(out / "results_retriever.jsonl")
    reranked_path = str(out / "results_reranked.jsonl")

    do_train_retriever(config, kg, train_q, model_path)
    do_build_index(config, kg, model_path, index_path)
    do_retrieve(config, kg, model_path, index_path, test_q, results_path)
    report_a = do_eval(config, kg, test_q, results_path, str(out / "report_retriever.json"))
    do_train_reranker(config, kg, train_q, model_path, reranker_path)
    do_rerank(config, kg, reranker_path, test_q, results_path, reranked_path)
    report_b = do_eval(config, kg, test_q, reranked_path, str(out / "report_reranked.json"))
    print(f"[run-all] retriever mrr={report_a.mrr:.4f} hits@1={report_a.hits[1]:.4f} | "
          f"reranked mrr={report_b.mrr:.4f} hits@1={report_b.hits[1]:.4f}")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factrank",
        description="Knowledge-graph fact retrieval: train, index, retrieve, rerank, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="root seed fanned out per stage")

    p = sub.add_parser("synth-gen", help="generate a synthetic KG and query splits")
    common(p)
    p.add_argument("--out-dir", required=True)
    for key in ("n-entities", "n-relations", "n-triplets", "queries-per-triplet"):
        p.add_argument(f"--{key}", type=int)
    p.add_argument("--multi-hop-fraction", type=float)
    p.add_argument("--distractor-rate", type=float)

    p = sub.add_parser("train-retriever", help="train the bi-encoder")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dim", type=int)

    p = sub.add_parser("build-index", help="build the HNSW+int8 index")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--model-in", required=True)
    p.add_argument("--index-out", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--ef-construction", type=int)

    p = sub.add_parser("retrieve", help="run retrieval for a query file")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--model-in", required=True)
    p.add_argument("--index-in")
    p.add_argument("--queries", required=True)
    p.add_argument("--results-out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--backend", choices=["exact", "hnsw"])
    p.add_argument("--ef-search", type=int)

    p = sub.add_parser("mine-negatives", help="mine hard negatives from retrieval")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--model-in", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--negatives-out", required=True)

    p = sub.add_parser("train-reranker", help="train the joint reranker")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--model-in", required=True)
    p.add_argument("--reranker-out", required=True)

    p = sub.add_parser("rerank", help="rerank retrieval results")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--reranker-in", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--results-in", required=True)
    p.add_argument("--results-out", required=True)
    p.add_argument("--top-k-rerank", type=int)

    p = sub.add_parser("eval", help="compute MRR / Hits@K report")
    common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--results-in", required=True)
    p.add_argument("--report-out")

    p = sub.add_parser("run-all", help="full pipeline on synthetic data")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--backend", choices=["exact", "hnsw"])

    p = sub.add_parser("serve", help="start the HTTP service")
    common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--kg")
    p.add_argument("--model-in")
    p.add_argument("--index-in")
    p.add_argument("--reranker-in")

    return parser


_FLAG_KEYS = set(DEFAULTS)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k in _FLAG_KEYS}
    try:
        config = load_config(args.config, overrides)
        print_config(config)
        if args.command == "synth-gen":
            do_synth_gen(config, args.out_dir)
        elif args.command == "train-retriever":
            do_train_retriever(config, args.kg, args.queries, args.model_out)
        elif args.command == "build-index":
            do_build_index(config, args.kg, args.model_in, args.index_out)
        elif args.command == "retrieve":
            if config["backend"] == "hnsw" and not args.index_in:
                raise CliError(EXIT_USAGE, "retrieve: --index-in required for hnsw backend")
            do_retrieve(config, args.kg, args.model_in, args.index_in,
                        args.queries, args.results_out)
        elif args.command == "mine-negatives":
            do_mine_negatives(config, args.kg, args.model_in, args.queries,
                              args.negatives_out)
        elif args.command == "train-reranker":
            do_train_reranker(config, args.kg, args.queries, args.model_in,
                              args.reranker_out)
        elif args.command == "rerank":
            do_rerank(config, args.kg, args.reranker_in, args.queries,
                      args.results_in, args.results_out)
        elif args.command == "eval":
            do_eval(config, args.kg, args.queries, args.results_in, args.report_out)
        elif args.command == "run-all":
            do_run_all(config, args.out_dir)
        elif args.command == "serve":
            from .service import run_server
            run_server(args.host, args.port, kg=args.kg, model_in=args.model_in,
                       index_in=args.index_in, reranker_in=args.reranker_in)
        return EXIT_OK
    except CliError as e:
        print(f"error ({args.command}): {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
