"""Query records and the JSONL file formats for queries and retrieval results."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class QueryFormatError(ValueError):
    pass


@dataclass
class Query:
    """Input text with its gold triplet ids, optional hop count and gold entities."""

    id: str
    text: str
    gold: list[int]
    hops: Optional[int] = None
    gold_entities: Optional[list[str]] = None


def read_queries(path: str | Path) -> list[Query]:
    """Read one Query per JSONL line; unknown keys are rejected."""
    queries = []
    allowed = {"id", "text", "gold", "hops", "gold_entities"}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise QueryFormatError(f"{path}:{lineno}: invalid JSON: {e}") from e
            extra = set(obj) - allowed
            if extra:
                raise QueryFormatError(f"{path}:{lineno}: unknown keys {sorted(extra)}")
            for required in ("id", "text", "gold"):
                if required not in obj:
                    raise QueryFormatError(f"{path}:{lineno}: missing key '{required}'")
            queries.append(
                Query(
                    id=str(obj["id"]),
                    text=obj["text"],
                    gold=[int(g) for g in obj["gold"]],
                    hops=obj.get("hops"),
                    gold_entities=obj.get("gold_entities"),
                )
            )
    return queries


def write_queries(queries: list[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            obj: dict = {"id": q.id, "text": q.text, "gold": q.gold}
            if q.hops is not None:
                obj["hops"] = q.hops
            if q.gold_entities is not None:
                obj["gold_entities"] = q.gold_entities
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_results(path: str | Path) -> dict[str, list[tuple[int, float]]]:
    """Read per-query rankings: {"id": ..., "ranking": [[triplet_id, score], ...]}."""
    results: dict[str, list[tuple[int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "id" not in obj or "ranking" not in obj:
                raise QueryFormatError(f"{path}:{lineno}: results line needs 'id' and 'ranking'")
            results[str(obj["id"])] = [(int(tid), float(s)) for tid, s in obj["ranking"]]
    return results


def write_results(results: dict[str, list[tuple[int, float]]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, ranking in results.items():
            obj = {"id": qid, "ranking": [[tid, score] for tid, score in ranking]}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
