"""Knowledge graph store: load, deduplicate and serve triplets by dense id."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional


class KGFormatError(ValueError):
    """Raised on malformed triple files (wrong field count, empty fields)."""


@dataclass(frozen=True)
class Triplet:
    """One knowledge-graph fact: (head, relation, tail) surface labels."""

    id: int
    head: str
    relation: str
    tail: str
    external_id: Optional[str] = None


class KGStore:
    """Immutable, id-addressable collection of deduplicated triplets.

    Ids are dense integers 0..n-1 assigned in first-occurrence order at load.
    Safe for concurrent reads once constructed.
    """

    def __init__(self, triplets: list[Triplet], duplicates_dropped: int = 0):
        self._triplets = triplets
        self.duplicates_dropped = duplicates_dropped
        self._by_id = {t.id: t for t in triplets}

    def __len__(self) -> int:
        return len(self._triplets)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self._triplets)

    def get(self, id: int) -> Triplet:
        if id not in self._by_id:
            raise KeyError(f"triplet id {id} out of range (store has {len(self)} triplets)")
        return self._by_id[id]


def load_triples(path: str | Path) -> KGStore:
    """Load a UTF-8 TSV triple file (head<TAB>relation<TAB>tail[<TAB>external_id]).

    Exact duplicate (head, relation, tail) triples after whitespace trimming are
    dropped; the count of dropped lines is recorded on the returned store.
    Raises KGFormatError naming the offending line for malformed input.
    """
    path = Path(path)
    triplets: list[Triplet] = []
    seen: set[tuple[str, str, str]] = set()
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line == "":
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise KGFormatError(
                    f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(fields)}"
                )
            head, relation, tail = (f.strip() for f in fields[:3])
            external_id = fields[3].strip() if len(fields) == 4 else None
            if not head or not relation or not tail:
                raise KGFormatError(f"{path}:{lineno}: empty field in triple")
            key = (head, relation, tail)
            if key in seen:
                dropped += 1
                continue
            seen.add(key)
            triplets.append(Triplet(len(triplets), head, relation, tail, external_id))
    return KGStore(triplets, duplicates_dropped=dropped)


def save_triples(store: KGStore, path: str | Path) -> None:
    """Write a store back out as 3/4-column TSV, in id order."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in store:
            cols = [t.head, t.relation, t.tail]
            if t.external_id is not None:
                cols.append(t.external_id)
            fh.write("\t".join(cols) + "\n")
