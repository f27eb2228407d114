"""Deterministic synthetic KG and query generator.

KG labels are canonical tags ("entity0421", "relation07"); query text refers
to the same entities and relations through natural-word aliases (a unique word
pair per entity, a unique word per relation). Query and triplet token sets are
disjoint by construction, so an untrained lexical encoder scores at chance and
any retrieval quality has to come from learned alias-to-tag alignment.

Single-hop queries ask for one relation of one entity; the gold set is every
matching fact. Multi-hop queries mention an entity one edge away from the gold
fact's head ("... of a neighbor of X"), so answering requires hopping across
that edge first; their gold set is every fact (u, r, *) where u is an
out-neighbor of the mentioned entity. A configurable fraction of queries also
names a wrong distractor entity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import KGStore, Triplet, save_triples
from .queries import Query, write_queries

_WORDS = (
    "amber anchor apple arrow aspen autumn badger bamboo barley basil beacon "
    "birch bison blaze breeze brook cactus canyon cedar cliff clover cobalt "
    "comet copper coral cove crane creek crimson crystal dawn delta dune "
    "ember falcon fennel fern flint fog forest fox garnet geyser ginger glacier "
    "glen granite grove harbor hawk hazel heather heron hickory hollow ibis "
    "iris ivory jade jasper juniper kelp lagoon lark laurel lava lichen lily "
    "linden lotus lynx maple marble marsh meadow mesa mint mistral moss newt "
    "nimbus oak ocean olive onyx opal orchid osprey otter owl palm pebble "
    "pepper pine plume pond poppy prairie quail quartz raven reef ridge river "
    "robin rose rowan ruby rune rye saffron sage salmon sand sequoia shale "
    "shadow sierra slate sorrel spruce star stone storm summit swan sycamore "
    "tamarind teal terra thistle thorn thyme tide topaz trout tulip tundra "
    "umber valley vine violet walnut wave willow wolf wren yarrow yew zephyr"
).split()

_RELATION_WORDS = _WORDS[:32]
_ENTITY_WORDS = _WORDS[32:]


def entity_aliases(n: int) -> list[str]:
    """Distinct two-word alias per entity with balanced word reuse."""
    pool = _ENTITY_WORDS
    p = len(pool)
    out: list[str] = []
    stride = 1
    while len(out) < n:
        if stride >= p:
            raise ValueError("alias pool exhausted")
        for j in range(p):
            if len(out) >= n:
                break
            out.append(f"{pool[j]} {pool[(j + stride) % p]}")
        stride += 1
    return out


def relation_aliases(n: int) -> list[str]:
    return list(_RELATION_WORDS[:n])


@dataclass
class SynthConfig:
    n_entities: int = 50
    n_relations: int = 16
    n_triplets: int = 1000
    queries_per_triplet: int = 1
    multi_hop_fraction: float = 0.2
    distractor_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("n_entities", "n_relations", "n_triplets", "queries_per_triplet"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.multi_hop_fraction <= 1.0:
            raise ValueError("multi_hop_fraction must be in [0, 1]")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise ValueError("distractor_rate must be in [0, 1]")
        if self.n_triplets > self.n_entities ** 2 * self.n_relations:
            raise ValueError("n_triplets exceeds the number of possible triples")
        if self.n_relations > len(_RELATION_WORDS):
            raise ValueError("n_relations exceeds the relation alias pool")


_TEMPLATES = (
    "what is the {r} of {e}?",
    "tell me the {r} of {e}",
    "{e}: what is its {r}?",
)

_MULTI_TEMPLATES = (
    "what is the {r} of a neighbor of {e}?",
    "find the {r} of some neighbor of {e}",
)


def generate(config: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write kg.tsv plus train/valid/test JSONL query files; byte-identical
    across runs with the same config. Returns the four paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)

    entities = [f"entity{i:04d}" for i in range(config.n_entities)]
    relations = [f"relation{j:02d}" for j in range(config.n_relations)]
    e_alias = entity_aliases(config.n_entities)
    r_alias = relation_aliases(config.n_relations)

    # sample distinct (head, relation, tail) ids with head != tail
    seen: set[tuple[int, int, int]] = set()
    triples: list[tuple[int, int, int]] = []
    attempts = 0
    max_attempts = 200 * config.n_triplets + 10000
    while len(triples) < config.n_triplets:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError("infeasible config: cannot place the requested triplet count")
        h = int(rng.integers(config.n_entities))
        t = int(rng.integers(config.n_entities))
        r = int(rng.integers(config.n_relations))
        if h == t or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        triples.append((h, r, t))

    store = KGStore([Triplet(i, entities[h], relations[r], entities[t])
                     for i, (h, r, t) in enumerate(triples)])

    incoming: dict[int, list[int]] = {}             # entity -> triplet ids ending there
    out_neighbors: dict[int, set[int]] = {}         # entity -> out-neighbor entities
    by_head_rel: dict[tuple[int, int], list[int]] = {}
    for tid, (h, r, t) in enumerate(triples):
        incoming.setdefault(t, []).append(tid)
        out_neighbors.setdefault(h, set()).add(t)
        by_head_rel.setdefault((h, r), []).append(tid)

    slots = [(tid, copy) for tid in range(config.n_triplets)
             for copy in range(config.queries_per_triplet)]
    total = len(slots)
    n_multi = round(config.multi_hop_fraction * total)
    feasible = [i for i, (tid, _) in enumerate(slots) if incoming.get(triples[tid][0])]
    if len(feasible) < n_multi:
        raise ValueError("infeasible config: not enough multi-hop-capable triplets")
    multi_slots = set(int(i) for i in rng.choice(feasible, size=n_multi, replace=False)) \
        if n_multi else set()
    distract_slots = set(int(i) for i in
                         rng.choice(total, size=round(config.distractor_rate * total),
                                    replace=False)) if config.distractor_rate else set()

    queries: list[Query] = []
    for slot_idx, (tid, copy) in enumerate(slots):
        h, r, t = triples[tid]
        if slot_idx in multi_slots:
            inc_ids = incoming[h]
            bridge_id = inc_ids[int(rng.integers(len(inc_ids)))]
            e_prime_idx = triples[bridge_id][0]
            template = _MULTI_TEMPLATES[copy % len(_MULTI_TEMPLATES)]
            text = template.format(r=r_alias[r], e=e_alias[e_prime_idx])
            # any fact (u, r, *) with u an out-neighbor of e' answers the question
            gold = sorted({g for u in out_neighbors[e_prime_idx]
                           for g in by_head_rel.get((u, r), [])})
            hops = 2
            mentioned_idx = e_prime_idx
        else:
            template = _TEMPLATES[copy % len(_TEMPLATES)]
            text = template.format(r=r_alias[r], e=e_alias[h])
            gold = sorted(by_head_rel[(h, r)])
            hops = 1
            mentioned_idx = h
        if slot_idx in distract_slots:
            wrong = int(rng.integers(config.n_entities))
            while wrong in (mentioned_idx, h, t):
                wrong = int(rng.integers(config.n_entities))
            text = f"{text} (not {e_alias[wrong]})"
        queries.append(Query(id=f"q{slot_idx:05d}", text=text, gold=gold,
                             hops=hops, gold_entities=[entities[mentioned_idx]]))

    order = rng.permutation(total)
    n_train = math.floor(0.70 * total)
    n_valid = math.floor(0.15 * total)
    splits = {
        "train": [queries[i] for i in sorted(order[:n_train])],
        "valid": [queries[i] for i in sorted(order[n_train:n_train + n_valid])],
        "test": [queries[i] for i in sorted(order[n_train + n_valid:])],
    }

    paths = {"kg": out / "kg.tsv"}
    save_triples(store, paths["kg"])
    for name, qs in splits.items():
        paths[name] = out / f"{name}.jsonl"
        write_queries(qs, paths[name])
    return paths
