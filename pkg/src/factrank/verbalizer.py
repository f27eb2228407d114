"""Tokenization and triplet verbalization shared by the retriever and reranker.

Token sequences are plain lists of lowercase strings. A reserved separator
token SEP marks triple-slot boundaries; the tokenizer can never emit it from
input text because brackets are punctuation and get stripped.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .kg import Triplet

SEP = "[sep]"

# runs of unicode word characters, underscores excluded; digits are kept
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries.

    Punctuation is dropped, digit runs survive as tokens. Deterministic, and
    empty input yields an empty sequence.
    """
    return _TOKEN_RE.findall(text.lower())


def verbalize_triplet(t: Triplet) -> list[str]:
    """Render a triplet as head tokens ++ SEP ++ relation tokens ++ SEP ++ tail tokens."""
    return tokenize(t.head) + [SEP] + tokenize(t.relation) + [SEP] + tokenize(t.tail)


def concat_pair(x: list[str], t: list[str]) -> list[str]:
    """Concatenate a query sequence and a triplet sequence with a SEP between."""
    return x + [SEP] + t


def token_hash(token: str) -> int:
    """Stable 64-bit hash of a token, identical across runs and platforms."""
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def hash_ids(tokens: list[str], buckets: int) -> np.ndarray:
    """Map a token sequence to embedding-table row indices (int64 array)."""
    return np.array([token_hash(tok) % buckets for tok in tokens], dtype=np.int64)
