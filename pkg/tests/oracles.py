"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from the stated definitions (hash,
pool, affine, softmax, naive scan) without importing the corresponding
package internals, so agreement is meaningful.
"""

import hashlib
import math

import numpy as np


def reference_token_row(token: str, buckets: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % buckets


def reference_encode(tokens, embedding, projection, bias, normalize):
    """Hash + mean-pool + affine + optional L2 normalization, from scratch."""
    buckets, dim = embedding.shape
    if tokens:
        pooled = np.zeros(dim)
        for tok in tokens:
            pooled += embedding[reference_token_row(tok, buckets)]
        pooled /= len(tokens)
    else:
        pooled = np.zeros(dim)
    y = projection @ pooled + bias
    if normalize:
        n = math.sqrt(float(y @ y))
        if n > 0.0:
            y = y / n
    return y


def brute_force_contrastive(z_q, z_t):
    """Mean of -log softmax over explicit per-pair exponentials (no max trick)."""
    m = len(z_q)
    total = 0.0
    for i in range(m):
        scores = [float(z_q[i] @ z_t[j]) for j in range(m)]
        denom = sum(math.exp(s) for s in scores)
        total += -math.log(math.exp(scores[i]) / denom)
    return total / m


def naive_scan_top_k(vectors, q, k):
    """Double-loop exact top-k under (score desc, id asc)."""
    scored = []
    for i in range(len(vectors)):
        s = 0.0
        for j in range(len(q)):
            s += float(vectors[i][j]) * float(q[j])
        scored.append((i, s))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:k]


def central_difference(f, get, set_, h=1e-4):
    """Central finite difference of scalar f w.r.t. one scalar parameter."""
    orig = get()
    set_(orig + h)
    up = f()
    set_(orig - h)
    down = f()
    set_(orig)
    return (up - down) / (2.0 * h)


def rel_err(a: float, b: float) -> float:
    # the floor keeps finite-difference roundoff (~1e-12 for h = 1e-4) from
    # dominating when the true gradient is essentially zero
    scale = max(abs(a), abs(b), 1e-6)
    return abs(a - b) / scale
