"""Knowledge-graph fact retrieval engine.

Embeds (head, relation, tail) triplets and natural-language queries into a
shared vector space, retrieves nearest facts with an exact or HNSW index over
int8-quantized vectors, and reranks the top-k with a jointly-scoring model.
"""

__version__ = "0.1.0"
