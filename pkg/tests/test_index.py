import numpy as np
import pytest
from hypothesis import given, strategies as st

from factrank.index import (ExactIndex, HnswIndex, HnswParams, QuantizationRanges,
                            SnapshotError, _read_varint, _varint, dequantize,
                            quantize, rank_order, top_k)

from oracles import naive_scan_top_k


# -- ranking order ----------------------------------------------------------


def test_rank_order_tie_break_ascending_id():
    scores = np.array([1.0, 2.0, 2.0, 0.5])
    assert list(rank_order(scores)) == [1, 2, 0, 3]


def test_top_k_truncates():
    assert top_k(np.array([0.1, 0.9, 0.5]), 2) == [(1, 0.9), (2, 0.5)]


# -- exact index ------------------------------------------------------------


def test_exact_size_and_dim():
    idx = ExactIndex.build(np.eye(3))
    assert len(idx) == 3
    assert idx.dim == 3


def test_exact_self_similarity():
    vecs = np.array([[0.1, 0.0], [0.0, 2.0], [0.0, 0.1]])
    idx = ExactIndex.build(vecs)
    assert idx.search(np.array([0.0, 2.0]), 1)[0][0] == 1


def test_exact_equal_scores_lower_id_first():
    idx = ExactIndex.build(np.array([[1.0, 0.0], [1.0, 0.0]]))
    result = idx.search(np.array([1.0, 0.0]), 2)
    assert [tid for tid, _ in result] == [0, 1]


def test_exact_k_equals_n_is_permutation():
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(20, 4))
    idx = ExactIndex.build(vecs)
    result = idx.search(rng.normal(size=4), 20)
    assert sorted(tid for tid, _ in result) == list(range(20))
    scores = [s for _, s in result]
    assert scores == sorted(scores, reverse=True)


def test_exact_matches_naive_scan():
    rng = np.random.default_rng(1)
    for trial in range(10):
        n = int(rng.integers(1, 60))
        d = int(rng.integers(1, 8))
        vecs = rng.integers(-3, 4, size=(n, d)).astype(float)  # integral: force ties
        q = rng.integers(-3, 4, size=d).astype(float)
        k = int(rng.integers(1, n + 1))
        got = ExactIndex.build(vecs).search(q, k)
        want = naive_scan_top_k(vecs, q, k)
        assert [tid for tid, _ in got] == [tid for tid, _ in want]
        assert np.allclose([s for _, s in got], [s for _, s in want])


def test_exact_validation():
    with pytest.raises(ValueError):
        ExactIndex.build(np.empty((0, 3)))
    idx = ExactIndex.build(np.eye(2))
    with pytest.raises(ValueError):
        idx.search(np.zeros(3), 1)
    with pytest.raises(ValueError):
        idx.search(np.zeros(2), 0)


# -- quantization -----------------------------------------------------------


def test_quantize_endpoints_exact():
    vecs = np.array([[-2.0, 1.0], [4.0, 3.0]])
    ranges = QuantizationRanges.fit(vecs)
    top = quantize(np.array([4.0, 3.0]), ranges)
    bottom = quantize(np.array([-2.0, 1.0]), ranges)
    assert list(top) == [255, 255]
    assert list(bottom) == [0, 0]
    assert np.array_equal(dequantize(top, ranges), ranges.max)
    assert np.array_equal(dequantize(bottom, ranges), ranges.min)


def test_quantize_midpoint_example():
    ranges = QuantizationRanges(np.array([-1.0]), np.array([1.0]))
    code = quantize(np.array([0.0]), ranges)
    assert code[0] == 128
    assert abs(dequantize(code, ranges)[0] - 0.003922) < 1e-6


def test_quantize_zero_span_dimension():
    vecs = np.array([[5.0, 1.0], [5.0, 3.0]])
    ranges = QuantizationRanges.fit(vecs)
    code = quantize(np.array([5.0, 2.0]), ranges)
    assert code[0] == 0
    assert dequantize(code, ranges)[0] == 5.0


def test_quantize_clamps_out_of_range():
    ranges = QuantizationRanges(np.array([0.0]), np.array([1.0]))
    assert quantize(np.array([9.0]), ranges)[0] == 255
    assert quantize(np.array([-9.0]), ranges)[0] == 0


def test_quantization_error_bounded_by_half_step():
    rng = np.random.default_rng(2)
    vecs = rng.normal(size=(200, 16))
    ranges = QuantizationRanges.fit(vecs)
    step = ranges.span / 255.0
    for v in vecs[:50]:
        back = dequantize(quantize(v, ranges), ranges)
        assert np.all(np.abs(back - v) <= step / 2 + 1e-9)


def test_round_half_away_from_zero():
    ranges = QuantizationRanges(np.array([0.0]), np.array([255.0]))
    assert quantize(np.array([0.5]), ranges)[0] == 1
    assert quantize(np.array([1.5]), ranges)[0] == 2


# -- varint -----------------------------------------------------------------


@given(st.integers(min_value=0, max_value=2 ** 40))
def test_varint_round_trip(value):
    data = _varint(value)
    got, off = _read_varint(data, 0)
    assert got == value
    assert off == len(data)


# -- HNSW -------------------------------------------------------------------


def small_index(n=200, d=8, seed=3, **params):
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(n, d))
    return vecs, HnswIndex.build(vecs, HnswParams(**params), seed=seed)


def test_hnsw_single_node():
    idx = HnswIndex.build(np.array([[1.0, 2.0]]), seed=0)
    assert len(idx) == 1
    assert idx.entry_point == 0
    assert idx.graph[0][0] == []
    assert idx.search(np.array([1.0, 1.0]), 5) == [
        (0, float(idx.deq[0] @ np.array([1.0, 1.0])))]


def test_hnsw_identical_vectors_keep_invariants():
    vecs = np.ones((30, 4))
    idx = HnswIndex.build(vecs, seed=1)
    idx.check_invariants()
    result = idx.search(np.ones(4), 5)
    assert len(result) == 5


def test_hnsw_structural_invariants_random_builds():
    for seed in range(3):
        _, idx = small_index(seed=seed)
        idx.check_invariants()


def test_hnsw_levels_distribution_is_seeded_geometricish():
    _, idx = small_index(n=500, seed=5)
    assert int(idx.levels.min()) == 0
    assert (idx.levels == 0).mean() > 0.8  # most nodes only on layer 0 for M=16


def test_hnsw_exhaustive_beam_matches_exact_on_dequantized():
    vecs, idx = small_index(n=40, d=4, seed=7)
    exact_deq = ExactIndex.build(idx.deq)
    rng = np.random.default_rng(8)
    for _ in range(5):
        q = rng.normal(size=4)
        got = idx.search(q, 10, ef_search=40)
        want = exact_deq.search(q, 10)
        assert [tid for tid, _ in got] == [tid for tid, _ in want]


def test_hnsw_recall_reasonable_and_ef_monotone_spot_check():
    vecs, idx = small_index(n=400, d=8, seed=9)
    exact = ExactIndex.build(vecs)
    rng = np.random.default_rng(10)
    queries = rng.normal(size=(30, 8))

    def recall(ef):
        total = 0.0
        for q in queries:
            truth = {tid for tid, _ in exact.search(q, 10)}
            found = {tid for tid, _ in idx.search(q, 10, ef_search=ef)}
            total += len(truth & found) / 10
        return total / len(queries)

    r_k, r_4k = recall(10), recall(40)
    assert r_4k >= r_k
    assert r_4k >= 0.9


def test_hnsw_scores_are_dequantized_dot_products():
    vecs, idx = small_index(n=50, d=4, seed=11)
    q = np.full(4, 0.25)
    for tid, s in idx.search(q, 5):
        assert abs(s - float(idx.deq[tid] @ q)) < 1e-12


def test_hnsw_rejects_bad_input():
    with pytest.raises(ValueError):
        HnswIndex.build(np.empty((0, 3)))
    _, idx = small_index(n=10, d=4)
    with pytest.raises(ValueError):
        idx.search(np.zeros(4), 0)
    with pytest.raises(ValueError):
        idx.search(np.zeros(3), 1)


def test_hnsw_snapshot_round_trip_bit_identical_search(tmp_path):
    vecs, idx = small_index(n=120, d=8, seed=12)
    path = tmp_path / "index.bin"
    idx.save(path)
    loaded = HnswIndex.load(path)
    assert loaded.fingerprint == idx.fingerprint
    assert np.array_equal(loaded.codes, idx.codes)
    assert np.array_equal(loaded.levels, idx.levels)
    assert loaded.graph == idx.graph
    rng = np.random.default_rng(13)
    for _ in range(20):
        q = rng.normal(size=8)
        assert loaded.search(q, 10) == idx.search(q, 10)
    loaded.save(tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


def test_hnsw_snapshot_bad_magic(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"WRONGMAG" + b"\x00" * 80)
    with pytest.raises(SnapshotError):
        HnswIndex.load(tmp_path / "bad.bin")


def test_hnsw_build_deterministic():
    vecs = np.random.default_rng(14).normal(size=(80, 6))
    a = HnswIndex.build(vecs, seed=2)
    b = HnswIndex.build(vecs, seed=2)
    assert np.array_equal(a.levels, b.levels)
    assert a.graph == b.graph
    assert a.entry_point == b.entry_point
