import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netfolio.community import Partition
from netfolio.graphrep import AssetGraph, DistanceMatrix, build_full_graph, build_mst, correlation_distance
from netfolio.relational import RelationalMatrix
from netfolio.selection import (AssetScores, SelectionSpec, closeness_scores, community_quotas, compute_scores,
                                degree_scores, pca_scores, pick_range, select_indices, select_portfolio)


def _assets(n):
    return tuple(f"S{k}" for k in range(n))


def _rel(m, kind="Cor"):
    m = np.asarray(m, float)
    return RelationalMatrix(kind, _assets(len(m)), m)


def _g(n, edges, shape="FG"):
    return AssetGraph(shape, _assets(n), edges)


def test_pca_identity_all_equal():
    v = pca_scores(_rel(np.eye(7))).values
    assert np.allclose(v, v[0], rtol=0, atol=1e-12) and v[0] > 0


def test_pca_rank_one_closed_form(rng, caplog):
    v = rng.normal(size=8)
    s = pca_scores(_rel(np.outer(v, v))).values
    expected = np.abs(v - v.mean()) * np.linalg.norm(v)
    assert np.allclose(s, expected, rtol=1e-9, atol=1e-12)
    assert list(np.argsort(s)) == list(np.argsort(np.abs(v - v.mean())))
    assert "rank 1" in caplog.text


def test_pca_matches_svd_oracle(rng):
    a = rng.normal(size=(6, 6))
    m = (a + a.T) / 2
    s = pca_scores(_rel(m)).values
    xc = m - m.mean(axis=0)
    _, _, vt = np.linalg.svd(xc)
    ref = np.linalg.norm(xc @ vt[:3].T, axis=1)
    assert np.allclose(s, ref, rtol=0, atol=1e-9)


def test_pca_centering_invariance_exact():
    rng = np.random.default_rng(2)
    m = rng.integers(-64, 64, size=(8, 8)) / 64.0
    m = (m + m.T) / 2
    for c in (1.0, -3.0, 16.0):
        assert np.array_equal(pca_scores(_rel(m)).values, pca_scores(_rel(m + c)).values)


def test_pca_centering_invariance_close(rng):
    m = rng.normal(size=(10, 10))
    assert np.allclose(pca_scores(_rel(m)).values, pca_scores(_rel(m + 0.37)).values, atol=1e-9)


def test_degree_triangle():
    g = _g(3, [(0, 1, 1.0), (0, 2, 2.0), (1, 2, 3.0)])
    part = Partition(_assets(3), [0, 0, 0], "LV")
    assert list(degree_scores(g, part).values) == [3.0, 4.0, 5.0]


def test_degree_star_and_singleton():
    g = _g(6, [(0, k, 1.0) for k in range(1, 5)] + [(4, 5, 7.0)], "MST")
    part = Partition(_assets(6), [0, 0, 0, 0, 0, 1], "LV")
    s = degree_scores(g, part).values
    assert list(s) == [4.0, 1.0, 1.0, 1.0, 1.0, 0.0]


def test_closeness_examples():
    assert list(closeness_scores(_g(2, [(0, 1, 2.5)])).values) == [1 / 2.5, 1 / 2.5]
    s = closeness_scores(_g(3, [(0, 1, 1.0), (1, 2, 1.0)])).values
    assert np.allclose(s, [2 / 3, 1.0, 2 / 3])
    s = closeness_scores(_g(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 10.0)])).values
    assert np.allclose(s, [2 / 3, 1.0, 2 / 3])


def test_closeness_brute_force(rng):
    import itertools
    n = 5
    a = np.triu(rng.uniform(0.1, 3, (n, n)), 1)
    g = build_full_graph(DistanceMatrix("Cor", _assets(n), a + a.T))
    w = g.weight_matrix()
    sp = np.full((n, n), np.inf)
    for i, j in itertools.permutations(range(n), 2):
        others = [k for k in range(n) if k not in (i, j)]
        for r in range(len(others) + 1):
            for mid in itertools.permutations(others, r):
                route = (i,) + mid + (j,)
                sp[i, j] = min(sp[i, j], sum(w[route[t], route[t + 1]] for t in range(len(route) - 1)))
    np.fill_diagonal(sp, 0)
    assert np.allclose(closeness_scores(g).values, (n - 1) / sp.sum(axis=1), rtol=1e-12)


def test_pick_range_examples():
    v = [1, 2, 3, 4, 5]
    assert pick_range(v, 2, "max") == [4, 3]
    assert pick_range(v, 2, "min") == [0, 1]
    assert pick_range(v, 2, "med") == [2, 1]
    for r in ("max", "med", "min"):
        assert sorted(pick_range(v, 5, r)) == [0, 1, 2, 3, 4]
    with pytest.raises(ValueError):
        pick_range(v, 6, "max")


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30, unique=True), st.data())
def test_pick_range_order_statistics(values, data):
    k = data.draw(st.integers(1, len(values)))
    assert [values[i] for i in pick_range(values, k, "max")] == sorted(values, reverse=True)[:k]
    assert [values[i] for i in pick_range(values, k, "min")] == sorted(values)[:k]


def test_quota_examples():
    assert list(community_quotas([5] * 5, 25)) == [5] * 5
    assert list(community_quotas([10, 12, 9, 11], 25)) == [6, 7, 6, 6]
    assert list(community_quotas([9, 9, 9, 9], 25)) == [7, 6, 6, 6]
    assert list(community_quotas([30], 20)) == [20]


def test_quota_deficit_redistribution():
    q = community_quotas([1, 10, 2, 10], 20)
    assert q.sum() == 20 and q[0] == 1 and q[2] == 2 and (q <= [1, 10, 2, 10]).all()
    assert list(community_quotas([2, 3], 25)) == [2, 3]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 15), min_size=1, max_size=12), st.integers(1, 40))
def test_quota_properties(sizes, p):
    q = community_quotas(sizes, p)
    assert q.sum() == min(p, sum(sizes))
    assert (q >= 0).all() and (q <= np.array(sizes)).all()
    if all(s >= -(-p // len(sizes)) for s in sizes):
        assert q.max() - q.min() <= 1


def _random_case(seed, n=15, q=3):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(q), rng.integers(0, q, n - q)])
    from netfolio.community import canonical_labels
    labels = canonical_labels(labels)
    part = Partition(_assets(n), labels, "AP")
    scores = AssetScores("PCA", _assets(n), rng.normal(size=n))
    return part, scores


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20), st.sampled_from(["max", "med", "min"]))
def test_selection_invariants(seed, p, range_):
    part, scores = _random_case(seed)
    chosen = select_indices(part, scores, SelectionSpec("PCA", range_, p))
    idx = [i for i, _ in chosen]
    assert len(idx) == min(p, 15) and len(set(idx)) == len(idx)
    assert all(part.labels[i] == c for i, c in chosen)
    assert select_portfolio(part, scores, SelectionSpec("PCA", range_, p)) == [part.assets[i] for i in idx]


def test_selection_single_community_takes_top():
    part = Partition(_assets(30), [0] * 30, "LV")
    scores = AssetScores("PCA", _assets(30), np.arange(30.0))
    assert select_portfolio(part, scores, SelectionSpec("PCA", "max", 20)) == [f"S{k}" for k in range(29, 9, -1)]


def _corr(rng, n):
    c = np.corrcoef(rng.normal(size=(n, n + 5)))
    c = (c + c.T) / 2
    np.fill_diagonal(c, 1.0)
    return c


@pytest.mark.parametrize("metric", ["PCA", "DegFG", "CloFG", "DegMST", "CloMST"])
def test_scores_permutation_equivariant(rng, metric):
    n = 9
    c = _corr(rng, n)
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2, 2])
    perm = rng.permutation(n)

    def run(mat, labs):
        rel = _rel(mat)
        d = correlation_distance(rel)
        part = Partition(rel.assets, labs, "LV")
        return compute_scores(metric, rel, build_full_graph(d), build_mst(d), part).values

    from netfolio.community import canonical_labels
    base = run(c, labels)
    moved = run(c[np.ix_(perm, perm)], canonical_labels(labels[perm]))
    assert np.allclose(moved, base[perm], rtol=1e-9, atol=1e-12)
