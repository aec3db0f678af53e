import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import netfolio.community as community
from netfolio.community import Partition
from netfolio.errors import ConvergenceError, DataError
from netfolio.market_data import compute_returns
from netfolio.relational import (correlation_matrix, cooccurrence_from_partitions, cooccurrence_matrix, entropy,
                                 monthly_partitions, mutual_information, mutual_information_matrix, quantile_bins,
                                 read_matrix, write_matrix, yearly_overlap_coefficient)
from netfolio.synthetic import months_panel

from conftest import panel_from_log_returns


def _pearson_loop(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_correlation_self_and_negation(rng):
    x = rng.normal(size=100)
    c = correlation_matrix(panel_from_log_returns(np.column_stack([x, -x, 2 * x + 1]))).values
    assert c[0, 0] == 1.0
    assert abs(c[0, 1] + 1) < 1e-12
    assert abs(c[0, 2] - 1) < 1e-12


def test_correlation_matches_two_pass_oracle(rng):
    raw = rng.normal(size=(250, 3)) @ np.array([[1, 0.5, 0.2], [0, 1, 0.3], [0, 0, 1]])
    panel = panel_from_log_returns(raw)
    c = correlation_matrix(panel).values
    for i in range(3):
        for j in range(3):
            ref = _pearson_loop(list(raw[:, i]), list(raw[:, j]))
            assert abs(c[i, j] - ref) < 1e-12
    assert np.array_equal(c, c.T)


def test_correlation_zero_variance_column_is_zero(rng):
    raw = np.column_stack([rng.normal(size=50), np.full(50, 0.01), rng.normal(size=50)])
    c = correlation_matrix(panel_from_log_returns(raw)).values
    assert np.array_equal(c[1], [0.0, 1.0, 0.0])
    assert np.array_equal(c[:, 1], [0.0, 1.0, 0.0])


def test_quantile_bins_balanced_and_stable_ties():
    codes = quantile_bins([3, 1, 1, 1, 2, 2, 5, 0], 4)
    assert list(np.bincount(codes)) == [2, 2, 2, 2]
    # ties keep positional order: the three 1s at positions 1,2,3 are ranks 1,2,3
    assert list(codes) == [3, 0, 1, 1, 2, 2, 3, 0]
    assert list(quantile_bins([4.0, 4.0, 4.0], 8)) == [0, 0, 0]


@pytest.mark.parametrize("t,bins", [(80, 8), (96, 4), (250, 5), (1000, 10)])
def test_self_information_is_log_bins(rng, t, bins):
    x = rng.normal(size=t)
    assert abs(mutual_information(x, x, bins) - math.log(bins)) < 1e-9
    m = mutual_information_matrix(panel_from_log_returns(np.column_stack([x, x])), bins).values
    assert np.allclose(m, math.log(bins), atol=1e-9, rtol=0)


def _mi_loop(bx, by, bins):
    n = len(bx)
    joint = {}
    for a, b in zip(bx, by):
        joint[(a, b)] = joint.get((a, b), 0) + 1
    px = {a: list(bx).count(a) / n for a in set(bx)}
    py = {b: list(by).count(b) / n for b in set(by)}
    return sum(c / n * math.log((c / n) / (px[a] * py[b])) for (a, b), c in joint.items())


def test_mi_matrix_matches_loop_oracle(rng):
    raw = rng.normal(size=(120, 4))
    raw[:, 1] += raw[:, 0] ** 2
    m = mutual_information_matrix(panel_from_log_returns(raw), 6).values
    codes = [quantile_bins(raw[:, i], 6) for i in range(4)]
    for i in range(4):
        for j in range(4):
            ref = _mi_loop(list(codes[i]), list(codes[j]), 6) if i != j else entropy(codes[i], 6)
            assert abs(m[i, j] - ref) < 1e-12
    assert np.array_equal(m, m.T)
    assert (m >= 0).all()


def test_mi_monotone_transform_invariance(rng):
    x = rng.normal(size=300)
    y = 0.5 * x + rng.normal(size=300)
    base = mutual_information(x, y)
    assert mutual_information(np.exp(x), y) == base
    assert mutual_information(x, y ** 3) == base
    assert mutual_information(y, x) == base


def test_mi_nonlinear_dependence_beats_permutation_null():
    rng = np.random.default_rng(3)
    x = rng.normal(size=4000)
    y = x ** 2
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.1
    null = [mutual_information(x, rng.permutation(y)) for _ in range(100)]
    assert mutual_information(x, y) > np.quantile(null, 0.99)


def test_mi_needs_enough_observations():
    with pytest.raises(DataError):
        mutual_information_matrix(panel_from_log_returns(np.random.default_rng(0).normal(size=(5, 2))), 8)


def _part(labels):
    return Partition(tuple(f"S{k}" for k in range(len(labels))), labels, "LV")


def test_cooccurrence_counting():
    assets = tuple(f"S{k}" for k in range(4))
    same = [_part([0, 0, 1, 1])] * 12
    m = cooccurrence_from_partitions(same, "cCor", assets).values
    assert np.array_equal(m, [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]])
    half = [_part([0, 0, 1, 1])] * 6 + [_part([0, 1, 1, 0])] * 6
    assert cooccurrence_from_partitions(half, "cMI", assets).values[0, 1] == 0.5
    ones = cooccurrence_from_partitions([_part([0, 0, 0, 0])] * 12, "cCor", assets).values
    assert np.array_equal(ones, np.ones((4, 4)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 3), min_size=5, max_size=5), min_size=1, max_size=12))
def test_cooccurrence_rational_and_bounded(label_lists):
    parts = [_part(community.canonical_labels(ls)) for ls in label_lists]
    m = cooccurrence_from_partitions(parts, "cCor", parts[0].assets).values
    assert np.array_equal(m, m.T)
    assert ((m >= 0) & (m <= 1)).all()
    for v in m.ravel():
        assert Fraction(v).limit_denominator(12) * len(parts) == round(v * len(parts))


def test_overlap_coefficient_fixtures():
    a = _part([0, 0, 0, 1, 1, 1])
    assert yearly_overlap_coefficient([a, a, a]) == 1.0
    # no pair shares a community in both months
    assert yearly_overlap_coefficient([a, _part([0, 1, 2, 0, 1, 2])]) == 0.0
    # 6-asset hand count: pairs {01} and {01, 23} -> 1 kept of 2
    assert yearly_overlap_coefficient([_part([0, 0, 1, 2, 3, 4]), _part([0, 0, 1, 1, 2, 3])]) == 0.5
    # {01, 23, 45} vs {01, 23, 24, 25, 34, 35, 45} -> 3 of 7
    k, m = _part([0, 0, 1, 1, 2, 2]), _part([0, 0, 1, 1, 1, 1])
    assert yearly_overlap_coefficient([k, m]) == pytest.approx(3 / 7)
    # averaged over consecutive pairs: (3/7 + 1) / 2
    assert yearly_overlap_coefficient([k, m, m]) == pytest.approx((3 / 7 + 1) / 2)
    # all singletons in both months: nothing to compare, treated as fully stable
    s = _part([0, 1, 2, 3])
    assert yearly_overlap_coefficient([s, s]) == 1.0


def test_monthly_partitions_need_twelve_full_months():
    r = compute_returns(months_panel(11, blocks=((3, 0.8), (3, 0.8))))
    with pytest.raises(DataError, match="12 calendar months"):
        monthly_partitions(r, "LV", "Cor")


def test_cooccurrence_skips_failed_months(monkeypatch, caplog):
    r = compute_returns(months_panel(12, blocks=((3, 0.9), (3, 0.9)), idio=0.2))
    real = community.detect_communities
    calls = []

    def flaky(rel, clusterer, seed=0, **kw):
        calls.append(rel.source_window)
        if len(calls) in (2, 5):
            raise ConvergenceError("no convergence")
        return real(rel, clusterer, seed=seed, **kw)

    monkeypatch.setattr(community, "detect_communities", flaky)
    parts = monthly_partitions(r, "LV", "Cor")
    assert len(parts) == 10
    calls.clear()
    m = cooccurrence_matrix(r, "LV", "Cor")
    assert set(np.round(m.values.ravel() * 10, 9)) <= set(float(k) for k in range(11))
    assert "uses 10 of 12" in caplog.text


def test_cooccurrence_recovers_strong_blocks():
    r = compute_returns(months_panel(12, blocks=((4, 0.95), (4, 0.95)), idio=0.1, seed=7))
    truth = np.repeat([0, 1], 4)
    m = cooccurrence_matrix(r, "AP", "Cor").values
    assert np.array_equal(m, (truth[:, None] == truth[None, :]).astype(float))
    # Louvain on the tree may split a block further but never merges the two
    m = cooccurrence_matrix(r, "LV", "Cor").values
    assert (m[:4, 4:] == 0).all()


def test_matrix_round_trip(tmp_path, rng):
    rel = correlation_matrix(panel_from_log_returns(rng.normal(size=(60, 5))), "2020-01-01")
    write_matrix(rel, tmp_path / "m.csv")
    back = read_matrix(tmp_path / "m.csv")
    assert back.kind == "Cor" and back.assets == rel.assets and back.source_window == "2020-01-01"
    assert np.array_equal(back.values, rel.values)
