import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xkep.expcluster import (Dendrogram, cluster_explanations, cut, evaluation_graph, l_method_knee,
                             ward_linkage)

from synthetic import as_explanations, blobs
from oracles import naive_ward, merges_as_sets, assert_same_tree


def test_two_points():
    dg = ward_linkage([[0.0, 0.0], [3.0, 4.0]])
    assert len(dg.merges) == 1 and dg.merges[0].height == pytest.approx(5.0)
    ks, hs = evaluation_graph(dg)
    assert ks.tolist() == [1] and hs.tolist() == pytest.approx([5.0])


def test_two_pairs():
    X = np.array([[0, 0], [0, 0.1], [10, 0], [10, 0.1]])
    dg = ward_linkage(X)
    first = {frozenset([dg.merges[0].left, dg.merges[0].right]), frozenset([dg.merges[1].left, dg.merges[1].right])}
    assert first == {frozenset([0, 1]), frozenset([2, 3])}
    assert dg.merges[2].height > dg.merges[1].height
    assert cut(dg, 2).labels.tolist() == [0, 0, 1, 1]


@pytest.mark.parametrize("seed", range(10))
def test_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 31)), int(rng.integers(1, 9))
    X = rng.normal(size=(n, d))
    assert_same_tree(ward_linkage(X), naive_ward(X))


def test_matches_scipy_heights():
    from scipy.cluster.hierarchy import linkage

    X = np.random.default_rng(1).normal(size=(40, 5))
    np.testing.assert_allclose(ward_linkage(X).heights, linkage(X, "ward")[:, 2], atol=1e-9)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        ward_linkage(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        ward_linkage([[0.0, np.inf], [1.0, 1.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25))
def test_heights_monotone_and_cut_partitions(seed, n):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    dg = ward_linkage(X)
    assert np.all(np.diff(dg.heights) >= -1e-12)
    ks, hs = evaluation_graph(dg)
    assert np.all(np.diff(hs) <= 1e-12)
    for c in {1, 2, n}:
        labels = cut(dg, c).labels
        assert sorted(set(labels)) == list(range(c))
        assert len(labels) == n


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(15, 3))
    perm = rng.permutation(15)
    a, b = ward_linkage(X), ward_linkage(X[perm])
    np.testing.assert_allclose(a.heights, b.heights, atol=1e-9)
    back = {j: int(perm[j]) for j in range(15)}
    pb = [({back[i] for i in x}, {back[i] for i in y}) for x, y, _ in merges_as_sets(b)]
    pa = [(set(x), set(y)) for x, y, _ in merges_as_sets(a)]
    for (x1, y1), (x2, y2) in zip(pa, pb):
        assert {frozenset(x1), frozenset(y1)} == {frozenset(x2), frozenset(y2)}


def test_cut_extremes():
    X = np.random.default_rng(2).normal(size=(6, 2))
    dg = ward_linkage(X)
    assert cut(dg, 1).labels.tolist() == [0] * 6
    assert cut(dg, 6).labels.tolist() == list(range(6))
    with pytest.raises(ValueError):
        cut(dg, 7)


def test_dendrogram_roundtrip():
    dg = ward_linkage(np.random.default_rng(3).normal(size=(7, 2)))
    back = Dendrogram.from_dict(dg.to_dict())
    assert back == dg


def two_segment(bp, b, s1, s2):
    x = np.arange(1, b + 1, dtype=float)
    y = np.where(x <= bp, s1 * (x - bp), s2 * (x - bp)) + 100
    return x, y


def test_l_method_planted_breakpoint():
    x, y = two_segment(5, 20, -10.0, -1.0)
    assert l_method_knee((x, y), c_max=20) == 5


def test_l_method_linear_warns():
    x = np.arange(1, 21, dtype=float)
    with pytest.warns(UserWarning, match="no knee"):
        assert l_method_knee((x, 50 - 2 * x), 20) == 3


def test_l_method_too_short():
    with pytest.raises(ValueError):
        l_method_knee((np.arange(1, 4.0), np.arange(3.0)), 20)


def test_three_blobs():
    X, truth = blobs(0)
    dg, assign, c = cluster_explanations(as_explanations(X))
    assert c == 3
    ks, hs = evaluation_graph(dg)
    assert hs[1] > 10 * hs[2]
    pairs = set(zip(assign.labels, truth))
    assert len(pairs) == 3


def test_duplicates_co_clustered():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(12, 3))
    X[7] = X[2]
    dg = ward_linkage(X)
    for c in range(1, 12):
        labels = cut(dg, c).labels
        assert labels[7] == labels[2]
