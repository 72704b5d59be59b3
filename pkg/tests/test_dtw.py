import functools
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backfill.dtw import cluster_bseqs, dba, dtw, dtw_path, graph_gen, minmax_scale, pairwise
from backfill.errors import DataError
from backfill.store import SignalId

from conftest import dataset_from


def brute_dtw(a, b):
    """Plain recursion over the three predecessor moves."""
    @functools.lru_cache(maxsize=None)
    def rec(i, j):
        cost = abs(a[i] - b[j])
        if i == 0 and j == 0:
            return cost
        options = []
        if i > 0:
            options.append(rec(i - 1, j))
        if j > 0:
            options.append(rec(i, j - 1))
        if i > 0 and j > 0:
            options.append(rec(i - 1, j - 1))
        return cost + min(options)

    return rec(len(a) - 1, len(b) - 1)


def test_examples():
    assert dtw([0], [5]) == 5
    assert dtw([1, 2, 3], [1, 3]) == 1
    assert dtw([4, 1, 4], [4, 1, 4]) == 0
    with pytest.raises(ValueError):
        dtw([], [1])


def test_matches_brute_force_on_sample():
    seqs = [s for n in range(1, 4) for s in itertools.product(range(3), repeat=n)]
    for a in seqs:
        for b in seqs:
            assert dtw(a, b) == brute_dtw(a, b)


floats = st.lists(st.floats(-50, 50), min_size=1, max_size=8)


@settings(max_examples=100, deadline=None)
@given(floats, floats)
def test_symmetry_and_identity(a, b):
    assert dtw(a, b) == dtw(b, a)
    assert dtw(a, a) == 0
    assert dtw(a, b) >= 0
    assert dtw(a, b) == pytest.approx(brute_dtw(tuple(a), tuple(b)))


@settings(max_examples=50, deadline=None)
@given(floats, floats)
def test_path_cost_matches_distance(a, b):
    d, path = dtw_path(a, b)
    assert path[0] == (0, 0) and path[-1] == (len(a) - 1, len(b) - 1)
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    assert sum(abs(a[i] - b[j]) for i, j in path) == pytest.approx(d)


def test_pairwise_is_worker_independent():
    rng = np.random.default_rng(0)
    seqs = [rng.normal(size=rng.integers(3, 12)) for _ in range(20)]
    one = pairwise(seqs, jobs=1)
    four = pairwise(seqs, jobs=4)
    assert np.array_equal(one, four)
    assert np.array_equal(one, one.T)
    assert one[3, 7] == dtw(seqs[3], seqs[7])


def test_minmax_scale():
    assert minmax_scale([2, 4, 3]).tolist() == [0, 1, 0.5]
    assert minmax_scale([5, 5]).tolist() == [0, 0]


def test_dba_of_identical_members():
    s = np.array([0.0, 1.0, 0.5])
    np.testing.assert_array_equal(dba([s, s, s], np.zeros(3), 3), s)


def _families(n_per=6, length=10, seed=0):
    rng = np.random.default_rng(seed)
    up = [np.linspace(0, 1, length) + 0.02 * rng.normal(size=length) for _ in range(n_per)]
    down = [np.linspace(1, 0, length) + 0.02 * rng.normal(size=length) for _ in range(n_per)]
    return up + down, [0] * n_per + [1] * n_per


def test_two_families_are_separated():
    seqs, truth = _families()
    res = cluster_bseqs(seqs, 2, seed=3)
    labels = res.labels.tolist()
    assert len(set(labels[:6])) == 1 and len(set(labels[6:])) == 1 and labels[0] != labels[6]


def test_k_one_and_k_n():
    seqs, _ = _families(3)
    res = cluster_bseqs(seqs, 1)
    assert set(res.labels.tolist()) == {0}
    assert len(res.centroids) == 1
    res = cluster_bseqs(seqs, len(seqs), seed=1)
    assert sorted(res.labels.tolist()) == list(range(len(seqs)))
    assert res.cost == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        cluster_bseqs(seqs, len(seqs) + 1)


@pytest.mark.parametrize("seed", range(5))
def test_cost_non_increasing_and_labels_valid(seed):
    rng = np.random.default_rng(seed)
    seqs = [rng.random(rng.integers(4, 9)) for _ in range(25)]
    res = cluster_bseqs(seqs, 4, seed=seed)
    assert all(b <= a + 1e-9 for a, b in zip(res.cost_history, res.cost_history[1:]))
    assert res.labels.max() < 4
    assert len(set(res.labels.tolist())) == 4
    again = cluster_bseqs(seqs, 4, seed=seed)
    assert np.array_equal(res.labels, again.labels)


def _graph_world(vals: dict[str, list[float]], weeks=8):
    """Three signals (A, B, C); each obs week's Bseq is vals[name] scaled by the week."""
    issues = {}
    for name, seq in vals.items():
        for w in range(1, weeks + 1):
            issues[("R", name, w)] = {w + i: v * w for i, v in enumerate(seq) if w + i <= weeks + len(seq)}
    return dataset_from(issues)


def test_graph_forced_edge():
    ds = _graph_world({"A": [1, 2, 3], "B": [1, 2, 3], "C": [9, 1, 5]})
    g = graph_gen(ds, 10, tau=1)
    assert len(g.edges) == 1
    a, b = (g.vertices[i] for i in g.edges[0])
    assert {a.feature, b.feature} == {"A", "B"}
    assert g.weights[0] == 0.0


@pytest.mark.parametrize("tau", [0, 1, 2, 3, 7])
def test_graph_edge_count(tau):
    ds = _graph_world({"A": [1, 2, 3], "B": [2, 2, 3], "C": [9, 1, 5]})
    g = graph_gen(ds, 10, tau=tau)
    assert len(g.edges) == min(tau, 3)
    assert all(i < j for i, j in g.edges)
    assert len(set(g.edges)) == len(g.edges)


def test_graph_tie_break_is_lexicographic():
    # all three pairwise distances are zero
    ds = _graph_world({"A": [1, 2], "B": [1, 2], "C": [1, 2]})
    g = graph_gen(ds, 9, tau=2)
    assert [(g.vertices[i].feature, g.vertices[j].feature) for i, j in g.edges] == [("A", "B"), ("A", "C")]


def test_graph_weights_use_weeks_up_to_t_minus_5():
    # B diverges from A only in observation week 6
    issues = {}
    for name in "AB":
        for w in range(1, 12):
            v = 100.0 if (name == "B" and w == 6) else 1.0
            issues[("R", name, w)] = {w: v, w + 1: v}
    ds = dataset_from(issues)
    assert graph_gen(ds, 10, tau=1).weights[0] == 0.0
    assert graph_gen(ds, 11, tau=1).weights[0] > 0.0


def test_graph_needs_a_full_week():
    ds = dataset_from({("R", "A", 9): {9: 1.0, 12: 1.0}, ("R", "B", 9): {9: 1.0}})
    with pytest.raises(DataError, match="no observation week"):
        graph_gen(ds, 12, tau=1)
    with pytest.raises(DataError, match="beyond"):
        graph_gen(ds, 13, tau=1)
    with pytest.raises(ValueError):
        graph_gen(ds, 12, tau=-1)


def test_graph_skips_mismatched_weeks():
    issues = {("R", "A", w): {w: 1.0} for w in range(1, 11)}
    issues.update({("R", "B", w): {w: 1.0} for w in range(1, 11)})
    issues[("R", "C", 1)] = {1: 3.0}
    ds = dataset_from(issues)
    g = graph_gen(ds, 10, tau=3)
    assert len(g.edges) == 3
    w = dict(zip([(g.vertices[i].feature, g.vertices[j].feature) for i, j in g.edges], g.weights))
    # C only has week 1, its Bseq held at 3 for ten issues
    assert w[("A", "C")] == 20.0 and w[("A", "B")] == 0.0


def test_graph_is_deterministic_across_jobs():
    rng = np.random.default_rng(2)
    issues = {(f"R{r}", f, w): {w + i: float(v) for i, v in enumerate(rng.integers(1, 20, size=4))}
              for r in range(3) for f in "xy" for w in range(1, 10)}
    ds = dataset_from(issues)
    assert graph_gen(ds, 12, tau=5, jobs=1) == graph_gen(ds, 12, tau=5, jobs=3)
