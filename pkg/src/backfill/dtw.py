"""Dynamic time warping, DTW k-means with barycenter averaging, and signal graphs."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import DataError
from .store import RevisionDataset, SignalId


@numba.njit(cache=True, nogil=True)
def _dtw_matrix(a, b):
    n, m = a.shape[0], b.shape[0]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = abs(ai - b[j - 1]) + best
    return acc


def _as_seq(x) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("DTW of an empty sequence")
    return a


def dtw(a: Sequence[float], b: Sequence[float]) -> float:
    """Unconstrained DTW with |x - y| local cost and unit steps."""
    a, b = _as_seq(a), _as_seq(b)
    return float(_dtw_matrix(a, b)[-1, -1])


@numba.njit(cache=True, nogil=True)
def _backtrack(acc):
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while i > 1 or j > 1:
        # diagonal first on ties for a canonical path
        best, bi, bj = acc[i - 1, j - 1], i - 1, j - 1
        if acc[i - 1, j] < best:
            best, bi, bj = acc[i - 1, j], i - 1, j
        if acc[i, j - 1] < best:
            best, bi, bj = acc[i, j - 1], i, j - 1
        i, j = bi, bj
        path.append((i - 1, j - 1))
    path.reverse()
    return path


def dtw_path(a, b) -> tuple[float, list[tuple[int, int]]]:
    a, b = _as_seq(a), _as_seq(b)
    acc = _dtw_matrix(a, b)
    return float(acc[-1, -1]), list(_backtrack(acc))


@numba.njit(cache=True, nogil=True)
def _dba_accumulate(center, s, total, count):
    acc = _dtw_matrix(center, s)
    for i, j in _backtrack(acc):
        total[i] += s[j]
        count[i] += 1.0


def pairwise(seqs: Sequence[Sequence[float]], others: Sequence[Sequence[float]] | None = None,
             jobs: int = 1) -> np.ndarray:
    """DTW distance matrix; each cell is computed independently so any
    worker count yields the same bits."""
    xs = [_as_seq(s) for s in seqs]
    ys = xs if others is None else [_as_seq(s) for s in others]
    symmetric = others is None
    cells = [(i, j) for i in range(len(xs)) for j in range(len(ys)) if not symmetric or j > i]
    out = np.zeros((len(xs), len(ys)))

    def work(ij):
        i, j = ij
        return float(_dtw_matrix(xs[i], ys[j])[-1, -1])

    if jobs > 1 and len(cells) > 64:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vals = list(pool.map(work, cells, chunksize=max(1, len(cells) // (4 * jobs))))
    else:
        vals = [work(c) for c in cells]
    for (i, j), v in zip(cells, vals):
        out[i, j] = v
        if symmetric:
            out[j, i] = v
    return out


def minmax_scale(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def dba_update(center: np.ndarray, members: Sequence[np.ndarray]) -> np.ndarray:
    """One DTW barycenter averaging pass: average every member point onto
    the center coordinates it aligns with."""
    total = np.zeros_like(center)
    count = np.zeros_like(center)
    for s in members:
        _dba_accumulate(center, s, total, count)
    return np.where(count > 0, total / np.maximum(count, 1), center)


def dba(members: Sequence[np.ndarray], init: np.ndarray, n_iter: int = 10) -> np.ndarray:
    center = np.array(init, dtype=np.float64)
    for _ in range(n_iter):
        center = dba_update(center, members)
    return center


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray
    centroids: list[np.ndarray]
    cost_history: list[float]

    @property
    def cost(self) -> float:
        return self.cost_history[-1]


def cluster_bseqs(bseqs: Sequence[Sequence[float]], k: int, seed: int = 0, max_iters: int = 20,
                  dba_iters: int = 10, scale: bool = True, jobs: int = 1) -> ClusterAssignment:
    """Partitional k-means under DTW with DBA centroids.

    Sequences are min-max scaled to [0, 1] first.  Seeding is k-means++ on
    DTW distances; an emptied cluster is reseeded with the point farthest
    from its current centroid.  A DBA refinement is kept only when it does
    not raise the cluster's cost, so the total cost never increases.
    """
    n = len(bseqs)
    if k < 1 or k > n:
        raise ValueError(f"need 1 <= k <= {n}, got k={k}")
    xs = [minmax_scale(s) if scale else _as_seq(s) for s in bseqs]
    rng = np.random.default_rng(seed)

    first = int(rng.integers(n))
    seeds = [first]
    d2 = pairwise(xs, [xs[first]], jobs)[:, 0] ** 2
    while len(seeds) < k:
        total = d2.sum()
        if total == 0:
            pick = next(i for i in range(n) if i not in seeds)
        else:
            pick = int(rng.choice(n, p=d2 / total))
        seeds.append(pick)
        d2 = np.minimum(d2, pairwise(xs, [xs[pick]], jobs)[:, 0] ** 2)
    centroids = [xs[i].copy() for i in seeds]

    dist = pairwise(xs, centroids, jobs)
    labels = dist.argmin(axis=1)
    history = [float(dist[np.arange(n), labels].sum())]
    for _ in range(max_iters):
        for c in range(k):
            if not np.any(labels == c):
                far = int(dist[np.arange(n), labels].argmax())
                labels[far] = c
                centroids[c] = xs[far].copy()
        new_centroids = []
        for c in range(k):
            members = [xs[i] for i in np.flatnonzero(labels == c)]
            cand = dba(members, centroids[c], dba_iters)
            old_cost = sum(dtw(centroids[c], s) for s in members)
            new_cost = sum(dtw(cand, s) for s in members)
            new_centroids.append(cand if new_cost <= old_cost else centroids[c])
        centroids = new_centroids
        dist = pairwise(xs, centroids, jobs)
        new_labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return ClusterAssignment(k, labels, centroids, history)


@dataclass(frozen=True)
class SignalGraph:
    vertices: tuple[SignalId, ...]
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    tau: int

    def index(self) -> dict[SignalId, int]:
        return {s: i for i, s in enumerate(self.vertices)}

    def edge_rows(self):
        for (i, j), w in zip(self.edges, self.weights):
            a, b = self.vertices[i], self.vertices[j]
            yield (a.region, a.feature, b.region, b.feature, w)


def graph_weights(ds: RevisionDataset, t: int, scale: bool = False, jobs: int = 1,
                  window: int = 5) -> tuple[list[SignalId], np.ndarray, np.ndarray]:
    """Summed DTW distance between every pair of signals over obs weeks up to t - window.

    Returns (signals, W, shared) where shared[i, j] counts the observation
    weeks both signals contribute; pairs with none are ineligible.
    """
    signals = ds.signals
    if ds.final_week is None or t > ds.final_week:
        raise DataError(f"week {t} is beyond the data (final week {ds.final_week})")
    last = t - window
    weeks = [w for w in range(ds.first_week, last + 1)] if ds.first_week is not None else []
    n = len(signals)
    W = np.zeros((n, n))
    shared = np.zeros((n, n), dtype=int)
    any_full = False
    for w in weeks:
        present = [i for i, s in enumerate(signals) if ds.has_value(s, w, t)]
        if len(present) == n:
            any_full = True
        seqs = [ds.backfill_sequence(signals[i], w, t).values for i in present]
        if scale:
            seqs = [minmax_scale(s) for s in seqs]
        d = pairwise(seqs, jobs=jobs)
        idx = np.array(present, dtype=int)
        if idx.size:
            W[np.ix_(idx, idx)] += d
            shared[np.ix_(idx, idx)] += 1
    if not any_full:
        raise DataError(f"no observation week <= {last} has backfill sequences for all signals")
    return signals, W, shared


def graph_gen(ds: RevisionDataset, t: int, tau: int, scale: bool = False, jobs: int = 1) -> SignalGraph:
    """Connect the tau signal pairs with the smallest summed DTW distance.

    Ties fall back to the (region, feature) order of the pair.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    signals, W, shared = graph_weights(ds, t, scale=scale, jobs=jobs)
    pairs = [(W[i, j], i, j) for i, j in itertools.combinations(range(len(signals)), 2) if shared[i, j] > 0]
    pairs.sort()
    chosen = pairs[:tau]
    return SignalGraph(tuple(signals), tuple((i, j) for _, i, j in chosen),
                       tuple(float(w) for w, _, _ in chosen), tau)


def empty_graph(signals: Sequence[SignalId]) -> SignalGraph:
    return SignalGraph(tuple(signals), (), (), 0)
