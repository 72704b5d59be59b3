"""Backfill error/stability statistics and forecast scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .errors import DataError
from .store import BackfillSequence, RevisionDataset

Metric = Literal["berr-initial", "stime"]
GroupBy = Literal["signal", "region", "feature"]
Reduce = Literal["mean", "median-of-means"]


class UndefinedBErr(DataError):
    """Backfill error is undefined for a zero stable value."""


def _values(bseq) -> np.ndarray:
    return np.asarray(bseq.values if isinstance(bseq, BackfillSequence) else bseq, dtype=np.float64)


def berr(bseq, r: int) -> float:
    """|d(r) - stable| / |stable| with r the 1-based position in the sequence."""
    v = _values(bseq)
    if not 1 <= r <= len(v):
        raise IndexError(f"revision week {r} outside 1..{len(v)}")
    stable = v[-1]
    if stable == 0:
        raise UndefinedBErr("stable value is 0")
    return float(abs(v[r - 1] - stable) / abs(stable))


def berr_curve(bseq) -> np.ndarray:
    v = _values(bseq)
    if v[-1] == 0:
        raise UndefinedBErr("stable value is 0")
    return np.abs(v - v[-1]) / abs(v[-1])


def stime(bseq, epsilon: float = 0.05) -> int:
    """First 1-based week from which BErr stays below epsilon.

    Zero stable values yield the sequence length.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    v = _values(bseq)
    if v[-1] == 0:
        return len(v)
    unstable = np.flatnonzero(berr_curve(v) >= epsilon)
    return int(unstable[-1]) + 2 if unstable.size else 1


@dataclass
class StatsTable:
    metric: str
    group_by: str
    rows: list[tuple[str, float, int, int]]  # group, value, n, skipped
    summary: float | None = None
    extra: dict = field(default_factory=dict)

    def as_rows(self):
        for g, v, n, skipped in self.rows:
            yield (g, self.metric, v, n, skipped)


def _group_key(signal, group_by: GroupBy) -> str:
    if group_by == "signal":
        return str(signal)
    if group_by == "region":
        return signal.region
    if group_by == "feature":
        return signal.feature
    raise ValueError(f"unknown grouping {group_by!r}")


def aggregate(ds: RevisionDataset, metric: Metric = "berr-initial", group_by: GroupBy = "signal",
              reduce: Reduce = "mean", epsilon: float = 0.05) -> StatsTable:
    """Per-group mean of initial BErr or STime over all final backfill sequences.

    Sequences with a zero stable value are skipped and counted.  With
    ``reduce="median-of-means"`` the table also carries the median of the
    group means in `summary`.
    """
    if len(ds) == 0:
        raise DataError("dataset is empty")
    values: dict[str, list[float]] = {}
    skipped: dict[str, int] = {}
    for s in ds.signals:
        key = _group_key(s, group_by)
        values.setdefault(key, [])
        skipped.setdefault(key, 0)
        for w in ds.obs_weeks(s):
            seq = ds.backfill_sequence(s, w)
            if seq.stable == 0:
                skipped[key] += 1
                continue
            if metric == "berr-initial":
                values[key].append(berr(seq, 1))
            elif metric == "stime":
                values[key].append(float(stime(seq, epsilon)))
            else:
                raise ValueError(f"unknown metric {metric!r}")
    rows = []
    for key in sorted(values):
        if not values[key]:
            raise DataError(f"every sequence in group {key!r} has a zero stable value")
        rows.append((key, float(np.mean(values[key])), len(values[key]), skipped[key]))
    table = StatsTable(metric, group_by, rows)
    if reduce == "median-of-means":
        table.summary = float(np.median([r[1] for r in rows]))
    elif reduce != "mean":
        raise ValueError(f"unknown reduction {reduce!r}")
    return table


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length series of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise DataError("correlation undefined for a constant series")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def score(preds: Sequence[float], truths: Sequence[float], metric: Literal["mae", "mape"] = "mae") -> float:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(truths, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    err = np.abs(y - p)
    if metric == "mae":
        return float(err.mean())
    if metric == "mape":
        if np.any(y == 0):
            raise DataError("MAPE undefined for a zero truth value")
        return float((err / np.abs(y)).mean())
    raise ValueError(f"unknown metric {metric!r}")


def delta_mae(preds, realtime_truths, stable_truths) -> float:
    """MAE against stable targets minus MAE against real-time targets."""
    return score(preds, stable_truths) - score(preds, realtime_truths)
