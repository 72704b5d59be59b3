"""Vintage storage: load revision CSVs and materialise backfill and real-time views."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Literal, Mapping

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

VINTAGE_HEADER = ("signal", "region", "observation_week", "issue_week", "value")
PREDICTION_HEADER = ("model", "region", "forecast_made_week", "horizon_k", "value")


@dataclass(frozen=True, order=True)
class SignalId:
    region: str
    feature: str

    def __post_init__(self):
        if not self.region or not self.feature:
            raise DataError(f"empty signal token in {self!r}")

    def __str__(self) -> str:
        return f"{self.region}:{self.feature}"


@dataclass(frozen=True)
class VintageRecord:
    signal: SignalId
    obs_week: int
    issue_week: int
    value: float


@dataclass(frozen=True)
class BackfillSequence:
    signal: SignalId
    obs_week: int
    first_issue: int
    values: np.ndarray
    filled: np.ndarray  # True where the entry was forward-filled

    def __len__(self) -> int:
        return len(self.values)

    @property
    def stable(self) -> float:
        return float(self.values[-1])

    @property
    def initial(self) -> float:
        return float(self.values[0])


class RevisionDataset:
    """Immutable map (signal, observation week, issue week) -> value.

    Delays are the modal lag between observation week and first issue per
    signal; `delay_overrides` replaces the inferred value for listed signals.
    """

    def __init__(self, records: Iterable[VintageRecord],
                 delay_overrides: Mapping[SignalId, int] | None = None):
        table: dict[SignalId, dict[int, dict[int, float]]] = {}
        for rec in records:
            if rec.issue_week < rec.obs_week:
                raise DataError(f"issue week {rec.issue_week} precedes observation week {rec.obs_week} for {rec.signal}")
            if not math.isfinite(rec.value):
                raise DataError(f"non-finite value for {rec.signal} obs={rec.obs_week} issue={rec.issue_week}")
            issues = table.setdefault(rec.signal, {}).setdefault(rec.obs_week, {})
            if rec.issue_week in issues:
                raise DataError(f"duplicate record for {rec.signal} obs={rec.obs_week} issue={rec.issue_week}")
            issues[rec.issue_week] = float(rec.value)
        self._table = MappingProxyType({
            s: MappingProxyType({w: MappingProxyType(dict(sorted(iss.items()))) for w, iss in sorted(obs.items())})
            for s, obs in sorted(table.items())
        })
        self.n_records = sum(len(iss) for obs in self._table.values() for iss in obs.values())
        self.final_week = max((max(iss) for obs in self._table.values() for iss in obs.values()), default=None)
        self.first_week = min((min(obs) for obs in self._table.values()), default=None)
        delays = {s: _modal_delay(obs) for s, obs in self._table.items()}
        if delay_overrides:
            for s, d in delay_overrides.items():
                if d < 0:
                    raise DataError(f"negative delay override for {s}")
                delays[s] = int(d)
        self.delays = MappingProxyType(delays)
        self._cache: dict[tuple[SignalId, int], BackfillSequence] = {}

    def __reduce__(self):
        return (_rebuild, (list(self.records()), dict(self.delays)))

    # basic views
    @property
    def signals(self) -> list[SignalId]:
        return list(self._table)

    @property
    def regions(self) -> list[str]:
        return sorted({s.region for s in self._table})

    @property
    def features(self) -> list[str]:
        return sorted({s.feature for s in self._table})

    def __len__(self) -> int:
        return self.n_records

    def __contains__(self, signal: SignalId) -> bool:
        return signal in self._table

    def obs_weeks(self, signal: SignalId) -> list[int]:
        return list(self._table.get(signal, {}))

    def issues(self, signal: SignalId, obs_week: int) -> Mapping[int, float]:
        return self._table.get(signal, {}).get(obs_week, MappingProxyType({}))

    def records(self) -> Iterable[VintageRecord]:
        for s, obs in self._table.items():
            for w, iss in obs.items():
                for t, v in iss.items():
                    yield VintageRecord(s, w, t, v)

    def _require_nonempty(self) -> None:
        if self.final_week is None:
            raise DataError("dataset has no records")

    def has_value(self, signal: SignalId, obs_week: int, upto_week: int) -> bool:
        iss = self.issues(signal, obs_week)
        return bool(iss) and next(iter(iss)) <= upto_week

    # backfill sequences
    def backfill_sequence(self, signal: SignalId, obs_week: int,
                          upto_week: int | Literal["final"] = "final") -> BackfillSequence:
        """Revisions of one value from its first issue through `upto_week`.

        Missing issue weeks and zeros reported after a nonzero value are
        replaced by the previous entry; after the last reported issue the
        last value repeats.
        """
        self._require_nonempty()
        iss = self.issues(signal, obs_week)
        if not iss:
            raise DataError(f"no records for {signal} at observation week {obs_week}")
        upto = self.final_week if upto_week == "final" else int(upto_week)
        first = next(iter(iss))
        if upto < first:
            raise DataError(f"{signal} obs={obs_week} has no issue on or before week {upto}")
        if upto > self.final_week:
            raise DataError(f"upto week {upto} beyond final week {self.final_week}")
        full = self._full(signal, obs_week)
        n = upto - first + 1
        if n < 7:
            log.debug("backfill sequence for %s obs=%d has length %d (< 7)", signal, obs_week, n)
        return BackfillSequence(signal, obs_week, first, full.values[:n].copy(), full.filled[:n].copy())

    def _full(self, signal: SignalId, obs_week: int) -> BackfillSequence:
        # fill rules only look backwards, so shorter windows are prefixes of this one
        key = (signal, obs_week)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        iss = self.issues(signal, obs_week)
        first = next(iter(iss))
        n = self.final_week - first + 1
        values = np.empty(n)
        filled = np.zeros(n, dtype=bool)
        prev = None
        for k, t in enumerate(range(first, self.final_week + 1)):
            v = iss.get(t)
            if v is None or (v == 0.0 and prev is not None and prev != 0.0):
                values[k] = prev
                filled[k] = True
            else:
                values[k] = v
                prev = v
        values.setflags(write=False)
        filled.setflags(write=False)
        seq = BackfillSequence(signal, obs_week, first, values, filled)
        self._cache[key] = seq
        return seq

    def value(self, signal: SignalId, obs_week: int, issue_week: int) -> float:
        """Filled value of `signal` at `obs_week` as known at `issue_week`."""
        iss = self.issues(signal, obs_week)
        if not iss or next(iter(iss)) > issue_week or issue_week > self.final_week:
            raise DataError(f"{signal} obs={obs_week} has no value issued by week {issue_week}")
        full = self._full(signal, obs_week)
        return float(full.values[issue_week - full.first_issue])

    # real-time view
    def real_time_sequence(self, t: int) -> dict[SignalId, np.ndarray]:
        """Each signal's series over weeks first_week..t as issued at week t.

        Entries with nothing issued by week t (reporting delay) take the
        most revised value of the latest earlier week that has one; weeks
        before a signal's first observation stay NaN.
        """
        self._require_nonempty()
        if not (self.first_week <= t <= self.final_week):
            raise DataError(f"week {t} outside [{self.first_week}, {self.final_week}]")
        out = {}
        weeks = range(self.first_week, t + 1)
        for s in self._table:
            series = np.full(len(weeks), np.nan)
            last = np.nan
            for k, w in enumerate(weeks):
                if self.has_value(s, w, t):
                    last = self.value(s, w, t)
                series[k] = last
            out[s] = series
        return out

    def real_time_value(self, signal: SignalId, t: int) -> float:
        """d_{i,t}^{(t)} with the delay substitution rule applied."""
        for w in range(t, self.first_week - 1, -1):
            if self.has_value(signal, w, t):
                return self.value(signal, w, t)
        raise DataError(f"no value of {signal} issued by week {t}")


def _rebuild(records, delays):
    return RevisionDataset(records, delays)


def _modal_delay(obs: Mapping[int, Mapping[int, float]]) -> int:
    lags = Counter(next(iter(iss)) - w for w, iss in obs.items() if iss)
    if not lags:
        return 0
    top = max(lags.values())
    return min(lag for lag, c in lags.items() if c == top)


def _int_field(row: dict, key: str, lineno: int) -> int:
    try:
        return int(row[key])
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: bad integer in {key!r}: {row.get(key)!r}") from None


def _float_field(row: dict, key: str, lineno: int) -> float:
    try:
        v = float(row[key])
    except (TypeError, ValueError):
        raise DataError(f"line {lineno}: bad number in {key!r}: {row.get(key)!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: non-finite value {row[key]!r}")
    return v


def _read_rows(path: str | Path, header: tuple[str, ...]):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != header:
            raise DataError(f"{path}: header {reader.fieldnames} does not match {list(header)}")
        for row in reader:
            if None in row or any(v is None for v in row.values()):
                raise DataError(f"line {reader.line_num}: wrong number of fields")
            yield reader.line_num, row


def load_vintages(path: str | Path, delay_overrides: Mapping[SignalId, int] | None = None) -> RevisionDataset:
    records = []
    seen = set()
    for lineno, row in _read_rows(path, VINTAGE_HEADER):
        try:
            signal = SignalId(row["region"].strip(), row["signal"].strip())
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        rec = VintageRecord(signal, _int_field(row, "observation_week", lineno),
                            _int_field(row, "issue_week", lineno), _float_field(row, "value", lineno))
        key = (signal, rec.obs_week, rec.issue_week)
        if key in seen:
            raise DataError(f"line {lineno}: duplicate record {signal} obs={rec.obs_week} issue={rec.issue_week}")
        if rec.issue_week < rec.obs_week:
            raise DataError(f"line {lineno}: issue_week {rec.issue_week} < observation_week {rec.obs_week}")
        seen.add(key)
        records.append(rec)
    return RevisionDataset(records, delay_overrides)


def vintage_rows(ds: RevisionDataset):
    for r in ds.records():
        yield (r.signal.feature, r.signal.region, r.obs_week, r.issue_week, r.value)


def scale_for_training(series: Mapping[str, np.ndarray] | Mapping[SignalId, np.ndarray]):
    """Standardise each series to mean 0 / population std 1.

    Constant series are only shifted to zero and get std 0.  Returns the
    scaled series and a name -> (mean, std) map for inverting.
    """
    if not series:
        raise DataError("nothing to scale")
    scaled, stats = {}, {}
    for name, values in series.items():
        x = np.asarray(values, dtype=np.float64)
        finite = x[np.isfinite(x)]
        mu = float(finite.mean()) if finite.size else 0.0
        sd = float(finite.std()) if finite.size else 0.0
        scaled[name] = (x - mu) / sd if sd > 0 else x - mu
        stats[name] = (mu, sd)
    return scaled, stats


def unscale(x, mean: float, std: float):
    return np.asarray(x) * std + mean if std > 0 else np.asarray(x) + mean
