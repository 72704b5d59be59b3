"""Black-box forecaster predictions and their CSV format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError
from .store import PREDICTION_HEADER, _float_field, _int_field, _read_rows


@dataclass
class PredictionHistory:
    """Forecasts y(M,k)_t of one model for one region and horizon, keyed by forecast week."""

    model: str
    region: str
    k: int
    values: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for w, v in self.values.items():
            if not math.isfinite(v):
                raise DataError(f"non-finite prediction {self.model}/{self.region} k={self.k} week {w}")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.model, self.region, self.k)

    def weeks(self) -> list[int]:
        return sorted(self.values)

    def __getitem__(self, week: int) -> float:
        try:
            return self.values[week]
        except KeyError:
            raise DataError(f"no prediction from {self.model}/{self.region} k={self.k} made at week {week}") from None

    def __contains__(self, week: int) -> bool:
        return week in self.values


def load_predictions(path: str | Path) -> list[PredictionHistory]:
    groups: dict[tuple[str, str, int], PredictionHistory] = {}
    for lineno, row in _read_rows(path, PREDICTION_HEADER):
        model, region = row["model"].strip(), row["region"].strip()
        if not model or not region:
            raise DataError(f"line {lineno}: empty model or region")
        k = _int_field(row, "horizon_k", lineno)
        week = _int_field(row, "forecast_made_week", lineno)
        value = _float_field(row, "value", lineno)
        h = groups.setdefault((model, region, k), PredictionHistory(model, region, k))
        if week in h.values:
            raise DataError(f"line {lineno}: duplicate prediction {model}/{region} k={k} week {week}")
        h.values[week] = value
    return [groups[key] for key in sorted(groups)]


def prediction_rows(histories: Iterable[PredictionHistory]):
    for h in sorted(histories, key=lambda h: h.key):
        for w in h.weeks():
            yield (h.model, h.region, w, h.k, h.values[w])
