"""JSON parameter checkpoints: name -> shape + row-major values."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import DataError
from ..io import atomic_write_text

FORMAT = "backfill-params"
VERSION = 1


def dumps(state: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in state.items()
        },
    }
    return json.dumps(doc, sort_keys=False)


def loads(text: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise DataError(f"not a parameter checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
    state = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["values"], dtype=np.float64)
        state[name] = arr.reshape(entry["shape"])
    return state, doc.get("meta", {})


def save(path: str | Path, state: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    atomic_write_text(path, dumps(state, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing checkpoint: {path}")
    return loads(path.read_text())
