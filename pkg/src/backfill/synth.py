"""Seeded synthetic vintages with the five canonical revision shapes, plus
black-box predictions with a known multiplicative bias."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .predictions import PredictionHistory
from .store import RevisionDataset, SignalId, VintageRecord

BEHAVIORS = ("early-decline", "early-increase", "steady-spike", "late-increase", "mid-decrease")

# initial value = stable / multiplier
DEFAULT_MULTIPLIER = {
    "early-decline": 0.8,
    "early-increase": 1.25,
    "steady-spike": 1.0,
    "late-increase": 1.5,
    "mid-decrease": 0.7,
}
# revision week at which the sequence reaches its stable value
DEFAULT_STABILIZE = {
    "early-decline": 1,
    "early-increase": 3,
    "steady-spike": 0,
    "late-increase": 9,
    "mid-decrease": 10,
}


@dataclass
class SynthConfig:
    regions: list[str] = field(default_factory=lambda: ["R0", "R1", "R2"])
    features: list[str] = field(default_factory=lambda: ["deaths", "cases", "mobility"])
    weeks: int = 40
    seed: int = 0
    behaviors: dict[str, str] = field(default_factory=dict)  # "region:feature" or "feature" -> behavior
    multipliers: dict[str, float] = field(default_factory=dict)  # behavior -> multiplier override
    stabilize: dict[str, int] = field(default_factory=dict)  # behavior -> stabilization week override
    noise: float = 0.0
    spike_week: int = 2
    delays: dict[str, int] = field(default_factory=dict)  # "region:feature" or "feature" -> delay
    level_range: tuple[float, float] = (50.0, 500.0)
    wave_amplitude: float = 0.4
    wave_period: float = 26.0

    def behavior_of(self, s: SignalId) -> str:
        key = f"{s.region}:{s.feature}"
        if key in self.behaviors:
            return self.behaviors[key]
        if s.feature in self.behaviors:
            return self.behaviors[s.feature]
        idx = (self.regions.index(s.region) + self.features.index(s.feature)) % len(BEHAVIORS)
        return BEHAVIORS[idx]

    def delay_of(self, s: SignalId) -> int:
        return int(self.delays.get(f"{s.region}:{s.feature}", self.delays.get(s.feature, 0)))

    def multiplier(self, behavior: str) -> float:
        return float(self.multipliers.get(behavior, DEFAULT_MULTIPLIER[behavior]))

    def stabilization(self, behavior: str) -> int:
        return int(self.stabilize.get(behavior, DEFAULT_STABILIZE[behavior]))

    def validate(self) -> None:
        if self.weeks < 2:
            raise ConfigError("weeks must be >= 2")
        if self.noise < 0:
            raise ConfigError("noise scale must be >= 0")
        if not self.regions or not self.features:
            raise ConfigError("need at least one region and one feature")
        for s in self.signals():
            b = self.behavior_of(s)
            if b not in BEHAVIORS:
                raise ConfigError(f"unknown behavior {b!r} for {s}")
            if self.multiplier(b) <= 0:
                raise ConfigError(f"multiplier for {b} must be positive")
            if self.stabilization(b) > self.weeks:
                raise ConfigError(f"stabilization week for {b} exceeds sequence length")
            if self.delay_of(s) < 0:
                raise ConfigError(f"negative delay for {s}")

    def signals(self) -> list[SignalId]:
        return [SignalId(r, f) for r in self.regions for f in self.features]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_mapping(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        if "level_range" in d:
            d["level_range"] = tuple(d["level_range"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**d)


def template(behavior: str, n: int, multiplier: float, stabilize: int, spike_week: int = 2) -> np.ndarray:
    """Revision path relative to the stable value (1.0) over revision weeks 0..n-1."""
    r = np.arange(n, dtype=np.float64)
    start = 1.0 / multiplier
    out = np.ones(n)
    if behavior == "early-decline":
        out[r < max(stabilize, 1)] = start
    elif behavior == "early-increase":
        s = max(stabilize, 1)
        out = np.where(r < s, start + (1.0 - start) * r / s, 1.0)
    elif behavior == "steady-spike":
        if 0 < spike_week < n - 1:
            out[spike_week] = 0.0
    elif behavior == "late-increase":
        # flat until the jump at the stabilization week
        out[r < stabilize] = start
    elif behavior == "mid-decrease":
        # plateau, then a linear shift over the two weeks before stabilization
        lo = max(stabilize - 2, 1)
        ramp = start + (1.0 - start) * (r - (lo - 1)) / (stabilize - lo + 1)
        out = np.where(r < lo, start, np.where(r < stabilize, ramp, 1.0))
    else:
        raise ConfigError(f"unknown behavior {behavior!r}")
    return out


def signal_levels(cfg: SynthConfig) -> dict[SignalId, np.ndarray]:
    """Stable value per observation week 1..weeks for every signal."""
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.level_range
    w = np.arange(1, cfg.weeks + 1, dtype=np.float64)
    out = {}
    for s in cfg.signals():
        base = rng.uniform(lo, hi)
        phase = rng.uniform(0, 2 * np.pi)
        out[s] = base * (1.0 + cfg.wave_amplitude * np.sin(2 * np.pi * w / cfg.wave_period + phase))
    return out


def gen_vintages(cfg: SynthConfig) -> RevisionDataset:
    """Vintage records for obs weeks 1..weeks, issued through week `weeks`.

    Each (signal, obs week) follows its behavior template scaled to the
    signal's level; noise multiplies every revision before the
    stabilization week (never the stable tail), then is drawn from a
    generator seeded by `cfg.seed`.
    """
    cfg.validate()
    levels = signal_levels(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    t_f = cfg.weeks
    records = []
    for s in cfg.signals():
        b = cfg.behavior_of(s)
        mult, stab = cfg.multiplier(b), cfg.stabilization(b)
        delay = cfg.delay_of(s)
        for k, w in enumerate(range(1, cfg.weeks + 1)):
            first = w + delay
            if first > t_f:
                continue
            n = t_f - w + 1
            path = template(b, n, mult, stab, cfg.spike_week) * levels[s][k]
            if cfg.noise > 0:
                noisy = np.arange(n) < stab
                path = np.where(noisy & (path != 0), path * (1.0 + cfg.noise * rng.standard_normal(n)), path)
            for r in range(delay, n):
                records.append(VintageRecord(s, w, w + r, float(path[r])))
    return RevisionDataset(records)


def gen_predictions(ds: RevisionDataset, target: str = "deaths", beta: float | Mapping[str, float] = 0.0,
                    noise: float = 0.0, seed: int = 0, horizons=(1,), model: str = "M") -> list[PredictionHistory]:
    """Predictions y(M,k)_t = stable target at t+k / (1 + beta) + noise.

    `beta` may be a per-region mapping.  `noise` is a fraction of the
    region's mean stable target.
    """
    rng = np.random.default_rng([seed, 2])
    out = []
    for region in ds.regions:
        sig = SignalId(region, target)
        if sig not in ds:
            continue
        b = beta[region] if isinstance(beta, Mapping) else beta
        if b <= -1:
            raise ConfigError("beta must exceed -1")
        weeks = ds.obs_weeks(sig)
        stable = {w: ds.backfill_sequence(sig, w).stable for w in weeks}
        scale = float(np.mean(list(stable.values())))
        for k in horizons:
            made = [w for w in range(ds.first_week, ds.final_week + 1) if w + k in stable]
            vals = np.array([stable[w + k] / (1.0 + b) for w in made])
            if noise > 0:
                vals = vals + noise * scale * rng.standard_normal(len(vals))
            out.append(PredictionHistory(model, region, int(k), dict(zip(made, vals.tolist()))))
    return out
