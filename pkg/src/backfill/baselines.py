"""Comparison refiners and the improvement-table evaluation harness.

Every baseline regresses the week-t revision of the target directly, in the
same scaled units and with the same training loop, epochs, learning rate
and derived seeds as the full model:

* FFNReg   - FFN on (prediction, real-time target)
* ModelReg - model encoder, then a linear head on (z, prediction)
* BseqReg  - sequence encoder (with graph convolution), signal-mean pooled,
             then a linear head on (pooled encoding, prediction)
* BseqReg2 - BseqReg over an encoder pretrained without graph convolution
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .analytics import score
from .dtw import SignalGraph, graph_gen
from .errors import DataError
from .model import (
    FinetuneBatch,
    ModelConfig,
    PretrainResult,
    adjacency,
    build_batch,
    declare_encoder,
    declare_model_encoder,
    derived_seed,
    encode_realtime,
    finetune,
    model_states,
    pretrain_bseqenc,
    select_rows,
    target_signal,
    train_loop,
    training_encodings,
)
from .nn import DTensor, ParamSet, declare_ffn, ffn, no_grad
from .nn.tensor import concat, mean, mul, reshape, sub, tsum
from .parallel import map_jobs
from .predictions import PredictionHistory
from .store import RevisionDataset

log = logging.getLogger(__name__)

BaselineKind = Literal["FFNReg", "ModelReg", "BseqReg", "BseqReg2"]
BASELINES: tuple[str, ...] = ("FFNReg", "ModelReg", "BseqReg", "BseqReg2")
METHODS: tuple[str, ...] = ("B2F",) + BASELINES


def _check_kind(kind: str) -> None:
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {', '.join(BASELINES)}")


def baseline_params(kind: str, n_signals: int, cfg: ModelConfig, seed: int) -> ParamSet:
    _check_kind(kind)
    ps = ParamSet(seed)
    if kind == "FFNReg":
        h1, h2 = cfg.refiner_hidden
        declare_ffn(ps, "base.ffn", (2, h1, h2, 1))
    elif kind == "ModelReg":
        declare_model_encoder(ps, cfg)
        declare_ffn(ps, "base.head", (cfg.menc_hidden + 1, 1))
    else:
        declare_encoder(ps, n_signals, cfg)
        declare_ffn(ps, "base.head", (cfg.hidden + 1, 1))
    return ps


def _column(x) -> DTensor:
    x = x if isinstance(x, DTensor) else DTensor(x)
    return reshape(x, x.shape + (1,))


def baseline_forward(kind: str, ps: ParamSet, a_hat: np.ndarray, batch: FinetuneBatch, cfg: ModelConfig) -> DTensor:
    """Scaled target estimates for every training week."""
    y = _column(batch.y)
    if kind == "FFNReg":
        x = concat([y, _column(batch.rt_target)], axis=-1)
        return ffn(x, ps, "base.ffn", 3)[..., 0]
    if kind == "ModelReg":
        z = select_rows(model_states(ps, batch.triples), batch.z_index)
        return ffn(concat([z, y], axis=-1), ps, "base.head", 1)[..., 0]
    pooled = mean(training_encodings(ps, a_hat, batch, cfg), axis=1)
    return ffn(concat([pooled, y], axis=-1), ps, "base.head", 1)[..., 0]


def baseline_loss(kind: str, ps: ParamSet, a_hat: np.ndarray, batch: FinetuneBatch, cfg: ModelConfig) -> DTensor:
    diff = sub(baseline_forward(kind, ps, a_hat, batch, cfg), batch.target)
    return tsum(mul(diff, diff))


@dataclass
class BaselineRefiner:
    kind: str
    model: str
    region: str
    k: int
    t: int
    params: dict[str, np.ndarray]
    losses: list[float]
    batch: FinetuneBatch
    config: ModelConfig
    graph: SignalGraph
    seed: int

    def paramset(self) -> ParamSet:
        ps = baseline_params(self.kind, len(self.graph.vertices), self.config, self.seed)
        ps.load(self.params)
        return ps

    def predict(self, y_current: float | None = None) -> float:
        """Refined value of the week-t prediction, in original units."""
        y = self.batch.now_y if y_current is None else y_current
        if y is None:
            raise DataError(f"no week-{self.t} prediction for {self.model}/{self.region} k={self.k}")
        b, cfg = self.batch, self.config
        ps = self.paramset()
        ys = DTensor([[float(y) / b.scale]])
        with no_grad():
            if self.kind == "FFNReg":
                x = concat([ys, DTensor([[b.now_rt_target / b.scale]])], axis=-1)
                out = ffn(x, ps, "base.ffn", 3)
            elif self.kind == "ModelReg":
                z = reshape(model_states(ps, b.triples)[-1], (1, cfg.menc_hidden))
                out = ffn(concat([z, ys], axis=-1), ps, "base.head", 1)
            else:
                a_hat = adjacency(self.graph, len(self.graph.vertices))
                h, _ = encode_realtime(ps, a_hat, b.now_realtime, cfg.steps, cfg)
                pooled = reshape(mean(h, axis=0), (1, cfg.hidden))
                out = ffn(concat([pooled, ys], axis=-1), ps, "base.head", 1)
        return float(out.data.reshape(-1)[0]) * b.scale


def train_baseline(kind: str, pre: PretrainResult, history: PredictionHistory, ds: RevisionDataset, t: int,
                   cfg: ModelConfig | None = None, target: str = "deaths", seed: int | None = None,
                   require_decrease: bool = True) -> BaselineRefiner:
    """Fit one baseline for one (model, region, horizon, week).

    `pre` supplies the scaler and, for the sequence baselines, the starting
    encoder; BseqReg2 needs an encoder pretrained with use_gconv=False.
    """
    _check_kind(kind)
    cfg = cfg or pre.config
    if kind == "BseqReg2":
        if pre.config.use_gconv:
            raise ValueError("BseqReg2 needs an encoder pretrained without graph convolution")
        cfg = replace(cfg, use_gconv=False)
    elif kind == "BseqReg" and not pre.config.use_gconv:
        raise ValueError("BseqReg needs an encoder pretrained with graph convolution")
    seed = derived_seed(cfg.seed, history.model, history.region, str(history.k)) if seed is None else seed
    batch = build_batch(ds, pre, history, t, target, cfg)
    ps = baseline_params(kind, len(pre.signals), cfg, seed)
    if kind in ("BseqReg", "BseqReg2"):
        ps.load(pre.params, strict=False)
    a_hat = adjacency(pre.graph, len(pre.signals))
    losses = train_loop(ps, lambda: baseline_loss(kind, ps, a_hat, batch, cfg), cfg.finetune_epochs,
                        cfg.lr_finetune, require_decrease)
    return BaselineRefiner(kind, history.model, history.region, history.k, t, ps.state(), losses, batch, cfg,
                           pre.graph, seed)


# ----------------------------------------------------------------------------
# improvement tables


def improvement(refined: Sequence[float], raw: Sequence[float], truths: Sequence[float],
                metric: str = "mae") -> float:
    """Percent reduction of the score: 100 * (raw - refined) / raw."""
    s_raw = score(raw, truths, metric)
    if s_raw == 0:
        raise DataError(f"raw {metric.upper()} is zero; improvement undefined")
    return 100.0 * (s_raw - score(refined, truths, metric)) / s_raw


@dataclass
class EvalRecord:
    """One refined forecast of a stable target."""

    method: str
    model: str
    region: str
    k: int
    t: int
    seed: int
    y_raw: float
    y_refined: float
    truth: float


@dataclass
class ImprovementTable:
    rows: list[tuple] = field(default_factory=list)  # method, model, k, metric, mean, std, n_seeds

    HEADER = ("method", "model", "horizon_k", "metric", "improvement_mean", "improvement_std", "n_seeds")

    def get(self, method: str, model: str, k: int, metric: str = "mae") -> tuple[float, float]:
        for r in self.rows:
            if r[:4] == (method, model, k, metric):
                return r[4], r[5]
        raise KeyError((method, model, k, metric))


def improvement_table(records: Sequence[EvalRecord], metrics: Sequence[str] = ("mae", "mape")) -> ImprovementTable:
    """Per (method, model, k, metric): improvement over all regions and weeks
    of one seed, then mean and population std across seeds."""
    groups: dict[tuple, dict[int, list[EvalRecord]]] = {}
    for r in records:
        groups.setdefault((r.method, r.model, r.k), {}).setdefault(r.seed, []).append(r)
    order = {m: i for i, m in enumerate(METHODS)}
    table = ImprovementTable()
    for key in sorted(groups, key=lambda g: (order.get(g[0], len(order)), g[0], g[1], g[2])):
        for metric in metrics:
            per_seed = []
            for seed in sorted(groups[key]):
                rs = groups[key][seed]
                per_seed.append(improvement([r.y_refined for r in rs], [r.y_raw for r in rs],
                                            [r.truth for r in rs], metric))
            v = np.array(per_seed)
            table.rows.append(key + (metric, float(v.mean()), float(v.std()), len(v)))
    return table


# ----------------------------------------------------------------------------
# evaluation pipeline


@dataclass
class _Job:
    method: str
    history: PredictionHistory


def _eval_job(job: _Job, pre, pre_plain, ds, t, cfg, target) -> float:
    h = job.history
    if job.method == "B2F":
        return finetune(pre, h, ds, t, cfg, target=target).predict().y_star
    base = pre_plain if job.method == "BseqReg2" else pre
    return train_baseline(job.method, base, h, ds, t, cfg, target=target).predict()


def evaluate(ds: RevisionDataset, hub: Sequence[PredictionHistory], weeks: Sequence[int], tau: int,
             cfg: ModelConfig, seeds: Sequence[int] = (0,), methods: Sequence[str] = METHODS,
             target: str = "deaths", jobs: int = 1) -> list[EvalRecord]:
    """Refine every hub forecast made at each week in `weeks` with every
    method, once per seed, and pair it with the stable target it forecasts.

    Each (week, seed) pretrains its own encoders (with and without graph
    convolution when BseqReg2 is requested).
    """
    for m in methods:
        if m != "B2F":
            _check_kind(m)
    records = []
    for t in weeks:
        graph = graph_gen(ds, t, tau)
        todo = [h for h in hub if t in h and h.k >= 1]
        truths = {}
        for h in todo:
            sig = target_signal(ds, h.region, target)
            if t + h.k in ds.obs_weeks(sig):
                truths[h.key] = ds.backfill_sequence(sig, t + h.k).stable
        todo = [h for h in todo if h.key in truths]
        if not todo:
            log.warning("no forecasts made at week %d with known stable targets", t)
            continue
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed))
            pre = pretrain_bseqenc(ds, t, graph, run_cfg)
            pre_plain = None
            if "BseqReg2" in methods:
                pre_plain = pretrain_bseqenc(ds, t, graph, replace(run_cfg, use_gconv=False))
            work = [_Job(m, h) for h in todo for m in methods]
            outs = map_jobs(_eval_job, work, jobs, pre=pre, pre_plain=pre_plain, ds=ds, t=t, cfg=run_cfg,
                            target=target)
            for job, y_ref in zip(work, outs):
                h = job.history
                records.append(EvalRecord(job.method, h.model, h.region, h.k, t, int(seed), h[t], y_ref,
                                          truths[h.key]))
    if not records:
        raise DataError("nothing to evaluate: no forecasts with stable targets at the requested weeks")
    return records


EVAL_RECORD_HEADER = ("method", "model", "region", "horizon_k", "week", "seed", "y_raw", "y_refined", "truth")


def record_rows(records: Sequence[EvalRecord]):
    for r in records:
        yield (r.method, r.model, r.region, r.k, r.t, r.seed, r.y_raw, r.y_refined, r.truth)
