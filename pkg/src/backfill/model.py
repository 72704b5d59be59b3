"""Revision-aware refinement of black-box forecasts.

Three parts share one parameter set:

* the sequence encoder ("bse.*"): a GRU over each signal's revisions whose
  hidden states are mixed across signals by a graph convolution every step,
  with a per-signal head predicting the next revision;
* the model encoder ("me.*"): a GRU over (prediction, real-time target,
  revised target) triples of past weeks;
* the refiner ("ref.*"): attention over the signal encodings keyed by the
  current prediction, then an FFN whose tanh output gamma scales the
  prediction to (gamma + 1) * y.

The encoder is pretrained on next-revision prediction, then everything is
fine-tuned end to end for one (model, region, horizon, week).
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dtw import SignalGraph, empty_graph
from .errors import DataError, NumericError
from .nn import (
    Adam,
    DTensor,
    ParamSet,
    declare_ffn,
    declare_gru,
    declare_node_ffn,
    ffn,
    gconv,
    gru_cell,
    mult_attention,
    no_grad,
    node_ffn,
    normalized_adjacency,
)
from .nn.tensor import add, concat, einsum, mul, reshape, stack, sub, tanh, tsum
from .predictions import PredictionHistory
from .store import RevisionDataset, SignalId

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    hidden: int = 50
    head_hidden: int = 50
    menc_hidden: int = 50
    refiner_hidden: tuple[int, int] = (60, 30)
    steps: int = 5
    pretrain_epochs: int = 2000
    teacher_epochs: int = 1000
    sampling_prob: float = 0.5
    finetune_epochs: int = 1000
    lr_pretrain: float = 1e-3
    lr_finetune: float = 5e-4
    use_gconv: bool = True
    shared_heads: bool = False
    # how training weeks are encoded: "realtime" autoregresses from the values
    # visible at that week (as inference does), "window" runs `steps` observed
    # revisions, "full" runs the whole Bseq revised up to t
    train_encoding: str = "realtime"
    seed: int = 0

    @classmethod
    def from_mapping(cls, d: Mapping) -> "ModelConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "refiner_hidden" in d:
            d["refiner_hidden"] = tuple(d["refiner_hidden"])
        return cls(**d)


def derived_seed(base: int, *tokens: str) -> int:
    """Base seed mixed with a stable hash of the job tokens."""
    return (int(base) ^ zlib.crc32("|".join(tokens).encode())) & 0x7FFFFFFF


# ----------------------------------------------------------------------------
# parameters


def declare_encoder(ps: ParamSet, n_signals: int, cfg: ModelConfig) -> None:
    m = cfg.hidden
    ps.zeros("bse.h0", (n_signals, m))
    declare_gru(ps, "bse.gru", 1, m)
    if cfg.use_gconv:
        ps.weight("bse.gconv", (m, m))
    if cfg.shared_heads:
        declare_ffn(ps, "bse.head", (m, cfg.head_hidden, 1))
    else:
        declare_node_ffn(ps, "bse.head", n_signals, (m, cfg.head_hidden, 1))


def declare_model_encoder(ps: ParamSet, cfg: ModelConfig) -> None:
    declare_gru(ps, "me.gru", 3, cfg.menc_hidden)


def declare_refiner(ps: ParamSet, cfg: ModelConfig) -> None:
    ps.weight("ref.attn", (cfg.hidden,), fan_in=cfg.hidden)
    h1, h2 = cfg.refiner_hidden
    declare_ffn(ps, "ref.ffn", (cfg.hidden + cfg.menc_hidden, h1, h2, 1))


def encoder_params(n_signals: int, cfg: ModelConfig, seed: int | None = None) -> ParamSet:
    ps = ParamSet(cfg.seed if seed is None else seed)
    declare_encoder(ps, n_signals, cfg)
    return ps


def full_params(n_signals: int, cfg: ModelConfig, seed: int) -> ParamSet:
    ps = ParamSet(seed)
    declare_encoder(ps, n_signals, cfg)
    declare_model_encoder(ps, cfg)
    declare_refiner(ps, cfg)
    return ps


def adjacency(graph: SignalGraph | None, n: int) -> np.ndarray:
    if graph is None:
        return np.eye(n)
    return normalized_adjacency(len(graph.vertices), graph.edges)


# ----------------------------------------------------------------------------
# data preparation


@dataclass
class SignalScaler:
    signals: list[SignalId]
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        sd = np.where(self.std > 0, self.std, 1.0)
        return (x - self.mean) / sd

    def invert(self, x: np.ndarray) -> np.ndarray:
        sd = np.where(self.std > 0, self.std, 1.0)
        return x * sd + self.mean

    def to_meta(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass
class BseqTensor:
    """Backfill sequences of all signals for a set of observation weeks,
    aligned on issue week: entry [b, r, i] is signal i's value for obs week
    obs_weeks[b] as issued at obs_weeks[b] + r."""

    obs_weeks: list[int]
    values: np.ndarray  # (B, L, N), scaled
    mask: np.ndarray  # (B, L, N) True where an issued value exists
    last: np.ndarray  # (B,) index of the last step (upto - obs week)


def fit_scaler(ds: RevisionDataset, t: int, signals: Sequence[SignalId]) -> SignalScaler:
    """Mean/std per signal over every value issued by week t."""
    from .store import scale_for_training

    series = {}
    for s in signals:
        vals = [ds.backfill_sequence(s, w, t).values for w in ds.obs_weeks(s) if w <= t and ds.has_value(s, w, t)]
        series[s] = np.concatenate(vals) if vals else np.zeros(1)
    _, stats = scale_for_training(series)
    return SignalScaler(list(signals), np.array([stats[s][0] for s in signals]), np.array([stats[s][1] for s in signals]))


def bseq_tensor(ds: RevisionDataset, signals: Sequence[SignalId], obs_weeks: Sequence[int], upto: int,
                scaler: SignalScaler) -> BseqTensor:
    n, b = len(signals), len(obs_weeks)
    if b == 0:
        raise DataError("no observation weeks to encode")
    lengths = np.array([upto - w + 1 for w in obs_weeks])
    if np.any(lengths < 1):
        raise DataError("observation week after the encoding week")
    L = int(lengths.max())
    raw = np.zeros((b, L, n))
    mask = np.zeros((b, L, n), dtype=bool)
    for bi, w in enumerate(obs_weeks):
        for i, s in enumerate(signals):
            if not ds.has_value(s, w, upto):
                # unreported: hold the latest real-time value of the signal
                try:
                    raw[bi, :, i] = ds.real_time_value(s, upto)
                except DataError:
                    raw[bi, :, i] = scaler.mean[i]
                continue
            seq = ds.backfill_sequence(s, w, upto)
            off = seq.first_issue - w
            raw[bi, :off, i] = seq.values[0]
            raw[bi, off : off + len(seq), i] = seq.values
            raw[bi, off + len(seq) :, i] = seq.values[-1]
            mask[bi, off : off + len(seq), i] = True
    values = scaler.apply(raw)
    return BseqTensor(list(obs_weeks), values, mask, lengths - 1)


# ----------------------------------------------------------------------------
# sequence encoder


def _initial_state(ps: ParamSet, batch: int | None) -> DTensor:
    h0 = ps["bse.h0"]
    if batch is None:
        return add(h0, DTensor(np.zeros(h0.shape)))
    return add(DTensor(np.zeros((batch,) + h0.shape)), h0)


def _heads(h: DTensor, ps: ParamSet, cfg: ModelConfig) -> DTensor:
    if cfg.shared_heads:
        out = ffn(h, ps, "bse.head", 2)
    else:
        out = node_ffn(h, ps, "bse.head", 2)
    return out[..., 0]


def encoder_step(inp: DTensor, h: DTensor, ps: ParamSet, a_hat: np.ndarray, cfg: ModelConfig):
    """One revision step for every signal: GRU, graph mixing, next-value head."""
    x = reshape(inp, inp.shape + (1,))
    v = gru_cell(x, h, ps, "bse.gru")
    h_new = gconv(a_hat, v, ps["bse.gconv"]) if cfg.use_gconv else v
    return h_new, _heads(h_new, ps, cfg)


def run_encoder(ps: ParamSet, a_hat: np.ndarray, data: BseqTensor, cfg: ModelConfig,
                n_steps: int | None = None, feedback: np.ndarray | None = None):
    """Unroll over aligned sequences. `feedback[b, r, i]` True replaces the
    step-r input with the step r-1 prediction (scheduled sampling)."""
    B, L, N = data.values.shape
    n_steps = L if n_steps is None else n_steps
    h = _initial_state(ps, B)
    states, preds = [], []
    prev = None
    for r in range(n_steps):
        inp = DTensor(data.values[:, r, :])
        if feedback is not None and prev is not None and r < L:
            fb = feedback[:, r, :].astype(np.float64)
            inp = add(mul(prev, fb), mul(inp, 1.0 - fb))
        h, prev = encoder_step(inp, h, ps, a_hat, cfg)
        states.append(h)
        preds.append(prev)
    return states, preds


def pretrain_loss(ps: ParamSet, a_hat: np.ndarray, data: BseqTensor, cfg: ModelConfig,
                  feedback: np.ndarray | None = None) -> DTensor:
    """Mean squared error of next-revision predictions over observed targets."""
    L = data.values.shape[1]
    _, preds = run_encoder(ps, a_hat, data, cfg, n_steps=L - 1, feedback=feedback)
    target = data.values[:, 1:, :]
    m = data.mask[:, 1:, :].astype(np.float64)
    count = max(m.sum(), 1.0)
    pred = stack(preds, axis=1)
    diff = sub(pred, target)
    return mul(tsum(mul(mul(diff, diff), m)), 1.0 / count)


@dataclass
class PretrainResult:
    params: dict[str, np.ndarray]
    losses: list[float]
    signals: list[SignalId]
    scaler: SignalScaler
    graph: SignalGraph
    t: int
    config: ModelConfig

    def meta(self) -> dict:
        return {
            "kind": "encoder",
            "t": self.t,
            "signals": [[s.region, s.feature] for s in self.signals],
            "scaler": self.scaler.to_meta(),
            "edges": [list(e) for e in self.graph.edges],
            "edge_weights": list(self.graph.weights),
            "tau": self.graph.tau,
            "config": asdict(self.config),
            "final_loss": self.losses[-1] if self.losses else None,
        }

    @classmethod
    def from_checkpoint(cls, params: dict[str, np.ndarray], meta: dict) -> "PretrainResult":
        if meta.get("kind") != "encoder":
            raise DataError("checkpoint does not hold a pretrained encoder")
        signals = [SignalId(r, f) for r, f in meta["signals"]]
        scaler = SignalScaler(signals, np.array(meta["scaler"]["mean"]), np.array(meta["scaler"]["std"]))
        graph = SignalGraph(tuple(signals), tuple(tuple(e) for e in meta["edges"]),
                            tuple(meta.get("edge_weights", [0.0] * len(meta["edges"]))), meta.get("tau", 0))
        return cls(params, [meta["final_loss"]] if meta.get("final_loss") is not None else [],
                   signals, scaler, graph, int(meta["t"]), ModelConfig.from_mapping(meta["config"]))


def pretrain_bseqenc(ds: RevisionDataset, t: int, graph: SignalGraph | None, cfg: ModelConfig) -> PretrainResult:
    """Train the sequence encoder to predict the next revision of every
    backfill sequence observed before week t (revised up to t).

    Epochs up to `teacher_epochs` feed ground truth; later epochs feed the
    previous prediction instead with probability `sampling_prob` per step.
    """
    signals = ds.signals
    if graph is not None and list(graph.vertices) != signals:
        raise DataError("graph vertices do not match dataset signals")
    graph = graph or empty_graph(signals)
    weeks = [w for w in range(ds.first_week, t) if any(ds.has_value(s, w, t) for s in signals)]
    if not weeks:
        raise DataError(f"no backfill sequences observed before week {t}")
    scaler = fit_scaler(ds, t, signals)
    data = bseq_tensor(ds, signals, weeks, t, scaler)
    if data.values.shape[1] < 2:
        raise DataError("backfill sequences too short to train on")
    a_hat = adjacency(graph, len(signals))
    ps = encoder_params(len(signals), cfg)
    opt = Adam(ps, lr=cfg.lr_pretrain)
    rng = np.random.default_rng([cfg.seed, 7])
    losses = []
    for epoch in range(1, cfg.pretrain_epochs + 1):
        feedback = None
        if epoch > cfg.teacher_epochs:
            feedback = rng.random(data.values.shape) < cfg.sampling_prob
        opt.zero_grad()
        loss = pretrain_loss(ps, a_hat, data, cfg, feedback)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    if not np.isfinite(losses[-1]):
        raise NumericError("pretraining diverged")
    log.info("pretrained encoder at week %d: loss %.3g -> %.3g", t, losses[0], losses[-1])
    return PretrainResult(ps.state(), losses, signals, scaler, graph, t, cfg)


def encode_realtime(ps: ParamSet, a_hat: np.ndarray, realtime: np.ndarray, steps: int, cfg: ModelConfig):
    """Autoregress `steps` times from the current real-time values (scaled,
    one per signal or (batch, n)). Returns final states and value predictions."""
    if steps < 1:
        raise ValueError("need at least one encoder step")
    x = np.asarray(realtime, dtype=np.float64)
    n = ps["bse.h0"].shape[0]
    if x.shape[-1] != n:
        raise DataError(f"{x.shape[-1]} real-time values for {n} encoder signals")
    h = _initial_state(ps, None if x.ndim == 1 else x.shape[0])
    inp: DTensor = DTensor(x)
    for _ in range(steps):
        h, inp = encoder_step(inp, h, ps, a_hat, cfg)
    return h, inp


# ----------------------------------------------------------------------------
# model encoder and refiner


def model_states(ps: ParamSet, triples: np.ndarray) -> DTensor:
    """GRU over (J, 3) triples; returns (J + 1, hidden) states, row 0 the zero start."""
    m = ps["me.gru.w_hid"].shape[0]
    h = DTensor(np.zeros(m))
    states = [h]
    for j in range(triples.shape[0]):
        h = gru_cell(DTensor(triples[j]), h, ps, "me.gru")
        states.append(h)
    return stack(states, axis=0)


def model_encode(ps: ParamSet, triples: np.ndarray) -> DTensor:
    if len(triples) == 0:
        raise DataError("no prediction history to encode")
    return model_states(ps, np.asarray(triples, dtype=np.float64))[-1]


def refine_gamma(ps: ParamSet, states: DTensor, z: DTensor, y: DTensor):
    """gamma = tanh(FFN([attention-pooled states, z])) with the scaled
    prediction y as query. Returns (gamma, alphas)."""
    alphas, pooled = mult_attention(y, states, ps["ref.attn"])
    out = ffn(concat([pooled, z], axis=-1), ps, "ref.ffn", 3)
    return tanh(out[..., 0]), alphas


@dataclass
class RefinementOutput:
    gamma: float
    y_raw: float
    y_star: float
    alphas: np.ndarray | None = None


def refine(states, z, y_current: float, ps: ParamSet, scale: float = 1.0) -> RefinementOutput:
    """Refine one prediction given signal encodings and a model encoding."""
    states = states if isinstance(states, DTensor) else DTensor(states)
    z = z if isinstance(z, DTensor) else DTensor(z)
    with no_grad():
        gamma, alphas = refine_gamma(ps, states, z, DTensor(y_current / scale))
    g = gamma.item()
    return RefinementOutput(g, float(y_current), (g + 1.0) * float(y_current), alphas.data)


# ----------------------------------------------------------------------------
# fine-tuning


@dataclass
class FinetuneBatch:
    """Everything one (model, region, k, week) job trains and predicts on."""

    t: int
    k: int
    region: str
    scale: float
    train_weeks: list[int]
    bseq: BseqTensor
    enc_index: np.ndarray  # (B,) step whose state encodes each training week
    week_realtime: np.ndarray  # (B, N) scaled signal values visible at each training week
    triples: np.ndarray  # (J, 3) model-encoder inputs, scaled
    z_index: np.ndarray  # (B,) row of model_states for each training week
    y: np.ndarray  # (B,) scaled predictions
    target: np.ndarray  # (B,) scaled week-t revisions of the targets
    rt_target: np.ndarray  # (B,) scaled real-time target at each forecast week
    now_realtime: np.ndarray  # (N,) scaled signal values at week t
    now_y: float | None  # unscaled current prediction
    now_rt_target: float


def target_signal(ds: RevisionDataset, region: str, target: str) -> SignalId:
    sig = SignalId(region, target)
    if sig not in ds:
        raise DataError(f"target signal {sig} not in dataset")
    return sig


def build_batch(ds: RevisionDataset, pre: PretrainResult, history: PredictionHistory, t: int,
                target: str, cfg: ModelConfig) -> FinetuneBatch:
    k = history.k
    if t <= k + 1:
        raise DataError(f"week {t} leaves no training history for horizon {k}")
    sig = target_signal(ds, history.region, target)
    hist = []
    for w in history.weeks():
        if w + k > t - 1:
            continue
        if not (ds.has_value(sig, w + k, w + k) and ds.has_value(sig, w + k, t)):
            continue
        hist.append((w, history[w], ds.value(sig, w + k, w + k), ds.value(sig, w + k, t)))
    if len(hist) < 2:
        raise DataError(f"fewer than 2 training weeks for {history.model}/{history.region} k={k} at week {t}")
    revised = np.array([h[3] for h in hist])
    scale = float(np.mean(np.abs(revised))) or 1.0
    triples = np.array([[h[1], h[2], h[3]] for h in hist]) / scale
    hist_weeks = np.array([h[0] for h in hist])
    train = [h for h in hist if any(ds.has_value(s, h[0], t) for s in pre.signals)]
    if len(train) < 2:
        raise DataError("fewer than 2 training weeks with backfill sequences")
    weeks = [h[0] for h in train]
    data = bseq_tensor(ds, pre.signals, weeks, t, pre.scaler)
    if cfg.train_encoding == "window":
        enc_index = np.minimum(data.last, cfg.steps - 1)
    else:
        enc_index = data.last.copy()
    # state after the history visible `k + 1` weeks before the training week
    z_index = np.array([int(np.sum(hist_weeks <= w - k - 1)) for w in weeks])
    rt = []
    for w in weeks:
        try:
            rt.append(ds.real_time_value(sig, w))
        except DataError:
            rt.append(np.nan)
    rt = np.array(rt)
    rt = np.where(np.isfinite(rt), rt, np.nanmean(rt) if np.isfinite(rt).any() else scale)
    now_rt = ds.real_time_value(sig, t)
    now_vals = np.array([_realtime_or_mean(ds, s, t, pre.scaler.mean[i]) for i, s in enumerate(pre.signals)])
    week_vals = np.array([[_realtime_or_mean(ds, s, w, pre.scaler.mean[i]) for i, s in enumerate(pre.signals)]
                          for w in weeks])
    return FinetuneBatch(
        t=t, k=k, region=history.region, scale=scale, train_weeks=weeks, bseq=data, enc_index=enc_index,
        week_realtime=pre.scaler.apply(week_vals),
        triples=triples, z_index=z_index,
        y=np.array([h[1] for h in train]) / scale,
        target=np.array([h[3] for h in train]) / scale,
        rt_target=rt / scale,
        now_realtime=pre.scaler.apply(now_vals),
        now_y=history.values.get(t),
        now_rt_target=now_rt,
    )


def _realtime_or_mean(ds: RevisionDataset, s: SignalId, t: int, fallback: float) -> float:
    try:
        return ds.real_time_value(s, t)
    except DataError:
        return fallback


def select_steps(states: list[DTensor], index: np.ndarray) -> DTensor:
    """Pick states[index[b]][b] for every batch row."""
    L = len(states)
    onehot = np.zeros((len(index), L))
    onehot[np.arange(len(index)), index] = 1.0
    stacked = stack(states[: int(index.max()) + 1], axis=0)
    return einsum("lbnm,bl->bnm", stacked, DTensor(onehot[:, : stacked.shape[0]]))


def select_rows(states: DTensor, index: np.ndarray) -> DTensor:
    onehot = np.zeros((len(index), states.shape[0]))
    onehot[np.arange(len(index)), index] = 1.0
    return einsum("jm,bj->bm", states, DTensor(onehot))


def training_encodings(ps: ParamSet, a_hat: np.ndarray, batch: FinetuneBatch, cfg: ModelConfig) -> DTensor:
    if cfg.train_encoding == "realtime":
        h, _ = encode_realtime(ps, a_hat, batch.week_realtime, cfg.steps, cfg)
        return h
    n_steps = int(batch.enc_index.max()) + 1
    states, _ = run_encoder(ps, a_hat, batch.bseq, cfg, n_steps=n_steps)
    return select_steps(states, batch.enc_index)


def b2f_forward(ps: ParamSet, a_hat: np.ndarray, batch: FinetuneBatch, cfg: ModelConfig):
    """Scaled refined predictions (gamma + 1) * y for every training week."""
    H = training_encodings(ps, a_hat, batch, cfg)
    Z = select_rows(model_states(ps, batch.triples), batch.z_index)
    y = DTensor(batch.y)
    gamma, _ = refine_gamma(ps, H, Z, y)
    return mul(add(gamma, 1.0), y), gamma


def b2f_loss(ps: ParamSet, a_hat: np.ndarray, batch: FinetuneBatch, cfg: ModelConfig) -> DTensor:
    pred, _ = b2f_forward(ps, a_hat, batch, cfg)
    diff = sub(pred, batch.target)
    return tsum(mul(diff, diff))


def train_loop(ps: ParamSet, loss_fn, epochs: int, lr: float, require_decrease: bool = True) -> list[float]:
    opt = Adam(ps, lr=lr)
    losses = []
    for _ in range(epochs):
        opt.zero_grad()
        loss = loss_fn()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    with no_grad():
        losses.append(loss_fn().item())
    if not np.isfinite(losses[-1]):
        raise NumericError("training diverged")
    if require_decrease and epochs > 0 and not losses[-1] < losses[0]:
        raise NumericError(f"training loss did not decrease ({losses[0]:.4g} -> {losses[-1]:.4g})")
    return losses


@dataclass
class B2FModel:
    """A fine-tuned refiner for one (model, region, horizon, week)."""

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
        ps = full_params(len(self.graph.vertices), self.config, self.seed)
        ps.load(self.params)
        return ps

    def predict(self, y_current: float | None = None) -> RefinementOutput:
        """Refine the week-t prediction (defaults to the one in the history)."""
        y = self.batch.now_y if y_current is None else y_current
        if y is None:
            raise DataError(f"no week-{self.t} prediction for {self.model}/{self.region} k={self.k}")
        ps = self.paramset()
        a_hat = adjacency(self.graph, len(self.graph.vertices))
        with no_grad():
            h, _ = encode_realtime(ps, a_hat, self.batch.now_realtime, self.config.steps, self.config)
            z = model_states(ps, self.batch.triples)[-1]
        return refine(h, z, float(y), ps, scale=self.batch.scale)

    def training_gammas(self) -> np.ndarray:
        ps = self.paramset()
        with no_grad():
            _, gamma = b2f_forward(ps, adjacency(self.graph, len(self.graph.vertices)), self.batch, self.config)
        return gamma.data.copy()


def finetune(pre: PretrainResult, history: PredictionHistory, ds: RevisionDataset, t: int,
             cfg: ModelConfig | None = None, target: str = "deaths", seed: int | None = None,
             require_decrease: bool = True) -> B2FModel:
    """End-to-end training of all parts on weeks 1..t-k-1 of one model's history.

    The loss is sum((gamma_w + 1) * y_w - revised target_w)^2 in units of
    the mean absolute revised target.
    """
    cfg = cfg or pre.config
    seed = derived_seed(cfg.seed, history.model, history.region, str(history.k)) if seed is None else seed
    batch = build_batch(ds, pre, history, t, target, cfg)
    ps = full_params(len(pre.signals), cfg, seed)
    ps.load(pre.params, strict=False)
    a_hat = adjacency(pre.graph, len(pre.signals))
    losses = train_loop(ps, lambda: b2f_loss(ps, a_hat, batch, cfg), cfg.finetune_epochs, cfg.lr_finetune,
                        require_decrease)
    return B2FModel(history.model, history.region, history.k, t, ps.state(), losses, batch, cfg, pre.graph, seed)


# ----------------------------------------------------------------------------
# rectification


def eval_history(ds: RevisionDataset, region: str, target: str, upto: int) -> PredictionHistory:
    """The identity forecaster: its week-w 'prediction' is the target as first issued."""
    sig = target_signal(ds, region, target)
    vals = {}
    for w in range(ds.first_week, upto + 1):
        try:
            vals[w] = ds.real_time_value(sig, w)
        except DataError:
            continue
    return PredictionHistory("M_eval", region, 0, vals)


@dataclass
class RectifiedTarget:
    region: str
    t: int
    y_realtime: float
    gamma: float
    y_rectified: float


@dataclass
class RectifyResult:
    targets: dict[str, RectifiedTarget]
    rows: list[tuple] = field(default_factory=list)  # model, region, k, pred, y_rt, y_hat, err_rt, err_hat
    scores: list[tuple] = field(default_factory=list)  # model, k, mae_realtime, mae_rectified, n


def rectify(ds: RevisionDataset, pre: PretrainResult, t: int, regions: Sequence[str] | None = None,
            hub: Sequence[PredictionHistory] = (), target: str = "deaths", cfg: ModelConfig | None = None,
            jobs: int = 1) -> RectifyResult:
    """Estimate the eventual week-t target per region and re-score forecasts of it."""
    from .parallel import run_jobs

    cfg = cfg or pre.config
    regions = list(regions) if regions is not None else ds.regions
    histories = [eval_history(ds, r, target, t) for r in regions]
    models = run_jobs(pre, histories, ds, t, cfg, target, jobs)
    targets = {}
    for h, bm in zip(histories, models):
        out = bm.predict(h[t])
        targets[h.region] = RectifiedTarget(h.region, t, out.y_raw, out.gamma, out.y_star)
    res = RectifyResult(targets)
    per_model: dict[tuple[str, int], list[tuple[float, float]]] = {}
    for h in sorted(hub, key=lambda h: h.key):
        made = t - h.k
        if h.region not in targets or made not in h:
            continue
        rt = targets[h.region]
        pred = h[made]
        e_rt, e_hat = abs(pred - rt.y_realtime), abs(pred - rt.y_rectified)
        res.rows.append((h.model, h.region, h.k, pred, rt.y_realtime, rt.y_rectified, e_rt, e_hat))
        per_model.setdefault((h.model, h.k), []).append((e_rt, e_hat))
    for (model, k), errs in sorted(per_model.items()):
        e = np.array(errs)
        res.scores.append((model, k, float(e[:, 0].mean()), float(e[:, 1].mean()), len(errs)))
    return res


def with_epochs(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
