"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand writes its outputs atomically plus a ``manifest.json``
(config echo, config hash, seed, library versions, input digests). No
timestamps are recorded, so identical inputs give identical files.
Failures print a JSON object on stderr and exit 2 (config), 3 (data) or
4 (numerics).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .analytics import aggregate, berr, pearson, score
from .baselines import (
    BASELINES,
    EVAL_RECORD_HEADER,
    METHODS,
    ImprovementTable,
    evaluate,
    improvement_table,
    record_rows,
)
from .dtw import cluster_bseqs, empty_graph, graph_gen
from .errors import BackfillError, ConfigError, DataError
from .io import atomic_write_text, write_csv
from .model import ModelConfig, PretrainResult, pretrain_bseqenc, rectify
from .nn import checkpoint
from .parallel import run_jobs
from .predictions import load_predictions, prediction_rows
from .store import PREDICTION_HEADER, VINTAGE_HEADER, RevisionDataset, SignalId, load_vintages, vintage_rows
from .synth import SynthConfig, gen_predictions, gen_vintages

log = logging.getLogger("backfill")

REFINED_HEADER = ("model", "region", "week", "horizon_k", "y_raw", "gamma", "y_star")
EDGE_HEADER = ("region_a", "feature_a", "region_b", "feature_b", "weight")
STATS_HEADER = ("group", "metric", "value", "n", "skipped")


@dataclass
class RunConfig:
    seed: int = 0
    t: int | None = None
    horizons: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    target: str = "deaths"
    epsilon: float = 0.05
    tau_c: int = 3
    tau: int | None = None  # explicit edge count; overrides tau_c * |signals|
    steps: int = 5
    hidden: int = 50
    pretrain_epochs: int = 2000
    teacher_epochs: int = 1000
    finetune_epochs: int = 1000
    lr_pretrain: float = 1e-3
    lr_finetune: float = 5e-4
    sampling_prob: float = 0.5
    train_encoding: str = "realtime"
    shared_heads: bool = False
    clusters: int = 5
    cluster_window: int = 10
    eval_weeks: list[int] = field(default_factory=list)
    eval_seeds: list[int] = field(default_factory=lambda: [0])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    synth: dict = field(default_factory=dict)
    beta: Any = 0.25  # float or region -> float
    prediction_noise: float = 0.01

    @classmethod
    def from_mapping(cls, d: Mapping) -> "RunConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.check_types()
        return cfg

    def check_types(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            want = f.type.split(" | ")[0] if isinstance(f.type, str) else None
            ok = True
            if want == "int":
                ok = (isinstance(v, int) and not isinstance(v, bool)) or (v is None and "None" in f.type)
            elif want == "float":
                ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            elif want == "bool":
                ok = isinstance(v, bool)
            elif want == "str":
                ok = isinstance(v, str)
            elif want == "list[int]":
                ok = isinstance(v, list) and all(isinstance(x, int) and not isinstance(x, bool) for x in v)
            elif want == "list[str]":
                ok = isinstance(v, list) and all(isinstance(x, str) for x in v)
            elif want == "dict":
                ok = isinstance(v, dict)
            if not ok:
                raise ConfigError(f"config field {f.name!r} has the wrong type: {v!r}")

    def validate(self) -> None:
        def need(ok: bool, msg: str):
            if not ok:
                raise ConfigError(msg)

        need(all(h in (1, 2, 3, 4) for h in self.horizons) and len(self.horizons) > 0,
             f"horizons must lie in 1..4, got {self.horizons}")
        need(self.epsilon > 0, "epsilon must be positive")
        need(self.tau_c >= 1, "tau_c must be >= 1")
        need(self.tau is None or self.tau >= 0, "tau must be >= 0")
        need(self.steps >= 1, "steps must be >= 1")
        need(self.hidden >= 1, "hidden must be >= 1")
        need(self.pretrain_epochs >= 1 and self.finetune_epochs >= 1, "epoch counts must be >= 1")
        need(0 <= self.teacher_epochs <= self.pretrain_epochs, "teacher_epochs must lie in 0..pretrain_epochs")
        need(self.lr_pretrain > 0 and self.lr_finetune > 0, "learning rates must be positive")
        need(0 <= self.sampling_prob <= 1, "sampling_prob must lie in [0, 1]")
        need(self.train_encoding in ("realtime", "window", "full"), f"unknown train_encoding {self.train_encoding!r}")
        need(self.clusters >= 1, "clusters must be >= 1")
        need(self.cluster_window >= 1, "cluster_window must be >= 1")
        need(self.t is None or self.t >= 1, "week t must be >= 1")
        need(len(self.eval_seeds) > 0, "need at least one evaluation seed")
        bad = [m for m in self.methods if m not in METHODS]
        need(not bad, f"unknown methods {bad}; expected a subset of {list(METHODS)}")
        need(self.prediction_noise >= 0, "prediction_noise must be >= 0")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden=self.hidden, head_hidden=self.hidden, menc_hidden=self.hidden, steps=self.steps,
            pretrain_epochs=self.pretrain_epochs, teacher_epochs=self.teacher_epochs,
            sampling_prob=self.sampling_prob, finetune_epochs=self.finetune_epochs,
            lr_pretrain=self.lr_pretrain, lr_finetune=self.lr_finetune, shared_heads=self.shared_heads,
            train_encoding=self.train_encoding, seed=self.seed,
        )

    def tau_for(self, n_signals: int) -> int:
        return self.tau if self.tau is not None else self.tau_c * n_signals

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


# ----------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# flag name -> RunConfig field, for flags shared by several subcommands
_OVERRIDES = {
    "seed": "seed", "t": "t", "horizons": "horizons", "target": "target", "epsilon": "epsilon",
    "tau_c": "tau_c", "tau": "tau", "steps": "steps", "hidden": "hidden",
    "pretrain_epochs": "pretrain_epochs", "teacher_epochs": "teacher_epochs",
    "finetune_epochs": "finetune_epochs", "lr_pretrain": "lr_pretrain", "lr_finetune": "lr_finetune",
    "clusters": "clusters", "cluster_window": "cluster_window", "eval_weeks": "eval_weeks",
    "eval_seeds": "eval_seeds", "prediction_noise": "prediction_noise",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="backfill", description="Revision-aware forecast refinement pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, vintages=True):
        sp.add_argument("--config", type=Path, help="JSON run config; flags override it")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        if vintages:
            sp.add_argument("--vintages", type=Path, required=True, help="vintage CSV")

    def training(sp):
        sp.add_argument("--t", type=int, required=False, help="current week")
        sp.add_argument("--target", type=str)
        sp.add_argument("--steps", type=int, help="autoregressive encoder steps l")
        sp.add_argument("--hidden", type=int, help="hidden size m")
        sp.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
        sp.add_argument("--teacher-epochs", dest="teacher_epochs", type=int)
        sp.add_argument("--finetune-epochs", dest="finetune_epochs", type=int)
        sp.add_argument("--lr-pretrain", dest="lr_pretrain", type=float)
        sp.add_argument("--lr-finetune", dest="lr_finetune", type=float)
        sp.add_argument("--jobs", type=int, default=1, help="parallel fine-tuning workers")

    def graph_flags(sp):
        sp.add_argument("--tau", type=int, help="number of edges (overrides --tau-c)")
        sp.add_argument("--tau-c", dest="tau_c", type=int, help="edges per signal")

    sp = sub.add_parser("ingest", help="validate a vintage CSV and write a canonical copy")
    common(sp)

    sp = sub.add_parser("stats", help="BErr / STime tables and forecast diagnostics")
    common(sp)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--group-by", dest="group_by", choices=["signal", "region", "feature"], default="signal")
    sp.add_argument("--predictions", type=Path, help="prediction CSV for real-time vs stable diagnostics")
    sp.add_argument("--target", type=str)

    sp = sub.add_parser("cluster", help="DTW k-means over backfill sequences")
    common(sp)
    sp.add_argument("--clusters", type=int)
    sp.add_argument("--cluster-window", dest="cluster_window", type=int, help="revisions kept per sequence")
    sp.add_argument("--feature", action="append", help="restrict to these features")
    sp.add_argument("--jobs", type=int, default=1, help="parallel DTW workers")

    sp = sub.add_parser("graph", help="signal similarity graph for week t")
    common(sp)
    sp.add_argument("--t", type=int)
    sp.add_argument("--jobs", type=int, default=1, help="parallel DTW workers")
    graph_flags(sp)

    sp = sub.add_parser("pretrain", help="pretrain the sequence encoder for week t")
    common(sp)
    training(sp)
    graph_flags(sp)

    sp = sub.add_parser("refine", help="refine black-box predictions made at week t")
    common(sp)
    training(sp)
    sp.add_argument("--predictions", type=Path, required=True)
    sp.add_argument("--checkpoint", type=Path, required=True, help="encoder checkpoint from `pretrain`")
    sp.add_argument("--horizons", type=_int_list)
    sp.add_argument("--reuse-pretrain", dest="reuse_pretrain", action="store_true",
                    help="accept an encoder pretrained for an earlier week")

    sp = sub.add_parser("rectify", help="estimate stable week-t targets and re-score forecasts")
    common(sp)
    training(sp)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--predictions", type=Path, help="forecasts to re-score")
    sp.add_argument("--reuse-pretrain", dest="reuse_pretrain", action="store_true")

    sp = sub.add_parser("simulate", help="write a synthetic vintage + prediction world")
    common(sp, vintages=False)
    sp.add_argument("--horizons", type=_int_list)
    sp.add_argument("--prediction-noise", dest="prediction_noise", type=float)

    sp = sub.add_parser("evaluate", help="improvement table of the refiner against baselines")
    common(sp)
    training(sp)
    graph_flags(sp)
    sp.add_argument("--predictions", type=Path, required=True)
    sp.add_argument("--eval-weeks", dest="eval_weeks", type=_int_list)
    sp.add_argument("--eval-seeds", dest="eval_seeds", type=_int_list)
    sp.add_argument("--horizons", type=_int_list)
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"no such config file: {args.config}")
        try:
            data = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = RunConfig.from_mapping(data)
    over = {f: getattr(args, flag) for flag, f in _OVERRIDES.items() if getattr(args, flag, None) is not None}
    cfg = replace(cfg, **over)
    cfg.check_types()
    cfg.validate()
    return cfg


# ----------------------------------------------------------------------------
# manifests


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs: Mapping[str, Path | None],
                   outputs: Sequence[str], extra: Mapping | None = None) -> None:
    import numba

    doc = {
        "command": command,
        "config": asdict(cfg),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "versions": {"backfill": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "numba": numba.__version__},
        "inputs": {k: _file_digest(p) for k, p in sorted(inputs.items()) if p is not None},
        "outputs": sorted(outputs),
    }
    if extra:
        doc.update(extra)
    atomic_write_text(out / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require_t(cfg: RunConfig) -> int:
    if cfg.t is None:
        raise ConfigError("week --t is required")
    return cfg.t


# ----------------------------------------------------------------------------
# subcommands


def cmd_ingest(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    write_csv(args.out / "vintages.csv", VINTAGE_HEADER, vintage_rows(ds))
    rows = []
    for s in ds.signals:
        weeks = ds.obs_weeks(s)
        rows.append((s.region, s.feature, ds.delays[s], len(weeks), weeks[0], weeks[-1]))
    write_csv(args.out / "signals.csv", ("region", "feature", "delay", "n_obs_weeks", "first_week", "last_week"),
              rows)
    write_manifest(args.out, "ingest", cfg, {"vintages": args.vintages}, ["vintages.csv", "signals.csv"],
                   {"n_records": len(ds), "final_week": ds.final_week})


def _forecast_diagnostics(ds: RevisionDataset, hub, target: str) -> list[tuple]:
    """Per (model, k): MAE against real-time and stable targets, their gap,
    and the correlation between target BErr and per-forecast gap."""
    rows = []
    groups: dict[tuple[str, int], list[tuple[float, float, float, float]]] = {}
    for h in hub:
        sig = SignalId(h.region, target)
        if sig not in ds:
            continue
        for w in h.weeks():
            tw = w + h.k
            if not ds.has_value(sig, tw, tw):
                continue
            seq = ds.backfill_sequence(sig, tw)
            if seq.stable == 0:
                continue
            groups.setdefault((h.model, h.k), []).append((h[w], ds.real_time_value(sig, tw), seq.stable,
                                                          berr(seq, 1)))
    for (model, k), vals in sorted(groups.items()):
        v = np.array(vals)
        mae_rt, mae_st = score(v[:, 0], v[:, 1]), score(v[:, 0], v[:, 2])
        gap = np.abs(v[:, 0] - v[:, 2]) - np.abs(v[:, 0] - v[:, 1])
        try:
            pcc = pearson(v[:, 3], gap)
        except (DataError, ValueError):
            pcc = float("nan")
        rows.append((model, k, len(v), mae_rt, mae_st, mae_st - mae_rt, pcc))
    return rows


def cmd_stats(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    rows, summary = [], {}
    for metric in ("berr-initial", "stime"):
        table = aggregate(ds, metric, args.group_by, "median-of-means", cfg.epsilon)
        rows.extend(table.as_rows())
        summary[metric] = table.summary
    outputs = ["stats.csv"]
    write_csv(args.out / "stats.csv", STATS_HEADER, rows)
    if args.predictions is not None:
        hub = load_predictions(args.predictions)
        write_csv(args.out / "forecast_gap.csv",
                  ("model", "horizon_k", "n", "mae_realtime", "mae_stable", "delta_mae", "pcc_berr_delta"),
                  _forecast_diagnostics(ds, hub, cfg.target))
        outputs.append("forecast_gap.csv")
    write_manifest(args.out, "stats", cfg, {"vintages": args.vintages, "predictions": args.predictions}, outputs,
                   {"group_by": args.group_by, "median_of_group_means": summary})


def cmd_cluster(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    feats = set(args.feature) if args.feature else None
    keys, seqs = [], []
    for s in ds.signals:
        if feats is not None and s.feature not in feats:
            continue
        for w in ds.obs_weeks(s):
            seq = ds.backfill_sequence(s, w)
            if len(seq) >= cfg.cluster_window:
                keys.append((s.region, s.feature, w))
                seqs.append(seq.values[: cfg.cluster_window])
    if len(seqs) < cfg.clusters:
        raise DataError(f"{len(seqs)} sequences of length >= {cfg.cluster_window}; need at least {cfg.clusters}")
    res = cluster_bseqs(seqs, cfg.clusters, seed=cfg.seed, jobs=args.jobs)
    write_csv(args.out / "labels.csv", ("region", "feature", "observation_week", "cluster"),
              [k + (int(c),) for k, c in zip(keys, res.labels)])
    write_csv(args.out / "centroids.csv", ("cluster", "position", "value"),
              [(c, i + 1, float(v)) for c, cen in enumerate(res.centroids) for i, v in enumerate(cen)])
    write_manifest(args.out, "cluster", cfg, {"vintages": args.vintages}, ["labels.csv", "centroids.csv"],
                   {"cost_history": res.cost_history, "n_sequences": len(seqs)})


def cmd_graph(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    t = _require_t(cfg)
    tau = cfg.tau_for(len(ds.signals))
    g = graph_gen(ds, t, tau, jobs=args.jobs) if tau > 0 else empty_graph(ds.signals)
    write_csv(args.out / "edges.csv", EDGE_HEADER, g.edge_rows())
    write_manifest(args.out, "graph", cfg, {"vintages": args.vintages}, ["edges.csv"],
                   {"tau": tau, "n_edges": len(g.edges)})


def cmd_pretrain(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    t = _require_t(cfg)
    tau = cfg.tau_for(len(ds.signals))
    g = graph_gen(ds, t, tau, jobs=args.jobs) if tau > 0 else empty_graph(ds.signals)
    pre = pretrain_bseqenc(ds, t, g, cfg.model_config())
    checkpoint.save(args.out / "encoder.json", pre.params, pre.meta())
    write_csv(args.out / "edges.csv", EDGE_HEADER, g.edge_rows())
    write_csv(args.out / "pretrain_loss.csv", ("epoch", "loss"), enumerate(pre.losses, start=1))
    write_manifest(args.out, "pretrain", cfg, {"vintages": args.vintages},
                   ["encoder.json", "edges.csv", "pretrain_loss.csv"], {"tau": tau})


def _load_encoder(args, cfg: RunConfig, ds: RevisionDataset) -> PretrainResult:
    params, meta = checkpoint.load(args.checkpoint)
    pre = PretrainResult.from_checkpoint(params, meta)
    t = _require_t(cfg)
    if pre.signals != ds.signals:
        raise DataError("checkpoint signals differ from the vintage file's signals")
    if pre.t != t and not (args.reuse_pretrain and pre.t <= t):
        raise DataError(f"checkpoint was pretrained for week {pre.t}, not {t} (use --reuse-pretrain to allow an "
                        f"earlier week)")
    # architecture comes from the checkpoint; training budget from this run
    mc = cfg.model_config()
    pre.config = replace(pre.config, finetune_epochs=mc.finetune_epochs, lr_finetune=mc.lr_finetune,
                         train_encoding=mc.train_encoding, seed=mc.seed)
    return pre


def cmd_refine(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    pre = _load_encoder(args, cfg, ds)
    t = cfg.t
    hub = [h for h in load_predictions(args.predictions) if h.k in cfg.horizons and t in h]
    if not hub:
        raise DataError(f"no predictions made at week {t} for horizons {cfg.horizons}")
    models = run_jobs(pre, hub, ds, t, pre.config, cfg.target, args.jobs)
    rows = []
    for h, bm in zip(hub, models):
        out = bm.predict()
        rows.append((h.model, h.region, t, h.k, out.y_raw, out.gamma, out.y_star))
    write_csv(args.out / "refined.csv", REFINED_HEADER, rows)
    write_csv(args.out / "finetune_loss.csv", ("model", "region", "horizon_k", "initial_loss", "final_loss"),
              [(bm.model, bm.region, bm.k, bm.losses[0], bm.losses[-1]) for bm in models])
    write_manifest(args.out, "refine", cfg,
                   {"vintages": args.vintages, "predictions": args.predictions, "checkpoint": args.checkpoint},
                   ["refined.csv", "finetune_loss.csv"])


def cmd_rectify(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    pre = _load_encoder(args, cfg, ds)
    hub = load_predictions(args.predictions) if args.predictions is not None else []
    res = rectify(ds, pre, cfg.t, hub=hub, target=cfg.target, cfg=pre.config, jobs=args.jobs)
    write_csv(args.out / "rectified.csv", ("region", "week", "y_realtime", "gamma", "y_rectified"),
              [(r.region, r.t, r.y_realtime, r.gamma, r.y_rectified) for r in res.targets.values()])
    outputs = ["rectified.csv"]
    if args.predictions is not None:
        write_csv(args.out / "rescored.csv",
                  ("model", "region", "horizon_k", "prediction", "y_realtime", "y_rectified", "err_realtime",
                   "err_rectified"), res.rows)
        write_csv(args.out / "leaderboard.csv", ("model", "horizon_k", "mae_realtime", "mae_rectified", "n"),
                  res.scores)
        outputs += ["rescored.csv", "leaderboard.csv"]
    write_manifest(args.out, "rectify", cfg,
                   {"vintages": args.vintages, "predictions": args.predictions, "checkpoint": args.checkpoint},
                   outputs)


def cmd_simulate(args, cfg: RunConfig) -> None:
    synth = dict(cfg.synth)
    if args.seed is not None or "seed" not in synth:
        synth["seed"] = cfg.seed
    sc = SynthConfig.from_mapping(synth)
    ds = gen_vintages(sc)
    beta = cfg.beta
    if not isinstance(beta, (int, float)) and not isinstance(beta, Mapping):
        raise ConfigError("beta must be a number or a region -> number map")
    hub = gen_predictions(ds, cfg.target, beta, cfg.prediction_noise, sc.seed, cfg.horizons)
    write_csv(args.out / "vintages.csv", VINTAGE_HEADER, vintage_rows(ds))
    write_csv(args.out / "predictions.csv", PREDICTION_HEADER, prediction_rows(hub))
    write_manifest(args.out, "simulate", cfg, {}, ["vintages.csv", "predictions.csv"],
                   {"synth": json.loads(sc.to_json())})


def table2_rows(table: ImprovementTable, horizons: Sequence[int]):
    """Wide layout: one row per (method, model), mean/std columns per metric and horizon."""
    header = ["method", "model"]
    for metric in ("mae", "mape"):
        for k in horizons:
            header += [f"{metric}_k{k}_mean", f"{metric}_k{k}_std"]
    keys = []
    for r in table.rows:
        if r[:2] not in keys:
            keys.append(r[:2])
    rows = []
    for method, model in keys:
        row: list = [method, model]
        for metric in ("mae", "mape"):
            for k in horizons:
                try:
                    row += list(table.get(method, model, k, metric))
                except KeyError:
                    row += ["", ""]
        rows.append(row)
    return header, rows


def cmd_evaluate(args, cfg: RunConfig) -> None:
    ds = load_vintages(args.vintages)
    hub = [h for h in load_predictions(args.predictions) if h.k in cfg.horizons]
    weeks = cfg.eval_weeks or ([cfg.t] if cfg.t is not None else [])
    if not weeks:
        raise ConfigError("evaluate needs --eval-weeks or --t")
    records = evaluate(ds, hub, weeks, cfg.tau_for(len(ds.signals)), cfg.model_config(), cfg.eval_seeds,
                       cfg.methods, cfg.target, args.jobs)
    table = improvement_table(records)
    write_csv(args.out / "records.csv", EVAL_RECORD_HEADER, record_rows(records))
    write_csv(args.out / "improvement_long.csv", ImprovementTable.HEADER, table.rows)
    header, rows = table2_rows(table, sorted({r.k for r in records}))
    write_csv(args.out / "improvement.csv", header, rows)
    write_manifest(args.out, "evaluate", cfg, {"vintages": args.vintages, "predictions": args.predictions},
                   ["records.csv", "improvement_long.csv", "improvement.csv"],
                   {"baselines": [m for m in cfg.methods if m in BASELINES]})


COMMANDS = {
    "ingest": cmd_ingest, "stats": cmd_stats, "cluster": cmd_cluster, "graph": cmd_graph,
    "pretrain": cmd_pretrain, "refine": cmd_refine, "rectify": cmd_rectify, "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def _fail(exc: BaseException, code: int) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args)
        COMMANDS[args.command](args, cfg)
    except BackfillError as exc:
        return _fail(exc, exc.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
