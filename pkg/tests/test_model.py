import hashlib
from dataclasses import replace

import numpy as np
import pytest

from backfill import model as M
from backfill.dtw import empty_graph, graph_gen
from backfill.errors import DataError, NumericError
from backfill.model import (
    ModelConfig,
    PretrainResult,
    adjacency,
    b2f_loss,
    build_batch,
    derived_seed,
    encode_realtime,
    encoder_params,
    finetune,
    full_params,
    model_encode,
    pretrain_bseqenc,
    refine,
)
from backfill.nn import DTensor, ParamSet, checkpoint, gconv, grad_check, gru_cell, node_ffn
from backfill.predictions import PredictionHistory
from backfill.store import SignalId
from backfill.synth import SynthConfig, gen_predictions, gen_vintages

from conftest import dataset_from

SMALL = ModelConfig(hidden=6, head_hidden=5, menc_hidden=4, refiner_hidden=(5, 4), steps=2,
                    pretrain_epochs=4, teacher_epochs=2, finetune_epochs=5)


@pytest.fixture(scope="module")
def toy():
    """Three signals over six weeks with a biased forecaster."""
    ds = gen_vintages(SynthConfig(regions=["A"], features=["deaths", "cases", "mobility"], weeks=6, seed=3,
                                  noise=0.05))
    hub = gen_predictions(ds, beta=0.25, noise=0.01, seed=1)
    return ds, hub[0]


def _perturbed(ps: ParamSet, seed: int) -> ParamSet:
    rng = np.random.default_rng(seed)
    for _, p in ps.items():
        p.data = p.data + 0.1 * rng.normal(size=p.shape)
    return ps


# ---------------------------------------------------------------- sequence encoder


def test_encode_realtime_single_step_matches_definition():
    cfg = replace(SMALL, steps=1)
    ps = _perturbed(encoder_params(3, cfg, seed=2), 0)
    a_hat = M.normalized_adjacency(3, [(0, 1)])
    x = np.array([0.3, -1.2, 0.8])
    h, pred = encode_realtime(ps, a_hat, x, 1, cfg)
    v = gru_cell(DTensor(x[:, None]), ps["bse.h0"], ps, "bse.gru")
    h_ref = gconv(a_hat, v, ps["bse.gconv"])
    pred_ref = node_ffn(h_ref, ps, "bse.head", 2)[..., 0]
    np.testing.assert_allclose(h.data, h_ref.data, rtol=0, atol=1e-15)
    np.testing.assert_allclose(pred.data, pred_ref.data, rtol=0, atol=1e-15)


def test_encode_realtime_feeds_back_predictions():
    cfg = replace(SMALL, steps=3)
    ps = _perturbed(encoder_params(2, cfg, seed=1), 1)
    a_hat = M.normalized_adjacency(2, [(0, 1)])
    x = np.array([0.5, -0.5])
    h, inp = ps["bse.h0"], DTensor(x)
    for _ in range(3):
        h, inp = M.encoder_step(inp, h, ps, a_hat, cfg)
    h3, p3 = encode_realtime(ps, a_hat, x, 3, cfg)
    np.testing.assert_array_equal(h3.data, h.data)
    np.testing.assert_array_equal(p3.data, inp.data)
    with pytest.raises(ValueError):
        encode_realtime(ps, a_hat, x, 0, cfg)
    with pytest.raises(DataError):
        encode_realtime(ps, a_hat, np.zeros(3), 1, cfg)


def test_signals_without_edges_stay_independent():
    cfg = replace(SMALL, steps=4)
    ps = _perturbed(encoder_params(3, cfg, seed=4), 2)
    a_hat = np.eye(3)
    h1, p1 = encode_realtime(ps, a_hat, np.array([0.1, 0.2, 0.3]), 4, cfg)
    h2, p2 = encode_realtime(ps, a_hat, np.array([5.0, 0.2, 0.3]), 4, cfg)
    assert not np.allclose(h1.data[0], h2.data[0])
    np.testing.assert_array_equal(h1.data[1:], h2.data[1:])
    np.testing.assert_array_equal(p1.data[1:], p2.data[1:])
    # with an edge the perturbation reaches the neighbour
    a_edge = M.normalized_adjacency(3, [(0, 1)])
    h3, _ = encode_realtime(ps, a_edge, np.array([0.1, 0.2, 0.3]), 4, cfg)
    h4, _ = encode_realtime(ps, a_edge, np.array([5.0, 0.2, 0.3]), 4, cfg)
    assert not np.allclose(h3.data[1], h4.data[1])
    np.testing.assert_array_equal(h3.data[2], h4.data[2])


def test_bseq_tensor_alignment_and_mask():
    ds = dataset_from({
        ("A", "deaths", 1): {1: 10.0, 2: 12.0, 3: 12.0},
        ("A", "deaths", 2): {2: 5.0, 3: 6.0},
        ("A", "cases", 1): {2: 7.0, 3: 8.0},  # one week late
        ("A", "cases", 2): {3: 4.0},
    })
    sigs = [SignalId("A", "deaths"), SignalId("A", "cases")]
    scaler = M.SignalScaler(sigs, np.zeros(2), np.ones(2))
    data = M.bseq_tensor(ds, sigs, [1, 2], 3, scaler)
    assert data.values.shape == (2, 3, 2)
    np.testing.assert_array_equal(data.values[0, :, 0], [10, 12, 12])
    np.testing.assert_array_equal(data.values[0, :, 1], [7, 7, 8])  # held back to the observation week
    np.testing.assert_array_equal(data.mask[0, :, 1], [False, True, True])
    np.testing.assert_array_equal(data.values[1, :2, 0], [5, 6])
    np.testing.assert_array_equal(data.mask[1, :, 0], [True, True, False])
    assert data.last.tolist() == [2, 1]


# ---------------------------------------------------------------- pretraining


@pytest.mark.parametrize("seed", [0, 1])
def test_pretraining_learns_to_continue_constant_sequences(seed):
    # every revision equals the stable value, so the next revision is the current one
    ds = gen_vintages(SynthConfig(regions=["A"], features=["deaths", "cases"], weeks=6,
                                  behaviors={"deaths": "steady-spike", "cases": "steady-spike"}, spike_week=0))
    cfg = ModelConfig(hidden=16, head_hidden=16, lr_pretrain=1e-2, seed=seed)
    pre = pretrain_bseqenc(ds, 6, None, cfg)
    assert len(pre.losses) == 2000
    assert pre.losses[-1] < 1e-6


def test_scheduled_sampling_starts_after_teacher_epochs(toy, monkeypatch):
    ds, _ = toy
    seen = []
    real = M.pretrain_loss

    def spy(ps, a_hat, data, cfg, feedback=None):
        seen.append(feedback is not None)
        if feedback is not None:
            assert 0.3 < feedback.mean() < 0.7
        return real(ps, a_hat, data, cfg, feedback)

    monkeypatch.setattr(M, "pretrain_loss", spy)
    pretrain_bseqenc(ds, 6, None, replace(SMALL, pretrain_epochs=6, teacher_epochs=3))
    assert seen == [False, False, False, True, True, True]


def test_pretraining_is_deterministic(toy):
    ds, _ = toy
    graph = graph_gen(ds, 6, 1)
    a = pretrain_bseqenc(ds, 6, graph, SMALL)
    b = pretrain_bseqenc(ds, 6, graph, SMALL)
    assert a.losses == b.losses
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = pretrain_bseqenc(ds, 6, graph, replace(SMALL, seed=1))
    assert not np.array_equal(a.params["bse.gru.w_in"], c.params["bse.gru.w_in"])


def test_pretraining_errors(toy):
    ds, _ = toy
    with pytest.raises(DataError):
        pretrain_bseqenc(ds, 1, None, SMALL)
    other = empty_graph([SignalId("Z", "deaths")])
    with pytest.raises(DataError):
        pretrain_bseqenc(ds, 6, other, SMALL)


def test_checkpoint_roundtrip_of_pretrained_encoder(toy, tmp_path):
    ds, hub = toy
    pre = pretrain_bseqenc(ds, 6, graph_gen(ds, 6, 1), SMALL)
    path = tmp_path / "enc.json"
    checkpoint.save(path, pre.params, pre.meta())
    back = PretrainResult.from_checkpoint(*checkpoint.load(path))
    assert back.signals == pre.signals and back.graph.edges == pre.graph.edges and back.config == pre.config
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    a = finetune(back, hub, ds, 6, require_decrease=False)
    b = finetune(pre, hub, ds, 6, require_decrease=False)
    assert hashlib.sha256(path.read_bytes()).hexdigest() == digest
    assert all(np.array_equal(back.params[k], pre.params[k]) for k in pre.params)
    assert a.predict(100.0).y_star == b.predict(100.0).y_star


# ---------------------------------------------------------------- model encoder and refiner


def test_model_encode_examples():
    cfg = SMALL
    ps = _perturbed(full_params(2, cfg, seed=0), 3)
    one = np.array([[0.9, 1.1, 1.2]])
    z = model_encode(ps, one)
    ref = gru_cell(DTensor(one[0]), DTensor(np.zeros(cfg.menc_hidden)), ps, "me.gru")
    np.testing.assert_array_equal(z.data, ref.data)

    zero = full_params(2, cfg, seed=0)
    for name, p in zero.items():
        if name.startswith("me."):
            p.data = np.zeros_like(p.data)
    assert not model_encode(zero, np.ones((4, 3))).data.any()

    hist = np.array([[1.0, 0.8, 1.1], [0.5, 0.6, 0.7], [2.0, 1.5, 1.9]])
    assert not np.allclose(model_encode(ps, hist).data, model_encode(ps, hist[::-1]).data)
    with pytest.raises(DataError):
        model_encode(ps, np.zeros((0, 3)))


def _refiner_with_bias(bias: float) -> ParamSet:
    ps = full_params(2, SMALL, seed=0)
    for name, p in ps.items():
        if name.startswith("ref.ffn"):
            p.data = np.zeros_like(p.data)
    ps["ref.ffn.b2"].data = np.array([bias])
    return ps


def test_refine_examples():
    states = np.random.default_rng(0).normal(size=(2, SMALL.hidden))
    z = np.ones(SMALL.menc_hidden)
    out = refine(states, z, 80.0, _refiner_with_bias(0.0), scale=40.0)
    assert out.gamma == 0.0 and out.y_star == 80.0
    out = refine(states, z, 100.0, _refiner_with_bias(np.arctanh(0.05)))
    assert out.gamma == pytest.approx(0.05, abs=1e-15)
    assert out.y_star == pytest.approx(105.0, abs=1e-12)
    out = refine(states, z, 100.0, _refiner_with_bias(-1e300))
    assert out.gamma == -1.0 and out.y_star == 0.0
    assert out.alphas.shape == (2,) and abs(out.alphas.sum() - 1) <= 1e-12


# ---------------------------------------------------------------- fine-tuning


def test_finetune_needs_two_training_weeks(toy):
    ds, hub = toy
    pre = pretrain_bseqenc(ds, 6, None, SMALL)
    with pytest.raises(DataError):
        finetune(pre, hub, ds, 2)
    short = PredictionHistory(hub.model, hub.region, 1, {1: hub[1]})
    with pytest.raises(DataError, match="fewer than 2"):
        finetune(pre, short, ds, 6)


def test_finetune_history_windows(toy):
    ds, hub = toy
    pre = pretrain_bseqenc(ds, 6, None, SMALL)
    batch = build_batch(ds, pre, hub, 6, "deaths", SMALL)
    # targets at w + k must be observed by week t - 1
    assert batch.train_weeks == [1, 2, 3, 4]
    # z for training week w only sees forecasts made at or before w - k - 1
    assert batch.z_index.tolist() == [0, 0, 1, 2]
    sig = SignalId("A", "deaths")
    np.testing.assert_allclose(batch.target * batch.scale, [ds.value(sig, w + 1, 6) for w in batch.train_weeks])
    assert batch.scale == pytest.approx(np.mean(np.abs(batch.triples[:, 2] * batch.scale)))


def test_finetune_decreases_loss_and_is_deterministic(toy):
    ds, hub = toy
    pre = pretrain_bseqenc(ds, 6, None, SMALL)
    cfg = replace(SMALL, finetune_epochs=40, lr_finetune=5e-3)
    a = finetune(pre, hub, ds, 6, cfg)
    b = finetune(pre, hub, ds, 6, cfg)
    assert a.losses[-1] < a.losses[0]
    assert a.losses == b.losses
    out = a.predict(250.0)
    assert out.y_star == pytest.approx((out.gamma + 1) * 250.0, rel=1e-14)
    with pytest.raises(DataError, match="no week-6 prediction"):
        a.predict()
    assert a.seed == derived_seed(cfg.seed, hub.model, hub.region, "1")
    with pytest.raises(NumericError, match="did not decrease"):
        finetune(pre, hub, ds, 6, replace(cfg, lr_finetune=0.0))


@pytest.mark.parametrize("encoding", ["realtime", "window", "full"])
@pytest.mark.parametrize("seed", range(3))
def test_full_loss_gradient(toy, encoding, seed):
    ds, hub = toy
    cfg = replace(SMALL, train_encoding=encoding, seed=seed)
    pre = pretrain_bseqenc(ds, 6, graph_gen(ds, 6, 2), cfg)
    batch = build_batch(ds, pre, hub, 6, "deaths", cfg)
    ps = _perturbed(full_params(3, cfg, seed), seed)
    a_hat = adjacency(pre.graph, 3)
    assert grad_check(lambda: b2f_loss(ps, a_hat, batch, cfg), list(ps)) <= 1e-3
