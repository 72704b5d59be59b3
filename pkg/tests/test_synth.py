import numpy as np
import pytest

from backfill.analytics import berr, stime
from backfill.errors import ConfigError
from backfill.store import SignalId
from backfill.synth import BEHAVIORS, SynthConfig, gen_predictions, gen_vintages, template


def _single(behavior, **kw):
    cfg = SynthConfig(regions=["A"], features=["deaths"], weeks=kw.pop("weeks", 20),
                      behaviors={"deaths": behavior}, **kw)
    return gen_vintages(cfg), SignalId("A", "deaths")


def test_early_decline_initial_error_is_exact():
    ds, sig = _single("early-decline")
    for w in (1, 5, 12):
        assert berr(ds.backfill_sequence(sig, w), 1) == pytest.approx(0.25, abs=1e-12)


def test_steady_spike_is_removed_by_fill_rules():
    ds, sig = _single("steady-spike")
    seq = ds.backfill_sequence(sig, 3)
    assert seq.filled[2] and np.all(seq.values == seq.stable)
    assert stime(seq) == 1
    # the raw record still carries the zero
    assert ds.issues(sig, 3)[5] == 0.0


@pytest.mark.parametrize("behavior", BEHAVIORS)
def test_templates_reach_stable_value_at_stabilization(behavior):
    cfg = SynthConfig()
    stab = cfg.stabilization(behavior)
    path = template(behavior, 15, cfg.multiplier(behavior), stab, cfg.spike_week)
    assert np.all(path[max(stab, cfg.spike_week + 1):] == 1.0)
    if behavior != "steady-spike":
        assert path[0] == pytest.approx(1.0 / cfg.multiplier(behavior))
        assert stime(path) == stab + 1


def test_behavior_shapes():
    cfg = SynthConfig()
    inc = template("early-increase", 12, 1.25, cfg.stabilization("early-increase"))
    assert np.all(np.diff(inc[:4]) > 0)
    late = template("late-increase", 12, 1.5, cfg.stabilization("late-increase"))
    assert np.all(late[:9] == late[0]) and late[9] > late[8]
    mid = template("mid-decrease", 14, 0.7, cfg.stabilization("mid-decrease"))
    assert np.all(mid[:8] == mid[0]) and np.all(np.diff(mid[7:11]) < 0)


def test_noise_never_touches_the_stable_tail():
    ds0, sig = _single("late-increase")
    ds1, _ = _single("late-increase", noise=0.1)
    a, b = ds0.backfill_sequence(sig, 2).values, ds1.backfill_sequence(sig, 2).values
    np.testing.assert_array_equal(a[9:], b[9:])
    assert not np.allclose(a[:9], b[:9])


def test_seeded_generation_is_deterministic():
    cfg = SynthConfig(noise=0.05, seed=4)
    a, b = list(gen_vintages(cfg).records()), list(gen_vintages(SynthConfig(noise=0.05, seed=4)).records())
    assert a == b
    assert a != list(gen_vintages(SynthConfig(noise=0.05, seed=5)).records())


def test_delays_shift_first_issue():
    ds, sig = _single("early-decline", delays={"deaths": 2})
    assert ds.delays[sig] == 2
    assert ds.backfill_sequence(sig, 4).first_issue == 6
    assert 19 not in ds.obs_weeks(sig)


@pytest.mark.parametrize("kw, msg", [
    ({"noise": -0.1}, "noise"),
    ({"behaviors": {"deaths": "wobble"}}, "behavior"),
    ({"stabilize": {"late-increase": 50}}, "stabilization"),
    ({"multipliers": {"early-decline": 0.0}}, "multiplier"),
    ({"weeks": 1}, "weeks"),
    ({"delays": {"cases": -1}}, "delay"),
])
def test_invalid_configs(kw, msg):
    with pytest.raises(ConfigError, match=msg):
        gen_vintages(SynthConfig(**kw))


def test_unknown_config_key():
    with pytest.raises(ConfigError):
        SynthConfig.from_mapping({"wekes": 3})
    assert SynthConfig.from_mapping({"level_range": [1, 2]}).level_range == (1, 2)


def test_predictions_follow_the_bias_law():
    ds = gen_vintages(SynthConfig(noise=0.05))
    sig = SignalId("R1", "deaths")
    exact = [h for h in gen_predictions(ds, beta=0.0, horizons=(1, 3)) if h.region == "R1"]
    for h in exact:
        for w in h.weeks():
            assert h[w] == ds.backfill_sequence(sig, w + h.k).stable
    biased = gen_predictions(ds, beta=0.25)
    for h in biased:
        s = SignalId(h.region, "deaths")
        ratios = [ds.backfill_sequence(s, w + 1).stable / h[w] for w in h.weeks()]
        np.testing.assert_allclose(ratios, 1.25, rtol=1e-14)
    per_region = gen_predictions(ds, beta={"R0": 0.1, "R1": 0.4, "R2": 0.0})
    assert {h.region for h in per_region} == {"R0", "R1", "R2"}
    with pytest.raises(ConfigError):
        gen_predictions(ds, beta=-1.0)


def test_prediction_noise_is_seeded_and_scaled():
    ds = gen_vintages(SynthConfig())
    a = gen_predictions(ds, noise=0.01, seed=1)
    b = gen_predictions(ds, noise=0.01, seed=1)
    assert [h.values for h in a] == [h.values for h in b]
    clean = gen_predictions(ds)
    for h, c in zip(a, clean):
        sig = SignalId(h.region, "deaths")
        scale = np.mean([ds.backfill_sequence(sig, w).stable for w in ds.obs_weeks(sig)])
        resid = np.array([h[w] - c[w] for w in h.weeks()]) / scale
        assert 0.005 < resid.std() < 0.02
