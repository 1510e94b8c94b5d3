import numpy as np
import pytest

from convabed.abed import Scheme
from convabed.faults import (
    CampaignConfig,
    Classification,
    InjectionTarget,
    LayerUnderTest,
    flip_bit,
    make_operands,
    run_campaign,
    run_trial,
    trial_seed,
)
from convabed.tensor import ElemKind, LayerShape, Tensor4D, new_filled

SMALL = LayerShape(1, 8, 6, 6, 8, 3, 3, pad_h=1, pad_w=1)


def test_flip_bit_examples():
    t = new_filled((1, 1, 1, 1), ElemKind.I8, 0)
    assert flip_bit(t, 0, 0).array.item() == 1
    t = new_filled((1, 1, 1, 1), ElemKind.I8, -1)
    assert flip_bit(t, 0, 7).array.item() == 127
    t = new_filled((1, 1, 1, 1), ElemKind.I32, 0)
    assert flip_bit(t, 0, 31).array.item() == -2**31


def test_flip_bit_involution_and_locality(rng):
    t = Tensor4D(rng.integers(-2**31, 2**31, (2, 3, 2, 2), dtype=np.int32))
    for _ in range(50):
        idx, bit = int(rng.integers(t.size)), int(rng.integers(32))
        once = flip_bit(t, idx, bit)
        diff = np.flatnonzero(once.data != t.data)
        assert diff.tolist() == [idx]
        assert flip_bit(once, idx, bit) == t


def test_flip_bit_bounds():
    t = new_filled((1, 1, 1, 2), ElemKind.I8, 0)
    with pytest.raises(IndexError):
        flip_bit(t, 2, 0)
    with pytest.raises(ValueError):
        flip_bit(t, 0, 8)


def test_trial_seed_is_stable_and_distinct():
    seeds = [trial_seed(7, i) for i in range(100)]
    assert seeds == [trial_seed(7, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert trial_seed(8, 0) != trial_seed(7, 0)


def test_make_operands_modes():
    x, f = make_operands(SMALL, "ones")
    assert (x.array == 1).all() and (f.array == 1).all()
    x, _ = make_operands(SMALL, "extreme")
    assert (x.array == -128).all()
    x, f = make_operands(SMALL, "extreme-mixed", seed=3)
    assert set(np.unique(x.array)) <= {-128, 127}
    a, _ = make_operands(SMALL, "random", seed=3)
    b, _ = make_operands(SMALL, "random", seed=3)
    assert a == b
    with pytest.raises(ValueError):
        make_operands(SMALL, "zeros")


def _config(scheme, target, trials=60, seed=11, mode="ones"):
    return CampaignConfig(SMALL, scheme, target, trials, seed, mode)


def test_campaign_deterministic_across_jobs():
    cfg = _config(Scheme.FIC, InjectionTarget.INPUT)
    a = run_campaign(cfg)
    b = run_campaign(cfg, jobs=3)
    assert a.row() == b.row()
    assert [o.flat_index for o in a.outcomes] == [o.flat_index for o in b.outcomes]


def test_single_trial_campaign_equals_run_trial():
    cfg = _config(Scheme.FC, InjectionTarget.FILTER, trials=1)
    report = run_campaign(cfg)
    x, f = make_operands(SMALL, "ones")
    direct = run_trial(SMALL, x, f, Scheme.FC, InjectionTarget.FILTER, None, trial_seed(cfg.seed, 0))
    assert report.outcomes[0] == direct


def test_campaign_rejects_zero_trials():
    with pytest.raises(ValueError):
        run_campaign(_config(Scheme.FIC, InjectionTarget.INPUT, trials=0))


def test_counts_partition_trials():
    report = run_campaign(_config(Scheme.IC, InjectionTarget.CONVOUT, mode="random"))
    assert sum(report.counts.values()) == report.trials
    assert report.row()["trials"] == 60


@pytest.mark.parametrize("target", list(InjectionTarget))
def test_fic_all_ones_detects_everything(target):
    report = run_campaign(_config(Scheme.FIC, target))
    assert report.detection_rate == 1.0 and report.sdc == 0


def test_fc_misses_input_faults_by_construction():
    report = run_campaign(_config(Scheme.FC, InjectionTarget.INPUT))
    assert report.detection_rate == 0.0


def test_ic_misses_filter_faults_by_construction():
    for scheme in (Scheme.IC, Scheme.ICBATCH):
        assert run_campaign(_config(scheme, InjectionTarget.FILTER)).detection_rate == 0.0


def test_classification_semantics():
    x, f = make_operands(SMALL, "ones")
    layer = LayerUnderTest(SMALL, x, f, Scheme.FC)
    # low bit of one ConvOut value: caught, and visible after scale 1/8 only sometimes
    out = layer.inject(InjectionTarget.CONVOUT, 0, 0)
    assert not out.verify.ok
    assert out.classification in (Classification.DETECTED, Classification.DETECTED_BENIGN)
    # FC cannot see input faults; a high bit in a corner input reaches the output
    out = layer.inject(InjectionTarget.INPUT, 0, 6)
    assert out.verify.ok and out.classification is Classification.SDC
    for o in run_campaign(_config(Scheme.FC, InjectionTarget.INPUT, trials=100)).outcomes:
        assert (o.classification is Classification.MASKED) == (not o.final_output_differs)


def test_fic_sdc_is_logged(caplog):
    # filters +1 and -1 cancel, so the filter checksum is all zeros and FIC is blind
    shape = LayerShape(1, 1, 3, 3, 2, 3, 3)
    x = Tensor4D(np.ones(shape.input_dims, np.int8))
    f = Tensor4D(np.stack([np.ones((1, 3, 3), np.int8), -np.ones((1, 3, 3), np.int8)]))
    layer = LayerUnderTest(shape, x, f, Scheme.FIC)
    with caplog.at_level("WARNING", logger="convabed.faults"):
        out = layer.inject(InjectionTarget.INPUT, 4, 6)
    assert out.classification is Classification.SDC
    assert "undetected FIC corruption" in caplog.text
