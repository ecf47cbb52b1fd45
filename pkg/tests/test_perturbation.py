import numpy as np
import pytest

from eegdecode import convnet as cn
from eegdecode.errors import InvalidInputError
from eegdecode.perturbation import (
    CorrelationMap,
    _CorrelationAccumulator,
    average_maps,
    frame_l1,
    freq_perturbation_map,
    time_perturbation_map,
)
from eegdecode.signal import DecodingInterval, TrialSet


@pytest.fixture(scope="module")
def net():
    cfg = cn.ConvNetConfig(n_channels=4, n_samples=167, n_filters=(4, 4, 6, 6), seed=0)
    return cn.build_model(cfg, dtype=np.float64)


def make_trials(n=40, seed=0, scale=1.0):
    data = np.random.default_rng(seed).standard_normal((n, 4, 167)) * scale
    return TrialSet(data, np.arange(n) % 2, 250.0, DecodingInterval(0, 167 / 250))


# --- frame distances -----------------------------------------------------------


def test_identical_sequences_are_zero():
    a = np.random.default_rng(0).integers(0, 256, (5, 3, 4), dtype=np.uint8)
    np.testing.assert_array_equal(frame_l1(a, a).delta_norm, 0.0)


def test_intensity_inverse_is_one():
    # black/white frames: every pixel moves by the full 8-bit range
    a = (np.random.default_rng(1).integers(0, 2, (3, 4, 4)) * 255).astype(np.uint8)
    np.testing.assert_array_equal(frame_l1(a, 255 - a).delta_norm, 1.0)


def test_hand_example():
    a = np.zeros((1, 2, 2), dtype=np.uint8)
    b = a.copy()
    b[0, 0, 0] = 255
    assert frame_l1(a, b).delta_norm.tolist() == [0.25]


def test_between_mode_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.integers(0, 256, (2, 6, 5, 7), dtype=np.uint8)
    np.testing.assert_array_equal(frame_l1(a, b).delta_norm, frame_l1(b, a).delta_norm)


def test_sequential_mode():
    a = np.zeros((3, 2, 2), dtype=np.uint8)
    a[1] = 255
    res = frame_l1(a, np.zeros((7, 1, 1)), mode="sequential")
    assert res.delta_norm.tolist() == [1.0, 1.0] and res.mode == "sequential"


@pytest.mark.parametrize("args,kw", [
    ((np.zeros((2, 2, 2)), np.zeros((3, 2, 2))), {}),
    ((np.zeros((2, 2, 2)),), {}),
    ((np.zeros((1, 2, 2)),), dict(mode="sequential")),
    ((np.zeros((2, 2)), np.zeros((2, 2))), {}),
    ((np.zeros((2, 2, 2)), np.zeros((2, 2, 2))), dict(mode="other")),
])
def test_frame_errors(args, kw):
    with pytest.raises(InvalidInputError):
        frame_l1(*args, **kw)


# --- correlation accumulator -------------------------------------------------------


def test_accumulator_matches_direct_pearson():
    rng = np.random.default_rng(3)
    p = rng.standard_normal((90, 2, 3))
    d = np.stack([p[:, 0, 1] + rng.standard_normal(90), -p[:, 1, 2]], axis=1)
    acc = _CorrelationAccumulator(2, (2, 3))
    for s in range(0, 90, 30):
        acc.add(p[s : s + 30], d[s : s + 30])
    corr = acc.correlation()
    for k in range(2):
        for c in range(2):
            for f in range(3):
                assert corr[k, c, f] == pytest.approx(np.corrcoef(p[:, c, f], d[:, k])[0, 1], abs=1e-12)


def test_accumulator_flags_zero_variance():
    acc = _CorrelationAccumulator(1, (2,))
    p = np.zeros((10, 2))
    p[:, 1] = np.arange(10)
    acc.add(p, np.arange(10.0)[:, None])
    corr = acc.correlation()
    assert np.isnan(corr[0, 0]) and corr[0, 1] == pytest.approx(1.0)


# --- maps -------------------------------------------------------------------------


@pytest.mark.parametrize("fn", [freq_perturbation_map, time_perturbation_map])
def test_map_shape_range_and_determinism(net, fn):
    trials = make_trials()
    a = fn(net, trials, n_iter=3, seed=4)
    b = fn(net, trials, n_iter=3, seed=4)
    n_feat = 167 // 2 + 1 if fn is freq_perturbation_map else 167
    assert a.values.shape == (2, 4, n_feat)
    np.testing.assert_array_equal(a.values, b.values)
    vals = a.values[~a.missing]
    assert np.all((vals >= -1) & (vals <= 1))
    assert not np.array_equal(a.values, fn(net, trials, n_iter=3, seed=5).values, equal_nan=True)


def test_freq_map_axis(net):
    m = freq_perturbation_map(net, make_trials(10), n_iter=2)
    assert m.axis_unit == "Hz" and m.axis_step == pytest.approx(250 / 167)
    assert m.n_iterations == 2 and m.sigma == 0.5
    assert m.channel_labels == ("E1", "E2", "E3", "E4")


def test_time_map_missing_only_where_perturbation_is_zero(net):
    data = np.random.default_rng(0).standard_normal((30, 4, 167))
    data[:, 2] = 0.0  # zero channel std: relative noise on channel 2 is zero
    trials = TrialSet(data, np.arange(30) % 2, 250.0, DecodingInterval(0, 1))
    m = time_perturbation_map(net, trials, n_iter=3)
    assert np.all(m.missing[:, 2]) and not np.any(np.delete(m.missing, 2, axis=1))


def test_zero_signal_absolute_scale(net):
    trials = make_trials(40, scale=0.0)
    m = time_perturbation_map(net, trials, n_iter=5, sigma=1.0, scale="absolute")
    assert not np.any(m.missing)
    assert np.abs(m.values).mean() < 0.1
    # relative noise on an all-zero input is zero everywhere: every cell is flagged
    rel = freq_perturbation_map(net, trials, n_iter=2)
    assert np.all(rel.missing)


def test_tiny_sigma_stays_finite(net):
    m = time_perturbation_map(net, make_trials(20), n_iter=3, sigma=1e-9)
    assert not np.any(m.missing)
    assert np.all(np.abs(m.values) <= 1)


def test_null_calibration_untrained(net):
    m = freq_perturbation_map(net, make_trials(200, seed=7), n_iter=30)
    assert np.nanmean(np.abs(m.values)) < 0.1
    assert abs(np.nanmean(m.values)) < 0.05


@pytest.mark.parametrize("kw", [dict(sigma=0.0), dict(sigma=-1.0), dict(n_iter=1), dict(scale="log")])
def test_map_argument_errors(net, kw):
    with pytest.raises(InvalidInputError):
        time_perturbation_map(net, make_trials(4), **{"n_iter": 2, **kw})


def test_map_shape_mismatch(net):
    trials = TrialSet(np.zeros((2, 3, 167)), [0, 1], 250.0, DecodingInterval(0, 1))
    with pytest.raises(InvalidInputError):
        freq_perturbation_map(net, trials, n_iter=2)


def test_argmax_abs():
    v = np.zeros((2, 3, 4))
    v[1, 2, 1] = -0.9
    v[1, 0, 0] = np.nan
    m = CorrelationMap(v, "s", 0.004, 30, 0.5)
    assert m.argmax_abs(1) == (2, 1)
    np.testing.assert_allclose(m.axis, [0, 0.004, 0.008, 0.012])


def test_average_maps_ignores_missing():
    a = CorrelationMap(np.array([[[0.2, np.nan, np.nan]]]), "Hz", 1.0, 30, 0.5)
    b = CorrelationMap(np.array([[[0.4, 0.6, np.nan]]]), "Hz", 1.0, 30, 0.5)
    avg = average_maps([a, b])
    np.testing.assert_allclose(avg.values[0, 0, :2], [0.3, 0.6])
    assert np.isnan(avg.values[0, 0, 2]) and avg.n_iterations == 60
    with pytest.raises(InvalidInputError):
        average_maps([])
    with pytest.raises(InvalidInputError):
        average_maps([a, CorrelationMap(np.zeros((1, 1, 2)), "Hz", 1.0, 30, 0.5)])
