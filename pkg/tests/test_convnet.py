import math

import numpy as np
import pytest

from _gradcheck import gradient_check
from eegdecode import convnet as cn
from eegdecode.errors import InvalidInputError
from eegdecode.signal import DecodingInterval, TrialSet
from eegdecode.synth import SynthConfig, generate

TINY = dict(n_channels=4, n_samples=167, n_filters=(3, 4, 5, 6))


def tiny_model(dtype=np.float64, **kw):
    return cn.build_model(cn.ConvNetConfig(**{**TINY, **kw}), dtype=dtype)


def expected_lengths(n, k=10):
    out = []
    for _ in range(4):
        conv = n - k + 1
        pool = (conv - 3) // 2 + 1
        out.append((conv, pool))
        n = pool
    return out


# --- construction --------------------------------------------------------------


def test_full_scale_lengths():
    cfg = cn.ConvNetConfig(n_channels=128, n_samples=625)
    assert cn.layer_lengths(cfg) == expected_lengths(625)
    model = cn.build_model(cfg)
    assert model.params["dense.weight"].shape == (2, 200 * expected_lengths(625)[-1][1])


def test_same_seed_same_parameters():
    a, b = tiny_model(seed=3), tiny_model(seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert not np.array_equal(a.params["conv2.weight"], tiny_model(seed=4).params["conv2.weight"])


def test_too_short_input_reports_minimum():
    cfg = cn.ConvNetConfig(n_channels=4, n_samples=40)
    assert cn.min_input_length(cfg) == 166
    with pytest.raises(InvalidInputError, match="166"):
        cn.build_model(cfg)
    cn.build_model(cn.ConvNetConfig(n_channels=4, n_samples=166))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        cn.ConvNetConfig(n_channels=4, n_samples=200, pool_stride=3)
    with pytest.raises(InvalidInputError):
        cn.ConvNetConfig(n_channels=4, n_samples=200, n_filters=(1, 2, 3))
    with pytest.raises(InvalidInputError):
        cn.TrainConfig(validation_fraction=1.0)


# --- forward ---------------------------------------------------------------------


def test_softmax_rows_sum_to_one(rng):
    model = tiny_model()
    x = rng.standard_normal((5, 4, 167)) * 10
    for mode in ("eval", "train"):
        _, probs = cn.forward(model, x, mode=mode, rng=np.random.default_rng(0))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_eval_is_deterministic_and_per_sample(rng):
    model = tiny_model()
    x = rng.standard_normal((4, 4, 167))
    a, _ = cn.forward(model, x, mode="eval")
    b, _ = cn.forward(model, x, mode="eval")
    np.testing.assert_array_equal(a, b)
    dup, _ = cn.forward(model, x[[1, 1]], mode="eval")
    np.testing.assert_array_equal(dup[0], dup[1])


def test_prediction_independent_of_batching(rng):
    model = tiny_model()
    x = rng.standard_normal((7, 4, 167))
    np.testing.assert_array_equal(cn.predict(model, x, batch_size=1), cn.predict(model, x, batch_size=32))
    np.testing.assert_allclose(cn.presoftmax(model, x, 1), cn.presoftmax(model, x, 32), rtol=1e-12)


def test_train_forward_does_not_touch_running_stats(rng):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.buffers.items()}
    cn.forward(model, rng.standard_normal((3, 4, 167)), mode="train", rng=np.random.default_rng(1))
    for k in before:
        np.testing.assert_array_equal(before[k], model.buffers[k])


def test_shape_mismatch(rng):
    with pytest.raises(InvalidInputError):
        cn.forward(tiny_model(), rng.standard_normal((2, 3, 167)))


def test_zero_final_layer_tie_and_uniform_loss(rng):
    model = tiny_model()
    model.params["dense.weight"][:] = 0
    x = rng.standard_normal((3, 4, 167))
    assert cn.predict(model, x).tolist() == [0, 0, 0]
    loss, _ = cn.loss_and_grad(model, x, [0, 1, 1], dropout_masks=cn.make_dropout_masks(model, 3, rng))
    assert loss == pytest.approx(math.log(2), abs=1e-12)


# --- gradients ---------------------------------------------------------------------


def test_every_gradient_entry_matches_finite_differences(rng):
    model = tiny_model(seed=1)
    x = rng.standard_normal((3, 4, 167))
    masks = cn.make_dropout_masks(model, 3, np.random.default_rng(5))
    errors = gradient_check(model, x, np.array([0, 1, 1]), masks)
    assert len(errors) == len(model.params)
    assert max(errors.values()) < 1e-4, errors


def test_eval_mode_gradients_match_finite_differences(rng):
    model = tiny_model(seed=2)
    for i in range(1, 5):
        model.buffers[f"bn{i}.running_mean"][:] = rng.standard_normal(model.cfg.n_filters[i - 1]) * 0.1
        model.buffers[f"bn{i}.running_var"][:] = rng.uniform(0.5, 2, model.cfg.n_filters[i - 1])
    x = rng.standard_normal((2, 4, 167))
    y = np.array([1, 0])
    _, grads = cn.loss_and_grad(model, x, y, mode="eval")
    for name in ("conv_time.weight", "conv3.weight", "bn2.gamma", "dense.bias"):
        p = model.params[name]
        for i in list(np.ndindex(p.shape))[:6]:
            old = p[i]
            p[i] = old + 1e-5
            lp = cn.loss_and_grad(model, x, y, mode="eval")[0]
            p[i] = old - 1e-5
            lm = cn.loss_and_grad(model, x, y, mode="eval")[0]
            p[i] = old
            assert abs((lp - lm) / 2e-5 - grads[name][i]) <= 1e-6 * max(1.0, abs(grads[name][i]))


def test_pooled_away_input_has_exactly_zero_gradient(rng):
    model = tiny_model()
    x = rng.standard_normal((2, 4, 167))
    _, _, dx = cn.loss_and_grad(model, x, [0, 1], input_grad=True, mode="eval")
    # the last input sample only reaches the conv output that max-pooling drops
    assert np.all(dx[:, :, -1] == 0.0)
    assert np.any(dx[:, :, 0] != 0.0)


def test_invalid_labels(rng):
    model = tiny_model()
    with pytest.raises(InvalidInputError):
        cn.loss_and_grad(model, rng.standard_normal((2, 4, 167)), [0, 2])


# --- training ------------------------------------------------------------------------


def small_trials(seed=0, n=40, channels=4, shuffle=False):
    trials = generate(SynthConfig(n_trials=n, n_channels=channels, duration_s=0.8, erp_center_s=0.4,
                                  erp_channels=(1,), seed=seed))
    if shuffle:
        trials = trials.replace(labels=np.random.default_rng(1).permutation(trials.labels))
    return trials


def quick_train(trials, seed=0, epochs=6, **kw):
    cfg = cn.ConvNetConfig(n_channels=trials.n_channels, n_samples=trials.n_samples,
                           n_filters=(8, 8, 16, 16), seed=seed)
    return cn.train(cn.build_model(cfg), trials, cn.TrainConfig(max_epochs=epochs, seed=seed, **kw))


def test_training_is_deterministic():
    trials = small_trials()
    a = quick_train(trials, epochs=3)
    b = quick_train(trials, epochs=3)
    assert a.history == b.history and a.best_epoch == b.best_epoch
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])
    for k in a.model.buffers:
        np.testing.assert_array_equal(a.model.buffers[k], b.model.buffers[k])


def test_training_learns_and_history_is_finite():
    trials = small_trials()
    res = quick_train(trials, epochs=10)
    assert all(np.isfinite(r["train_loss"]) and np.isfinite(r["val_loss"]) for r in res.history)
    assert res.history[res.best_epoch - 1]["val_accuracy"] == max(r["val_accuracy"] for r in res.history)
    assert (cn.predict(res.model, trials) == trials.labels).mean() >= 0.9


def test_batchnorm_train_eval_consistency():
    # whole training set as one batch; dropout masks held at one so that only
    # batch-norm statistics separate the two modes
    trials = small_trials()
    model = quick_train(trials, epochs=10).model
    x = trials.data.astype(model.dtype)
    ones = {i: np.ones(1, dtype=model.dtype) for i in range(2, 5)}
    train_scores = cn._run(model, x, "train", ones, keep_cache=False)[0].mean(axis=0)
    eval_scores = cn.presoftmax(model, x, batch_size=len(x)).mean(axis=0)
    assert np.linalg.norm(train_scores - eval_scores) <= 0.1 * np.linalg.norm(eval_scores)


def test_early_stopping_restores_best():
    res = quick_train(small_trials(shuffle=True), epochs=20, patience=2)
    assert len(res.history) <= 20
    assert len(res.history) - res.best_epoch <= 2


def test_degenerate_split_raises():
    trials = small_trials(n=1)
    with pytest.raises(InvalidInputError):
        quick_train(trials, epochs=1)
    one_class = TrialSet(np.zeros((6, 4, 200)), np.zeros(6), 250, DecodingInterval(0, 0.8))
    with pytest.raises(InvalidInputError):
        quick_train(one_class, epochs=1)


def test_recalibration_removes_dropout_variance_shift(rng):
    model = tiny_model(dropout=0.5)
    x = rng.standard_normal((40, 4, 167))
    cn.recalibrate_batchnorm(model, x, batch_size=40)
    masks = {i: np.ones(1) for i in range(2, 5)}
    lg, _, stats, _ = cn._run(model, x, "train", masks, keep_cache=False)
    for i, (mean, var, n) in stats.items():
        np.testing.assert_allclose(model.buffers[f"bn{i}.running_mean"], mean, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(model.buffers[f"bn{i}.running_var"], var * n / (n - 1), rtol=1e-10)
    # undo the n-1 correction: eval mode then reproduces the dropout-free train pass
    for i, (_, _, n) in stats.items():
        model.buffers[f"bn{i}.running_var"] *= (n - 1) / n
    np.testing.assert_allclose(cn.presoftmax(model, x, 40), lg, rtol=1e-9, atol=1e-9)
