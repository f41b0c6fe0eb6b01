"""Training loop: determinism, early stopping, regression sanity."""

import numpy as np
import pytest

from abcdconformal import nn


def linear_dataset(n, seed, noise_sd=0.1):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    theta = 2.0 * x + rng.normal(scale=noise_sd, size=(n, 1))
    return x, theta


def small_spec():
    return nn.NetworkSpec(
        layers=(nn.dense(16), nn.activation("tanh"), nn.concrete_dropout(0.1), nn.dense(2)),
        input_shape=(1,),
        output_dim=1,
    )


def test_zero_learning_rate_keeps_initial_weights():
    from abcdconformal.seeding import derive_rng

    spec = small_spec()
    cfg = nn.TrainConfig(epochs=3, learning_rate=0.0, seed=11, patience=5)
    # the training loop derives its init rng from (seed, 0)
    initial = nn.init_params(spec, derive_rng(11, 0))
    model = nn.train(spec, linear_dataset(64, 0), linear_dataset(32, 1), cfg)
    for got, want in zip(model.params, initial):
        for a, b in zip(got, want):
            np.testing.assert_array_equal(a, b)


def test_linear_regression_beats_noise_floor():
    # closed-form least squares leaves only the noise variance; the net
    # must land within 1.5x of it on held-out data
    noise_sd = 0.1
    x_tr, y_tr = linear_dataset(512, 0, noise_sd)
    x_va, y_va = linear_dataset(256, 1, noise_sd)
    spec = small_spec()
    cfg = nn.TrainConfig(epochs=120, seed=3, batch_size=32, patience=30)
    model = nn.train(spec, (x_tr, y_tr), (x_va, y_va), cfg)
    preds = nn.predict_mean_batch(model, x_va)
    mse = float(np.mean((preds - y_va) ** 2))
    assert mse < 1.5 * noise_sd**2


def test_training_bit_identical_given_seed():
    spec = small_spec()
    cfg = nn.TrainConfig(epochs=5, seed=21)
    data = (linear_dataset(96, 5), linear_dataset(48, 6))
    m1 = nn.train(spec, data[0], data[1], cfg)
    m2 = nn.train(spec, data[0], data[1], cfg)
    for a, b in zip(m1.params, m2.params):
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)
    assert m1.metadata == m2.metadata


def test_early_stopping_records_best_epoch():
    spec = small_spec()
    cfg = nn.TrainConfig(epochs=40, seed=2, patience=4)
    model = nn.train(spec, linear_dataset(128, 7), linear_dataset(64, 8), cfg)
    assert model.metadata["best_epoch"] >= 0
    assert model.metadata["epochs_run"] <= 40
    assert np.isfinite(model.metadata["val_loss"])


def test_learned_dropout_probability_stays_in_unit_interval():
    spec = small_spec()
    cfg = nn.TrainConfig(epochs=10, seed=4)
    model = nn.train(spec, linear_dataset(128, 9), linear_dataset(64, 10), cfg)
    for p in model.dropout_probs():
        assert 0.0 < p < 1.0


def test_model_loss_and_grad_empty_batch():
    spec = small_spec()
    cfg = nn.TrainConfig(epochs=1, seed=4)
    model = nn.train(spec, linear_dataset(64, 9), linear_dataset(32, 10), cfg)
    with pytest.raises(ValueError):
        nn.model_loss_and_grad(model, [])


def test_config_validation():
    with pytest.raises(ValueError):
        nn.TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        nn.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        nn.TrainConfig(dropout_temperature=0.0)
