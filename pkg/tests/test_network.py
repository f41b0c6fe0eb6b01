"""Forward semantics, dropout-mask relaxation, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abcdconformal import nn


def tiny_model(w=2.0, b=0.0, shift=0.0, scale=1.0, with_dropout=False):
    layers = []
    if with_dropout:
        layers.append(nn.concrete_dropout(0.3))
    layers.append(nn.dense(2))
    spec = nn.NetworkSpec(layers=tuple(layers), input_shape=(1,), output_dim=1)
    params = nn.init_params(spec, np.random.default_rng(0))
    params[-1][0][:] = np.array([[w, 0.0]])
    params[-1][1][:] = np.array([b, 0.0])
    return nn.TrainedModel(
        spec=spec,
        params=params,
        target_shift=np.array([shift]),
        target_scale=np.array([scale]),
        input_shift=np.zeros(1),
        input_scale=np.ones(1),
    )


def test_single_dense_layer_forward():
    model = tiny_model(w=2.0)
    mean, aleatoric = nn.forward(model, np.array([3.0]))
    assert mean == pytest.approx([6.0])
    assert aleatoric[0] > 0.0


def test_zero_weights_give_destandardized_bias():
    model = tiny_model(w=0.0, b=0.25, shift=1.5, scale=2.0)
    mean, _ = nn.forward(model, np.array([123.0]))
    assert mean == pytest.approx([1.5 + 2.0 * 0.25])


def test_stochastic_forward_deterministic_given_seed():
    model = tiny_model(with_dropout=True)
    a = nn.forward(model, np.array([3.0]), mode="stochastic", noise_seed=99)
    b = nn.forward(model, np.array([3.0]), mode="stochastic", noise_seed=99)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = nn.forward(model, np.array([3.0]), mode="stochastic", noise_seed=100)
    assert not np.array_equal(a[0], c[0])


def test_shape_mismatch_rejected():
    model = tiny_model()
    with pytest.raises(nn.ShapeError):
        nn.forward(model, np.array([1.0, 2.0]))


def test_aleatoric_always_positive():
    model = tiny_model(scale=0.5)
    model.params[-1][1][1] = -40.0  # extreme log-variance bias
    _, aleatoric = nn.forward(model, np.array([1.0]))
    assert aleatoric[0] > 0.0


def test_dropout_mask_symmetry_point():
    # p = u = 0.5 puts the pre-sigmoid argument at zero
    mask = nn.concrete_dropout_mask(0.5, 1.0, 0.5)
    assert mask == pytest.approx(0.5)


def test_dropout_mask_small_p_keeps_everything():
    mask = nn.concrete_dropout_mask(1e-12, 1.0, 0.5)
    assert mask == pytest.approx(1.0, abs=1e-9)


def test_dropout_mask_keep_rate_monte_carlo():
    # keep-rate oracle: mean mask at p=0.3 approximates 0.7
    rng = np.random.default_rng(7)
    u = rng.random(100_000)
    masks = nn.concrete_dropout_mask(0.3, 0.1, u)
    assert abs(masks.mean() - 0.7) < 0.01


def test_dropout_mask_validates_inputs():
    with pytest.raises(ValueError):
        nn.concrete_dropout_mask(0.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        nn.concrete_dropout_mask(1.0, 0.1, 0.5)
    with pytest.raises(ValueError):
        nn.concrete_dropout_mask(0.5, -1.0, 0.5)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=4),
    st.floats(0.1, 10.0),
)
def test_standardization_round_trip(values, scale):
    theta = np.array(values)
    model = tiny_model()
    model.target_shift = np.full(theta.shape, 3.7)
    model.target_scale = np.full(theta.shape, scale)
    back = model.destandardize_targets(model.standardize_targets(theta))
    np.testing.assert_allclose(back, theta, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    spec = nn.NetworkSpec(
        layers=(
            nn.conv1d(3, 3),
            nn.activation("relu"),
            nn.maxpool(2),
            nn.flatten(),
            nn.concrete_dropout(0.2),
            nn.dense(4),
        ),
        input_shape=(1, 8),
        output_dim=2,
        input_transform="standardize",
    )
    rng = np.random.default_rng(5)
    model = nn.TrainedModel(
        spec=spec,
        params=nn.init_params(spec, rng),
        target_shift=np.array([0.1, -0.2]),
        target_scale=np.array([1.0, 2.0]),
        input_shift=np.array([0.5]),
        input_scale=np.array([1.5]),
        metadata={"seed": 5, "epochs_run": 0, "best_epoch": -1},
    )
    path = tmp_path / "model.ckpt"
    nn.save_model(path, model)
    loaded = nn.load_model(path)
    assert loaded.spec == model.spec
    for a, b in zip(model.params, loaded.params):
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)
    x = rng.normal(size=(1, 8))
    np.testing.assert_array_equal(nn.forward(model, x)[0], nn.forward(loaded, x)[0])


def test_checkpoint_bytes_deterministic(tmp_path):
    model = tiny_model()
    nn.save_model(tmp_path / "a.ckpt", model)
    nn.save_model(tmp_path / "b.ckpt", model)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
