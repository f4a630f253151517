"""Tests for the residual U-net: shapes, initialization, modes and exact gradients."""

import numpy as np
import pytest

from vessel_segmentation.errors import ArgumentError, ShapeError
from vessel_segmentation.labelgen import ClassWeights
from vessel_segmentation.network import (
    DownBlock,
    NetConfig,
    ParamStore,
    ResidualUNet,
    ResidualUnit,
    UpBlock,
    block_forward,
    init_params,
    init_store,
    make_context,
    unet_forward,
)
from vessel_segmentation.evaluate import predict_image
from vessel_segmentation.layers import conv2d
from vessel_segmentation.preprocess import GrayImage
from vessel_segmentation.training import total_loss


def test_forward_shapes_and_probabilities(micro_cfg, micro_params, rng):
    x = rng.random((2, 1, 16, 16)).astype(np.float32)
    out = unet_forward(x, micro_params, "eval", micro_cfg)
    assert out.num_sides == micro_cfg.stages == 2
    for prob in out.maps():
        assert prob.shape == (2, 5, 16, 16)
        assert prob.dtype == np.float32
        np.testing.assert_allclose(prob.sum(axis=1), 1.0, atol=1e-5)
        assert (prob >= 0).all()


def test_default_network_has_four_sides(rng):
    cfg = NetConfig()
    params = init_params(cfg, seed=0)
    out = unet_forward(rng.random((1, 1, 16, 16)), params, "eval")
    assert out.num_sides == 4
    assert params["side1.weight"].shape == (5, 128, 1, 1)
    assert params["fuse.weight"].shape == (5, 20, 1, 1)


@pytest.mark.parametrize("shape", [(1, 1, 18, 16), (1, 1, 2, 2), (1, 2, 16, 16), (1, 16, 16)])
def test_bad_input_shapes(micro_cfg, micro_params, shape):
    with pytest.raises(ShapeError):
        unet_forward(np.zeros(shape), micro_params, "eval", micro_cfg)


def test_unknown_mode(micro_cfg, micro_params):
    with pytest.raises(ArgumentError):
        unet_forward(np.zeros((1, 1, 16, 16)), micro_params, "predict", micro_cfg)


def test_initialization_is_seeded_he_normal():
    cfg = NetConfig(channels=(8, 16))
    a, b, c = init_params(cfg, 1), init_params(cfg, 1), init_params(cfg, 2)
    assert a.names() == b.names()
    for name in a.names():
        np.testing.assert_array_equal(a[name], b[name])
    assert not np.array_equal(a["stem.conv.weight"], c["stem.conv.weight"])

    kernel = a["enc2.res.conv1.weight"]
    fan_in = kernel.shape[1] * 9
    assert abs(kernel.std() - np.sqrt(2.0 / fan_in)) < 0.25 * np.sqrt(2.0 / fan_in)
    assert not a["enc2.res.conv1.bias"].any()
    assert (a["enc2.res.bn1.gamma"] == 1).all()
    assert (a["enc2.res.bn1.running_var"] == 1).all()
    assert all(a[name].dtype == np.float32 for name in a.names())


def test_param_store_rejects_duplicates_and_recovers_config(micro_cfg, micro_params):
    with pytest.raises(ArgumentError):
        micro_params.add("stem.conv.weight", np.zeros(1))
    cfg = NetConfig.from_store(micro_params)
    assert cfg.channels == micro_cfg.channels
    with pytest.raises(ShapeError):
        NetConfig.from_store(ParamStore())


def test_eval_is_deterministic_and_train_updates_running_stats(micro_cfg, micro_params, rng):
    x = rng.random((2, 1, 16, 16))
    before = {k: v.copy() for k, v in micro_params.buffers.items()}
    first = unet_forward(x, micro_params, "eval", micro_cfg)
    second = unet_forward(x, micro_params, "eval", micro_cfg)
    np.testing.assert_array_equal(first.fused, second.fused)
    for name, value in before.items():
        np.testing.assert_array_equal(micro_params.buffers[name], value)

    unet_forward(x, micro_params, "train", micro_cfg)
    assert not np.array_equal(micro_params.buffers["stem.bn.running_mean"], before["stem.bn.running_mean"])


def test_dropout_only_in_train_mode(micro_params, rng):
    cfg = NetConfig(channels=(4, 8), dropout=0.5)
    x = rng.random((1, 1, 16, 16))
    a = unet_forward(x, micro_params.copy(), "train", cfg, np.random.default_rng(0))
    b = unet_forward(x, micro_params.copy(), "train", cfg, np.random.default_rng(1))
    assert not np.allclose(a.fused, b.fused)
    c = unet_forward(x, micro_params, "eval", cfg)
    d = unet_forward(x, micro_params, "eval", cfg)
    np.testing.assert_array_equal(c.fused, d.fused)


def test_blocks_change_resolution(micro_cfg, micro_params, rng):
    net = ResidualUNet(micro_cfg)
    down = net.encoders[0]
    assert isinstance(down, DownBlock)
    x = rng.random((2, 4, 16, 16))
    y = block_forward(down, x, micro_params, "eval", cfg=micro_cfg)
    assert y.shape == (2, 8, 8, 8)

    up = net.decoders[-1]
    assert isinstance(up, UpBlock)
    z = block_forward(up, rng.random((2, 8, 8, 8)), micro_params, "eval", skip=rng.random((2, 4, 16, 16)),
                      cfg=micro_cfg)
    assert z.shape == (2, 4, 16, 16)
    with pytest.raises(ShapeError):
        block_forward(up, rng.random((2, 8, 8, 8)), micro_params, "eval", skip=rng.random((2, 4, 8, 8)),
                      cfg=micro_cfg)


def test_zero_parameters_give_uniform_probabilities(micro_cfg, micro_params, rng):
    for value in micro_params.params.values():
        value[...] = 0
    out = unet_forward(rng.random((2, 1, 16, 16)), micro_params, "eval", micro_cfg)
    for prob in out.maps():
        np.testing.assert_allclose(prob, 0.2, atol=1e-6)

    score = predict_image(GrayImage(rng.random((21, 19))), micro_params, stride=8, patch=16,
                          cfg=micro_cfg).vessel_score()
    np.testing.assert_allclose(score, 0.4, atol=1e-6)


def test_residual_unit_with_zero_branch_passes_input_through(micro_cfg, rng):
    x = rng.random((2, 4, 8, 8))

    unit = ResidualUnit("u", 4, 4)
    params = init_store(unit.param_specs(), seed=0).astype(np.float64)
    params["u.conv1.weight"][...] = 0
    params["u.conv2.weight"][...] = 0
    np.testing.assert_allclose(block_forward(unit, x, params, "eval", cfg=micro_cfg), x, atol=1e-12)

    projected = ResidualUnit("p", 4, 6)
    params = init_store(projected.param_specs(), seed=1).astype(np.float64)
    params["p.conv1.weight"][...] = 0
    params["p.conv2.weight"][...] = 0
    expected = np.maximum(conv2d(x, params["p.proj.weight"], params["p.proj.bias"], 1, 0)[0], 0)
    np.testing.assert_allclose(block_forward(projected, x, params, "eval", cfg=micro_cfg), expected, atol=1e-12)


def test_whole_network_gradient_matches_finite_differences(micro_cfg):
    """Total loss gradient against central differences on float64 parameters."""
    h = 1e-5
    params = init_params(micro_cfg, seed=5).astype(np.float64)
    rng = np.random.default_rng(9)
    x = rng.random((2, 1, 16, 16))
    target = rng.integers(0, 5, size=(2, 16, 16))
    weights = ClassWeights((1.0, 2.0, 4.0, 2.0, 4.0))
    lam = 5e-4

    def loss_value():
        out = unet_forward(x, params, "train", micro_cfg)
        return total_loss(out, target, weights, params, lam, 1.0, compute_grads=False).total

    out = unet_forward(x, params, "train", micro_cfg)
    total_loss(out, target, weights, params, lam, 1.0)
    analytic = {name: grad.copy() for name, grad in params.grads.items()}

    names = params.names()
    checked, worst = 0, 0.0
    for _ in range(140):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in params.params[name].shape)
        value = params.params[name]
        saved = value[idx]

        def central(step):
            value[idx] = saved + step
            plus = loss_value()
            value[idx] = saved - step
            minus = loss_value()
            value[idx] = saved
            return (plus - minus) / (2 * step)

        numeric = central(h)
        # a ReLU kink inside the stencil shows up as disagreement between step sizes
        if abs(numeric - central(h / 2)) > 1e-4 * max(abs(numeric), 1e-6):
            continue
        a = analytic[name][idx]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-7))
        checked += 1
    assert checked >= 100
    assert worst < 1e-3
