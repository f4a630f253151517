"""Finite-difference and reference checks for the tensor primitives."""

import numpy as np
import pytest

from vessel_segmentation.errors import ArgumentError, ShapeError
from vessel_segmentation.layers import (
    batch_norm,
    batch_norm_backward,
    bilinear_matrix,
    conv2d,
    conv2d_backward,
    deconv2d,
    deconv2d_backward,
    dropout,
    softmax,
    softmax_backward,
    upsample,
    upsample_backward,
)

H = 1e-3


def numeric_grad(f, x, h=H):
    """Central differences of the scalar f() with respect to every entry of x (in place)."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        saved = x[idx]
        x[idx] = saved + h
        plus = f()
        x[idx] = saved - h
        minus = f()
        x[idx] = saved
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def assert_close(analytic, numeric, tol=1e-6):
    scale = np.maximum(1.0, np.abs(numeric))
    assert np.max(np.abs(analytic - numeric) / scale) < tol


def naive_conv(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            window = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.tensordot(window, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


@pytest.mark.parametrize("stride, padding, k", [(1, 1, 3), (2, 1, 3), (1, 0, 1)])
def test_conv2d_forward_and_gradients(rng, stride, padding, k):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out, cache = conv2d(x, w, b, stride, padding)
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride, padding), atol=1e-12)

    r = rng.standard_normal(out.shape)
    dx, dw, db = conv2d_backward(r, cache)

    def loss():
        return float(np.sum(conv2d(x, w, b, stride, padding)[0] * r))

    assert_close(dx, numeric_grad(loss, x))
    assert_close(dw, numeric_grad(loss, w))
    assert_close(db, numeric_grad(loss, b))


def test_conv2d_shape_errors(rng):
    with pytest.raises(ShapeError):
        conv2d(rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((3, 3, 3, 3)))
    with pytest.raises(ShapeError):
        conv2d(rng.standard_normal((2, 4, 4)), rng.standard_normal((3, 2, 3, 3)))


def test_deconv2d_gradients_and_shape(rng):
    x = rng.standard_normal((2, 3, 3, 4))
    w = rng.standard_normal((3, 2, 2, 2))
    b = rng.standard_normal(2)
    out, cache = deconv2d(x, w, b)
    assert out.shape == (2, 2, 6, 8)
    # each input pixel paints one non-overlapping 2x2 block
    np.testing.assert_allclose(out[0, 1, 2:4, 4:6], np.einsum("c,cij->ij", x[0, :, 1, 2], w[:, 1]) + b[1])

    r = rng.standard_normal(out.shape)
    dx, dw, db = deconv2d_backward(r, cache)

    def loss():
        return float(np.sum(deconv2d(x, w, b)[0] * r))

    assert_close(dx, numeric_grad(loss, x))
    assert_close(dw, numeric_grad(loss, w))
    assert_close(db, numeric_grad(loss, b))


@pytest.mark.parametrize("train", [True, False])
def test_batch_norm_gradients(rng, train):
    x = rng.standard_normal((3, 2, 4, 4)) * 2 + 1
    gamma = rng.standard_normal(2)
    beta = rng.standard_normal(2)
    rm, rv = rng.standard_normal(2), rng.random(2) + 0.5
    out, cache, _ = batch_norm(x, gamma, beta, rm, rv, train)
    r = rng.standard_normal(out.shape)
    dx, dgamma, dbeta = batch_norm_backward(r, cache)

    def loss():
        return float(np.sum(batch_norm(x, gamma, beta, rm, rv, train)[0] * r))

    assert_close(dx, numeric_grad(loss, x), tol=1e-4)
    assert_close(dgamma, numeric_grad(loss, gamma), tol=1e-4)
    assert_close(dbeta, numeric_grad(loss, beta), tol=1e-4)


def test_batch_norm_running_statistics(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 3 + 2
    rm, rv = np.zeros(3), np.ones(3)
    out, _, (new_mean, new_var) = batch_norm(x, np.ones(3), np.zeros(3), rm, rv, True, momentum=0.1)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(new_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(new_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))

    eval_out, _, (same_mean, same_var) = batch_norm(x, np.ones(3), np.zeros(3), rm, rv, False)
    np.testing.assert_allclose(eval_out, x / np.sqrt(1 + 1e-5))
    assert same_mean is rm and same_var is rv


def test_dropout_is_inverted_and_seeded(rng):
    x = np.ones((2, 4, 16, 16))
    out, mask = dropout(x, 0.25, True, np.random.default_rng(0))
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    again, _ = dropout(x, 0.25, True, np.random.default_rng(0))
    np.testing.assert_array_equal(out, again)
    same, cache = dropout(x, 0.25, False)
    assert same is x and cache is None
    with pytest.raises(ArgumentError):
        dropout(x, 1.0, True)


def test_bilinear_upsampling(rng):
    matrix = bilinear_matrix(8, 4)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0)
    const = np.full((1, 2, 3, 3), 0.7)
    np.testing.assert_allclose(upsample(const, 4)[0], 0.7)

    x = rng.standard_normal((1, 2, 3, 4))
    out, cache = upsample(x, 2)
    assert out.shape == (1, 2, 6, 8)
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(upsample(x, 2)[0] * r))

    assert_close(upsample_backward(r, cache), numeric_grad(loss, x))
    same, none = upsample(x, 1)
    assert same is x and none is None


def test_softmax_and_backward(rng):
    z = rng.standard_normal((2, 5, 3, 3)) * 5
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(softmax(z + 100.0), p)

    r = rng.standard_normal(p.shape)

    def loss():
        return float(np.sum(softmax(z) * r))

    assert_close(softmax_backward(r, p), numeric_grad(loss, z), tol=1e-5)


def test_primitives_preserve_float32(rng):
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    assert conv2d(x, w, np.zeros(3, np.float32), 1, 1)[0].dtype == np.float32
    assert upsample(x, 2)[0].dtype == np.float32
    assert softmax(x).dtype == np.float32
