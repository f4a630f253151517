"""
Purpose: Tensor primitives with exact backward passes

High-level Overview:
NumPy implementations of the layers the residual U-net is assembled from. Every
forward function returns `(out, cache)` and has a matching `*_backward(dout, cache)`
that returns gradients for the input and any parameters. Activations are
(batch, channels, height, width). All primitives keep the dtype of their input,
so the same code runs in float32 for training and float64 for gradient checks.

Key Components:
- Cross-correlation and stride-2 transposed convolution over strided window views
- Batch normalization with running statistics
- ReLU, inverted dropout
- Bilinear upsampling (half-pixel centres) as separable interpolation matrices
- Channel softmax

Functions/Classes:
- `conv2d(x, w, b, stride, padding)` / `conv2d_backward(dout, cache)`
- `deconv2d(x, w, b, stride)` / `deconv2d_backward(dout, cache)`
- `batch_norm(x, gamma, beta, running_mean, running_var, train, momentum, eps)` /
  `batch_norm_backward(dout, cache)`
- `relu(x)` / `relu_backward(dout, cache)`
- `dropout(x, rate, train, rng)` / `dropout_backward(dout, cache)`
- `bilinear_matrix(out_size, in_size)`, `upsample(x, factor)` / `upsample_backward(dout, cache)`
- `softmax(z)` / `softmax_backward(dp, p)`
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, ShapeError


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} must be (batch, channels, height, width), got {x.shape}")


def conv2d(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
           stride: int = 1, padding: int = 0):
    """Cross-correlate x (N, C, H, W) with kernels w (O, C, k, k)."""
    _check_4d(x, "conv2d input")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d kernel must be (out, in, k, k), got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel {w.shape}")
    if stride < 1 or padding < 0:
        raise ArgumentError(f"invalid stride {stride} / padding {padding}")
    k = w.shape[2]
    if x.shape[2] + 2 * padding < k or x.shape[3] + 2 * padding < k:
        raise ShapeError(f"conv2d input {x.shape} smaller than kernel {w.shape} with padding {padding}")

    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)
    return out, (x.shape, padded.shape, windows, w, stride, padding)


def conv2d_backward(dout: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d with respect to input, kernel and bias."""
    x_shape, padded_shape, windows, w, stride, padding = cache
    k = w.shape[2]
    out_h, out_w = dout.shape[2], dout.shape[3]

    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))

    # (N, Ho, Wo, C, k, k): contribution of each output pixel to every kernel tap
    taps = np.tensordot(dout, w, axes=([1], [0]))
    dpadded = np.zeros(padded_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dpadded[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += \
                taps[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dx = dpadded[:, :, padding:padding + x_shape[2], padding:padding + x_shape[3]]
    else:
        dx = dpadded
    return np.ascontiguousarray(dx), dw.astype(dout.dtype, copy=False), db


def deconv2d(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None, stride: int = 2):
    """Transposed convolution of x (N, Cin, H, W) with kernels w (Cin, Cout, k, k)."""
    _check_4d(x, "deconv2d input")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"deconv2d kernel must be (in, out, k, k), got {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"deconv2d input {x.shape} does not match kernel {w.shape}")
    n, _, h, wd = x.shape
    k = w.shape[2]
    out = np.zeros((n, w.shape[1], (h - 1) * stride + k, (wd - 1) * stride + k), dtype=x.dtype)

    taps = np.tensordot(x, w, axes=([1], [0]))  # (N, H, W, Cout, k, k)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * (h - 1) + 1:stride, j:j + stride * (wd - 1) + 1:stride] += \
                taps[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if b is not None:
        out += b[None, :, None, None]
    return out, (x, w, stride)


def deconv2d_backward(dout: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of deconv2d with respect to input, kernel and bias."""
    x, w, stride = cache
    _, _, h, wd = x.shape
    k = w.shape[2]
    dx = np.zeros_like(x, dtype=dout.dtype)
    dw = np.zeros(w.shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            tap = dout[:, :, i:i + stride * (h - 1) + 1:stride, j:j + stride * (wd - 1) + 1:stride]
            dx += np.tensordot(tap, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
            dw[:, :, i, j] = np.tensordot(x, tap, axes=([0, 2, 3], [0, 2, 3]))
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def batch_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               running_mean: np.ndarray, running_var: np.ndarray,
               train: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalization.

    Returns `(out, cache, (running_mean, running_var))`; train mode normalizes with
    batch statistics and returns updated running statistics, eval mode uses and
    returns the running statistics unchanged.
    """
    _check_4d(x, "batch_norm input")
    if gamma.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm scale {gamma.shape} does not match input {x.shape}")
    axes = (0, 2, 3)
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / (count - 1) if count > 1 else var
        new_mean = ((1 - momentum) * running_mean + momentum * mean).astype(running_mean.dtype)
        new_var = ((1 - momentum) * running_var + momentum * unbiased).astype(running_var.dtype)
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)
        new_mean, new_var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    return out.astype(x.dtype, copy=False), (x_hat, gamma, inv_std, train), (new_mean, new_var)


def batch_norm_backward(dout: np.ndarray, cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of batch_norm with respect to input, scale and shift."""
    x_hat, gamma, inv_std, train = cache
    axes = (0, 2, 3)
    dgamma = (dout * x_hat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dx_hat = dout * gamma[None, :, None, None]
    if not train:
        return dx_hat * inv_std[None, :, None, None], dgamma, dbeta

    count = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (inv_std[None, :, None, None] / count) * (
        count * dx_hat
        - dx_hat.sum(axis=axes)[None, :, None, None]
        - x_hat * (dx_hat * x_hat).sum(axis=axes)[None, :, None, None]
    )
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout * cache


def dropout(x: np.ndarray, rate: float, train: bool, rng: Optional[np.random.Generator] = None):
    """Inverted dropout; a no-op outside train mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    rng = rng if rng is not None else np.random.default_rng(0)
    mask = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.dtype)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, cache) -> np.ndarray:
    return dout if cache is None else dout * cache


def bilinear_matrix(out_size: int, in_size: int, dtype=np.float64) -> np.ndarray:
    """(out_size, in_size) interpolation matrix with half-pixel centres."""
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    scale = in_size / out_size
    for dst in range(out_size):
        src = max((dst + 0.5) * scale - 0.5, 0.0)
        lo = min(int(np.floor(src)), in_size - 1)
        hi = min(lo + 1, in_size - 1)
        frac = src - lo
        matrix[dst, lo] += 1.0 - frac
        matrix[dst, hi] += frac
    return matrix.astype(dtype)


def upsample(x: np.ndarray, factor: int):
    """Bilinear upsampling of the spatial dims by an integer factor."""
    _check_4d(x, "upsample input")
    if factor < 1:
        raise ArgumentError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return x, None
    rows = bilinear_matrix(x.shape[2] * factor, x.shape[2], x.dtype)
    cols = bilinear_matrix(x.shape[3] * factor, x.shape[3], x.dtype)
    return np.matmul(np.matmul(rows, x), cols.T), (rows, cols)


def upsample_backward(dout: np.ndarray, cache) -> np.ndarray:
    if cache is None:
        return dout
    rows, cols = cache
    return np.matmul(np.matmul(rows.T, dout), cols)


def softmax(z: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Gradient with respect to logits given the gradient with respect to probabilities."""
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))
