"""Forward and backward passes for every layer kind in the two networks.

Convolution goes through im2col + GEMM.  Pooling runs in ceiling mode with
border-clipped windows so 32 -> 16 -> 8 under window 3 / stride 2.  Dropout
is inverted (train-time scaling) so inference is the exact identity.  Each
backward consumes the cache produced by its own forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ConfigError, DataError, DimensionError


@dataclass
class ConvParams:
    kernels: np.ndarray   # kh x kw x Cin x Cout
    bias: np.ndarray      # Cout
    stride: int = 1
    pad: int = 0


@dataclass
class FcParams:
    weights: np.ndarray   # In x Out
    bias: np.ndarray      # Out


@dataclass(frozen=True)
class LrnParams:
    """Across-channel response normalization: a / (k + alpha/n * window_sum(a^2))^beta.

    ``depth`` is the full window size n; the window spans depth//2 channels
    on each side, clipped at the channel boundaries.
    """
    depth: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75


def conv2d_forward(x: np.ndarray, p: ConvParams):
    kh, kw, cin, cout = p.kernels.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise DimensionError(f"conv2d input {x.shape} does not match kernels {p.kernels.shape}")
    n, h, w, _ = x.shape
    cols = tensor.im2col_batch(x, kh, kw, p.stride, p.pad)
    out_h = (h + 2 * p.pad - kh) // p.stride + 1
    out_w = (w + 2 * p.pad - kw) // p.stride + 1
    flat = cols @ p.kernels.reshape(kh * kw * cin, cout) + p.bias
    out = flat.reshape(n, out_h, out_w, cout)
    tensor.validate_finite(out, "conv2d")
    return out, (cols, x.shape, p)


def conv2d_backward(d_out: np.ndarray, cache):
    cols, x_shape, p = cache
    kh, kw, cin, cout = p.kernels.shape
    d_flat = d_out.reshape(-1, cout)
    d_kernels = (cols.T @ d_flat).reshape(p.kernels.shape)
    d_bias = d_flat.sum(axis=0)
    d_cols = d_flat @ p.kernels.reshape(kh * kw * cin, cout).T
    d_x = tensor.col2im_batch(d_cols, x_shape, kh, kw, p.stride, p.pad)
    tensor.validate_finite(d_x, "conv2d backward")
    return d_x, d_kernels, d_bias


def pool_output_size(size: int, window: int, stride: int) -> int:
    """Ceiling-mode pooled extent; the last window may be clipped at the border."""
    if window > size:
        raise DimensionError(f"pool window {window} exceeds input extent {size}")
    return math.ceil((size - window) / stride) + 1


def maxpool_forward(x: np.ndarray, window: int, stride: int):
    """Ceiling-mode max pooling; border windows are clipped.

    Clipping is realized by padding bottom/right with -inf, which can never
    win a window, so argmax positions keep the lowest-index tie-break of
    the clipped enumeration.
    """
    if window < 1 or stride < 1:
        raise DimensionError(f"invalid pool window {window} / stride {stride}")
    n, h, w, c = x.shape
    out_h = pool_output_size(h, window, stride)
    out_w = pool_output_size(w, window, stride)
    pad_h = (out_h - 1) * stride + window - h
    pad_w = (out_w - 1) * stride + window - w
    xp = x
    if pad_h or pad_w:
        xp = np.pad(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), constant_values=-np.inf)
    view = np.lib.stride_tricks.sliding_window_view(xp, (window, window), axis=(1, 2))
    windows = view[:, ::stride, ::stride].reshape(n, out_h, out_w, c, window * window)
    idx = windows.argmax(axis=4)                  # first maximum = lowest index
    out = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
    tensor.validate_finite(out, "maxpool")
    return out, (x.shape, window, stride, idx)


def maxpool_backward(d_out: np.ndarray, cache):
    x_shape, window, stride, idx = cache
    n, h, w, c = x_shape
    out_h, out_w = idx.shape[1:3]
    pad_h = (out_h - 1) * stride + window - h
    pad_w = (out_w - 1) * stride + window - w
    d_xp = np.zeros((n, h + pad_h, w + pad_w, c), dtype=d_out.dtype)
    for slot in range(window * window):
        routed = np.where(idx == slot, d_out, 0)
        di, dj = divmod(slot, window)
        d_xp[:, di:di + out_h * stride:stride, dj:dj + out_w * stride:stride, :] += routed
    if pad_h or pad_w:
        d_xp = d_xp[:, :h, :w, :]
    return d_xp


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(d_out: np.ndarray, cache):
    return d_out * cache


def _channel_window_sum(t: np.ndarray, radius: int) -> np.ndarray:
    """Sum over a clipped window of +-radius neighbours along the channel axis."""
    total = t.copy()
    for offset in range(1, radius + 1):
        total[..., offset:] += t[..., :-offset]
        total[..., :-offset] += t[..., offset:]
    return total


def lrn_forward(x: np.ndarray, p: LrnParams):
    radius = p.depth // 2
    denom = p.k + (p.alpha / p.depth) * _channel_window_sum(x * x, radius)
    scale = denom ** (-p.beta)
    out = x * scale
    tensor.validate_finite(out, "lrn")
    return out, (x, denom, scale, p)


def lrn_backward(d_out: np.ndarray, cache):
    x, denom, scale, p = cache
    radius = p.depth // 2
    inner = _channel_window_sum(d_out * x * (scale / denom), radius)   # scale/denom == denom^(-beta-1)
    d_x = d_out * scale - (2.0 * p.alpha * p.beta / p.depth) * x * inner
    tensor.validate_finite(d_x, "lrn backward")
    return d_x


def fc_forward(x: np.ndarray, p: FcParams):
    if x.ndim != 2 or x.shape[1] != p.weights.shape[0]:
        raise DimensionError(f"fc input {x.shape} does not match weights {p.weights.shape}")
    out = tensor.matmul(x, p.weights) + p.bias
    return out, (x, p)


def fc_backward(d_out: np.ndarray, cache):
    x, p = cache
    d_x = tensor.matmul(d_out, p.weights.T)
    d_w = tensor.matmul(x.T, d_out)
    d_b = d_out.sum(axis=0)
    return d_x, d_w, d_b


def dropout_forward(x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None):
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(d_out: np.ndarray, cache):
    return d_out if cache is None else d_out * cache


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row maximum."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    tensor.validate_finite(probs, "softmax")
    return probs


def _validate_onehot(onehot: np.ndarray) -> None:
    if onehot.ndim != 2:
        raise DataError(f"one-hot labels must be rank-2, got shape {onehot.shape}")
    binary = (onehot == 0) | (onehot == 1)
    if not binary.all() or not (onehot.sum(axis=1) == 1).all():
        raise DataError("malformed one-hot row: each row must contain exactly one 1")


def softmax_cross_entropy(logits: np.ndarray, onehot: np.ndarray):
    """Mean cross-entropy over the batch plus the per-row probabilities."""
    _validate_onehot(onehot)
    if logits.shape != onehot.shape:
        raise DimensionError(f"logits {logits.shape} vs labels {onehot.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = float(-(onehot * log_probs).sum(axis=1).mean())
    probs = np.exp(log_probs)
    tensor.validate_finite(probs, "softmax_cross_entropy")
    return probs, loss


def softmax_cross_entropy_backward(probs: np.ndarray, onehot: np.ndarray) -> np.ndarray:
    """Fused gradient of the mean loss with respect to the logits: (p - y) / N."""
    return (probs - onehot) / probs.shape[0]
