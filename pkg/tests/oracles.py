"""Independent reference implementations the tests check the engine against.

Everything here is deliberately written the slow, obvious way (nested
loops, per-element formulas) and never calls into the package's compute
paths.
"""

import math

import numpy as np


def matmul_ref(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out


def conv2d_ref(x, kernels, bias, stride=1, pad=0):
    """Direct nested-loop convolution, channels last, zero padding."""
    n, h, w, cin = x.shape
    kh, kw, cin2, cout = kernels.shape
    assert cin == cin2
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, out_h, out_w, cout), dtype=np.float64)
    for b_i in range(n):
        for oh in range(out_h):
            for ow in range(out_w):
                for co in range(cout):
                    acc = float(bias[co])
                    for i in range(kh):
                        for j in range(kw):
                            ih = oh * stride + i - pad
                            iw = ow * stride + j - pad
                            if 0 <= ih < h and 0 <= iw < w:
                                for ci in range(cin):
                                    acc += float(x[b_i, ih, iw, ci]) * float(kernels[i, j, ci, co])
                    out[b_i, oh, ow, co] = acc
    return out


def pool_out_ref(size, window, stride):
    return math.ceil((size - window) / stride) + 1


def maxpool_ref(x, window, stride):
    """Brute-force ceiling-mode max pooling with border-clipped windows."""
    n, h, w, c = x.shape
    out_h = pool_out_ref(h, window, stride)
    out_w = pool_out_ref(w, window, stride)
    out = np.zeros((n, out_h, out_w, c), dtype=np.float64)
    for b_i in range(n):
        for oh in range(out_h):
            for ow in range(out_w):
                for ch in range(c):
                    best = -np.inf
                    for i in range(oh * stride, min(oh * stride + window, h)):
                        for j in range(ow * stride, min(ow * stride + window, w)):
                            best = max(best, float(x[b_i, i, j, ch]))
                    out[b_i, oh, ow, ch] = best
    return out


def lrn_ref(x, depth, k, alpha, beta):
    """Per-element across-channel normalization straight from the formula."""
    n, h, w, c = x.shape
    radius = depth // 2
    out = np.zeros_like(x, dtype=np.float64)
    for b_i in range(n):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    acc = 0.0
                    for cc in range(max(0, ch - radius), min(c, ch + radius + 1)):
                        acc += float(x[b_i, i, j, cc]) ** 2
                    out[b_i, i, j, ch] = x[b_i, i, j, ch] / (k + (alpha / depth) * acc) ** beta
    return out


def central_diff(f, x, eps=1e-5):
    """Full central finite differences of a scalar function (test-local oracle)."""
    grad = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        w = x.astype(np.float64).copy()
        w.flat[i] += eps
        up = f(w)
        w.flat[i] -= 2 * eps
        down = f(w)
        grad.flat[i] = (up - down) / (2 * eps)
    return grad


def logistic_probe(pixels, labels01, steps=500, lr=0.5):
    """Plain-gradient-descent logistic regression on raw pixels.

    An independent learnability baseline: returns train accuracy.
    """
    x = pixels.reshape(pixels.shape[0], -1).astype(np.float64)
    x = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    y = labels01.astype(np.float64)
    w = np.zeros(x.shape[1])
    for _ in range(steps):
        p = 1.0 / (1.0 + np.exp(-(x @ w)))
        w -= lr * x.T @ (p - y) / len(y)
    p = 1.0 / (1.0 + np.exp(-(x @ w)))
    return float(np.mean((p > 0.5) == (y > 0.5)))
