"""Dense array primitives the layers are built from.

Values are plain numpy arrays in row-major layout, channels last
(H x W x C per image, N x H x W x C per batch).  Floating-point width is
an engine-wide switch rather than a per-array dtype: training runs in
32-bit, gradient checking flips the engine to 64-bit.  A debug-mode
finiteness validator guards every operation's output; the latency
benchmark turns it off.
"""

from __future__ import annotations

import math
import struct
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, DivergenceError, FormatError

_PRECISIONS = {"float32": np.float32, "float64": np.float64}
_precision = "float32"
_finite_checks = True

HFTN_MAGIC = b"HFTN"
HFTN_VERSION = 1
MAX_RANK = 4


def set_precision(name: str) -> None:
    """Switch the engine-wide floating-point width ("float32"/"float64")."""
    global _precision
    if name not in _PRECISIONS:
        raise DimensionError(f"unknown precision {name!r}, expected one of {sorted(_PRECISIONS)}")
    _precision = name


def get_precision() -> str:
    return _precision


def active_dtype():
    """The numpy dtype every constructor should use right now."""
    return _PRECISIONS[_precision]


@contextmanager
def precision(name: str):
    """Temporarily switch precision (gradient checks run under "float64")."""
    previous = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks


@contextmanager
def no_finite_checks():
    """Disable the debug validator, e.g. while timing inference."""
    previous = _finite_checks
    set_finite_checks(False)
    try:
        yield
    finally:
        set_finite_checks(previous)


def validate_finite(arr: np.ndarray, where: str) -> np.ndarray:
    """Debug-mode guard: no operation may emit NaN or infinity.

    min/max both propagate NaN and expose infinities, so two allocation-free
    scans decide the whole array.
    """
    if _finite_checks and arr.size:
        lo = float(arr.min())
        hi = float(arr.max())
        if not (math.isfinite(lo) and math.isfinite(hi)):
            bad = int(np.size(arr) - np.isfinite(arr).sum())
            raise DivergenceError(f"{where}: {bad} non-finite element(s) in result")
    return arr


def validate_shape(dims) -> tuple:
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise DimensionError("shape must be non-empty")
    if any(d < 1 for d in dims):
        raise DimensionError(f"shape {dims} has a non-positive dimension")
    if len(dims) > MAX_RANK:
        raise DimensionError(f"rank {len(dims)} exceeds the supported maximum of {MAX_RANK}")
    return dims


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard 2-D matrix product with explicit shape validation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return validate_finite(a @ b, "matmul")


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise DimensionError(
            f"kernel {k} with stride {stride} and pad {pad} produces no output on extent {size}"
        )
    return out


def im2col_batch(x: np.ndarray, kernel_h: int, kernel_w: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Batched patch matrix: rows ordered (n, out_h, out_w), columns (kh, kw, c)."""
    if x.ndim != 4:
        raise DimensionError(f"im2col expects N x H x W x C input, got shape {x.shape}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"invalid stride {stride} / pad {pad}")
    n, h, w, c = x.shape
    out_h = _out_size(h, kernel_h, stride, pad)
    out_w = _out_size(w, kernel_w, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel_h, kernel_w), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]            # (N, out_h, out_w, C, kh, kw)
    windows = windows.transpose(0, 1, 2, 4, 5, 3)       # (N, out_h, out_w, kh, kw, C)
    return windows.reshape(n * out_h * out_w, kernel_h * kernel_w * c)


def im2col(image: np.ndarray, kernel_h: int, kernel_w: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Single-image patch matrix, one row per output position."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"im2col expects H x W x C input, got shape {image.shape}")
    return im2col_batch(image[None], kernel_h, kernel_w, stride, pad)


def col2im_batch(cols: np.ndarray, x_shape, kernel_h: int, kernel_w: int,
                 stride: int = 1, pad: int = 0) -> np.ndarray:
    """Scatter-add the patch matrix back onto an N x H x W x C canvas."""
    n, h, w, c = x_shape
    out_h = _out_size(h, kernel_h, stride, pad)
    out_w = _out_size(w, kernel_w, stride, pad)
    cols = cols.reshape(n, out_h, out_w, kernel_h, kernel_w, c)
    img = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(kernel_h):
        for j in range(kernel_w):
            img[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :] += cols[:, :, :, i, j, :]
    if pad:
        img = img[:, pad:pad + h, pad:pad + w, :]
    return img


def reduce(t: np.ndarray, kind: str, axis: int | None = None) -> np.ndarray:
    """sum / mean / max reduction over one axis or the whole array."""
    t = np.asarray(t)
    if kind not in ("sum", "mean", "max"):
        raise DimensionError(f"unknown reduction {kind!r}")
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {t.ndim}")
    fn = {"sum": np.sum, "mean": np.mean, "max": np.max}[kind]
    return validate_finite(fn(t, axis=axis), f"reduce[{kind}]")


def argmax(t: np.ndarray) -> int:
    """Index of the maximum of a rank-1 array; ties resolve to the lowest index."""
    t = np.asarray(t)
    if t.ndim != 1 or t.size < 1:
        raise DimensionError(f"argmax expects a non-empty rank-1 array, got shape {t.shape}")
    return int(np.argmax(t))


def write_hftn(path, arr: np.ndarray) -> None:
    """Raw tensor dump: magic, version, rank, u32 dims, little-endian payload."""
    arr = np.asarray(arr)
    dims = validate_shape(arr.shape)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(active_dtype())
    with open(path, "wb") as f:
        f.write(HFTN_MAGIC)
        f.write(struct.pack("<BB", HFTN_VERSION, len(dims)))
        f.write(struct.pack(f"<{len(dims)}I", *dims))
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_hftn(path) -> np.ndarray:
    """Read a raw tensor dump; the float width is inferred from the payload size."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != HFTN_MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    if len(raw) < 6:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != HFTN_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if not 1 <= rank <= MAX_RANK:
        raise FormatError(f"{path}: bad rank {rank} at offset 5")
    header_end = 6 + 4 * rank
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dims at offset {len(raw)}")
    dims = struct.unpack_from(f"<{rank}I", raw, 6)
    validate_shape(dims)
    count = int(np.prod(dims))
    payload = len(raw) - header_end
    if payload == 4 * count:
        dtype = "<f4"
    elif payload == 8 * count:
        dtype = "<f8"
    else:
        raise FormatError(f"{path}: payload of {payload} bytes does not match {count} elements "
                          f"(offset {header_end})")
    return np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims).copy()
