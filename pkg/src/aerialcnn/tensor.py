"""Dense tensor kernels shared by every layer.

All arrays are row-major numpy ndarrays. Image batches use the N x C x H x W
layout. The engine computes in float32 by default and exposes float64 for
gradient verification; both dtypes run through the same code paths.

Every public function validates shapes up front and checks its result for
NaN/Inf before returning: a non-finite value is an error condition here,
never something to propagate silently. The functions are pure (no hidden
state), so callers may safely invoke them from worker threads; reduction
order inside a single call is fixed by numpy/BLAS, so results for a given
input are reproducible on the same build.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericsError, ShapeError, ValidationError

DEFAULT_DTYPE = np.dtype(np.float32)
VERIFY_DTYPE = np.dtype(np.float64)

PADDING_MODES = ("same", "valid")


def ensure_finite(array, context):
    """Raise NumericsError unless every element of ``array`` is finite."""
    if not np.all(np.isfinite(array)):
        raise NumericsError(f"non-finite values in {context}")
    return array


def out_dim(in_size, kernel, stride, padding):
    """Output length along one spatial axis.

    'same' pads so the output covers ceil(in/stride) positions; 'valid'
    slides the kernel only over fully covered positions.
    """
    if in_size < 1 or kernel < 1 or stride < 1:
        raise ValidationError(
            f"sizes must be positive, got in={in_size} kernel={kernel} stride={stride}"
        )
    if padding == "same":
        return -(-in_size // stride)
    if padding == "valid":
        if kernel > in_size:
            raise ShapeError(
                f"kernel {kernel} does not fit input of size {in_size} with valid padding"
            )
        return (in_size - kernel) // stride + 1
    raise ValidationError(f"unknown padding mode {padding!r}")


def pad_amounts(in_size, kernel, stride, padding):
    """(before, after) zero padding for one axis.

    For 'same' the total padding is max((out-1)*stride + kernel - in, 0)
    and the odd unit goes after (bottom/right), matching the convention
    of the reference implementations this engine mirrors.
    """
    if padding == "valid":
        out_dim(in_size, kernel, stride, padding)  # validates fit
        return 0, 0
    out = out_dim(in_size, kernel, stride, padding)
    total = max((out - 1) * stride + kernel - in_size, 0)
    before = total // 2
    return before, total - before


class ConvGeometry(NamedTuple):
    out_h: int
    out_w: int
    pad_top: int
    pad_bottom: int
    pad_left: int
    pad_right: int


def conv_geometry(height, width, kernel, stride, padding):
    """Resolve output size and per-edge padding for a 2-d sliding window."""
    kh, kw = kernel
    sh, sw = stride
    pt, pb = pad_amounts(height, kh, sh, padding)
    pl, pr = pad_amounts(width, kw, sw, padding)
    return ConvGeometry(
        out_dim(height, kh, sh, padding),
        out_dim(width, kw, sw, padding),
        pt, pb, pl, pr,
    )


def matmul(a, b):
    """Plain 2-d matrix product with shape validation and a finite check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return ensure_finite(a @ b, "matmul output")


def _validate_batch(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"expected N x C x H x W input, got shape {x.shape}")
    return x


def im2col(x, kernel, stride, padding, pad_value=0.0):
    """Unfold image patches into a (C*kH*kW) x (N*outH*outW) matrix.

    Row index varies fastest over kw, then kh, then channel; column index
    varies fastest over output width, then output height, then batch. This
    is the layout conv2d relies on to phrase convolution as one GEMM.
    """
    x = _validate_batch(x)
    n, c, h, w = x.shape
    kh, kw = kernel
    sh, sw = stride
    geom = conv_geometry(h, w, kernel, stride, padding)
    padded = np.pad(
        x,
        ((0, 0), (0, 0), (geom.pad_top, geom.pad_bottom), (geom.pad_left, geom.pad_right)),
        mode="constant",
        constant_values=pad_value,
    )
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw][:, :, : geom.out_h, : geom.out_w]
    # (n, c, oh, ow, kh, kw) -> (c, kh, kw, n, oh, ow), then flatten rows/cols.
    cols = windows.transpose(1, 4, 5, 0, 2, 3)
    cols = np.ascontiguousarray(cols).reshape(c * kh * kw, n * geom.out_h * geom.out_w)
    return ensure_finite(cols, "im2col output")


def col2im(cols, input_shape, kernel, stride, padding):
    """Adjoint of im2col: fold patch columns back, summing overlaps.

    ``input_shape`` is the N x C x H x W shape the columns were unfolded
    from; positions that came from padding are dropped.
    """
    cols = np.asarray(cols)
    n, c, h, w = input_shape
    kh, kw = kernel
    sh, sw = stride
    geom = conv_geometry(h, w, kernel, stride, padding)
    expected = (c * kh * kw, n * geom.out_h * geom.out_w)
    if cols.shape != expected:
        raise ShapeError(f"columns shape {cols.shape} does not match expected {expected}")
    patches = cols.reshape(c, kh, kw, n, geom.out_h, geom.out_w)
    padded = np.zeros(
        (n, c, h + geom.pad_top + geom.pad_bottom, w + geom.pad_left + geom.pad_right),
        dtype=cols.dtype,
    )
    for r in range(kh):
        row_stop = r + (geom.out_h - 1) * sh + 1
        for s in range(kw):
            col_stop = s + (geom.out_w - 1) * sw + 1
            padded[:, :, r:row_stop:sh, s:col_stop:sw] += patches[:, r, s].transpose(1, 0, 2, 3)
    folded = padded[:, :, geom.pad_top : geom.pad_top + h, geom.pad_left : geom.pad_left + w]
    return ensure_finite(np.ascontiguousarray(folded), "col2im output")


def argmax_axis(t, axis):
    """Index of the maximum along ``axis``; ties resolve to the lowest index."""
    t = np.asarray(t)
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    if t.shape[axis] == 0:
        raise ShapeError("cannot take argmax along an empty axis")
    return np.argmax(t, axis=axis)
