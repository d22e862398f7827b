"""Layer forward passes and their exact backward adjoints.

Each forward function returns ``(output, cache)`` where the cache holds
exactly what the matching backward needs. ``layer_backward`` dispatches on
the layer kind string and returns ``(input_grad, param_grads)`` with
parameter gradients keyed by the short names used in weight containers
("weight", "bias", ...). Layers hold no state of their own; parameters
travel in small config dataclasses so the same functions serve any graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import EngineError, ShapeError, ValidationError

ACTIVATION_KINDS = ("relu", "relu6", "linear")


# ---------------------------------------------------------------------------
# convolution


@dataclass
class Conv2dParams:
    """Standard convolution: weight is out_ch x in_ch x kH x kW."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: str = "same"


def conv2d_forward(x, params):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects N x C x H x W, got {x.shape}")
    out_ch, in_ch, kh, kw = params.weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {in_ch}")
    n = x.shape[0]
    geom = tensor.conv_geometry(x.shape[2], x.shape[3], (kh, kw), params.stride, params.padding)
    cols = tensor.im2col(x, (kh, kw), params.stride, params.padding)
    flat = tensor.matmul(params.weight.reshape(out_ch, -1), cols)
    out = flat.reshape(out_ch, n, geom.out_h, geom.out_w).transpose(1, 0, 2, 3)
    if params.bias is not None:
        out = out + params.bias[None, :, None, None]
    cache = (params, cols, x.shape)
    return tensor.ensure_finite(np.ascontiguousarray(out), "conv2d output"), cache


def conv2d_backward(cache, upstream):
    params, cols, x_shape = cache
    out_ch, _, kh, kw = params.weight.shape
    up = np.asarray(upstream).transpose(1, 0, 2, 3).reshape(out_ch, -1)
    grad_weight = tensor.matmul(up, cols.T).reshape(params.weight.shape)
    grads = {"weight": grad_weight}
    if params.bias is not None:
        grads["bias"] = up.sum(axis=1)
    dcols = tensor.matmul(params.weight.reshape(out_ch, -1).T, up)
    dx = tensor.col2im(dcols, x_shape, (kh, kw), params.stride, params.padding)
    return dx, grads


@dataclass
class DepthwiseConv2dParams:
    """Depthwise convolution: weight is channels x 1 x kH x kW, one filter
    per input channel, no cross-channel mixing."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: str = "same"


def depthwise_conv2d_forward(x, params):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"depthwise conv expects N x C x H x W, got {x.shape}")
    ch, one, kh, kw = params.weight.shape
    if one != 1:
        raise ShapeError(f"depthwise weight must be C x 1 x kH x kW, got {params.weight.shape}")
    if x.shape[1] != ch:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {ch}")
    n = x.shape[0]
    geom = tensor.conv_geometry(x.shape[2], x.shape[3], (kh, kw), params.stride, params.padding)
    cols = tensor.im2col(x, (kh, kw), params.stride, params.padding)
    # Rows of cols group as (channel, kh*kw); contract the tap axis per channel.
    grouped = cols.reshape(ch, kh * kw, -1)
    flat = np.einsum("ck,ckp->cp", params.weight.reshape(ch, kh * kw), grouped)
    out = flat.reshape(ch, n, geom.out_h, geom.out_w).transpose(1, 0, 2, 3)
    if params.bias is not None:
        out = out + params.bias[None, :, None, None]
    cache = (params, grouped, x.shape)
    return tensor.ensure_finite(np.ascontiguousarray(out), "depthwise conv output"), cache


def depthwise_conv2d_backward(cache, upstream):
    params, grouped, x_shape = cache
    ch, _, kh, kw = params.weight.shape
    up = np.asarray(upstream).transpose(1, 0, 2, 3).reshape(ch, -1)
    grad_weight = np.einsum("cp,ckp->ck", up, grouped).reshape(params.weight.shape)
    grads = {"weight": grad_weight}
    if params.bias is not None:
        grads["bias"] = up.sum(axis=1)
    dcols = np.einsum("ck,cp->ckp", params.weight.reshape(ch, kh * kw), up)
    dcols = dcols.reshape(ch * kh * kw, -1)
    dx = tensor.col2im(dcols, x_shape, (kh, kw), params.stride, params.padding)
    return dx, grads


# ---------------------------------------------------------------------------
# pooling


@dataclass
class PoolConfig:
    kernel: tuple[int, int]
    stride: tuple[int, int]
    padding: str = "valid"


def maxpool2d_forward(x, config):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    kh, kw = config.kernel
    sh, sw = config.stride
    geom = tensor.conv_geometry(h, w, config.kernel, config.stride, config.padding)
    # Pad with -inf so padded cells never win the max.
    padded = np.pad(
        x,
        ((0, 0), (0, 0), (geom.pad_top, geom.pad_bottom), (geom.pad_left, geom.pad_right)),
        mode="constant",
        constant_values=-np.inf,
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw][:, :, : geom.out_h, : geom.out_w]
    flat = windows.reshape(n, c, geom.out_h, geom.out_w, kh * kw)
    winner = np.argmax(flat, axis=-1)  # ties: lowest index, i.e. top-left tap
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]
    cache = (winner, x.shape, config, geom)
    return tensor.ensure_finite(np.ascontiguousarray(out), "maxpool output"), cache


def maxpool2d_backward(cache, upstream):
    winner, x_shape, config, geom = cache
    n, c, h, w = x_shape
    kh, kw = config.kernel
    sh, sw = config.stride
    up = np.asarray(upstream)
    grad_padded = np.zeros(
        (n, c, h + geom.pad_top + geom.pad_bottom, w + geom.pad_left + geom.pad_right),
        dtype=up.dtype,
    )
    ni, ci, oi, oj = np.indices(winner.shape)
    rows = oi * sh + winner // kw
    cols = oj * sw + winner % kw
    np.add.at(grad_padded, (ni, ci, rows, cols), up)
    dx = grad_padded[:, :, geom.pad_top : geom.pad_top + h, geom.pad_left : geom.pad_left + w]
    return np.ascontiguousarray(dx), {}


def global_avg_pool2d_forward(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"global average pool expects N x C x H x W, got {x.shape}")
    out = x.mean(axis=(2, 3))
    return tensor.ensure_finite(out, "global average pool output"), x.shape


def global_avg_pool2d_backward(cache, upstream):
    n, c, h, w = cache
    up = np.asarray(upstream)
    dx = np.broadcast_to(up[:, :, None, None] / (h * w), (n, c, h, w))
    return np.ascontiguousarray(dx), {}


# ---------------------------------------------------------------------------
# dense / flatten


@dataclass
class DenseParams:
    """Fully connected layer: weight is in_features x out_features."""

    weight: np.ndarray
    bias: np.ndarray


def dense_forward(x, params):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"dense expects N x features, got {x.shape}")
    if x.shape[1] != params.weight.shape[0]:
        raise ShapeError(
            f"dense input width {x.shape[1]} does not match weight {params.weight.shape}"
        )
    out = tensor.matmul(x, params.weight) + params.bias[None, :]
    return tensor.ensure_finite(out, "dense output"), (params, x)


def dense_backward(cache, upstream):
    params, x = cache
    up = np.asarray(upstream)
    grads = {
        "weight": tensor.matmul(x.T, up),
        "bias": up.sum(axis=0),
    }
    dx = tensor.matmul(up, params.weight.T)
    return dx, grads


def flatten_forward(x):
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError(f"flatten expects a batch, got shape {x.shape}")
    return np.ascontiguousarray(x.reshape(x.shape[0], -1)), x.shape


def flatten_backward(cache, upstream):
    return np.asarray(upstream).reshape(cache), {}


# ---------------------------------------------------------------------------
# activations / softmax


def activation_forward(x, kind):
    x = np.asarray(x)
    if kind == "relu":
        out = np.maximum(x, 0)
    elif kind == "relu6":
        out = np.clip(x, 0, 6)
    elif kind == "linear":
        out = x
    else:
        raise ValidationError(f"unknown activation {kind!r}")
    return tensor.ensure_finite(out, f"{kind} output"), (kind, x)


def activation_backward(cache, upstream):
    kind, x = cache
    up = np.asarray(upstream)
    if kind == "relu":
        dx = up * (x > 0)
    elif kind == "relu6":
        dx = up * ((x > 0) & (x < 6))
    else:
        dx = up
    return dx, {}


def softmax(logits):
    """Numerically stable softmax over the last axis."""
    logits = np.asarray(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)
    return tensor.ensure_finite(out, "softmax output")


# ---------------------------------------------------------------------------
# dropout


@dataclass
class DropoutConfig:
    """Inverted dropout. ``rng_seed`` may be an int or a tuple of ints so a
    graph can mix its own seed with layer index and step counter; the mask is
    a pure function of that seed."""

    rate: float
    rng_seed: object = 0
    mode: str = "train"


def dropout_apply(x, config):
    x = np.asarray(x)
    if not 0.0 <= config.rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {config.rate}")
    if config.mode not in ("train", "infer"):
        raise ValidationError(f"unknown dropout mode {config.mode!r}")
    if config.mode == "infer" or config.rate == 0.0:
        return x, None
    rng = np.random.default_rng(config.rng_seed)
    keep = rng.random(x.shape) >= config.rate
    mask = keep.astype(x.dtype) / (1.0 - config.rate)
    return x * mask, mask


def dropout_backward(mask, upstream):
    up = np.asarray(upstream)
    if mask is None:
        return up, {}
    return up * mask, {}


# ---------------------------------------------------------------------------
# batch norm (inference only)


@dataclass
class BatchNormParams:
    """Frozen batch normalisation over the channel axis of N x C x H x W."""

    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_variance: np.ndarray
    epsilon: float = 1e-3


def batchnorm_inference(x, params):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm expects N x C x H x W, got {x.shape}")
    c = x.shape[1]
    for name in ("gamma", "beta", "moving_mean", "moving_variance"):
        arr = getattr(params, name)
        if arr.shape != (c,):
            raise ShapeError(f"batchnorm {name} shape {arr.shape} does not match {c} channels")
    if params.epsilon <= 0:
        raise ValidationError(f"batchnorm epsilon must be positive, got {params.epsilon}")
    if np.any(params.moving_variance < 0):
        raise ValidationError("batchnorm moving variance must be non-negative")
    scale = params.gamma / np.sqrt(params.moving_variance + params.epsilon)
    shift = params.beta - params.moving_mean * scale
    out = x * scale[None, :, None, None] + shift[None, :, None, None]
    return tensor.ensure_finite(out, "batchnorm output"), None


def batchnorm_backward(cache, upstream):
    raise EngineError(
        "batch normalisation supports inference only; training through a "
        "batchnorm layer is not implemented, keep such layers frozen"
    )


# ---------------------------------------------------------------------------
# dispatch

_BACKWARD = {
    "conv2d": conv2d_backward,
    "depthwise_conv2d": depthwise_conv2d_backward,
    "maxpool": maxpool2d_backward,
    "global_avg_pool": global_avg_pool2d_backward,
    "dense": dense_backward,
    "flatten": flatten_backward,
    "activation": activation_backward,
    "dropout": dropout_backward,
    "batchnorm": batchnorm_backward,
}


def layer_backward(kind, cache, upstream_grad):
    """Route an upstream gradient through one layer.

    Returns ``(input_grad, param_grads)``; kinds without parameters return
    an empty dict. The cache must come from the matching forward call.
    """
    try:
        fn = _BACKWARD[kind]
    except KeyError:
        raise ValidationError(f"no backward rule for layer kind {kind!r}") from None
    return fn(cache, upstream_grad)
