"""Model graphs: architecture builders, transfer heads, forward/backward.

A ModelGraph is an immutable ordered list of LayerSpec plus a parameter
dict. Builders cover the scratch CNN, VGG16 and MobileNetV2; transfer
learning attaches a fresh head onto a headless base and freezes the base.
Forward/backward compose the layer functions; the backward pass walks only
as deep as the deepest trainable layer, so frozen bases are never
differentiated.

Parameter naming is a cross-component contract:
``<blockpath>/<layerkind>_<index>/<suffix>`` with suffixes weight, bias,
gamma, beta, moving_mean, moving_variance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np

from . import layers, tensor
from .errors import NumericsError, ShapeError, StateError, ValidationError

LAYER_KINDS = (
    "conv2d", "depthwise_conv2d", "maxpool", "global_avg_pool",
    "dense", "activation", "dropout", "batchnorm", "flatten", "residual_add",
)

PARAM_SUFFIXES = ("weight", "bias", "gamma", "beta", "moving_mean", "moving_variance")

# Parameter-bearing layer kinds and the suffixes each one owns.
_PARAM_LAYER_SUFFIXES = {
    "conv2d": ("weight", "bias"),
    "depthwise_conv2d": ("weight", "bias"),
    "dense": ("weight", "bias"),
    "batchnorm": ("gamma", "beta", "moving_mean", "moving_variance"),
}

PARAM_NAME_PATTERN = re.compile(
    r"^(?:[a-z0-9_]+/)*"
    r"(?:conv2d|depthwise_conv2d|dense|batchnorm)_\d+"
    r"/(?:weight|bias|gamma|beta|moving_mean|moving_variance)$"
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    filters: int | None = None
    kernel: tuple[int, int] | None = None
    stride: tuple[int, int] = (1, 1)
    padding: str = "same"
    units: int | None = None
    activation: str | None = None
    rate: float | None = None
    epsilon: float | None = None
    source: str | None = None       # residual_add: name of the layer to add
    use_bias: bool = True
    frozen: bool = False


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    suffix: str
    fan_in: int
    trainable: bool

    @property
    def size(self):
        return int(np.prod(self.shape))


class ModelGraph:
    """Validated layer sequence with shape inference done at build time.

    The spec list is immutable; ``params`` maps parameter names to arrays
    and is replaced atomically by initialisation or a weight load. A graph
    whose last layer is a softmax activation is "headed" and produces class
    probabilities; otherwise it is a headless feature extractor.
    """

    def __init__(self, architecture_id, input_shape, layer_specs):
        if not layer_specs:
            raise ValidationError("a model graph needs at least one layer")
        self.architecture_id = str(architecture_id)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = tuple(layer_specs)
        self.params: dict[str, np.ndarray] = {}
        self.preprocessing = None   # set when a container is applied
        self.dtype = tensor.DEFAULT_DTYPE
        self._validate_names()
        self.output_shapes, self.param_specs = self._infer()
        self._validate_softmax_position()

    # -- validation / inference ------------------------------------------

    def _validate_names(self):
        seen = set()
        for spec in self.layers:
            if spec.kind not in LAYER_KINDS:
                raise ValidationError(f"unknown layer kind {spec.kind!r}")
            if not spec.name:
                raise ValidationError("layer names must be non-empty")
            if spec.name in seen:
                raise ValidationError(f"duplicate layer name {spec.name!r}")
            seen.add(spec.name)

    def _validate_softmax_position(self):
        softmax_at = [i for i, s in enumerate(self.layers)
                      if s.kind == "activation" and s.activation == "softmax"]
        if len(softmax_at) > 1:
            raise ValidationError("a graph may contain at most one softmax")
        if softmax_at and softmax_at[0] != len(self.layers) - 1:
            raise ValidationError("softmax is only legal as the final layer")

    @property
    def headed(self):
        last = self.layers[-1]
        return last.kind == "activation" and last.activation == "softmax"

    @property
    def num_classes(self):
        if not self.headed:
            return None
        return int(self.output_shapes[-1][0])

    def _infer(self):
        """Walk the layer list computing per-sample output shapes and the
        parameter tensors each layer owns."""
        shapes = []
        param_specs = []
        by_name = {}
        cur = self.input_shape
        for spec in self.layers:
            cur = self._infer_one(spec, cur, by_name, param_specs)
            shapes.append(cur)
            by_name[spec.name] = cur
        return shapes, tuple(param_specs)

    def _infer_one(self, spec, cur, by_name, param_specs):
        kind = spec.kind

        def need_rank(rank, what):
            if len(cur) != rank:
                raise ShapeError(
                    f"layer {spec.name!r} ({what}) expects rank-{rank} input, "
                    f"got shape {cur}"
                )

        def add_param(suffix, shape, fan_in):
            param_specs.append(ParamSpec(
                name=f"{spec.name}/{suffix}",
                shape=tuple(int(d) for d in shape),
                suffix=suffix,
                fan_in=int(fan_in),
                trainable=not spec.frozen and suffix in ("weight", "bias", "gamma", "beta"),
            ))

        if kind == "conv2d":
            need_rank(3, "conv2d")
            c, h, w = cur
            kh, kw = spec.kernel
            geom = tensor.conv_geometry(h, w, spec.kernel, spec.stride, spec.padding)
            add_param("weight", (spec.filters, c, kh, kw), c * kh * kw)
            if spec.use_bias:
                add_param("bias", (spec.filters,), c * kh * kw)
            return (spec.filters, geom.out_h, geom.out_w)

        if kind == "depthwise_conv2d":
            need_rank(3, "depthwise conv")
            c, h, w = cur
            kh, kw = spec.kernel
            geom = tensor.conv_geometry(h, w, spec.kernel, spec.stride, spec.padding)
            add_param("weight", (c, 1, kh, kw), kh * kw)
            if spec.use_bias:
                add_param("bias", (c,), kh * kw)
            return (c, geom.out_h, geom.out_w)

        if kind == "maxpool":
            need_rank(3, "maxpool")
            c, h, w = cur
            geom = tensor.conv_geometry(h, w, spec.kernel, spec.stride, spec.padding)
            return (c, geom.out_h, geom.out_w)

        if kind == "global_avg_pool":
            need_rank(3, "global average pool")
            return (cur[0],)

        if kind == "flatten":
            return (int(np.prod(cur)),)

        if kind == "dense":
            need_rank(1, "dense")
            add_param("weight", (cur[0], spec.units), cur[0])
            add_param("bias", (spec.units,), cur[0])
            return (spec.units,)

        if kind == "activation":
            if spec.activation == "softmax":
                need_rank(1, "softmax")
            elif spec.activation not in layers.ACTIVATION_KINDS:
                raise ValidationError(
                    f"layer {spec.name!r}: unknown activation {spec.activation!r}")
            return cur

        if kind == "dropout":
            if spec.rate is None or not 0.0 <= spec.rate < 1.0:
                raise ValidationError(
                    f"layer {spec.name!r}: dropout rate must be in [0, 1)")
            return cur

        if kind == "batchnorm":
            need_rank(3, "batchnorm")
            c = cur[0]
            for suffix in ("gamma", "beta", "moving_mean", "moving_variance"):
                add_param(suffix, (c,), c)
            return cur

        if kind == "residual_add":
            if spec.source not in by_name:
                raise ValidationError(
                    f"layer {spec.name!r}: residual source {spec.source!r} "
                    "does not name an earlier layer")
            if by_name[spec.source] != cur:
                raise ShapeError(
                    f"layer {spec.name!r}: residual shapes differ, "
                    f"{by_name[spec.source]} vs {cur}")
            return cur

        raise ValidationError(f"unknown layer kind {kind!r}")  # unreachable

    # -- parameters -------------------------------------------------------

    def param_names(self):
        return [p.name for p in self.param_specs]

    def trainable_names(self):
        return [p.name for p in self.param_specs if p.trainable]

    def initialize(self, seed=0, only_missing=False):
        """He-uniform weights, zero biases, identity batchnorm.

        Draws in float64 from a single seeded stream (graph order), then
        casts to the graph dtype, so float32 and float64 runs start from
        the same point. ``only_missing`` leaves already-populated tensors
        untouched, which is how a transfer head is initialised without
        disturbing loaded base weights.
        """
        rng = np.random.default_rng(seed)
        for pspec in self.param_specs:
            if only_missing and pspec.name in self.params:
                continue
            if pspec.suffix == "weight":
                limit = np.sqrt(6.0 / pspec.fan_in)
                value = rng.uniform(-limit, limit, size=pspec.shape)
            elif pspec.suffix in ("gamma", "moving_variance"):
                value = np.ones(pspec.shape)
            else:  # bias, beta, moving_mean
                value = np.zeros(pspec.shape)
            self.params[pspec.name] = value.astype(self.dtype)

    def to_dtype(self, dtype):
        dtype = np.dtype(dtype)
        if dtype not in (tensor.DEFAULT_DTYPE, tensor.VERIFY_DTYPE):
            raise ValidationError(f"unsupported dtype {dtype}")
        self.dtype = dtype
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def require_populated(self):
        missing = [p.name for p in self.param_specs if p.name not in self.params]
        if missing:
            raise StateError(
                f"graph {self.architecture_id!r} has {len(missing)} unpopulated "
                f"parameters, first: {missing[0]!r}; initialize or apply weights first"
            )

    def min_trainable_index(self):
        """Index of the deepest layer list position owning a trainable
        parameter, or None when everything is frozen. An unfrozen batchnorm
        counts: backward will then reach it and raise the explicit
        train-through-batchnorm error instead of silently skipping it."""
        for i, spec in enumerate(self.layers):
            if _PARAM_LAYER_SUFFIXES.get(spec.kind) and not spec.frozen:
                return i
        return None


def count_parameters(graph, trainable_only=False):
    """Total elements over parameter tensors (moving statistics included,
    mirroring how reference summaries report batchnorm state)."""
    total = 0
    for pspec in graph.param_specs:
        if trainable_only and not pspec.trainable:
            continue
        total += pspec.size
    return total


# ---------------------------------------------------------------------------
# forward / backward


class ForwardState:
    """Everything model_backward needs from one train-mode forward pass,
    plus the executed per-layer output shapes for diagnostics."""

    def __init__(self, graph, mode, caches, logits, min_trainable, shapes):
        self.graph = graph
        self.mode = mode
        self.caches = caches
        self.logits = logits
        self.min_trainable = min_trainable
        self.shapes = shapes


def _layer_params(graph, spec):
    p = graph.params
    name = spec.name
    if spec.kind == "conv2d":
        return layers.Conv2dParams(
            p[f"{name}/weight"],
            p[f"{name}/bias"] if spec.use_bias else None,
            spec.stride, spec.padding,
        )
    if spec.kind == "depthwise_conv2d":
        return layers.DepthwiseConv2dParams(
            p[f"{name}/weight"],
            p[f"{name}/bias"] if spec.use_bias else None,
            spec.stride, spec.padding,
        )
    if spec.kind == "dense":
        return layers.DenseParams(p[f"{name}/weight"], p[f"{name}/bias"])
    if spec.kind == "batchnorm":
        return layers.BatchNormParams(
            p[f"{name}/gamma"], p[f"{name}/beta"],
            p[f"{name}/moving_mean"], p[f"{name}/moving_variance"],
            spec.epsilon,
        )
    return None


def model_forward(graph, batch, mode="infer", dropout_seed=0, step=0):
    """Run the graph over a batch.

    Returns ``(output, state)``: class probabilities for headed graphs,
    the feature tensor for headless ones. In train mode the state carries
    layer caches (only from the deepest trainable layer up, frozen
    prefixes are executed but not cached) and the pre-softmax logits for
    the fused loss.
    """
    if mode not in ("train", "infer"):
        raise ValidationError(f"unknown forward mode {mode!r}")
    graph.require_populated()
    x = np.asarray(batch)
    if x.ndim != 1 + len(graph.input_shape) or x.shape[1:] != graph.input_shape:
        raise ShapeError(
            f"batch shape {x.shape} does not match declared input "
            f"{('N',) + graph.input_shape}"
        )
    if x.dtype != graph.dtype:
        x = x.astype(graph.dtype)

    min_trainable = graph.min_trainable_index()
    keep_caches = mode == "train" and min_trainable is not None
    residual_sources = {s.source for s in graph.layers if s.kind == "residual_add"}

    caches = [None] * len(graph.layers)
    saved = {}
    shapes = []
    logits = None
    h = x
    for i, spec in enumerate(graph.layers):
        kind = spec.kind
        try:
            if kind == "conv2d":
                h, cache = layers.conv2d_forward(h, _layer_params(graph, spec))
            elif kind == "depthwise_conv2d":
                h, cache = layers.depthwise_conv2d_forward(
                    h, _layer_params(graph, spec))
            elif kind == "maxpool":
                h, cache = layers.maxpool2d_forward(
                    h, layers.PoolConfig(spec.kernel, spec.stride, spec.padding))
            elif kind == "global_avg_pool":
                h, cache = layers.global_avg_pool2d_forward(h)
            elif kind == "flatten":
                h, cache = layers.flatten_forward(h)
            elif kind == "dense":
                h, cache = layers.dense_forward(h, _layer_params(graph, spec))
            elif kind == "activation":
                if spec.activation == "softmax":
                    logits = h
                    h, cache = layers.softmax(h), None
                else:
                    h, cache = layers.activation_forward(h, spec.activation)
            elif kind == "dropout":
                config = layers.DropoutConfig(
                    spec.rate, (int(dropout_seed), i, int(step)),
                    "train" if mode == "train" else "infer",
                )
                h, cache = layers.dropout_apply(h, config)
            elif kind == "batchnorm":
                h, cache = layers.batchnorm_inference(h, _layer_params(graph, spec))
            elif kind == "residual_add":
                h, cache = h + saved[spec.source], None
        except NumericsError as exc:
            raise NumericsError(f"layer {spec.name!r}: {exc}") from None
        if spec.name in residual_sources:
            saved[spec.name] = h
        if keep_caches and i >= min_trainable:
            caches[i] = cache
        shapes.append(h.shape)
    state = ForwardState(graph, mode, caches if keep_caches else None,
                         logits, min_trainable, shapes)
    return h, state


def model_backward(graph, state, logit_grad):
    """Reverse-mode gradients of the fused loss w.r.t. trainable parameters.

    ``logit_grad`` is the gradient at the pre-softmax logits (the fused
    cross-entropy already folded the softmax jacobian in). Descends only to
    the deepest trainable layer; residual branches accumulate by index.
    """
    if not isinstance(state, ForwardState) or state.graph is not graph:
        raise StateError("backward state does not belong to this graph")
    if state.mode != "train":
        raise StateError("model_backward needs caches from a train-mode forward")
    if not graph.headed:
        raise ValidationError("model_backward requires a softmax-headed graph")
    stop = state.min_trainable
    if stop is None:
        raise ValidationError("graph has no trainable parameters")

    index_of = {spec.name: i for i, spec in enumerate(graph.layers)}
    last = len(graph.layers) - 1   # softmax position
    grad_at = {last - 1: np.asarray(logit_grad)}
    param_grads = {}
    for i in range(last - 1, stop - 1, -1):
        spec = graph.layers[i]
        g = grad_at.pop(i, None)
        if g is None:
            continue  # no path to the loss touches this layer
        if spec.kind == "residual_add":
            src = index_of[spec.source]
            grad_at[i - 1] = grad_at.get(i - 1, 0) + g
            grad_at[src] = grad_at.get(src, 0) + g
            continue
        dx, pgrads = layers.layer_backward(spec.kind, state.caches[i], g)
        if not spec.frozen:
            for suffix, arr in pgrads.items():
                param_grads[f"{spec.name}/{suffix}"] = arr
        if i > stop:
            grad_at[i - 1] = grad_at.get(i - 1, 0) + dx
    expected = set(graph.trainable_names())
    if set(param_grads) != expected:
        missing = sorted(expected - set(param_grads))
        raise StateError(f"backward produced an incomplete gradient set, missing {missing}")
    return param_grads


# ---------------------------------------------------------------------------
# builders


class _GraphBuilder:
    """Accumulates LayerSpec with contract-conformant auto names."""

    def __init__(self, input_shape):
        self.input_shape = input_shape
        self.specs = []
        self.counters = {}
        self.last_name = None

    def _name(self, kind, block):
        index = self.counters.get(kind, 0)
        self.counters[kind] = index + 1
        base = f"{kind}_{index}"
        return f"{block}/{base}" if block else base

    def add(self, kind, block=None, **fields):
        name = self._name(kind, block)
        self.specs.append(LayerSpec(kind=kind, name=name, **fields))
        self.last_name = name
        return name

    def conv2d(self, filters, kernel, stride=1, padding="same",
               use_bias=True, block=None):
        return self.add("conv2d", block, filters=filters,
                        kernel=(kernel, kernel), stride=(stride, stride),
                        padding=padding, use_bias=use_bias)

    def depthwise(self, kernel, stride=1, padding="same", use_bias=True, block=None):
        return self.add("depthwise_conv2d", block, kernel=(kernel, kernel),
                        stride=(stride, stride), padding=padding, use_bias=use_bias)

    def maxpool(self, kernel, stride, padding="valid", block=None):
        return self.add("maxpool", block, kernel=(kernel, kernel),
                        stride=(stride, stride), padding=padding)

    def batchnorm(self, epsilon=1e-3, block=None):
        return self.add("batchnorm", block, epsilon=epsilon)

    def act(self, kind, block=None):
        return self.add("activation", block, activation=kind)

    def gap(self):
        return self.add("global_avg_pool")

    def flatten(self):
        return self.add("flatten")

    def dense(self, units, block=None):
        return self.add("dense", block, units=units)

    def dropout(self, rate):
        return self.add("dropout", rate=rate)

    def residual(self, source, block=None):
        return self.add("residual_add", block, source=source)

    def softmax(self):
        return self.add("activation", activation="softmax")

    def graph(self, architecture_id):
        return ModelGraph(architecture_id, self.input_shape, self.specs)


def build_paper_cnn(num_classes=4):
    """The scratch CNN: four conv blocks into a 512-512 dense head."""
    if num_classes < 2:
        raise ValidationError("num_classes must be at least 2")
    b = _GraphBuilder((3, 224, 224))
    b.conv2d(64, 7, stride=2)
    b.act("relu")
    b.maxpool(3, 2)
    b.conv2d(128, 3)
    b.act("relu")
    b.maxpool(3, 2)
    b.conv2d(256, 3)
    b.act("relu")
    b.conv2d(256, 3)
    b.act("relu")
    b.maxpool(3, 2)
    b.flatten()
    b.dense(512)
    b.act("relu")
    b.dropout(0.5)
    b.dense(512)
    b.act("relu")
    b.dropout(0.5)
    b.dense(num_classes)
    b.softmax()
    return b.graph("paper_cnn")


def build_mini_cnn(num_classes=4, dropout_rate=0.25):
    """8x8-input miniature with the same layer kinds as the scratch CNN.

    Small enough for finite-difference verification and overfit smoke
    tests; not an architecture anyone should deploy.
    """
    if num_classes < 2:
        raise ValidationError("num_classes must be at least 2")
    b = _GraphBuilder((3, 8, 8))
    b.conv2d(8, 3)
    b.act("relu")
    b.maxpool(2, 2)
    b.conv2d(16, 3)
    b.act("relu")
    b.maxpool(2, 2)
    b.flatten()
    b.dense(48)
    b.act("relu")
    b.dropout(dropout_rate)
    b.dense(48)
    b.act("relu")
    b.dropout(dropout_rate)
    b.dense(num_classes)
    b.softmax()
    return b.graph("mini_cnn")


VGG16_BLOCK_PLAN = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))


def build_vgg16(num_classes=1000, include_reference_head=True):
    """Canonical five-block VGG16; headless when the reference classifier
    is dropped for transfer learning."""
    b = _GraphBuilder((3, 224, 224))
    for block_no, (repeats, width) in enumerate(VGG16_BLOCK_PLAN, start=1):
        block = f"block_{block_no}"
        for _ in range(repeats):
            b.conv2d(width, 3, block=block)
            b.act("relu", block=block)
        b.maxpool(2, 2, block=block)
    if include_reference_head:
        b.flatten()
        b.dense(4096)
        b.act("relu")
        b.dense(4096)
        b.act("relu")
        b.dense(num_classes)
        b.softmax()
    return b.graph("vgg16")


def make_divisible(value, divisor=8):
    """Channel rounding rule of the reference design: nearest multiple of
    ``divisor``, never dropping below 90% of the unrounded value."""
    rounded = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if rounded < 0.9 * value:
        rounded += divisor
    return rounded


# (expansion t, output channels c, repeats n, first stride s)
MOBILENET_V2_SETTINGS = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

BATCHNORM_EPSILON = 1e-3


def mobilenet_v2_architecture_id(width_multiplier):
    return f"mobilenet_v2_w{round(width_multiplier * 100):03d}"


def build_mobilenet_v2(width_multiplier=1.0, num_classes=4, include_head=True):
    """MobileNetV2 per the reference design: 17 inverted-residual
    bottlenecks between a strided stem and the 1280-wide feature conv.
    Convolutions carry no bias (batchnorm follows each one); projection
    convs are linear bottlenecks."""
    if width_multiplier <= 0:
        raise ValidationError(
            f"width multiplier must be positive, got {width_multiplier}")
    b = _GraphBuilder((3, 224, 224))

    def conv_bn(filters, kernel, stride, act, block=None):
        b.conv2d(filters, kernel, stride=stride, use_bias=False, block=block)
        b.batchnorm(BATCHNORM_EPSILON, block=block)
        if act:
            b.act(act, block=block)

    stem = make_divisible(32 * width_multiplier)
    conv_bn(stem, 3, 2, "relu6")

    in_ch = stem
    block_no = 0
    for t, c, n, s in MOBILENET_V2_SETTINGS:
        out_ch = make_divisible(c * width_multiplier)
        for i in range(n):
            stride = s if i == 0 else 1
            block = f"block_{block_no}"
            block_no += 1
            entry = b.last_name
            if t != 1:
                b.conv2d(in_ch * t, 1, use_bias=False, block=block)
                b.batchnorm(BATCHNORM_EPSILON, block=block)
                b.act("relu6", block=block)
            b.depthwise(3, stride=stride, use_bias=False, block=block)
            b.batchnorm(BATCHNORM_EPSILON, block=block)
            b.act("relu6", block=block)
            b.conv2d(out_ch, 1, use_bias=False, block=block)
            b.batchnorm(BATCHNORM_EPSILON, block=block)
            if stride == 1 and in_ch == out_ch:
                b.residual(entry, block=block)
            in_ch = out_ch

    feature_width = make_divisible(1280 * max(width_multiplier, 1.0))
    conv_bn(feature_width, 1, 1, "relu6")

    if include_head:
        b.gap()
        b.dense(num_classes)
        b.softmax()
    return b.graph(mobilenet_v2_architecture_id(width_multiplier))


# ---------------------------------------------------------------------------
# transfer learning


@dataclass(frozen=True)
class HeadSpec:
    num_classes: int
    pooling: str = "flatten"            # or "global_average"
    hidden: tuple[int, ...] = (512,)
    activations: tuple[str, ...] = ("relu",)
    dropout_rates: tuple[float, ...] = (0.5,)


def default_head(num_classes, base_architecture_id):
    """Mirror the scratch CNN's own head: one 512 relu layer with dropout.
    MobileNetV2 bases pool globally; VGG-style bases flatten."""
    pooling = ("global_average"
               if base_architecture_id.startswith("mobilenet_v2") else "flatten")
    return HeadSpec(num_classes=num_classes, pooling=pooling)


def attach_transfer_head(base, head, freeze_base=True):
    """New graph: the base marked frozen plus a trainable classifier head.

    Base parameters are carried over by reference; head parameters stay
    unpopulated until ``initialize(only_missing=True)`` so loaded base
    weights are never redrawn.
    """
    if base.headed:
        raise ValidationError(
            "transfer base must be headless; build it without its reference head")
    if not (len(head.hidden) == len(head.activations) == len(head.dropout_rates)):
        raise ValidationError(
            "head hidden/activations/dropout_rates must have equal lengths")
    if head.num_classes < 2:
        raise ValidationError("head needs at least 2 classes")
    if head.pooling not in ("flatten", "global_average"):
        raise ValidationError(f"unknown head pooling {head.pooling!r}")
    if len(base.output_shapes[-1]) != 3:
        raise ShapeError("transfer base must end in a feature map (rank 3)")

    b = _GraphBuilder(base.input_shape)
    for spec in base.layers:
        b.specs.append(replace(spec, frozen=freeze_base or spec.frozen))
    b.last_name = base.layers[-1].name
    # Continue the per-kind counters past the base's names.
    for spec in base.layers:
        kind_index = int(spec.name.rsplit("_", 1)[1])
        b.counters[spec.kind] = max(b.counters.get(spec.kind, 0), kind_index + 1)

    if head.pooling == "global_average":
        b.gap()
    else:
        b.flatten()
    for units, act, rate in zip(head.hidden, head.activations, head.dropout_rates):
        b.dense(units)
        b.act(act)
        if rate > 0:
            b.dropout(rate)
    b.dense(head.num_classes)
    b.softmax()

    graph = b.graph(f"{base.architecture_id}_transfer")
    graph.params = dict(base.params)
    graph.preprocessing = base.preprocessing
    graph.dtype = base.dtype
    return graph


# ---------------------------------------------------------------------------
# architecture registry (container id -> buildable graph)


def build_for_architecture(architecture_id, num_classes=None):
    """Rebuild the graph a container's architecture id refers to.

    Transfer ids (``<base>_transfer``) resolve to the headless base plus
    the default head. ``num_classes`` is required for transfer ids and
    headed scratch models when no default applies.
    """
    if architecture_id.endswith("_transfer"):
        base_id = architecture_id[: -len("_transfer")]
        base = _build_base(base_id)
        if num_classes is None:
            raise ValidationError(
                f"num_classes is required to rebuild {architecture_id!r}")
        return attach_transfer_head(base, default_head(num_classes, base_id))
    if architecture_id == "paper_cnn":
        return build_paper_cnn(num_classes or 4)
    if architecture_id == "mini_cnn":
        return build_mini_cnn(num_classes or 4)
    if architecture_id == "vgg16":
        return build_vgg16(num_classes or 1000)
    m = re.fullmatch(r"mobilenet_v2_w(\d{3})", architecture_id)
    if m:
        return build_mobilenet_v2(int(m.group(1)) / 100.0, num_classes or 4)
    raise ValidationError(f"unknown architecture id {architecture_id!r}")


def _build_base(base_id):
    if base_id == "vgg16":
        return build_vgg16(include_reference_head=False)
    m = re.fullmatch(r"mobilenet_v2_w(\d{3})", base_id)
    if m:
        return build_mobilenet_v2(int(m.group(1)) / 100.0, include_head=False)
    raise ValidationError(f"unknown transfer base {base_id!r}")
