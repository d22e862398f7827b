
import numpy as np
import numpy.testing as npt
import pytest

from aerialcnn import models, optim
from aerialcnn.errors import (EngineError, ShapeError, StateError,
                              ValidationError)
from gradcheck import RTOL, finite_difference_at, max_relative_error, sample_coords

# Published architecture table: layer label, parameter count, output elements.
PAPER_CNN_ROWS = [
    ("conv2d_0", 9_472, 112 * 112 * 64),
    ("maxpool_0", 0, 55 * 55 * 64),
    ("conv2d_1", 73_856, 55 * 55 * 128),
    ("maxpool_1", 0, 27 * 27 * 128),
    ("conv2d_2", 295_168, 27 * 27 * 256),
    ("conv2d_3", 590_080, 27 * 27 * 256),
    ("maxpool_2", 0, 13 * 13 * 256),
    ("flatten_0", 0, 43_264),
    ("dense_0", 22_151_680, 512),
    ("dense_1", 262_656, 512),
    ("dense_2", 2_052, 4),
]

MOBILENET_SETTINGS = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                      (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]


def div8(v):
    r = max(8, int(v + 4) // 8 * 8)
    if r < 0.9 * v:
        r += 8
    return r


def mobilenet_expected_params(width, num_classes):
    """Closed-form parameter arithmetic straight from the bottleneck table,
    independent of the builder (batchnorm moving stats included)."""
    total = 0

    def bn(c):
        nonlocal total
        total += 4 * c

    stem = div8(32 * width)
    total += 3 * 9 * stem
    bn(stem)
    cin = stem
    for t, c, n, _ in MOBILENET_SETTINGS:
        cout = div8(c * width)
        for _ in range(n):
            hidden = cin * t
            if t != 1:
                total += cin * hidden
                bn(hidden)
            total += 9 * hidden
            bn(hidden)
            total += hidden * cout
            bn(cout)
            cin = cout
    feat = div8(1280 * max(width, 1.0))
    total += cin * feat
    bn(feat)
    total += feat * num_classes + num_classes
    return total


def vgg16_expected_params(num_classes=1000):
    total = 0
    cin = 3
    for repeats, width in [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)]:
        for _ in range(repeats):
            total += width * cin * 9 + width
            cin = width
    total += 512 * 7 * 7 * 4096 + 4096
    total += 4096 * 4096 + 4096
    total += 4096 * num_classes + num_classes
    return total


def params_by_layer(graph):
    out = {}
    for pspec in graph.param_specs:
        layer = pspec.name.rsplit("/", 1)[0]
        out[layer] = out.get(layer, 0) + pspec.size
    return out


class TestPaperCnn:
    def test_total_and_trainable_counts(self):
        graph = models.build_paper_cnn(4)
        assert models.count_parameters(graph) == 23_384_964
        assert models.count_parameters(graph, trainable_only=True) == 23_384_964

    def test_per_layer_rows(self):
        graph = models.build_paper_cnn(4)
        per_layer = params_by_layer(graph)
        names = [s.name for s in graph.layers]
        for layer_name, expected_params, expected_elements in PAPER_CNN_ROWS:
            assert layer_name in names, layer_name
            idx = names.index(layer_name)
            shape = graph.output_shapes[idx]
            assert int(np.prod(shape)) == expected_elements, layer_name
            assert per_layer.get(layer_name, 0) == expected_params, layer_name

    def test_flatten_width(self):
        graph = models.build_paper_cnn(4)
        idx = [s.name for s in graph.layers].index("flatten_0")
        assert graph.output_shapes[idx] == (43_264,)

    def test_layer_order(self):
        kinds = [s.kind for s in models.build_paper_cnn(4).layers]
        assert kinds == [
            "conv2d", "activation", "maxpool",
            "conv2d", "activation", "maxpool",
            "conv2d", "activation", "conv2d", "activation", "maxpool",
            "flatten", "dense", "activation", "dropout",
            "dense", "activation", "dropout", "dense", "activation",
        ]

    def test_forward_probabilities(self):
        graph = models.build_paper_cnn(4)
        graph.initialize(seed=0)
        x = np.random.default_rng(0).random((2, 3, 224, 224), dtype=np.float32)
        probs, _ = models.model_forward(graph, x)
        assert probs.shape == (2, 4)
        npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0)

    def test_num_classes_validated(self):
        with pytest.raises(ValidationError):
            models.build_paper_cnn(1)


class TestVgg16:
    def test_layer_counts(self):
        graph = models.build_vgg16()
        kinds = [s.kind for s in graph.layers]
        assert kinds.count("conv2d") == 13
        assert kinds.count("dense") == 3
        assert kinds.count("maxpool") == 5

    def test_total_parameters(self):
        graph = models.build_vgg16(1000)
        expected = vgg16_expected_params(1000)
        assert expected == 138_357_544
        assert models.count_parameters(graph) == expected

    def test_head_entry_width(self):
        graph = models.build_vgg16()
        idx = [s.kind for s in graph.layers].index("flatten")
        assert graph.output_shapes[idx] == (25_088,)
        assert graph.output_shapes[idx - 1] == (512, 7, 7)

    def test_headless_ends_in_feature_map(self):
        base = models.build_vgg16(include_reference_head=False)
        assert not base.headed
        assert base.output_shapes[-1] == (512, 7, 7)
        assert base.architecture_id == "vgg16"


class TestMakeDivisible:
    def test_reference_cases(self):
        assert models.make_divisible(32 * 1.0) == 32
        assert models.make_divisible(32 * 0.5) == 16
        assert models.make_divisible(32 * 1.4) == 48
        assert models.make_divisible(4) == 8        # floor at the divisor
        assert models.make_divisible(92) == 96      # 88 < 0.9*92 -> bump up

    def test_never_below_ninety_percent(self):
        for value in np.linspace(1, 400, 1600):
            assert models.make_divisible(value) >= 0.9 * value


class TestMobileNetV2:
    def test_stem_and_feature_widths(self):
        graph = models.build_mobilenet_v2(1.0, num_classes=4)
        first_conv = graph.layers[0]
        assert first_conv.kind == "conv2d" and first_conv.filters == 32
        assert first_conv.stride == (2, 2) and first_conv.use_bias is False
        gap_idx = [s.kind for s in graph.layers].index("global_avg_pool")
        assert graph.output_shapes[gap_idx] == (1280,)

    def test_width_half_stem(self):
        graph = models.build_mobilenet_v2(0.5, num_classes=4)
        assert graph.layers[0].filters == 16
        assert graph.architecture_id == "mobilenet_v2_w050"

    def test_block_and_residual_structure(self):
        graph = models.build_mobilenet_v2(1.0, num_classes=4)
        kinds = [s.kind for s in graph.layers]
        assert kinds.count("depthwise_conv2d") == 17
        # Identity skips exist exactly where a group repeats at stride 1:
        # 1 + 2 + 3 + 2 + 2 across the repeating groups.
        assert kinds.count("residual_add") == 10

    def test_stride2_blocks_never_residual(self):
        graph = models.build_mobilenet_v2(1.0, num_classes=4)
        names = [s.name for s in graph.layers]
        for spec in graph.layers:
            if spec.kind != "residual_add":
                continue
            block = spec.name.split("/")[0]
            strides = [s.stride for s in graph.layers
                       if s.kind == "depthwise_conv2d" and s.name.startswith(block + "/")]
            assert strides == [(1, 1)], spec.name
            assert spec.source in names

    def test_parameter_arithmetic(self):
        for width, classes in [(1.0, 1000), (0.5, 4), (1.4, 10)]:
            graph = models.build_mobilenet_v2(width, num_classes=classes)
            assert models.count_parameters(graph) == mobilenet_expected_params(width, classes)
        # The width-1.0 ImageNet configuration lands on the well-known total.
        assert mobilenet_expected_params(1.0, 1000) == 3_538_984

    def test_batchnorm_stats_not_trainable(self):
        graph = models.build_mobilenet_v2(1.0, num_classes=4)
        stats = sum(p.size for p in graph.param_specs
                    if p.suffix in ("moving_mean", "moving_variance"))
        assert stats > 0
        assert (models.count_parameters(graph)
                - models.count_parameters(graph, trainable_only=True)) == stats

    def test_width_validation(self):
        with pytest.raises(ValidationError):
            models.build_mobilenet_v2(0.0, num_classes=4)
        with pytest.raises(ValidationError):
            models.build_mobilenet_v2(-1.0, num_classes=4)

    def test_headless_variant(self):
        base = models.build_mobilenet_v2(1.0, include_head=False)
        assert not base.headed
        assert base.output_shapes[-1] == (1280, 7, 7)


class TestNamingContract:
    @pytest.mark.parametrize("build", [
        lambda: models.build_paper_cnn(4),
        lambda: models.build_mini_cnn(4),
        lambda: models.build_vgg16(10),
        lambda: models.build_mobilenet_v2(1.0, num_classes=4),
    ])
    def test_all_parameter_names_match_pattern(self, build):
        graph = build()
        for name in graph.param_names():
            assert models.PARAM_NAME_PATTERN.match(name), name

    def test_duplicate_names_rejected(self):
        spec = models.LayerSpec(kind="flatten", name="flatten_0")
        with pytest.raises(ValidationError):
            models.ModelGraph("x", (3, 4, 4), [spec, spec])


class TestShapeInference:
    @pytest.mark.parametrize("build,batch", [
        (lambda: models.build_paper_cnn(4), 1),
        (lambda: models.build_vgg16(10), 1),
        (lambda: models.build_mobilenet_v2(0.5, num_classes=4), 1),
    ])
    def test_inference_matches_execution(self, build, batch):
        graph = build()
        graph.initialize(seed=1)
        x = np.random.default_rng(2).random((batch, 3, 224, 224), dtype=np.float32)
        _, state = models.model_forward(graph, x)
        assert len(state.shapes) == len(graph.output_shapes)
        for executed, inferred in zip(state.shapes, graph.output_shapes):
            assert executed[0] == batch
            assert executed[1:] == inferred

    def test_residual_shape_mismatch_rejected(self):
        b = models._GraphBuilder((3, 8, 8))
        first = b.conv2d(4, 3)
        b.conv2d(8, 3)
        b.residual(first)
        with pytest.raises(ShapeError):
            b.graph("bad")

    def test_residual_unknown_source_rejected(self):
        b = models._GraphBuilder((3, 8, 8))
        b.conv2d(4, 3)
        b.residual("nowhere")
        with pytest.raises(ValidationError):
            b.graph("bad")

    def test_dense_requires_flat_input(self):
        b = models._GraphBuilder((3, 8, 8))
        b.dense(4)
        with pytest.raises(ShapeError):
            b.graph("bad")

    def test_softmax_must_be_last(self):
        b = models._GraphBuilder((4,))
        b.softmax()
        b.dense(2)
        with pytest.raises(ValidationError):
            b.graph("bad")


class TestForwardModes:
    def test_unpopulated_weights_is_state_error(self):
        graph = models.build_mini_cnn(4)
        with pytest.raises(StateError):
            models.model_forward(graph, np.zeros((1, 3, 8, 8), dtype=np.float32))

    def test_batch_shape_validated(self):
        graph = models.build_mini_cnn(4)
        graph.initialize(0)
        with pytest.raises(ShapeError):
            models.model_forward(graph, np.zeros((1, 3, 9, 9), dtype=np.float32))

    def test_infer_deterministic_despite_dropout(self):
        graph = models.build_mini_cnn(4)
        graph.initialize(0)
        x = np.random.default_rng(3).random((2, 3, 8, 8), dtype=np.float32)
        a, _ = models.model_forward(graph, x, mode="infer")
        b, _ = models.model_forward(graph, x, mode="infer")
        npt.assert_array_equal(a, b)

    def test_train_mode_dropout_varies_with_step(self):
        graph = models.build_mini_cnn(4, dropout_rate=0.5)
        graph.initialize(0)
        x = np.random.default_rng(3).random((2, 3, 8, 8), dtype=np.float32)
        a, _ = models.model_forward(graph, x, mode="train", dropout_seed=7, step=0)
        b, _ = models.model_forward(graph, x, mode="train", dropout_seed=7, step=0)
        c, _ = models.model_forward(graph, x, mode="train", dropout_seed=7, step=1)
        npt.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_train_equals_infer_without_dropout(self):
        graph = models.build_mini_cnn(4, dropout_rate=0.0)
        graph.initialize(0)
        x = np.random.default_rng(4).random((2, 3, 8, 8), dtype=np.float32)
        a, _ = models.model_forward(graph, x, mode="train")
        b, _ = models.model_forward(graph, x, mode="infer")
        npt.assert_array_equal(a, b)


class TestBackward:
    def test_whole_model_gradient_check(self):
        # Miniature CNN end to end in float64; coordinates sampled per tensor.
        graph = models.build_mini_cnn(4, dropout_rate=0.5)
        graph.to_dtype(np.float64)
        graph.initialize(seed=5)
        rng = np.random.default_rng(6)
        x = rng.random((4, 3, 8, 8))
        labels = np.array([0, 1, 2, 3])

        def loss():
            _, state = models.model_forward(graph, x, mode="train",
                                            dropout_seed=9, step=0)
            value, _ = optim.cross_entropy_with_softmax(state.logits, labels)
            return value

        _, state = models.model_forward(graph, x, mode="train", dropout_seed=9, step=0)
        _, logit_grad = optim.cross_entropy_with_softmax(state.logits, labels)
        grads = models.model_backward(graph, state, logit_grad)
        assert set(grads) == set(graph.trainable_names())
        for name, analytic in grads.items():
            param = graph.params[name]
            coords = sample_coords(param.shape, 12, rng)
            numeric = finite_difference_at(loss, param, coords)
            err = max_relative_error(analytic.reshape(-1)[coords], numeric)
            assert err < RTOL, f"{name}: rel err {err:.3e}"

    def test_zero_upstream_gives_zero_grads(self):
        graph = models.build_mini_cnn(4, dropout_rate=0.0)
        graph.initialize(0)
        x = np.random.default_rng(1).random((2, 3, 8, 8), dtype=np.float32)
        _, state = models.model_forward(graph, x, mode="train")
        grads = models.model_backward(graph, state, np.zeros((2, 4), dtype=np.float32))
        for arr in grads.values():
            assert not np.any(arr)

    def test_backward_requires_train_state(self):
        graph = models.build_mini_cnn(4)
        graph.initialize(0)
        x = np.zeros((1, 3, 8, 8), dtype=np.float32)
        _, state = models.model_forward(graph, x, mode="infer")
        with pytest.raises(StateError):
            models.model_backward(graph, state, np.zeros((1, 4)))

    def test_state_belongs_to_graph(self):
        g1 = models.build_mini_cnn(4)
        g2 = models.build_mini_cnn(4)
        g1.initialize(0)
        g2.initialize(0)
        x = np.zeros((1, 3, 8, 8), dtype=np.float32)
        _, state = models.model_forward(g1, x, mode="train")
        _, grad = optim.cross_entropy_with_softmax(state.logits, np.array([0]))
        with pytest.raises(StateError):
            models.model_backward(g2, state, grad)


class TestTransferHead:
    def _tiny_base(self):
        return models.build_mobilenet_v2(0.25, include_head=False)

    def test_requires_headless_base(self):
        headed = models.build_mobilenet_v2(0.25, num_classes=4)
        with pytest.raises(ValidationError):
            models.attach_transfer_head(headed, models.HeadSpec(4))

    def test_default_head_trainable_count(self):
        base = models.build_mobilenet_v2(1.0, include_head=False)
        graph = models.attach_transfer_head(base, models.default_head(4, base.architecture_id))
        # 1280*512 + 512 weights/bias into dense 512, then 512*4 + 4 out.
        expected = 1280 * 512 + 512 + 512 * 4 + 4
        assert expected == 657_924
        assert models.count_parameters(graph, trainable_only=True) == expected
        assert graph.architecture_id == "mobilenet_v2_w100_transfer"

    def test_vgg_head_uses_flatten(self):
        base = models.build_vgg16(include_reference_head=False)
        graph = models.attach_transfer_head(base, models.default_head(4, "vgg16"))
        head_kinds = [s.kind for s in graph.layers[len(base.layers):]]
        assert head_kinds[0] == "flatten"
        expected = 25_088 * 512 + 512 + 512 * 4 + 4
        assert models.count_parameters(graph, trainable_only=True) == expected

    def test_freeze_false_leaves_everything_trainable(self):
        base = self._tiny_base()
        graph = models.attach_transfer_head(
            base, models.default_head(4, base.architecture_id), freeze_base=False)
        frozen = [s for s in graph.layers if s.frozen]
        assert not frozen

    def test_frozen_base_gradients_cover_head_only(self):
        base = self._tiny_base()
        graph = models.attach_transfer_head(base, models.default_head(4, base.architecture_id))
        graph.initialize(seed=3, only_missing=False)
        x = np.random.default_rng(4).random((2, 3, 224, 224), dtype=np.float32)
        _, state = models.model_forward(graph, x, mode="train", dropout_seed=1)
        _, lgrad = optim.cross_entropy_with_softmax(state.logits, np.array([0, 1]))
        grads = models.model_backward(graph, state, lgrad)
        head_names = {p.name for p in graph.param_specs if p.trainable}
        assert set(grads) == head_names
        assert all("dense" in n for n in head_names)

    def test_only_missing_preserves_base_weights(self):
        base = self._tiny_base()
        base.initialize(seed=8)
        before = {k: v.copy() for k, v in base.params.items()}
        graph = models.attach_transfer_head(base, models.default_head(4, base.architecture_id))
        graph.initialize(seed=9, only_missing=True)
        for name, value in before.items():
            npt.assert_array_equal(graph.params[name], value)
        graph.require_populated()  # head got initialised too

    def test_head_length_mismatch(self):
        base = self._tiny_base()
        head = models.HeadSpec(4, hidden=(512, 256), activations=("relu",),
                               dropout_rates=(0.5,))
        with pytest.raises(ValidationError):
            models.attach_transfer_head(base, head)


class TestRegistry:
    def test_round_trip_ids(self):
        for arch, classes in [("paper_cnn", 4), ("mini_cnn", 4),
                              ("mobilenet_v2_w050", 4), ("vgg16", 1000)]:
            graph = models.build_for_architecture(arch, classes)
            assert graph.architecture_id == arch

    def test_transfer_id(self):
        graph = models.build_for_architecture("mobilenet_v2_w100_transfer", 4)
        assert graph.headed
        assert graph.layers[0].frozen
        assert graph.num_classes == 4

    def test_transfer_requires_classes(self):
        with pytest.raises(ValidationError):
            models.build_for_architecture("vgg16_transfer")

    def test_unknown_id(self):
        with pytest.raises(ValidationError):
            models.build_for_architecture("resnet50")


class TestBatchnormTraining:
    def test_training_through_batchnorm_is_explicit_error(self):
        b = models._GraphBuilder((3, 8, 8))
        b.conv2d(4, 3, use_bias=False)
        b.batchnorm()
        b.act("relu")
        b.gap()
        b.dense(2)
        b.softmax()
        graph = b.graph("bn_test")
        graph.initialize(0)
        x = np.random.default_rng(0).random((2, 3, 8, 8), dtype=np.float32)
        _, state = models.model_forward(graph, x, mode="train")
        _, lgrad = optim.cross_entropy_with_softmax(state.logits, np.array([0, 1]))
        with pytest.raises(EngineError):
            models.model_backward(graph, state, lgrad)
