
import itertools
import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialcnn import tensor
from aerialcnn.errors import NumericsError, ShapeError, ValidationError


def naive_im2col(x, kernel, stride, padding, pad_value=0.0):
    """Patch enumeration with explicit loops; the oracle for the GEMM path.

    Recomputes output size and padding from first principles instead of
    calling into the module under test.
    """
    n, c, h, w = x.shape
    kh, kw = kernel
    sh, sw = stride
    if padding == "same":
        oh, ow = math.ceil(h / sh), math.ceil(w / sw)
        total_h = max((oh - 1) * sh + kh - h, 0)
        total_w = max((ow - 1) * sw + kw - w, 0)
        pt, pl = total_h // 2, total_w // 2
    else:
        oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
        pt = pl = 0
    out = np.empty((c * kh * kw, n * oh * ow), dtype=x.dtype)
    for col, (ni, oi, oj) in enumerate(itertools.product(range(n), range(oh), range(ow))):
        for row, (ci, ki, kj) in enumerate(itertools.product(range(c), range(kh), range(kw))):
            ii = oi * sh + ki - pt
            jj = oj * sw + kj - pl
            inside = 0 <= ii < h and 0 <= jj < w
            out[row, col] = x[ni, ci, ii, jj] if inside else pad_value
    return out


GEOMETRIES = [
    # (n, c, h, w, kernel, stride, padding)
    (1, 1, 4, 4, (3, 3), (1, 1), "valid"),
    (2, 3, 5, 5, (3, 3), (1, 1), "same"),
    (1, 2, 7, 5, (3, 3), (2, 2), "same"),
    (2, 1, 8, 8, (2, 2), (2, 2), "valid"),
    (1, 3, 9, 9, (7, 7), (2, 2), "same"),
    (1, 1, 6, 7, (3, 2), (2, 3), "same"),
    (1, 2, 5, 5, (5, 5), (1, 1), "valid"),
    (3, 1, 1, 1, (1, 1), (1, 1), "same"),
]


class TestGeometry:
    def test_out_dim_same_ceil(self):
        assert tensor.out_dim(224, 7, 2, "same") == 112
        assert tensor.out_dim(224, 3, 1, "same") == 224
        assert tensor.out_dim(5, 2, 2, "same") == 3

    def test_out_dim_valid_floor(self):
        assert tensor.out_dim(55, 3, 2, "valid") == 27
        assert tensor.out_dim(4, 3, 1, "valid") == 2
        assert tensor.out_dim(4, 4, 7, "valid") == 1

    def test_valid_kernel_too_large(self):
        with pytest.raises(ShapeError):
            tensor.out_dim(4, 5, 1, "valid")

    def test_unknown_padding(self):
        with pytest.raises(ValidationError):
            tensor.out_dim(4, 3, 1, "full")

    def test_pad_amounts_extra_goes_after(self):
        # 224 -> 112 with a 7x7 stride-2 window needs 5 total: 2 before, 3 after.
        assert tensor.pad_amounts(224, 7, 2, "same") == (2, 3)
        assert tensor.pad_amounts(224, 3, 1, "same") == (1, 1)
        assert tensor.pad_amounts(5, 2, 2, "same") == (0, 1)
        assert tensor.pad_amounts(8, 3, 1, "valid") == (0, 0)

    def test_non_positive_sizes_rejected(self):
        with pytest.raises(ValidationError):
            tensor.out_dim(0, 1, 1, "same")
        with pytest.raises(ValidationError):
            tensor.out_dim(4, 3, 0, "same")


class TestMatmul:
    def test_hand_case(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        npt.assert_array_equal(tensor.matmul(a, b), [[19.0, 22.0], [43.0, 50.0]])

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.matmul(np.ones((2, 3)), np.ones((4, 2)))

    def test_rank_validation(self):
        with pytest.raises(ShapeError):
            tensor.matmul(np.ones(3), np.ones((3, 2)))

    def test_nan_input_rejected(self):
        a = np.array([[np.nan, 1.0]])
        with pytest.raises(NumericsError):
            tensor.matmul(a, np.ones((2, 1)))

    def test_overflow_to_inf_rejected(self):
        big = np.full((2, 2), 3e38, dtype=np.float32)
        with np.errstate(over="ignore"), pytest.raises(NumericsError):
            tensor.matmul(big, big)


class TestIm2col:
    def test_known_4x4_valid(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        cols = tensor.im2col(x, (3, 3), (1, 1), "valid")
        assert cols.shape == (9, 4)
        # First column is the flattened top-left patch.
        npt.assert_array_equal(cols[:, 0], [0, 1, 2, 4, 5, 6, 8, 9, 10])
        npt.assert_array_equal(cols[:, 3], [5, 6, 7, 9, 10, 11, 13, 14, 15])

    @pytest.mark.parametrize("n,c,h,w,kernel,stride,padding", GEOMETRIES)
    def test_matches_patch_enumeration(self, n, c, h, w, kernel, stride, padding):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((n, c, h, w))
        npt.assert_array_equal(
            tensor.im2col(x, kernel, stride, padding),
            naive_im2col(x, kernel, stride, padding),
        )

    def test_pad_value_respected(self):
        x = np.ones((1, 1, 2, 2))
        cols = tensor.im2col(x, (3, 3), (1, 1), "same", pad_value=-1.0)
        oracle = naive_im2col(x, (3, 3), (1, 1), "same", pad_value=-1.0)
        npt.assert_array_equal(cols, oracle)

    def test_rank_validation(self):
        with pytest.raises(ShapeError):
            tensor.im2col(np.ones((2, 3, 4)), (2, 2), (1, 1), "valid")


class TestCol2im:
    def test_overlap_counts(self):
        # Folding columns of ones counts how many windows cover each pixel.
        x = np.ones((1, 1, 4, 4))
        cols = np.ones((9, 4))
        counts = tensor.col2im(cols, x.shape, (3, 3), (1, 1), "valid")
        npt.assert_array_equal(
            counts[0, 0],
            [[1, 2, 2, 1], [2, 4, 4, 2], [2, 4, 4, 2], [1, 2, 2, 1]],
        )

    @pytest.mark.parametrize("n,c,h,w,kernel,stride,padding", GEOMETRIES)
    def test_adjoint_identity(self, n, c, h, w, kernel, stride, padding):
        # <im2col(x), y> == <x, col2im(y)> pins col2im as the exact adjoint.
        rng = np.random.default_rng(11)
        x = rng.standard_normal((n, c, h, w))
        cols = tensor.im2col(x, kernel, stride, padding)
        y = rng.standard_normal(cols.shape)
        lhs = float(np.sum(cols * y))
        rhs = float(np.sum(x * tensor.col2im(y, x.shape, kernel, stride, padding)))
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    @pytest.mark.parametrize("n,c,h,w,kernel,stride,padding", GEOMETRIES)
    def test_roundtrip_equals_overlap_scaling(self, n, c, h, w, kernel, stride, padding):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((n, c, h, w))
        counts = tensor.col2im(
            np.ones_like(tensor.im2col(x, kernel, stride, padding)),
            x.shape, kernel, stride, padding,
        )
        folded = tensor.col2im(
            tensor.im2col(x, kernel, stride, padding), x.shape, kernel, stride, padding
        )
        npt.assert_allclose(folded, x * counts, rtol=0, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            tensor.col2im(np.ones((9, 5)), (1, 1, 4, 4), (3, 3), (1, 1), "valid")


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 2),
    c=st.integers(1, 3),
    h=st.integers(1, 9),
    w=st.integers(1, 9),
    kh=st.integers(1, 4),
    kw=st.integers(1, 4),
    sh=st.integers(1, 3),
    sw=st.integers(1, 3),
    padding=st.sampled_from(["same", "valid"]),
    seed=st.integers(0, 2**16),
)
def test_property_im2col_matches_oracle_and_adjoint(n, c, h, w, kh, kw, sh, sw, padding, seed):
    if padding == "valid" and (kh > h or kw > w):
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w))
    cols = tensor.im2col(x, (kh, kw), (sh, sw), padding)
    npt.assert_array_equal(cols, naive_im2col(x, (kh, kw), (sh, sw), padding))
    y = rng.standard_normal(cols.shape)
    lhs = float(np.sum(cols * y))
    rhs = float(np.sum(x * tensor.col2im(y, x.shape, (kh, kw), (sh, sw), padding)))
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


class TestArgmax:
    def test_ties_take_lowest_index(self):
        t = np.array([[1.0, 3.0, 3.0, 2.0]])
        npt.assert_array_equal(tensor.argmax_axis(t, 1), [1])

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            tensor.argmax_axis(np.ones((2, 2)), 2)

    def test_empty_axis(self):
        with pytest.raises(ShapeError):
            tensor.argmax_axis(np.ones((2, 0)), 1)
