import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import bilinear_naive, conv2d_naive, pool_naive

from ctdnet import _core
from ctdnet.errors import DataIOError, ShapeError, UsageError
from ctdnet.tensor import (
    Tensor,
    bilinear_upsample,
    channel_pool,
    concat,
    conv2d,
    dump_tensor,
    get_default_dtype,
    global_avg_pool,
    grad_check,
    load_tensor,
    no_grad,
    pool2d,
    relu,
    sigmoid,
    wide_precision,
)
from ctdnet.tensor import functional as F
from ctdnet.tensor.tensor import clamp, sum_


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class TestTensorBasics:
    def test_default_dtype_is_float32(self):
        assert Tensor(np.ones(3)).dtype == np.float32
        assert get_default_dtype() == np.float32

    def test_wide_precision_switches_and_restores(self):
        with wide_precision():
            assert Tensor([1.0]).dtype == np.float64
        assert Tensor([1.0]).dtype == np.float32

    def test_meta_tensor_has_shape_but_no_data(self):
        m = Tensor.meta((2, 3, 4, 4))
        assert m.is_meta and m.shape == (2, 3, 4, 4) and m.data is None

    def test_broadcast_only_over_unit_extents(self):
        a = Tensor(np.ones((2, 3, 4, 4)))
        with pytest.raises(ShapeError):
            a + Tensor(np.ones((2, 3, 4, 5)))
        assert (a * Tensor(np.ones((2, 1, 4, 4)))).shape == (2, 3, 4, 4)

    def test_no_grad_builds_no_graph(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf(np.random.default_rng(0).standard_normal((1, 2, 3, 3)))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_square_gives_two_x(self):
        x = leaf(np.random.default_rng(1).standard_normal((1, 2, 3, 3)))
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_reuse_accumulates(self):
        x = leaf(np.full((1, 1, 2, 2), 3.0))
        (x + x + x).sum().backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 3.0))

    def test_calls_accumulate_until_zeroed(self):
        x = leaf(np.ones((1, 1, 1, 2)))
        x.sum().backward()
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [[[[2.0, 2.0]]]])
        x.zero_grad()
        assert x.grad is None

    def test_untracked_scalar_is_a_usage_error(self):
        with pytest.raises(UsageError):
            Tensor(np.ones((1, 1, 1, 1))).backward()

    def test_non_scalar_is_a_usage_error(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        with pytest.raises(UsageError):
            (x * 2).backward()


class TestConv:
    def test_ones_valid(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        assert out.shape == (1, 1, 1, 1) and out.item() == 9

    def test_ones_padded(self):
        out = conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
        np.testing.assert_array_equal(out.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_random_against_loop_oracle(self, rng):
        with wide_precision():
            x = rng.standard_normal((2, 3, 8, 8))
            w = rng.standard_normal((4, 3, 3, 3))
            b = rng.standard_normal(4)
            got = conv2d(Tensor(x), Tensor(w), Tensor(b), 1, 1).data
        np.testing.assert_allclose(got, conv2d_naive(x, w, b, 1, 1), atol=1e-6)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (3, 2)])
    def test_direct_and_im2col_agree(self, rng, stride, pad):
        x, w = rng.standard_normal((2, 3, 9, 7)), rng.standard_normal((5, 3, 3, 3))
        with wide_precision():
            a = conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad).data
            b = conv2d(Tensor(x), Tensor(w), stride=stride, padding=pad, method="direct").data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_kernel_larger_than_padded_extent(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 5, 5))))

    @settings(max_examples=25, deadline=None)
    @given(
        h=st.integers(1, 8), w=st.integers(1, 8), c=st.integers(1, 3), o=st.integers(1, 3),
        k=st.sampled_from([1, 3]), stride=st.integers(1, 2), seed=st.integers(0, 2**16),
    )
    def test_property_matches_oracle(self, h, w, c, o, k, stride, seed):
        pad = k // 2
        r = np.random.default_rng(seed)
        x, wt = r.standard_normal((1, c, h, w)), r.standard_normal((o, c, k, k))
        with wide_precision():
            got = conv2d(Tensor(x), Tensor(wt), stride=stride, padding=pad).data
        np.testing.assert_allclose(got, conv2d_naive(x, wt, None, stride, pad), atol=1e-9)


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3 + 2)
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
        rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
        out = F.batch_norm2d(x, gamma, beta, rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)
        assert np.all(rm != 0) and np.all(rv != 1)

    def test_constant_channel_gives_zeros(self):
        out = F.batch_norm2d(Tensor(np.full((2, 1, 3, 3), 4.0)), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                             np.zeros(1), np.ones(1), training=True)
        np.testing.assert_array_equal(out.data, 0)

    def test_eval_affine(self):
        out = F.batch_norm2d(Tensor(np.ones((1, 1, 1, 1))), Tensor([2.0]), Tensor([3.0]),
                             np.zeros(1), np.ones(1), training=False)
        assert abs(out.item() - 5.0) < 1e-4

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            F.batch_norm2d(Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                           np.zeros(3), np.ones(3), training=True)


class TestPooling:
    def test_max_2x2(self):
        assert pool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), "max", 2).item() == 4

    def test_avg_2x2(self):
        assert pool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), "avg", 2).item() == 2.5

    def test_padded_avg_keeps_constants(self):
        out = pool2d(Tensor(np.full((1, 2, 5, 4), 0.7)), "avg", 3, 1, 1)
        np.testing.assert_allclose(out.data, 0.7, rtol=1e-6)

    @pytest.mark.parametrize("kind,k,s,p", [("max", 3, 2, 1), ("avg", 5, 1, 2), ("avg", 2, 2, 0), ("max", 7, 1, 3)])
    def test_against_oracle(self, rng, kind, k, s, p):
        x = rng.standard_normal((2, 2, 7, 6))
        with wide_precision():
            got = pool2d(Tensor(x), kind, k, s, p).data
        np.testing.assert_allclose(got, pool_naive(x, kind, k, s, p), atol=1e-12)

    def test_max_dominates_avg(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 6, 6)))
        assert np.all(pool2d(x, "max", 3, 1, 1).data >= pool2d(x, "avg", 3, 1, 1).data - 1e-7)

    def test_kernel_larger_than_padded_extent(self):
        with pytest.raises(ShapeError):
            pool2d(Tensor(np.ones((1, 1, 2, 2))), "max", 5)

    def test_global_average(self):
        assert global_avg_pool(Tensor([[[[1.0, 3.0], [5.0, 7.0]]]])).item() == 4

    def test_global_average_gradient_spreads_uniformly(self):
        x = leaf(np.random.default_rng(0).standard_normal((1, 1, 3, 4)))
        global_avg_pool(x).sum().backward()
        np.testing.assert_allclose(x.grad, 1 / 12)

    def test_channel_pool(self):
        x = Tensor(np.array([1.0, 2.0, 6.0]).reshape(1, 3, 1, 1))
        assert channel_pool(x, "avg").item() == 3
        assert channel_pool(x, "max").item() == 6
        assert channel_pool(x, "avg").shape == (1, 1, 1, 1)


class TestBilinear:
    def test_constant_from_single_pixel(self):
        np.testing.assert_array_equal(bilinear_upsample(Tensor([[[[0.3]]]]), 2, 2).data, np.float32(0.3))

    def test_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 5, 4)))
        np.testing.assert_array_equal(bilinear_upsample(x, 5, 4).data, x.data)

    def test_2x2_to_4x4_frozen(self):
        # half-pixel sources -0.25, 0.25, 0.75, 1.25 clamp to weights 0, .25, .75, 1
        t = np.array([0.0, 0.25, 0.75, 1.0])
        expected = 2 * t[:, None] + t[None, :]
        got = bilinear_upsample(Tensor([[[[0.0, 1.0], [2.0, 3.0]]]]), 4, 4).data[0, 0]
        np.testing.assert_allclose(got, expected, atol=1e-6)
        np.testing.assert_allclose(got, bilinear_naive([[0, 1], [2, 3]], 4, 4), atol=1e-6)

    @pytest.mark.parametrize("shape,out", [((3, 5), (7, 11)), ((6, 6), (3, 2)), ((1, 4), (5, 9))])
    def test_against_oracle(self, rng, shape, out):
        img = rng.standard_normal(shape)
        with wide_precision():
            got = bilinear_upsample(Tensor(img[None, None]), *out).data[0, 0]
        np.testing.assert_allclose(got, bilinear_naive(img, *out), atol=1e-12)


class TestGradCheck:
    def test_linear_map_is_exact(self, rng):
        x = Tensor(rng.standard_normal((1, 2, 4, 4)))
        w = Tensor(rng.standard_normal((3, 2, 1, 1)))
        assert grad_check(lambda x, w: conv2d(x, w), [x, w]) < 1e-7

    def test_conv_bn_relu(self, rng):
        x = Tensor(rng.standard_normal((2, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        g, b = Tensor(np.ones(3)), Tensor(np.full(3, 2.0))  # beta keeps ReLU inputs off 0

        def block(x, w, g, b):
            y = F.batch_norm2d(conv2d(x, w, padding=1), g, b, np.zeros(3), np.ones(3), training=True)
            return relu(y)

        assert grad_check(block, [x, w, g, b]) < 1e-4

    def test_sigmoid_head(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 5, 5)))
        w = Tensor(rng.standard_normal((1, 4, 3, 3)) * 0.3)
        assert grad_check(lambda x, w: sigmoid(conv2d(x, w, padding=1)), [x, w]) < 1e-5

    def test_restores_dtype(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 3, 3)))
        grad_check(lambda x: x * x, [x])
        assert x.dtype == np.float32

    def test_clamp_and_concat(self, rng):
        a, b = Tensor(rng.standard_normal((1, 2, 3, 3))), Tensor(rng.standard_normal((1, 1, 3, 3)))
        assert grad_check(lambda a, b: clamp(concat([a, b]), -0.5, 0.5), [a, b]) < 1e-6

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            grad_check(lambda x: x, [Tensor(np.ones((1, 1, 1, 1)))], eps=0)


class TestBackends:
    @pytest.mark.skipif(len(_core.available_backends()) < 2, reason="compiled kernels not built")
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_compiled_and_numpy_agree(self, rng, dtype):
        c, p = _core.get_backend("cython"), _core.get_backend("python")
        x = rng.standard_normal((2, 3, 9, 8)).astype(dtype)
        tol = 1e-5 if dtype == np.float32 else 1e-12
        np.testing.assert_allclose(c.im2col(x, 3, 2, 1, 5, 4), p.im2col(x, 3, 2, 1, 5, 4), atol=tol)
        cols = rng.standard_normal((2, 27, 20)).astype(dtype)
        np.testing.assert_allclose(c.col2im(cols, 3, 9, 8, 3, 2, 1, 5, 4),
                                   p.col2im(cols, 3, 9, 8, 3, 2, 1, 5, 4), atol=tol)
        co, ci = c.max_pool_forward(x, 3, 2, 1, 5, 4)
        po, pi = p.max_pool_forward(x, 3, 2, 1, 5, 4)
        np.testing.assert_array_equal(co, po)
        np.testing.assert_array_equal(ci, pi)
        np.testing.assert_allclose(c.avg_pool_forward(x, 5, 1, 2, 9, 8), p.avg_pool_forward(x, 5, 1, 2, 9, 8),
                                   atol=tol)
        lo, hi, fr = F.bilinear_coefficients(9, 20, dtype)
        lo2, hi2, fr2 = F.bilinear_coefficients(8, 13, dtype)
        np.testing.assert_allclose(c.bilinear_forward(x, lo, hi, fr, lo2, hi2, fr2),
                                   p.bilinear_forward(x, lo, hi, fr, lo2, hi2, fr2), atol=tol)

    def test_switching_backend(self):
        previous = _core.use_backend("python")
        try:
            assert _core.BACKEND == "python"
        finally:
            _core.use_backend(previous)
        with pytest.raises(ValueError):
            _core.use_backend("fortran")


class TestDumpFormat:
    def test_round_trip(self, tmp_path, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        dump_tensor(tmp_path / "t.txt", x)
        assert (tmp_path / "t.txt").read_text().splitlines()[0] == "2 3 4 5"
        with wide_precision():
            np.testing.assert_allclose(load_tensor(tmp_path / "t.txt").data, x, rtol=1e-8)

    def test_short_file(self, tmp_path):
        (tmp_path / "t.txt").write_text("1 1 2 2\n1 2 3\n")
        with pytest.raises(DataIOError):
            load_tensor(tmp_path / "t.txt")

    def test_sum_keeps_dims(self):
        assert sum_(Tensor(np.ones((2, 3, 4, 4))), axis=(1, 2, 3)).shape == (2, 1, 1, 1)
