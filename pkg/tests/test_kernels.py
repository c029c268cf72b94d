"""Backend parity and adjoint identities for the hot kernels."""

import numpy as np
import pytest

from wurstkit import backend

np_k = backend.backend_module("numpy")
try:
    nb_k = backend.backend_module("numba")
    HAVE_NUMBA = True
except Exception:
    nb_k = None
    HAVE_NUMBA = False

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba unavailable")


def rand(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape).astype(np.float32)


GEOMS = [
    # (B, C, H, W, k, stride, pad)
    (2, 3, 8, 8, 3, 1, 1),
    (1, 4, 9, 7, 4, 2, 1),
    (2, 2, 6, 6, 2, 2, 0),
    (1, 1, 5, 5, 1, 1, 0),
]


class TestIm2col:
    def test_shape(self):
        x = rand((2, 3, 8, 8))
        cols = np_k.im2col(x, 3, 3, 1, 1)
        assert cols.shape == (2, 64, 27)

    def test_matches_naive_gather(self):
        # independent oracle: explicit patch extraction with python loops
        x = rand((1, 2, 5, 6), seed=3)
        kh = kw = 3
        stride, pad = 2, 1
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        oh = (5 + 2 * pad - kh) // stride + 1
        ow = (6 + 2 * pad - kw) // stride + 1
        want = np.zeros((1, oh * ow, 2 * kh * kw), dtype=np.float32)
        for i in range(oh):
            for j in range(ow):
                patch = xp[0, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                want[0, i * ow + j] = patch.reshape(-1)
        got = np_k.im2col(x, kh, kw, stride, pad)
        np.testing.assert_array_equal(got, want)

    @pytest.mark.parametrize("b,c,h,w,k,stride,pad", GEOMS)
    def test_col2im_is_adjoint(self, b, c, h, w, k, stride, pad):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((b, c, h, w)).astype(np.float32)
        cols = np_k.im2col(x, k, k, stride, pad)
        y = rng.standard_normal(cols.shape).astype(np.float32)
        lhs = float(np.sum(cols.astype(np.float64) * y.astype(np.float64)))
        back = np_k.col2im(y, c, h, w, k, k, stride, pad)
        rhs = float(np.sum(x.astype(np.float64) * back.astype(np.float64)))
        assert lhs == pytest.approx(rhs, rel=1e-5)

    @needs_numba
    @pytest.mark.parametrize("b,c,h,w,k,stride,pad", GEOMS)
    def test_backend_parity(self, b, c, h, w, k, stride, pad):
        x = rand((b, c, h, w), seed=9)
        a = np_k.im2col(x, k, k, stride, pad)
        bb = nb_k.im2col(x, k, k, stride, pad)
        np.testing.assert_allclose(a, bb, rtol=0, atol=0)

    @needs_numba
    @pytest.mark.parametrize("b,c,h,w,k,stride,pad", GEOMS)
    def test_col2im_parity(self, b, c, h, w, k, stride, pad):
        oh = (h + 2 * pad - k) // stride + 1
        ow = (w + 2 * pad - k) // stride + 1
        cols = rand((b, oh * ow, c * k * k), seed=2)
        a = np_k.col2im(cols, c, h, w, k, k, stride, pad)
        bb = nb_k.col2im(cols, c, h, w, k, k, stride, pad)
        np.testing.assert_allclose(a, bb, rtol=1e-6, atol=1e-6)


class TestDepthwise:
    def test_matches_naive_correlation(self):
        x = rand((2, 3, 6, 6), seed=1)
        w = rand((3, 3, 3), seed=2)
        pad = 1
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        want = np.zeros_like(x)
        for bi in range(2):
            for c in range(3):
                for i in range(6):
                    for j in range(6):
                        want[bi, c, i, j] = np.sum(xp[bi, c, i : i + 3, j : j + 3] * w[c])
        got = np_k.depthwise_fwd(x, w, pad)
        np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)

    def test_bwd_x_is_adjoint(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 4, 7, 5)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3)).astype(np.float32)
        y = np_k.depthwise_fwd(x, w, 1)
        g = rng.standard_normal(y.shape).astype(np.float32)
        lhs = np.sum(y.astype(np.float64) * g.astype(np.float64))
        gx = np_k.depthwise_bwd_x(g, w, 7, 5, 1)
        rhs = np.sum(x.astype(np.float64) * gx.astype(np.float64))
        assert lhs == pytest.approx(rhs, rel=1e-5)

    def test_bwd_w_finite_difference(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((2, 3, 3))
        g = rng.standard_normal((1, 2, 5, 5))
        gw = np_k.depthwise_bwd_w(x, g, 3, 3, 1)
        h = 1e-6
        for c, i, j in [(0, 0, 0), (1, 2, 2), (0, 1, 2)]:
            wp = w.copy()
            wp[c, i, j] += h
            wm = w.copy()
            wm[c, i, j] -= h
            fd = (np.sum(np_k.depthwise_fwd(x, wp, 1) * g) - np.sum(np_k.depthwise_fwd(x, wm, 1) * g)) / (2 * h)
            assert gw[c, i, j] == pytest.approx(fd, rel=1e-4)

    @needs_numba
    def test_parity_all_three(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 3, 6, 7)).astype(np.float32)
        w = rng.standard_normal((3, 5, 5)).astype(np.float32)
        g = rng.standard_normal((2, 3, 6, 7)).astype(np.float32)
        np.testing.assert_allclose(np_k.depthwise_fwd(x, w, 2), nb_k.depthwise_fwd(x, w, 2), rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(np_k.depthwise_bwd_x(g, w, 6, 7, 2), nb_k.depthwise_bwd_x(g, w, 6, 7, 2), rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(np_k.depthwise_bwd_w(x, g, 5, 5, 2), nb_k.depthwise_bwd_w(x, g, 5, 5, 2), rtol=1e-4, atol=1e-4)


class TestNearestCode:
    def test_matches_distance_oracle(self):
        rng = np.random.default_rng(10)
        v = rng.standard_normal((40, 8)).astype(np.float32)
        cb = rng.standard_normal((16, 8)).astype(np.float32)
        d = ((v[:, None, :] - cb[None, :, :]) ** 2).sum(-1)
        want = d.argmin(axis=1)
        np.testing.assert_array_equal(np_k.nearest_code(v, cb), want)

    def test_tie_break_lowest_index(self):
        cb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        v = np.array([[1.0, 0.0]], dtype=np.float32)
        assert np_k.nearest_code(v, cb)[0] == 0

    @needs_numba
    def test_parity(self):
        rng = np.random.default_rng(12)
        v = rng.standard_normal((100, 4)).astype(np.float32)
        cb = rng.standard_normal((32, 4)).astype(np.float32)
        np.testing.assert_array_equal(np_k.nearest_code(v, cb), nb_k.nearest_code(v, cb))


class TestBackendSelection:
    def test_active_backend_reports(self):
        assert backend.active_backend() in ("numpy", "numba")

    def test_kernel_names_exist_in_both(self):
        for name in backend.KERNEL_NAMES:
            assert hasattr(np_k, name)
            if HAVE_NUMBA:
                assert hasattr(nb_k, name)

    def test_conv_out_size(self):
        assert np_k.conv_out_size(8, 3, 1, 1) == 8
        assert np_k.conv_out_size(8, 2, 2, 0) == 4
        assert np_k.conv_out_size(9, 4, 2, 1) == 4
