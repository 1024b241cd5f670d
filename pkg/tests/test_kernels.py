import importlib

import numpy as np
import pytest

from cxv import _kernels_py, kernels

compiled = pytest.importorskip("cxv._kernels")


class TestBackendParity:
    @pytest.mark.parametrize("shape,k,stride", [((2, 3, 10, 10), 3, 1), ((1, 4, 9, 7), 3, 2), ((3, 1, 5, 5), 1, 1)])
    def test_im2col(self, rng, shape, k, stride):
        x = rng.normal(size=shape)
        np.testing.assert_array_equal(compiled.im2col(x, k, k, stride), _kernels_py.im2col(x, k, k, stride))

    @pytest.mark.parametrize("hp,wp,k,stride", [(10, 10, 3, 1), (9, 7, 3, 2), (6, 6, 2, 2)])
    def test_col2im(self, rng, hp, wp, k, stride):
        ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
        cols = rng.normal(size=(2, ho, wo, 3, k, k))
        np.testing.assert_allclose(compiled.col2im(cols, hp, wp, stride), _kernels_py.col2im(cols, hp, wp, stride),
                                   atol=1e-12)

    def test_warp(self, rng):
        img = rng.integers(0, 256, size=(3, 32, 32), dtype=np.uint8)
        c, s = np.cos(0.3), np.sin(0.3)
        inv = np.array([[c, s, 16 - 16 * c - 16 * s], [-s, c, 16 + 16 * s - 16 * c]])
        np.testing.assert_array_equal(compiled.warp_nearest(img, inv), _kernels_py.warp_nearest(img, inv))


class TestKernelProperties:
    def test_col2im_is_adjoint_of_im2col(self, rng):
        x = rng.normal(size=(2, 3, 8, 9))
        cols = rng.normal(size=kernels.im2col(x, 3, 3, 2).shape)
        lhs = np.sum(kernels.im2col(x, 3, 3, 2) * cols)
        rhs = np.sum(x * kernels.col2im(cols, 8, 9, 2))
        assert abs(lhs - rhs) < 1e-9

    def test_warp_identity(self, rng):
        img = rng.integers(0, 256, size=(3, 8, 8), dtype=np.uint8)
        np.testing.assert_array_equal(kernels.warp_nearest(img, np.array([[1.0, 0, 0], [0, 1.0, 0]])), img)

    def test_warp_out_of_range_fills_zero(self, rng):
        img = rng.integers(1, 256, size=(3, 8, 8), dtype=np.uint8)
        out = kernels.warp_nearest(img, np.array([[1.0, 0, 100], [0, 1.0, 0]]))
        assert not out.any()


def test_backend_selection(monkeypatch):
    monkeypatch.setenv("CXV_PURE_PYTHON", "1")
    try:
        mod = importlib.reload(kernels)
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("CXV_PURE_PYTHON")
        mod = importlib.reload(kernels)
    assert mod.BACKEND == "cython"
