"""Backend contracts: both kernel implementations agree with each other and
with brute-force oracles; the dispatcher honors the selection env vars."""

import os
import subprocess
import sys

import numpy as np
import pytest

from atnet import backend
from atnet.backend import numpy_kernels as npk
from atnet.rng import SeededRng

try:
    from atnet.backend import _ckernels as ck
except ImportError:
    ck = None

needs_compiled = pytest.mark.skipif(ck is None, reason="compiled kernels not built")


def conv_oracle(x, w, b):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = b[oi]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                ii, jj = i + u - ph, j + v - pw
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += w[oi, ci, u, v] * x[ni, ci, ii, jj]
                    out[ni, oi, i, j] = acc
    return out


class TestConvKernels:
    @pytest.mark.parametrize("shape", [(1, 2, 3, 6, 6, 3), (2, 3, 4, 5, 7, 3), (1, 4, 2, 8, 8, 1)])
    def test_numpy_matches_oracle(self, shape):
        n, c, o, h, wd, k = shape
        rng = SeededRng(1)
        x = rng.uniform(0, 1, (n, c, h, wd))
        w = rng.uniform(-0.5, 0.5, (o, c, k, k))
        b = rng.uniform(-0.5, 0.5, (o,))
        assert np.abs(npk.conv2d_forward(x, w, b) - conv_oracle(x, w, b)).max() < 1e-9

    @needs_compiled
    def test_compiled_matches_numpy(self):
        rng = SeededRng(2)
        x = rng.uniform(0, 1, (2, 5, 6, 7))
        w = rng.uniform(-0.5, 0.5, (4, 5, 3, 3))
        b = rng.uniform(-0.5, 0.5, (4,))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.empty((2, 4, 6, 7))
        ck.conv2d_forward_padded(xp, w, b, out)
        assert np.abs(out - npk.conv2d_forward(x, w, b)).max() < 1e-12

    @needs_compiled
    def test_compiled_backward_matches_numpy(self):
        rng = SeededRng(3)
        x = rng.uniform(0, 1, (2, 3, 6, 6))
        w = rng.uniform(-0.5, 0.5, (4, 3, 3, 3))
        gy = rng.uniform(-1, 1, (2, 4, 6, 6))
        gx_n, gw_n, gb_n = npk.conv2d_backward(x, w, gy)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        gw_c = np.empty_like(w)
        ck.conv2d_grad_weights(xp, gy, gw_c)
        gxp = np.zeros_like(xp)
        ck.conv2d_grad_input_padded(w, gy, gxp)
        gx_c = gxp[:, :, 1:7, 1:7]
        assert np.abs(gw_c - gw_n).max() < 1e-12
        assert np.abs(gx_c - gx_n).max() < 1e-12

    def test_adjoint_identities(self):
        # zero bias: y is linear in x for fixed w and linear in w for fixed x,
        # so <conv(x), gy> equals both <x, grad_x> and <w, grad_w>
        rng = SeededRng(4)
        x = rng.uniform(0, 1, (1, 3, 5, 5))
        w = rng.uniform(-0.5, 0.5, (2, 3, 3, 3))
        b = np.zeros(2)
        gy = rng.uniform(-1, 1, (1, 2, 5, 5))
        y = backend.conv2d_forward(x, w, b)
        gx, gw, gb = backend.conv2d_backward(x, w, gy)
        lhs = float(np.sum(y * gy))
        assert abs(lhs - float(np.sum(x * gx))) < 1e-9
        assert abs(lhs - float(np.sum(w * gw))) < 1e-9
        assert np.abs(gb - gy.sum(axis=(0, 2, 3))).max() < 1e-12


class TestWarpCorrelate:
    @needs_compiled
    def test_warp_parity(self):
        rng = SeededRng(5)
        img = rng.uniform(0, 1, (12, 10, 3))
        dx = rng.uniform(-2, 2, (12, 10))
        dy = rng.uniform(-2, 2, (12, 10))
        out_c = np.empty_like(img)
        ck.warp_bilinear(img, dx, dy, out_c)
        assert np.abs(out_c - npk.warp_bilinear(img, dx, dy)).max() < 1e-12

    @needs_compiled
    def test_correlate_parity(self):
        rng = SeededRng(6)
        img = rng.uniform(0, 1, (10, 11, 3))
        k = rng.uniform(0, 1, (5, 5))
        k /= k.sum()
        xp = np.pad(img, ((2, 2), (2, 2), (0, 0)), mode="edge")
        out_c = np.zeros_like(img)
        ck.correlate2d_valid(xp, k, out_c)
        assert np.abs(out_c - npk.correlate2d(img, k)).max() < 1e-12

    def test_zero_field_exact_both_paths(self):
        rng = SeededRng(7)
        img = rng.uniform(0, 1, (9, 9, 3))
        zero = np.zeros((9, 9))
        assert np.array_equal(npk.warp_bilinear(img, zero, zero), img)
        assert np.array_equal(backend.warp_bilinear(img, zero, zero), img)


class TestSelection:
    def test_backend_reports_identity(self):
        assert backend.BACKEND in ("auto", "numpy", "compiled")

    def test_forced_numpy_subprocess(self):
        code = (
            "import atnet.backend as b; assert b.BACKEND == 'numpy';"
            "import numpy as np;"
            "x = np.ones((1, 2, 8, 8)); w = np.ones((2, 2, 3, 3)); bb = np.zeros(2);"
            "y = b.conv2d_forward(x, w, bb); assert y.shape == (1, 2, 8, 8)"
        )
        env = dict(os.environ, ATNET_FORCE_NUMPY="1")
        subprocess.run([sys.executable, "-c", code], check=True, env=env)

    def test_bad_choice_rejected_subprocess(self):
        env = dict(os.environ, ATNET_BACKEND="gpu")
        proc = subprocess.run(
            [sys.executable, "-c", "import atnet.backend"], env=env, capture_output=True
        )
        assert proc.returncode != 0
