"""Kernel backend selection.

Two implementations exist for every hot kernel: a compiled Cython
extension and a BLAS-backed numpy path.  The default ("auto") picks the
faster implementation per kernel, as measured by benchmarks/bench_kernels.py
on representative shapes: convolutions run on the numpy path (im2col plus
multithreaded GEMM beats a scalar compiled loop), while the bilinear warp
and PSF correlation run compiled (tight loops with no large temporaries).

Set ATNET_BACKEND=numpy|compiled|auto to override (ATNET_FORCE_NUMPY=1 is
an alias for numpy).  Each backend is individually deterministic; results
may differ between backends at rounding level because summation orders
differ.
"""

import os

import numpy as np

from . import numpy_kernels as _np_impl

_ck = None
try:
    from . import _ckernels as _ck
except ImportError:
    _ck = None

_choice = os.environ.get("ATNET_BACKEND", "auto").lower()
if os.environ.get("ATNET_FORCE_NUMPY", "") == "1":
    _choice = "numpy"
if _choice not in ("auto", "numpy", "compiled"):
    raise ValueError(f"ATNET_BACKEND must be auto|numpy|compiled, got {_choice!r}")
if _choice == "compiled" and _ck is None:
    raise ImportError("ATNET_BACKEND=compiled but the compiled extension is unavailable")

_conv_compiled = _choice == "compiled" and _ck is not None
_loops_compiled = _choice in ("auto", "compiled") and _ck is not None

BACKEND = "numpy" if _ck is None or _choice == "numpy" else _choice
HAVE_COMPILED = _ck is not None


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    """NCHW convolution, stride 1, zero padding k//2, with bias."""
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    kh, kw = w.shape[2], w.shape[3]
    if not _conv_compiled or (kh == 1 and kw == 1):
        return _np_impl.conv2d_forward(x, w, b)
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    out = np.empty((n, w.shape[0], h, wd), dtype=np.float64)
    _ck.conv2d_forward_padded(xp, w, b, out)
    return out


def conv2d_backward(x, w, gy):
    """Gradients of conv2d_forward: (grad_input, grad_weights, grad_bias)."""
    x, w, gy = _as_f64(x), _as_f64(w), _as_f64(gy)
    kh, kw = w.shape[2], w.shape[3]
    if not _conv_compiled or (kh == 1 and kw == 1):
        return _np_impl.conv2d_backward(x, w, gy)
    n, c, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    gb = gy.sum(axis=(0, 2, 3))
    gw = np.empty_like(w)
    _ck.conv2d_grad_weights(xp, gy, gw)
    gxp = np.zeros_like(xp)
    _ck.conv2d_grad_input_padded(w, gy, gxp)
    gx = np.ascontiguousarray(gxp[:, :, ph : ph + h, pw : pw + wd])
    return gx, gw, gb


def correlate2d(img, kernel):
    """Per-channel 2-D correlation on HWC data, edge-replicate padding."""
    img, kernel = _as_f64(img), _as_f64(kernel)
    if not _loops_compiled:
        return _np_impl.correlate2d(img, kernel)
    h, w = img.shape[:2]
    kh, kw = kernel.shape
    xp = np.pad(img, ((kh // 2, kh // 2), (kw // 2, kw // 2), (0, 0)), mode="edge")
    out = np.zeros_like(img)
    _ck.correlate2d_valid(xp, kernel, out)
    return out


def warp_bilinear(img, dx, dy):
    """Backward warp on HWC data: out(p) = img(p + d(p)), border clamped."""
    img, dx, dy = _as_f64(img), _as_f64(dx), _as_f64(dy)
    if not _loops_compiled:
        return _np_impl.warp_bilinear(img, dx, dy)
    out = np.empty_like(img)
    _ck.warp_bilinear(img, dx, dy, out)
    return out
