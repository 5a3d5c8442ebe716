"""Differentiable building blocks on (N, C, H, W) float64 arrays.

Each forward either is elementwise or returns enough cached state for its
vector-Jacobian product.  Convolutions dispatch through atnet.backend.
"""

import numpy as np

from . import backend


def conv2d(x, w, b):
    return backend.conv2d_forward(x, w, b)


def conv2d_vjp(x, w, gy):
    return backend.conv2d_backward(x, w, gy)


def relu(x):
    return np.maximum(x, 0.0)


def relu_vjp(gy, out):
    return np.where(out > 0.0, gy, 0.0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_vjp(gy, out):
    return gy * out * (1.0 - out)


def avg_pool_2x(x):
    """Non-overlapping 2x2 mean pooling; halves both spatial dims."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool_2x needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avg_pool_2x_vjp(gy):
    return np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) * 0.25


def _upsample_axis_indices(size):
    # output t samples source at (t + 0.5) / 2 - 0.5, clamped to the border
    t = np.arange(2 * size, dtype=np.float64)
    s = np.clip((t + 0.5) / 2.0 - 0.5, 0.0, size - 1.0)
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, size - 1)
    return i0, i1, s - i0


def upsample_2x(x, mode="bilinear"):
    """Doubles H and W. Bilinear by default, nearest-neighbor optional."""
    if mode == "nearest":
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)
    if mode != "bilinear":
        raise ValueError(f"unknown upsample mode {mode!r}")
    n, c, h, w = x.shape
    ix0, ix1, fx = _upsample_axis_indices(w)
    iy0, iy1, fy = _upsample_axis_indices(h)
    xa = x[:, :, :, ix0] * (1.0 - fx) + x[:, :, :, ix1] * fx
    fy = fy.reshape(1, 1, 2 * h, 1)
    return xa[:, :, iy0, :] * (1.0 - fy) + xa[:, :, iy1, :] * fy


def _upsample_axis_vjp(g, size, axis):
    # transpose of the interpolation along one axis; the factor-2 grid makes
    # the adjoint a fixed 4-tap stencil on stride-2 slices
    g = np.moveaxis(g, axis, -1)
    out = np.zeros(g.shape[:-1] + (size,), dtype=np.float64)
    out[..., 0] = g[..., 0] + 0.75 * g[..., 1]
    if size >= 2:
        out[..., 0] += 0.25 * g[..., 2]
    if size > 2:
        out[..., 1 : size - 1] = (
            0.25 * g[..., 1 : 2 * size - 4 : 2]
            + 0.75 * g[..., 2 : 2 * size - 3 : 2]
            + 0.75 * g[..., 3 : 2 * size - 2 : 2]
            + 0.25 * g[..., 4 : 2 * size - 1 : 2]
        )
    if size >= 2:
        out[..., size - 1] = (
            0.25 * g[..., 2 * size - 3] + 0.75 * g[..., 2 * size - 2] + g[..., 2 * size - 1]
        )
    else:
        out[..., 0] = g[..., 0] + g[..., 1]
    return np.moveaxis(out, -1, axis)


def upsample_2x_vjp(gy, in_hw, mode="bilinear"):
    h, w = in_hw
    n, c = gy.shape[:2]
    if mode == "nearest":
        return gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
    return np.ascontiguousarray(_upsample_axis_vjp(_upsample_axis_vjp(gy, h, 2), w, 3))


def res2block_forward(x, p, scale):
    """Multi-scale residual block.

    h = relu(entry 1x1 conv); h splits into `scale` groups g1..gs;
    y1 = g1 and y_j = relu(conv3x3_j(g_j + y_{j-1})) for j >= 2; the
    concatenated groups pass through an exit 1x1 conv and are added to the
    shortcut (identity when input and output widths match, 1x1 conv
    otherwise).

    ``p`` maps parameter names (entry_w, entry_b, g{j}_w, g{j}_b for
    j = 2..scale, exit_w, exit_b, optionally shortcut_w, shortcut_b) to
    float64 arrays.
    """
    a = conv2d(x, p["entry_w"], p["entry_b"])
    h = relu(a)
    width = h.shape[1] // scale
    groups = [h[:, j * width : (j + 1) * width] for j in range(scale)]
    ys = [groups[0]]
    zs = []
    for j in range(1, scale):
        z = groups[j] + ys[-1]
        zs.append(z)
        cj = conv2d(z, p[f"g{j + 1}_w"], p[f"g{j + 1}_b"])
        ys.append(relu(cj))
    cat = np.concatenate(ys, axis=1) if scale > 1 else ys[0]
    e = conv2d(cat, p["exit_w"], p["exit_b"])
    if "shortcut_w" in p:
        out = conv2d(x, p["shortcut_w"], p["shortcut_b"]) + e
    else:
        out = x + e
    return out, (x, h, zs, ys, cat)


def res2block_vjp(gy, cache, p, scale):
    """Gradients of res2block_forward w.r.t. its input and parameters."""
    x, h, zs, ys, cat = cache
    grads = {}
    gcat, grads["exit_w"], grads["exit_b"] = conv2d_vjp(cat, p["exit_w"], gy)
    if "shortcut_w" in p:
        gx_sc, grads["shortcut_w"], grads["shortcut_b"] = conv2d_vjp(x, p["shortcut_w"], gy)
    else:
        gx_sc = gy
    width = h.shape[1] // scale
    gys = [np.ascontiguousarray(gcat[:, j * width : (j + 1) * width]) for j in range(scale)]
    gh = np.zeros_like(h)
    for j in range(scale - 1, 0, -1):
        gc = relu_vjp(gys[j], ys[j])
        gz, grads[f"g{j + 1}_w"], grads[f"g{j + 1}_b"] = conv2d_vjp(
            zs[j - 1], p[f"g{j + 1}_w"], gc
        )
        gh[:, j * width : (j + 1) * width] += gz
        gys[j - 1] += gz
    gh[:, 0:width] += gys[0]
    ga = relu_vjp(gh, h)
    gx, grads["entry_w"], grads["entry_b"] = conv2d_vjp(x, p["entry_w"], ga)
    return gx + gx_sc, grads
