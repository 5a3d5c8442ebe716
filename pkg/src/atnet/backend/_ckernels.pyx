# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot inner loops.

Accumulation order per output element is fixed (channel, then kernel row,
then kernel column), so results are bitwise reproducible run to run.
The Python wrappers in atnet.backend handle padding and allocation.
"""

from libc.math cimport floor


def conv2d_forward_padded(double[:, :, :, ::1] xp, double[:, :, :, ::1] w,
                          double[::1] b, double[:, :, :, ::1] out):
    cdef Py_ssize_t n = out.shape[0], o = out.shape[1]
    cdef Py_ssize_t h = out.shape[2], wd = out.shape[3]
    cdef Py_ssize_t c = xp.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t i_n, i_o, i_c, u, v, i, j
    cdef double wv
    for i_n in range(n):
        for i_o in range(o):
            for i in range(h):
                for j in range(wd):
                    out[i_n, i_o, i, j] = b[i_o]
            for i_c in range(c):
                for u in range(kh):
                    for v in range(kw):
                        wv = w[i_o, i_c, u, v]
                        for i in range(h):
                            for j in range(wd):
                                out[i_n, i_o, i, j] += wv * xp[i_n, i_c, i + u, j + v]


def conv2d_grad_weights(double[:, :, :, ::1] xp, double[:, :, :, ::1] gy,
                        double[:, :, :, ::1] gw):
    cdef Py_ssize_t n = gy.shape[0], o = gy.shape[1]
    cdef Py_ssize_t h = gy.shape[2], wd = gy.shape[3]
    cdef Py_ssize_t c = xp.shape[1], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t i_n, i_o, i_c, u, v, i, j
    cdef double acc
    for i_o in range(o):
        for i_c in range(c):
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for i_n in range(n):
                        for i in range(h):
                            for j in range(wd):
                                acc += gy[i_n, i_o, i, j] * xp[i_n, i_c, i + u, j + v]
                    gw[i_o, i_c, u, v] = acc


def conv2d_grad_input_padded(double[:, :, :, ::1] w, double[:, :, :, ::1] gy,
                             double[:, :, :, ::1] gxp):
    cdef Py_ssize_t n = gy.shape[0], o = gy.shape[1]
    cdef Py_ssize_t h = gy.shape[2], wd = gy.shape[3]
    cdef Py_ssize_t c = gxp.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t i_n, i_o, i_c, u, v, i, j
    cdef double wv
    for i_n in range(n):
        for i_o in range(o):
            for i_c in range(c):
                for u in range(kh):
                    for v in range(kw):
                        wv = w[i_o, i_c, u, v]
                        for i in range(h):
                            for j in range(wd):
                                gxp[i_n, i_c, i + u, j + v] += wv * gy[i_n, i_o, i, j]


def correlate2d_valid(double[:, :, ::1] xp, double[:, ::1] k, double[:, :, ::1] out):
    cdef Py_ssize_t h = out.shape[0], w = out.shape[1], c = out.shape[2]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1]
    cdef Py_ssize_t i, j, ch, u, v
    cdef double kv
    for u in range(kh):
        for v in range(kw):
            kv = k[u, v]
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        out[i, j, ch] += kv * xp[i + u, j + v, ch]


def warp_bilinear(double[:, :, ::1] img, double[:, ::1] dx, double[:, ::1] dy,
                  double[:, :, ::1] out):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], c = img.shape[2]
    cdef Py_ssize_t i, j, ch, ix0, iy0, ix1, iy1
    cdef double xs, ys, fx, fy, top, bot
    for i in range(h):
        for j in range(w):
            xs = j + dx[i, j]
            ys = i + dy[i, j]
            if xs < 0.0:
                xs = 0.0
            elif xs > w - 1.0:
                xs = w - 1.0
            if ys < 0.0:
                ys = 0.0
            elif ys > h - 1.0:
                ys = h - 1.0
            ix0 = <Py_ssize_t>floor(xs)
            iy0 = <Py_ssize_t>floor(ys)
            ix1 = ix0 + 1 if ix0 + 1 < w else w - 1
            iy1 = iy0 + 1 if iy0 + 1 < h else h - 1
            fx = xs - ix0
            fy = ys - iy0
            for ch in range(c):
                top = (1.0 - fx) * img[iy0, ix0, ch] + fx * img[iy0, ix1, ch]
                bot = (1.0 - fx) * img[iy1, ix0, ch] + fx * img[iy1, ix1, ch]
                out[i, j, ch] = (1.0 - fy) * top + fy * bot
