# cython: language_level=3
"""Compiled hot loops: dilated stride-1 convolution and pooling, both passes.

Per output entry the accumulation order is fixed — bias first, then taps over
(channel, kernel row, kernel col) — and must stay in lockstep with the numpy
fallback in _kernels_py.py: the two backends are required to agree bit-for-bit
in float64. Built with -ffp-contract=off for the same reason.

Parallel loops split work so no two threads touch the same output entry
(channel slices for scatter kernels), so thread count never changes results.
"""

import numpy as np

from cython.parallel import prange
from libc.math cimport INFINITY

ctypedef fused floating:
    float
    double


def conv_forward(floating[:, :, ::1] x, floating[:, :, :, ::1] w,
                 floating[::1] b, Py_ssize_t dilation, int threads=1):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], l = w.shape[2]
    cdef Py_ssize_t e = (l - 1) * dilation + 1
    cdef Py_ssize_t ho = x.shape[1] - e + 1, wo = x.shape[2] - e + 1
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    y_arr = np.empty((cout, ho, wo), dt)
    cdef floating[:, :, ::1] y = y_arr
    cdef Py_ssize_t n, o, u, c, i, j, v, xr, xc
    cdef floating wv, bv
    if threads < 1:
        threads = 1
    with nogil:
        for n in prange(cout * ho, schedule='static', num_threads=threads):
            o = n // ho
            u = n - o * ho
            bv = b[o]
            for v in range(wo):
                y[o, u, v] = bv
            for c in range(cin):
                for i in range(l):
                    xr = u + i * dilation
                    for j in range(l):
                        wv = w[o, c, i, j]
                        xc = j * dilation
                        for v in range(wo):
                            y[o, u, v] = y[o, u, v] + wv * x[c, xr, v + xc]
    return y_arr


def conv_backward_data(floating[:, :, ::1] dy, floating[:, :, :, ::1] w,
                       Py_ssize_t dilation, int threads=1):
    cdef Py_ssize_t cout = w.shape[0], cin = w.shape[1], l = w.shape[2]
    cdef Py_ssize_t e = (l - 1) * dilation + 1
    cdef Py_ssize_t ho = dy.shape[1], wo = dy.shape[2]
    cdef Py_ssize_t hi = ho + e - 1, wi = wo + e - 1
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    dx_arr = np.empty((cin, hi, wi), dt)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, c, yy, xx, o, i, j, u, off, lo, hi2
    cdef floating wv
    if threads < 1:
        threads = 1
    with nogil:
        for n in prange(cin * hi, schedule='static', num_threads=threads):
            c = n // hi
            yy = n - c * hi
            for xx in range(wi):
                dx[c, yy, xx] = 0
            # gather form of: pad dy by e-1, correlate with the rotated kernel
            for o in range(cout):
                for i in range(l):
                    u = yy + i * dilation - (e - 1)
                    if u < 0 or u >= ho:
                        continue
                    for j in range(l):
                        wv = w[o, c, l - 1 - i, l - 1 - j]
                        off = j * dilation - (e - 1)
                        lo = 0 if off >= 0 else -off
                        hi2 = wi if wo - off > wi else wo - off
                        for xx in range(lo, hi2):
                            dx[c, yy, xx] = dx[c, yy, xx] + wv * dy[o, u, xx + off]
    return dx_arr


def conv_backward_kernel(floating[:, :, ::1] x, floating[:, :, ::1] dy,
                         Py_ssize_t kernel_size, Py_ssize_t dilation,
                         int threads=1):
    cdef Py_ssize_t l = kernel_size
    cdef Py_ssize_t cout = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    cdef Py_ssize_t cin = x.shape[0]
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    dw_arr = np.empty((cout, cin, l, l), dt)
    db_arr = np.empty(cout, dt)
    cdef floating[:, :, :, ::1] dw = dw_arr
    cdef floating[::1] db = db_arr
    cdef Py_ssize_t o, c, i, j, u, v, xr, xc
    cdef floating s
    if threads < 1:
        threads = 1
    with nogil:
        # one thread owns all gradient slices of an output channel
        for o in prange(cout, schedule='static', num_threads=threads):
            s = 0
            for u in range(ho):
                for v in range(wo):
                    s = s + dy[o, u, v]
            db[o] = s
            for c in range(cin):
                for i in range(l):
                    xr = i * dilation
                    for j in range(l):
                        xc = j * dilation
                        s = 0
                        for u in range(ho):
                            for v in range(wo):
                                s = s + dy[o, u, v] * x[c, u + xr, v + xc]
                        dw[o, c, i, j] = s
    return dw_arr, db_arr


def maxpool_forward(floating[:, :, ::1] x, Py_ssize_t p, Py_ssize_t dilation,
                    int threads=1):
    cdef Py_ssize_t e = (p - 1) * dilation + 1
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t ho = x.shape[1] - e + 1, wo = x.shape[2] - e + 1
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    y_arr = np.empty((c, ho, wo), dt)
    arg_arr = np.empty((c, ho, wo), np.int32)
    cdef floating[:, :, ::1] y = y_arr
    cdef int[:, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, ch, u, v, i, j, xr, bk
    cdef floating best, xv
    if threads < 1:
        threads = 1
    with nogil:
        for n in prange(c * ho, schedule='static', num_threads=threads):
            ch = n // ho
            u = n - ch * ho
            for v in range(wo):
                best = <floating> (-INFINITY)
                bk = 0
                for i in range(p):
                    xr = u + i * dilation
                    for j in range(p):
                        xv = x[ch, xr, v + j * dilation]
                        if xv > best:  # strict: earlier taps win ties
                            best = xv
                            bk = i * p + j
                y[ch, u, v] = best
                arg[ch, u, v] = <int> bk
    return y_arr, arg_arr


def maxpool_backward(floating[:, :, ::1] dy, int[:, :, ::1] arg, Py_ssize_t p,
                     Py_ssize_t dilation, Py_ssize_t hi, Py_ssize_t wi,
                     int threads=1):
    cdef Py_ssize_t c = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    dx_arr = np.zeros((c, hi, wi), dt)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t ch, u, v, k, i, j
    if threads < 1:
        threads = 1
    with nogil:
        # stride-1 windows overlap, so += scatter; channels keep threads disjoint
        for ch in prange(c, schedule='static', num_threads=threads):
            for u in range(ho):
                for v in range(wo):
                    k = arg[ch, u, v]
                    i = k // p
                    j = k - i * p
                    dx[ch, u + i * dilation, v + j * dilation] += dy[ch, u, v]
    return dx_arr


def avgpool_forward(floating[:, :, ::1] x, Py_ssize_t p, Py_ssize_t dilation,
                    int threads=1):
    cdef Py_ssize_t e = (p - 1) * dilation + 1
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t ho = x.shape[1] - e + 1, wo = x.shape[2] - e + 1
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    y_arr = np.empty((c, ho, wo), dt)
    cdef floating[:, :, ::1] y = y_arr
    cdef Py_ssize_t n, ch, u, v, i, j, xr
    cdef floating acc, pp
    pp = <floating> (p * p)
    if threads < 1:
        threads = 1
    with nogil:
        for n in prange(c * ho, schedule='static', num_threads=threads):
            ch = n // ho
            u = n - ch * ho
            for v in range(wo):
                acc = 0
                for i in range(p):
                    xr = u + i * dilation
                    for j in range(p):
                        acc = acc + x[ch, xr, v + j * dilation]
                y[ch, u, v] = acc / pp
    return y_arr


def avgpool_backward(floating[:, :, ::1] dy, Py_ssize_t p, Py_ssize_t dilation,
                     Py_ssize_t hi, Py_ssize_t wi, int threads=1):
    cdef Py_ssize_t c = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    if floating is float:
        dt = np.float32
    else:
        dt = np.float64
    dx_arr = np.zeros((c, hi, wi), dt)
    cdef floating[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t ch, u, v, i, j, xr
    cdef floating q, pp
    pp = <floating> (p * p)
    if threads < 1:
        threads = 1
    with nogil:
        for ch in prange(c, schedule='static', num_threads=threads):
            for u in range(ho):
                for v in range(wo):
                    q = dy[ch, u, v] / pp
                    for i in range(p):
                        xr = u + i * dilation
                        for j in range(p):
                            dx[ch, xr, v + j * dilation] += q
    return dx_arr
