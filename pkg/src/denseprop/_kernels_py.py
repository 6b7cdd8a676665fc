"""Pure numpy kernels: the fallback used when the compiled core is absent.

Forward kernels accumulate each output entry in a fixed order — bias first,
then taps over (channel, kernel row, kernel col) — by looping over taps and
vectorizing across output positions. Each entry therefore sees exactly the
same float operation sequence as the compiled core's scalar loops, which is
what makes the two backends (and the patch-by-patch reference) agree to the
last bit in float64. The `threads` argument is accepted for interface parity
and ignored.

All arrays are C-contiguous (C, H, W) float32/float64.
"""

from __future__ import annotations

import numpy as np


def conv_forward(x, w, b, dilation, threads=1):
    cout, cin, l, _ = w.shape
    e = (l - 1) * dilation + 1
    ho = x.shape[1] - e + 1
    wo = x.shape[2] - e + 1
    y = np.empty((cout, ho, wo), dtype=x.dtype)
    y[:] = b[:, None, None]
    for c in range(cin):
        for i in range(l):
            rs = i * dilation
            for j in range(l):
                cs = j * dilation
                y += w[:, c, i, j][:, None, None] * x[c, rs:rs + ho, cs:cs + wo]
    return y


def conv_backward_data(dy, w, dilation, threads=1):
    cout, ho, wo = dy.shape
    cin, l = w.shape[1], w.shape[2]
    e = (l - 1) * dilation + 1
    hi, wi = ho + e - 1, wo + e - 1
    pad = np.zeros((cout, ho + 2 * (e - 1), wo + 2 * (e - 1)), dtype=dy.dtype)
    pad[:, e - 1:e - 1 + ho, e - 1:e - 1 + wo] = dy
    dx = np.zeros((cin, hi, wi), dtype=dy.dtype)
    # correlate the padded error map with the 180-degree rotated kernel
    for o in range(cout):
        for i in range(l):
            rs = i * dilation
            for j in range(l):
                cs = j * dilation
                dx += w[o, :, l - 1 - i, l - 1 - j][:, None, None] \
                    * pad[o, rs:rs + hi, cs:cs + wi]
    return dx


def conv_backward_kernel(x, dy, kernel_size, dilation, threads=1):
    l = kernel_size
    cout, ho, wo = dy.shape
    cin = x.shape[0]
    dw = np.empty((cout, cin, l, l), dtype=x.dtype)
    for i in range(l):
        rs = i * dilation
        for j in range(l):
            cs = j * dilation
            window = x[:, rs:rs + ho, cs:cs + wo]
            dw[:, :, i, j] = np.tensordot(dy, window, axes=([1, 2], [1, 2]))
    db = dy.sum(axis=(1, 2))
    return dw, db


def maxpool_forward(x, p, dilation, threads=1):
    c = x.shape[0]
    e = (p - 1) * dilation + 1
    ho = x.shape[1] - e + 1
    wo = x.shape[2] - e + 1
    y = x[:, :ho, :wo].copy()
    arg = np.zeros((c, ho, wo), dtype=np.int32)
    for i in range(p):
        rs = i * dilation
        for j in range(p):
            if i == 0 and j == 0:
                continue
            tap = x[:, rs:rs + ho, j * dilation:j * dilation + wo]
            upd = tap > y  # strict: earlier taps win ties
            y[upd] = tap[upd]
            arg[upd] = i * p + j
    return y, arg


def maxpool_backward(dy, arg, p, dilation, hi, wi, threads=1):
    c = dy.shape[0]
    dx = np.zeros((c, hi, wi), dtype=dy.dtype)
    for i in range(p):
        for j in range(p):
            sel = arg == i * p + j
            if not sel.any():
                continue
            cc, uu, vv = np.nonzero(sel)
            # within one tap no two outputs share an input pixel
            dx[cc, uu + i * dilation, vv + j * dilation] += dy[sel]
    return dx


def avgpool_forward(x, p, dilation, threads=1):
    e = (p - 1) * dilation + 1
    ho = x.shape[1] - e + 1
    wo = x.shape[2] - e + 1
    y = x[:, :ho, :wo].copy()
    for i in range(p):
        rs = i * dilation
        for j in range(p):
            if i == 0 and j == 0:
                continue
            y += x[:, rs:rs + ho, j * dilation:j * dilation + wo]
    return y / (p * p)


def avgpool_backward(dy, p, dilation, hi, wi, threads=1):
    c = dy.shape[0]
    ho, wo = dy.shape[1], dy.shape[2]
    dx = np.zeros((c, hi, wi), dtype=dy.dtype)
    q = dy / (p * p)
    for i in range(p):
        rs = i * dilation
        for j in range(p):
            cs = j * dilation
            dx[:, rs:rs + ho, cs:cs + wo] += q
    return dx
