"""Loop kernels compiled with numba.

Same signatures and results as :mod:`dfmr.kernels._numpy`. Reductions run
in a fixed order so results are reproducible run to run.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def _conv2d_forward(x, w, b):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    out = np.empty((cout, h, wd))
    for o in range(cout):
        out[o] = b[o]
        for c in range(cin):
            for di in range(k):
                i0 = max(0, p - di)
                i1 = min(h, h + p - di)
                for dj in range(k):
                    j0 = max(0, p - dj)
                    j1 = min(wd, wd + p - dj)
                    wv = w[o, c, di, dj]
                    for i in range(i0, i1):
                        ii = i + di - p
                        for j in range(j0, j1):
                            out[o, i, j] += wv * x[c, ii, j + dj - p]
    return out


@njit(cache=True, fastmath=False)
def _conv2d_backward(x, w, g, need_input):
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    p = k // 2
    gx = np.zeros((cin, h, wd))
    gw = np.zeros((cout, cin, k, k))
    gb = np.zeros(cout)
    for o in range(cout):
        gb[o] = g[o].sum()
        for c in range(cin):
            for di in range(k):
                i0 = max(0, p - di)
                i1 = min(h, h + p - di)
                for dj in range(k):
                    j0 = max(0, p - dj)
                    j1 = min(wd, wd + p - dj)
                    wv = w[o, c, di, dj]
                    acc = 0.0
                    for i in range(i0, i1):
                        ii = i + di - p
                        for j in range(j0, j1):
                            acc += g[o, i, j] * x[c, ii, j + dj - p]
                            if need_input:
                                gx[c, ii, j + dj - p] += wv * g[o, i, j]
                    gw[o, c, di, dj] = acc
    return gx, gw, gb


@njit(cache=True)
def _axis_table(kcol, n, sign):
    m = kcol.shape[0]
    t = np.empty((m, n), dtype=np.complex128)
    half = n // 2
    for a in range(m):
        for r in range(n):
            t[a, r] = np.exp(sign * 1j * kcol[a] * (r - half))
    return t


@njit(cache=True)
def _nudft_forward(img, coords):
    c, h, w = img.shape
    m = coords.shape[0]
    e0 = _axis_table(coords[:, 0], h, -1.0)
    e1 = _axis_table(coords[:, 1], w, -1.0)
    out = np.empty((c, m), dtype=np.complex128)
    for a in range(m):
        for q in range(c):
            acc = 0j
            for r0 in range(h):
                row = 0j
                for r1 in range(w):
                    row += img[q, r0, r1] * e1[a, r1]
                acc += e0[a, r0] * row
            out[q, a] = acc
    return out


@njit(cache=True)
def _nudft_adjoint(samples, coords, h, w):
    c, m = samples.shape
    e0 = _axis_table(coords[:, 0], h, 1.0)
    e1 = _axis_table(coords[:, 1], w, 1.0)
    out = np.zeros((c, h, w), dtype=np.complex128)
    for q in range(c):
        for a in range(m):
            ya = samples[q, a]
            for r0 in range(h):
                v = ya * e0[a, r0]
                for r1 in range(w):
                    out[q, r0, r1] += v * e1[a, r1]
    return out


@njit(cache=True)
def _nudft_jacobian(img, coords):
    c, h, w = img.shape
    m = coords.shape[0]
    e0 = _axis_table(coords[:, 0], h, -1.0)
    e1 = _axis_table(coords[:, 1], w, -1.0)
    y = np.empty((c, m), dtype=np.complex128)
    d0 = np.empty((c, m), dtype=np.complex128)
    d1 = np.empty((c, m), dtype=np.complex128)
    h2 = h // 2
    w2 = w // 2
    for a in range(m):
        for q in range(c):
            acc = 0j
            acc0 = 0j
            acc1 = 0j
            for r0 in range(h):
                row = 0j
                row1 = 0j
                for r1 in range(w):
                    t = img[q, r0, r1] * e1[a, r1]
                    row += t
                    row1 += t * (r1 - w2)
                z = e0[a, r0]
                acc += z * row
                acc0 += z * row * (r0 - h2)
                acc1 += z * row1
            y[q, a] = acc
            d0[q, a] = -1j * acc0
            d1[q, a] = -1j * acc1
    return y, d0, d1


def conv2d_forward(x, w, b, cols=None):
    out = _conv2d_forward(np.ascontiguousarray(x, dtype=np.float64),
                          np.ascontiguousarray(w, dtype=np.float64),
                          np.ascontiguousarray(b, dtype=np.float64))
    return out, None


def conv2d_backward(x, w, gout, need_input=True, cols=None):
    gx, gw, gb = _conv2d_backward(np.ascontiguousarray(x, dtype=np.float64),
                                  np.ascontiguousarray(w, dtype=np.float64),
                                  np.ascontiguousarray(gout, dtype=np.float64), need_input)
    return (gx if need_input else None), gw, gb


def nudft_forward(img, coords):
    return _nudft_forward(np.ascontiguousarray(img, dtype=np.complex128),
                          np.ascontiguousarray(coords, dtype=np.float64))


def nudft_adjoint(samples, coords, shape):
    return _nudft_adjoint(np.ascontiguousarray(samples, dtype=np.complex128),
                          np.ascontiguousarray(coords, dtype=np.float64),
                          int(shape[0]), int(shape[1]))


def nudft_jacobian(img, coords):
    return _nudft_jacobian(np.ascontiguousarray(img, dtype=np.complex128),
                           np.ascontiguousarray(coords, dtype=np.float64))
