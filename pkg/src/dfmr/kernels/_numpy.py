"""Vectorised numpy kernels.

The non-uniform DFT exploits separability of the exponential on the
pixel grid, ``exp(-i k.r) = exp(-i k0 r0) * exp(-i k1 r1)``, so each chunk
of samples costs one dense matrix product per coil stack.
"""

import numpy as np

# samples per chunk; bounds the [m, H] exponential tables
CHUNK = 8192


def grid(n):
    """Centered integer pixel coordinates ``-n//2 .. n - n//2 - 1``."""
    return np.arange(n, dtype=np.float64) - n // 2


def _im2col(x, k):
    c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = np.empty((c, k, k, h, w))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i:i + h, j:j + w]
    return cols.reshape(c * k * k, h * w)


def conv2d_forward(x, w, b, cols=None):
    """Returns the output and the column matrix, reusable by the backward pass."""
    o, _, k, _ = w.shape
    _, h, wd = x.shape
    cols = _im2col(x, k) if cols is None else cols
    out = w.reshape(o, -1) @ cols
    out += b[:, None]
    return out.reshape(o, h, wd), cols


def conv2d_backward(x, w, gout, need_input=True, cols=None):
    o, c, k, _ = w.shape
    _, h, wd = x.shape
    g = gout.reshape(o, -1)
    cols = _im2col(x, k) if cols is None else cols
    gw = (g @ cols.T).reshape(w.shape)
    gb = g.sum(axis=1)
    if not need_input:
        return None, gw, gb
    gcols = (w.reshape(o, -1).T @ g).reshape(c, k, k, h, wd)
    p = k // 2
    gxp = np.zeros((c, h + 2 * p, wd + 2 * p))
    for i in range(k):
        for j in range(k):
            gxp[:, i:i + h, j:j + wd] += gcols[:, i, j]
    return gxp[:, p:p + h, p:p + wd].copy(), gw, gb


def _tables(coords, h, w):
    e0 = np.exp(-1j * np.outer(coords[:, 0], grid(h)))
    e1 = np.exp(-1j * np.outer(coords[:, 1], grid(w)))
    return e0, e1


def nudft_forward(img, coords):
    c, h, w = img.shape
    m = coords.shape[0]
    stack = np.ascontiguousarray(img.transpose(1, 0, 2)).reshape(h, c * w)
    out = np.empty((c, m), dtype=np.complex128)
    for s in range(0, m, CHUNK):
        e0, e1 = _tables(coords[s:s + CHUNK], h, w)
        g = (e0 @ stack).reshape(-1, c, w)
        out[:, s:s + CHUNK] = np.einsum("mcw,mw->cm", g, e1)
    return out


def nudft_adjoint(samples, coords, shape):
    h, w = shape
    c, m = samples.shape
    acc = np.zeros((h, c * w), dtype=np.complex128)
    for s in range(0, m, CHUNK):
        e0, e1 = _tables(coords[s:s + CHUNK], h, w)
        z = samples[:, s:s + CHUNK].T[:, :, None] * e1.conj()[:, None, :]
        acc += e0.conj().T @ z.reshape(-1, c * w)
    return acc.reshape(h, c, w).transpose(1, 0, 2).copy()


def nudft_jacobian(img, coords):
    """Samples and their derivatives with respect to both k components."""
    c, h, w = img.shape
    m = coords.shape[0]
    r0 = grid(h)
    r1 = grid(w)
    stack = np.ascontiguousarray(img.transpose(1, 0, 2)).reshape(h, c * w)
    y = np.empty((c, m), dtype=np.complex128)
    d0 = np.empty_like(y)
    d1 = np.empty_like(y)
    for s in range(0, m, CHUNK):
        e0, e1 = _tables(coords[s:s + CHUNK], h, w)
        g = (e0 @ stack).reshape(-1, c, w)
        g0 = ((e0 * (-1j * r0)) @ stack).reshape(-1, c, w)
        y[:, s:s + CHUNK] = np.einsum("mcw,mw->cm", g, e1)
        d0[:, s:s + CHUNK] = np.einsum("mcw,mw->cm", g0, e1)
        d1[:, s:s + CHUNK] = np.einsum("mcw,mw->cm", g, e1 * (-1j * r1))
    return y, d0, d1
