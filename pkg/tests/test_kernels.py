import math
import os
import subprocess
import sys

import numpy as np
import pytest

from oracles import central_difference, loop_conv2d, triple_loop_dft


def test_conv_forward_matches_loops(kern, rng):
    x = rng.standard_normal((3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = kern.conv2d_forward(x, w, b)
    np.testing.assert_allclose(out, loop_conv2d(x, w, b), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [1, 5])
def test_conv_forward_other_kernel_sizes(kern, rng, k):
    x = rng.standard_normal((2, 6, 6))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    np.testing.assert_allclose(kern.conv2d_forward(x, w, b)[0], loop_conv2d(x, w, b),
                               rtol=1e-12, atol=1e-12)


def test_conv_backward_is_the_transpose(kern, rng):
    x = rng.standard_normal((3, 6, 5))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    g = rng.standard_normal((2, 6, 5))
    gx, gw, gb = kern.conv2d_backward(x, w, g, True)
    f = lambda xx, ww, bb: np.sum(g * loop_conv2d(xx, ww, bb))
    dx = rng.standard_normal(x.shape)
    dw = rng.standard_normal(w.shape)
    assert central_difference(lambda v: f(v, w, b), x, dx) == pytest.approx(np.sum(gx * dx), rel=1e-8)
    assert central_difference(lambda v: f(x, v, b), w, dw) == pytest.approx(np.sum(gw * dw), rel=1e-8)
    np.testing.assert_allclose(gb, g.sum(axis=(1, 2)))


def test_conv_backward_skips_input_gradient(kern, rng):
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((2, 2, 3, 3))
    gx, gw, _ = kern.conv2d_backward(x, w, rng.standard_normal((2, 5, 5)), False)
    assert gx is None and gw.shape == w.shape


def test_nudft_forward_matches_triple_loop(kern, rng):
    img = rng.standard_normal((2, 5, 7)) + 1j * rng.standard_normal((2, 5, 7))
    coords = rng.uniform(-math.pi, math.pi, (30, 2))
    got = kern.nudft_forward(img, coords)
    ref = np.stack([triple_loop_dft(c, coords) for c in img])
    assert np.linalg.norm(got - ref) / np.linalg.norm(ref) < 1e-12


def test_nudft_adjoint_identity(kern, rng):
    img = rng.standard_normal((3, 6, 4)) + 1j * rng.standard_normal((3, 6, 4))
    coords = rng.uniform(-math.pi, math.pi, (25, 2))
    y = rng.standard_normal((3, 25)) + 1j * rng.standard_normal((3, 25))
    lhs = np.vdot(y, kern.nudft_forward(img, coords))
    rhs = np.vdot(kern.nudft_adjoint(y, coords, (6, 4)), img)
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_nudft_chunking_is_seamless(rng):
    from dfmr.kernels import _numpy

    img = rng.standard_normal((1, 4, 4)) + 0j
    coords = rng.uniform(-math.pi, math.pi, (50, 2))
    full = _numpy.nudft_forward(img, coords)
    old = _numpy.CHUNK
    try:
        _numpy.CHUNK = 7
        np.testing.assert_allclose(_numpy.nudft_forward(img, coords), full, rtol=1e-13)
        y = rng.standard_normal((1, 50)) + 0j
        small = _numpy.nudft_adjoint(y, coords, (4, 4))
    finally:
        _numpy.CHUNK = old
    np.testing.assert_allclose(small, _numpy.nudft_adjoint(y, coords, (4, 4)), rtol=1e-13)


def test_nudft_jacobian_matches_finite_differences(kern, rng):
    img = rng.standard_normal((2, 5, 5)) + 1j * rng.standard_normal((2, 5, 5))
    coords = rng.uniform(-2, 2, (9, 2))
    y, d0, d1 = kern.nudft_jacobian(img, coords)
    np.testing.assert_allclose(y, kern.nudft_forward(img, coords), rtol=1e-13)
    for axis, d in ((0, d0), (1, d1)):
        e = np.zeros_like(coords)
        e[:, axis] = 1
        fd = central_difference(lambda c: kern.nudft_forward(img, c), coords, e, h=1e-6)
        np.testing.assert_allclose(d, fd, rtol=1e-6, atol=1e-7)


def test_backends_agree(rng):
    from dfmr.kernels import get_backend

    a, b = get_backend("numpy"), get_backend("numba")
    x = rng.standard_normal((4, 9, 9))
    w = rng.standard_normal((3, 4, 3, 3))
    bias = rng.standard_normal(3)
    g = rng.standard_normal((3, 9, 9))
    np.testing.assert_allclose(a.conv2d_forward(x, w, bias)[0], b.conv2d_forward(x, w, bias)[0],
                               rtol=1e-13, atol=1e-13)
    for u, v in zip(a.conv2d_backward(x, w, g), b.conv2d_backward(x, w, g)):
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-13)
    img = rng.standard_normal((2, 8, 8)) + 1j * rng.standard_normal((2, 8, 8))
    coords = rng.uniform(-math.pi, math.pi, (40, 2))
    np.testing.assert_allclose(a.nudft_forward(img, coords), b.nudft_forward(img, coords), rtol=1e-12)
    y = a.nudft_forward(img, coords)
    np.testing.assert_allclose(a.nudft_adjoint(y, coords, (8, 8)), b.nudft_adjoint(y, coords, (8, 8)),
                               rtol=1e-12)


@pytest.mark.parametrize("value,expected", [("numpy", "numpy"), ("numba", "numba")])
def test_backend_env_flag(value, expected):
    env = dict(os.environ, DFMR_BACKEND=value)
    out = subprocess.run([sys.executable, "-c", "import dfmr.kernels as k; print(k.backend)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_backend_env_flag_rejects_unknown():
    env = dict(os.environ, DFMR_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import dfmr.kernels"], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0 and "DFMR_BACKEND" in out.stderr
