import numpy as np
import pytest

from dfmr import autodiff as ad
from dfmr.optim import Adam, AdamState, NonFiniteError, adam_step
from oracles import loop_conv2d


def grad_check(build, params, rng, h=1e-6, rel=1e-6):
    """Directional finite-difference check of ``build() -> scalar Tensor``."""
    for p in params:
        p.zero_grad()
    ad.backward(build())
    for p in params:
        d = rng.standard_normal(p.shape)
        base = p.data.copy()
        p.data[...] = base + h * d
        fp = build().item()
        p.data[...] = base - h * d
        fm = build().item()
        p.data[...] = base
        assert (fp - fm) / (2 * h) == pytest.approx(np.sum(p.grad * d), rel=rel, abs=1e-9)


def test_elementwise_ops(rng):
    a = ad.Parameter(rng.standard_normal((3, 4)))
    b = ad.Parameter(rng.standard_normal((4,)))
    f = lambda: ad.sqnorm(ad.tanh(ad.mul(ad.add(a, b), ad.sub(a, b))) + ad.leaky_relu(a, 0.1))
    grad_check(f, [a, b], rng)


def test_take_with_repeated_indices(rng):
    a = ad.Parameter(rng.standard_normal(5))
    f = lambda: ad.sqnorm(a[np.array([0, 0, 3])])
    a.zero_grad()
    ad.backward(f())
    expect = np.zeros(5)
    expect[0] = 4 * a.data[0]
    expect[3] = 2 * a.data[3]
    np.testing.assert_allclose(a.grad, expect)


def test_reshape_concat_scale(rng):
    a = ad.Parameter(rng.standard_normal((2, 3)))
    b = ad.Parameter(rng.standard_normal((1, 3)))
    f = lambda: ad.sum_all(ad.scale(ad.reshape(ad.concat([a, b], axis=0), (9,)), 2.5) * ad.reshape(ad.concat([a, b], axis=0), (9,)))
    grad_check(f, [a, b], rng)


def test_conv_layer_value_and_gradients(rng):
    x = ad.Parameter(rng.standard_normal((2, 5, 6)))
    w = ad.Parameter(rng.standard_normal((3, 2, 3, 3)))
    b = ad.Parameter(rng.standard_normal(3))
    y = ad.conv2d(x, w, b)
    np.testing.assert_allclose(y.data, loop_conv2d(x.data, w.data, b.data), rtol=1e-12)
    grad_check(lambda: ad.sqnorm(ad.conv2d(x, w, b)), [x, w, b], rng)


def test_conv_constant_input_caches_columns(rng):
    x = ad.Tensor(rng.standard_normal((2, 5, 5)))
    w = ad.Parameter(rng.standard_normal((2, 2, 3, 3)))
    b = ad.Parameter(np.zeros(2))
    first = ad.conv2d(x, w, b).data.copy()
    w.data *= 2
    np.testing.assert_allclose(ad.conv2d(x, w, b).data, 2 * first)


@pytest.mark.parametrize("bad_kernel", [(3, 2, 2, 2), (3, 2, 3, 5)])
def test_conv_rejects_even_or_rectangular_kernels(bad_kernel):
    with pytest.raises(ad.DimensionError):
        ad.conv2d(np.zeros((2, 4, 4)), np.zeros(bad_kernel), np.zeros(3))


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.conv2d(np.zeros((2, 4, 4)), np.zeros((3, 4, 3, 3)), np.zeros(3))


def test_modulate_and_dense(rng):
    feats = ad.Parameter(rng.standard_normal((3, 4, 4)))
    fac = ad.Parameter(rng.standard_normal(3))
    W = ad.Parameter(rng.standard_normal((5, 3)))
    bias = ad.Parameter(rng.standard_normal(5))
    back = rng.standard_normal((3, 5))
    f = lambda: ad.sqnorm(ad.channel_modulate(
        feats, ad.tanh(ad.dense(ad.dense(fac, W, bias), back, np.zeros(3)))))
    grad_check(f, [feats, fac, W, bias], rng)
    with pytest.raises(ad.DimensionError):
        ad.channel_modulate(feats, np.ones(2))


def test_complex_matmul_matches_numpy(rng):
    a = rng.standard_normal((2, 4, 3))
    b = rng.standard_normal((2, 3, 2))
    z = ad.complex_matmul(a, b).data
    np.testing.assert_allclose(ad.pair_to_complex(z), ad.pair_to_complex(a) @ ad.pair_to_complex(b))
    A, B = ad.Parameter(a), ad.Parameter(b)
    grad_check(lambda: ad.sqnorm(ad.complex_matmul(A, B)), [A, B], rng)


def test_backward_requires_real_scalar():
    a = ad.Parameter(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(ad.tanh(a))


def test_gradients_accumulate_across_backward_calls(rng):
    a = ad.Parameter(rng.standard_normal(4))
    ad.backward(ad.sqnorm(a))
    ad.backward(ad.sqnorm(a))
    np.testing.assert_allclose(a.grad, 4 * a.data)


def test_deep_graph_does_not_recurse():
    a = ad.Parameter(np.array([1.0]))
    x = a
    for _ in range(5000):
        x = ad.scale(x, 1.0)
    ad.backward(ad.sum_all(x))
    assert a.grad[0] == 1.0


# --- Adam --------------------------------------------------------------------

def adam_reference(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for k, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** k)) / (np.sqrt(v / (1 - b2 ** k)) + eps)
    return theta


def test_adam_matches_scalar_reference():
    p = ad.Parameter(np.array([0.3]))
    st = AdamState.for_param(p, lr=0.01)
    grads = [0.5, -0.2, 1.5, 0.0, 2.0]
    for g in grads:
        p.grad[...] = g
        adam_step(p, st)
    assert p.data[0] == pytest.approx(adam_reference(0.3, grads, 0.01), rel=1e-14)


def test_adam_first_step_is_lr_times_sign():
    p = ad.Parameter(np.array([1.0, -1.0, 2.0]))
    p.grad[...] = [3.0, -1e-3, 7.0]
    adam_step(p, AdamState.for_param(p, lr=0.1))
    # |g| / (|g| + eps) shortens the step for the small gradient by ~1e-5
    np.testing.assert_allclose(p.data, [0.9, -0.9, 1.9], rtol=1e-5)


def test_adam_minimises_quadratic():
    p = ad.Parameter(np.array([3.0, -2.0]))
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        ad.backward(ad.sqnorm(ad.sub(p, np.array([1.0, 1.0]))))
        opt.step()
    np.testing.assert_allclose(p.data, [1.0, 1.0], atol=1e-3)


def test_adam_rejects_non_finite_gradient():
    p = ad.Parameter(np.zeros(2))
    p.grad[...] = [np.nan, 0.0]
    with pytest.raises(NonFiniteError):
        adam_step(p, AdamState.for_param(p))


def test_adam_per_parameter_rates():
    a, b = ad.Parameter(np.zeros(1)), ad.Parameter(np.zeros(1))
    opt = Adam([a, b], lr=0.1, lrs={1: 0.01})
    a.grad[...] = 1.0
    b.grad[...] = 1.0
    opt.step()
    assert a.data[0] == pytest.approx(-0.1, rel=1e-6)
    assert b.data[0] == pytest.approx(-0.01, rel=1e-6)
