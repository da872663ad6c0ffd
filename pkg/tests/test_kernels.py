"""Backend equivalence: the numba kernels must compute the same math as the
pure-NumPy reference path."""

import numpy as np
import pytest

from twinflow.kernels import numpy_impl

numba_impl = pytest.importorskip("twinflow.kernels.numba_impl")


@pytest.fixture
def rng():
    return np.random.default_rng(123)


def test_softmax_rows_matches(rng):
    x = np.ascontiguousarray(rng.normal(size=(7, 13)) * 5)
    np.testing.assert_allclose(numba_impl.softmax_rows(x), numpy_impl.softmax_rows(x),
                               rtol=1e-13, atol=1e-15)


def test_softmax_rows_with_neginf(rng):
    x = np.ascontiguousarray(rng.normal(size=(4, 6)))
    x[:, 4:] = -np.inf
    a = numba_impl.softmax_rows(x)
    b = numpy_impl.softmax_rows(x)
    assert (a[:, 4:] == 0.0).all() and (b[:, 4:] == 0.0).all()
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


def test_softmax_grad_matches(rng):
    x = np.ascontiguousarray(rng.normal(size=(5, 9)))
    g = np.ascontiguousarray(rng.normal(size=(5, 9)))
    y = numpy_impl.softmax_rows(x)
    np.testing.assert_allclose(numba_impl.softmax_rows_grad(y, g),
                               numpy_impl.softmax_rows_grad(y, g),
                               rtol=1e-13, atol=1e-15)


def test_layernorm_matches(rng):
    x = np.ascontiguousarray(rng.normal(size=(6, 11)) * 2 + 3)
    ya, ra = numba_impl.layernorm_rows(x, 1e-5)
    yb, rb = numpy_impl.layernorm_rows(x, 1e-5)
    np.testing.assert_allclose(ya, yb, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(ra, rb, rtol=1e-12)
    g = np.ascontiguousarray(rng.normal(size=x.shape))
    np.testing.assert_allclose(numba_impl.layernorm_rows_grad(ya, ra, g),
                               numpy_impl.layernorm_rows_grad(yb, rb, g),
                               rtol=1e-11, atol=1e-13)


def test_gelu_matches(rng):
    x = np.ascontiguousarray(rng.normal(size=64) * 3)
    g = np.ascontiguousarray(rng.normal(size=64))
    np.testing.assert_allclose(numba_impl.gelu(x), numpy_impl.gelu(x),
                               rtol=1e-11, atol=1e-15)
    np.testing.assert_allclose(numba_impl.gelu_grad(x, g), numpy_impl.gelu_grad(x, g),
                               rtol=1e-11, atol=1e-15)


def test_rope_matches_and_preserves_norm(rng):
    d, seq = 8, 5
    x = np.ascontiguousarray(rng.normal(size=(seq, d)))
    pos = np.arange(seq, dtype=np.int64)
    cos = np.ascontiguousarray(np.cos(rng.normal(size=(16, d // 2))))
    sin = np.ascontiguousarray(np.sin(rng.normal(size=(16, d // 2))))
    # use a real angle table so cos^2+sin^2 == 1 for the norm check
    ang = np.outer(np.arange(16, dtype=float), 0.3 + np.arange(d // 2))
    cos, sin = np.ascontiguousarray(np.cos(ang)), np.ascontiguousarray(np.sin(ang))
    a = numba_impl.rope_rotate(x, pos, cos, sin, 1.0)
    b = numpy_impl.rope_rotate(x, pos, cos, sin, 1.0)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-16)
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), np.linalg.norm(x, axis=1),
                               rtol=1e-12)
    # inverse rotation undoes the forward one
    undone = numpy_impl.rope_rotate(b, pos, cos, sin, -1.0)
    np.testing.assert_allclose(undone, x, rtol=1e-12, atol=1e-14)


def test_adamw_matches(rng):
    n = 33
    p0 = rng.normal(size=n)
    g = rng.normal(size=n)
    state_a = [p0.copy(), np.zeros(n), np.zeros(n)]
    state_b = [p0.copy(), np.zeros(n), np.zeros(n)]
    for impl, (p, m, v) in ((numba_impl, state_a), (numpy_impl, state_b)):
        impl.adamw_update(p, g, m, v, 1e-3, 0.9, 0.95, 1e-8, 0.01, 1 - 0.9, 1 - 0.95)
    np.testing.assert_allclose(state_a[0], state_b[0], rtol=1e-14, atol=1e-16)
    np.testing.assert_allclose(state_a[1], state_b[1], rtol=1e-14)
    np.testing.assert_allclose(state_a[2], state_b[2], rtol=1e-14)
