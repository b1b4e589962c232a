import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepcomplex.complex_core import as_complex, complex_conv2d, fft2c, ifft2c
from deepcomplex.errors import ShapeError

from conftest import crandn, naive_complex_conv


def test_delta_to_constant():
    x = np.zeros((4, 4), complex)
    x[2, 2] = 1
    np.testing.assert_allclose(fft2c(x), np.full((4, 4), 0.25), atol=1e-12)
    np.testing.assert_allclose(ifft2c(np.full((4, 4), 0.25 + 0j)), x, atol=1e-12)


def test_zero_in_zero_out():
    assert not fft2c(np.zeros((6, 8), complex)).any()


@pytest.mark.parametrize("n", [4, 8, 16, 32, 64])
def test_round_trip(rng, n):
    x = crandn(rng, n, n)
    assert np.abs(ifft2c(fft2c(x)) - x).max() < 1e-10


def test_parseval_many(rng):
    for _ in range(200):
        n = int(rng.choice([4, 8, 16]))
        x = crandn(rng, n, n)
        assert abs(np.sum(abs(x) ** 2) - np.sum(abs(fft2c(x)) ** 2)) < 1e-10


def test_ifft_linear(rng):
    a, b = crandn(rng, 16, 16), crandn(rng, 16, 16)
    assert np.abs(ifft2c(a + b) - ifft2c(a) - ifft2c(b)).max() < 1e-12


def test_fft_batched_axes(rng):
    x = crandn(rng, 3, 8, 8)
    np.testing.assert_allclose(fft2c(x)[1], fft2c(x[1]), atol=1e-14)


def test_empty_rejected():
    with pytest.raises(ShapeError):
        fft2c(np.zeros((0, 4)))
    with pytest.raises(ShapeError):
        ifft2c(np.zeros((4, 0)))
    with pytest.raises(ShapeError):
        as_complex(np.zeros((0,)))


def test_as_complex_rejects_nan():
    with pytest.raises(ValueError):
        as_complex([1.0, np.nan])


def test_conv_times_i(rng):
    u = crandn(rng, 1, 5, 5)
    out = complex_conv2d(u, np.full((1, 1, 1, 1), 1j), np.zeros(1, complex))
    np.testing.assert_array_equal(out.real, -u.imag)
    np.testing.assert_array_equal(out.imag, u.real)


def test_conv_identity(rng):
    u = crandn(rng, 1, 5, 5)
    np.testing.assert_array_equal(complex_conv2d(u, np.ones((1, 1, 1, 1), complex)), u)


def test_conv_vs_naive(rng):
    x, w, b = crandn(rng, 2, 6, 6), crandn(rng, 3, 2, 3, 3), crandn(rng, 3)
    ref = naive_complex_conv(x, w, b)
    assert np.abs(complex_conv2d(x, w, b) - ref).max() / np.abs(ref).max() < 1e-12


def test_conv_real_operands_stay_real(rng):
    x, w = rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
    out = complex_conv2d(x, w)
    assert out.dtype == np.float64
    np.testing.assert_allclose(out, naive_complex_conv(x, w).real, atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1, 2, 3), (1, 1, 3, 2)])
def test_conv_rejects_even_kernel(shape):
    with pytest.raises(ShapeError):
        complex_conv2d(np.zeros((1, 4, 4)), np.zeros(shape))


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        complex_conv2d(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ShapeError):
        complex_conv2d(np.zeros((2, 4, 4)), np.zeros((1, 2, 3, 3)), np.zeros(2))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), cin=st.integers(1, 3), cout=st.integers(1, 3),
       k=st.sampled_from([1, 3, 5]))
def test_conv_linear_and_conjugate(seed, cin, cout, k):
    rng = np.random.default_rng(seed)
    x1, x2 = crandn(rng, cin, 6, 6), crandn(rng, cin, 6, 6)
    w1, w2 = crandn(rng, cout, cin, k, k), crandn(rng, cout, cin, k, k)
    conv = complex_conv2d
    assert np.abs(conv(x1 + x2, w1) - conv(x1, w1) - conv(x2, w1)).max() < 1e-12 * max(1, np.abs(conv(x1, w1)).max())
    assert np.abs(conv(x1, w1 + w2) - conv(x1, w1) - conv(x1, w2)).max() < 1e-12 * max(1, np.abs(conv(x1, w1)).max())
    assert np.abs(conv(np.conj(x1), np.conj(w1)) - np.conj(conv(x1, w1))).max() < 1e-12
