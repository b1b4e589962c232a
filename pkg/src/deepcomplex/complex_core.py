"""Complex arrays, centered unitary 2D FFTs and complex 2D convolution.

Complex data is carried as ``numpy.complex128`` arrays. Real-valued arrays
(``float64``) are accepted everywhere a complex one is, which lets the
real-convolution ablation share the same kernels.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def as_complex(x, ndim: int | None = None, name: str = "tensor") -> np.ndarray:
    """Validate ``x`` and return it as a complex128 array (no copy if possible)."""
    arr = np.asarray(x, dtype=np.complex128)
    _check(arr, ndim, name)
    return arr


def _check(arr: np.ndarray, ndim: int | None, name: str) -> None:
    if arr.size == 0 or any(n < 1 for n in arr.shape):
        raise ShapeError(f"{name} is empty: shape {arr.shape}")
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dims, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def fft2c(img) -> np.ndarray:
    """Centered orthonormal 2D DFT over the last two axes.

    The DC coefficient lands at index ``(H // 2, W // 2)``.
    """
    x = np.asarray(img)
    if x.ndim < 2 or x.size == 0:
        raise ShapeError(f"fft2c needs a non-empty array with >= 2 dims, got {x.shape}")
    axes = (-2, -1)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho"), axes=axes
    )


def ifft2c(ksp) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    k = np.asarray(ksp)
    if k.ndim < 2 or k.size == 0:
        raise ShapeError(f"ifft2c needs a non-empty array with >= 2 dims, got {k.shape}")
    axes = (-2, -1)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=axes), axes=axes, norm="ortho"), axes=axes
    )


def _windows(x: np.ndarray, fh: int, fw: int) -> np.ndarray:
    """Zero-padded sliding windows, shape [C, H, W, fh, fw] (a view)."""
    ph, pw = (fh - 1) // 2, (fw - 1) // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (fh, fw), axis=(1, 2))


def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Real same-size multichannel cross-correlation.

    x: [Cin, H, W], w: [Cout, Cin, FH, FW] -> [Cout, H, W].
    """
    cout, cin, fh, fw = w.shape
    h, wd = x.shape[1:]
    cols = _windows(x, fh, fw).transpose(0, 3, 4, 1, 2).reshape(cin * fh * fw, h * wd)
    return (w.reshape(cout, -1) @ cols).reshape(cout, h, wd)


def check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> None:
    if x.ndim != 3:
        raise ShapeError(f"conv input must be [C, H, W], got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv weights must be [Cout, Cin, FH, FW], got {w.shape}")
    if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {w.shape[2:]}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"weights expect {w.shape[1]} input channels, input has {x.shape[0]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias must have shape ({w.shape[0]},), got {b.shape}")


def complex_conv2d(x, weights, bias=None) -> np.ndarray:
    """Same-size, stride-1, zero-padded complex cross-correlation.

    Evaluated as four real correlations,
    ``(Wr*ur - Wi*ui) + i(Wr*ui + Wi*ur)``. Purely real operands take a
    single real correlation and return a real array.
    """
    x = np.asarray(x)
    w = np.asarray(weights)
    b = None if bias is None else np.asarray(bias)
    check_conv_shapes(x, w, b)

    if np.iscomplexobj(x) or np.iscomplexobj(w):
        xr, xi = np.ascontiguousarray(x.real), np.ascontiguousarray(x.imag)
        wr, wi = np.ascontiguousarray(w.real), np.ascontiguousarray(w.imag)
        out = np.empty((w.shape[0],) + x.shape[1:], dtype=np.complex128)
        out.real = _correlate(xr, wr) - _correlate(xi, wi)
        out.imag = _correlate(xi, wr) + _correlate(xr, wi)
    else:
        out = _correlate(x.astype(np.float64, copy=False), w.astype(np.float64, copy=False))
    if b is not None:
        out = out + b[:, None, None]
    return out


def conv2d_weight_grad(x: np.ndarray, grad_out: np.ndarray, fh: int, fw: int) -> np.ndarray:
    """Gradient of a real loss w.r.t. correlation weights.

    Returns ``sum_p grad_out[co, p] * conj(x_pad[ci, p + k])`` with shape
    [Cout, Cin, fh, fw].
    """
    cin, h, wd = x.shape
    cout = grad_out.shape[0]
    cols = _windows(np.conj(x), fh, fw).transpose(0, 3, 4, 1, 2).reshape(cin * fh * fw, h * wd)
    return (grad_out.reshape(cout, h * wd) @ cols.T).reshape(cout, cin, fh, fw)


def adjoint_kernel(w: np.ndarray) -> np.ndarray:
    """Kernel whose same-size correlation is the adjoint of correlating with ``w``."""
    return np.conj(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
