"""Coil combination and image-quality metrics."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ShapeError

#: PSNR reported when the images are identical
PSNR_IDENTICAL = float("inf")


def sos_combine(img) -> np.ndarray:
    """Root sum-of-squares over the coil axis: [C, H, W] -> [H, W]."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"expected [C, H, W], got {img.shape}")
    return np.sqrt(np.sum(np.abs(img) ** 2, axis=0))


def _box_sum(a: np.ndarray, block: int) -> np.ndarray:
    # zero padding: neighbourhoods at the border are truncated
    return ndimage.uniform_filter(a, size=(block, block), mode="constant", cval=0.0) * block * block


def walsh_weights(img, block: int = 5, iterations: int = 30, tol: float = 1e-10):
    """Per-pixel principal eigenvectors of the local coil covariance.

    Returns ``(u, singular)`` where ``u`` is [C, H, W] with unit norm along
    the coil axis and phase referenced to coil 0, and ``singular`` flags
    pixels whose neighbourhood carries no signal (``u`` is then ``e_0``).
    """
    img = np.asarray(img, dtype=np.complex128)
    if img.ndim != 3:
        raise ShapeError(f"expected [C, H, W], got {img.shape}")
    if block < 1 or block % 2 == 0:
        raise ValueError(f"block must be odd and >= 1, got {block}")
    ncoil, h, w = img.shape
    v = np.moveaxis(img, 0, -1)  # [H, W, C]

    outer = v[..., :, None] * np.conj(v[..., None, :])  # [H, W, C, C]
    cov = np.empty_like(outer)
    for i in range(ncoil):
        for j in range(ncoil):
            cov[..., i, j] = _box_sum(outer[..., i, j].real, block) + 1j * _box_sum(outer[..., i, j].imag, block)

    trace = np.real(np.einsum("hwii->hw", cov))
    scale = trace.max() if trace.size else 0.0
    singular = trace <= 1e-300 + 1e-14 * scale

    u = v.copy()
    norm = np.linalg.norm(u, axis=-1)
    weak = norm == 0
    u[weak] = 1.0
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    for _ in range(iterations):
        nxt = np.einsum("hwij,hwj->hwi", cov, u)
        nrm = np.linalg.norm(nxt, axis=-1, keepdims=True)
        nxt = np.where(nrm > 0, nxt / np.where(nrm > 0, nrm, 1.0), u)
        # compare up to phase so convergence is judged on the eigen-direction
        ph = np.sum(np.conj(u) * nxt, axis=-1, keepdims=True)
        ph = np.where(np.abs(ph) > 0, ph / np.where(np.abs(ph) > 0, np.abs(ph), 1.0), 1.0)
        delta = np.max(np.abs(nxt - u * ph)) if nxt.size else 0.0
        u = nxt
        if delta < tol:
            break

    ref = u[..., 0]
    phase = np.where(np.abs(ref) > 0, np.conj(ref) / np.where(np.abs(ref) > 0, np.abs(ref), 1.0), 1.0)
    u = u * phase[..., None]
    e0 = np.zeros(ncoil, dtype=np.complex128)
    e0[0] = 1.0
    u[singular] = e0
    return np.moveaxis(u, -1, 0), singular


def walsh_combine(img, block: int = 5) -> np.ndarray:
    """Adaptive (Walsh) coil combination: [C, H, W] -> complex [H, W].

    Pixels with a vanishing covariance fall back to the SoS magnitude with
    zero phase.
    """
    img = np.asarray(img, dtype=np.complex128)
    u, singular = walsh_weights(img, block)
    out = np.sum(np.conj(u) * img, axis=0)
    if singular.any():
        out[singular] = sos_combine(img)[singular]
    return out


def psnr(test, ref, peak: float = 1.0) -> float:
    test = np.asarray(test, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if test.shape != ref.shape:
        raise ShapeError(f"psnr shape mismatch {test.shape} vs {ref.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((test - ref) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim(test, ref, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         sigma: float = 1.5, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained Gaussian windows."""
    x = np.asarray(test, dtype=np.float64)
    y = np.asarray(ref, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"ssim shape mismatch {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < window:
        raise ShapeError(f"ssim needs a 2D image of at least {window}x{window}, got {x.shape}")
    g = gaussian_window(window, sigma)

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="reflect")
        return ndimage.correlate1d(a, g, axis=1, mode="reflect")

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    r = (window - 1) // 2
    return float(smap[r:-r or None, r:-r or None].mean())


def combine_magnitude(img, method: str = "walsh", block: int = 5) -> np.ndarray:
    """Coil-combined magnitude image; single-channel input is just ``|img|``."""
    img = np.asarray(img)
    if img.ndim == 2:
        return np.abs(img)
    if img.shape[0] == 1:
        return np.abs(img[0])
    if method == "sos":
        return sos_combine(img)
    if method == "walsh":
        return np.abs(walsh_combine(img, block))
    raise ValueError(f"unknown combination {method!r}")
