"""Synthetic multi-coil data: phantoms, coil maps, retrospective undersampling.

Also reads and writes the CKS1 dataset format, which doubles as the
ingestion path for externally converted acquisitions.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .complex_core import fft2c, ifft2c
from .errors import FileFormatError, ShapeError
from .sampling import MaskKind, SamplingMask, apply_mask

# modified Shepp-Logan: intensity, semi-axes (a, b), centre (x0, y0), angle in degrees
SHEPP_LOGAN = np.array([
    [1.0, 0.6900, 0.920, 0.00, 0.0000, 0.0],
    [-0.8, 0.6624, 0.874, 0.00, -0.0184, 0.0],
    [-0.2, 0.1100, 0.310, 0.22, 0.0000, -18.0],
    [-0.2, 0.1600, 0.410, -0.22, 0.0000, 18.0],
    [0.1, 0.2100, 0.250, 0.00, 0.3500, 0.0],
    [0.1, 0.0460, 0.046, 0.00, 0.1000, 0.0],
    [0.1, 0.0460, 0.046, 0.00, -0.1000, 0.0],
    [0.1, 0.0460, 0.023, -0.08, -0.6050, 0.0],
    [0.1, 0.0230, 0.023, 0.00, -0.6060, 0.0],
    [0.1, 0.0230, 0.046, 0.06, -0.6050, 0.0],
])


def _unit_modulus(z: complex) -> complex:
    # step the larger component by ulps until np.abs rounds to exactly 1
    re, im = z.real, z.imag
    for _ in range(64):
        m = np.abs(np.complex128(complex(re, im)))
        if m == 1.0:
            break
        toward = 0.0 if m > 1.0 else np.inf
        if abs(re) >= abs(im):
            re = np.nextafter(re, np.copysign(toward, re))
        else:
            im = np.nextafter(im, np.copysign(toward, im))
    return complex(re, im)


def _normalize_peak(x: np.ndarray) -> np.ndarray:
    """Scale so that max |x| is 1.0 exactly."""
    peak = np.abs(x).max()
    if peak == 0:
        return x
    x = x / peak
    mag = np.abs(x)
    fix = np.flatnonzero((mag > 1.0) | (mag == mag.max()))
    flat = x.reshape(-1)
    for i in fix:
        flat[i] = _unit_modulus(complex(flat[i])) if np.iscomplexobj(x) else 1.0
    return x


def gen_phantom(h: int, w: int, seed: int = 0) -> np.ndarray:
    """Randomly perturbed Shepp-Logan magnitude times a smooth polynomial phase.

    Returns a complex [H, W] image whose magnitude lies in [0, 1] with peak 1.
    """
    if h % 2 or w % 2 or h < 2 or w < 2:
        raise ShapeError(f"phantom extents must be even and positive, got {h}x{w}")
    rng = np.random.default_rng(seed)
    ell = SHEPP_LOGAN.copy()
    n = len(ell)
    ell[1:, 0] *= rng.uniform(0.7, 1.3, n - 1)  # intensities (outer skull kept)
    ell[:, 1:3] *= rng.uniform(0.9, 1.1, (n, 2))
    ell[2:, 3:5] += rng.uniform(-0.04, 0.04, (n - 2, 2))
    ell[:, 5] += rng.uniform(-10, 10, n)

    y, x = np.mgrid[:h, :w]
    yy = (y - h / 2) / (h / 2)
    xx = (x - w / 2) / (w / 2)
    mag = np.zeros((h, w))
    for amp, a, b, x0, y0, deg in ell:
        t = np.deg2rad(deg)
        xr = (xx - x0) * np.cos(t) + (-yy - y0) * np.sin(t)
        yr = -(xx - x0) * np.sin(t) + (-yy - y0) * np.cos(t)
        mag[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    mag = np.clip(mag, 0.0, None)
    mag /= mag.max()

    c = rng.uniform(-1.0, 1.0, 6)
    phase = np.pi * c[0] + 0.8 * (c[1] * xx + c[2] * yy) + 0.4 * (c[3] * xx * yy + c[4] * xx ** 2 + c[5] * yy ** 2)
    return _normalize_peak(mag * np.exp(1j * phase))


@dataclass
class CoilProfile:
    sensitivity: np.ndarray  # complex [C, H, W], root-sum-of-squares 1 everywhere
    raw: np.ndarray | None = field(default=None, repr=False)  # band-limited maps before normalization

    @property
    def ncoil(self) -> int:
        return self.sensitivity.shape[0]

    def max_gradient(self) -> float:
        s = self.sensitivity
        return float(max(np.abs(np.diff(s, axis=1)).max(initial=0.0), np.abs(np.diff(s, axis=2)).max(initial=0.0)))


def gen_coils(h: int, w: int, ncoil: int, seed: int = 0, band: int = 5, variation: float = 0.6) -> CoilProfile:
    """Smooth complex coil maps built from a few low-frequency Fourier terms.

    Each raw map is a unit-modulus constant plus a random band-limited term
    (``band x band`` central coefficients) of peak magnitude ``variation``;
    maps are then divided by their joint root-sum-of-squares.
    """
    if ncoil < 1:
        raise ValueError("ncoil must be >= 1")
    if band > 8:
        raise ValueError("band must stay within the lowest 8x8 coefficients")
    rng = np.random.default_rng(seed)
    raw = np.empty((ncoil, h, w), dtype=np.complex128)
    r0, c0 = h // 2 - band // 2, w // 2 - band // 2
    for j in range(ncoil):
        coeffs = np.zeros((h, w), dtype=np.complex128)
        coeffs[r0:r0 + band, c0:c0 + band] = rng.normal(size=(band, band)) + 1j * rng.normal(size=(band, band))
        coeffs[h // 2, w // 2] = 0.0
        term = ifft2c(coeffs)
        peak = np.abs(term).max()
        if peak > 0:
            term *= variation / peak
        raw[j] = np.exp(1j * rng.uniform(-np.pi, np.pi)) + term
    sens = raw / np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))
    return CoilProfile(sens, raw)


@dataclass
class MultiCoilSample:
    truth: np.ndarray  # complex [C, H, W], peak magnitude 1
    ksp_under: np.ndarray  # complex [C, H, W], zero off the mask
    mask: SamplingMask

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.truth.shape

    def zero_filled(self) -> np.ndarray:
        return ifft2c(self.ksp_under)


def simulate_sample(phantom: np.ndarray, coils: CoilProfile, mask: SamplingMask,
                    noise_std: float = 0.0, rng: np.random.Generator | None = None) -> MultiCoilSample:
    phantom = np.asarray(phantom)
    sens = coils.sensitivity
    if phantom.shape != sens.shape[1:] or mask.shape != phantom.shape:
        raise ShapeError(f"phantom {phantom.shape}, coils {sens.shape[1:]} and mask {mask.shape} disagree")
    truth = _normalize_peak(phantom[None] * sens)
    ksp = fft2c(truth)
    if noise_std > 0:
        rng = rng or np.random.default_rng()
        ksp = ksp + noise_std * (rng.normal(size=ksp.shape) + 1j * rng.normal(size=ksp.shape))
    return MultiCoilSample(truth, apply_mask(ksp, mask), mask)


def make_dataset(nsamples: int, ncoil: int, mask: SamplingMask, seed: int = 0,
                 noise_std: float = 0.0) -> list[MultiCoilSample]:
    """Independent phantom and coil draws per sample, all under one mask."""
    h, w = mask.shape
    out = []
    for child in np.random.SeedSequence(seed).spawn(nsamples):
        s_ph, s_coil, s_noise = (int(x) for x in child.generate_state(3))
        out.append(simulate_sample(gen_phantom(h, w, s_ph), gen_coils(h, w, ncoil, s_coil), mask,
                                   noise_std, np.random.default_rng(s_noise)))
    return out


# ---------------------------------------------------------------------------
# CKS1 files

DATASET_MAGIC = b"CKS1"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def _planes(x: np.ndarray) -> bytes:
    return np.ascontiguousarray(x.real, dtype="<f8").tobytes() + np.ascontiguousarray(x.imag, dtype="<f8").tobytes()


def write_dataset(samples: list[MultiCoilSample], path) -> None:
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    ncoil, h, w = samples[0].shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, len(samples), ncoil, h, w))
        for i, s in enumerate(samples):
            if s.truth.shape != (ncoil, h, w) or s.ksp_under.shape != (ncoil, h, w) or s.mask.shape != (h, w):
                raise ShapeError(f"sample {i} does not match dataset shape {(ncoil, h, w)}")
            fh.write(_planes(s.truth))
            fh.write(_planes(s.ksp_under))
            fh.write(s.mask.grid.astype(np.uint8).tobytes())


def read_dataset(path) -> list[MultiCoilSample]:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FileFormatError("dataset truncated: header incomplete")
    magic, version, n, ncoil, h, w = _HEADER.unpack_from(buf, 0)
    if magic != DATASET_MAGIC:
        raise FileFormatError(f"bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise FileFormatError(f"unsupported dataset version {version}")
    if min(n, ncoil, h, w) == 0:
        raise FileFormatError(f"dataset declares an empty shape: n={n}, ncoil={ncoil}, {h}x{w}")
    plane = ncoil * h * w
    per_sample = 4 * plane * 8 + h * w
    expected = _HEADER.size + n * per_sample
    if len(buf) != expected:
        raise FileFormatError(f"dataset holds {len(buf)} bytes, header declares {expected}")

    def complex_at(off):
        out = np.empty((ncoil, h, w), dtype=np.complex128)
        out.real = np.frombuffer(buf, "<f8", plane, off).reshape(ncoil, h, w)
        out.imag = np.frombuffer(buf, "<f8", plane, off + plane * 8).reshape(ncoil, h, w)
        return out

    samples = []
    off = _HEADER.size
    for i in range(n):
        truth = complex_at(off)
        ksp = complex_at(off + 2 * plane * 8)
        mbytes = np.frombuffer(buf, np.uint8, h * w, off + 4 * plane * 8).reshape(h, w)
        if np.any(mbytes > 1):
            raise FileFormatError(f"sample {i}: mask bytes must be 0 or 1")
        grid = mbytes.astype(bool)
        if np.any(ksp[:, ~grid] != 0):
            raise FileFormatError(f"sample {i}: k-space is nonzero outside its mask")
        samples.append(MultiCoilSample(truth, ksp, SamplingMask(grid, MaskKind.CUSTOM, 0, float(grid.mean()))))
        off += per_sample
    return samples
