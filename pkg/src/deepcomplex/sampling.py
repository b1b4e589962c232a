"""Cartesian undersampling masks with autocalibration (ACS) regions."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numba
import numpy as np

from .errors import FileFormatError, MaskError, ShapeError


class MaskKind(str, Enum):
    UNIFORM_1D = "uniform1d"
    VARDENS_1D = "vardens1d"
    RANDOM_2D = "random2d"
    POISSON_2D = "poisson2d"
    FULL = "full"
    CUSTOM = "custom"


@dataclass
class SamplingMask:
    grid: np.ndarray  # bool [H, W]
    kind: MaskKind = MaskKind.CUSTOM
    acs: int = 0
    target_rate: float = 1.0
    radius0: float | None = None  # Poisson-disc base radius, if any

    def __post_init__(self):
        self.grid = np.asarray(self.grid).astype(bool)
        if self.grid.ndim != 2:
            raise ShapeError(f"mask grid must be 2D, got {self.grid.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def rate(self) -> float:
        return float(self.grid.mean())

    def __eq__(self, other):
        return isinstance(other, SamplingMask) and np.array_equal(self.grid, other.grid)


def acs_columns(w: int, acs: int) -> slice:
    start = w // 2 - acs // 2
    return slice(start, start + acs)


def acs_square(h: int, w: int, acs: int) -> tuple[slice, slice]:
    return acs_columns(h, acs), acs_columns(w, acs)


def _columns_mask(h: int, w: int, cols) -> np.ndarray:
    grid = np.zeros((h, w), dtype=bool)
    grid[:, cols] = True
    return grid


def full_mask(h: int, w: int) -> SamplingMask:
    return SamplingMask(np.ones((h, w), dtype=bool), MaskKind.FULL, 0, 1.0)


def gen_uniform_1d(h: int, w: int, accel: int, acs: int, seed: int = 0) -> SamplingMask:
    """Regularly spaced phase-encode columns plus a dense central ACS block.

    ``accel`` is the net acceleration: ACS columns count toward the
    ``round(W / accel)`` sampled columns. The seed only shifts the lattice.
    """
    if accel < 1:
        raise MaskError(f"accel must be >= 1, got {accel}")
    if acs < 0 or acs >= w:
        raise MaskError(f"acs must be in [0, W), got acs={acs}, W={w}")
    if accel == 1:
        return SamplingMask(np.ones((h, w), dtype=bool), MaskKind.UNIFORM_1D, acs, 1.0)
    n_target = round(w / accel)
    if acs > n_target:
        raise MaskError(f"{acs} ACS lines exceed the {n_target} columns allowed at accel={accel}")
    cols = np.zeros(w, dtype=bool)
    cols[acs_columns(w, acs)] = True
    outer = np.flatnonzero(~cols)
    m = n_target - acs
    if m > 0:
        step = len(outer) / m
        offset = np.random.default_rng(seed).uniform(0, step)
        pos = np.floor(offset + step * np.arange(m)).astype(int)
        cols[outer[np.minimum(pos, len(outer) - 1)]] = True
    return SamplingMask(_columns_mask(h, w, cols), MaskKind.UNIFORM_1D, acs, 1.0 / accel)


def gen_vardens_1d(h: int, w: int, target_rate: float, acs: int, seed: int = 0,
                   sigma: float | None = None) -> SamplingMask:
    """Random columns drawn without replacement from a centred Gaussian density."""
    if acs < 0 or acs >= w:
        raise MaskError(f"acs must be in [0, W), got acs={acs}, W={w}")
    if not acs / w < target_rate <= 1.0:
        raise MaskError(f"target rate {target_rate} infeasible with {acs} ACS lines of {w}")
    n_target = round(target_rate * w)
    cols = np.zeros(w, dtype=bool)
    cols[acs_columns(w, acs)] = True
    outer = np.flatnonzero(~cols)
    m = min(n_target - acs, len(outer))
    if m > 0:
        sigma = w / 4 if sigma is None else sigma
        pdf = np.exp(-0.5 * ((outer - w // 2) / sigma) ** 2)
        pdf /= pdf.sum()
        pick = np.random.default_rng(seed).choice(outer, size=m, replace=False, p=pdf)
        cols[pick] = True
    return SamplingMask(_columns_mask(h, w, cols), MaskKind.VARDENS_1D, acs, target_rate)


def gen_random_2d(h: int, w: int, target_rate: float, seed: int = 0, acs: int = 0) -> SamplingMask:
    """Exactly ``floor(rate * H * W)`` points drawn uniformly without replacement."""
    if not 0.0 < target_rate <= 1.0:
        raise MaskError(f"target rate must be in (0, 1], got {target_rate}")
    count = math.floor(target_rate * h * w)
    grid = np.zeros((h, w), dtype=bool)
    if acs:
        if acs > min(h, w) or acs * acs > count:
            raise MaskError(f"ACS square {acs}x{acs} does not fit {count} samples")
        grid[acs_square(h, w, acs)] = True
    free = np.flatnonzero(~grid.ravel())
    pick = np.random.default_rng(seed).choice(free, size=count - int(grid.sum()), replace=False)
    grid.ravel()[pick] = True
    return SamplingMask(grid, MaskKind.RANDOM_2D, acs, target_rate)


def poisson_radius(h: int, w: int, r0: float) -> np.ndarray:
    """Local exclusion radius ``r0 * (1 + 2 d / d_max)`` in pixels."""
    yy, xx = np.mgrid[:h, :w]
    d = np.hypot(yy - h // 2, xx - w // 2)
    return r0 * (1.0 + 2.0 * d / np.hypot(h / 2, w / 2))


@numba.njit(cache=True)
def _dart_throw(order, radius, blocked, reach):
    h, w = radius.shape
    accepted = np.zeros((h, w), dtype=np.bool_)
    for n in range(order.shape[0]):
        r = order[n] // w
        c = order[n] % w
        if blocked[r, c]:
            continue
        rq = radius[r, c]
        ok = True
        for dr in range(-reach, reach + 1):
            rr = r + dr
            if rr < 0 or rr >= h:
                continue
            for dc in range(-reach, reach + 1):
                cc = c + dc
                if cc < 0 or cc >= w or not accepted[rr, cc]:
                    continue
                rad = max(rq, radius[rr, cc])
                if dr * dr + dc * dc < rad * rad:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            accepted[r, c] = True
    return accepted


def _poisson_once(h, w, r0, order, acs_grid):
    radius = poisson_radius(h, w, r0)
    reach = int(math.ceil(radius.max()))
    pts = _dart_throw(order, radius, acs_grid, reach)
    return pts | acs_grid


def gen_poisson_2d(h: int, w: int, target_rate: float, acs: int = 30, seed: int = 0,
                   tol: float = 0.02, retries: int = 5) -> SamplingMask:
    """Variable-density Poisson-disc mask with a forced ACS square.

    Points outside the ACS square are thrown in a seeded random order and
    kept only if every kept point lies at least ``max(r(p), r(q))`` away.
    The base radius is bisected until the overall rate is within ``tol``.
    """
    if not 0.0 < target_rate < 1.0:
        raise MaskError(f"target rate must be in (0, 1), got {target_rate}")
    if acs < 0 or acs > min(h, w):
        raise MaskError(f"ACS square {acs} does not fit a {h}x{w} grid")
    acs_grid = np.zeros((h, w), dtype=bool)
    if acs:
        acs_grid[acs_square(h, w, acs)] = True
    if acs_grid.mean() > target_rate + tol:
        raise MaskError(f"ACS square alone exceeds the target rate {target_rate}")

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(retries):
        order = rng.permutation(h * w).astype(np.int64)
        lo, hi = 0.5, 1.0
        while _poisson_once(h, w, hi, order, acs_grid).mean() > target_rate:
            lo, hi = hi, hi * 2.0
            if hi > max(h, w):
                break
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            grid = _poisson_once(h, w, mid, order, acs_grid)
            err = grid.mean() - target_rate
            if best is None or abs(err) < abs(best[1]):
                best = (grid, err, mid)
            if abs(err) < 0.25 * tol:
                break
            if err > 0:
                lo = mid
            else:
                hi = mid
        if abs(best[1]) <= tol:
            return SamplingMask(best[0], MaskKind.POISSON_2D, acs, target_rate, radius0=best[2])
    raise MaskError(f"could not reach rate {target_rate} +/- {tol}; closest was {best[1] + target_rate:.4f}")


def make_mask(kind: str | MaskKind, h: int, w: int, *, rate: float | None = None,
              accel: int | None = None, acs: int = 0, seed: int = 0) -> SamplingMask:
    """Dispatch on mask kind with the parameters that kind uses."""
    kind = MaskKind(kind)
    if kind is MaskKind.FULL:
        return full_mask(h, w)
    if kind is MaskKind.UNIFORM_1D:
        if accel is None:
            if rate is None:
                raise MaskError("uniform1d needs accel (or rate)")
            accel = round(1.0 / rate)
        return gen_uniform_1d(h, w, accel, acs, seed)
    if rate is None:
        if accel is None:
            raise MaskError(f"{kind.value} needs rate (or accel)")
        rate = 1.0 / accel
    if kind is MaskKind.VARDENS_1D:
        return gen_vardens_1d(h, w, rate, acs, seed)
    if kind is MaskKind.RANDOM_2D:
        return gen_random_2d(h, w, rate, seed, acs)
    if kind is MaskKind.POISSON_2D:
        return gen_poisson_2d(h, w, rate, acs, seed)
    raise MaskError(f"cannot generate masks of kind {kind.value}")


def apply_mask(ksp, mask: SamplingMask | np.ndarray) -> np.ndarray:
    """Zero every k-space location outside the mask, for each coil."""
    grid = mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask, dtype=bool)
    ksp = np.asarray(ksp)
    if ksp.shape[-2:] != grid.shape:
        raise ShapeError(f"mask {grid.shape} does not match k-space {ksp.shape}")
    return np.where(grid, ksp, 0).astype(ksp.dtype, copy=False)


# ---------------------------------------------------------------------------
# MSK1 files

MASK_MAGIC = b"MSK1"


def mask_to_bytes(mask: SamplingMask) -> bytes:
    h, w = mask.shape
    return MASK_MAGIC + struct.pack("<II", h, w) + mask.grid.astype(np.uint8).tobytes(order="C")


def mask_from_bytes(buf: bytes) -> SamplingMask:
    if len(buf) < 12:
        raise FileFormatError("mask file truncated: header incomplete")
    if buf[:4] != MASK_MAGIC:
        raise FileFormatError(f"bad mask magic {buf[:4]!r}")
    h, w = struct.unpack_from("<II", buf, 4)
    if h == 0 or w == 0:
        raise FileFormatError(f"mask declares empty shape {h}x{w}")
    if len(buf) != 12 + h * w:
        raise FileFormatError(f"mask file holds {len(buf) - 12} bytes, header declares {h * w}")
    data = np.frombuffer(buf, dtype=np.uint8, offset=12).reshape(h, w)
    if np.any(data > 1):
        raise FileFormatError("mask bytes must be 0 or 1")
    grid = data.astype(bool)
    return SamplingMask(grid, MaskKind.CUSTOM, 0, float(grid.mean()))


def write_mask(mask: SamplingMask, path) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


def read_mask(path) -> SamplingMask:
    return mask_from_bytes(Path(path).read_bytes())
