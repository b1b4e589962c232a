"""Cascade of complex CNN units with k-space data consistency.

Each block computes ``dc(x + cnn(x))``: an identity skip around an
``n_layers``-deep convolution unit, followed by a data-consistency step that
re-imposes the acquired k-space samples.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Var
from .complex_core import ifft2c
from .errors import FileFormatError, ShapeError
from .metrics import walsh_weights

CONV_MODES = ("complex", "real")
CHANNEL_MODES = ("mimo", "siso")


@dataclass
class ModelConfig:
    n_blocks: int = 10
    n_layers: int = 5
    width: int = 64
    ncoil: int = 4
    conv_mode: str = "complex"
    channel_mode: str = "mimo"
    kernel_size: int = 3

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.n_layers < 2:
            raise ValueError("n_layers must be >= 2")
        if self.width < 1 or self.ncoil < 1:
            raise ValueError("width and ncoil must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.conv_mode not in CONV_MODES:
            raise ValueError(f"conv_mode must be one of {CONV_MODES}, got {self.conv_mode!r}")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(f"channel_mode must be one of {CHANNEL_MODES}, got {self.channel_mode!r}")

    @property
    def net_channels(self) -> int:
        """Complex image channels seen by the CNN units."""
        return self.ncoil if self.channel_mode == "mimo" else 1

    def layer_shapes(self) -> list[tuple[int, int, int, int]]:
        """Weight shapes of one CNN unit."""
        c = self.net_channels if self.conv_mode == "complex" else 2 * self.net_channels
        chans = [c] + [self.width] * (self.n_layers - 1) + [c]
        k = self.kernel_size
        return [(chans[i + 1], chans[i], k, k) for i in range(self.n_layers)]


def count_parameters(config: ModelConfig) -> int:
    """Real scalars in a model (a complex weight counts twice)."""
    per = 2 if config.conv_mode == "complex" else 1
    unit = sum(per * (co * ci * fh * fw + co) for co, ci, fh, fw in config.layer_shapes())
    return config.n_blocks * unit


def _with(config: ModelConfig, **kw) -> ModelConfig:
    d = dict(config.__dict__)
    d.update(kw)
    return ModelConfig(**d)


def matched_width(config: ModelConfig, target: float, conv_mode: str) -> int:
    """Width in ``conv_mode`` whose parameter count is closest to ``target``."""
    best, best_err = 1, math.inf
    for w in range(1, 8 * config.width + 8):
        err = abs(count_parameters(_with(config, width=w, conv_mode=conv_mode)) - target)
        if err < best_err:
            best, best_err = w, err
    return best


def parameter_budget(config: ModelConfig) -> dict[str, tuple[int, int]]:
    """Widths and counts of the real baseline and the cc/0.5, cc/1 complex models.

    ``config`` may be either mode; the real baseline is the real model whose
    count matches ``config`` when it is complex, or ``config`` itself.
    """
    if config.conv_mode == "real":
        real = config
    else:
        real = _with(config, conv_mode="real",
                     width=matched_width(config, count_parameters(config), "real"))
    n_real = count_parameters(real)
    out = {"rc": (real.width, n_real)}
    for tag, frac in (("cc/0.5", 0.5), ("cc/1", 1.0)):
        w = matched_width(real, frac * n_real, "complex")
        out[tag] = (w, count_parameters(_with(real, width=w, conv_mode="complex")))
    return out


class ComplexConvLayer:
    def __init__(self, shape: tuple[int, int, int, int], activation: bool, real: bool = False, name: str = ""):
        dtype = np.float64 if real else np.complex128
        self.weight = Parameter(np.zeros(shape, dtype=dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(shape[0], dtype=dtype), f"{name}.bias")
        self.activation = activation

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.weight.value)


def init_complex_weights(layer: ComplexConvLayer, rng: np.random.Generator) -> None:
    """Rayleigh magnitude, uniform phase; zero bias.

    ``sigma = 1 / sqrt(fan_in)``. Real layers draw N(0, sigma^2), the
    per-component law of the complex draw.
    """
    shape = layer.weight.shape
    sigma = 1.0 / math.sqrt(shape[1] * shape[2] * shape[3])
    if layer.is_real:
        layer.weight.value[...] = rng.normal(0.0, sigma, shape)
    else:
        mag = rng.rayleigh(sigma, shape)
        theta = rng.uniform(-np.pi, np.pi, shape)
        layer.weight.value.real = mag * np.cos(theta)
        layer.weight.value.imag = mag * np.sin(theta)
    layer.bias.value[...] = 0


class CnnUnit:
    def __init__(self, config: ModelConfig, name: str = ""):
        real = config.conv_mode == "real"
        shapes = config.layer_shapes()
        self.real = real
        self.layers = [
            ComplexConvLayer(s, activation=i < len(shapes) - 1, real=real, name=f"{name}.conv{i}")
            for i, s in enumerate(shapes)
        ]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]


@dataclass
class DcUnit:
    mask: np.ndarray  # bool [H, W]
    acquired: np.ndarray  # complex [C, H, W]
    lam: float = math.inf

    def __post_init__(self):
        self.mask = np.asarray(getattr(self.mask, "grid", self.mask)).astype(bool)
        if self.mask.shape != self.acquired.shape[-2:]:
            raise ShapeError(f"mask {self.mask.shape} does not match acquired data {self.acquired.shape}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")


def crelu(x) -> np.ndarray:
    return ad.crelu(x).value


def dc_update(img, dc: DcUnit) -> np.ndarray:
    img = np.asarray(img)
    if img.shape != dc.acquired.shape:
        raise ShapeError(f"image {img.shape} does not match acquired data {dc.acquired.shape}")
    return ad.data_consistency(img, dc.mask, dc.acquired, dc.lam).value


def _unit(unit: CnnUnit, x: Var, params: dict[int, Var] | None) -> Var:
    def p(par):
        return params[id(par)] if params is not None else par.value

    if x.shape[0] != (unit.layers[0].weight.shape[1] // (2 if unit.real else 1)):
        raise ShapeError(f"unit expects {unit.layers[0].weight.shape[1]} input channels, got {x.shape}")
    h = ad.split_real(x) if unit.real else x
    for layer in unit.layers:
        h = ad.conv2d(h, p(layer.weight), p(layer.bias))
        if layer.activation:
            h = ad.crelu(h)
    return ad.merge_real(h) if unit.real else h


def cnn_unit_forward(unit: CnnUnit, x) -> np.ndarray:
    return _unit(unit, ad.constant(x), None).value


def _dc(x: Var, dc: DcUnit, coil_weights: np.ndarray | None) -> Var:
    if coil_weights is None:
        return ad.data_consistency(x, dc.mask, dc.acquired, dc.lam)
    multi = ad.coil_expand(x, coil_weights)
    return ad.coil_combine(ad.data_consistency(multi, dc.mask, dc.acquired, dc.lam), coil_weights)


def _block(unit: CnnUnit, x: Var, dc: DcUnit, coil_weights, params) -> Var:
    return _dc(ad.add(x, _unit(unit, x, params)), dc, coil_weights)


def block_forward(unit: CnnUnit, x, dc: DcUnit, coil_weights: np.ndarray | None = None) -> np.ndarray:
    return _block(unit, ad.constant(x), dc, coil_weights, None).value


@dataclass
class Prepared:
    """Per-sample network input: zero-filled image plus its DC unit."""

    x0: np.ndarray
    dc: DcUnit
    coil_weights: np.ndarray | None = field(default=None, repr=False)

    def target(self, truth: np.ndarray) -> np.ndarray:
        """Ground truth in the channel layout the model emits."""
        if self.coil_weights is None:
            return truth
        return ad.coil_combine(truth, self.coil_weights).value


class CascadeModel:
    def __init__(self, config: ModelConfig, lam: float = math.inf, seed: int | None = 0):
        self.config = config
        self.lam = lam
        self.blocks = [CnnUnit(config, name=f"block{b}") for b in range(config.n_blocks)]
        if seed is not None:
            rng = np.random.default_rng(seed)
            for unit in self.blocks:
                for layer in unit.layers:
                    init_complex_weights(layer, rng)

    def parameters(self) -> list[Parameter]:
        return [p for unit in self.blocks for p in unit.parameters()]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def prepare(self, ksp_under, mask, walsh_block: int = 5) -> Prepared:
        ksp_under = np.asarray(ksp_under, dtype=np.complex128)
        if ksp_under.ndim != 3 or ksp_under.shape[0] != self.config.ncoil:
            raise ShapeError(f"model expects {self.config.ncoil} coils, got k-space {ksp_under.shape}")
        dc = DcUnit(mask, ksp_under, self.lam)
        x0 = ifft2c(ksp_under)
        if self.config.channel_mode == "mimo":
            return Prepared(x0, dc)
        u, _ = walsh_weights(x0, walsh_block)
        return Prepared(ad.coil_combine(x0, u).value, dc, u)

    def forward(self, prep: Prepared, tape: Tape | None = None) -> Var:
        params = None
        if tape is not None:
            params = {id(p): tape.watch(p) for p in self.parameters()}
        x = ad.constant(prep.x0)
        for unit in self.blocks:
            x = _block(unit, x, prep.dc, prep.coil_weights, params)
        return x

    def __call__(self, ksp_under, mask) -> np.ndarray:
        return self.forward(self.prepare(ksp_under, mask)).value


def cascade_forward(model: CascadeModel, ksp_under, mask) -> np.ndarray:
    """Reconstruct from undersampled multi-coil k-space.

    Returns [ncoil, H, W] (MIMO) or the combined [1, H, W] image (SISO).
    """
    return model(ksp_under, mask)


def real_conv_variant(config: ModelConfig, lam: float = math.inf, seed: int | None = 0) -> CascadeModel:
    """Real-convolution model with the parameter budget of a complex ``config``."""
    if config.conv_mode == "real":
        return CascadeModel(config, lam, seed)
    width = matched_width(config, count_parameters(config), "real")
    return CascadeModel(_with(config, conv_mode="real", width=width), lam, seed)


# ---------------------------------------------------------------------------
# DCMR checkpoints

CKPT_MAGIC = b"DCMR"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIIBB")
_SHAPE = struct.Struct("<4I")


def _record(arr: np.ndarray, shape4: tuple[int, ...]) -> bytes:
    return (_SHAPE.pack(*shape4)
            + np.ascontiguousarray(np.real(arr), dtype="<f8").tobytes()
            + np.ascontiguousarray(np.imag(arr), dtype="<f8").tobytes())


def checkpoint_bytes(model: CascadeModel) -> bytes:
    c = model.config
    parts = [_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, c.n_blocks, c.n_layers, c.width, c.ncoil,
                               CONV_MODES.index(c.conv_mode), CHANNEL_MODES.index(c.channel_mode))]
    for unit in model.blocks:
        for layer in unit.layers:
            parts.append(_record(layer.weight.value, layer.weight.shape))
            parts.append(_record(layer.bias.value, (layer.bias.shape[0], 1, 1, 1)))
    return b"".join(parts)


def save_checkpoint(model: CascadeModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def model_from_bytes(buf: bytes, lam: float = math.inf) -> CascadeModel:
    if len(buf) < _CKPT_HEADER.size:
        raise FileFormatError("checkpoint truncated: header incomplete")
    magic, version, nb, nc, width, ncoil, conv, chan = _CKPT_HEADER.unpack_from(buf, 0)
    if magic != CKPT_MAGIC:
        raise FileFormatError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    if conv >= len(CONV_MODES) or chan >= len(CHANNEL_MODES):
        raise FileFormatError(f"bad mode bytes conv={conv} channel={chan}")
    off = _CKPT_HEADER.size
    if len(buf) < off + _SHAPE.size:
        raise FileFormatError("checkpoint truncated before first layer")
    kernel = _SHAPE.unpack_from(buf, off)[2]
    try:
        config = ModelConfig(nb, nc, width, ncoil, CONV_MODES[conv], CHANNEL_MODES[chan], kernel)
    except ValueError as e:
        raise FileFormatError(f"checkpoint header is inconsistent: {e}") from None

    model = CascadeModel(config, lam, seed=None)

    def read(param: Parameter, shape4):
        nonlocal off
        if len(buf) < off + _SHAPE.size:
            raise FileFormatError(f"checkpoint truncated at {param.name}")
        got = _SHAPE.unpack_from(buf, off)
        if got != tuple(shape4):
            raise FileFormatError(f"{param.name}: stored shape {got}, config implies {tuple(shape4)}")
        off += _SHAPE.size
        n = int(np.prod(shape4))
        if len(buf) < off + 16 * n:
            raise FileFormatError(f"checkpoint truncated inside {param.name}")
        re = np.frombuffer(buf, "<f8", n, off).reshape(param.shape)
        im = np.frombuffer(buf, "<f8", n, off + 8 * n).reshape(param.shape)
        off += 16 * n
        if np.iscomplexobj(param.value):
            param.value.real = re
            param.value.imag = im
        else:
            if np.any(im != 0):
                raise FileFormatError(f"{param.name}: real-mode weights carry imaginary parts")
            param.value[...] = re

    for unit in model.blocks:
        for layer in unit.layers:
            read(layer.weight, layer.weight.shape)
            read(layer.bias, (layer.bias.shape[0], 1, 1, 1))
    if off != len(buf):
        raise FileFormatError(f"{len(buf) - off} trailing bytes after the last layer")
    return model


def load_checkpoint(path, lam: float = math.inf) -> CascadeModel:
    return model_from_bytes(Path(path).read_bytes(), lam)
