"""Reverse-mode differentiation over a tape of array operations.

Gradients of the real loss ``J`` with respect to a complex array ``z`` are
stored in one complex array ``dJ/dRe(z) + i dJ/dIm(z)``, i.e. two independent
real partials packed together. With that convention the vector-Jacobian
product of any complex-linear map ``A`` is ``A^H``, and real arrays behave
exactly like ordinary real autodiff.

Ops take :class:`Var` (or plain arrays, treated as constants). When none of
the inputs is attached to a tape, an op simply computes its value, so the
same forward code runs for training and for inference.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import complex_core as cc
from .errors import GradientError, ShapeError


class Parameter:
    """A trainable array with its accumulated gradient and Adam moments."""

    def __init__(self, value, name: str = ""):
        value = np.array(value)
        if not np.iscomplexobj(value):
            value = value.astype(np.float64)
        else:
            value = value.astype(np.complex128)
        self.value = value
        self.name = name
        self.grad = np.zeros_like(value)
        # moments live on the real view, so real and imaginary parts are independent
        self.adam_m = np.zeros(self.real_view().shape)
        self.adam_v = np.zeros(self.real_view().shape)

    def real_view(self) -> np.ndarray:
        return self.value.view(np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def grad_real(self) -> np.ndarray:
        return self.grad.real

    @property
    def grad_imag(self) -> np.ndarray:
        return np.imag(self.grad) if np.iscomplexobj(self.grad) else np.zeros(self.shape)

    @property
    def size(self) -> int:
        """Number of real scalars."""
        return self.real_view().size

    def zero_grad(self) -> None:
        self.grad[...] = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.value.dtype})"


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Callable | None = None
    param: Parameter | None = None


class Var:
    """Handle to a value, optionally recorded on a tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape | None" = None, index: int = -1):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        where = f"node {self.index}" if self.tape is not None else "untaped"
        return f"Var({where}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, param: Parameter | None = None) -> Var:
        value = np.asarray(value)
        self.nodes.append(Node("leaf", (), value, None, param))
        return Var(value, self, len(self.nodes) - 1)

    def watch(self, param: Parameter) -> Var:
        """Put a parameter on the tape; its gradient is accumulated by backward."""
        return self.leaf(param.value, param)

    def record(self, kind: str, inputs: Sequence[int], output: np.ndarray,
               vjp: Callable | None = None) -> Var:
        n = len(self.nodes)
        for i in inputs:
            if not 0 <= i < n:
                raise GradientError(f"unknown input node id {i} for {kind!r}")
        self.nodes.append(Node(kind, tuple(inputs), output, vjp))
        return Var(output, self, n)

    def backward(self, loss: Var | int) -> list[np.ndarray | None]:
        """Propagate d(loss)/d(node) to every node; accumulate into parameters.

        Returns the per-node gradient list (``None`` where unreached).
        """
        if not self.nodes:
            raise GradientError("backward on an empty tape")
        idx = loss.index if isinstance(loss, Var) else int(loss)
        if isinstance(loss, Var) and loss.tape is not self:
            raise GradientError("loss was not recorded on this tape")
        if not 0 <= idx < len(self.nodes):
            raise GradientError(f"unknown loss node id {idx}")
        lval = np.asarray(self.nodes[idx].value)
        if lval.size != 1 or np.iscomplexobj(lval):
            raise GradientError(f"loss must be a real scalar, got shape {lval.shape}, dtype {lval.dtype}")
        if not np.isfinite(lval).all():
            raise GradientError("loss is not finite")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[idx] = np.ones_like(lval, dtype=np.float64)
        for i in range(idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient reaching node {i} ({node.kind})")
            if node.param is not None:
                node.param.grad += _match_dtype(g, node.param.grad)
            if node.vjp is None:
                continue
            for j, gj in zip(node.inputs, node.vjp(g)):
                if gj is None:
                    continue
                gj = _match_dtype(gj, self.nodes[j].value)
                grads[j] = gj if grads[j] is None else grads[j] + gj
        return grads


def _match_dtype(g: np.ndarray, like: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(g) and not np.iscomplexobj(like):
        return g.real
    return g


# ---------------------------------------------------------------------------
# op plumbing

def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _emit(kind: str, inputs: Sequence[Var], value: np.ndarray, vjp: Callable) -> Var:
    tapes = {id(v.tape): v.tape for v in inputs if v.tape is not None}
    if not tapes:
        return Var(value)
    if len(tapes) > 1:
        raise GradientError(f"{kind!r} mixes variables from different tapes")
    tape = next(iter(tapes.values()))
    # constants are recorded as gradient-less leaves
    ids = [v.index if v.tape is not None else tape.leaf(v.value).index for v in inputs]
    return tape.record(kind, ids, value, vjp)


def constant(x) -> Var:
    return Var(np.asarray(x))


# ---------------------------------------------------------------------------
# ops

def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _emit("add", [a, b], a.value + b.value, lambda g: (g, g))


def scale(a, c: float) -> Var:
    a = _lift(a)
    c = float(c)
    return _emit("scale", [a], a.value * c, lambda g: (g * c,))


def conv2d(x, w, b=None) -> Var:
    x, w = _lift(x), _lift(w)
    ins = [x, w] if b is None else [x, w, _lift(b)]
    out = cc.complex_conv2d(x.value, w.value, None if b is None else ins[2].value)
    fh, fw = w.shape[2:]

    def vjp(g):
        gx = cc.complex_conv2d(g, cc.adjoint_kernel(w.value))
        gw = cc.conv2d_weight_grad(x.value, g, fh, fw)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(1, 2))

    return _emit("conv2d", ins, out, vjp)


def crelu(x) -> Var:
    """ReLU applied separately to real and imaginary parts (plain ReLU for real input)."""
    x = _lift(x)
    v = x.value
    if np.iscomplexobj(v):
        pos_r, pos_i = v.real > 0, v.imag > 0
        out = np.where(pos_r, v.real, 0.0) + 1j * np.where(pos_i, v.imag, 0.0)

        def vjp(g):
            g = np.asarray(g, dtype=np.complex128)
            return (np.where(pos_r, g.real, 0.0) + 1j * np.where(pos_i, g.imag, 0.0),)
    else:
        pos = v > 0
        out = np.where(pos, v, 0.0)

        def vjp(g):
            return (np.where(pos, np.real(g), 0.0),)

    return _emit("crelu", [x], out, vjp)


def split_real(x) -> Var:
    """Complex [C, H, W] -> real [2C, H, W] with real parts first."""
    x = _lift(x)
    c = x.shape[0]
    out = np.concatenate([x.value.real, x.value.imag], axis=0)
    return _emit("split_real", [x], out, lambda g: (g[:c] + 1j * g[c:],))


def merge_real(x) -> Var:
    """Real [2C, H, W] -> complex [C, H, W]; inverse of :func:`split_real`."""
    x = _lift(x)
    if x.shape[0] % 2:
        raise ShapeError(f"merge_real needs an even channel count, got {x.shape[0]}")
    c = x.shape[0] // 2
    out = x.value[:c] + 1j * x.value[c:]

    def vjp(g):
        g = np.asarray(g, dtype=np.complex128)
        return (np.concatenate([g.real, g.imag], axis=0),)

    return _emit("merge_real", [x], out, vjp)


def fft2c(x) -> Var:
    x = _lift(x)
    return _emit("fft2c", [x], cc.fft2c(x.value), lambda g: (cc.ifft2c(g),))


def ifft2c(x) -> Var:
    x = _lift(x)
    return _emit("ifft2c", [x], cc.ifft2c(x.value), lambda g: (cc.fft2c(g),))


def dc_weights(mask: np.ndarray, lam: float) -> np.ndarray:
    """Per-location factor multiplying the network's own k-space value."""
    keep = 0.0 if np.isinf(lam) else 1.0 / (1.0 + lam)
    return np.where(mask.astype(bool), keep, 1.0)


def data_consistency(x, mask: np.ndarray, acquired: np.ndarray, lam: float) -> Var:
    """k-space blending of an image with acquired samples.

    Unsampled locations keep the image's k-space; sampled ones become
    ``(f + lam * f0) / (1 + lam)`` (``f0`` itself for ``lam = inf``).
    """
    x = _lift(x)
    sampled = mask.astype(bool)
    k = cc.fft2c(x.value)
    if np.isinf(lam):
        k = np.where(sampled, acquired, k)
    else:
        k = np.where(sampled, (k + lam * acquired) / (1.0 + lam), k)
    d = dc_weights(mask, lam)
    return _emit("data_consistency", [x], cc.ifft2c(k), lambda g: (cc.ifft2c(d * cc.fft2c(g)),))


def coil_expand(x, coil_weights: np.ndarray) -> Var:
    """Single-channel [1, H, W] -> [C, H, W] via per-coil complex weights."""
    x = _lift(x)
    u = coil_weights
    return _emit("coil_expand", [x], u * x.value,
                 lambda g: ((np.conj(u) * g).sum(axis=0, keepdims=True),))


def coil_combine(x, coil_weights: np.ndarray) -> Var:
    """[C, H, W] -> [1, H, W] as ``sum_j conj(u_j) x_j``; adjoint of :func:`coil_expand`."""
    x = _lift(x)
    u = coil_weights
    out = (np.conj(u) * x.value).sum(axis=0, keepdims=True)
    return _emit("coil_combine", [x], out, lambda g: (u * g,))


def mae(pred, target) -> Var:
    """Mean of ``|dRe| + |dIm|`` over all elements; subgradient 0 at 0."""
    pred, target = _lift(pred), _lift(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae shape mismatch {pred.shape} vs {target.shape}")
    d = pred.value - target.value
    n = d.size
    value = np.array((np.abs(d.real).sum() + np.abs(np.imag(d)).sum()) / n)
    if np.iscomplexobj(d):
        sgn = (np.sign(d.real) + 1j * np.sign(d.imag)) / n
    else:
        sgn = np.sign(d) / n

    def vjp(g):
        return g * sgn, -g * sgn

    return _emit("mae", [pred, target], value, vjp)


# ---------------------------------------------------------------------------
# finite-difference check

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def worst(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(params: Sequence[Parameter], loss_fn: Callable[["Tape | None"], Var],
               h: float = 1e-5, tol: float = 1e-4, max_scalars: int = 50_000,
               floor: float | None = None) -> GradCheckReport:
    """Compare tape gradients with central differences for every real scalar.

    ``loss_fn(tape)`` must build the scalar loss, recording on ``tape`` when
    one is given. The error for a parameter is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``.
    The floor keeps gradients that are zero up to round-off (a bias whose
    only effect is overwritten by data consistency) from reading as 100%;
    by default it sits well above the difference quotient's rounding noise,
    ``1e4 * eps * max(1, |J|) / h``.
    """
    total = sum(p.size for p in params)
    if total > max_scalars:
        raise ValueError(f"{total} scalars exceed the finite-difference budget of {max_scalars}")
    if not params:
        return GradCheckReport({}, tol)
    saved = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    tape = Tape()
    loss = loss_fn(tape)
    tape.backward(loss)
    if floor is None:
        floor = 1e4 * np.finfo(np.float64).eps * max(1.0, abs(float(loss.value))) / h
    errors = {}
    try:
        for k, p in enumerate(params):
            analytic = p.grad.view(np.float64).copy()
            numeric = np.empty_like(analytic)
            flat = p.real_view().reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + h
                up = float(loss_fn(None).value)
                flat[i] = old - h
                down = float(loss_fn(None).value)
                flat[i] = old
                numeric.reshape(-1)[i] = (up - down) / (2 * h)
            scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
            err = float(np.abs(analytic - numeric).max() / scale)
            errors[p.name or f"param{k}"] = err
    finally:
        for p, g in zip(params, saved):
            p.grad[...] = g
    return GradCheckReport(errors, tol)
