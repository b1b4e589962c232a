"""MAE objective, Adam, and the minibatch training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .datasim import MultiCoilSample
from .errors import GradientError, ShapeError, TrainingDiverged
from .metrics import combine_magnitude, psnr, ssim
from .network import CascadeModel, ModelConfig, count_parameters, real_conv_variant

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 4
    epochs: int = 40
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    lambda_dc: float = math.inf
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.lambda_dc < 0:
            raise ValueError("lambda_dc must be nonnegative")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class LossLog:
    entries: list[tuple[int, float, float]] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float) -> None:
        self.entries.append((epoch, float(train_loss), float(val_loss)))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def train(self) -> list[float]:
        return [e[1] for e in self.entries]

    @property
    def val(self) -> list[float]:
        return [e[2] for e in self.entries]

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{t!r},{v!r}" for e, t, v in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "LossLog":
        out = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("epoch"):
                continue
            e, t, v = line.split(",")
            out.append(int(e), float(t), float(v))
        return out

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read(cls, path) -> "LossLog":
        return cls.from_csv(Path(path).read_text())


def mae_loss(pred, target) -> float:
    """Mean over elements of ``|dRe| + |dIm|``."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae shape mismatch {pred.shape} vs {target.shape}")
    return float(ad.mae(pred, target).value)


def adam_step(params: Sequence[Parameter], config: TrainConfig, t: int) -> None:
    """One bias-corrected Adam update using each parameter's ``grad``.

    Real and imaginary components are updated as independent scalars.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise GradientError(f"non-finite gradient in {p.name}; step aborted")
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1 - b1 ** t, 1 - b2 ** t
    for p in params:
        g = p.grad.view(np.float64)
        p.adam_m *= b1
        p.adam_m += (1 - b1) * g
        p.adam_v *= b2
        p.adam_v += (1 - b2) * g * g
        p.real_view()[...] -= config.lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + config.eps)


def _prepare(model: CascadeModel, samples: Sequence[MultiCoilSample]):
    out = []
    for s in samples:
        prep = model.prepare(s.ksp_under, s.mask)
        out.append((prep, prep.target(s.truth)))
    return out


def evaluate_loss(model: CascadeModel, prepared) -> float:
    return float(np.mean([mae_loss(model.forward(p).value, y) for p, y in prepared]))


def split_indices(n: int, val_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split; with no room for a held-out set, validate on training data."""
    perm = rng.permutation(n)
    n_val = int(math.floor(val_fraction * n))
    if n_val == 0 or n_val == n:
        return perm, perm
    return perm[n_val:], perm[:n_val]


@dataclass
class TrainResult:
    model: CascadeModel
    log: LossLog
    best_epoch: int
    steps: int


def train(model: CascadeModel, dataset: Sequence[MultiCoilSample], config: TrainConfig,
          loss_log: LossLog | None = None,
          on_epoch: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Minibatch Adam on the MAE between cascade output and ground truth.

    Epoch numbering continues from ``loss_log`` when one is passed. The
    model is left holding the weights of the best validation epoch.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    shape = dataset[0].shape
    if any(s.shape != shape for s in dataset):
        raise ShapeError("all samples must share coil count and image size")
    model.lam = config.lambda_dc
    loss_log = loss_log if loss_log is not None else LossLog()
    first_epoch = loss_log.entries[-1][0] + 1 if loss_log.entries else 1

    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_indices(len(dataset), config.val_fraction, rng)
    prepared = _prepare(model, dataset)
    val_set = [prepared[i] for i in val_idx]
    params = model.parameters()

    best_val, best_epoch = math.inf, first_epoch - 1
    best_state = [p.value.copy() for p in params]
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is caught explicitly below
        for epoch in range(first_epoch, first_epoch + config.epochs):
            step = _epoch(model, prepared, val_set, train_idx, params, config, rng, epoch, step,
                          loss_log, on_epoch)
            if loss_log.entries[-1][2] < best_val:
                best_val, best_epoch = loss_log.entries[-1][2], epoch
                best_state = [p.value.copy() for p in params]

    for p, v in zip(params, best_state):
        p.value[...] = v
    return TrainResult(model, loss_log, best_epoch, step)


def _epoch(model, prepared, val_set, train_idx, params, config, rng, epoch, step, loss_log, on_epoch) -> int:
    """One pass over the shuffled training indices; returns the updated step count."""
    order = rng.permutation(train_idx)
    total = 0.0
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        step += 1
        model.zero_grad()
        for i in batch:
            prep, target = prepared[i]
            tape = Tape()
            out = model.forward(prep, tape)
            loss = ad.scale(ad.mae(out, target), 1.0 / len(batch))
            value = float(loss.value)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, step)
            try:
                tape.backward(loss)
            except GradientError as e:
                raise TrainingDiverged(epoch, step, str(e)) from None
            total += value * len(batch)
        try:
            adam_step(params, config, step)
        except GradientError as e:
            raise TrainingDiverged(epoch, step, str(e)) from None
    train_loss = total / len(order)
    val_loss = evaluate_loss(model, val_set)
    if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
        raise TrainingDiverged(epoch, step)
    loss_log.append(epoch, train_loss, val_loss)
    log.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
    if on_epoch is not None:
        on_epoch(epoch, train_loss, val_loss)
    return step


def reconstruct(model: CascadeModel, samples: Sequence[MultiCoilSample]) -> list[np.ndarray]:
    return [model(s.ksp_under, s.mask) for s in samples]


@dataclass
class EvalRow:
    sample_id: int
    psnr_zf: float
    psnr_recon: float
    ssim_zf: float
    ssim_recon: float


def evaluate(samples: Sequence[MultiCoilSample], recons: Sequence[np.ndarray],
             combine: str = "walsh") -> list[EvalRow]:
    """PSNR/SSIM of zero-filled and reconstructed images against the truth.

    Images are compared as coil-combined magnitudes (peak 1).
    """
    if len(samples) != len(recons):
        raise ShapeError(f"{len(samples)} samples but {len(recons)} reconstructions")
    rows = []
    for i, (s, r) in enumerate(zip(samples, recons)):
        r = np.asarray(r)
        if r.shape[-2:] != s.truth.shape[-2:] or r.shape[0] not in (1, s.truth.shape[0]):
            raise ShapeError(f"sample {i}: reconstruction {r.shape} does not match truth {s.truth.shape}")
        ref = combine_magnitude(s.truth, combine)
        zf = combine_magnitude(s.zero_filled(), combine)
        rec = combine_magnitude(r, combine)
        rows.append(EvalRow(i, psnr(zf, ref), psnr(rec, ref), ssim(zf, ref), ssim(rec, ref)))
    return rows


@dataclass
class AblationRow:
    variant: str
    conv_mode: str
    width: int
    n_params: int
    psnr: float
    ssim: float
    log: LossLog


def ablation_run(model_config: ModelConfig, train_config: TrainConfig,
                 train_set: Sequence[MultiCoilSample], test_set: Sequence[MultiCoilSample],
                 combine: str = "walsh") -> list[AblationRow]:
    """Train complex and budget-matched real variants on identical data and seed."""
    if model_config.conv_mode != "complex":
        raise ValueError("ablation starts from the complex configuration")
    rows = []
    complex_model = CascadeModel(model_config, train_config.lambda_dc, seed=train_config.seed)
    real_model = real_conv_variant(model_config, train_config.lambda_dc, seed=train_config.seed)
    for name, model in (("complex", complex_model), ("real", real_model)):
        res = train(model, train_set, train_config)
        ev = evaluate(test_set, reconstruct(model, test_set), combine)
        rows.append(AblationRow(name, model.config.conv_mode, model.config.width,
                                count_parameters(model.config),
                                float(np.mean([e.psnr_recon for e in ev])),
                                float(np.mean([e.ssim_recon for e in ev])), res.log))
    return rows


def ablation_report_csv(rows: Sequence[AblationRow]) -> str:
    lines = ["variant,conv_mode,width,n_params,psnr,ssim"]
    lines += [f"{r.variant},{r.conv_mode},{r.width},{r.n_params},{r.psnr!r},{r.ssim!r}" for r in rows]
    return "\n".join(lines) + "\n"


def ablation_curves_csv(rows: Sequence[AblationRow]) -> str:
    head = ["epoch"] + [f"{r.variant}_{k}" for r in rows for k in ("train", "val")]
    lines = [",".join(head)]
    for i in range(max(len(r.log) for r in rows)):
        cells = [str(rows[0].log.entries[i][0])]
        for r in rows:
            _, t, v = r.log.entries[i]
            cells += [repr(t), repr(v)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def check_model_gradients(model: CascadeModel, sample: MultiCoilSample, h: float = 1e-5,
                          tol: float = 1e-4) -> ad.GradCheckReport:
    """Finite-difference check of the MAE gradient for one sample."""
    prep = model.prepare(sample.ksp_under, sample.mask)
    target = prep.target(sample.truth)
    return ad.grad_check(model.parameters(), lambda tape: ad.mae(model.forward(prep, tape), target), h, tol)
