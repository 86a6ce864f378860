"""Mini-batch MSE/Adam training with early stopping, evaluation, checkpoints.

The loop mirrors the benchmark protocol: seeded shuffle each epoch, final
partial batch kept, eval-mode validation loss after every epoch, snapshot on
strict improvement, stop after ``patience`` epochs without one, and return
the snapshot (not the final weights).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .data import NoisyPair
from .metrics import MetricStats, aggregate, psnr, ssim
from .models import ModelGraph, forward
from .optim import adam_step, init_adam
from .tensor import Tape, Tensor, backward

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainHistory",
    "EarlyStopping",
    "TrainingDivergedError",
    "train",
    "EvalReport",
    "evaluate",
    "CheckpointError",
    "ArchitectureMismatchError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_weights",
]


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 5
    learning_rate: float = 0.001
    patience: int = 5
    seed: int = 42
    width_scale: float = 1.0

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("max_epochs, batch_size, and patience must be positive")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience > self.max_epochs:
            raise ValueError(
                f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if not 0.0 < self.width_scale <= 1.0:
            raise ValueError(f"width_scale must be in (0, 1], got {self.width_scale}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 1-based
    train_loss: float
    val_loss: float
    is_best: bool


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


class TrainingDivergedError(RuntimeError):
    """A non-finite loss surfaced; the run aborts instead of continuing."""


class EarlyStopping:
    """Patience counter over validation losses, strict improvement (min_delta 0)."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError(f"patience must be positive, got {patience}")
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.epochs_since_best = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when this is a new best."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience


def _stack_batch(pairs: list[NoisyPair], indices) -> tuple[Tensor, Tensor]:
    noisy = np.concatenate([pairs[i].noisy for i in indices], axis=0)
    clean = np.concatenate([pairs[i].clean for i in indices], axis=0)
    return Tensor(noisy), Tensor(clean)


def dataset_mse(model: ModelGraph, pairs: list[NoisyPair], batch_size: int) -> float:
    """Eval-mode mean squared error over a pair set (sample-weighted)."""
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        chunk = range(start, min(start + batch_size, len(pairs)))
        noisy, clean = _stack_batch(pairs, chunk)
        out = forward(model, noisy, mode="eval")
        loss = float(ops.mse_loss(out, clean).data)
        total += loss * len(chunk)
    return total / len(pairs)


def train(model: ModelGraph, train_pairs: list[NoisyPair], val_pairs: list[NoisyPair],
          cfg: TrainConfig) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Optimize ``model`` in place and return (best weight snapshot, history).

    The snapshot covers the full parameter store (including batchnorm running
    statistics) at the best validation epoch; the model itself is left at its
    final state, so callers restore the snapshot for evaluation.
    """
    if not train_pairs or not val_pairs:
        raise ValueError("train and val sets must be non-empty")
    if cfg.batch_size > len(train_pairs):
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds train set size {len(train_pairs)}")

    rng = np.random.default_rng(cfg.seed)
    trainable = model.trainable_params()
    state = init_adam(trainable)
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    snapshot = {name: t.data.copy() for name, t in model.params.items()}

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_pairs))
        running = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            noisy, clean = _stack_batch(train_pairs, batch_idx)
            tape = Tape()
            out = forward(model, noisy, mode="train", tape=tape)
            loss = ops.mse_loss(out, clean, tape=tape)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"non-finite training loss {loss_value} at epoch {epoch}, "
                    f"batch starting at {start} ({model.arch_id})")
            for p in trainable.values():
                p.zero_grad()
            backward(tape, loss)
            adam_step(trainable, state, cfg.learning_rate)
            running += loss_value * len(batch_idx)
        train_loss = running / len(train_pairs)

        val_loss = dataset_mse(model, val_pairs, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(
                f"non-finite validation loss {val_loss} at epoch {epoch} ({model.arch_id})")
        is_best = stopper.update(epoch, val_loss)
        if is_best:
            snapshot = {name: t.data.copy() for name, t in model.params.items()}
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, is_best))
        if stopper.should_stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_epoch
    return snapshot, history


@dataclass
class EvalReport:
    """Per-image test metrics plus aggregates, with the noisy-input baseline."""

    arch_id: str
    sigma_raw: float
    image_ids: list[str]
    psnr_values: list[float]
    ssim_values: list[float]
    noisy_psnr_values: list[float]
    noisy_ssim_values: list[float]
    psnr_stats: MetricStats
    ssim_stats: MetricStats
    noisy_psnr_stats: MetricStats
    noisy_ssim_stats: MetricStats


def evaluate(model: ModelGraph, test_pairs: list[NoisyPair],
             sigma_raw: float | None = None) -> EvalReport:
    """Eval-mode forward per test image; PSNR/SSIM against the clean targets."""
    if not test_pairs:
        raise ValueError("test set must be non-empty")
    ids, ps, ss, nps, nss = [], [], [], [], []
    for pair in test_pairs:
        out = forward(model, Tensor(pair.noisy), mode="eval").data
        ids.append(pair.id)
        ps.append(psnr(pair.clean, out))
        ss.append(ssim(pair.clean, out))
        nps.append(psnr(pair.clean, pair.noisy))
        nss.append(ssim(pair.clean, pair.noisy))
    return EvalReport(
        arch_id=model.arch_id,
        sigma_raw=test_pairs[0].sigma_raw if sigma_raw is None else sigma_raw,
        image_ids=ids,
        psnr_values=ps,
        ssim_values=ss,
        noisy_psnr_values=nps,
        noisy_ssim_values=nss,
        psnr_stats=aggregate(ps, allow_all_infinite=True),
        ssim_stats=aggregate(ss),
        noisy_psnr_stats=aggregate(nps, allow_all_infinite=True),
        noisy_ssim_stats=aggregate(nss),
    )


# ---------------------------------------------------------------------------
# Checkpoints: magic "DNB1", version, arch id, width_scale, then named f32
# parameter records. Little-endian throughout; round-trips are bit-exact.

CHECKPOINT_MAGIC = b"DNB1"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable checkpoint: bad magic, bad version, or truncation."""


class ArchitectureMismatchError(ValueError):
    """Checkpoint does not fit the target model (id, width, names, or shapes)."""


@dataclass
class Checkpoint:
    arch_id: str
    width_scale: float
    params: dict[str, np.ndarray]


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(raw)}")
    return raw


def save_checkpoint(model: ModelGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        arch = model.arch_id.encode("utf-8")
        fh.write(struct.pack("<I", len(arch)))
        fh.write(arch)
        fh.write(struct.pack("<d", float(model.width_scale)))
        fh.write(struct.pack("<Q", len(model.params)))
        for name, tensor in model.params.items():
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<B", tensor.data.ndim))
            for dim in tensor.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (arch_len,) = struct.unpack("<I", _read_exact(fh, 4))
        arch_id = _read_exact(fh, arch_len).decode("utf-8")
        (width_scale,) = struct.unpack("<d", _read_exact(fh, 8))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            n_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(_read_exact(fh, 4 * n_values), dtype="<f4")
            params[name] = data.reshape(shape).copy()
    return Checkpoint(arch_id=arch_id, width_scale=width_scale, params=params)


def restore_weights(model: ModelGraph, checkpoint: Checkpoint) -> None:
    """Copy checkpoint arrays into the model's parameter store, validating fit."""
    if checkpoint.arch_id != model.arch_id:
        raise ArchitectureMismatchError(
            f"checkpoint is for {checkpoint.arch_id!r}, model is {model.arch_id!r}")
    if checkpoint.width_scale != model.width_scale:
        raise ArchitectureMismatchError(
            f"checkpoint width_scale {checkpoint.width_scale} != model "
            f"{model.width_scale}")
    if set(checkpoint.params) != set(model.params):
        missing = set(model.params) - set(checkpoint.params)
        extra = set(checkpoint.params) - set(model.params)
        raise ArchitectureMismatchError(
            f"parameter names disagree (missing {sorted(missing)[:3]}, "
            f"extra {sorted(extra)[:3]})")
    for name, tensor in model.params.items():
        arr = checkpoint.params[name]
        if arr.shape != tensor.data.shape:
            raise ArchitectureMismatchError(
                f"parameter {name!r} shape {arr.shape} != model {tensor.data.shape}")
        tensor.data = arr.astype(np.float32, copy=True)
