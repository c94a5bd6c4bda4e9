"""Mini-batch training loop: adaptive moment estimation, a stepwise
learning-rate schedule, per-epoch proposal resampling, and checkpointing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError
from .labels import LabelSet
from .losses import LossBreakdown, sample_completeness_mask, total_loss
from .model import ModelConfig, ModelParameters, full_forward, init_parameters, save_checkpoint
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_LR_SCHEDULE = ((10, 1e-3), (2, 1e-4))


@dataclass
class TrainSample:
    """One training item: a grid-sized feature pair with its targets."""

    sample_id: str
    spatial: np.ndarray  # (L, C)
    temporal: np.ndarray  # (L, C)
    labels: LabelSet


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    batch_size: int = 16
    lr_schedule: tuple[tuple[int, float], ...] = DEFAULT_LR_SCHEDULE
    seed: int = 0
    precision: str = "f32"
    # Optional periodic validation on the training corpus.
    eval_every: int = 0
    snms_threshold: float = 0.8
    snms_decay: float = 0.75
    eval_proposals: int = 10

    def lr_for_epoch(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch; the last segment extends forever."""
        remaining = epoch
        for n_epochs, lr in self.lr_schedule:
            if remaining <= n_epochs:
                return lr
            remaining -= n_epochs
        return self.lr_schedule[-1][1]


def scale_schedule(
    schedule: tuple[tuple[int, float], ...], total_epochs: int
) -> tuple[tuple[int, float], ...]:
    """Stretch a schedule's segment lengths proportionally onto total_epochs."""
    base = sum(n for n, _ in schedule)
    out = []
    used = 0
    for i, (n, lr) in enumerate(schedule):
        if i == len(schedule) - 1:
            length = total_epochs - used
        else:
            length = int(round(n / base * total_epochs))
        length = max(length, 1)
        used += length
        out.append((length, lr))
    return tuple(out)


@dataclass
class AdamState:
    """First/second moment accumulators, shaped exactly like their parameters."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParameters, state: AdamState, lr: float) -> None:
    """One bias-corrected moment update over every parameter's stored gradient."""
    for name, t in params.named():
        g = t.grad
        if g is None:
            g = np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}", stage="adam_step")
    state.step += 1
    correction1 = 1.0 - ADAM_BETA1**state.step
    correction2 = 1.0 - ADAM_BETA2**state.step
    for name, t in params.named():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        g = g.astype(np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(t.shape, dtype=np.float64)
            state.v[name] = np.zeros(t.shape, dtype=np.float64)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        t.data -= (lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(t.data.dtype)


def _batches(order: np.ndarray, batch_size: int):
    for lo in range(0, len(order), batch_size):
        yield order[lo : lo + batch_size]


def train(
    samples: list[TrainSample],
    model_config: ModelConfig,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    on_epoch=None,
) -> tuple[ModelParameters, list[LossBreakdown]]:
    """Train from scratch on the given corpus.

    Shuffling, proposal resampling and initialization all derive from
    ``config.seed``, so runs are bit-reproducible.  Returns the final
    parameters and one averaged LossBreakdown per epoch; when ``out_dir``
    is set, a checkpoint is written every epoch alongside the loss CSV.
    """
    if not samples:
        raise ValueError("empty training corpus")
    params = init_parameters(model_config)
    state = AdamState()
    rng = np.random.default_rng(config.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    history: list[LossBreakdown] = []
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_for_epoch(epoch)
        order = rng.permutation(len(samples))
        sums = np.zeros(5)
        flags = 0
        for batch in _batches(order, config.batch_size):
            params.zero_grads()
            for idx in batch:
                sample = samples[int(idx)]
                tape = Tape()
                spatial = Tensor(sample.spatial, dtype=model_config.dtype)
                temporal = Tensor(sample.temporal, dtype=model_config.dtype)
                outputs = full_forward(spatial, temporal, params, tape=tape)
                mask_rng = np.random.default_rng([config.seed, epoch, int(idx)])
                psample = sample_completeness_mask(sample.labels.completeness, mask_rng)
                try:
                    loss, bd = total_loss(outputs, sample.labels, psample, tape=tape)
                except NumericError as exc:
                    raise NumericError(
                        f"non-finite loss on sample {sample.sample_id!r} (epoch {epoch})",
                        stage="train",
                    ) from exc
                tape.backward(loss, seed=1.0 / len(batch))
                sums += (bd.actionness, bd.start, bd.end, bd.completeness, bd.total)
                flags += bd.balance_flags
            adam_step(params, state, lr)
        mean = sums / len(samples)
        breakdown = LossBreakdown(*mean, proposal_sample=None, balance_flags=flags)
        history.append(breakdown)
        logger.info("epoch %d lr %g total %.6f", epoch, lr, breakdown.total)
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.ckpt", params)
            write_history_csv(out_dir / "loss_history.csv", history)
        if on_epoch is not None:
            on_epoch(epoch, params, breakdown)
    return params, history


def write_history_csv(path, history: list[LossBreakdown]) -> None:
    lines = [LossBreakdown.CSV_HEADER]
    lines += [bd.csv_row(epoch) for epoch, bd in enumerate(history, start=1)]
    Path(path).write_text("\n".join(lines) + "\n")
