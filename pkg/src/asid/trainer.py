"""Loss, ADAM, the step-halving learning-rate schedule and the training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import store
from .errors import ConfigError, ContractError, NumericError
from .layers import Module, Parameter
from .network import ASID
from .tensor import Tape, Tensor, abs_, mean, mul, sub

REFERENCE_EPOCHS = 1000  # length of the full-scale schedule the halving period refers to


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 16
    lr0: float = 5e-4
    period: int = 250
    epochs: int = REFERENCE_EPOCHS
    steps_per_epoch: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: str = "l1"

    def __post_init__(self):
        if self.batch < 1 or self.epochs < 1 or self.steps_per_epoch < 1 or self.period < 1:
            raise ConfigError("batch, epochs, steps_per_epoch and period must be positive")
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.loss not in ("l1", "l2"):
            raise ConfigError(f"loss must be 'l1' or 'l2', got {self.loss!r}")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @property
    def effective_period(self) -> int:
        """Halving period shrunk in proportion to a shortened run."""
        return max(1, round(self.period * self.epochs / REFERENCE_EPOCHS))

    def lr_at(self, epoch: int) -> float:
        return lr_at(epoch, self.lr0, self.effective_period)


def lr_at(epoch: int, lr0: float = 5e-4, period: int = 250) -> float:
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return lr0 * 0.5 ** (epoch // period)


def pixel_loss(pred: Tensor, target: Tensor, kind: str = "l1") -> Tensor:
    d = sub(pred, target)
    return mean(abs_(d)) if kind == "l1" else mean(mul(d, d))


@dataclass
class Adam:
    """ADAM with bias correction over a fixed, ordered parameter list."""

    params: list[Parameter]
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    names: list[str] | None = None

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def _name(self, i: int) -> str:
        return self.names[i] if self.names else f"param[{i}]"

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        if len(grads) != len(self.params):
            raise ContractError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ContractError(f"{self._name(i)}: gradient {g.shape} != parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise NumericError(f"non-finite gradient in {self._name(i)} ({bad} of {g.size} elements) "
                                   f"at step {self.step_count + 1}")
        b1, b2 = self.betas
        self.step_count += 1
        c1, c2 = 1 - b1 ** self.step_count, 1 - b2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"step": np.array(self.step_count)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{i}"], out[f"v{i}"] = m, v
        return out

    def load_state_dict(self, state) -> None:
        n = len(self.params)
        if any(f"m{i}" not in state or state[f"m{i}"].shape != self.params[i].shape for i in range(n)):
            raise ContractError("optimizer state does not match the parameter list")
        self.step_count = int(state["step"])
        self.m = [np.array(state[f"m{i}"]) for i in range(n)]
        self.v = [np.array(state[f"v{i}"]) for i in range(n)]


def sidecar(path) -> Path:
    return Path(str(path) + ".opt.npz")


def save_checkpoint(model: ASID, opt: Adam, path) -> None:
    store.save(model, path)
    np.savez(sidecar(path), **opt.state_dict())


def load_checkpoint(path, dtype=np.float32) -> tuple[ASID, Adam]:
    model = store.load(path, dtype=dtype)
    names, params = zip(*model.named_parameters())
    opt = Adam(list(params), names=list(names))
    with np.load(sidecar(path)) as state:
        opt.load_state_dict(state)
    return model, opt


@dataclass
class StepLog:
    step: int
    epoch: int
    lr: float
    loss: float
    psnr: float | None = None


def gradients(model: Module, lr_batch: np.ndarray, hr_batch: np.ndarray, kind: str = "l1") -> tuple[float, list[np.ndarray]]:
    """Loss value and per-parameter gradients (zeros for parameters the loss ignores)."""
    with Tape() as tape:
        loss = pixel_loss(model(Tensor(lr_batch), training=True), Tensor(hr_batch.astype(lr_batch.dtype)), kind)
    grads = tape.backward(loss)
    return float(loss.item()), [grads.get(p, np.zeros_like(p.data)) for p in model.parameters()]


def train_loop(model: ASID, data: Iterator[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
               log_path=None, checkpoint_path=None, checkpoint_every: int = 0,
               evaluate: Callable[[ASID], float] | None = None, eval_every: int = 0,
               opt: Adam | None = None, on_step: Callable[[StepLog], None] | None = None) -> list[StepLog]:
    """Run ``cfg.total_steps`` optimisation steps on batches drawn from ``data``.

    A non-finite loss stops training with :class:`NumericError`; the last
    checkpoint on disk is left untouched.
    """
    names, params = zip(*model.named_parameters())
    opt = opt or Adam(list(params), cfg.betas, cfg.eps, names=list(names))
    history: list[StepLog] = []
    writer = None
    fh = open(log_path, "w", newline="") if log_path else None
    try:
        if fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "epoch", "lr", "loss", "psnr"])
        start = opt.step_count
        for step in range(start, cfg.total_steps):
            epoch = step // cfg.steps_per_epoch
            lr = cfg.lr_at(epoch)
            lr_batch, hr_batch = next(data)
            loss, grads = gradients(model, lr_batch, hr_batch, cfg.loss)
            if not math.isfinite(loss):
                raise NumericError(f"loss diverged to {loss} at step {step}; last checkpoint kept")
            opt.step(grads, lr)
            entry = StepLog(step + 1, epoch, lr, loss)
            if evaluate and eval_every and (step + 1) % eval_every == 0:
                entry.psnr = evaluate(model)
            history.append(entry)
            if writer:
                writer.writerow([entry.step, epoch, f"{lr:.6g}", f"{loss:.6g}",
                                 "" if entry.psnr is None else f"{entry.psnr:.6g}"])
            if checkpoint_path and checkpoint_every and (step + 1) % checkpoint_every == 0:
                save_checkpoint(model, opt, checkpoint_path)
            if on_step:
                on_step(entry)
    finally:
        if fh:
            fh.close()
    if checkpoint_path:
        save_checkpoint(model, opt, checkpoint_path)
    return history
