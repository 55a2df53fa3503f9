"""L1 training with progressive patch sizes, and evaluation helpers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .blocks import ConfigurationError
from .metrics import batch_psnr, batch_ssim
from .tasks import random_crops
from .tensor import ops
from .tensor.core import Tensor, backward, no_grad
from .tensor.nn import Module, cosine_lr, make_optimizer

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Loss became non-finite; carries the last finite loss and parameter state."""

    def __init__(self, message: str, last_loss: float, state: dict | None = None, step: int = -1):
        super().__init__(message)
        self.last_loss = last_loss
        self.state = state or {}
        self.step = step


@dataclass
class TrainSchedule:
    phases: tuple[tuple[int, int, int], ...] = ((16, 8, 2000), (24, 4, 2000), (32, 2, 1000))
    lr: float = 1e-3
    optimizer: str = "adam"
    clip: float | None = 1.0

    def __post_init__(self):
        self.phases = tuple(tuple(int(v) for v in p) for p in self.phases)
        sizes = [p[0] for p in self.phases]
        if any(s % 8 or s <= 0 for s in sizes):
            raise ConfigurationError(f"patch sizes {sizes} must be positive multiples of 8")
        if sizes != sorted(sizes):
            raise ConfigurationError(f"patch sizes {sizes} must be nondecreasing")
        if any(b <= 0 or n < 0 for _, b, n in self.phases):
            raise ConfigurationError("batch sizes must be positive and step counts nonnegative")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be nonnegative")

    @property
    def total_steps(self) -> int:
        return sum(p[2] for p in self.phases)

    def scaled(self, factor: float) -> "TrainSchedule":
        phases = tuple((p, b, max(1, int(round(n * factor))) if n else 0) for p, b, n in self.phases)
        return TrainSchedule(phases, self.lr, self.optimizer, self.clip)


def train(network: Module, degraded: np.ndarray, clean: np.ndarray, schedule: TrainSchedule,
          rng: np.random.Generator, params: list | None = None,
          callback: Callable[[int, float], None] | None = None) -> list[float]:
    """Minimise the mean absolute error of ``network(x)`` against ``clean`` on random crops.

    Returns the per-step loss curve. ``params`` restricts which tensors are
    updated (all of the network's by default).
    """
    params = network.parameters() if params is None else params
    opt = make_optimizer(schedule.optimizer, params, schedule.lr, clip=schedule.clip)
    total = schedule.total_steps
    curve: list[float] = []
    step = 0
    last_state = {id(p): p.data.copy() for p in params}
    for patch, batch, steps in schedule.phases:
        for _ in range(steps):
            x, y = random_crops(rng, degraded, clean, batch, min(patch, degraded.shape[-1]))
            opt.zero_grad()
            loss = ops.l1_loss(network(Tensor(x)), y)
            value = loss.item()
            if not math.isfinite(value):
                for p in params:
                    p.data = last_state[id(p)]
                last = curve[-1] if curve else float("nan")
                raise TrainingError(f"non-finite training loss at step {step}", last,
                                    {k: p.data.copy() for k, p in network.named_parameters()}, step)
            backward(loss)
            opt.step(cosine_lr(schedule.lr, step, total))
            curve.append(value)
            if callback is not None:
                callback(step, value)
            step += 1
            if step % 200 == 0:
                last_state = {id(p): p.data.copy() for p in params}
                log.info("step %d/%d loss %.5f", step, total, value)
    return curve


def restore(network: Module, degraded: np.ndarray, batch: int = 16) -> np.ndarray:
    out = []
    with no_grad():
        for s in range(0, len(degraded), batch):
            out.append(network(Tensor(degraded[s:s + batch])).data)
    return np.concatenate(out)


def evaluate(network: Module, degraded: np.ndarray, clean: np.ndarray, batch: int = 16) -> dict:
    pred = restore(network, degraded, batch)
    window = min(8, degraded.shape[-1])
    return {"psnr": batch_psnr(pred, clean), "ssim": batch_ssim(pred, clean, window)}


def evaluate_psnr(network: Module, degraded: np.ndarray, clean: np.ndarray, batch: int = 16) -> float:
    return batch_psnr(restore(network, degraded, batch), clean)


@dataclass
class EvalSet:
    degraded: np.ndarray
    clean: np.ndarray
    meta: dict = field(default_factory=dict)
