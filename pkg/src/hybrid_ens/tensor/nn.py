"""Parameter containers, initialisation and optimisers."""
from __future__ import annotations

import copy
import math
from typing import Iterator

import numpy as np

from .core import Tensor


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical streams on every platform."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    s = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def constant(shape: tuple[int, ...], value: float) -> Tensor:
    return Tensor(np.full(shape, float(value)), requires_grad=True)


class Module:
    """Tree of parameters discovered from instance attributes.

    Attributes holding grad-requiring tensors are parameters; attributes that
    are modules, or lists of modules, are walked recursively.  Names join path
    components with ``/``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + "/")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}{i}/")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = set(params) - set(state)
            extra = set(state) - set(params)
            if missing or extra:
                raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} extra={sorted(extra)[:5]}")
        for k, v in state.items():
            if k in params:
                if params[k].size != np.size(v):
                    raise ValueError(f"{k}: shape {np.shape(v)} != {params[k].shape}")
                params[k].data = np.array(v, dtype=np.float64).reshape(params[k].shape)

    def clone(self):
        """Deep copy with fresh parameter tensors."""
        return copy.deepcopy(self)


def cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 1:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * step / total))


class SGD:
    """Gradient descent with heavy-ball momentum."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9, clip: float | None = None):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self._buf = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        scale = _clip_scale(self.params, self.clip)
        for p, buf in zip(self.params, self._buf):
            if p.grad is None:
                continue
            buf *= self.momentum
            buf += p.grad * scale
            p.data = p.data - lr * buf

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 clip: float | None = None):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        scale = _clip_scale(self.params, self.clip)
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _clip_scale(params: list[Tensor], clip: float | None) -> float:
    if clip is None:
        return 1.0
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    return 1.0 if total <= clip or total == 0.0 else clip / total


def make_optimizer(name: str, params: list[Tensor], lr: float, momentum: float = 0.9,
                   clip: float | None = None):
    if name == "sgd":
        return SGD(params, lr, momentum=momentum, clip=clip)
    if name == "adam":
        return Adam(params, lr, clip=clip)
    raise ValueError(f"unknown optimizer {name!r}")
