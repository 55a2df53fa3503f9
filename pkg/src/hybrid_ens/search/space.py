"""Continuous relaxation of the code space and the block-count penalty."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..blocks import ConfigurationError
from ..tensor.core import ContractError
from ..unet import DEFAULT_STAGES, StageSpec, validate_code

W_TEACHER = 3.0
W_SURROGATE = 1.0


def decode(x: Sequence[float], specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    """Equal-width bins per component: ``z_i = min(floor(x_i * K_i), K_i - 1)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(specs),):
        raise ContractError(f"point has shape {x.shape}, expected ({len(specs)},)")
    if not np.all((x >= 0.0) & (x <= 1.0)):
        raise ContractError(f"point {x.tolist()} outside the unit cube")
    k = np.array([s.options for s in specs])
    return tuple(int(v) for v in np.minimum(np.floor(x * k), k - 1))


def decode_many(X: np.ndarray, specs: Sequence[StageSpec] = DEFAULT_STAGES) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if np.any((X < 0.0) | (X > 1.0)):
        raise ContractError("points outside the unit cube")
    k = np.array([s.options for s in specs])
    return np.minimum(np.floor(X * k), k - 1).astype(int)


def bin_center(code: Sequence[int], specs: Sequence[StageSpec] = DEFAULT_STAGES) -> np.ndarray:
    """A point inside the bin of ``code`` (its midpoint)."""
    code = validate_code(code, specs)
    k = np.array([s.options for s in specs], dtype=float)
    return (np.asarray(code) + 0.5) / k


def penalty(code: Sequence[int], specs: Sequence[StageSpec] = DEFAULT_STAGES,
            w_teacher: float = W_TEACHER, w_surrogate: float = W_SURROGATE) -> float:
    """Weighted block count: teacher blocks cost ``w_teacher``, surrogate blocks ``w_surrogate``."""
    if not w_teacher > w_surrogate > 0:
        raise ConfigurationError(f"need w_teacher > w_surrogate > 0, got ({w_teacher}, {w_surrogate})")
    code = validate_code(code, specs)
    total = 0.0
    for z, spec in zip(code, specs):
        total += (w_teacher if z == 0 else w_surrogate) * spec.block_count(z)
    return total


def network_penalty(stages, w_teacher: float = W_TEACHER, w_surrogate: float = W_SURROGATE) -> float:
    """Penalty of an assembled network from its blocks; covers mixed (equal-split) stages."""
    if not w_teacher > w_surrogate > 0:
        raise ConfigurationError(f"need w_teacher > w_surrogate > 0, got ({w_teacher}, {w_surrogate})")
    return float(sum(w_teacher * s.teacher_blocks + w_surrogate * s.surrogate_blocks for s in stages))


def sub_specs(free: Sequence[int], specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[StageSpec, ...]:
    return tuple(specs[i] for i in free)


def embed(sub_code: Sequence[int], free: Sequence[int], d: int = len(DEFAULT_STAGES)) -> tuple[int, ...]:
    """Full code with ``sub_code`` on the free stages and the teacher (0) elsewhere."""
    if len(sub_code) != len(free):
        raise ConfigurationError(f"{len(sub_code)} values for {len(free)} free stages")
    full = [0] * d
    for i, z in zip(free, sub_code):
        full[i] = int(z)
    return tuple(full)
