"""Restormer-style teacher blocks and Mamba-style surrogate blocks.

Both block families map ``(n, C, H, W) -> (n, C, H, W)`` so any stage can be
swapped for any other of the same width.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ops
from .tensor.core import Tensor
from .tensor.nn import Module, constant, ones, uniform, zeros
from .tensor.scan import selective_scan

TEACHER = "teacher"
SURROGATE = "surrogate"
MIXED = "mixed"

DIRECTIONS = ("row", "row_rev", "col", "col_rev")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BlockConfig:
    heads: int = 1
    ffn_expansion: int = 2
    d_state: int = 8
    ssm_expansion: int = 1
    ca_reduction: int = 4
    delta_init: float = 0.1
    ln_eps: float = 1e-5


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        self.gamma = ones((c,))
        self.beta = zeros((c,))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self._eps)


class Conv1x1(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = uniform(rng, (c_out, c_in, 1, 1), c_in)
        self.bias = zeros((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_1x1(x, self.weight, self.bias)


class DWConv3x3(Module):
    def __init__(self, c: int, rng: np.random.Generator):
        self.weight = uniform(rng, (c, 1, 3, 3), 9)
        self.bias = zeros((c,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.depthwise_conv_3x3(x, self.weight, self.bias)


class Conv3x3(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = uniform(rng, (c_out, c_in, 3, 3), 9 * c_in)
        self.bias = zeros((c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_3x3(x, self.weight, self.bias)


# --------------------------------------------------------------------- teacher

class MDTA(Module):
    """Transposed (channel) attention with 1x1 + depthwise q/k/v projections."""

    def __init__(self, c: int, heads: int, rng: np.random.Generator):
        if c % heads:
            raise ConfigurationError(f"channels {c} not divisible by heads {heads}")
        self.qkv = Conv1x1(c, 3 * c, rng)
        self.qkv_dw = DWConv3x3(3 * c, rng)
        self.temperature = ones((heads, 1, 1))
        self.project_out = Conv1x1(c, c, rng)
        self._heads = heads

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.project_out.weight.shape[0]:
            raise ConfigurationError(f"MDTA built for {self.project_out.weight.shape[0]} channels, got {c}")
        heads = self._heads
        qkv = self.qkv_dw(self.qkv(x))

        def head_view(t):
            return ops.reshape(t, (n, heads, c // heads, h * w))

        q = ops.l2_normalize(head_view(ops.slice_channels(qkv, 0, c)), axis=-1)
        k = ops.l2_normalize(head_view(ops.slice_channels(qkv, c, 2 * c)), axis=-1)
        v = head_view(ops.slice_channels(qkv, 2 * c, 3 * c))
        logits = ops.batched_matmul(q, ops.transpose(k, (0, 1, 3, 2)))
        attn = ops.softmax(ops.hadamard(logits, self.temperature), axis=-1)
        out = ops.reshape(ops.batched_matmul(attn, v), (n, c, h, w))
        return self.project_out(out)


class GDFN(Module):
    """Gated depthwise feed-forward: GELU(path1) * path2, then contract."""

    def __init__(self, c: int, expansion: int, rng: np.random.Generator):
        hidden = expansion * c
        self.project_in = Conv1x1(c, 2 * hidden, rng)
        self.dwconv = DWConv3x3(2 * hidden, rng)
        self.project_out = Conv1x1(hidden, c, rng)
        self._hidden = hidden

    def __call__(self, x: Tensor) -> Tensor:
        hd = self._hidden
        u = self.dwconv(self.project_in(x))
        gate = ops.gelu(ops.slice_channels(u, 0, hd))
        return self.project_out(ops.hadamard(gate, ops.slice_channels(u, hd, 2 * hd)))


class RestormerBlock(Module):
    kind = TEACHER

    def __init__(self, c: int, cfg: BlockConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(c, cfg.ln_eps)
        self.attn = MDTA(c, cfg.heads, rng)
        self.norm2 = LayerNorm(c, cfg.ln_eps)
        self.ffn = GDFN(c, cfg.ffn_expansion, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.add(x, self.attn(self.norm1(x)))
        return ops.add(x, self.ffn(self.norm2(x)))


# ------------------------------------------------------------------- surrogate

def scan_order(direction: str, h: int, w: int) -> np.ndarray:
    """Flattening permutation: position t of the sequence reads pixel order[t]."""
    grid = np.arange(h * w).reshape(h, w)
    if direction == "row":
        return grid.reshape(-1)
    if direction == "row_rev":
        return grid.reshape(-1)[::-1].copy()
    if direction == "col":
        return grid.T.reshape(-1)
    if direction == "col_rev":
        return grid.T.reshape(-1)[::-1].copy()
    raise ValueError(f"unknown direction {direction!r}")


def flatten_direction(x: Tensor, direction: str, h: int, w: int) -> Tensor:
    """(n, D, h*w) in raster order -> sequence in the given scan order."""
    return ops.take_last(x, scan_order(direction, h, w))


def unflatten_direction(x: Tensor, direction: str, h: int, w: int) -> Tensor:
    order = scan_order(direction, h, w)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return ops.take_last(x, inv)


class DirectionalSSM(Module):
    """State-space parameters for one scan direction."""

    def __init__(self, d_inner: int, d_state: int, delta_init: float, rng: np.random.Generator):
        rank = max(1, math.ceil(d_inner / 16))
        self.B_proj = uniform(rng, (d_state, d_inner), d_inner)
        self.C_proj = uniform(rng, (d_state, d_inner), d_inner)
        self.dt_down = uniform(rng, (rank, d_inner), d_inner)
        self.dt_up = uniform(rng, (d_inner, rank), rank)
        self.dt_bias = constant((d_inner, 1), math.log(math.expm1(delta_init)))
        self.A_log = Tensor(np.tile(np.log(np.arange(1, d_state + 1, dtype=float)), (d_inner, 1)),
                            requires_grad=True)

    def __call__(self, seq: Tensor) -> Tensor:
        B = ops.batched_matmul(self.B_proj, seq)
        C = ops.batched_matmul(self.C_proj, seq)
        low = ops.batched_matmul(self.dt_down, seq)
        delta = ops.softplus(ops.add(ops.batched_matmul(self.dt_up, low), self.dt_bias))
        A = ops.scale(ops.exp(self.A_log), -1.0)
        return selective_scan(seq, delta, A, B, C)


class ChannelAttention(Module):
    """Squeeze-excite: pool, 1x1 down, SiLU, 1x1 up, sigmoid gate."""

    def __init__(self, c: int, reduction: int, rng: np.random.Generator):
        mid = max(1, c // reduction)
        self.down = Conv1x1(c, mid, rng)
        self.up = Conv1x1(mid, c, rng)

    def weights(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.up(ops.silu(self.down(ops.mean_spatial(x)))))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.hadamard(x, self.weights(x))


class VSSM(Module):
    """Four-direction selective scan branch gated by a SiLU branch."""

    def __init__(self, c: int, cfg: BlockConfig, rng: np.random.Generator):
        d_inner = cfg.ssm_expansion * c
        self.in_proj = Conv1x1(c, d_inner, rng)
        self.dwconv = DWConv3x3(d_inner, rng)
        self.gate = Conv1x1(c, d_inner, rng)
        self.ssm = [DirectionalSSM(d_inner, cfg.d_state, cfg.delta_init, rng) for _ in DIRECTIONS]
        self.out_proj = Conv1x1(d_inner, c, rng)
        self._d_inner = d_inner

    def scan_sum(self, x: Tensor) -> Tensor:
        """Sum of the four directional scans of the conv branch, (n, d_inner, h, w)."""
        n, _, h, w = x.shape
        u = ops.silu(self.dwconv(self.in_proj(x)))
        seq = ops.reshape(u, (n, self._d_inner, h * w))
        total = None
        for direction, ssm in zip(DIRECTIONS, self.ssm):
            y = unflatten_direction(ssm(flatten_direction(seq, direction, h, w)), direction, h, w)
            total = y if total is None else ops.add(total, y)
        return ops.reshape(total, (n, self._d_inner, h, w))

    def __call__(self, x: Tensor) -> Tensor:
        fused = ops.hadamard(self.scan_sum(x), ops.silu(self.gate(x)))
        return self.out_proj(fused)


class MambaBlock(Module):
    """Residual state-space block: ``x + s * CA(vssm(LN(x)))``."""
    kind = SURROGATE

    def __init__(self, c: int, cfg: BlockConfig, rng: np.random.Generator):
        self.norm = LayerNorm(c, cfg.ln_eps)
        self.vssm = VSSM(c, cfg, rng)
        self.ca = ChannelAttention(c, cfg.ca_reduction, rng)
        self.scale = ones((1,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, ops.hadamard(self.ca(self.vssm(self.norm(x))), self.scale))


# ---------------------------------------------------------------------- stages

class Stage(Module):
    """A sequence of blocks at fixed width; one selectable variant of a U-Net stage."""

    def __init__(self, blocks: list[Module], kind: str):
        if not blocks:
            raise ConfigurationError("a stage needs at least one block")
        self.blocks = list(blocks)
        self._kind = kind

    @property
    def kind(self) -> str:
        return self._kind

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    @property
    def teacher_blocks(self) -> int:
        return sum(1 for b in self.blocks if isinstance(b, RestormerBlock))

    @property
    def surrogate_blocks(self) -> int:
        return sum(1 for b in self.blocks if isinstance(b, MambaBlock))

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def make_stage(kind: str, block_count: int, c: int, cfg: BlockConfig, rng: np.random.Generator) -> Stage:
    if block_count < 1:
        raise ConfigurationError(f"block_count must be positive, got {block_count}")
    if kind == TEACHER:
        return Stage([RestormerBlock(c, cfg, rng) for _ in range(block_count)], TEACHER)
    if kind == SURROGATE:
        return Stage([MambaBlock(c, cfg, rng) for _ in range(block_count)], SURROGATE)
    raise ConfigurationError(f"unknown stage kind {kind!r}")


# functional entry points -----------------------------------------------------

def mdta(x: Tensor, params: MDTA) -> Tensor:
    return params(x)


def gdfn(x: Tensor, params: GDFN) -> Tensor:
    return params(x)


def restormer_block(x: Tensor, params: RestormerBlock) -> Tensor:
    return params(x)


def vssm(x: Tensor, params: VSSM) -> Tensor:
    return params(x)


def mamba_block(x: Tensor, params: MambaBlock) -> Tensor:
    return params(x)


def stage_forward(x: Tensor, variant: Stage) -> Tensor:
    return variant(x)
