"""Four-level encoder/decoder restoration network assembled from an architecture code."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .blocks import (MIXED, SURROGATE, TEACHER, BlockConfig, ConfigurationError, Conv1x1, Conv3x3,
                     Stage, make_stage)
from .tensor import ops
from .tensor.core import DimensionError, Tensor, no_grad
from .tensor.nn import Module, make_rng

STAGE_IDS = ("E1", "E2", "E3", "B", "D3", "D2", "D1", "R")


class CodeError(ValueError):
    pass


@dataclass(frozen=True)
class StageSpec:
    stage_id: str
    teacher_blocks: int
    surrogate_blocks: tuple[int, ...]
    width_mult: int
    downscale: int

    @property
    def options(self) -> int:
        return 1 + len(self.surrogate_blocks)

    def block_count(self, choice: int) -> int:
        return self.teacher_blocks if choice == 0 else self.surrogate_blocks[choice - 1]


# Teacher depths [4,6,6,8 | 6,6,4,4]; surrogate lists give option counts (3,4,4,5,4,4,3,3).
DEFAULT_STAGES: tuple[StageSpec, ...] = (
    StageSpec("E1", 4, (4, 2), 1, 1),
    StageSpec("E2", 6, (6, 4, 2), 2, 2),
    StageSpec("E3", 6, (6, 4, 2), 4, 4),
    StageSpec("B", 8, (8, 6, 4, 2), 8, 8),
    StageSpec("D3", 6, (6, 4, 2), 4, 4),
    StageSpec("D2", 6, (6, 4, 2), 2, 2),
    StageSpec("D1", 4, (4, 2), 2, 1),
    StageSpec("R", 4, (4, 2), 2, 1),
)


def option_counts(specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    return tuple(s.options for s in specs)


def search_space_size(specs: Sequence[StageSpec] = DEFAULT_STAGES) -> int:
    return math.prod(option_counts(specs))


def enumerate_search_space(specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, Iterator[tuple[int, ...]]]:
    """Number of codes and a lexicographic iterator over all of them."""
    counts = option_counts(specs)
    return math.prod(counts), itertools.product(*(range(k) for k in counts))


def surrogate_tally(specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    return tuple(len(s.surrogate_blocks) for s in specs)


def validate_code(code: Sequence[int], specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    if len(code) != len(specs):
        raise CodeError(f"code has {len(code)} components, expected {len(specs)}")
    out = []
    for i, (z, spec) in enumerate(zip(code, specs)):
        if int(z) != z or not 0 <= z < spec.options:
            raise CodeError(f"component {i} ({spec.stage_id}) = {z} outside [0, {spec.options - 1}]")
        out.append(int(z))
    return tuple(out)


def teacher_code(specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    return (0,) * len(specs)


def smallest_code(specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    return tuple(s.options - 1 for s in specs)


def code_to_json(code: Sequence[int]) -> str:
    return json.dumps([int(z) for z in code])


def code_from_json(text: str, specs: Sequence[StageSpec] = DEFAULT_STAGES) -> tuple[int, ...]:
    return validate_code(json.loads(text), specs)


# ----------------------------------------------------------------- skeleton

class Skeleton(Module):
    """Everything in the network except the eight stages."""

    def __init__(self, base: int, rng: np.random.Generator, in_ch: int = 3):
        c = base
        self.stem = Conv3x3(in_ch, c, rng)
        self.down = [Conv1x1(4 * c, 2 * c, rng), Conv1x1(8 * c, 4 * c, rng), Conv1x1(16 * c, 8 * c, rng)]
        # up[i] maps width w -> 2w so that pixel_shuffle yields w/2
        self.up = [Conv1x1(8 * c, 16 * c, rng), Conv1x1(4 * c, 8 * c, rng), Conv1x1(2 * c, 4 * c, rng)]
        self.fuse = [Conv1x1(8 * c, 4 * c, rng), Conv1x1(4 * c, 2 * c, rng), Conv1x1(2 * c, 2 * c, rng)]
        self.output = Conv3x3(2 * c, in_ch, rng)


class Network(Module):
    def __init__(self, skeleton: Skeleton, stages: Sequence[Stage], code: Sequence[int] | None = None,
                 specs: Sequence[StageSpec] = DEFAULT_STAGES):
        self.skeleton = skeleton
        self.stages = list(stages)
        self._code = tuple(code) if code is not None else None
        self._specs = tuple(specs)

    @property
    def code(self):
        return self._code

    def named_parameters(self, prefix: str = ""):
        yield from self.skeleton.named_parameters(prefix + "skeleton/")
        for i, stage in enumerate(self.stages):
            for j, block in enumerate(stage.blocks):
                yield from block.named_parameters(f"{prefix}stage{i}/block{j}/")

    def forward_trace(self, x: Tensor) -> tuple[Tensor, dict[str, tuple[Tensor, Tensor]]]:
        """Restored image plus (input, output) of every stage."""
        n, _, h, w = x.shape
        if h % 8 or w % 8:
            raise DimensionError(f"spatial dims {(h, w)} must be divisible by 8")
        sk = self.skeleton
        trace: dict[str, tuple[Tensor, Tensor]] = {}

        def run(i, inp):
            out = self.stages[i](inp)
            trace[STAGE_IDS[i]] = (inp, out)
            return out

        f0 = sk.stem(x)
        f1 = run(0, f0)
        f2 = run(1, sk.down[0](ops.pixel_unshuffle(f1)))
        f3 = run(2, sk.down[1](ops.pixel_unshuffle(f2)))
        f4 = run(3, sk.down[2](ops.pixel_unshuffle(f3)))
        d3 = run(4, sk.fuse[0](ops.concat_channels(ops.pixel_shuffle(sk.up[0](f4)), f3)))
        d2 = run(5, sk.fuse[1](ops.concat_channels(ops.pixel_shuffle(sk.up[1](d3)), f2)))
        g1 = run(6, sk.fuse[2](ops.concat_channels(ops.pixel_shuffle(sk.up[2](d2)), f1)))
        r = run(7, g1)
        residual = sk.output(r)
        return ops.add(x, residual), trace

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward_trace(x)[0]


def forward(network: Network, x: Tensor) -> Tensor:
    return network(x)


def stage_width(spec: StageSpec, base: int) -> int:
    return spec.width_mult * base


# ------------------------------------------------------------------ library

@dataclass
class BlockLibrary:
    """Teacher skeleton plus, per stage, the teacher variant and its surrogates."""
    base: int
    block_config: BlockConfig
    skeleton: Skeleton
    variants: dict[str, list[Stage]]
    specs: tuple[StageSpec, ...] = DEFAULT_STAGES
    provenance: dict[str, dict] = field(default_factory=dict)

    def variant(self, stage_id: str, choice: int) -> Stage:
        return self.variants[stage_id][choice]

    def surrogate_tally(self) -> tuple[int, ...]:
        return tuple(len(self.variants[s.stage_id]) - 1 for s in self.specs)

    def is_complete(self) -> bool:
        return all(len(self.variants.get(s.stage_id, ())) == s.options for s in self.specs)

    def teacher_network(self) -> Network:
        return assemble(teacher_code(self.specs), self)

    def named_parameters(self):
        yield from self.skeleton.named_parameters("skeleton/")
        for i, spec in enumerate(self.specs):
            for v, stage in enumerate(self.variants[spec.stage_id]):
                for j, block in enumerate(stage.blocks):
                    yield from block.named_parameters(f"stage{i}/variant{v}/block{j}/")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        for k, p in params.items():
            p.data = np.array(state[k], dtype=np.float64).reshape(p.shape)


def init_library(base: int, seed: int, specs: Sequence[StageSpec] = DEFAULT_STAGES,
                 block_config: BlockConfig | None = None, surrogates: bool = True) -> BlockLibrary:
    """Freshly initialised teacher and (untrained) surrogate variants.

    Each variant draws from its own seeded stream so any one can be rebuilt
    independently of the others.
    """
    cfg = block_config or BlockConfig()
    skeleton = Skeleton(base, make_rng(seed))
    variants: dict[str, list[Stage]] = {}
    for i, spec in enumerate(specs):
        c = stage_width(spec, base)
        stages = [make_stage(TEACHER, spec.teacher_blocks, c, cfg, make_rng(variant_seed(seed, i, 0)))]
        if surrogates:
            for v, count in enumerate(spec.surrogate_blocks, start=1):
                stages.append(make_stage(SURROGATE, count, c, cfg, make_rng(variant_seed(seed, i, v))))
        variants[spec.stage_id] = stages
    return BlockLibrary(base, cfg, skeleton, variants, tuple(specs))


def variant_seed(seed: int, stage_index: int, variant: int) -> int:
    return int(np.random.SeedSequence([seed, stage_index, variant]).generate_state(1, np.uint64)[0])


def assemble(code: Sequence[int], library: BlockLibrary) -> Network:
    """Wire the network selecting variant ``code[i]`` at stage ``i``; parameters are shared."""
    code = validate_code(code, library.specs)
    if not library.is_complete() and any(z > 0 for z in code):
        missing = [s.stage_id for s, z in zip(library.specs, code) if z >= len(library.variants[s.stage_id])]
        if missing:
            raise ConfigurationError(f"library lacks variants for stages {missing}")
    stages = [library.variant(s.stage_id, z) for s, z in zip(library.specs, code)]
    return Network(library.skeleton, stages, code, library.specs)


def describe(network: Network) -> dict:
    stages = []
    for sid, stage in zip(STAGE_IDS, network.stages):
        stages.append({
            "stage": sid,
            "kind": stage.kind,
            "block_count": stage.block_count,
            "teacher_blocks": stage.teacher_blocks,
            "surrogate_blocks": stage.surrogate_blocks,
            "parameters": stage.num_parameters(),
        })
    return {
        "code": list(network.code) if network.code is not None else None,
        "stages": stages,
        "total_blocks": sum(s["block_count"] for s in stages),
        "parameters": network.num_parameters(),
    }


def equal_split_network(library: BlockLibrary, half_stages: dict[str, Stage]) -> Network:
    """Per stage: the first ceil(n/2) teacher blocks followed by a surrogate half-stage."""
    stages = []
    for spec in library.specs:
        teacher = library.variant(spec.stage_id, 0)
        keep = math.ceil(spec.teacher_blocks / 2)
        blocks = teacher.blocks[:keep] + half_stages[spec.stage_id].blocks
        stages.append(Stage(blocks, MIXED))
    return Network(library.skeleton, stages, None, library.specs)


def capture_features(network: Network, inputs: Sequence[np.ndarray] | np.ndarray, stage_id: str,
                     batch: int = 16) -> list[tuple[np.ndarray, np.ndarray]]:
    """(stage input, stage output) pairs recorded during inference passes."""
    if stage_id not in STAGE_IDS:
        raise ConfigurationError(f"unknown stage {stage_id!r}")
    arr = np.asarray(inputs, dtype=np.float64)
    pairs = []
    with no_grad():
        for start in range(0, len(arr), batch):
            _, trace = network.forward_trace(Tensor(arr[start:start + batch]))
            inp, out = trace[stage_id]
            for k in range(inp.shape[0]):
                pairs.append((inp.data[k:k + 1].copy(), out.data[k:k + 1].copy()))
    return pairs
