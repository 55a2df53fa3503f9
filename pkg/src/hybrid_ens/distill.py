"""Feature distillation of surrogate stages onto their teacher stages."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .blocks import SURROGATE, ConfigurationError, Stage, make_stage
from .tensor import checkpoint, ops
from .tensor.core import ContractError, Tensor, backward, no_grad
from .tensor.nn import cosine_lr, make_optimizer, make_rng
from .training import TrainingError
from .unet import STAGE_IDS, BlockLibrary, Network, variant_seed

log = logging.getLogger(__name__)


class DistillationError(RuntimeError):
    def __init__(self, failures: dict[str, str]):
        super().__init__("distillation failed for " + ", ".join(sorted(failures)))
        self.failures = failures


@dataclass(frozen=True)
class DistillHyper:
    steps: int = 2000
    lr: float = 0.01
    momentum: float = 0.9
    batch: int = 8
    optimizer: str = "adam"
    clip: float | None = 1.0
    eval_pairs: int = 128

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or self.lr < 0:
            raise ConfigurationError("distillation steps/batch/lr out of range")


@dataclass
class DistillReport:
    stage_id: str
    variant: int
    initial_loss: float
    final_loss: float
    steps: int
    seed: int
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def stage_pairs(network: Network, inputs: np.ndarray, stage_id: str, batch: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (stage input, stage output) activations over ``inputs``, computed without gradients."""
    if stage_id not in STAGE_IDS:
        raise ConfigurationError(f"unknown stage {stage_id!r}")
    ins, outs = [], []
    with no_grad():
        for s in range(0, len(inputs), batch):
            _, trace = network.forward_trace(Tensor(np.asarray(inputs[s:s + batch], dtype=float)))
            i, o = trace[stage_id]
            ins.append(i.data)
            outs.append(o.data)
    return np.concatenate(ins), np.concatenate(outs)


def all_stage_pairs(network: Network, inputs: np.ndarray, batch: int = 16) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Like :func:`stage_pairs` for every stage from a single set of passes."""
    acc: dict[str, tuple[list, list]] = {s: ([], []) for s in STAGE_IDS}
    with no_grad():
        for s in range(0, len(inputs), batch):
            _, trace = network.forward_trace(Tensor(np.asarray(inputs[s:s + batch], dtype=float)))
            for sid, (i, o) in trace.items():
                acc[sid][0].append(i.data)
                acc[sid][1].append(o.data)
    return {sid: (np.concatenate(a), np.concatenate(b)) for sid, (a, b) in acc.items()}


def prefix_pairs(teacher_stage: Stage, inputs: np.ndarray, outputs: np.ndarray, keep: int,
                 batch: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Activation after the first ``keep`` teacher blocks, paired with the stage output."""
    mids = []
    with no_grad():
        for s in range(0, len(inputs), batch):
            x = Tensor(inputs[s:s + batch])
            for block in teacher_stage.blocks[:keep]:
                x = block(x)
            mids.append(x.data)
    return np.concatenate(mids), outputs


def _mse(stage: Stage, I: np.ndarray, O: np.ndarray, batch: int = 32) -> float:
    total = 0.0
    with no_grad():
        for s in range(0, len(I), batch):
            out = stage(Tensor(I[s:s + batch])).data
            total += float(np.sum((out - O[s:s + batch]) ** 2))
    return total / O.size


def distill_stage(surrogate: Stage, inputs: np.ndarray, targets: np.ndarray, hyper: DistillHyper,
                  seed: int, stage_id: str = "", variant: int = 0) -> DistillReport:
    """Fit ``surrogate`` to the teacher map by minimising the mean squared feature error.

    Losses in the report are measured on a fixed subset of the pairs. If
    training ends worse than it started the initial parameters are restored,
    so the final loss never exceeds the initial one.
    """
    if len(inputs) == 0 or inputs.shape[0] != targets.shape[0]:
        raise ConfigurationError("distillation needs a nonempty, aligned set of pairs")
    start = time.perf_counter()
    rng = make_rng(seed)
    n_eval = min(hyper.eval_pairs, len(inputs))
    eval_idx = np.sort(rng.choice(len(inputs), size=n_eval, replace=False))
    I_eval, O_eval = inputs[eval_idx], targets[eval_idx]
    params = surrogate.parameters()
    initial_state = [p.data.copy() for p in params]
    initial = _mse(surrogate, I_eval, O_eval)
    opt = make_optimizer(hyper.optimizer, params, hyper.lr, momentum=hyper.momentum, clip=hyper.clip)
    last = initial
    for step in range(hyper.steps):
        idx = rng.integers(0, len(inputs), size=min(hyper.batch, len(inputs)))
        opt.zero_grad()
        try:
            loss = ops.mse_loss(surrogate(Tensor(inputs[idx])), targets[idx])
            value = loss.item()
        except ContractError:  # e.g. step sizes collapsed to zero
            value = math.nan
        if not math.isfinite(value):
            for p, d in zip(params, initial_state):
                p.data = d
            raise TrainingError(f"distillation of {stage_id}/{variant} diverged at step {step}", last, step=step)
        last = value
        backward(loss)
        opt.step(cosine_lr(hyper.lr, step, hyper.steps))
    try:
        final = _mse(surrogate, I_eval, O_eval)
    except ContractError:
        final = math.nan
    if not math.isfinite(final) or final > initial:
        for p, d in zip(params, initial_state):
            p.data = d
        final = initial
    return DistillReport(stage_id, variant, initial, final, hyper.steps, int(seed),
                         time.perf_counter() - start)


@dataclass
class DistillJob:
    stage: Stage
    inputs: np.ndarray
    targets: np.ndarray
    seed: int
    stage_id: str
    variant: int


def _run(args):
    job, hyper = args
    try:
        report = distill_stage(job.stage, job.inputs, job.targets, hyper, job.seed, job.stage_id, job.variant)
    except Exception as exc:  # reported back to the parent
        return None, None, f"{type(exc).__name__}: {exc}"
    return job.stage.state_dict(), report, None


def run_jobs(jobs: Sequence[DistillJob], hyper: DistillHyper, workers: int = 1) -> list[DistillReport]:
    """Distil every job's stage in place; the result does not depend on ``workers``."""
    args = [(j, hyper) for j in jobs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run, args))
    else:
        results = [_run(a) for a in args]
    failures, reports = {}, []
    for job, (state, report, err) in zip(jobs, results):
        if err is not None:
            failures[f"{job.stage_id}/{job.variant}"] = err
            continue
        job.stage.load_state_dict(state)
        reports.append(report)
    if failures:
        raise DistillationError(failures)
    return reports


def distill_all(library: BlockLibrary, pairs: dict[str, tuple[np.ndarray, np.ndarray]], hyper: DistillHyper,
                seed: int, workers: int = 1, stages: Sequence[str] | None = None) -> list[DistillReport]:
    """Distil every surrogate variant in ``library`` in place.

    Each variant has its own seed derived from (seed, stage, variant), so the
    outcome does not depend on ``workers``.
    """
    jobs = []
    for i, spec in enumerate(library.specs):
        if stages is not None and spec.stage_id not in stages:
            continue
        I, O = pairs[spec.stage_id]
        for v in range(1, len(library.variants[spec.stage_id])):
            jobs.append(DistillJob(library.variant(spec.stage_id, v), I, O,
                                   variant_seed(seed, i, v) & 0x7FFFFFFF, spec.stage_id, v))
    reports = run_jobs(jobs, hyper, workers)
    for r in reports:
        library.provenance[f"{r.stage_id}/{r.variant}"] = {"final_loss": r.final_loss, "seed": r.seed}
    return reports


# ------------------------------------------------------- equal-split halves

HALF = -1  # variant index used in reports for half-stage surrogates


def half_keep(spec) -> int:
    """Teacher blocks kept by the equal split; odd counts round up."""
    return math.ceil(spec.teacher_blocks / 2)


def init_half_stages(library: BlockLibrary, seed: int) -> dict[str, Stage]:
    """Surrogate stages replacing the second half of each teacher stage."""
    half = {}
    for i, spec in enumerate(library.specs):
        count = spec.teacher_blocks - half_keep(spec)
        if count < 1:
            raise ConfigurationError(f"stage {spec.stage_id} has too few teacher blocks to split")
        c = spec.width_mult * library.base
        rng = make_rng(variant_seed(seed, i, 1000))
        half[spec.stage_id] = make_stage(SURROGATE, count, c, library.block_config, rng)
    return half


def distill_half_stages(library: BlockLibrary, half: dict[str, Stage],
                        pairs: dict[str, tuple[np.ndarray, np.ndarray]], hyper: DistillHyper, seed: int,
                        workers: int = 1, stages: Sequence[str] | None = None) -> list[DistillReport]:
    """Fit each half stage to map the teacher's mid-stage activation onto the stage output."""
    jobs = []
    for i, spec in enumerate(library.specs):
        if stages is not None and spec.stage_id not in stages:
            continue
        I, O = pairs[spec.stage_id]
        mid, target = prefix_pairs(library.variant(spec.stage_id, 0), I, O, half_keep(spec))
        jobs.append(DistillJob(half[spec.stage_id], mid, target, variant_seed(seed, i, 1000) & 0x7FFFFFFF,
                               spec.stage_id, HALF))
    return run_jobs(jobs, hyper, workers)


# ------------------------------------------------------------------ storage

def save_surrogates(library: BlockLibrary, directory, stages: Sequence[str] | None = None) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for spec in library.specs:
        if stages is not None and spec.stage_id not in stages:
            continue
        for v in range(1, len(library.variants[spec.stage_id])):
            path = d / f"surrogate_{spec.stage_id}_{v}.bin"
            checkpoint.save(path, library.variant(spec.stage_id, v).state_dict())
            paths.append(path)
    return paths


def load_surrogates(library: BlockLibrary, directory, stages: Sequence[str] | None = None) -> None:
    d = Path(directory)
    for spec in library.specs:
        if stages is not None and spec.stage_id not in stages:
            continue
        for v in range(1, len(library.variants[spec.stage_id])):
            library.variant(spec.stage_id, v).load_state_dict(
                checkpoint.load(d / f"surrogate_{spec.stage_id}_{v}.bin"))


def save_half_stages(half: dict[str, Stage], directory, stages: Sequence[str] | None = None) -> None:
    for sid, stage in half.items():
        if stages is not None and sid not in stages:
            continue
        checkpoint.save(Path(directory) / f"half_{sid}.bin", stage.state_dict())


def load_half_stages(half: dict[str, Stage], directory, stages: Sequence[str] | None = None) -> None:
    for sid, stage in half.items():
        if stages is not None and sid not in stages:
            continue
        stage.load_state_dict(checkpoint.load(Path(directory) / f"half_{sid}.bin"))


def append_reports(path, reports: Sequence[DistillReport]) -> None:
    with open(path, "a") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
