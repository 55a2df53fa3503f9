"""Bi-objective Bayesian optimisation over architecture codes."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from ..blocks import ConfigurationError
from ..unet import DEFAULT_STAGES, StageSpec
from .ehvi import ehvi
from .gp import GPModel, gp_condition, gp_fit
from .pareto import ParetoArchive, knee_select
from .space import decode, decode_many

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    def __init__(self, message: str, history: list | None = None):
        super().__init__(message)
        self.history = history or []


@dataclass
class EnsConfig:
    initial: int = 17
    budget: int = 500
    knee_k: int = 5
    ref_margin: float = 0.1
    candidates: int = 4096
    perturbations: int = 32
    perturb_sigma: float = 0.05
    repeat_budget: int = 0
    gp_restarts: int = 4
    refit_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.initial < 1 or self.budget < self.initial:
            raise ConfigurationError(f"need budget >= initial >= 1, got {self.budget}, {self.initial}")
        if self.candidates < 1 or self.knee_k < 1:
            raise ConfigurationError("candidate and knee counts must be positive")
        if self.ref_margin <= 0:
            raise ConfigurationError("reference margin must be positive")

    @classmethod
    def for_dimension(cls, d: int, **kw) -> "EnsConfig":
        return cls(initial=2 * d + 1, **kw)


@dataclass
class Observation:
    iteration: int
    x: np.ndarray
    z: tuple[int, ...]
    f1: float
    f2: float
    cached: bool = False

    def to_json(self) -> dict:
        return {"iteration": self.iteration, "x": [float(v) for v in self.x], "z": list(self.z),
                "psnr_diff_db": self.f1, "penalty": self.f2}


@dataclass
class SearchResult:
    history: list[Observation]
    front: list[Observation]
    knee: list[Observation]
    ref_point: tuple[float, float]
    fits: list[dict] = field(default_factory=list)

    def objectives(self) -> np.ndarray:
        return np.array([(o.f1, o.f2) for o in self.history])


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_history_csv(path, history: Sequence[Observation]) -> None:
    d = len(history[0].x) if history else 8
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter"] + [f"x{i + 1}" for i in range(d)] + [f"z{i + 1}" for i in range(d)]
                   + ["psnr_diff_db", "penalty"])
        for o in history:
            w.writerow([o.iteration] + [fmt(v) for v in o.x] + list(o.z) + [fmt(o.f1), fmt(o.f2)])


def read_history_csv(path) -> list[Observation]:
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, rows = rows[0], rows[1:]
    d = sum(1 for h in head if h.startswith("x"))
    for r in rows:
        out.append(Observation(int(r[0]), np.array([float(v) for v in r[1:1 + d]]),
                               tuple(int(v) for v in r[1 + d:1 + 2 * d]), float(r[-2]), float(r[-1])))
    return out


def _json_float(v):
    # repr of a Python float is the shortest round-tripping form
    return float(fmt(v))


def write_front_json(path, result: SearchResult) -> None:
    payload = {
        "ref_point": [_json_float(v) for v in result.ref_point],
        "front": [o.to_json() for o in result.front],
        "knee": [o.to_json() for o in result.knee],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def reference_point(F: np.ndarray, margin: float = 0.1) -> np.ndarray:
    """Componentwise max plus ``margin`` times the observed range."""
    F = np.asarray(F, dtype=float).reshape(-1, 2)
    hi, lo = F.max(axis=0), F.min(axis=0)
    span = hi - lo
    span = np.where(span > 0, span, np.maximum(np.abs(hi), 1.0))
    return hi + margin * span


def initial_design(n: int, d: int, seed: int) -> np.ndarray:
    return qmc.Halton(d, scramble=True, seed=seed).random(n)


def candidate_pool(front_x: Sequence[np.ndarray], d: int, config: EnsConfig,
                   rng: np.random.Generator) -> np.ndarray:
    sobol = qmc.Sobol(d, scramble=True, seed=rng.integers(2**63))
    m = int(math.log2(config.candidates))
    pool = [sobol.random_base2(m) if 2**m == config.candidates else sobol.random(config.candidates)]
    for x in front_x:
        pool.append(np.clip(rng.normal(x, config.perturb_sigma, size=(config.perturbations, d)), 0.0, 1.0))
    return np.vstack(pool)


def select_candidate(pool: np.ndarray, scores: np.ndarray) -> np.ndarray:
    return pool[int(np.argmax(scores))]


def propose_next(models: tuple[GPModel, GPModel], front: ParetoArchive, config: EnsConfig,
                 rng: np.random.Generator, ref: np.ndarray, specs: Sequence[StageSpec] = DEFAULT_STAGES,
                 seen: dict | None = None) -> np.ndarray:
    """EHVI argmax over quasi-random candidates plus perturbations of the front's inputs.

    Candidates whose code has already been evaluated more than
    ``config.repeat_budget`` extra times are dropped, unless that empties the pool.
    """
    d = len(specs)
    pool = candidate_pool([o.x for o in front], d, config, rng)
    if seen:
        codes = decode_many(pool, specs)
        fresh = np.array([seen.get(tuple(c), 0) <= config.repeat_budget for c in codes])
        if fresh.any():
            pool = pool[fresh]
    m1, v1 = models[0].predict(pool)
    m2, v2 = models[1].predict(pool)
    scores = ehvi(m1, v1, m2, v2, front.objectives(), ref)
    return select_candidate(pool, scores)


def run_ens(objective: Callable[[tuple[int, ...]], tuple[float, float]], config: EnsConfig | None = None,
            specs: Sequence[StageSpec] = DEFAULT_STAGES, history_path=None,
            progress: Callable[[Observation], None] | None = None) -> SearchResult:
    """Initial space-filling design, then fit / propose / evaluate until the budget is spent.

    ``objective(z)`` returns ``(psnr_difference, penalty)``. Codes seen before
    reuse their cached values but still consume one evaluation.
    """
    config = config or EnsConfig()
    d = len(specs)
    rng = np.random.default_rng(config.seed)
    cache: dict[tuple[int, ...], tuple[float, float]] = {}
    seen: dict[tuple[int, ...], int] = {}
    history: list[Observation] = []
    archive = ParetoArchive()
    fits: list[dict] = []

    def evaluate(x: np.ndarray) -> None:
        z = decode(x, specs)
        cached = z in cache
        if not cached:
            try:
                f1, f2 = objective(z)
            except Exception as exc:
                if history_path is not None:
                    write_history_csv(history_path, history)
                raise SearchError(f"evaluation failed for code {list(z)}: {exc}", history) from exc
            if not (math.isfinite(f1) and math.isfinite(f2)):
                if history_path is not None:
                    write_history_csv(history_path, history)
                raise SearchError(f"non-finite objectives {f1}, {f2} for code {list(z)}", history)
            cache[z] = (float(f1), float(f2))
        seen[z] = seen.get(z, 0) + 1
        f1, f2 = cache[z]
        obs = Observation(len(history), np.asarray(x, dtype=float), z, f1, f2, cached)
        history.append(obs)
        archive.update(obs)
        if progress is not None:
            progress(obs)

    for x in initial_design(config.initial, d, config.seed):
        evaluate(x)

    theta = [None, None]
    models: list[GPModel | None] = [None, None]
    step = 0
    while len(history) < config.budget:
        X = np.array([o.x for o in history])
        F = np.array([(o.f1, o.f2) for o in history])
        full = step % config.refit_every == 0
        for j in range(2):
            if full or theta[j] is None:
                models[j] = gp_fit(X, F[:, j], restarts=config.gp_restarts, rng=rng, warm_start=theta[j])
                theta[j] = models[j].hyperparameters
            else:
                h = models[j]
                models[j] = gp_condition(X, F[:, j], h.signal, h.lengthscales, h.noise)
        if full:
            fits.append({"iteration": len(history),
                         "theta": [[float(v) for v in t] for t in theta]})
        ref = reference_point(F, config.ref_margin)
        x = propose_next((models[0], models[1]), archive, config, rng, ref, specs, seen)
        evaluate(x)
        step += 1

    F = np.array([(o.f1, o.f2) for o in history])
    front = sorted(archive.members, key=lambda o: (o.f1, o.f2))
    knee = knee_select(front, config.knee_k)
    result = SearchResult(history, front, knee, tuple(float(v) for v in reference_point(F, config.ref_margin)), fits)
    if history_path is not None:
        write_history_csv(history_path, history)
    return result

