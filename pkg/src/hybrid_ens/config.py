"""Run configuration: one versioned JSON document drives the whole pipeline."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .blocks import BlockConfig, ConfigurationError
from .distill import DistillHyper
from .search.ens import EnsConfig
from .tasks import TASKS, TaskSpec
from .training import TrainSchedule
from .unet import DEFAULT_STAGES, STAGE_IDS, StageSpec

VERSION = 1

_int = {"type": "integer", "minimum": 0}
_pos = {"type": "integer", "minimum": 1}
_num = {"type": "number"}
_pair_int = {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}
_pair_num = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


_schedule = _obj({
    "phases": {"type": "array", "minItems": 1,
               "items": {"type": "array", "items": _int, "minItems": 3, "maxItems": 3}},
    "lr": {"type": "number", "minimum": 0},
    "optimizer": {"enum": ["sgd", "adam"]},
    "clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
})

SCHEMA = _obj({
    "version": {"const": VERSION},
    "seed": _int,
    "out": {"type": "string"},
    "task": _obj({
        "kind": {"enum": list(TASKS)},
        "size": _pos,
        "sigma": {"type": "number", "minimum": 0},
        "blur_length": _pair_int,
        "streaks": _pair_int,
        "streak_intensity": _pair_num,
    }),
    "data": _obj({"train": _pos, "val": _pos, "test": _pos, "capture": _pos}),
    "model": _obj({
        "base": _pos, "heads": _pos, "ffn_expansion": _pos, "d_state": _pos,
        "ssm_expansion": _pos, "ca_reduction": _pos, "delta_init": {"type": "number", "exclusiveMinimum": 0},
    }),
    "stages": {"type": "array", "minItems": 8, "maxItems": 8, "items": _obj({
        "stage_id": {"enum": list(STAGE_IDS)},
        "teacher_blocks": _pos,
        "surrogate_blocks": {"type": "array", "items": _pos, "minItems": 1},
    }, ("stage_id", "teacher_blocks", "surrogate_blocks"))},
    "teacher": _schedule,
    "distill": _obj({
        "steps": _int, "lr": {"type": "number", "minimum": 0}, "momentum": {"type": "number", "minimum": 0},
        "batch": _pos, "optimizer": {"enum": ["sgd", "adam"]},
        "clip": {"type": ["number", "null"], "exclusiveMinimum": 0}, "eval_pairs": _pos,
    }),
    "search": _obj({
        "initial": _pos, "budget": _pos, "knee_k": _pos, "ref_margin": {"type": "number", "minimum": 0},
        "candidates": _pos, "perturbations": _int, "perturb_sigma": {"type": "number", "minimum": 0},
        "repeat_budget": _int, "gp_restarts": _pos, "refit_every": _pos,
        "free_stages": {"type": "array", "items": {"enum": list(STAGE_IDS)}, "minItems": 1, "uniqueItems": True},
    }),
    "penalty": _obj({"w_teacher": {"type": "number"}, "w_surrogate": {"type": "number"}}),
    "finetune": _schedule,
    "erf": _obj({"probes": _pos, "side": _pos}),
}, ("version",))

DEFAULTS = {
    "version": VERSION,
    "seed": 0,
    "out": "runs",
    "task": {"kind": "denoise", "size": 32, "sigma": 0.1},
    "data": {"train": 512, "val": 64, "test": 64, "capture": 512},
    "model": {"base": 16},
    "teacher": {"phases": [[16, 8, 2000], [24, 4, 2000], [32, 2, 1000]], "lr": 1e-3, "optimizer": "adam"},
    "distill": {"steps": 2000},
    "search": {},
    "penalty": {"w_teacher": 3, "w_surrogate": 1},
    "finetune": {"phases": [[32, 4, 500]], "lr": 2e-4, "optimizer": "adam"},
    "erf": {"probes": 16, "side": 32},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    """Validated configuration with typed accessors for every pipeline component."""

    def __init__(self, raw: dict | None = None):
        raw = {"version": VERSION} if raw is None else raw
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None
        self.data = _merge(DEFAULTS, raw)
        # build everything once so semantic errors surface at load time
        self.task, self.block_config, self.specs = self.task_spec(), self.blocks(), self.stage_specs()
        self.teacher_schedule(), self.finetune_schedule(), self.distill_hyper(), self.ens_config()
        self.free_stage_indices()
        w_t, w_m = self.penalty_weights
        if not w_t > w_m > 0:
            raise ConfigurationError(f"penalty weights need w_teacher > w_surrogate > 0, got ({w_t}, {w_m})")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        return cls(raw)

    def with_overrides(self, **kw) -> "RunConfig":
        raw = {k: v for k, v in self.data.items()}
        raw.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(raw)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=1)

    @property
    def hash(self) -> str:
        """Digest of the effective configuration, excluding the output location."""
        payload = {k: v for k, v in self.data.items() if k != "out"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    @property
    def base(self) -> int:
        return int(self.data["model"]["base"])

    def task_spec(self) -> TaskSpec:
        t = dict(self.data["task"])
        for k in ("blur_length", "streaks", "streak_intensity"):
            if k in t:
                t[k] = tuple(t[k])
        return TaskSpec(**t)

    def blocks(self) -> BlockConfig:
        m = {k: v for k, v in self.data["model"].items() if k != "base"}
        return BlockConfig(**m)

    def stage_specs(self) -> tuple[StageSpec, ...]:
        if "stages" not in self.data:
            return DEFAULT_STAGES
        specs = []
        for default, s in zip(DEFAULT_STAGES, self.data["stages"]):
            if s["stage_id"] != default.stage_id:
                raise ConfigurationError(f"stage order must be {STAGE_IDS}")
            counts = [s["teacher_blocks"], *s["surrogate_blocks"]]
            if counts != sorted(counts, reverse=True):
                raise ConfigurationError(f"stage {default.stage_id}: block counts must be nonincreasing")
            # widths and resolutions are fixed by the U-Net skeleton
            specs.append(StageSpec(default.stage_id, s["teacher_blocks"], tuple(s["surrogate_blocks"]),
                                   default.width_mult, default.downscale))
        return tuple(specs)

    def teacher_schedule(self) -> TrainSchedule:
        return TrainSchedule(**self.data["teacher"])

    def finetune_schedule(self) -> TrainSchedule:
        return TrainSchedule(**self.data["finetune"])

    def distill_hyper(self) -> DistillHyper:
        return DistillHyper(**self.data["distill"])

    def free_stage_indices(self) -> tuple[int, ...]:
        free = self.data["search"].get("free_stages")
        if free is None:
            return tuple(range(len(STAGE_IDS)))
        return tuple(sorted(STAGE_IDS.index(s) for s in free))

    def ens_config(self) -> EnsConfig:
        s = {k: v for k, v in self.data["search"].items() if k != "free_stages"}
        d = len(self.free_stage_indices()) if "free_stages" in self.data["search"] else len(STAGE_IDS)
        s.setdefault("initial", 2 * d + 1)
        return EnsConfig(seed=self.seed, **s)

    @property
    def penalty_weights(self) -> tuple[float, float]:
        p = self.data["penalty"]
        return float(p["w_teacher"]), float(p["w_surrogate"])
