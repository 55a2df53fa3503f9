"""End-to-end workflow over a run directory keyed by the configuration hash.

Each public method of :class:`Pipeline` is one CLI command. Commands read
their inputs from artifacts written by earlier commands and fail with
:class:`PipelineError` when those are missing.
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from . import distill as fwkd
from .blocks import ConfigurationError
from .config import RunConfig
from .metrics import batch_psnr, erf_map, erf_mass_within
from .search import (EnsConfig, embed, make_objective, network_penalty, penalty, run_ens,
                     sub_specs, write_front_json)
from .tasks import generate_dataset, load_dataset, random_crops, save_dataset, task_manifest
from .tensor import checkpoint
from .training import EvalSet, evaluate, train
from .unet import (STAGE_IDS, BlockLibrary, Network, assemble, describe, equal_split_network, init_library,
                   validate_code)

log = logging.getLogger(__name__)

MODES = ("hybrid", "no_distill", "random_arch", "equal_split")


class PipelineError(RuntimeError):
    pass


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _code_tag(code: Sequence[int]) -> str:
    return "".join(str(int(z)) for z in code)


def random_code(seed: int, draw: int, specs) -> tuple[int, ...]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7, draw]))
    return tuple(int(rng.integers(0, s.options)) for s in specs)


class Pipeline:
    def __init__(self, config: RunConfig, out=None, workers: int = 1):
        self.cfg = config
        self.hash = config.hash
        self.dir = Path(out if out is not None else config.out) / f"run-{self.hash}"
        self.workers = max(1, int(workers))
        self._library: BlockLibrary | None = None

    # ------------------------------------------------------------- plumbing

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def write_json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(dict(payload, config_hash=self.hash), indent=1, sort_keys=True))
        return p

    def read_json(self, name: str) -> dict:
        p = self.dir / name
        if not p.exists():
            raise PipelineError(f"missing artifact {p}")
        return json.loads(p.read_text())

    def _require(self, name: str, hint: str) -> Path:
        p = self.dir / name
        if not p.exists():
            raise PipelineError(f"missing artifact {p}; run `{hint}` first")
        return p

    # ----------------------------------------------------------------- data

    def gen_data(self) -> dict:
        c = self.cfg
        sizes = c.data["data"]
        out = {}
        for split in ("train", "val", "test"):
            deg, clean = generate_dataset(c.task, split, sizes[split], c.seed)
            save_dataset(self.dir / "data", split, deg, clean, task_manifest(c.task, split, sizes[split], c.seed))
            out[split] = {"n": len(deg), "input_psnr": _input_psnr(deg, clean)}
        (self.dir / "config.json").write_text(c.to_json())
        self.write_json("data.json", out)
        return out

    def dataset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        self._require(f"data/{split}.json", "gen-data")
        deg, clean, _ = load_dataset(self.dir / "data", split)
        return deg, clean

    def eval_set(self, split: str = "val") -> EvalSet:
        deg, clean = self.dataset(split)
        return EvalSet(deg, clean, {"split": split})

    def capture_inputs(self) -> np.ndarray:
        """Degraded crops at the first training patch size."""
        deg, clean = self.dataset("train")
        patch = min(self.cfg.teacher_schedule().phases[0][0], deg.shape[-1])
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 11]))
        x, _ = random_crops(rng, deg, clean, self.cfg.data["data"]["capture"], patch)
        return x

    # -------------------------------------------------------------- teacher

    def fresh_library(self) -> BlockLibrary:
        c = self.cfg
        return init_library(c.base, c.seed, c.specs, c.block_config)

    def train_teacher(self, callback=None) -> dict:
        lib = self.fresh_library()
        net = lib.teacher_network()
        deg, clean = self.dataset("train")
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 21]))
        curve = train(net, deg, clean, self.cfg.teacher_schedule(), rng, callback=callback)
        checkpoint.save(self.path("teacher.bin"), net.state_dict())
        _write_csv(self.path("teacher_curve.csv"), ("step", "loss"), enumerate(curve))
        val = self.eval_set("val")
        metrics = evaluate(net, val.degraded, val.clean)
        summary = {"val": metrics, "input_psnr": _input_psnr(val.degraded, val.clean),
                   "steps": len(curve), "final_loss": curve[-1] if curve else None,
                   "parameters": net.num_parameters()}
        self.write_json("teacher.json", summary)
        self._library = None
        return summary

    def library(self, distilled: bool = True) -> BlockLibrary:
        """Trained teacher plus surrogates (distilled or at their initialisation)."""
        if distilled and self._library is not None:
            return self._library
        lib = self.fresh_library()
        lib.teacher_network().load_state_dict(checkpoint.load(self._require("teacher.bin", "train-teacher")))
        if distilled:
            self._require("surrogate_E1_1.bin", "distill")
            fwkd.load_surrogates(lib, self.dir)
            self._library = lib
        return lib

    def half_stages(self, distilled: bool = True):
        lib = self.library(distilled)
        half = fwkd.init_half_stages(lib, self.cfg.seed)
        if distilled:
            self._require("half_E1.bin", "distill")
            fwkd.load_half_stages(half, self.dir)
        return half

    # ---------------------------------------------------------- distillation

    def distill(self, stages: Sequence[str] | None = None, equal_split: bool = True) -> dict:
        """Distil all surrogates, or only those of ``stages`` keeping the others already on disk."""
        lib = self.library(distilled=False)
        partial = stages is not None and (self.dir / "surrogate_E1_1.bin").exists()
        keep = [s for s in STAGE_IDS if stages is None or s not in stages]
        if partial:
            fwkd.load_surrogates(lib, self.dir, keep)
        pairs = fwkd.all_stage_pairs(lib.teacher_network(), self.capture_inputs())
        hyper = self.cfg.distill_hyper()
        reports = fwkd.distill_all(lib, pairs, hyper, self.cfg.seed, self.workers, stages)
        fwkd.save_surrogates(lib, self.dir, stages if partial else None)
        if equal_split:
            half = fwkd.init_half_stages(lib, self.cfg.seed)
            halves_on_disk = partial and (self.dir / "half_E1.bin").exists()
            if halves_on_disk:
                fwkd.load_half_stages(half, self.dir, keep)
            reports += fwkd.distill_half_stages(lib, half, pairs, hyper, self.cfg.seed, self.workers, stages)
            fwkd.save_half_stages(half, self.dir, stages if halves_on_disk else None)
        log_path = self.path("distill_reports.jsonl")
        if not partial:
            log_path.write_text("")
        fwkd.append_reports(log_path, reports)
        self._library = lib
        summary = {"surrogates": sum(r.variant > 0 for r in reports),
                   "tally": list(lib.surrogate_tally()),
                   "reports": [{"stage": r.stage_id, "variant": r.variant, "initial_loss": r.initial_loss,
                                "final_loss": r.final_loss} for r in reports]}
        self.write_json("distill.json", summary)
        return summary

    # --------------------------------------------------------------- search

    def search(self, budget: int | None = None, progress=None) -> dict:
        c = self.cfg
        lib = self.library()
        ens = c.ens_config()
        if budget is not None:
            ens = EnsConfig(**{**ens.__dict__, "budget": budget, "initial": min(ens.initial, budget)})
        w_t, w_m = c.penalty_weights
        objective = make_objective(lib, self.eval_set("val"), w_teacher=w_t, w_surrogate=w_m)
        free = c.free_stage_indices()
        specs = sub_specs(free, c.specs)
        d = len(c.specs)

        def sub_objective(z):
            return objective(embed(z, free, d))

        result = run_ens(sub_objective, ens, specs, history_path=self.path("history.csv"), progress=progress)
        write_front_json(self.path("front.json"), result)
        knee = [{"code": list(embed(o.z, free, d)), "psnr_diff_db": o.f1, "penalty": o.f2} for o in result.knee]
        front = [{"code": list(embed(o.z, free, d)), "psnr_diff_db": o.f1, "penalty": o.f2} for o in result.front]
        summary = {"teacher_val_psnr": objective.teacher_psnr, "evaluations": len(result.history),
                   "initial": ens.initial, "unique_codes": len({o.z for o in result.history}),
                   "front": front, "knee": knee, "ref_point": list(result.ref_point)}
        self.write_json("knee.json", summary)
        self.last_search = result
        return summary

    def knee_codes(self) -> list[tuple[int, ...]]:
        return [tuple(k["code"]) for k in self.read_json("knee.json")["knee"]]

    # ------------------------------------------------------------- networks

    def build(self, mode: str = "hybrid", code: Sequence[int] | None = None) -> tuple[Network, float]:
        """Network for ``mode`` together with its penalty."""
        w_t, w_m = self.cfg.penalty_weights
        if mode == "equal_split":
            net = equal_split_network(self.library(), self.half_stages())
            return net, network_penalty(net.stages, w_t, w_m)
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")
        code = validate_code(code, self.cfg.specs)
        lib = self.library(distilled=(mode != "no_distill"))
        return assemble(code, lib), penalty(code, self.cfg.specs, w_t, w_m)

    def finetune(self, code: Sequence[int] | None = None, mode: str = "hybrid", draw: int = 0,
                 label: str | None = None) -> dict:
        """Fine-tune a copy of the chosen network end to end and record before/after metrics."""
        if mode == "random_arch":
            code = random_code(self.cfg.seed, draw, self.cfg.specs)
        elif mode != "equal_split" and code is None:
            code = self.knee_codes()[0]
        net, pen = self.build(mode, code)
        net = net.clone()
        if label is None:
            label = "equal-split" if mode == "equal_split" else f"{mode.replace('_', '-')}-{_code_tag(code)}"
        val = self.eval_set("val")
        before = evaluate(net, val.degraded, val.clean)
        deg, clean = self.dataset("train")
        # every fine-tune sees the same crop sequence
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 31]))
        curve = train(net, deg, clean, self.cfg.finetune_schedule(), rng)
        after = evaluate(net, val.degraded, val.clean)
        test = self.eval_set("test")
        checkpoint.save(self.path(f"finetune_{label}.bin"), net.state_dict())
        _write_csv(self.path(f"finetune_{label}_curve.csv"), ("step", "loss"), enumerate(curve))
        summary = {"label": label, "mode": mode, "code": list(code) if code is not None else None,
                   "penalty": pen, "val_before": before, "val_after": after,
                   "test": evaluate(net, test.degraded, test.clean), "steps": len(curve),
                   "architecture": describe(net)}
        self.write_json(f"finetune_{label}.json", summary)
        return summary

    def load_network(self, name: str) -> Network:
        """``teacher`` or the label of a fine-tuned checkpoint."""
        if name == "teacher":
            return self.library(distilled=False).teacher_network()
        meta = self.read_json(f"finetune_{name}.json")
        net, _ = self.build(meta["mode"] if meta["mode"] == "equal_split" else "hybrid", meta["code"])
        net = net.clone()
        net.load_state_dict(checkpoint.load(self._require(f"finetune_{name}.bin", "finetune")))
        return net

    def evaluate(self, name: str = "teacher", split: str = "test") -> dict:
        net = self.load_network(name)
        es = self.eval_set(split)
        metrics = evaluate(net, es.degraded, es.clean)
        metrics["input_psnr"] = _input_psnr(es.degraded, es.clean)
        _write_csv(self.path(f"evaluate_{name}_{split}.csv"), ("metric", "value"), sorted(metrics.items()))
        self.write_json(f"evaluate_{name}_{split}.json", {"network": name, "split": split, **metrics})
        return metrics

    # ------------------------------------------------------------------ ERF

    def erf_probes(self, stage_id: str) -> np.ndarray:
        """Teacher activations entering ``stage_id``, at ``side`` x ``side`` resolution."""
        c = self.cfg
        spec = c.specs[STAGE_IDS.index(stage_id)]
        side, n = c.data["erf"]["side"], c.data["erf"]["probes"]
        size = side * spec.downscale
        task = type(c.task)(**{**c.task.__dict__, "size": size})
        deg, _ = generate_dataset(task, "test", n, c.seed + 1)
        ins, _ = fwkd.stage_pairs(self.library(distilled=False).teacher_network(), deg, stage_id)
        return ins

    def erf(self, stage_id: str, variant: int = 1) -> dict:
        """ERF of a distilled surrogate stage next to its undistilled twin."""
        if stage_id not in STAGE_IDS:
            raise ConfigurationError(f"unknown stage {stage_id!r}")
        probes = self.erf_probes(stage_id)
        side = probes.shape[-1]
        radius = side / 4
        out = {"stage": stage_id, "variant": variant, "radius": radius, "probes": len(probes)}
        for tag, lib in (("distilled", self.library(True)), ("initial", self.library(False))):
            stage = lib.variant(stage_id, variant)
            m = erf_map(stage, probes)
            _write_csv(self.path(f"erf_{stage_id}_{variant}_{tag}.csv"), [f"c{j}" for j in range(side)],
                       ([repr(float(v)) for v in row] for row in m))
            out[f"mass_{tag}"] = erf_mass_within(m, radius)
            out[f"map_{tag}"] = m
        self.write_json(f"erf_{stage_id}_{variant}.json",
                        {k: v for k, v in out.items() if not k.startswith("map_")})
        return out

    # --------------------------------------------------------------- report

    def report(self) -> dict:
        if not self.dir.exists():
            raise PipelineError(f"run directory {self.dir} does not exist")
        parts = {}
        for p in sorted(self.dir.glob("*.json")):
            if p.name != "report.json":
                parts[p.stem] = json.loads(p.read_text())
        plots = self.dir / "plots"
        plots.mkdir(exist_ok=True)
        hist = self.dir / "history.csv"
        if hist.exists():
            with open(hist) as fh:
                rows = list(csv.DictReader(fh))
            _write_dat(plots / "pareto_history.dat", "psnr_diff_db penalty",
                       ((r["psnr_diff_db"], r["penalty"]) for r in rows))
            if "knee" in parts:
                _write_dat(plots / "pareto_front.dat", "psnr_diff_db penalty",
                           ((repr(f["psnr_diff_db"]), repr(f["penalty"])) for f in parts["knee"]["front"]))
        for curve in sorted(self.dir.glob("*_curve.csv")):
            with open(curve) as fh:
                rows = list(csv.reader(fh))[1:]
            _write_dat(plots / (curve.stem + ".dat"), "step loss", rows)
        for grid in sorted(self.dir.glob("erf_*.csv")):
            with open(grid) as fh:
                rows = list(csv.reader(fh))[1:]
            _write_dat(plots / (grid.stem + ".dat"), "matrix (rows = y, columns = x)", rows)
        report = {"run": self.dir.name, "parts": parts,
                  "plots": sorted(p.name for p in plots.glob("*.dat"))}
        self.write_json("report.json", report)
        return report


def _write_dat(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for r in rows:
            fh.write(" ".join(str(v) for v in r) + "\n")


def _input_psnr(degraded, clean) -> float:
    return batch_psnr(degraded, clean)


def erf_stage_masses(pipe: Pipeline, variant: int = 1) -> dict[str, tuple[float, float]]:
    out = {}
    for sid in STAGE_IDS:
        r = pipe.erf(sid, variant)
        out[sid] = (r["mass_distilled"], r["mass_initial"])
    return out
