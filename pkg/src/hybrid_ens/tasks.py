"""Procedural restoration tasks: denoise, deblur and derain analogues."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve

from .blocks import ConfigurationError

TASKS = ("denoise", "deblur", "derain")
SPLITS = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "denoise"
    size: int = 32
    sigma: float = 0.1
    blur_length: tuple[int, int] = (3, 7)
    streaks: tuple[int, int] = (4, 10)
    streak_intensity: tuple[float, float] = (0.2, 0.5)

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ConfigurationError(f"unknown task {self.kind!r}; expected one of {TASKS}")
        if self.size < 8 or self.size % 8:
            raise ConfigurationError(f"image size {self.size} must be a positive multiple of 8")
        if self.sigma < 0:
            raise ConfigurationError("noise sigma must be nonnegative")


def _item_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, SPLITS[split], index]))


def _convex_polygon(rng, size):
    cx, cy = rng.uniform(0.2, 0.8, 2) * size
    r = rng.uniform(0.1, 0.35) * size
    angles = np.sort(rng.uniform(0, 2 * np.pi, rng.integers(3, 7)))
    return np.column_stack([cx + r * np.cos(angles), cy + r * np.sin(angles)])


def _inside(poly, xx, yy):
    mask = np.ones(xx.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        mask &= (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0) >= 0
    return mask


def clean_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Gradient field plus oriented sinusoids plus a few flat polygons, in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    u, v = xx / size, yy / size
    img = np.empty((3, size, size))
    base = rng.uniform(0.25, 0.75, 3)
    slope = rng.uniform(-0.25, 0.25, (3, 2))
    for c in range(3):
        img[c] = base[c] + slope[c, 0] * (u - 0.5) + slope[c, 1] * (v - 0.5)
    for _ in range(rng.integers(2, 5)):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (u * np.cos(theta) + v * np.sin(theta)) + phase)
        img += rng.uniform(0.03, 0.12, 3)[:, None, None] * wave
    for _ in range(rng.integers(1, 4)):
        mask = _inside(_convex_polygon(rng, size), xx, yy)
        colour = rng.uniform(0.0, 1.0, 3)
        alpha = rng.uniform(0.5, 0.9)
        img[:, mask] = (1 - alpha) * img[:, mask] + alpha * colour[:, None]
    return np.clip(img, 0.0, 1.0)


def line_kernel(rng: np.random.Generator, length: int) -> np.ndarray:
    """Normalised motion-blur kernel: a line of ``length`` pixels at a random angle."""
    k = np.zeros((length, length))
    theta = rng.uniform(0, np.pi)
    c = (length - 1) / 2
    for t in np.linspace(-c, c, 4 * length):
        k[int(round(c + t * math.sin(theta))), int(round(c + t * math.cos(theta)))] = 1.0
    return k / k.sum()


def add_streaks(rng: np.random.Generator, img: np.ndarray, spec: TaskSpec) -> np.ndarray:
    size = img.shape[-1]
    out = img.copy()
    theta = rng.uniform(np.pi / 3, 2 * np.pi / 3)
    dy, dx = math.sin(theta), math.cos(theta)
    for _ in range(rng.integers(*spec.streaks)):
        y0, x0 = rng.uniform(0, size, 2)
        length = rng.uniform(0.2, 0.6) * size
        level = rng.uniform(*spec.streak_intensity)
        for t in np.linspace(0, length, int(2 * length) + 1):
            y, x = int(y0 + t * dy) % size, int(x0 + t * dx) % size
            out[:, y, x] += level
    return out


def degrade(rng: np.random.Generator, clean: np.ndarray, spec: TaskSpec) -> np.ndarray:
    if spec.kind == "denoise":
        return clean + spec.sigma * rng.standard_normal(clean.shape)
    if spec.kind == "deblur":
        k = line_kernel(rng, int(rng.integers(spec.blur_length[0], spec.blur_length[1] + 1)))
        return np.stack([convolve(ch, k, mode="reflect") for ch in clean])
    return add_streaks(rng, clean, spec)


def generate_dataset(spec: TaskSpec, split: str, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` (degraded, clean) pairs as two (n, 3, size, size) arrays.

    Every item draws from its own stream keyed on (seed, split, index), so
    splits never share an image.
    """
    if n <= 0:
        raise ConfigurationError("dataset size must be positive")
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    clean = np.empty((n, 3, spec.size, spec.size))
    degraded = np.empty_like(clean)
    for i in range(n):
        rng = _item_rng(seed, split, i)
        clean[i] = clean_image(rng, spec.size)
        degraded[i] = degrade(rng, clean[i], spec)
    return degraded, clean


def random_crops(rng: np.random.Generator, degraded: np.ndarray, clean: np.ndarray, batch: int,
                 patch: int) -> tuple[np.ndarray, np.ndarray]:
    idx = rng.integers(0, len(degraded), size=batch)
    size = degraded.shape[-1]
    if patch > size:
        raise ConfigurationError(f"patch {patch} larger than image {size}")
    xs, ys = [], []
    for i in idx:
        oy, ox = rng.integers(0, size - patch + 1, size=2)
        xs.append(degraded[i, :, oy:oy + patch, ox:ox + patch])
        ys.append(clean[i, :, oy:oy + patch, ox:ox + patch])
    return np.stack(xs), np.stack(ys)


# ------------------------------------------------------------------- caching

def save_dataset(directory, name: str, degraded: np.ndarray, clean: np.ndarray, manifest: dict) -> Path:
    """Raw little-endian float64 arrays plus a JSON manifest with shapes and parameters."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for label, arr in (("degraded", degraded), ("clean", clean)):
        path = d / f"{name}_{label}.bin"
        np.ascontiguousarray(arr, dtype="<f8").tofile(path)
        files[label] = {"file": path.name, "shape": list(arr.shape),
                        "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}
    meta = dict(manifest, arrays=files)
    (d / f"{name}.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return d / f"{name}.json"


def load_dataset(directory, name: str) -> tuple[np.ndarray, np.ndarray, dict]:
    d = Path(directory)
    meta = json.loads((d / f"{name}.json").read_text())
    arrays = []
    for label in ("degraded", "clean"):
        info = meta["arrays"][label]
        arrays.append(np.fromfile(d / info["file"], dtype="<f8").reshape(info["shape"]))
    return arrays[0], arrays[1], meta


def task_manifest(spec: TaskSpec, split: str, n: int, seed: int) -> dict:
    m = asdict(spec)
    m.update(split=split, n=n, seed=seed)
    return m
