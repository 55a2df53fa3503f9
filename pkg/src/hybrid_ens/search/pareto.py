"""Two-objective Pareto archive, hypervolume and knee selection (minimisation)."""
from __future__ import annotations

import warnings
from typing import Any, Sequence

import numpy as np


class KneeWarning(UserWarning):
    pass


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and (a[0] < b[0] or a[1] < b[1])


class ParetoArchive:
    """Nondominated members in insertion order. Items are any objects with ``f1``/``f2``
    attributes, or plain pairs."""

    def __init__(self):
        self.members: list[Any] = []

    @staticmethod
    def _f(item) -> tuple[float, float]:
        if hasattr(item, "f1"):
            return float(item.f1), float(item.f2)
        return float(item[0]), float(item[1])

    def update(self, item) -> bool:
        """Insert ``item`` iff nothing in the archive dominates or equals it."""
        f = self._f(item)
        for m in self.members:
            g = self._f(m)
            if dominates(g, f) or g == f:
                return False
        self.members = [m for m in self.members if not dominates(f, self._f(m))]
        self.members.append(item)
        return True

    def objectives(self) -> np.ndarray:
        return np.array([self._f(m) for m in self.members], dtype=float).reshape(-1, 2)

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)


def pareto_update(front: ParetoArchive, obs) -> ParetoArchive:
    front.update(obs)
    return front


def nondominated(points: np.ndarray) -> np.ndarray:
    """Boolean mask of nondominated rows; of exact duplicates only the first survives."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        le = np.all(pts <= pts[i], axis=1)
        lt = np.any(pts < pts[i], axis=1)
        if np.any(le & lt):
            keep[i] = False
            continue
        same = np.all(pts[:i] == pts[i], axis=1)
        if np.any(same):
            keep[i] = False
    return keep


def hypervolume(points: np.ndarray, ref: Sequence[float]) -> float:
    """Area dominated by ``points`` and bounded by ``ref``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    pts = pts[np.all(pts < np.asarray(ref, dtype=float), axis=1)]
    if len(pts) == 0:
        return 0.0
    pts = pts[nondominated(pts)]
    pts = pts[np.argsort(pts[:, 0])]
    edges = np.append(pts[1:, 0], ref[0])
    return float(np.sum((edges - pts[:, 0]) * (ref[1] - pts[:, 1])))


def knee_index(F: np.ndarray) -> tuple[int, np.ndarray]:
    """Knee of a front and its normalised coordinates.

    Objectives are scaled to [0, 1] over the front; the knee maximises the
    perpendicular distance to the chord between the two extremes, ties going
    to the smaller first objective.
    """
    F = np.asarray(F, dtype=float).reshape(-1, 2)
    lo, hi = F.min(axis=0), F.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    N = (F - lo) / span
    first = np.lexsort((N[:, 1], N[:, 0]))[0]
    last = np.lexsort((N[:, 1], -N[:, 0]))[0]
    chord = N[last] - N[first]
    length = np.hypot(*chord)
    if length == 0.0:
        dist = np.zeros(len(N))
    else:
        rel = N - N[first]
        dist = np.abs(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length
    # rounding makes floating-point near-ties fall back to the f1 rule
    order = np.lexsort((F[:, 1], F[:, 0], -np.round(dist, 12)))
    return int(order[0]), N


def knee_select(front: Sequence, k: int) -> list:
    """The ``k`` front members nearest the knee in normalised objective space, knee first."""
    members = list(front)
    if not members:
        raise ValueError("knee_select needs a nonempty front")
    F = np.array([ParetoArchive._f(m) for m in members])
    if k > len(members):
        warnings.warn(f"requested {k} knee candidates from a front of {len(members)}", KneeWarning)
        k = len(members)
    knee, N = knee_index(F)
    d = np.hypot(*(N - N[knee]).T)
    order = np.lexsort((F[:, 1], F[:, 0], d))
    return [members[i] for i in order[:k]]
