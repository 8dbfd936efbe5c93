"""Exponential-decay matrix models and distance functions on index sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError

DistanceFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def band_distance(i, j):
    """|i - j|, broadcast over index arrays."""
    return np.abs(np.asarray(i, dtype=np.float64) - np.asarray(j, dtype=np.float64))


def euclidean_distance(coords) -> DistanceFn:
    """Distance between basis-function centres given as an (n, dim) array.

    Several indices may share one centre, in which case the result is a
    pseudo-metric rather than a metric.
    """
    pts = np.asarray(coords, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]

    def dist(i, j):
        i = np.asarray(i, dtype=np.intp)
        j = np.asarray(j, dtype=np.intp)
        return np.sqrt(np.sum((pts[i] - pts[j]) ** 2, axis=-1))

    return dist


@dataclass(frozen=True)
class DecayModel:
    """Parameters of the ensemble |a_ij| <= c * exp(-alpha * d(i, j))."""

    c: float = 1.0
    alpha: float = 0.005
    distance: DistanceFn = field(default=band_distance, compare=False)
    zero_cutoff: float = 1e-16

    def __post_init__(self):
        if not (self.c > 0 and np.isfinite(self.c)):
            raise InputError(f"decay prefactor c must be positive, got {self.c}")
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise InputError(f"decay rate alpha must be positive, got {self.alpha}")
        if not self.zero_cutoff >= 0:
            raise InputError(f"zero_cutoff must be nonnegative, got {self.zero_cutoff}")

    @property
    def is_banded(self) -> bool:
        return self.distance is band_distance

    def bound(self, i, j):
        return self.c * np.exp(-self.alpha * self.distance(i, j))

    def band_halfwidth(self) -> float:
        """Largest band distance whose bound still reaches the zero cutoff."""
        if self.zero_cutoff <= 0:
            return np.inf
        if self.zero_cutoff > self.c:
            return -1.0
        return np.log(self.c / self.zero_cutoff) / self.alpha


def check_pseudometric(dist: DistanceFn, n: int, samples: int = 10_000, seed: int = 0,
                       atol: float = 1e-12) -> None:
    """Sample index triples and raise AssertionError on the first axiom violation."""
    rng = np.random.default_rng(seed)
    i, j, k = rng.integers(0, n, size=(3, samples))
    dij, dji = dist(i, j), dist(j, i)
    dik, dkj = dist(i, k), dist(k, j)
    if np.any(dij < 0):
        raise AssertionError("nonnegativity violated")
    if not np.allclose(dij, dji, rtol=0, atol=atol):
        raise AssertionError("symmetry violated")
    if np.any(dist(i, i) != 0):
        raise AssertionError("d(i, i) != 0")
    if np.any(dij > dik + dkj + atol):
        raise AssertionError("triangle inequality violated")
