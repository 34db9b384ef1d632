"""Synthetic 2D toy datasets: checkerboard, swiss roll, 8-mode ring mixture."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import aux_generator

KINDS = ("checkerboard", "swissroll", "gmm8")


@dataclass
class Dataset2D:
    kind: str
    n_points: int
    seed: int = 0
    # gmm8
    radius: float = 1.0
    component_std: float = 0.1
    n_modes: int = 8
    # swiss roll
    swiss_noise: float = 0.05
    # checkerboard
    extent: float = 2.0
    cells_per_side: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")

    def generate(self) -> np.ndarray:
        rng = aux_generator(self.seed)
        if self.kind == "gmm8":
            return _gmm8(self.n_points, rng, self.radius, self.component_std,
                         self.n_modes)
        if self.kind == "swissroll":
            return _swissroll(self.n_points, rng, self.swiss_noise)
        return _checkerboard(self.n_points, rng, self.extent, self.cells_per_side)

    def mode_means(self) -> np.ndarray:
        if self.kind != "gmm8":
            raise ValueError("mode means defined for gmm8 only")
        ang = 2.0 * np.pi * np.arange(self.n_modes) / self.n_modes
        return self.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def generate_dataset(kind: str, n: int, seed: int = 0, **params) -> np.ndarray:
    return Dataset2D(kind=kind, n_points=n, seed=seed, **params).generate()


def _gmm8(n, rng, radius, std, n_modes):
    ang = 2.0 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    comp = rng.integers(0, n_modes, size=n)
    return means[comp] + std * rng.standard_normal((n, 2))


def _swissroll(n, rng, noise):
    # spiral r = theta over 1.5 turns, scaled into [-2, 2]^2, jitter added after
    theta = rng.uniform(1.5 * np.pi, 4.5 * np.pi, size=n)
    pts = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)
    pts *= 2.0 / (4.5 * np.pi)
    return pts + noise * rng.standard_normal((n, 2))


def _checkerboard(n, rng, extent, cells):
    # uniform over the cells of one parity ("on" cells)
    width = 2.0 * extent / cells
    ij = np.stack(np.meshgrid(np.arange(cells), np.arange(cells)), -1).reshape(-1, 2)
    active = ij[(ij.sum(axis=1) % 2) == 0]
    pick = active[rng.integers(0, len(active), size=n)]
    low = -extent + pick * width
    return low + rng.uniform(0.0, width, size=(n, 2))


def cell_parity(points: np.ndarray, extent: float = 2.0,
                cells: int = 4) -> np.ndarray:
    """Parity of the checkerboard cell each point falls in (0 = active)."""
    width = 2.0 * extent / cells
    idx = np.floor((points + extent) / width).astype(int)
    idx = np.clip(idx, 0, cells - 1)
    return idx.sum(axis=1) % 2
