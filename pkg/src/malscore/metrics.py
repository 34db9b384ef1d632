"""Two-sample distances for generated point clouds: MMD and sliced Wasserstein."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .rng import aux_generator

BANDWIDTH_FLOOR = 1e-6


def _sq_dists(x: np.ndarray, y: np.ndarray, block: int = 2048) -> np.ndarray:
    out = np.empty((len(x), len(y)))
    ynorm = np.sum(y * y, axis=1)
    for lo in range(0, len(x), block):
        hi = min(lo + block, len(x))
        xb = x[lo:hi]
        d = np.sum(xb * xb, axis=1)[:, None] + ynorm[None, :] - 2.0 * xb @ y.T
        out[lo:hi] = np.maximum(d, 0.0)
    return out


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance of the pooled sample (bandwidth heuristic)."""
    z = np.vstack([x, y])
    if len(z) > 2000:  # subsample for the median only, deterministically
        z = z[:: len(z) // 2000 + 1]
    d = np.sqrt(_sq_dists(z, z))
    med = float(np.median(d[np.triu_indices(len(z), k=1)]))
    return max(med, BANDWIDTH_FLOOR)


def mmd(x: np.ndarray, y: np.ndarray, bandwidth: Optional[float] = None) -> float:
    """Gaussian-kernel maximum mean discrepancy, biased V-statistic.

    The V-statistic keeps the diagonal terms, so mmd(x, x) is exactly zero up
    to rounding.  Returns the square root of the (clipped) statistic.
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if len(x) < 2 or len(y) < 2:
        raise ValueError("need at least 2 points per sample")
    h = bandwidth if bandwidth is not None else median_bandwidth(x, y)
    gamma = 0.5 / (h * h)
    kxx = float(np.mean(np.exp(-gamma * _sq_dists(x, x))))
    kyy = float(np.mean(np.exp(-gamma * _sq_dists(y, y))))
    kxy = float(np.mean(np.exp(-gamma * _sq_dists(x, y))))
    return float(np.sqrt(max(kxx + kyy - 2.0 * kxy, 0.0)))


def mmd_permutation_quantile(x: np.ndarray, y: np.ndarray, q: float = 0.95,
                             n_perm: int = 200, seed: int = 0,
                             bandwidth: Optional[float] = None) -> float:
    """q-quantile of the MMD permutation null (labels shuffled jointly)."""
    rng = aux_generator(seed)
    pooled = np.vstack([x, y])
    h = bandwidth if bandwidth is not None else median_bandwidth(x, y)
    stats = np.empty(n_perm)
    for i in range(n_perm):
        perm = rng.permutation(len(pooled))
        stats[i] = mmd(pooled[perm[: len(x)]], pooled[perm[len(x):]], bandwidth=h)
    return float(np.quantile(stats, q))


def sliced_wasserstein(x: np.ndarray, y: np.ndarray, n_proj: int = 64,
                       seed: int = 0,
                       directions: Optional[np.ndarray] = None) -> float:
    """Average 1D Wasserstein-1 over random unit directions.

    Equal sizes use the exact sorted-sample form; unequal sizes align
    quantiles by interpolation.  Passing ``directions`` fixes the projections
    (rows are normalized).
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if directions is None:
        if n_proj < 1:
            raise ValueError("n_proj must be >= 1")
        dirs = aux_generator(seed).standard_normal((n_proj, x.shape[1]))
    else:
        dirs = np.atleast_2d(np.asarray(directions, dtype=float))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    px = x @ dirs.T
    py = y @ dirs.T
    px.sort(axis=0)
    py.sort(axis=0)
    if len(x) == len(y):
        return float(np.mean(np.abs(px - py)))
    qs = (np.arange(max(len(x), len(y))) + 0.5) / max(len(x), len(y))
    total = 0.0
    for j in range(dirs.shape[0]):
        qx = np.quantile(px[:, j], qs)
        qy = np.quantile(py[:, j], qs)
        total += float(np.mean(np.abs(qx - qy)))
    return total / dirs.shape[0]


def mode_coverage(samples: np.ndarray, means: np.ndarray, std: float,
                  min_fraction: float = 0.02) -> dict:
    """A mode counts as covered when >= min_fraction of samples fall within
    3 component-std of its mean."""
    d = np.sqrt(_sq_dists(np.atleast_2d(samples), np.atleast_2d(means)))
    near = d <= 3.0 * std
    fractions = near.mean(axis=0)
    covered = fractions >= min_fraction
    return {"covered": int(covered.sum()), "total": len(means),
            "fractions": fractions}


@dataclass
class MetricsReport:
    mmd: float
    mmd_bandwidth: float
    mmd_prior_baseline: float
    sliced_wasserstein: float
    n_projections: int
    seed: int
    mode_coverage: Optional[int] = None
    mode_total: Optional[int] = None

    def to_json(self) -> dict:
        return asdict(self)

    def to_csv_row(self) -> tuple:
        header = ("mmd", "mmd_bandwidth", "mmd_prior_baseline",
                  "sliced_wasserstein", "n_projections", "seed",
                  "mode_coverage", "mode_total")
        vals = (self.mmd, self.mmd_bandwidth, self.mmd_prior_baseline,
                self.sliced_wasserstein, self.n_projections, self.seed,
                self.mode_coverage, self.mode_total)
        return header, vals


def assemble_report(samples: np.ndarray, truth: np.ndarray, prior: np.ndarray,
                    n_projections: int = 64, seed: int = 0,
                    mode_means: Optional[np.ndarray] = None,
                    mode_std: float = 0.1) -> MetricsReport:
    """All metrics for one generated set, plus the prior-vs-truth MMD baseline."""
    h = median_bandwidth(samples, truth)
    cov = (mode_coverage(samples, mode_means, mode_std)
           if mode_means is not None else None)
    return MetricsReport(
        mmd=mmd(samples, truth, bandwidth=h),
        mmd_bandwidth=h,
        mmd_prior_baseline=mmd(prior, truth, bandwidth=h),
        sliced_wasserstein=sliced_wasserstein(samples, truth,
                                              n_proj=n_projections, seed=seed),
        n_projections=n_projections,
        seed=seed,
        mode_coverage=None if cov is None else cov["covered"],
        mode_total=None if cov is None else cov["total"],
    )
