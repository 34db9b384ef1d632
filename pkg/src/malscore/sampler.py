"""Reverse-time SDE sampling driven by a score field.

Iterates x <- x - [f(t, x) - g(t)^2 s(t, x)] dt + g(t) sqrt(dt) xi backwards
from t = T, stopping one step short of zero (integer grids stop at step 1).
Each chain has its own counter-based noise stream, so ensembles are
reproducible independent of chunking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NumericFailure
from .rng import BrownianStore
from .sde import Schedule, SdeSpec, TimeGrid, linear_sde


@dataclass
class ReverseRun:
    """Configuration of one reverse integration.

    ``field`` must expose score(t, y) -> array like y.  ``prior`` is either
    'std_normal' (vp/subvp) or 've' (N(0, sigma_max^2 I), forced by the
    exploding forward marginal).
    """

    spec: SdeSpec
    field: object
    steps: int
    seed: int = 0
    prior: str = "std_normal"
    keep_trajectory: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.prior not in ("std_normal", "ve"):
            raise ValueError(f"unknown prior {self.prior!r}")


def default_prior_for(schedule: Schedule) -> str:
    return "ve" if schedule.kind == "ve" else "std_normal"


def reverse_sample(run: ReverseRun, n_samples: int,
                   grid: Optional[TimeGrid] = None):
    """Draw n_samples by integrating the reverse-time SDE.

    Returns (samples, trajectory) where trajectory is None unless
    ``run.keep_trajectory``; trajectory[k] is the state after k updates.
    """
    spec = run.spec
    m = spec.m
    if grid is None:
        T = spec.schedule.T if spec.schedule is not None else 1.0
        grid = TimeGrid(0.0, T, run.steps)
    T = grid.t_end
    dt = T / run.steps
    width = max(m, spec.d)
    store = BrownianStore(run.seed, run.steps + 1, width, dt)

    # row 0 of each chain's stream seeds the prior draw; rest drive the noise
    chunk = max(256, int(200_000_000 / max((run.steps + 1) * width * 8, 1)))
    samples = np.empty((n_samples, m))
    traj = np.empty((run.steps + 1, n_samples, m)) if run.keep_trajectory else None
    sig_scale = 1.0
    if run.prior == "ve":
        sig_scale = float(spec.schedule.sigma_max)

    for lo in range(0, n_samples, chunk):
        hi = min(lo + chunk, n_samples)
        normals = store.normals(lo, hi)          # (c, steps+1, width)
        x = sig_scale * normals[:, 0, :m].copy()
        if run.keep_trajectory:
            traj[0, lo:hi] = x
        for step in range(1, run.steps + 1):
            t = T - (step - 1) * dt
            s = np.asarray(run.field.score(t, x))
            if not np.all(np.isfinite(s)):
                raise NumericFailure(
                    f"score field returned non-finite values at step {step} (t={t:g})")
            f = spec.drift(t, x)
            g = np.atleast_2d(spec.sigma(t))
            g2s = s @ (g @ g.T).T
            x = x - (f - g2s) * dt + np.sqrt(dt) * normals[:, step, :spec.d] @ g.T
            if run.keep_trajectory:
                traj[step, lo:hi] = x
        samples[lo:hi] = x
    return samples, traj


def oracle_run(schedule: Schedule, prior_mixture, steps: int, seed: int = 0,
               m: int = 1, **kw) -> ReverseRun:
    """Reverse run with the exact mixture-conditioned score field."""
    from .linear import oracle_field

    spec = linear_sde(schedule, m=m)
    field = oracle_field(schedule, prior_mixture, m=m, t_floor=min(1e-3, 0.5 / steps))
    return ReverseRun(spec=spec, field=field, steps=steps, seed=seed,
                      prior=default_prior_for(schedule), **kw)
