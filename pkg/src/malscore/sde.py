"""Forward SDE specifications, noise schedules and Euler-Maruyama simulation.

The simulated model is  dX_t = b(t, X_t) dt + sigma(t) dB_t  with a
state-independent diffusion matrix.  Bundled drift families: the three
standard diffusion-model schedules (variance exploding / preserving /
sub-preserving), constant linear drift, and the 1D cubic drift -x^3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .errors import GridMismatch, NumericFailure, SingularTime
from .rng import BrownianStore, x0_generator

DIVERGENCE_GUARD = 1e10


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + k*dt, k = 0..n_steps.

    ``integer_mode`` marks grids whose nodes are meant to be read as integer
    step labels (dt = 1); reverse sampling on such a grid stops at step 1.
    """

    t0: float
    t_end: float
    n_steps: int
    integer_mode: bool = False

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t_end > self.t0 >= 0.0:
            raise ValueError("need t_end > t0 >= 0")

    @classmethod
    def integer(cls, n_steps: int) -> "TimeGrid":
        return cls(0.0, float(n_steps), n_steps, integer_mode=True)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    def nodes(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.dt

    def nearest_node(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        return min(max(k, 0), self.n_steps)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

class Schedule:
    """Common interface for time-dependent SDE coefficients.

    Scalar (isotropic) schedules expose g(t) with sigma(t) = g(t) * I and a
    scalar drift coefficient c(t) with b(t, x) = c(t) * x.  Closed forms for
    the flow Jacobian y(t) and the noise covariance gamma(t) are available
    for the three standard schedules.
    """

    kind: str = "custom"
    T: float

    def g(self, t):
        raise NotImplementedError

    def drift_coef(self, t):
        raise NotImplementedError

    def y_closed(self, t):
        """Closed-form flow Jacobian (scalar factor of the identity)."""
        raise NotImplementedError

    def gamma_closed(self, t):
        """Closed-form noise covariance (scalar factor of the identity)."""
        raise NotImplementedError

    def gamma_inv_closed(self, t):
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr <= 0.0):
            raise SingularTime("gamma^-1 is unbounded at t = 0")
        return 1.0 / self.gamma_closed(t)

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class VESchedule(Schedule):
    sigma_min: float
    sigma_max: float
    T: float = 1.0
    kind: str = field(default="ve", init=False)

    def __post_init__(self):
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be > 0")
        if self.sigma_max <= self.sigma_min:
            raise ValueError("sigma_max must exceed sigma_min")

    def sigma_t(self, t):
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** (np.asarray(t) / self.T)

    def g(self, t):
        # g^2 = d sigma^2 / dt
        rate = 2.0 / self.T * np.log(self.sigma_max / self.sigma_min)
        return self.sigma_t(t) * np.sqrt(rate)

    def drift_coef(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def y_closed(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def gamma_closed(self, t):
        return self.sigma_t(t) ** 2 - self.sigma_min**2

    def to_json(self) -> dict:
        return {"kind": "ve", "sigma_min": self.sigma_min,
                "sigma_max": self.sigma_max, "T": self.T}


@dataclass(frozen=True)
class VPSchedule(Schedule):
    """Variance-preserving schedule with beta affine in t (constant if
    beta_max is omitted or equals beta_min)."""

    beta_min: float
    beta_max: Optional[float] = None
    T: float = 1.0
    kind: str = field(default="vp", init=False)

    def __post_init__(self):
        if self.beta_min <= 0:
            raise ValueError("beta_min must be > 0")
        if self.beta_max is not None and self.beta_max < self.beta_min:
            raise ValueError("beta_max must be >= beta_min")

    @property
    def _bmax(self) -> float:
        return self.beta_min if self.beta_max is None else self.beta_max

    def beta(self, t):
        return self.beta_min + (self._bmax - self.beta_min) * np.asarray(t, dtype=float) / self.T

    def B(self, t):
        # integral of the affine beta, in closed form
        t = np.asarray(t, dtype=float)
        return self.beta_min * t + (self._bmax - self.beta_min) * t**2 / (2.0 * self.T)

    def g(self, t):
        return np.sqrt(self.beta(t))

    def drift_coef(self, t):
        return -0.5 * self.beta(t)

    def y_closed(self, t):
        return np.exp(-0.5 * self.B(t))

    def gamma_closed(self, t):
        return 1.0 - np.exp(-self.B(t))

    def to_json(self) -> dict:
        return {"kind": "vp", "beta_min": self.beta_min,
                "beta_max": self.beta_max, "T": self.T}


@dataclass(frozen=True)
class SubVPSchedule(VPSchedule):
    kind: str = field(default="subvp", init=False)

    def g(self, t):
        return np.sqrt(self.beta(t) * (1.0 - np.exp(-2.0 * self.B(t))))

    def gamma_closed(self, t):
        return (1.0 - np.exp(-self.B(t))) ** 2

    def to_json(self) -> dict:
        return {"kind": "subvp", "beta_min": self.beta_min,
                "beta_max": self.beta_max, "T": self.T}


@dataclass(frozen=True)
class ConstLinearSchedule(Schedule):
    """Constant drift matrix b and diffusion matrix sigma."""

    b: np.ndarray
    sigma: np.ndarray
    T: float = 1.0
    kind: str = field(default="const_linear", init=False)

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if b.shape[0] != b.shape[1]:
            raise ValueError("drift matrix must be square")
        if s.shape[0] != b.shape[0]:
            raise ValueError("diffusion rows must match state dimension")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", s)

    @property
    def m(self) -> int:
        return self.b.shape[0]

    @property
    def d(self) -> int:
        return self.sigma.shape[1]

    def g(self, t):  # scalar magnitude only meaningful for isotropic sigma
        raise NotImplementedError("const-linear schedules carry full matrices")

    def drift_matrix(self, t) -> np.ndarray:
        return self.b

    def sigma_matrix(self, t) -> np.ndarray:
        return self.sigma

    def y_closed(self, t):
        return expm(self.b * float(t))

    def gamma_closed(self, t):
        # scalar closed form only in the 1D case
        if self.m != 1 or self.d != 1:
            raise NotImplementedError("closed-form gamma only for 1D const-linear")
        b = float(self.b[0, 0])
        s2 = float(self.sigma[0, 0]) ** 2
        t = np.asarray(t, dtype=float)
        if b == 0.0:
            return s2 * t
        return s2 * (np.exp(2.0 * b * t) - 1.0) / (2.0 * b)

    def to_json(self) -> dict:
        return {"kind": "const_linear", "b": self.b.tolist(),
                "sigma": self.sigma.tolist(), "T": self.T}


def make_schedule(kind: str, **params) -> Schedule:
    """Factory keyed by schedule name: 've', 'vp', 'subvp' or 'const_linear'."""
    kind = kind.lower()
    if kind == "ve":
        return VESchedule(**params)
    if kind == "vp":
        return VPSchedule(**params)
    if kind == "subvp":
        return SubVPSchedule(**params)
    if kind == "const_linear":
        return ConstLinearSchedule(**params)
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_from_json(doc: dict) -> Schedule:
    doc = dict(doc)
    return make_schedule(doc.pop("kind"), **doc)


# ---------------------------------------------------------------------------
# SDE specification
# ---------------------------------------------------------------------------

@dataclass
class SdeSpec:
    """Declarative SDE: drift evaluator plus its x-derivatives and a
    state-independent diffusion evaluator.

    Callables are vectorized over a leading batch axis:
    drift(t, x[n, m]) -> (n, m); jacobian -> (n, m, m) or (m, m) when
    state-independent; hessian -> (n, m, m, m), or None for affine drift.
    sigma(t) -> (m, d).
    """

    m: int
    d: int
    schedule: Optional[Schedule]
    drift: Callable
    jacobian: Callable
    hessian: Optional[Callable]
    sigma: Callable
    linear: bool
    name: str = "custom"

    def __post_init__(self):
        if self.linear and self.hessian is not None:
            raise ValueError("affine drift must have hessian None")

    def to_json(self) -> dict:
        if self.name == "custom":
            raise ValueError("custom specs with ad-hoc callables do not serialize")
        doc = {"name": self.name, "m": self.m, "d": self.d, "linear": self.linear}
        if self.schedule is not None:
            doc["schedule"] = self.schedule.to_json()
        if self.name == "cubic":
            doc["sigma"] = float(np.atleast_2d(self.sigma(0.0))[0, 0])
        return doc


def spec_from_json(doc: dict) -> SdeSpec:
    name = doc["name"]
    if name == "cubic":
        sched = doc.get("schedule")
        sigma = sched["sigma"] if sched and "sigma" in sched else doc.get("sigma", 1.0)
        return cubic_sde(sigma=float(sigma))
    sched = schedule_from_json(doc["schedule"])
    return linear_sde(sched, m=int(doc["m"]))


def linear_sde(schedule: Schedule, m: int = 1) -> SdeSpec:
    """Build the SDE spec for a bundled linear schedule."""
    if isinstance(schedule, ConstLinearSchedule):
        b = schedule.b
        s = schedule.sigma
        if b.shape[0] != m and m != b.shape[0]:
            raise ValueError("m inconsistent with drift matrix")
        m = b.shape[0]
        return SdeSpec(
            m=m, d=s.shape[1], schedule=schedule,
            drift=lambda t, x: x @ b.T,
            jacobian=lambda t, x: b,
            hessian=None,
            sigma=lambda t: s,
            linear=True, name="const_linear",
        )

    eye = np.eye(m)

    def drift(t, x):
        return schedule.drift_coef(t) * x

    def jac(t, x):
        return schedule.drift_coef(t) * eye

    def sig(t):
        return schedule.g(t) * eye

    return SdeSpec(m=m, d=m, schedule=schedule, drift=drift, jacobian=jac,
                   hessian=None, sigma=sig, linear=True, name=schedule.kind)


def cubic_sde(sigma: float = 1.0) -> SdeSpec:
    """1D nonlinear benchmark: dX = -X^3 dt + sigma dW, single attractor at 0."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    s = np.array([[float(sigma)]])

    def drift(t, x):
        return -x**3

    def jac(t, x):
        return (-3.0 * x**2)[..., None]

    def hess(t, x):
        return (-6.0 * x)[..., None, None]

    spec = SdeSpec(m=1, d=1, schedule=None, drift=drift, jacobian=jac,
                   hessian=hess, sigma=lambda t: s, linear=False, name="cubic")
    return spec


# ---------------------------------------------------------------------------
# initial-condition samplers
# ---------------------------------------------------------------------------

def point_mass(x) -> Callable:
    """x0 sampler returning a fixed point for every path."""
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def sample(n, rng):
        return np.tile(x, (n, 1))

    return sample


def gaussian_x0(mean=0.0, std=1.0, m: int = 1) -> Callable:
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (m,))
    std = np.broadcast_to(np.asarray(std, dtype=float), (m,))

    def sample(n, rng):
        return mean + std * rng.standard_normal((n, m))

    return sample


def data_x0(points: np.ndarray) -> Callable:
    """x0 sampler cycling deterministically through a fixed dataset."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))

    def sample(n, rng):
        idx = np.arange(n) % len(pts)
        return pts[idx]

    return sample


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class PathEnsemble:
    """Simulated forward paths plus the increment store that produced them.

    ``X`` holds full trajectories (n_paths, n_steps+1, m) unless the ensemble
    was simulated endpoints-only, in which case it is None and only ``x_T``
    is populated.  Diverged paths (|X| beyond the overflow guard) are flagged,
    never dropped silently.
    """

    spec: SdeSpec
    grid: TimeGrid
    n_paths: int
    seed: int
    x0: np.ndarray
    x_T: np.ndarray
    diverged: np.ndarray
    store: BrownianStore
    X: Optional[np.ndarray] = None

    @property
    def n_diverged(self) -> int:
        return int(self.diverged.sum())

    def increments(self, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
        return self.store.increments(lo, self.n_paths if hi is None else hi)


def _resolve_x0(x0, n_paths: int, m: int, seed: int) -> np.ndarray:
    if callable(x0):
        draws = np.asarray(x0(n_paths, x0_generator(seed)), dtype=float)
    else:
        arr = np.asarray(x0, dtype=float)
        if arr.ndim <= 1:
            draws = np.tile(np.atleast_1d(arr), (n_paths, 1))
        else:
            draws = arr
    if draws.shape != (n_paths, m):
        raise ValueError(f"x0 draws have shape {draws.shape}, expected {(n_paths, m)}")
    return draws


def simulate_forward(spec: SdeSpec, grid: TimeGrid, x0, n_paths: int, seed: int,
                     store_trajectories: bool = True,
                     chunk_paths: Optional[int] = None) -> PathEnsemble:
    """Euler-Maruyama forward simulation, deterministic in (seed, spec, grid).

    x0 may be a point (array of shape (m,)), an explicit (n_paths, m) array,
    or a callable(n, rng) -> (n, m).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    n, m, d = grid.n_steps, spec.m, spec.d
    dt = grid.dt
    ts = grid.nodes()
    store = BrownianStore(seed, n, d, dt)
    x0_arr = _resolve_x0(x0, n_paths, m, seed)

    X = np.empty((n_paths, n + 1, m)) if store_trajectories else None
    x_T = np.empty((n_paths, m))
    diverged = np.zeros(n_paths, dtype=bool)
    sig_nodes = np.stack([np.atleast_2d(spec.sigma(t)) for t in ts[:-1]])  # (n, m, d)

    if chunk_paths is None:
        # keep increments + trajectory slab comfortably inside memory
        budget = 400_000_000
        per_path = (n * d + (n + 1) * m * (1 if store_trajectories else 0)) * 8
        chunk_paths = max(64, min(n_paths, int(budget / max(per_path, 1))))

    for lo in range(0, n_paths, chunk_paths):
        hi = min(lo + chunk_paths, n_paths)
        dw = store.increments(lo, hi)  # (c, n, d)
        x = x0_arr[lo:hi].copy()
        bad = np.zeros(hi - lo, dtype=bool)
        if store_trajectories:
            X[lo:hi, 0] = x
        for k in range(n):
            drift = spec.drift(ts[k], x)
            x = x + drift * dt + dw[:, k] @ sig_nodes[k].T
            newly_bad = ~bad & (np.max(np.abs(x), axis=1) > DIVERGENCE_GUARD)
            if np.any(newly_bad):
                bad |= newly_bad
            if np.any(bad):
                # freeze diverged paths at their last finite-guarded value
                x[bad] = np.clip(x[bad], -DIVERGENCE_GUARD, DIVERGENCE_GUARD)
            if store_trajectories:
                X[lo:hi, k + 1] = x
        x_T[lo:hi] = x
        diverged[lo:hi] = bad

    return PathEnsemble(spec=spec, grid=grid, n_paths=n_paths, seed=seed,
                        x0=x0_arr, x_T=x_T, diverged=diverged, store=store, X=X)


def ito_integral(ensemble: PathEnsemble, integrand: Callable,
                 grid: Optional[TimeGrid] = None) -> np.ndarray:
    """Left-point Ito integral sum_k f(t_k) dW_k over each path, shape (n_paths, m).

    Uses the same stored increments as the simulation.  ``integrand`` maps a
    time to an (m, d) matrix.
    """
    if grid is not None and grid != ensemble.grid:
        raise GridMismatch("integrand grid differs from the ensemble grid")
    g = ensemble.grid
    ts = g.nodes()[:-1]
    f = np.stack([np.atleast_2d(integrand(t)) for t in ts])  # (n, m, d)
    out = np.zeros((ensemble.n_paths, ensemble.spec.m))
    chunk = max(64, int(200_000_000 / max(g.n_steps * ensemble.spec.d * 8, 1)))
    for lo in range(0, ensemble.n_paths, chunk):
        hi = min(lo + chunk, ensemble.n_paths)
        dw = ensemble.increments(lo, hi)
        out[lo:hi] = np.einsum("kmd,ckd->cm", f, dw)
    return out


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"{name} contains non-finite values")
