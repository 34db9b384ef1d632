"""Verification suites with bundled tolerances.

Each suite returns check rows (name, value, target, passed) consumed by the
CLI, which prints one line per check and exits nonzero on any failure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linear import (covering_identity_check, fokker_planck_score_oracle,
                     point_mass_field, quadrature_providers, score_linear,
                     LinearScoreField)
from .nonlinear import (bump_dgamma, dgamma_malliavin, skorokhod_nonlinear,
                        variation_trajectories)
from .rng import BrownianStore, aux_generator
from .sde import (TimeGrid, cubic_sde, linear_sde, make_schedule, point_mass,
                  simulate_forward)
from .variation import (fit_singularity_slope, malliavin_matrix,
                        propagate_first_variation)


@dataclass
class CheckRow:
    suite: str
    name: str
    value: float
    target: str
    passed: bool


def _std_schedules():
    return [
        make_schedule("ve", sigma_min=0.01, sigma_max=50.0, T=1.0),
        make_schedule("vp", beta_min=0.1, T=1.0),
        make_schedule("subvp", beta_min=0.1, T=1.0),
    ]


# ---------------------------------------------------------------------------

def suite_linear_equivalence(dt_quad: float = 1e-4) -> list:
    """Closed-form and quadrature score pipelines against the transition-density
    oracle, over point masses {-1, 0, 1}, five times and a 9-point state grid."""
    rows = []
    times = [0.1, 0.25, 0.5, 0.75, 1.0]
    ys = np.linspace(-2.0, 2.0, 9)
    x0s = [-1.0, 0.0, 1.0]
    for sched in _std_schedules():
        grid = TimeGrid(0.0, sched.T, int(round(sched.T / dt_quad)))
        spec = linear_sde(sched, m=1)
        ens = simulate_forward(spec, grid, point_mass(0.0), 1, 0,
                               store_trajectories=False)
        track = propagate_first_variation(ens)
        mall = malliavin_matrix(track, spec)
        gi_q, y_q = quadrature_providers(track, mall, eps=0.0)
        worst_cf = 0.0
        worst_q = 0.0
        for x0 in x0s:
            field_cf = point_mass_field(sched, x0)
            field_q = LinearScoreField(
                sched, 1, gi_q, y_q,
                lambda t, y, _x=x0: np.full((np.atleast_2d(y).shape[0], 1), _x))
            for t in times:
                oracle = np.array([fokker_planck_score_oracle(sched, t, y, x0)
                                   for y in ys])
                got_cf = np.array([score_linear(field_cf, t, np.array([y]))[0]
                                   for y in ys])
                got_q = np.array([score_linear(field_q, t, np.array([y]))[0]
                                  for y in ys])
                denom = np.maximum(np.abs(oracle), 1e-300)
                worst_cf = max(worst_cf, float(np.max(np.abs(got_cf - oracle) / denom)))
                worst_q = max(worst_q, float(np.max(np.abs(got_q - oracle) / denom)))
        rows.append(CheckRow("linear-equivalence", f"{sched.kind}_closed_form_rel",
                             worst_cf, "<= 1e-6", worst_cf <= 1e-6))
        rows.append(CheckRow("linear-equivalence", f"{sched.kind}_quadrature_rel",
                             worst_q, "<= 1e-2", worst_q <= 1e-2))
    return rows


def suite_covering() -> list:
    """Discrete covering identity ||M - I||_max for m = 1, 2, 3 linear specs."""
    from .sde import ConstLinearSchedule

    rows = []
    cases = {
        1: ConstLinearSchedule(b=np.array([[-0.1]]), sigma=np.array([[1.0]]), T=1.0),
        2: ConstLinearSchedule(b=np.diag([-0.1, -0.2]), sigma=np.eye(2), T=1.0),
    }
    rng = aux_generator(314)
    a = rng.standard_normal((3, 3))
    cases[3] = ConstLinearSchedule(b=-(a @ a.T + np.eye(3)),
                                   sigma=rng.standard_normal((3, 3)), T=1.0)
    for m, sched in cases.items():
        spec = linear_sde(sched, m=m)
        grid = TimeGrid(0.0, 1.0, 2000)
        ens = simulate_forward(spec, grid, point_mass(np.zeros(m)), 1, 0,
                               store_trajectories=False)
        track = propagate_first_variation(ens)
        mall = malliavin_matrix(track, spec)
        M = covering_identity_check(track, mall, spec)
        err = float(np.max(np.abs(M - np.eye(m))))
        tol = 1e-10 if m < 3 else 1e-9
        rows.append(CheckRow("covering", f"m{m}_max_dev", err, f"<= {tol:g}",
                             err <= tol))
    return rows


def suite_lemma35(n_paths: int = 1000) -> list:
    """Pathwise gap between Y_T int Yinv sigma dB (exact flow) and the Euler
    X_T - Y_T x0, over a dt-halving sequence: order >= 0.9 and a small final
    residual."""
    sched = make_schedule("const_linear", b=np.array([[-0.05]]),
                          sigma=np.array([[1.0]]), T=1.0)
    spec = linear_sde(sched)
    dts = np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    x0 = 1.0
    rms = []
    for i, dt in enumerate(dts):
        grid = TimeGrid(0.0, 1.0, int(round(1.0 / dt)))
        ens = simulate_forward(spec, grid, point_mass(x0), n_paths, 1000 + i,
                               store_trajectories=False)
        ts = grid.nodes()
        YT = float(sched.y_closed(1.0)[0, 0])
        yinv_sig = np.exp(0.05 * ts[:-1])  # exact Yinv * sigma on the grid
        lhs = np.zeros(n_paths)
        chunk = 4096
        for lo in range(0, n_paths, chunk):
            hi = min(lo + chunk, n_paths)
            dw = ens.increments(lo, hi)[:, :, 0]
            lhs[lo:hi] = YT * dw @ yinv_sig
        resid = lhs - (ens.x_T[:, 0] - YT * x0)
        rms.append(float(np.sqrt(np.mean(resid**2))))
    slope = float(np.polyfit(np.log(dts), np.log(rms), 1)[0])
    rows = [CheckRow("lemma35", "convergence_order", slope, ">= 0.9", slope >= 0.9),
            CheckRow("lemma35", "residual_at_finest", rms[-1], "<= 5e-2",
                     rms[-1] <= 5e-2)]
    return rows


def suite_singularity() -> list:
    """Log-log divergence rate of gamma^{-1} near t = 0 for the three schedules."""
    rows = []
    targets = {"ve": -1.0, "vp": -1.0, "subvp": -2.0}
    for sched in _std_schedules():
        slope, r2 = fit_singularity_slope(sched)
        want = targets[sched.kind]
        rows.append(CheckRow("singularity", f"{sched.kind}_slope", slope,
                             f"{want} +- 0.05", abs(slope - want) <= 0.05))
        rows.append(CheckRow("singularity", f"{sched.kind}_r2", r2, ">= 0.999",
                             r2 >= 0.999))
    return rows


def suite_nonlinear(n_bumps: int = 20, seed: int = 77) -> list:
    """Fast nonlinear checks: covariance bump-derivative oracle, unconditional
    zero mean of the divergence, and the affine-drift reduction."""
    rows = []
    spec = cubic_sde(sigma=1.0)
    grid = TimeGrid(0.0, 1.0, 1000)

    # bump-derivative agreement on random (path, node) pairs
    rng = aux_generator(seed)
    store = BrownianStore(seed, grid.n_steps, 1, grid.dt)
    worst = 0.0
    for _ in range(n_bumps):
        p = int(rng.integers(0, 64))
        k = int(rng.integers(50, grid.n_steps - 50))
        dw = store.increments(p, p + 1)
        traj = variation_trajectories(spec, grid, dw, np.array([[0.5]]))
        got = dgamma_malliavin(traj, k)[0]
        want = bump_dgamma(spec, grid, np.array([0.5]), seed, p, k, h=1e-3)
        rel = float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300))
        worst = max(worst, rel)
    rows.append(CheckRow("nonlinear", "bump_max_rel", worst, "<= 5e-2",
                         worst <= 5e-2))

    # unconditional mean of the divergence integrates to zero
    samples = skorokhod_nonlinear(spec, grid, np.array([0.0]), 20_000, seed + 1)
    x, dl = samples.masked()
    z = float(dl[:, 0].mean() / (dl[:, 0].std(ddof=1) / np.sqrt(len(dl))))
    rows.append(CheckRow("nonlinear", "zero_mean_zscore", z, "|z| <= 4",
                         abs(z) <= 4.0))

    # affine drift: full machinery reduces to the linear divergence
    vp = make_schedule("vp", beta_min=0.1, T=1.0)
    lin = linear_sde(vp, m=1)
    lin_nl = linear_sde(vp, m=1)
    lin_nl.hessian = lambda t, x: np.zeros(x.shape + (1, 1))
    lin_nl.linear = False
    red = skorokhod_nonlinear(lin_nl, grid, np.array([0.3]), 512, seed + 2)
    ens = simulate_forward(lin, grid, point_mass(0.3), 512, seed + 2,
                           store_trajectories=False)
    track = propagate_first_variation(ens)
    mall = malliavin_matrix(track, lin)
    from .linear import skorokhod_linear

    both = skorokhod_linear(ens, track, mall)
    gap = float(np.max(np.abs(red.delta - both["ito_track"])))
    rows.append(CheckRow("nonlinear", "linear_reduction_gap", gap, "<= 1e-9",
                         gap <= 1e-9))
    return rows


SUITES = {
    "linear-equivalence": suite_linear_equivalence,
    "covering": suite_covering,
    "lemma35": suite_lemma35,
    "singularity": suite_singularity,
    "nonlinear": suite_nonlinear,
}


def run_suite(name: str) -> list:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name]()
