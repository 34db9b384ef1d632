"""Monte Carlo score estimation for nonlinear SDEs with additive noise.

Each path carries a divergence value per state component,

    delta_k = F_k . int_0^T Yinv_t sigma(t) dB_t  -  int_0^T corr_k(t) dt,
    F_k = Y_T^T gamma_T^{-1} e_k,

whose conditional mean given X_T = y is minus the score at y.  The
correction integrand combines the noise derivative of the flow Jacobian,

    A_t = Z_T Yinv_t sigma(t) - Y_T Yinv_t Z_t Yinv_t sigma(t),

with the noise derivative of the covariance gamma_T, assembled from the
piecewise kernels A_t (Yinv_s sigma(s)) for s < t and B_{t,s} for s >= t.
The double time integrals reduce to one prefix and one suffix cumulative
sum per path, so a path costs O(n_steps * m^3 d) instead of O(n_steps^2).

Affine drift has Z = 0, hence A = B = 0, and delta collapses to the linear
module's gamma^{-1} Y_T int Yinv sigma dB.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NumericFailure
from .rng import BrownianStore, aux_generator
from .sde import DIVERGENCE_GUARD, SdeSpec, TimeGrid, _resolve_x0
from .variation import (first_variation_step, inverse_variation_step,
                        second_variation_step)

COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# per-chunk trajectory propagation (general dimension, desk scale)
# ---------------------------------------------------------------------------

@dataclass
class PathVariation:
    """Variation trajectories for a batch of paths."""

    grid: TimeGrid
    x_T: np.ndarray        # (c, m)
    Y: np.ndarray          # (c, n+1, m, m)
    Yinv: np.ndarray       # (c, n+1, m, m)
    Z: np.ndarray          # (c, n+1, m, m, m)
    sig_nodes: np.ndarray  # (n+1, m, d)
    diverged: np.ndarray   # (c,)


def variation_trajectories(spec: SdeSpec, grid: TimeGrid, dw: np.ndarray,
                           x0: np.ndarray) -> PathVariation:
    """Propagate X, Y, Yinv, Z for a batch of paths with given increments."""
    c = dw.shape[0]
    n, m, dt = grid.n_steps, spec.m, grid.dt
    ts = grid.nodes()
    sig_nodes = np.stack([np.atleast_2d(spec.sigma(t)) for t in ts])
    Y = np.empty((c, n + 1, m, m))
    Yinv = np.empty((c, n + 1, m, m))
    Z = np.zeros((c, n + 1, m, m, m))
    Y[:, 0] = np.eye(m)
    Yinv[:, 0] = np.eye(m)
    x = np.array(x0, dtype=float, copy=True)
    diverged = np.zeros(c, dtype=bool)
    for k in range(n):
        J = np.asarray(spec.jacobian(ts[k], x), dtype=float)
        if J.ndim == 2:
            J = np.broadcast_to(J, (c, m, m))
        if spec.hessian is not None:
            H = np.asarray(spec.hessian(ts[k], x), dtype=float)
            Z[:, k + 1] = second_variation_step(H, J, Y[:, k], Z[:, k], dt)
        Y[:, k + 1] = first_variation_step(J, Y[:, k], dt)
        Yinv[:, k + 1] = inverse_variation_step(J, Yinv[:, k], dt)
        x = x + spec.drift(ts[k], x) * dt + dw[:, k] @ sig_nodes[k].T
        bad = np.max(np.abs(x), axis=1) > DIVERGENCE_GUARD
        if np.any(bad):
            diverged |= bad
            x[diverged] = np.clip(x[diverged], -DIVERGENCE_GUARD, DIVERGENCE_GUARD)
    return PathVariation(grid=grid, x_T=x, Y=Y, Yinv=Yinv, Z=Z,
                         sig_nodes=sig_nodes, diverged=diverged)


def gamma_terminal(traj: PathVariation) -> np.ndarray:
    """Terminal covariance Y_T (int Yinv sigma sigma^T Yinv^T dt) Y_T^T, (c, m, m)."""
    V = np.einsum("cnij,njr->cnir", traj.Yinv, traj.sig_nodes)
    I_T = np.einsum("cnir,cnjr->cij", V[:, :-1], V[:, :-1]) * traj.grid.dt
    YN = traj.Y[:, -1]
    return YN @ I_T @ np.swapaxes(YN, -1, -2)


def substituted_ito_term(traj: PathVariation, dw: np.ndarray,
                         gamma_inv: Optional[np.ndarray] = None,
                         k: Optional[int] = None) -> np.ndarray:
    """F_k^T int Yinv_t sigma(t) dB_t with F_k = Y_T^T gamma^{-1} e_k.

    The integrand of the substituted integral is linear in the substituted
    variable, so evaluating once with the stored increments is exact.
    Returns all components (c, m), or (c,) when k is given.
    """
    V = np.einsum("cnij,njr->cnir", traj.Yinv, traj.sig_nodes)
    raw = np.einsum("cnir,cnr->ci", V[:, :-1], dw)
    if gamma_inv is None:
        gamma_inv = np.linalg.inv(gamma_terminal(traj))
    out = np.einsum("cki,cij,cj->ck", gamma_inv, traj.Y[:, -1], raw)
    return out if k is None else out[:, k]


# ---------------------------------------------------------------------------
# noise derivative of gamma at a single node (direct assembly; bump-test side)
# ---------------------------------------------------------------------------

def dgamma_malliavin(traj: PathVariation, t_index: int) -> np.ndarray:
    """Noise derivative D_t gamma_T at one perturbation node, shape (c, m, m, d).

    Direct O(n_steps) assembly over the two integration regions; the swept
    ensemble driver reproduces the same values for all nodes at once.
    """
    grid = traj.grid
    n, dt = grid.n_steps, grid.dt
    if not 0 <= t_index <= n:
        raise IndexError("t_index outside the grid")
    V = np.einsum("cnij,njr->cnir", traj.Yinv, traj.sig_nodes)      # (c,n+1,m,d)
    YN = traj.Y[:, -1]
    ZN = traj.Z[:, -1]
    W = np.einsum("cij,cnjr->cnir", YN, V)
    Vt = V[:, t_index]                                              # (c,m,d)
    YNYi_t = YN @ traj.Yinv[:, t_index]
    ZVt = np.einsum("cajk,ckl->cajl", traj.Z[:, t_index], Vt)
    A_t = (np.einsum("cijk,ckl->cijl", ZN, Vt)
           - np.einsum("cia,cajl->cijl", YNYi_t, ZVt))              # (c,m,m,d)

    out = np.zeros((traj.Y.shape[0], YN.shape[-1], YN.shape[-1],
                    traj.sig_nodes.shape[-1]))
    # s < t: D_t W_s = A_t Yinv_s sigma(s)
    if t_index > 0:
        lo = slice(0, t_index)
        dW_lo = np.einsum("cpjl,cnjr->cnprl", A_t, V[:, lo])
        out += np.einsum("cnprl,cnqr->cpql", dW_lo, W[:, lo]) * dt
    # s >= t: D_t W_s = B_{t,s}
    if t_index < n:
        hi = slice(t_index, n)
        YNYi_s = np.einsum("cij,cnjk->cnik", YN, traj.Yinv[:, hi])
        ZsVt = np.einsum("cnajk,ckl->cnajl", traj.Z[:, hi], Vt)
        YsYi_t = np.einsum("cnij,cjk->cnik", traj.Y[:, hi], traj.Yinv[:, t_index])
        C = ZsVt - np.einsum("cnia,cajl->cnijl", YsYi_t, ZVt)
        B_hi = (np.einsum("cpjl,cnjr->cnprl", A_t, V[:, hi])
                - np.einsum("cnpa,cnajl,cnjr->cnprl", YNYi_s, C, V[:, hi]))
        out += np.einsum("cnprl,cnqr->cpql", B_hi, W[:, hi]) * dt
    return out + np.swapaxes(out, 1, 2)


def dgamma_all_nodes(traj: PathVariation) -> np.ndarray:
    """D_t gamma_T at every grid node via the prefix/suffix sweeps,
    shape (c, n+1, m, m, d); node-wise identical to dgamma_malliavin."""
    grid = traj.grid
    dt = grid.dt
    V = np.einsum("cnij,njr->cnir", traj.Yinv, traj.sig_nodes)
    YN = traj.Y[:, -1]
    ZN = traj.Z[:, -1]
    W = np.einsum("cij,cnjr->cnir", YN, V)
    vw = np.einsum("cnjr,cnqr->cnjq", V, W)
    G = np.zeros_like(vw)
    np.cumsum(vw[:, :-1] * dt, axis=1, out=G[:, 1:])
    Gtot = G[:, -1].copy()
    sufG = Gtot[:, None] - G
    YNYi = np.einsum("cij,cnjk->cnik", YN, traj.Yinv)
    T1 = np.einsum("cnpa,cnajk->cnpjk", YNYi, traj.Z)
    E = np.einsum("cnpjk,cnjr,cnqr->cnpkq", T1, V, W)
    prefE = np.zeros_like(E)
    np.cumsum(E[:, :-1] * dt, axis=1, out=prefE[:, 1:])
    sufE = prefE[:, -1][:, None] - prefE
    ZV = np.einsum("cnajk,cnkl->cnajl", traj.Z, V)
    A = (np.einsum("cijk,cnkl->cnijl", ZN, V)
         - np.einsum("cnia,cnajl->cnijl", YNYi, ZV))
    dg = (np.einsum("cnpjl,cjq->cnpql", A, Gtot)
          - np.einsum("cnpkq,cnkl->cnpql", sufE, V)
          + np.einsum("cnpa,cnajl,cnjq->cnpql", YNYi, ZV, sufG))
    return dg + np.swapaxes(dg, 2, 3)


def bump_dgamma(spec: SdeSpec, grid: TimeGrid, x0_point, seed: int,
                path_index: int, t_index: int, h: float = 1e-3) -> np.ndarray:
    """Finite-difference oracle for D_t gamma_T: bump the stored Brownian
    increment at one node by +-h in each noise direction, re-run the whole
    path and variation stack, and difference the terminal covariance."""
    store = BrownianStore(seed, grid.n_steps, spec.d, grid.dt)
    dw0 = store.increments(path_index, path_index + 1)
    x0 = _resolve_x0(x0_point, 1, spec.m, seed) if not callable(x0_point) else None
    if x0 is None:
        raise ValueError("bump oracle needs a deterministic x0 point")
    out = np.empty((spec.m, spec.m, spec.d))
    for l in range(spec.d):
        gammas = []
        for s in (+h, -h):
            dw = dw0.copy()
            dw[0, t_index, l] += s
            traj = variation_trajectories(spec, grid, dw, x0)
            gammas.append(gamma_terminal(traj)[0])
        out[:, :, l] = (gammas[0] - gammas[1]) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# full divergence assembly
# ---------------------------------------------------------------------------

@dataclass
class SkorokhodSamples:
    """Per-path divergence values and diagnostics for one terminal horizon."""

    x_T: np.ndarray          # (n, m)
    delta: np.ndarray        # (n, m)
    ito: np.ndarray          # (n, m)
    correction: np.ndarray   # (n, m)
    valid: np.ndarray        # (n,)
    grid: TimeGrid
    seed: int
    n_diverged: int = 0

    def masked(self):
        return (self.x_T[self.valid], self.delta[self.valid])


def _assemble_delta_general(traj: PathVariation, dw: np.ndarray):
    """Swept assembly of (delta, ito, correction) for a batch, any m and d."""
    grid = traj.grid
    n, dt = grid.n_steps, grid.dt
    c, _, m, _ = traj.Y.shape
    V = np.einsum("cnij,njr->cnir", traj.Yinv, traj.sig_nodes)
    YN = traj.Y[:, -1]
    ZN = traj.Z[:, -1]
    W = np.einsum("cij,cnjr->cnir", YN, V)
    gamma = np.einsum("cnir,cnjr->cij", V[:, :-1], V[:, :-1]) * dt
    gamma = YN @ gamma @ np.swapaxes(YN, -1, -2)
    cond = np.linalg.cond(gamma)
    valid = np.isfinite(cond) & (cond < COND_LIMIT) & ~traj.diverged
    gamma_safe = np.where(valid[:, None, None], gamma, np.eye(m))
    ginv = np.linalg.inv(gamma_safe)

    ito_raw = np.einsum("cnir,cnr->ci", V[:, :-1], dw)
    ito = np.einsum("cki,cij,cj->ck", ginv, YN, ito_raw)

    # prefix G (exclusive) of V W^T dt, and its total
    vw = np.einsum("cnjr,cnqr->cnjq", V, W)
    G = np.zeros_like(vw)
    np.cumsum(vw[:, :-1] * dt, axis=1, out=G[:, 1:])
    Gtot = G[:, -1].copy()
    sufG = Gtot[:, None] - G

    # prefix of the s-integrand of the s >= t region's Z_s kernel
    YNYi = np.einsum("cij,cnjk->cnik", YN, traj.Yinv)
    T1 = np.einsum("cnpa,cnajk->cnpjk", YNYi, traj.Z)
    E = np.einsum("cnpjk,cnjr,cnqr->cnpkq", T1, V, W)
    prefE = np.zeros_like(E)
    np.cumsum(E[:, :-1] * dt, axis=1, out=prefE[:, 1:])
    sufE = prefE[:, -1][:, None] - prefE

    ZV = np.einsum("cnajk,cnkl->cnajl", traj.Z, V)
    A = (np.einsum("cijk,cnkl->cnijl", ZN, V)
         - np.einsum("cnia,cnajl->cnijl", YNYi, ZV))

    dg = (np.einsum("cnpjl,cjq->cnpql", A, Gtot)
          - np.einsum("cnpkq,cnkl->cnpql", sufE, V)
          + np.einsum("cnpa,cnajl,cnjq->cnpql", YNYi, ZV, sufG))
    dg = dg + np.swapaxes(dg, 2, 3)

    # correction integrand: V^{j,l} [ A^{i,j,l} ginv^{i,k}
    #                                 - (ginv Y_N)^{p,j} dg^{p,q,l} ginv^{q,k} ]
    part1 = np.einsum("cnijl,cik,cnjl->cnk", A, ginv, V)
    gy = np.einsum("cpi,cij->cpj", ginv, YN)
    part2 = np.einsum("cpj,cnpql,cqk,cnjl->cnk", gy, dg, ginv, V)
    corr = np.sum(part1[:, :-1] - part2[:, :-1], axis=1) * dt
    delta = ito - corr
    return delta, ito, corr, valid


def _scalar_chunk(spec: SdeSpec, grid: TimeGrid, dw: np.ndarray, x0: np.ndarray):
    """Fast m = d = 1 pipeline in time-major layout.

    Stores only the inverse Jacobian and second-variation source along the
    grid; Y is recovered from running products and Z from one cumulative sum
    (exact reformulations of the step recurrences).
    """
    n, dt = grid.n_steps, grid.dt
    ts = grid.nodes()
    sig = np.array([float(np.atleast_2d(spec.sigma(t))[0, 0]) for t in ts])
    dwT = np.ascontiguousarray(dw[:, :, 0].T)        # (n, c)
    c = dwT.shape[1]
    U = np.empty((n + 1, c))
    zsrc = np.empty((n + 1, c))
    U[0] = 1.0
    zsrc[0] = 0.0
    x = x0[:, 0].copy()
    y = np.ones(c)
    u = np.ones(c)
    ito = np.zeros(c)
    I = np.zeros(c)
    diverged = np.zeros(c, dtype=bool)
    for k in range(n):
        dwk = dwT[k]
        sk = sig[k]
        ito += u * (sk * dwk)
        I += (u * u) * (sk * sk * dt)
        J = np.asarray(spec.jacobian(ts[k], x[:, None]))[..., 0, 0]
        H = np.asarray(spec.hessian(ts[k], x[:, None]))[..., 0, 0, 0]
        step = 1.0 + J * dt
        u = u / step
        zsrc[k + 1] = H * (y * y) * (dt * u)
        U[k + 1] = u
        y = y * step
        x = x + np.asarray(spec.drift(ts[k], x[:, None]))[..., 0] * dt + sk * dwk
        bad = np.abs(x) > DIVERGENCE_GUARD
        if np.any(bad):
            diverged |= bad
            x[diverged] = np.clip(x[diverged], -DIVERGENCE_GUARD, DIVERGENCE_GUARD)
    x_T = x
    YN = y
    del dwT

    Z = np.cumsum(zsrc, axis=0, out=zsrc)
    Z /= U                                   # Z_k = Y_k * sum_{i<k} H Y^2 dt / Y_{i+1}
    ZN = Z[-1].copy()
    g = (YN * YN) * I
    valid = (g > 0) & np.isfinite(g) & ~diverged
    g = np.where(valid, g, 1.0)
    ginv = 1.0 / g

    P = U * U
    P *= sig[:, None] ** 2                   # P_k = (Yinv_k sigma_k)^2
    prefP = np.empty((n + 1, c))
    prefP[0] = 0.0
    np.cumsum(P[:-1], axis=0, out=prefP[1:])
    prefP *= dt
    totP = prefP[-1].copy()
    q = Z
    q *= U                                   # q = Z Yinv (reuses Z buffer)
    E = q * P
    prefE = np.empty((n + 1, c))
    prefE[0] = 0.0
    np.cumsum(E[:-1], axis=0, out=prefE[1:])
    prefE *= dt
    totE = prefE[-1].copy()
    del E

    # corr_t = ginv P [ (ZN - YN q) - 2 YN^2 ginv (ZN totP - YN totE - YN (q prefP - prefE)) ]
    inner = q * prefP
    inner -= prefE
    inner *= YN
    del prefP, prefE
    inner += YN * totE - ZN * totP
    inner *= -1.0
    brk = q
    brk *= -YN
    brk += ZN
    brk -= (2.0 * YN * YN * ginv) * inner
    del inner
    brk *= P
    brk *= ginv
    corr = np.sum(brk[:-1], axis=0) * dt
    ito_term = (YN * ginv) * ito
    delta = ito_term - corr
    return (x_T[:, None], delta[:, None], ito_term[:, None], corr[:, None],
            valid, int(diverged.sum()))


def skorokhod_nonlinear(spec: SdeSpec, grid: TimeGrid, x0, n_paths: int,
                        seed: int, chunk_bytes: float = 1.2e9,
                        max_diverged_frac: float = 0.01) -> SkorokhodSamples:
    """Simulate an ensemble and compute per-path divergence samples.

    Paths whose state exceeds the overflow guard or whose covariance is
    ill-conditioned are flagged invalid; more than ``max_diverged_frac``
    diverged paths aborts the run.
    """
    if spec.m > 4:
        raise ValueError("dense tensor assembly budgeted for m <= 4")
    n, m, d = grid.n_steps, spec.m, spec.d
    store = BrownianStore(seed, n, d, grid.dt)
    x0_arr = _resolve_x0(x0, n_paths, m, seed)

    scalar = (m == 1 and d == 1 and spec.hessian is not None)
    per_path = (n + 1) * 8 * (6 if scalar else 8 * m * m * max(m, d))
    chunk = max(16, min(n_paths, int(chunk_bytes / max(per_path, 1))))

    x_T = np.empty((n_paths, m))
    delta = np.empty((n_paths, m))
    ito = np.empty((n_paths, m))
    corr = np.empty((n_paths, m))
    valid = np.zeros(n_paths, dtype=bool)
    n_div = 0
    # overflow in diverged paths is expected and resolved by the valid mask
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, n_paths, chunk):
            hi = min(lo + chunk, n_paths)
            dw = store.increments(lo, hi)
            if scalar:
                xt, dl, it, co, ok, ndiv = _scalar_chunk(spec, grid, dw,
                                                         x0_arr[lo:hi])
            else:
                traj = variation_trajectories(spec, grid, dw, x0_arr[lo:hi])
                dl, it, co, ok = _assemble_delta_general(traj, dw)
                xt = traj.x_T
                ndiv = int(traj.diverged.sum())
            x_T[lo:hi], delta[lo:hi], ito[lo:hi], corr[lo:hi] = xt, dl, it, co
            valid[lo:hi] = ok
            n_div += ndiv
    if n_div > max_diverged_frac * n_paths:
        raise NumericFailure(
            f"{n_div}/{n_paths} paths diverged (> {max_diverged_frac:.0%})")
    valid &= np.all(np.isfinite(delta), axis=1) & np.all(np.isfinite(x_T), axis=1)
    return SkorokhodSamples(x_T=x_T, delta=delta, ito=ito, correction=corr,
                            valid=valid, grid=grid, seed=seed, n_diverged=n_div)


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    """Silverman's rule of thumb per coordinate:
    0.9 min(sigma_hat, IQR/1.34) n^(-1/5)."""
    x = np.atleast_2d(x)
    n = x.shape[0]
    sd = x.std(axis=0, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    spread = np.minimum(sd, (q75 - q25) / 1.34)
    return 0.9 * np.where(spread > 0, spread, sd) * n ** (-0.2)


@dataclass
class ConditionalEstimator:
    """Nadaraya-Watson settings for E[delta | X_T = y]."""

    bandwidth: Optional[np.ndarray] = None   # per coordinate; None -> Silverman
    bandwidth_scale: float = 1.0
    min_ess: float = 50.0
    n_boot: int = 200
    seed: int = 0


def conditional_score(samples: SkorokhodSamples, ys,
                      estimator: Optional[ConditionalEstimator] = None) -> dict:
    """Kernel-conditioned score estimates -E[delta | X_T = y] on a query grid.

    Returns score (Q, m), bootstrap standard errors (Q, m), effective sample
    sizes and a low-confidence flag per query point.
    """
    est = estimator or ConditionalEstimator()
    x, dl = samples.masked()
    if len(x) < 1000:
        raise ValueError("need at least 1e3 valid divergence samples")
    ys2 = np.asarray(ys, dtype=float).reshape(-1, samples.x_T.shape[1])
    h = est.bandwidth if est.bandwidth is not None else silverman_bandwidth(x)
    h = np.maximum(np.atleast_1d(h) * est.bandwidth_scale, 1e-12)

    Q = ys2.shape[0]
    m = dl.shape[1]
    n = len(x)
    wmat = np.empty((Q, n))
    for qi in range(Q):
        z = (x - ys2[qi]) / h
        wmat[qi] = np.exp(-0.5 * np.sum(z * z, axis=1))
    sw = wmat.sum(axis=1)
    ess = sw**2 / np.maximum(np.einsum("qn,qn->q", wmat, wmat), 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = -np.einsum("qn,nm->qm", wmat, dl) / sw[:, None]

        rng = aux_generator(est.seed)
        boots = np.empty((est.n_boot, Q, m))
        wd = wmat[:, :, None] * dl[None, :, :]
        for b in range(est.n_boot):
            counts = np.bincount(rng.integers(0, n, size=n),
                                 minlength=n).astype(float)
            bsw = wmat @ counts
            boots[b] = -np.einsum("qnm,n->qm", wd, counts) / bsw[:, None]
        se = boots.std(axis=0, ddof=1)
    flagged = ess < est.min_ess
    return {"score": score, "se": se, "ess": ess, "flagged": flagged,
            "bandwidth": h}


# ---------------------------------------------------------------------------
# score field backed by divergence ensembles (for the reverse sampler)
# ---------------------------------------------------------------------------

class NonlinearMCField:
    """Score evaluator for a nonlinear spec, precomputed on a set of horizons.

    For each requested horizon the ensemble is re-simulated to that time and
    the divergence samples cached; queries snap to the nearest horizon and
    are answered with the kernel-conditioned estimate.
    """

    def __init__(self, spec: SdeSpec, grid: TimeGrid, x0, n_paths: int,
                 seed: int, horizons: Optional[Sequence[float]] = None,
                 estimator: Optional[ConditionalEstimator] = None):
        self.spec = spec
        self.grid = grid
        self.estimator = estimator or ConditionalEstimator()
        if horizons is None:
            horizons = np.linspace(grid.t_end / 10.0, grid.t_end, 10)
        self.horizons = np.asarray(sorted(horizons), dtype=float)
        self._samples = {}
        for i, t in enumerate(self.horizons):
            k = max(1, grid.nearest_node(t))
            sub = TimeGrid(grid.t0, grid.t0 + k * grid.dt, k, grid.integer_mode)
            self._samples[i] = skorokhod_nonlinear(
                spec, sub, x0, n_paths, seed + i)

    def score(self, t: float, y: np.ndarray) -> np.ndarray:
        i = int(np.argmin(np.abs(self.horizons - t)))
        out = conditional_score(self._samples[i], np.atleast_2d(y), self.estimator)
        return out["score"].reshape(np.asarray(y, dtype=float).shape)
