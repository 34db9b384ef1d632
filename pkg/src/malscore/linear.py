"""Score functions for linear SDEs with additive noise.

For dX = b(t) X dt + sigma(t) dB the flow Jacobian Y_t is deterministic and
the marginal score is

    grad_y log p_t(y) = -gamma(t)^{-1} (y - Y_t E[X_0 | X_t = y]),

with gamma(t) the accumulated noise covariance.  The conditional expectation
provider is pluggable: exact Gaussian-mixture conditioning (oracle), a point
mass, or a trained regressor.  Transition-density score formulas for the
three standard schedules serve as independent oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import SingularTime
from .sde import PathEnsemble, Schedule, SdeSpec, TimeGrid
from .variation import (MalliavinMatrix, VariationTrack, closed_form_gamma_inv,
                        regularized_inverse)

T_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass
class GaussianMixturePrior:
    """Mixture of Gaussians over the initial condition."""

    weights: np.ndarray
    means: np.ndarray        # (K, m)
    covs: np.ndarray         # (K, m, m)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float)
        if self.covs.ndim == 2:
            self.covs = self.covs[None]
        if np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1 within 1e-12")

    @property
    def m(self) -> int:
        return self.means.shape[1]

    @classmethod
    def single(cls, mean, cov) -> "GaussianMixturePrior":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(np.array([1.0]), mean[None, :], cov[None])

    @classmethod
    def ring(cls, n_modes: int = 8, radius: float = 1.0,
             std: float = 0.1) -> "GaussianMixturePrior":
        ang = 2.0 * np.pi * np.arange(n_modes) / n_modes
        means = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        covs = np.tile(std**2 * np.eye(2), (n_modes, 1, 1))
        return cls(np.full(n_modes, 1.0 / n_modes), means, covs)

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.integers(0, len(self.weights), size=n) if np.allclose(
            self.weights, self.weights[0]) else rng.choice(
            len(self.weights), size=n, p=self.weights)
        chol = np.linalg.cholesky(self.covs + 1e-15 * np.eye(self.m))
        z = rng.standard_normal((n, self.m))
        return self.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


# ---------------------------------------------------------------------------
# Gaussian conditioning
# ---------------------------------------------------------------------------

def _component_stats(prior: GaussianMixturePrior, Y_t: np.ndarray,
                     gamma_t: np.ndarray):
    """Marginal mean/covariance of X_t per component: (Y mu_i, Y Sigma_i Y^T + gamma)."""
    Y_t = np.atleast_2d(Y_t)
    gamma_t = np.atleast_2d(gamma_t)
    mu_t = prior.means @ Y_t.T                                   # (K, m)
    S = Y_t @ prior.covs @ Y_t.T + gamma_t                       # (K, m, m)
    return mu_t, S

def _log_responsibilities(prior, y, mu_t, S):
    K, m = mu_t.shape
    y = np.atleast_2d(y)                                         # (Q, m)
    logs = np.empty((y.shape[0], K))
    solves = np.empty((K, y.shape[0], m))
    for i in range(K):
        sign, logdet = np.linalg.slogdet(S[i])
        diff = y - mu_t[i]
        sol = np.linalg.solve(S[i], diff.T).T
        solves[i] = sol
        logs[:, i] = np.log(prior.weights[i]) - 0.5 * (
            logdet + np.einsum("qm,qm->q", diff, sol) + m * np.log(2 * np.pi))
    return logs, solves


def exact_gaussian_posterior(prior: GaussianMixturePrior, t: float, y: np.ndarray,
                             Y_t: np.ndarray, gamma_t: np.ndarray) -> np.ndarray:
    """E[X_0 | X_t = y] by per-component Gaussian conditioning.

    Component posteriors mu_i + Sigma_i Y^T S_i^{-1} (y - Y mu_i) are combined
    with log-sum-exp stabilized responsibilities.  Accepts a batch of query
    points; returns the same leading shape.
    """
    Y_t = np.atleast_2d(Y_t)
    gamma_t = np.atleast_2d(gamma_t)
    y_in = np.asarray(y, dtype=float)
    y2 = np.atleast_2d(y_in)
    mu_t, S = _component_stats(prior, Y_t, gamma_t)
    logs, solves = _log_responsibilities(prior, y2, mu_t, S)
    peak = logs.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(peak)):
        warnings.warn("all mixture responsibilities underflowed; "
                      "falling back to the closest component", RuntimeWarning)
        idx = np.nanargmax(logs, axis=1)
        resp = np.zeros_like(logs)
        resp[np.arange(len(idx)), idx] = 1.0
    else:
        resp = np.exp(logs - peak)
        resp /= resp.sum(axis=1, keepdims=True)
    # per-component posterior mean of X_0: mu_i + Sig_i Y^T S_i^{-1}(y - Y mu_i)
    cross = prior.covs @ Y_t.T                                    # (K, m, m)
    post = prior.means[None] + np.einsum("kmj,kqj->qkm", cross, solves)
    mean = np.einsum("qk,qkm->qm", resp, post)
    return mean.reshape(y_in.shape) if y_in.ndim == 1 else mean


def mixture_score(prior: GaussianMixturePrior, y: np.ndarray, Y_t: np.ndarray,
                  gamma_t: np.ndarray) -> np.ndarray:
    """Closed-form score of the marginal mixture sum_i w_i N(Y mu_i, Y Sig_i Y^T + gamma)."""
    y_in = np.asarray(y, dtype=float)
    y2 = np.atleast_2d(y_in)
    mu_t, S = _component_stats(prior, np.atleast_2d(Y_t), np.atleast_2d(gamma_t))
    logs, solves = _log_responsibilities(prior, y2, mu_t, S)
    peak = logs.max(axis=1, keepdims=True)
    resp = np.exp(logs - peak)
    resp /= resp.sum(axis=1, keepdims=True)
    score = -np.einsum("qk,kqm->qm", resp, solves)
    return score.reshape(y_in.shape) if y_in.ndim == 1 else score


# ---------------------------------------------------------------------------
# transition-density oracles
# ---------------------------------------------------------------------------

def fokker_planck_score_oracle(schedule: Schedule, t: float, y, x) -> np.ndarray:
    """Score of the Gaussian transition density started from the point x.

    Formulas are written out per schedule rather than routed through the
    covariance helpers, so this is an independent code path.
    """
    if t <= 0:
        raise SingularTime("transition score undefined at t = 0")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    kind = schedule.kind
    if kind == "ve":
        ratio = schedule.sigma_max / schedule.sigma_min
        var = schedule.sigma_min**2 * (ratio ** (2.0 * t / schedule.T) - 1.0)
        return -(y - x) / var
    if kind in ("vp", "subvp"):
        B = schedule.B(t)
        mean = np.exp(-0.5 * B) * x
        if kind == "vp":
            return -(y - mean) / (1.0 - np.exp(-B))
        return -(y - mean) / (1.0 - np.exp(-B)) ** 2
    raise ValueError(f"no transition-density oracle for schedule {kind!r}")


# ---------------------------------------------------------------------------
# score field
# ---------------------------------------------------------------------------

@dataclass
class LinearScoreField:
    """Evaluator (t, y) -> score for a linear spec.

    gamma_inv / y_t providers are either closed form or nearest-node lookups
    in a quadrature track; cond_mean realizes E[X_0 | X_t = y].
    """

    schedule: Optional[Schedule]
    m: int
    gamma_inv: Callable          # t -> (m, m)
    y_t: Callable                # t -> (m, m)
    cond_mean: Callable          # (t, y[Q, m]) -> (Q, m)
    t_floor: float = T_FLOOR
    integer_mode: bool = False

    def score(self, t: float, y: np.ndarray) -> np.ndarray:
        floor = 1.0 - 1e-9 if self.integer_mode else self.t_floor
        if t < floor:
            raise SingularTime(f"score requested at t={t:g} below floor {floor:g}")
        y_in = np.asarray(y, dtype=float)
        y2 = np.atleast_2d(y_in)
        gi = self.gamma_inv(t)
        Yt = self.y_t(t)
        e0 = np.atleast_2d(self.cond_mean(t, y2))
        resid = y2 - e0 @ np.atleast_2d(Yt).T
        s = -resid @ np.atleast_2d(gi).T
        return s.reshape(y_in.shape) if y_in.ndim == 1 else s


def score_linear(field: LinearScoreField, t: float, y) -> np.ndarray:
    """Score of the marginal at (t, y); rejects t below the singularity floor."""
    return field.score(t, y)


def closed_form_providers(schedule: Schedule, m: int):
    def gamma_inv(t):
        return closed_form_gamma_inv(schedule, t, m)

    def y_t(t):
        return float(schedule.y_closed(t)) * np.eye(m)

    return gamma_inv, y_t


def quadrature_providers(track: VariationTrack, mall: MalliavinMatrix,
                         eps: Optional[float] = 0.0):
    """Nearest-node gamma^-1 (Tikhonov-regularized) and Y from a computed track."""
    if not track.shared:
        raise ValueError("quadrature providers need the shared deterministic track")
    grid = track.grid

    def gamma_inv(t):
        k = grid.nearest_node(t)
        if k == 0:
            raise SingularTime("gamma is zero at the first node")
        return regularized_inverse(mall.gamma[k], eps)

    def y_t(t):
        return track.Y[grid.nearest_node(t)]

    return gamma_inv, y_t


def oracle_field(schedule: Schedule, prior: GaussianMixturePrior, m: int = 1,
                 t_floor: float = T_FLOOR) -> LinearScoreField:
    """Exact-score field: closed-form covariance plus exact mixture conditioning."""
    gamma_inv, y_t = closed_form_providers(schedule, m)

    def cond_mean(t, y):
        gi = gamma_inv(t)
        return exact_gaussian_posterior(prior, t, y, y_t(t), np.linalg.inv(gi))

    return LinearScoreField(schedule, m, gamma_inv, y_t, cond_mean, t_floor)


def point_mass_field(schedule: Schedule, x0, m: int = 1,
                     t_floor: float = T_FLOOR) -> LinearScoreField:
    """Field for a point-mass initial condition: E[X_0 | .] = x0."""
    x0 = np.broadcast_to(np.atleast_1d(np.asarray(x0, dtype=float)), (m,))
    gamma_inv, y_t = closed_form_providers(schedule, m)

    def cond_mean(t, y):
        return np.tile(x0, (np.atleast_2d(y).shape[0], 1))

    return LinearScoreField(schedule, m, gamma_inv, y_t, cond_mean, t_floor)


def regressor_field(schedule: Schedule, model, m: int,
                    gamma_inv: Optional[Callable] = None,
                    y_t: Optional[Callable] = None,
                    t_floor: float = T_FLOOR,
                    integer_mode: bool = False) -> LinearScoreField:
    """Field whose conditional mean comes from a trained regressor."""
    from .mlp import predict

    if gamma_inv is None or y_t is None:
        gi_cf, yt_cf = closed_form_providers(schedule, m)
        gamma_inv = gamma_inv or gi_cf
        y_t = y_t or yt_cf

    def cond_mean(t, y):
        return predict(model, np.atleast_2d(y), t)

    return LinearScoreField(schedule, m, gamma_inv, y_t, cond_mean, t_floor,
                            integer_mode=integer_mode)


# ---------------------------------------------------------------------------
# discrete identities
# ---------------------------------------------------------------------------

def covering_identity_check(track: VariationTrack, mall: MalliavinMatrix,
                            spec: SdeSpec) -> np.ndarray:
    """M_{ik} = sum_t <D_t X^i, u_k> dt with u_k = sum_j gamma^{-1}(k,j) D_t X^j.

    Assembled with the same discrete inner product that built gamma, M is the
    identity up to inversion roundoff.
    """
    from .variation import gram_of_derivatives

    G = gram_of_derivatives(track, spec)
    gamma = mall.gamma[..., -1, :, :]
    # M = G gamma^{-1} (gamma symmetric)
    return np.linalg.solve(gamma.T, G.T).T


def _closed_flow_matrix(schedule, t: float, m: int):
    try:
        y = schedule.y_closed(t)
    except (NotImplementedError, AttributeError):
        return None
    y = np.asarray(y, dtype=float)
    return y if y.ndim == 2 else float(y) * np.eye(m)


def skorokhod_linear(ensemble: PathEnsemble, track: VariationTrack,
                     mall: MalliavinMatrix) -> dict:
    """Per-path divergence delta(u) for a linear spec, both evaluations.

    'ito' evaluates gamma^-1 Y_T int Y^-1 sigma dB on the stored increments
    with the closed-form flow (when the schedule has one), 'ito_track' with
    the discrete track flow (the same arithmetic the nonlinear machinery
    uses), and 'algebraic' is gamma^-1 (X_T - Y_T x0).  The ito/algebraic
    gap measures the discretization error and shrinks at first order in dt.
    """
    spec, grid = ensemble.spec, ensemble.grid
    if not spec.linear:
        raise ValueError("skorokhod_linear needs an affine-drift spec")
    if not track.shared:
        raise ValueError("linear specs carry a shared deterministic track")
    ts = grid.nodes()
    n, m, d = grid.n_steps, spec.m, spec.d
    if np.all(mall.gamma[-1] == 0.0):
        # no noise, no divergence
        zero = np.zeros((ensemble.n_paths, m))
        return {"ito": zero, "ito_track": zero.copy(),
                "algebraic": zero.copy(), "rms_gap": 0.0}
    # plain inverse; the jitter escalation only kicks in for degenerate gamma
    gamma_inv = regularized_inverse(mall.gamma[-1], eps=0.0)

    f_track = np.empty((n, m, d))
    for k in range(n):
        f_track[k] = track.Yinv[k] @ np.atleast_2d(spec.sigma(ts[k]))
    sched = spec.schedule
    YN_c = _closed_flow_matrix(sched, grid.t_end, m) if sched is not None else None
    if YN_c is not None:
        f_cont = np.empty((n, m, d))
        for k in range(n):
            yk = _closed_flow_matrix(sched, ts[k], m)
            f_cont[k] = np.linalg.solve(yk, np.atleast_2d(spec.sigma(ts[k])))
    else:
        YN_c, f_cont = track.Y[-1], f_track

    raw_c = np.zeros((ensemble.n_paths, m))
    raw_t = np.zeros((ensemble.n_paths, m))
    chunk = max(64, int(200_000_000 / max(n * d * 8, 1)))
    for lo in range(0, ensemble.n_paths, chunk):
        hi = min(lo + chunk, ensemble.n_paths)
        dw = ensemble.increments(lo, hi)
        raw_c[lo:hi] = np.einsum("kmd,ckd->cm", f_cont, dw)
        raw_t[lo:hi] = np.einsum("kmd,ckd->cm", f_track, dw)
    ito = raw_c @ (gamma_inv @ YN_c).T
    ito_track = raw_t @ (gamma_inv @ track.Y[-1]).T
    resid_T = ensemble.x_T - ensemble.x0 @ track.Y[-1].T
    algebraic = resid_T @ gamma_inv.T
    gap = ito - algebraic
    rms_gap = float(np.sqrt(np.mean(np.sum(gap**2, axis=1))))
    return {"ito": ito, "ito_track": ito_track, "algebraic": algebraic,
            "rms_gap": rms_gap}


def conditioned_bismut_score(delta: np.ndarray, x_T: np.ndarray, y,
                             half_width: float = 0.02, n_boot: int = 200,
                             seed: int = 0) -> dict:
    """-mean(delta | X_T in y +- half_width per coordinate), with bootstrap SE.

    The Monte Carlo realization of the conditional expectation in the
    divergence formula for the score.
    """
    from .rng import aux_generator

    y = np.atleast_1d(np.asarray(y, dtype=float))
    mask = np.all(np.abs(x_T - y) <= half_width, axis=1)
    count = int(mask.sum())
    if count == 0:
        return {"score": np.full(y.shape, np.nan), "se": np.full(y.shape, np.inf),
                "n_in_bin": 0, "half_width": half_width}
    vals = delta[mask]
    est = -vals.mean(axis=0)
    rng = aux_generator(seed)
    boots = np.empty((n_boot, vals.shape[1]))
    for b in range(n_boot):
        idx = rng.integers(0, count, size=count)
        boots[b] = -vals[idx].mean(axis=0)
    return {"score": est, "se": boots.std(axis=0, ddof=1), "n_in_bin": count,
            "half_width": half_width}
