"""First/second variation processes and the path-noise covariance matrix.

The first variation Y_t solves dY = J(t, X_t) Y dt (the flow Jacobian), its
inverse is propagated by the discrete inverse update Yinv_{k+1} =
Yinv_k (I + J dt)^{-1}, and the second variation Z_t (a third-order tensor,
zero for affine drift) solves dZ = [H (Y (x) Y) + J Z] dt.  The covariance
gamma_k = Y_k I_k Y_k^T accumulates I_k by the left-rectangle rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericFailure, SingularTime
from .sde import PathEnsemble, Schedule, SdeSpec, TimeGrid

EPS_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# step kernels (shared with the nonlinear Monte Carlo driver)
# ---------------------------------------------------------------------------

def first_variation_step(J: np.ndarray, Y: np.ndarray, dt: float) -> np.ndarray:
    """Euler update Y + J Y dt; J broadcastable (..., m, m)."""
    return Y + (J @ Y) * dt


def inverse_variation_step(J: np.ndarray, Yinv: np.ndarray, dt: float) -> np.ndarray:
    """Update Yinv_{k+1} = Yinv_k (I + J dt)^{-1}.

    This is the exact inverse of the Euler flow step, so Y_k Yinv_k stays at
    the identity to rounding; a raw Euler update of the inverse ODE drifts by
    O(|J|^2 dt) per unit time, which breaks the 1e-8 health bound.
    """
    m = Yinv.shape[-1]
    A = np.broadcast_to(np.eye(m), Yinv.shape) + J * dt
    if m == 1:
        return Yinv / A
    At = np.swapaxes(A, -1, -2)
    return np.swapaxes(np.linalg.solve(At, np.swapaxes(Yinv, -1, -2)), -1, -2)


def second_variation_step(H: np.ndarray, J: np.ndarray, Y: np.ndarray,
                          Z: np.ndarray, dt: float) -> np.ndarray:
    """Euler update of dZ^{i,p,q} = [H^{i,j,k} Y^{j,p} Y^{k,q} + J^{i,r} Z^{r,p,q}] dt."""
    hyy = np.einsum("...ijk,...jp,...kq->...ipq", H, Y, Y)
    jz = np.einsum("...ir,...rpq->...ipq", J, Z)
    return Z + (hyy + jz) * dt


# ---------------------------------------------------------------------------
# tracks
# ---------------------------------------------------------------------------

@dataclass
class VariationTrack:
    """Y, Yinv (and optionally Z) along the grid.

    For affine drift the track is deterministic and shared by every path
    (arrays shaped (n_steps+1, m, m)); otherwise it is per path with a
    leading path axis.
    """

    grid: TimeGrid
    Y: np.ndarray
    Yinv: np.ndarray
    Z: Optional[np.ndarray] = None
    shared: bool = True

    def orthogonality_drift(self) -> float:
        """max over nodes of ||Y Yinv - I||_max, a propagation health metric."""
        prod = np.einsum("...ij,...jk->...ik", self.Y, self.Yinv)
        eye = np.eye(self.Y.shape[-1])
        return float(np.max(np.abs(prod - eye)))


def propagate_first_variation(ensemble: PathEnsemble) -> VariationTrack:
    """Propagate Y and Yinv along the ensemble's grid.

    Affine drift admits a single deterministic track; nonlinear drift needs
    the stored trajectories and yields one track per path.
    """
    spec, grid = ensemble.spec, ensemble.grid
    n, m, dt = grid.n_steps, spec.m, grid.dt
    ts = grid.nodes()
    if spec.linear:
        Y = np.empty((n + 1, m, m))
        Yinv = np.empty((n + 1, m, m))
        Y[0] = np.eye(m)
        Yinv[0] = np.eye(m)
        x_dummy = np.zeros((1, m))
        for k in range(n):
            J = np.atleast_2d(np.asarray(spec.jacobian(ts[k], x_dummy), dtype=float))
            J = J.reshape(m, m)
            Y[k + 1] = first_variation_step(J, Y[k], dt)
            Yinv[k + 1] = inverse_variation_step(J, Yinv[k], dt)
        return VariationTrack(grid=grid, Y=Y, Yinv=Yinv, shared=True)

    if ensemble.X is None:
        raise ValueError("nonlinear variation track needs stored trajectories")
    npaths = ensemble.n_paths
    Y = np.empty((npaths, n + 1, m, m))
    Yinv = np.empty((npaths, n + 1, m, m))
    Y[:, 0] = np.eye(m)
    Yinv[:, 0] = np.eye(m)
    for k in range(n):
        J = _jac_batch(spec, ts[k], ensemble.X[:, k])
        Y[:, k + 1] = first_variation_step(J, Y[:, k], dt)
        Yinv[:, k + 1] = inverse_variation_step(J, Yinv[:, k], dt)
    return VariationTrack(grid=grid, Y=Y, Yinv=Yinv, shared=False)


def propagate_second_variation(ensemble: PathEnsemble,
                               track: VariationTrack) -> VariationTrack:
    """Propagate the second variation Z along each path of a nonlinear spec."""
    spec, grid = ensemble.spec, ensemble.grid
    if spec.linear:
        raise ValueError("second variation is identically zero for affine drift; skip it")
    if ensemble.X is None:
        raise ValueError("second variation needs stored trajectories")
    n, m, dt = grid.n_steps, spec.m, grid.dt
    ts = grid.nodes()
    Z = np.zeros((ensemble.n_paths, n + 1, m, m, m))
    for k in range(n):
        J = _jac_batch(spec, ts[k], ensemble.X[:, k])
        H = np.asarray(spec.hessian(ts[k], ensemble.X[:, k]), dtype=float)
        Z[:, k + 1] = second_variation_step(H, J, track.Y[:, k], Z[:, k], dt)
    track.Z = Z
    return track


def _jac_batch(spec: SdeSpec, t: float, x: np.ndarray) -> np.ndarray:
    J = np.asarray(spec.jacobian(t, x), dtype=float)
    if J.ndim == 2:
        J = np.broadcast_to(J, (x.shape[0],) + J.shape)
    return J


# ---------------------------------------------------------------------------
# noise covariance
# ---------------------------------------------------------------------------

@dataclass
class MalliavinMatrix:
    """Accumulated covariance integral I_k and gamma_k = Y_k I_k Y_k^T per node."""

    grid: TimeGrid
    I: np.ndarray
    gamma: np.ndarray
    shared: bool = True

    def gamma_at(self, t: float) -> np.ndarray:
        return self.gamma[..., self.grid.nearest_node(t), :, :]


def malliavin_matrix(track: VariationTrack, spec: SdeSpec) -> MalliavinMatrix:
    """Accumulate I_{k+1} = I_k + Yinv_k sigma sigma^T Yinv_k^T dt (left rule)
    and form gamma_k = Y_k I_k Y_k^T at every node."""
    grid = track.grid
    n, dt = grid.n_steps, grid.dt
    ts = grid.nodes()
    lead = track.Y.shape[:-3]  # () shared, (n_paths,) per path
    m = spec.m
    I = np.zeros(lead + (n + 1, m, m))
    gamma = np.zeros_like(I)
    for k in range(n):
        sig = np.atleast_2d(spec.sigma(ts[k]))
        vs = track.Yinv[..., k, :, :] @ sig  # (..., m, d)
        I[..., k + 1, :, :] = I[..., k, :, :] + (vs @ np.swapaxes(vs, -1, -2)) * dt
        Yk = track.Y[..., k + 1, :, :]
        gamma[..., k + 1, :, :] = Yk @ I[..., k + 1, :, :] @ np.swapaxes(Yk, -1, -2)
    return MalliavinMatrix(grid=grid, I=I, gamma=gamma, shared=track.shared)


def closed_form_gamma_inv(schedule: Schedule, t: float, m: int = 1) -> np.ndarray:
    """Closed-form inverse covariance for the ve/vp/subvp schedules."""
    if schedule.kind not in ("ve", "vp", "subvp"):
        raise ValueError("closed form available for ve/vp/subvp schedules only")
    return float(schedule.gamma_inv_closed(t)) * np.eye(m)


def default_epsilon(gamma: np.ndarray) -> float:
    m = gamma.shape[-1]
    return max(1e-8 * float(np.trace(gamma)) / m, EPS_FLOOR)


def regularized_inverse(gamma: np.ndarray, eps: Optional[float] = None) -> np.ndarray:
    """(gamma + eps I)^{-1} via Cholesky with jitter escalation (x10, 3 retries)."""
    gamma = np.asarray(gamma, dtype=float)
    m = gamma.shape[-1]
    if eps is None:
        eps = default_epsilon(gamma)
    eye = np.eye(m)
    attempt = float(eps)
    for trial in range(4):
        try:
            cf = cho_factor(gamma + attempt * eye, lower=True)
            return cho_solve(cf, eye)
        except np.linalg.LinAlgError:
            attempt = max(attempt, EPS_FLOOR) * 10.0
        except ValueError as exc:  # non-finite input
            raise NumericFailure(f"regularized inverse got invalid matrix: {exc}")
    raise NumericFailure(
        f"covariance factorization failed after jitter escalation to {attempt:g}")


def fit_singularity_slope(schedule: Schedule, t_grid: Optional[np.ndarray] = None,
                          m: int = 1) -> tuple[float, float]:
    """Least-squares slope of log ||gamma^{-1}(t)||_2 against log t near t = 0.

    Returns (slope, r_squared).  The three standard schedules diverge like
    t^{-1} (ve, vp) and t^{-2} (subvp).
    """
    if t_grid is None:
        t_grid = np.logspace(-4, -2, 9)
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 8:
        raise ValueError("need at least 8 points for the slope fit")
    if np.any(t_grid < 1e-4 - 1e-15) or np.any(t_grid > 1e-2 + 1e-15):
        raise ValueError("t_grid must lie inside [1e-4, 1e-2]")
    norms = np.array([np.linalg.norm(closed_form_gamma_inv(schedule, t, m), 2)
                      for t in t_grid])
    if not np.all(np.isfinite(norms)):
        raise NumericFailure("gamma^-1 non-finite on the fit grid")
    x, y = np.log(t_grid), np.log(norms)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), r2


def gram_of_derivatives(track: VariationTrack, spec: SdeSpec) -> np.ndarray:
    """sum_k D_k D_k^T dt with D_k = Y_N Yinv_k sigma(t_k), a direct assembly of
    the terminal covariance used to cross-check the incremental accumulation."""
    grid = track.grid
    ts = grid.nodes()
    YN = track.Y[..., -1, :, :]
    G = np.zeros(track.Y.shape[:-3] + (spec.m, spec.m))
    for k in range(grid.n_steps):
        sig = np.atleast_2d(spec.sigma(ts[k]))
        D = YN @ track.Yinv[..., k, :, :] @ sig
        G = G + (D @ np.swapaxes(D, -1, -2)) * grid.dt
    return G
