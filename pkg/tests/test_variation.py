import numpy as np
import pytest

from malscore.errors import NumericFailure, SingularTime
from malscore.sde import (TimeGrid, cubic_sde, linear_sde, make_schedule,
                          point_mass, simulate_forward)
from malscore.variation import (closed_form_gamma_inv, fit_singularity_slope,
                                gram_of_derivatives, malliavin_matrix,
                                propagate_first_variation,
                                propagate_second_variation, regularized_inverse)


def _track(schedule, n_steps, m=1):
    spec = linear_sde(schedule, m=m)
    ens = simulate_forward(spec, TimeGrid(0.0, schedule.T, n_steps),
                           point_mass(np.zeros(m)), 1, 0,
                           store_trajectories=False)
    return spec, ens, propagate_first_variation(ens)


# ---------------------------------------------------------------------------
# first variation
# ---------------------------------------------------------------------------

def test_zero_drift_flow_is_identity(ve):
    _, _, track = _track(ve, 200)
    assert np.all(track.Y == np.eye(1))
    assert np.all(track.Yinv == np.eye(1))


def test_vp_flow_matches_exponential(vp):
    _, _, track = _track(vp, 100_000)
    assert track.Y[-1, 0, 0] == pytest.approx(np.exp(-0.05), abs=1e-4)


def test_orthogonality_drift_bound(all_schedules):
    # propagated inverse stays within 1e-8 of the true inverse at dt = 1e-4
    for sched in all_schedules:
        _, _, track = _track(sched, 10_000)
        assert track.orthogonality_drift() <= 1e-8


def test_cubic_flow_positive_and_orthogonal():
    spec = cubic_sde(sigma=1.0)
    grid = TimeGrid(0.0, 1.0, 500)
    ens = simulate_forward(spec, grid, point_mass(0.5), 50, 2)
    track = propagate_first_variation(ens)
    assert np.all(track.Y[..., 0, 0] > 0)
    assert track.orthogonality_drift() <= 1e-8


# ---------------------------------------------------------------------------
# second variation
# ---------------------------------------------------------------------------

def test_second_variation_rejected_for_linear(vp):
    spec, ens, track = _track(vp, 10)
    with pytest.raises(ValueError):
        propagate_second_variation(ens, track)


def test_second_variation_zero_at_fixed_point():
    # odd drift, deterministic path pinned at the attractor
    spec = cubic_sde(sigma=0.0)
    grid = TimeGrid(0.0, 1.0, 200)
    ens = simulate_forward(spec, grid, point_mass(0.0), 1, 0)
    track = propagate_second_variation(ens, propagate_first_variation(ens))
    assert np.all(track.Z == 0.0)


def test_second_variation_finite_difference():
    # deterministic flow: Z_T equals d/dx0 of Y_T by central differences
    spec = cubic_sde(sigma=0.0)
    grid = TimeGrid(0.0, 0.5, 5000)
    h = 1e-4

    def flow_jac(x0):
        ens = simulate_forward(spec, grid, point_mass(x0), 1, 0)
        return propagate_first_variation(ens).Y[0, -1, 0, 0]

    ens = simulate_forward(spec, grid, point_mass(1.0), 1, 0)
    track = propagate_second_variation(ens, propagate_first_variation(ens))
    z = track.Z[0, -1, 0, 0, 0]
    fd = (flow_jac(1.0 + h) - flow_jac(1.0 - h)) / (2 * h)
    assert z == pytest.approx(fd, rel=1e-3)


# ---------------------------------------------------------------------------
# covariance
# ---------------------------------------------------------------------------

def test_gamma_zero_at_t0(vp):
    spec, _, track = _track(vp, 100)
    mall = malliavin_matrix(track, spec)
    assert np.all(mall.gamma[0] == 0.0)
    assert np.all(np.linalg.eigvalsh(mall.gamma[-1]) >= 0.0)


def test_gamma_quadrature_matches_closed_forms(ve, subvp):
    for sched, target in ((ve, 2499.9999), (subvp, (1 - np.exp(-0.1)) ** 2)):
        spec, _, track = _track(sched, 10_000)
        mall = malliavin_matrix(track, spec)
        assert mall.gamma[-1][0, 0] == pytest.approx(target, rel=1e-3)


def test_gamma_quadrature_convergence_order(vp):
    errs = []
    dts = [4e-3, 2e-3, 1e-3, 5e-4]
    target = vp.gamma_closed(1.0)
    for dt in dts:
        spec, _, track = _track(vp, int(round(1.0 / dt)))
        mall = malliavin_matrix(track, spec)
        errs.append(abs(mall.gamma[-1][0, 0] - target) / target)
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert order >= 0.9


def test_gamma_matches_direct_gram(vp):
    spec, _, track = _track(vp, 1000, m=1)
    mall = malliavin_matrix(track, spec)
    G = gram_of_derivatives(track, spec)
    assert np.max(np.abs(G - mall.gamma[-1])) <= 1e-12 * max(1.0, G[0, 0])


def test_per_path_gamma_matches_direct_assembly():
    # nonlinear drift: per-path quadrature gamma vs the divergence module's
    # independent terminal assembly
    from malscore.nonlinear import gamma_terminal, variation_trajectories

    spec = cubic_sde(sigma=1.0)
    grid = TimeGrid(0.0, 1.0, 300)
    ens = simulate_forward(spec, grid, point_mass(0.4), 16, 6)
    track = propagate_second_variation(ens, propagate_first_variation(ens))
    mall = malliavin_matrix(track, spec)
    assert mall.gamma.shape == (16, 301, 1, 1)
    traj = variation_trajectories(spec, grid, ens.increments(0, 16),
                                  ens.x0)
    direct = gamma_terminal(traj)
    assert np.max(np.abs(mall.gamma[:, -1] - direct)) <= 1e-12


def test_terminal_covariance_matches_empirical(vp):
    spec = linear_sde(vp, m=1)
    grid = TimeGrid(0.0, 1.0, 1000)
    ens = simulate_forward(spec, grid, point_mass(0.0), 100_000, 21,
                           store_trajectories=False)
    track = propagate_first_variation(ens)
    gamma = malliavin_matrix(track, spec).gamma[-1][0, 0]
    v = ens.x_T[:, 0].var(ddof=1)
    se = v * np.sqrt(2.0 / (len(ens.x_T) - 1))
    assert abs(v - gamma) < 5 * se


# ---------------------------------------------------------------------------
# closed forms and inversion
# ---------------------------------------------------------------------------

def test_closed_form_gamma_inv_values(ve, vp, subvp):
    assert closed_form_gamma_inv(vp, 1.0)[0, 0] == pytest.approx(10.508331944775)
    assert closed_form_gamma_inv(ve, 1.0)[0, 0] == pytest.approx(4.000000159999e-4)
    assert closed_form_gamma_inv(subvp, 1.0)[0, 0] == pytest.approx(110.42504026)


def test_closed_form_singular_at_zero(vp):
    with pytest.raises(SingularTime):
        closed_form_gamma_inv(vp, 0.0)


def test_regularized_inverse():
    assert np.allclose(regularized_inverse(np.eye(2), eps=0.0), np.eye(2))
    out = regularized_inverse(np.zeros((1, 1)), eps=1e-6)
    assert out[0, 0] == pytest.approx(1e6)
    g = np.diag([2499.9999, 2499.9999])
    inv = regularized_inverse(g, eps=0.0)
    assert np.allclose(np.diag(inv), 4.000000159999e-4)


def test_regularized_inverse_escalation_failure():
    bad = np.array([[np.nan, 0.0], [0.0, 1.0]])
    with pytest.raises(NumericFailure):
        regularized_inverse(bad)


def test_singularity_slopes(all_schedules):
    targets = {"ve": -1.0, "vp": -1.0, "subvp": -2.0}
    for sched in all_schedules:
        slope, r2 = fit_singularity_slope(sched)
        assert abs(slope - targets[sched.kind]) <= 0.05
        assert r2 >= 0.999


def test_singularity_grid_validation(vp):
    with pytest.raises(ValueError):
        fit_singularity_slope(vp, t_grid=np.logspace(-4, -2, 5))
    with pytest.raises(ValueError):
        fit_singularity_slope(vp, t_grid=np.logspace(-5, -2, 9))
