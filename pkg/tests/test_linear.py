import numpy as np
import pytest

from malscore.errors import SingularTime
from malscore.linear import (GaussianMixturePrior, conditioned_bismut_score,
                             covering_identity_check, exact_gaussian_posterior,
                             fokker_planck_score_oracle, mixture_score,
                             oracle_field, point_mass_field, score_linear,
                             skorokhod_linear)
from malscore.rng import aux_generator
from malscore.sde import (ConstLinearSchedule, TimeGrid, gaussian_x0, linear_sde,
                          make_schedule, point_mass, simulate_forward)
from malscore.variation import malliavin_matrix, propagate_first_variation


# ---------------------------------------------------------------------------
# transition-density oracles
# ---------------------------------------------------------------------------

def test_fp_score_zero_at_mean(vp):
    x = 1.3
    mean = np.exp(-0.05) * x
    assert fokker_planck_score_oracle(vp, 1.0, mean, x) == pytest.approx(0.0)


def test_fp_score_values(vp, subvp):
    got = fokker_planck_score_oracle(vp, 1.0, 0.0, 1.0)
    assert got == pytest.approx(np.exp(-0.05) / (1 - np.exp(-0.1)))
    assert got == pytest.approx(9.9958345, rel=1e-6)
    got = fokker_planck_score_oracle(subvp, 1.0, 0.1, 0.0)
    assert got == pytest.approx(-0.1 / (1 - np.exp(-0.1)) ** 2)
    assert got == pytest.approx(-11.042504, rel=1e-6)


def test_fp_score_rejects_t0(vp):
    with pytest.raises(SingularTime):
        fokker_planck_score_oracle(vp, 0.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# point-mass score field
# ---------------------------------------------------------------------------

def test_point_mass_score_equals_transition_score(all_schedules):
    for sched in all_schedules:
        field = point_mass_field(sched, 1.0)
        for t in (0.1, 0.5, 1.0):
            for y in (-2.0, -0.3, 0.9, 2.0):
                got = score_linear(field, t, np.array([y]))[0]
                want = fokker_planck_score_oracle(sched, t, y, 1.0)
                assert got == pytest.approx(want, rel=1e-12)


def test_ve_score_example(ve):
    field = point_mass_field(ve, 0.0)
    got = score_linear(field, 1.0, np.array([1.0]))[0]
    assert got == pytest.approx(-4.000000159999e-4, rel=1e-9)


def test_score_rejects_below_floor(vp):
    field = point_mass_field(vp, 0.0)
    with pytest.raises(SingularTime):
        score_linear(field, 0.0, np.array([1.0]))
    with pytest.raises(SingularTime):
        score_linear(field, 1e-5, np.array([1.0]))


# ---------------------------------------------------------------------------
# exact Gaussian-mixture conditioning
# ---------------------------------------------------------------------------

def test_posterior_point_mass_component():
    prior = GaussianMixturePrior.single(0.7, 0.0)
    mean = exact_gaussian_posterior(prior, 1.0, np.array([[5.0]]),
                                    np.eye(1) * 0.9, np.eye(1) * 0.2)
    assert mean[0, 0] == pytest.approx(0.7)


def test_posterior_symmetric_modes_cancel():
    prior = GaussianMixturePrior(np.array([0.5, 0.5]),
                                 np.array([[1.0], [-1.0]]),
                                 np.tile(0.04 * np.eye(1), (2, 1, 1)))
    mean = exact_gaussian_posterior(prior, 1.0, np.array([[0.0]]),
                                    np.eye(1) * 0.9, np.eye(1) * 0.3)
    assert mean[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_posterior_gaussian_formula(vp):
    # unit Gaussian prior: E[X0 | X_t = y] = a s0^2 y / (a^2 s0^2 + gamma),
    # verified against a binned brute-force conditional mean in development
    a = np.exp(-0.05)
    gamma = 1 - np.exp(-0.1)
    prior = GaussianMixturePrior.single(0.0, 1.0)
    for y in (-1.5, 0.4, 1.0):
        got = exact_gaussian_posterior(prior, 1.0, np.array([[y]]),
                                       np.eye(1) * a, np.eye(1) * gamma)[0, 0]
        assert got == pytest.approx(a * y / (a**2 + gamma), rel=1e-12)


def test_posterior_brute_force_binned(vp):
    # direct sampling of (X0, X1): conditional mean inside a +-0.01 bin
    rng = aux_generator(123)
    a, g = np.exp(-0.05), 1 - np.exp(-0.1)
    x0 = rng.standard_normal(1_000_000)
    x1 = a * x0 + np.sqrt(g) * rng.standard_normal(1_000_000)
    sel = np.abs(x1 - 1.0) < 0.01
    prior = GaussianMixturePrior.single(0.0, 1.0)
    want = exact_gaussian_posterior(prior, 1.0, np.array([[1.0]]),
                                    np.eye(1) * a, np.eye(1) * g)[0, 0]
    se = x0[sel].std(ddof=1) / np.sqrt(sel.sum())
    assert abs(x0[sel].mean() - want) < 4 * se


def test_posterior_underflow_fallback():
    prior = GaussianMixturePrior(np.array([0.5, 0.5]),
                                 np.array([[1.0], [-1.0]]),
                                 np.tile(0.01 * np.eye(1), (2, 1, 1)))
    with pytest.warns(RuntimeWarning), np.errstate(over="ignore"):
        mean = exact_gaussian_posterior(prior, 1.0, np.array([[1e200]]),
                                        np.eye(1), np.eye(1) * 0.1)
    assert np.isfinite(mean).all()


def test_mixture_prior_validation():
    with pytest.raises(ValueError):
        GaussianMixturePrior(np.array([0.5, 0.6]), np.zeros((2, 1)),
                             np.tile(np.eye(1), (2, 1, 1)))
    with pytest.raises(ValueError):
        GaussianMixturePrior(np.array([1.5, -0.5]), np.zeros((2, 1)),
                             np.tile(np.eye(1), (2, 1, 1)))


def test_oracle_field_matches_mixture_score(vp):
    # the conditioning identity: -gamma^-1 (y - Y E[X0|y]) == mixture score
    prior = GaussianMixturePrior(
        np.array([0.3, 0.7]),
        np.array([[1.0, 0.5], [-0.8, 0.2]]),
        np.stack([0.2 * np.eye(2), np.array([[0.3, 0.1], [0.1, 0.2]])]))
    field = oracle_field(vp, prior, m=2)
    for t in (0.25, 0.6, 1.0):
        a = float(vp.y_closed(t))
        gamma = float(vp.gamma_closed(t))
        ys = np.array([[0.3, -1.2], [1.5, 0.7], [-0.4, 0.0]])
        got = field.score(t, ys)
        want = mixture_score(prior, ys, a * np.eye(2), gamma * np.eye(2))
        assert np.allclose(got, want, rtol=1e-8)


def test_oracle_field_antisymmetry(vp):
    prior = GaussianMixturePrior(
        np.array([0.5, 0.5]), np.array([[1.0], [-1.0]]),
        np.tile(0.04 * np.eye(1), (2, 1, 1)))
    field = oracle_field(vp, prior, m=1)
    for y in (0.3, 1.1, 2.4):
        plus = field.score(0.7, np.array([y]))
        minus = field.score(0.7, np.array([-y]))
        assert plus[0] == -minus[0]  # exact, by symmetry of the arithmetic


# ---------------------------------------------------------------------------
# covering identity
# ---------------------------------------------------------------------------

def _covering_error(sched, m):
    spec = linear_sde(sched, m=m)
    ens = simulate_forward(spec, TimeGrid(0.0, 1.0, 2000),
                           point_mass(np.zeros(m)), 1, 0,
                           store_trajectories=False)
    track = propagate_first_variation(ens)
    mall = malliavin_matrix(track, spec)
    M = covering_identity_check(track, mall, spec)
    return np.max(np.abs(M - np.eye(m)))


def test_covering_scalar(vp):
    assert _covering_error(vp, 1) <= 1e-12


def test_covering_diag_2d():
    sched = ConstLinearSchedule(b=np.diag([-0.1, -0.2]), sigma=np.eye(2), T=1.0)
    assert _covering_error(sched, 2) <= 1e-10


def test_covering_random_3d():
    rng = aux_generator(2024)
    a = rng.standard_normal((3, 3))
    sched = ConstLinearSchedule(b=-(a @ a.T + np.eye(3)),
                                sigma=rng.standard_normal((3, 3)), T=1.0)
    assert _covering_error(sched, 3) <= 1e-9


# ---------------------------------------------------------------------------
# divergence samples
# ---------------------------------------------------------------------------

def test_skorokhod_zero_diffusion():
    sched = ConstLinearSchedule(b=np.array([[-0.3]]), sigma=np.array([[0.0]]),
                                T=1.0)
    spec = linear_sde(sched, m=1)
    ens = simulate_forward(spec, TimeGrid(0, 1, 100), point_mass(0.7), 16, 0,
                           store_trajectories=False)
    track = propagate_first_variation(ens)
    mall = malliavin_matrix(track, spec)
    out = skorokhod_linear(ens, track, mall)
    assert np.all(out["ito"] == 0.0)
    assert np.all(out["algebraic"] == 0.0)


def test_skorokhod_gap_first_order(vp):
    spec = linear_sde(vp, m=1)
    rms = []
    dts = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    for i, dt in enumerate(dts):
        grid = TimeGrid(0, 1, int(round(1 / dt)))
        ens = simulate_forward(spec, grid, point_mass(1.0), 1000, 60 + i,
                               store_trajectories=False)
        track = propagate_first_variation(ens)
        out = skorokhod_linear(ens, track, malliavin_matrix(track, spec))
        rms.append(out["rms_gap"])
    order = np.polyfit(np.log(dts), np.log(rms), 1)[0]
    assert order >= 0.9
    assert rms[-1] <= 5e-2


def test_conditioned_bismut_matches_score(vp):
    # N(0,1) data through the variance-preserving flow stays N(0,1);
    # -E[delta | X_T = y] must match the mixture score -y
    spec = linear_sde(vp, m=1)
    grid = TimeGrid(0, 1, 500)
    ens = simulate_forward(spec, grid, gaussian_x0(m=1), 60_000, 31,
                           store_trajectories=False)
    track = propagate_first_variation(ens)
    out = skorokhod_linear(ens, track, malliavin_matrix(track, spec))
    prior = GaussianMixturePrior.single(0.0, 1.0)
    field = oracle_field(vp, prior, m=1)
    for y in (-1.0, 0.0, 1.0):
        cond = conditioned_bismut_score(out["ito"], ens.x_T, np.array([y]),
                                        seed=5)
        want = field.score(1.0, np.array([y]))[0]
        assert cond["n_in_bin"] > 100
        assert abs(cond["score"][0] - want) < 3 * cond["se"][0] + 1e-3
