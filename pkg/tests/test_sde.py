import numpy as np
import pytest
from scipy import integrate

from malscore.errors import GridMismatch
from malscore.rng import BrownianStore
from malscore.sde import (SdeSpec, TimeGrid, cubic_sde, gaussian_x0, ito_integral,
                          linear_sde, make_schedule, point_mass, schedule_from_json,
                          simulate_forward, spec_from_json)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_ve_endpoints(ve):
    assert ve.sigma_t(0.0) == pytest.approx(0.01)
    assert ve.sigma_t(1.0) == pytest.approx(50.0)


def test_vp_constant_beta_integral(vp):
    assert vp.B(1.0) == pytest.approx(0.1)


def test_ve_g_squared_integral_matches_quadrature(ve):
    # closed form sigma_max^2 - sigma_min^2 against trapezoid of g^2 at dt=1e-5
    t = np.arange(0.0, 1.0 + 1e-5, 1e-5)
    quad = integrate.trapezoid(ve.g(t) ** 2, t)
    assert quad == pytest.approx(2499.9999, rel=1e-6)
    assert ve.gamma_closed(1.0) == pytest.approx(2499.9999, rel=1e-12)


def test_schedule_validation():
    with pytest.raises(ValueError):
        make_schedule("ve", sigma_min=50.0, sigma_max=0.01)
    with pytest.raises(ValueError):
        make_schedule("vp", beta_min=0.0)
    with pytest.raises(ValueError):
        make_schedule("nope")


def test_schedule_json_round_trip(all_schedules):
    for sched in all_schedules:
        back = schedule_from_json(sched.to_json())
        assert back == sched


def test_grid_nodes_exact():
    grid = TimeGrid(0.0, 1.0, 7)
    ts = grid.nodes()
    assert len(ts) == 8
    assert all(ts[k] == grid.t0 + k * grid.dt for k in range(8))
    ig = TimeGrid.integer(100)
    assert ig.dt == 1.0 and ig.integer_mode


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _zero_spec():
    return SdeSpec(m=1, d=1, schedule=None,
                   drift=lambda t, x: np.zeros_like(x),
                   jacobian=lambda t, x: np.zeros((1, 1)),
                   hessian=None, sigma=lambda t: np.zeros((1, 1)),
                   linear=True, name="custom")


def test_zero_dynamics_keeps_x0():
    ens = simulate_forward(_zero_spec(), TimeGrid(0, 1, 50), point_mass(3.0), 4, 0)
    assert np.all(ens.X == 3.0)
    assert ens.n_diverged == 0


def test_vp_terminal_mean(vp):
    # E[X_1 | X_0 = 1] = e^{-0.05} for constant beta = 0.1
    spec = linear_sde(vp, m=1)
    ens = simulate_forward(spec, TimeGrid(0, 1, 1000), point_mass(1.0),
                           100_000, 11, store_trajectories=False)
    xT = ens.x_T[:, 0]
    se = xT.std(ddof=1) / np.sqrt(len(xT))
    assert abs(xT.mean() - np.exp(-0.05)) < 3 * se


def test_cubic_fourth_moment_stationary():
    # quadrature of x^4 exp(-x^4/2) / Z gives exactly 1/2 for sigma = 1
    Z = integrate.quad(lambda x: np.exp(-x**4 / 2), -np.inf, np.inf)[0]
    m4 = integrate.quad(lambda x: x**4 * np.exp(-x**4 / 2), -np.inf, np.inf)[0] / Z
    m8 = integrate.quad(lambda x: x**8 * np.exp(-x**4 / 2), -np.inf, np.inf)[0] / Z
    spec = cubic_sde(sigma=1.0)
    ens = simulate_forward(spec, TimeGrid(0, 6, 3000), point_mass(0.0),
                           20_000, 3, store_trajectories=False)
    x4 = ens.x_T[:, 0] ** 4
    se = np.sqrt((m8 - m4**2) / len(x4))
    assert abs(x4.mean() - m4) < 3 * se
    assert ens.n_diverged == 0


def test_determinism_bitwise(vp):
    spec = linear_sde(vp, m=1)
    grid = TimeGrid(0, 1, 100)
    a = simulate_forward(spec, grid, gaussian_x0(m=1), 500, 42)
    b = simulate_forward(spec, grid, gaussian_x0(m=1), 500, 42)
    assert np.array_equal(a.X, b.X)
    c = simulate_forward(spec, grid, gaussian_x0(m=1), 500, 43)
    assert not np.array_equal(a.X, c.X)


def test_chunking_does_not_change_paths(vp):
    spec = linear_sde(vp, m=1)
    grid = TimeGrid(0, 1, 64)
    a = simulate_forward(spec, grid, point_mass(0.5), 300, 7, chunk_paths=17)
    b = simulate_forward(spec, grid, point_mass(0.5), 300, 7, chunk_paths=300)
    assert np.array_equal(a.X, b.X)


def test_divergence_flagged_not_dropped():
    spec = cubic_sde(sigma=1.0)
    # explicit Euler with huge dt blows up from |x0| = 3
    ens = simulate_forward(spec, TimeGrid(0, 5, 10), point_mass(3.0), 8, 0)
    assert ens.n_diverged == 8
    assert np.all(np.isfinite(ens.x_T))


def test_brownian_store_block_purity():
    st = BrownianStore(9, n_steps=32, d=2, dt=0.25)
    full = st.increments(0, 2100)
    part = st.increments(1030, 1040)
    assert np.array_equal(full[1030:1040], part)
    # scaling: increments are normals * sqrt(dt)
    assert np.isclose(full.std(), np.sqrt(0.25), rtol=0.01)


# ---------------------------------------------------------------------------
# ito integral
# ---------------------------------------------------------------------------

def test_ito_zero_integrand(vp):
    spec = linear_sde(vp, m=1)
    ens = simulate_forward(spec, TimeGrid(0, 1, 50), point_mass(0.0), 10, 0)
    out = ito_integral(ens, lambda t: np.zeros((1, 1)))
    assert np.all(out == 0.0)


def test_ito_identity_isometry():
    spec = _zero_spec()
    ens = simulate_forward(spec, TimeGrid(0, 1, 200), point_mass(0.0), 10_000, 5,
                           store_trajectories=False)
    bT = ito_integral(ens, lambda t: np.eye(1))[:, 0]
    assert abs(bT.var(ddof=1) - 1.0) < 0.05


def test_ito_grid_mismatch(vp):
    spec = linear_sde(vp, m=1)
    ens = simulate_forward(spec, TimeGrid(0, 1, 50), point_mass(0.0), 2, 0)
    with pytest.raises(GridMismatch):
        ito_integral(ens, lambda t: np.eye(1), grid=TimeGrid(0, 1, 51))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_spec_json_round_trip(vp):
    spec = linear_sde(vp, m=2)
    doc = spec.to_json()
    back = spec_from_json(doc)
    assert back.m == 2 and back.linear and back.schedule == vp
    cub = cubic_sde(sigma=0.7)
    back = spec_from_json(cub.to_json())
    assert float(np.atleast_2d(back.sigma(0.0))[0, 0]) == pytest.approx(0.7)


def test_custom_spec_does_not_serialize():
    with pytest.raises(ValueError):
        _zero_spec().to_json()
