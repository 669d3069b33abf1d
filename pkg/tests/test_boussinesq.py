import numpy as np
import pytest

from stochrb.boussinesq import (CFLError, NumericalError, ScalarState, StepConfig, build_bases,
                                comparison_initial, energy_diagnostics, initial_state,
                                step_comparison_S, step_drift_diffusion, step_finite_pr)
from stochrb.fields import Grid, ScalarField, VelocityField, dirichlet_energy, integrate
from stochrb.noise import WienerStream, build_temperature_basis
from stochrb.params import NondimParams

from mms import temporal_orders, temporal_run


def smooth_velocity(grid, seed, amp=3.0):
    rng = np.random.default_rng(seed)
    X, Z = grid.mesh
    psi = np.zeros(grid.shape)
    for j in range(1, 3):
        for m in range(1, 3):
            psi += rng.normal() * np.sin(np.pi * j * X + rng.uniform(0, 6)) * np.sin(np.pi * Z) ** 2 * Z ** (m - 1)
    u = VelocityField(grid, psi)
    return VelocityField(grid, psi * amp / u.max_speed())


def test_rest_state_stays_at_rest(grid):
    p = NondimParams(pr=1.0, ra=1e3, ra_tilde=10.0, n2=4)
    s = initial_state(ScalarField(grid, np.zeros(grid.shape)), WienerStream(0))
    cfg = StepConfig(dt=1e-3, noise=False)
    b = build_bases(p, grid)
    for _ in range(100):
        s = step_finite_pr(s, p, b, cfg)
    assert np.abs(s.theta.values).max() == 0 and np.abs(s.velocity.psi).max() == 0


def test_heat_kernel_decay():
    g = Grid(16, 65, 2.0)
    p = NondimParams(pr=1.0, ra=1.0, ra_tilde=1.0)
    xi0 = np.sin(np.pi * g.mesh[1])
    s = ScalarState(0.0, ScalarField(g, xi0), WienerStream(0))
    v = VelocityField(g, np.zeros(g.shape))
    cfg = StepConfig(dt=1e-3, noise=False)
    b = build_temperature_basis(1, g)
    for _ in range(100):
        s = step_drift_diffusion(s, v, p, b, cfg)
    assert np.abs(s.field.values - np.exp(-np.pi ** 2 * 0.1) * xi0).max() < 1e-3


def test_duhamel_small_time(grid):
    p = NondimParams(pr=1.0, ra=1.0, ra_tilde=7.0)
    v = smooth_velocity(grid, 1)
    s = ScalarState(0.0, ScalarField(grid, np.zeros(grid.shape)), WienerStream(0))
    cfg = StepConfig(dt=1e-4, noise=False)
    b = build_temperature_basis(1, grid)
    for _ in range(10):
        s = step_drift_diffusion(s, v, p, b, cfg)
    assert np.abs(s.field.values).max() <= 7.0 * 1e-3 * np.abs(v.u2).max() * 1.01


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_comparison_noise_off_nonnegative(grid, seed):
    # T0 = R~a(1 - x2) means xi0 = 0; R = S - T + R~a must stay >= 0
    rt = 4.0
    p = NondimParams(pr=1.0, ra=1.0, ra_tilde=rt)
    v = smooth_velocity(grid, seed)
    zero = ScalarField(grid, np.zeros(grid.shape))
    xi = ScalarState(0.0, zero, WienerStream(0))
    S = ScalarState(0.0, comparison_initial(zero, rt), WienerStream(0))
    cfg = StepConfig(dt=1e-3, noise=False)
    b = build_temperature_basis(1, grid)
    lin = rt * (1 - grid.z)
    for _ in range(200):
        xi = step_drift_diffusion(xi, v, p, b, cfg)
        S = step_comparison_S(S, v, p, b, cfg)
        R = S.field.values - (xi.field.values + lin) + rt
        assert R[:, 1:-1].min() >= -1e-6 * rt


def test_comparison_with_noise(grid):
    rt = 2.0
    p = NondimParams(pr=1.0, ra=1.0, ra_tilde=rt, n2=8)
    b = build_temperature_basis(8, grid)
    v = smooth_velocity(grid, 5)
    X, Z = grid.mesh
    xi0 = ScalarField(grid, 3 * np.sin(np.pi * Z) * np.cos(np.pi * X))
    xi = ScalarState(0.0, xi0, WienerStream(9, 4))
    S = ScalarState(0.0, comparison_initial(xi0, rt), WienerStream(9, 4))
    cfg = StepConfig(dt=1e-3)
    for _ in range(200):
        xi = step_drift_diffusion(xi, v, p, b, cfg)
        S = step_comparison_S(S, v, p, b, cfg)
        margin = np.abs(S.field.values) + 2 * rt - np.abs(xi.field.values)
        assert margin[:, 1:-1].min() >= -1e-6 * rt


def test_noise_off_energy_law(rng):
    g = Grid(32, 33, 2.0)
    p = NondimParams(pr=1.0, ra=2000.0, ra_tilde=10.0, n2=4)
    X, Z = g.mesh
    th0 = 5 * np.sin(np.pi * Z) * np.cos(np.pi * X) + np.sin(2 * np.pi * Z) * np.sin(2 * np.pi * X)
    s = initial_state(ScalarField(g, th0), WienerStream(0))
    b = build_bases(p, g)
    dt = 1e-5
    cfg = StepConfig(dt=dt, noise=False)
    for _ in range(30):
        s = step_finite_pr(s, p, b, cfg)
    worst = 0.0
    for _ in range(20):
        new = step_finite_pr(s, p, b, cfg)
        lhs = (integrate(new.theta.values ** 2, g) - integrate(s.theta.values ** 2, g)) / dt

        def rhs(st):
            th = st.theta.values
            return 2 * p.ra_tilde * integrate(th * st.velocity.u2, g) - 2 * dirichlet_energy(th, g)
        r = 0.5 * (rhs(s) + rhs(new))
        worst = max(worst, abs(lhs - r) / max(abs(r), abs(lhs)))
        s = new
    assert worst <= 1e-3


def test_cfl_and_nan_errors(grid):
    p = NondimParams(pr=1.0, ra=1.0, ra_tilde=1.0)
    b = build_bases(p, grid)
    X, Z = grid.mesh
    s = initial_state(ScalarField(grid, np.zeros(grid.shape)), WienerStream(0),
                      psi=1e6 * np.sin(np.pi * Z) ** 2 * np.sin(np.pi * X))
    with pytest.raises(CFLError) as ei:
        step_finite_pr(s, p, b, StepConfig(dt=1e-2))
    assert ei.value.suggested_dt < 1e-2
    bad = np.zeros(grid.shape)
    bad[3, 4] = np.nan
    s = initial_state(ScalarField(grid, bad), WienerStream(0))
    with pytest.raises(NumericalError):
        step_finite_pr(s, p, b, StepConfig(dt=1e-3))


def test_step_config_validation():
    with pytest.raises(ValueError):
        StepConfig(dt=0)
    with pytest.raises(ValueError):
        StepConfig(dt=1e-3, cfl_max=1.5)


def test_diagnostics_examples(grid, rng):
    z = ScalarField(grid, np.zeros(grid.shape))
    s = initial_state(z, WienerStream(0))
    assert all(v == 0 for v in energy_diagnostics(s).values())
    g = Grid(16, 129, 2.0)
    s = initial_state(ScalarField(g, np.sin(np.pi * g.mesh[1])), WienerStream(0))
    d = energy_diagnostics(s)
    assert d["norm_theta_sq"] == pytest.approx(1.0, rel=1e-10)
    assert d["grad_theta_sq"] == pytest.approx(np.pi ** 2, rel=1e-3)
    assert d["flux_term"] == 0.0
    th = rng.normal(size=grid.shape)
    s = initial_state(ScalarField(grid, th), WienerStream(0), psi=rng.normal(size=grid.shape))
    d = energy_diagnostics(s)
    assert abs(d["flux_term"]) <= np.sqrt(d["norm_theta_sq"] * d["norm_u_sq"])


def test_determinism(grid):
    p = NondimParams(pr=2.0, ra=500.0, ra_tilde=5.0, n1=2, n2=4)
    b = build_bases(p, grid)

    def run():
        s = initial_state(ScalarField(grid, np.zeros(grid.shape)), WienerStream(3, 8))
        for _ in range(20):
            s = step_finite_pr(s, p, b, StepConfig(dt=1e-3))
        return s.theta.values, s.velocity.psi
    a, c = run(), run()
    assert np.array_equal(a[0], c[0]) and np.array_equal(a[1], c[1])
    assert np.abs(a[1]).max() > 0


def test_temporal_order_mms():
    res, th_exact = temporal_run()
    for orders in temporal_orders(res):
        assert min(orders) >= 1.8
    assert np.abs(res[-1][0] - th_exact).max() < 0.02
