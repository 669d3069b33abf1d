import numpy as np
import pytest

from stochrb.boussinesq import StepConfig, build_bases, initial_state, step_finite_pr
from stochrb.coupling import (CouplingConfig, CouplingTrace, NotRepresentable, auto_mode_count,
                              couple_infinite_pr, estimate_decay, girsanov_log_density,
                              shift_vector, step_coupled_pair)
from stochrb.fields import Grid, ScalarField
from stochrb.infinite_pr import initial_inf_state
from stochrb.noise import WienerStream, build_temperature_basis
from stochrb.params import NondimParams


def _theta(grid, amp, shift=0.0, batch=()):
    X, Z = grid.mesh
    th = amp * np.sin(np.pi * Z) * np.cos(np.pi * X + shift) + 0.3 * amp * np.sin(2 * np.pi * Z)
    return ScalarField(grid, np.broadcast_to(th, batch + grid.shape).copy())


def _finite_pair(grid, same=False, seed=1):
    U = initial_state(_theta(grid, 2.0), WienerStream(seed, 3))
    Ut = initial_state(_theta(grid, 2.0 if same else -1.0, 0.0 if same else 0.7), WienerStream(seed, 3))
    return U, Ut


P = NondimParams(pr=50.0, ra=300.0, ra_tilde=5.0, n1=0, n2=8)
CFG = StepConfig(dt=5e-4)


def test_identical_data_stay_synchronized(grid):
    b = build_bases(P, grid)
    cc = CouplingConfig(lambda2=40.0, n2_nudge=8)
    U, Ut = _finite_pair(grid, same=True)
    row = None
    for _ in range(30):
        U, Ut, row = step_coupled_pair(U, Ut, P, b, cc, CFG, row)
        assert row["diff_theta_sq"] == 0 and row["diff_u_sq"] == 0
        assert row["girsanov_cost"] == 0 and row["log_density"] == 0


def test_zero_lambda_is_independent_copy(grid):
    b = build_bases(P, grid)
    cc = CouplingConfig(lambda2=0.0, n2_nudge=8)
    U, Ut = _finite_pair(grid)
    ref = Ut
    row = None
    for _ in range(30):
        U, Ut, row = step_coupled_pair(U, Ut, P, b, cc, CFG, row)
        ref = step_finite_pr(ref, P, b, CFG)
    assert np.array_equal(Ut.theta.values, ref.theta.values)
    assert np.array_equal(Ut.velocity.psi, ref.velocity.psi)
    assert row["girsanov_cost"] == 0


def test_budget_latch_and_monotone_cost(grid):
    b = build_bases(P, grid)
    cc = CouplingConfig(lambda2=200.0, n2_nudge=6, r_budget=3.0)
    U, Ut = _finite_pair(grid)
    tr = CouplingTrace()
    row = None
    for _ in range(200):
        U, Ut, row = step_coupled_pair(U, Ut, P, b, cc, CFG, row)
        tr.append(row)
    cost = tr.column("girsanov_cost")
    stopped = tr.column("stopped")
    assert np.all(np.diff(cost) >= 0) and cost.max() <= 3.0
    assert stopped.any(), "budget was meant to run out in this setting"
    first = int(np.argmax(stopped))
    assert cost[first] == 3.0
    assert np.all(cost[first:] == 3.0) and np.all(tr.column("a_sq_dt")[first + 1:] == 0)
    assert girsanov_log_density(tr) == pytest.approx(row["log_density"], rel=1e-12, abs=1e-12)


def test_shift_support(grid):
    b = build_bases(P, grid)
    cc = CouplingConfig(lambda2=10.0, n2_nudge=3)
    U, Ut = _finite_pair(grid)
    a = shift_vector(U, Ut, b, cc)
    assert a.shape == (8,) and np.all(a[3:] == 0) and np.any(a[:3] != 0)


def test_representability(grid):
    b = build_bases(P, grid)
    with pytest.raises(NotRepresentable, match="not representable"):
        CouplingConfig(lambda2=1.0, n2_nudge=9).validate(b)
    with pytest.raises(ValueError):
        CouplingConfig(lambda1=1.0, mode="case_ii")
    with pytest.raises(ValueError):
        CouplingConfig(r_budget=0.0)
    basis = build_temperature_basis(4, grid)
    s = initial_inf_state(_theta(grid, 1.0), 100.0, WienerStream(0))
    with pytest.raises(NotRepresentable):
        couple_infinite_pr(s, s, CouplingConfig(lambda2=1.0, n2_nudge=5),
                           NondimParams(pr=np.inf, ra=100.0, ra_tilde=5.0, n2=4), basis, CFG)


def test_shared_stream_required(grid):
    b = build_bases(P, grid)
    U, Ut = _finite_pair(grid)
    Ut = initial_state(Ut.theta, WienerStream(1, 4))
    with pytest.raises(ValueError, match="share"):
        step_coupled_pair(U, Ut, P, b, CouplingConfig(), CFG)


def test_auto_mode_rule(grid):
    n, c = auto_mode_count(50.0, grid)
    ev = build_temperature_basis(n + 1, grid).eigenvalues
    assert ev[n] >= 100.0 > ev[n - 1]
    assert c == pytest.approx(ev[n] / n ** 2)


def test_estimate_decay_synthetic():
    t = np.linspace(0, 5, 501)
    fit = estimate_decay(t, np.exp(-2 * t))
    assert fit.rate == pytest.approx(-2.0, abs=1e-6) and fit.r_squared == pytest.approx(1.0)
    assert not fit.synced
    fit = estimate_decay(t, np.full_like(t, 0.3))
    assert fit.rate == 0 and not fit.synced
    fit = estimate_decay(t, np.exp(-10 * t))
    assert fit.synced and fit.rate == pytest.approx(-10.0, abs=1e-6)


def test_infinite_pr_nudging_decays():
    g = Grid(16, 17, 2.0)
    p = NondimParams(pr=np.inf, ra=200.0, ra_tilde=5.0, n2=12)
    lam = 60.0
    n, _ = auto_mode_count(lam, g)
    basis = build_temperature_basis(max(n, 12), g)
    cc = CouplingConfig(lambda2=lam, n2_nudge=n, r_budget=1e6)
    ids = tuple(range(4))
    s = initial_inf_state(_theta(g, 2.0, batch=(4,)), p.ra, WienerStream(2, ids))
    sn = initial_inf_state(_theta(g, -1.0, 0.5, batch=(4,)), p.ra, WienerStream(2, ids))
    tr = CouplingTrace()
    row = None
    cfg = StepConfig(dt=1e-3)
    for _ in range(400):
        s, sn, row = couple_infinite_pr(s, sn, cc, p, basis, cfg, row)
        tr.append(row)
    t = tr.column("t")
    for i in range(4):
        total = tr.member(i).column("diff_theta_sq") + tr.member(i).column("diff_u_sq")
        fit = estimate_decay(t, total)
        assert fit.rate < 0 and fit.r_squared > 0.9


def test_girsanov_density_has_unit_mean():
    # weak nudging keeps the cost O(1) so the sample mean of D is well estimated
    g = Grid(8, 9, 2.0)
    p = NondimParams(pr=np.inf, ra=50.0, ra_tilde=2.0, n2=4)
    basis = build_temperature_basis(4, g)
    n = 2000
    ids = tuple(range(n))
    cc = CouplingConfig(lambda2=2.0, n2_nudge=4, r_budget=50.0)
    s = initial_inf_state(_theta(g, 1.0, batch=(n,)), p.ra, WienerStream(11, ids))
    sn = initial_inf_state(_theta(g, -1.0, batch=(n,)), p.ra, WienerStream(11, ids))
    row = None
    cfg = StepConfig(dt=5e-3)
    for _ in range(100):
        s, sn, row = couple_infinite_pr(s, sn, cc, p, basis, cfg, row)
    D = np.exp(row["log_density"])
    assert 0.05 < row["girsanov_cost"].mean() < 50.0
    assert abs(D.mean() - 1.0) <= 3 * D.std(ddof=1) / np.sqrt(n)
