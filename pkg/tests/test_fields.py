import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochrb.fields import (Grid, GridMismatch, ScalarField, SnapshotError, VelocityField,
                            advect, advection_hat, dirichlet_energy, enstrophy, grad_sq,
                            integrate, irfft_x, lp_norm, l2_norm, read_snapshot, rfft_x,
                            write_snapshot)


def random_psi(grid, rng, batch=()):
    X, Z = grid.mesh
    out = np.zeros(tuple(batch) + grid.shape)
    for j in range(3):
        for m in range(1, 4):
            a = rng.normal(size=tuple(batch) + (1, 1))
            out += a * np.cos(2 * np.pi * j * X / grid.aspect + m) * np.sin(np.pi * Z) ** 2 * np.sin(m * np.pi * Z + j)
    return out


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(12, 17)
    with pytest.raises(ValueError):
        Grid(16, 16)
    with pytest.raises(ValueError):
        Grid(16, 17, 0.0)


def test_grid_mismatch(grid):
    with pytest.raises(GridMismatch):
        ScalarField(grid, np.zeros((4, 4)))
    with pytest.raises(GridMismatch):
        ScalarField(grid, np.zeros(grid.shape)) + ScalarField(Grid(16, 17, 2.0), np.zeros((16, 17)))


def test_fft_roundtrip(grid, rng):
    f = rng.normal(size=(3,) + grid.shape)
    assert np.allclose(irfft_x(rfft_x(f), grid), f, atol=1e-14)


def test_sin_integrals():
    # theta = sin(pi x2): ||theta||^2 = L/2, ||grad theta||^2 = pi^2 L/2
    grid = Grid(16, 65, 2.0)
    th = np.sin(np.pi * grid.mesh[1])
    L = grid.aspect
    assert integrate(th ** 2, grid) == pytest.approx(L / 2, rel=1e-12)
    assert grad_sq(th, grid) == pytest.approx(np.pi ** 2 * L / 2, rel=1e-3)
    assert dirichlet_energy(th, grid) == pytest.approx(np.pi ** 2 * L / 2, rel=1e-3)


def test_velocity_is_divergence_free_and_no_slip(grid, rng):
    u = VelocityField(grid, random_psi(grid, rng))
    assert np.abs(u.u1[:, [0, -1]]).max() == 0 and np.abs(u.u2[:, [0, -1]]).max() == 0
    assert np.abs(u.divergence()[:, 1:-1]).max() < 1e-12 * u.max_speed() * grid.nz


def test_enstrophy_matches_gradient_norm():
    # continuum identity ||grad u||^2 = ||omega||^2 for no-slip fields, discretely to O(dz^2)
    errs = []
    for nz in (33, 65, 129):
        g = Grid(16, nz, 2.0)
        X, Z = g.mesh
        u = VelocityField(g, np.cos(np.pi * X) * np.sin(np.pi * Z) ** 2)
        errs.append(abs(enstrophy(u) - grad_sq(u.u1, g) - grad_sq(u.u2, g)) / enstrophy(u))
    assert errs[-1] < 5e-3 and errs[2] < errs[0]


@given(st.integers(0, 10 ** 6))
def test_advection_skew_symmetric(seed):
    rng = np.random.default_rng(seed)
    g = Grid(16, 17, 2.0)
    f = rng.normal(size=g.shape)
    f[:, [0, -1]] = 0
    u = VelocityField(g, random_psi(g, rng))
    # <f, u.grad f> = 0 for the dealiased skew form
    a = advect(ScalarField(g, f), u).values
    fm = irfft_x(g.dealias_mask * rfft_x(f), g)
    assert abs(integrate(a * fm, g)) <= 1e-12 * (1 + np.abs(a).max() * np.abs(fm).max())


def test_constant_advects_to_zero(grid, rng):
    u = VelocityField(grid, random_psi(grid, rng))
    c = np.ones(grid.shape)
    c[:, [0, -1]] = 0
    out = irfft_x(advection_hat(np.full(grid.shape, 2.5), u.u1, u.u2, grid), grid)
    assert np.abs(out[:, 2:-2]).max() < 1e-10 * u.max_speed()


def test_norms(grid, rng):
    f = ScalarField(grid, rng.normal(size=grid.shape))
    assert l2_norm(f) == pytest.approx(np.sqrt(integrate(f.values ** 2, grid)))
    assert lp_norm(f, 4) >= 0
    with pytest.raises(ValueError):
        lp_norm(f, 0.5)


@given(st.integers(0, 10 ** 6))
def test_cauchy_schwarz(seed):
    rng = np.random.default_rng(seed)
    g = Grid(8, 9, 2.0)
    a, b = rng.normal(size=(2,) + g.shape)
    assert abs(integrate(a * b, g)) <= np.sqrt(integrate(a * a, g) * integrate(b * b, g)) * (1 + 1e-12)


def test_batch_rows_are_independent(grid, rng):
    f = rng.normal(size=(5,) + grid.shape)
    full = integrate(f, grid)
    for i in range(5):
        assert integrate(f[i], grid) == full[i]


def test_snapshot_roundtrip(tmp_path, grid, rng):
    f = ScalarField(grid, rng.normal(size=grid.shape))
    p = tmp_path / "a.bfld"
    write_snapshot(p, f, 1.5)
    g2, v, t = read_snapshot(p)
    assert g2 == grid and t == 1.5 and np.array_equal(v, f.values)


def test_snapshot_errors(tmp_path, grid):
    p = tmp_path / "bad.bfld"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(SnapshotError, match="magic"):
        read_snapshot(p)
    p.write_bytes(b"BF")
    with pytest.raises(SnapshotError, match="truncated"):
        read_snapshot(p)
    write_snapshot(p, ScalarField(grid, np.zeros(grid.shape)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(SnapshotError, match="bytes"):
        read_snapshot(p)
