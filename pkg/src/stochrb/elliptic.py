"""Per-wavenumber vertical operators: Poisson, heat (Crank-Nicolson) and the
clamped biharmonic used for the Stokes and vorticity solves.

Notation for wavenumber k on the nz - 2 interior nodes:
    A_k = D2 - k^2   (three-point D2, zero Dirichlet data)
    B_k = A_k^2 + (2/dz^4)(e_1 e_1^T + e_n e_n^T)
B_k is the biharmonic with psi = dpsi/dx2 = 0 on the walls; applied to
psi it equals -lap(omega) with omega carrying Thom's wall values.
"""
from functools import lru_cache

import numpy as np

from .banded import BandedSPD, dense_to_bands
from .fields import Grid, ScalarField, VelocityField, irfft_x, rfft_x


def _lap_dense(grid: Grid):
    n = grid.nz - 2
    dz2 = grid.dz ** 2
    d2 = (np.diag(np.full(n, -2.0)) + np.diag(np.ones(n - 1), 1)
          + np.diag(np.ones(n - 1), -1)) / dz2
    return d2[None, :, :] - grid.k[:, None, None] ** 2 * np.eye(n)[None]


def _biharm_dense(grid: Grid):
    A = _lap_dense(grid)
    B = A @ A
    c = 2.0 / grid.dz ** 4
    B[:, 0, 0] += c
    B[:, -1, -1] += c
    return B


@lru_cache(maxsize=64)
def poisson_operator(grid: Grid) -> BandedSPD:
    return BandedSPD(dense_to_bands(-_lap_dense(grid), 1))


@lru_cache(maxsize=64)
def stokes_operator(grid: Grid) -> BandedSPD:
    return BandedSPD(dense_to_bands(_biharm_dense(grid), 2))


@lru_cache(maxsize=64)
def heat_operator(grid: Grid, dt: float) -> BandedSPD:
    n = grid.nz - 2
    return BandedSPD(dense_to_bands(np.eye(n)[None] - 0.5 * dt * _lap_dense(grid), 1))


@lru_cache(maxsize=64)
def vorticity_operator(grid: Grid, dt: float, pr: float) -> BandedSPD:
    """-A_k/dt + (Pr/2) B_k, the Crank-Nicolson matrix for psi."""
    M = -_lap_dense(grid) / dt + 0.5 * pr * _biharm_dense(grid)
    return BandedSPD(dense_to_bands(M, 2))


def lap_hat(F, grid, walls=None):
    """Apply D2 - k^2 to spectra on interior rows (wall values from F)."""
    out = np.zeros_like(F)
    out[..., 1:-1] = ((F[..., 2:] - 2 * F[..., 1:-1] + F[..., :-2]) / grid.dz ** 2
                      - grid.k2 * F[..., 1:-1])
    return out


def solve_interior(op: BandedSPD, rhs_hat):
    """Solve on interior rows; wall rows of the result are zero."""
    out = np.zeros_like(rhs_hat)
    out[..., 1:-1] = op.solve(rhs_hat[..., 1:-1])
    return out


def poisson_streamfunction(omega: ScalarField) -> VelocityField:
    """Solve lap(psi) = -omega with psi = 0 on both walls."""
    grid = omega.grid
    psi_hat = solve_interior(poisson_operator(grid), rfft_x(omega.values))
    return VelocityField(grid, irfft_x(psi_hat, grid))


def stokes_psi_hat(theta_values, ra, grid):
    rhs = ra * grid.ik * rfft_x(theta_values)
    return solve_interior(stokes_operator(grid), rhs)


def stokes_solve(theta: ScalarField, ra) -> VelocityField:
    """Velocity enslaved to theta: -lap u + grad p = Ra e2 theta, no slip.

    Per wavenumber this is lap^2 psi = Ra d(theta)/dx1 with clamped walls.
    The k = 0 mode has no forcing, so horizontally uniform theta gives u = 0.
    """
    grid = theta.grid
    return VelocityField(grid, irfft_x(stokes_psi_hat(theta.values, ra, grid), grid))
