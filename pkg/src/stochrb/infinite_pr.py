"""Infinite-Prandtl system: the velocity is enslaved to theta through a
Stokes solve and theta follows the same scheme as the finite-Pr theta."""
from dataclasses import dataclass

import numpy as np

from .boussinesq import (StepConfig, ab2, check_cfl, check_finite, filtered_components,
                         heat_update, noise_increments, _zero_walls)
from .elliptic import stokes_psi_hat
from .fields import ScalarField, VelocityField, advection_hat, irfft_x, rfft_x
from .noise import NoiseBasis, WienerStream, combine


@dataclass(frozen=True, eq=False)
class InfPrState:
    """theta and its enslaved velocity at a step boundary."""
    t: float
    theta: ScalarField
    velocity: VelocityField
    stream: WienerStream
    step: int = 0
    history: object = None

    @property
    def grid(self):
        return self.theta.grid


def enslaved_velocity(theta_values, ra, grid):
    psi_hat = stokes_psi_hat(theta_values, ra, grid)
    u = VelocityField(grid, irfft_x(psi_hat, grid))
    return u


def initial_inf_state(theta: ScalarField, ra, stream, t=0.0) -> InfPrState:
    th = np.array(theta.values, dtype=float)
    _zero_walls(th)
    grid = theta.grid
    return InfPrState(t, ScalarField(grid, th), enslaved_velocity(th, ra, grid), stream)


def step_infinite_pr(state: InfPrState, params, basis: NoiseBasis, config: StepConfig,
                     shift=None) -> InfPrState:
    """One step: advect/diffuse/force theta with the stored u, then re-solve Stokes.

    ``shift`` (shape (..., n2)) is subtracted from the Wiener increments,
    which is how the nudged copy of a coupled pair is driven.
    """
    grid = state.grid
    dt = config.dt
    u = state.velocity
    check_cfl(u, dt, config.cfl_max, state.step)
    theta = state.theta.values
    u1f, u2f = filtered_components(u, config.dealias)
    n_hat = (-advection_hat(theta, u1f, u2f, grid, config.dealias)
             + params.ra_tilde * rfft_x(u.u2))
    new = heat_update(theta, ab2(n_hat, state.history), grid, dt)
    dw = noise_increments(state.stream, len(basis), dt, config.noise, theta.shape[:-2])
    if shift is not None:
        dw = dw - shift
    new = _zero_walls(new + combine(basis, basis.amplitudes * dw))
    check_finite(state.step + 1, new)
    vel = enslaved_velocity(new, params.ra, grid)
    return InfPrState(state.t + dt, ScalarField(grid, new), vel, state.stream.advance(),
                      state.step + 1, n_hat)
