"""Finite-Prandtl stochastic Boussinesq stepper, the passive drift-diffusion
solver and the comparison solution S.

Scheme: Crank-Nicolson diffusion solved per wavenumber, Adams-Bashforth 2
for advection and buoyancy (forward Euler on the first step), additive
noise added once per step as an exact Gaussian increment.  The velocity
is carried by its streamfunction; the vorticity equation

    (1/Pr)(d omega + u.grad omega dt) = lap omega dt + Ra d(theta)/dx1 dt + curl forcing

is solved for psi directly (omega = -lap psi), which makes the wall
vorticity Thom's formula and keeps u divergence-free and no-slip.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import elliptic
from .fields import (ScalarField, VelocityField, grad_sq, integrate, irfft_x,
                     lp_norm, rfft_x, velocity_from_psi, advection_hat)
from .noise import NoiseBasis, WienerStream, build_temperature_basis, build_velocity_basis, combine


class NumericalError(RuntimeError):
    """Non-finite state or other failure of the time integration."""


class CFLError(NumericalError):
    def __init__(self, cfl, suggested_dt, step):
        self.cfl = cfl
        self.suggested_dt = suggested_dt
        self.step = step
        super().__init__(f"CFL number {cfl:.3g} exceeds the limit at step {step}; "
                         f"try dt <= {suggested_dt:.3g}")


@dataclass(frozen=True)
class StepConfig:
    dt: float
    cfl_max: float = 0.5
    dealias: bool = True
    scheme: str = "cn-ab2"
    noise: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.cfl_max < 1:
            raise ValueError(f"cfl_max must lie in (0, 1), got {self.cfl_max}")
        if self.scheme != "cn-ab2":
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True, eq=False)
class Bases:
    temperature: NoiseBasis
    velocity: NoiseBasis

    @property
    def n_draws(self):
        return len(self.velocity) + len(self.temperature)


def build_bases(params, grid) -> Bases:
    n1 = 0 if params.infinite_pr else params.n1
    return Bases(build_temperature_basis(params.n2, grid),
                 build_velocity_basis(n1, grid, params.velocity_amplitude))


@dataclass(frozen=True, eq=False)
class SolverState:
    """One trajectory (or a batch of them) at a step boundary.

    ``history`` holds the previous explicit tendencies (spectral) used by
    the Adams-Bashforth step; ``None`` before the first step.
    """
    t: float
    theta: ScalarField
    velocity: VelocityField
    stream: WienerStream
    step: int = 0
    history: tuple = None

    @property
    def grid(self):
        return self.theta.grid


@dataclass(frozen=True, eq=False)
class ScalarState:
    """State of a passive scalar (xi or S) advanced by a frozen velocity."""
    t: float
    field: ScalarField
    stream: WienerStream
    step: int = 0
    history: object = None


def initial_state(theta, stream, psi=None, t=0.0) -> SolverState:
    grid = theta.grid
    th = np.array(theta.values, dtype=float)
    th[..., 0] = th[..., -1] = 0.0
    if psi is None:
        psi = np.zeros_like(th)
    psi = np.array(psi, dtype=float)
    psi[..., 0] = psi[..., -1] = 0.0
    return SolverState(t, ScalarField(grid, th), VelocityField(grid, psi), stream)


# ---------------------------------------------------------------- helpers

def check_cfl(u: VelocityField, dt, cfl_max, step):
    g = u.grid
    speed = np.abs(u.u1) / g.dx + np.abs(u.u2) / g.dz
    smax = float(speed.max()) if speed.size else 0.0
    cfl = dt * smax
    if not math.isfinite(cfl):
        raise NumericalError(f"non-finite velocity at step {step}")
    if cfl > cfl_max:
        raise CFLError(cfl, 0.9 * cfl_max / smax, step)


def check_finite(step, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values produced at step {step}")


def filtered_components(u: VelocityField, dealias_on):
    if not dealias_on:
        return u.u1, u.u2
    g = u.grid
    ph = g.dealias_mask * u.psi_hat
    return velocity_from_psi(irfft_x(ph, g), g, ph)


def ab2(current, history):
    if history is None:
        return current
    return 1.5 * current - 0.5 * history


def heat_update(theta_values, n_star_hat, grid, dt):
    """Crank-Nicolson diffusion with explicit tendency, zero wall values."""
    F = rfft_x(theta_values)
    rhs = F + 0.5 * dt * elliptic.lap_hat(F, grid) + dt * n_star_hat
    return irfft_x(elliptic.solve_interior(elliptic.heat_operator(grid, dt), rhs), grid)


def vorticity_hat(psi_hat, grid):
    """Spectrum of omega = -lap psi with Thom wall values."""
    dz2 = grid.dz ** 2
    om = np.empty_like(psi_hat)
    om[..., 1:-1] = (grid.k2 * psi_hat[..., 1:-1]
                     - (psi_hat[..., 2:] - 2 * psi_hat[..., 1:-1] + psi_hat[..., :-2]) / dz2)
    om[..., 0] = -2 * psi_hat[..., 1] / dz2
    om[..., -1] = -2 * psi_hat[..., -2] / dz2
    return om


def psi_update(psi_hat, n_star_hat, grid, dt, pr):
    """Crank-Nicolson step of the vorticity equation written for psi."""
    om = vorticity_hat(psi_hat, grid)
    rhs = om / dt + 0.5 * pr * elliptic.lap_hat(om, grid) + pr * n_star_hat
    rhs[..., 0] = rhs[..., -1] = 0.0
    out = elliptic.solve_interior(elliptic.vorticity_operator(grid, dt, pr), rhs)
    return irfft_x(out, grid)


def noise_increments(stream, count, dt, noise_on, batch_shape):
    if noise_on and count:
        return math.sqrt(dt) * stream.normals(count)
    return np.zeros(batch_shape + (count,))


def _zero_walls(a):
    a[..., 0] = 0.0
    a[..., -1] = 0.0
    return a


# ------------------------------------------------------------------ steppers

def step_finite_pr(state: SolverState, params, bases: Bases, config: StepConfig,
                   forcing=None, shift=None) -> SolverState:
    """Advance the finite-Prandtl system by one step.

    Parameters
    ----------
    forcing : callable, optional
        ``forcing(t) -> (f_theta, f_omega)`` deterministic source terms
        added to the right-hand sides (manufactured solutions).
    shift : ndarray, optional
        Amounts subtracted from the Wiener increments, shape (..., n1 + n2),
        velocity modes first.  Used by the nudged copy of a coupled pair.
    """
    grid = state.grid
    dt = config.dt
    u = state.velocity
    check_cfl(u, dt, config.cfl_max, state.step)
    theta = state.theta.values
    u1f, u2f = filtered_components(u, config.dealias)

    n_theta = (-advection_hat(theta, u1f, u2f, grid, config.dealias)
               + params.ra_tilde * rfft_x(u.u2))
    om_hat = vorticity_hat(u.psi_hat, grid)
    omega = irfft_x(om_hat, grid)
    n_omega = (-advection_hat(omega, u1f, u2f, grid, config.dealias) / params.pr
               + params.ra * grid.ik * rfft_x(theta))
    if forcing is not None:
        f_th, f_om = forcing(state.t)
        n_theta = n_theta + rfft_x(_zero_walls(np.array(f_th, dtype=float)))
        n_omega = n_omega + rfft_x(_zero_walls(np.array(f_om, dtype=float)))
    _zero_walls(n_omega)
    prev = state.history or (None, None)
    theta_new = heat_update(theta, ab2(n_theta, prev[0]), grid, dt)
    psi_new = psi_update(u.psi_hat, ab2(n_omega, prev[1]), grid, dt, params.pr)

    n1 = len(bases.velocity)
    dw = noise_increments(state.stream, bases.n_draws, dt, config.noise, theta.shape[:-2])
    if shift is not None:
        dw = dw - shift
    amp_t = bases.temperature.amplitudes
    theta_new = theta_new + combine(bases.temperature, amp_t * dw[..., n1:])
    if n1:
        amp_v = bases.velocity.amplitudes
        psi_new = psi_new + params.pr * combine(bases.velocity, amp_v * dw[..., :n1])
    _zero_walls(theta_new)
    _zero_walls(psi_new)
    check_finite(state.step + 1, theta_new, psi_new)
    return SolverState(state.t + dt, ScalarField(grid, theta_new), VelocityField(grid, psi_new),
                       state.stream.advance(), state.step + 1, (n_theta, n_omega))


def _scalar_step(state: ScalarState, v: VelocityField, params, basis, config, source):
    grid = state.field.grid
    dt = config.dt
    check_cfl(v, dt, config.cfl_max, state.step)
    u1f, u2f = _cached_filtered(v, config.dealias)
    xi = state.field.values
    n_hat = -advection_hat(xi, u1f, u2f, grid, config.dealias)
    if source:
        n_hat = n_hat + params.ra_tilde * rfft_x(v.u2)
    new = heat_update(xi, ab2(n_hat, state.history), grid, dt)
    dw = noise_increments(state.stream, len(basis), dt, config.noise, xi.shape[:-2])
    new = _zero_walls(new + combine(basis, basis.amplitudes * dw))
    check_finite(state.step + 1, new)
    return ScalarState(state.t + dt, ScalarField(grid, new), state.stream.advance(),
                       state.step + 1, n_hat)


def _cached_filtered(v, dealias_on):
    key = "_filtered_dealias" if dealias_on else "_filtered_raw"
    cached = v.__dict__.get(key)
    if cached is None:
        cached = filtered_components(v, dealias_on)
        v.__dict__[key] = cached
    return cached


def step_drift_diffusion(state: ScalarState, v: VelocityField, params, basis: NoiseBasis,
                         config: StepConfig) -> ScalarState:
    """d xi + v.grad xi dt = (R~a v2 + lap xi) dt + sum sigma_k dW^k, v frozen."""
    return _scalar_step(state, v, params, basis, config, source=True)


def step_comparison_S(state: ScalarState, v: VelocityField, params, basis: NoiseBasis,
                      config: StepConfig) -> ScalarState:
    """d S + v.grad S dt = lap S dt + sum sigma_k dW^k, S = 0 on the walls.

    Pair it with a drift-diffusion state at the same stream coordinates so
    both consume identical increments.
    """
    return _scalar_step(state, v, params, basis, config, source=False)


def comparison_initial(xi0: ScalarField, ra_tilde) -> ScalarField:
    """S(0) = xi0 + R~a (1 - x2) in the interior, zero on the wall rows."""
    s = xi0.values + ra_tilde * (1.0 - xi0.grid.z)
    s = np.array(s)
    _zero_walls(s)
    return ScalarField(xi0.grid, s)


# -------------------------------------------------------------- diagnostics

DIAGNOSTIC_COLUMNS = ("norm_u_sq", "norm_theta_sq", "grad_u_sq", "grad_theta_sq",
                      "theta_l4", "flux_term")


def energy_diagnostics(state) -> dict:
    """Quadrature values of the energy functionals.

    Keys follow the trajectory CSV: ||u||^2, ||theta||^2, ||grad u||^2,
    ||grad theta||^2, ||theta||_L4 and <theta, u2>.
    """
    grid = state.theta.grid
    th = state.theta.values
    u = state.velocity
    return {
        "norm_u_sq": integrate(u.u1 ** 2 + u.u2 ** 2, grid),
        "norm_theta_sq": integrate(th ** 2, grid),
        "grad_u_sq": grad_sq(u.u1, grid) + grad_sq(u.u2, grid),
        "grad_theta_sq": grad_sq(th, grid),
        "theta_l4": lp_norm(state.theta, 4),
        "flux_term": integrate(th * u.u2, grid),
    }
