"""Conduction state, heat-kernel decay and the temperature forcing.

Run with ``python demos/01_conduction_and_heat_decay.py``.
"""
import numpy as np

from stochrb.boussinesq import (ScalarState, StepConfig, build_bases, energy_diagnostics,
                                initial_state, step_drift_diffusion, step_finite_pr)
from stochrb.fields import Grid, ScalarField, VelocityField, l2_norm
from stochrb.noise import WienerStream, build_temperature_basis
from stochrb.params import NondimParams, temperature_to_theta

grid = Grid(64, 33, 2.0)
params = NondimParams(pr=1.0, ra=1e3, ra_tilde=10.0, n2=8)

# The linear conduction profile is theta = 0 in the homogeneous variables.
T = np.broadcast_to(params.ra_tilde * (1 - grid.z), grid.shape)
theta = temperature_to_theta(ScalarField(grid, T), params.ra_tilde)
print("conduction profile as theta: max |theta| =", np.abs(theta.values).max())

# Without noise the rest state is a fixed point of the full stepper.
state = initial_state(theta, WienerStream(seed=0))
bases = build_bases(params, grid)
cfg = StepConfig(dt=1e-3, noise=False)
for _ in range(200):
    state = step_finite_pr(state, params, bases, cfg)
print("after 200 noiseless steps:", {k: float(v) for k, v in energy_diagnostics(state).items()})

# A passive scalar with no velocity decays like the first Dirichlet mode.
xi0 = ScalarField(grid, np.sin(np.pi * grid.mesh[1]))
s = ScalarState(0.0, xi0, WienerStream(0))
v = VelocityField(grid, np.zeros(grid.shape))
one = build_temperature_basis(1, grid)
for _ in range(1000):
    s = step_drift_diffusion(s, v, params, one, StepConfig(dt=1e-4, noise=False))
print(f"||xi(0.1)|| / ||xi0|| = {l2_norm(s.field) / l2_norm(xi0):.6f}, "
      f"exp(-pi^2 0.1) = {np.exp(-np.pi ** 2 * 0.1):.6f}")

# The forcing modes, lowest Dirichlet eigenvalues first, with equal amplitudes.
for mode in bases.temperature.manifest():
    print("  mode j={j} m={m} {parity:3s} eigenvalue {eigenvalue:8.3f} amplitude {amplitude:.4f}"
          .format(**mode))
print("sum of squared forcing norms:", bases.temperature.total_norm_sq)
