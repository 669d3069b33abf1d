"""Infinite-Prandtl convection: three Nusselt estimators and the background bound.

A short single trajectory at Ra R~a = 1e4.  The full acceptance version
(configs/nusselt_cross_check.cfg) runs six time units; this one runs two
so it finishes in about fifteen seconds, and the halfwidths are wider.
"""
import numpy as np

from stochrb.boussinesq import StepConfig
from stochrb.fields import Grid, ScalarField
from stochrb.infinite_pr import initial_inf_state, step_infinite_pr
from stochrb.noise import WienerStream, build_temperature_basis
from stochrb.params import NondimParams, build_background_profile
from stochrb.stats import (TimeAverager, background_bound, nusselt_estimates,
                           nusselt_functionals, pointwise_background_inequality)

grid = Grid(32, 33, 2.0)
params = NondimParams(pr=np.inf, ra=1e3, ra_tilde=10.0, n2=8)
basis = build_temperature_basis(params.n2, grid)
cfg = StepConfig(dt=1e-4)

X, Z = grid.mesh
state = initial_inf_state(ScalarField(grid, np.sin(np.pi * Z) * np.cos(np.pi * X)),
                          params.ra, WienerStream(seed=7))
profile = build_background_profile(params.ra, params.ra_tilde, grid)

burn_in, t_end = 0.5, 2.0
avg = TimeAverager(t_start=burn_in)
min_residual = np.inf
n_steps = int(round(t_end / cfg.dt))
for n in range(1, n_steps + 1):
    state = step_infinite_pr(state, params, basis, cfg)
    if n % 10 == 0:
        row = nusselt_functionals(state)
        row["t"] = state.t
        avg.update(row)
        min_residual = min(min_residual, pointwise_background_inequality(state, profile, params))

est = nusselt_estimates(avg, params, noise_norm_sq=basis.total_norm_sq)
print(f"window [{est.window[0]:.2f}, {est.window[1]:.2f}]")
print(f"  Nu from the flux:              {est.nu_flux:.4f} +- {est.hw_flux:.4f}")
print(f"  Nu from temperature gradients: {est.nu_grad_t:.4f} +- {est.hw_grad_t:.4f}")
print(f"  Nu from velocity gradients:    {est.nu_grad_u:.4f} +- {est.hw_grad_u:.4f}")
print(f"  agree within halfwidths + 5%:  {est.agree(0.05)}")
print(f"background bound {background_bound(params, profile):.1f} "
      f"(delta = {profile.delta:.4f}); smallest inequality residual {min_residual:.1f}")
