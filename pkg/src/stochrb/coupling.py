"""Nudged coupling of two trajectories under shared noise, the Girsanov
cost and density, and decay-rate estimation.

The nudging drift on the forced modes is written as a shift of the
noise, sigma a(t) dt, with a_k = lambda * c_k / amplitude_k where c_k is
the modal coefficient of the difference.  The nudged copy is stepped by
the unmodified scheme with increments dW - a dt, so it is exactly the
reference scheme driven by shifted noise, and

    log D = sum a . dW - 1/2 sum |a|^2 dt

is the discrete Girsanov log-density.  The shift is frozen at zero once
the accumulated cost int |a|^2 dt reaches the budget R; the step that
crosses R is scaled so the cost lands on R exactly.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .boussinesq import step_finite_pr
from .fields import integrate
from .infinite_pr import step_infinite_pr
from .noise import build_temperature_basis, build_velocity_basis, modal_coefficients


class NotRepresentable(ValueError):
    pass


@dataclass(frozen=True)
class CouplingConfig:
    lambda1: float = 0.0
    lambda2: float = 0.0
    n1_nudge: int = 0
    n2_nudge: int = 0
    r_budget: float = 100.0
    mode: str = "case_ii"
    auto_modes: bool = False
    sync_eps: float = 1e-10
    fit_window: float = 0.5

    def __post_init__(self):
        if self.mode not in ("case_i", "case_ii"):
            raise ValueError(f"mode must be case_i or case_ii, got {self.mode!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("nudging strengths must be >= 0")
        if self.mode == "case_ii" and self.lambda1 != 0:
            raise ValueError("case_ii nudges temperature only: lambda1 must be 0")
        if not self.r_budget > 0:
            raise ValueError("r_budget must be > 0")
        if self.n1_nudge < 0 or self.n2_nudge < 0:
            raise ValueError("nudged mode counts must be >= 0")

    def validate(self, bases):
        for n, basis, lam, name in ((self.n1_nudge, bases.velocity, self.lambda1, "velocity"),
                                    (self.n2_nudge, bases.temperature, self.lambda2, "temperature")):
            if lam == 0:
                continue
            if n > len(basis):
                raise NotRepresentable(
                    f"Girsanov shift not representable: {n} {name} modes nudged but only "
                    f"{len(basis)} forced")
            if n and np.any(basis.amplitudes[:n] <= 0):
                raise NotRepresentable(
                    f"Girsanov shift not representable: a nudged {name} mode is unforced")


def auto_mode_count(lam, grid, kind="temperature"):
    """Smallest N with eigenvalue_{N+1} >= 2 lambda, and C = eigenvalue_{N+1} / N^2.

    With this C the rule N >= ceil(sqrt(2 lambda / C)) holds, and the
    unnudged modes satisfy the inverse-Poincare bound
    ||grad (I - P_N) f||^2 >= 2 lambda ||(I - P_N) f||^2.
    """
    build = build_temperature_basis if kind == "temperature" else build_velocity_basis
    n = 8
    while True:
        basis = build(n, grid)
        ev = basis.eigenvalues
        hit = np.nonzero(ev >= 2 * lam)[0]
        if hit.size:
            nn = max(int(hit[0]), 1)
            c = ev[nn] / nn ** 2 if nn < len(ev) else ev[-1] / nn ** 2
            return nn, float(c)
        n *= 2


def shift_vector(U, Ut, bases, ccfg):
    """a(t) on the full noise index (velocity modes first)."""
    n1 = len(bases.velocity)
    n2 = len(bases.temperature)
    batch = U.theta.values.shape[:-2]
    a = np.zeros(batch + (n1 + n2,))
    if ccfg.lambda2 and ccfg.n2_nudge:
        c = modal_coefficients(Ut.theta.values - U.theta.values, bases.temperature, ccfg.n2_nudge)
        a[..., n1:n1 + ccfg.n2_nudge] = ccfg.lambda2 * c / bases.temperature.amplitudes[:ccfg.n2_nudge]
    if ccfg.lambda1 and ccfg.n1_nudge:
        d1 = Ut.velocity.u1 - U.velocity.u1
        d2 = Ut.velocity.u2 - U.velocity.u2
        c = modal_coefficients((d1, d2), bases.velocity, ccfg.n1_nudge)
        a[..., :ccfg.n1_nudge] = ccfg.lambda1 * c / bases.velocity.amplitudes[:ccfg.n1_nudge]
    return a


def _budgeted(a, dt, prev, r_budget):
    cost = prev["girsanov_cost"]
    stopped = prev["stopped"]
    a = np.where(np.asarray(stopped)[..., None], 0.0, a)
    inc = np.sum(a * a, axis=-1) * dt
    over = np.logical_and(np.logical_not(stopped), cost + inc >= r_budget)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(over, np.sqrt(np.maximum(r_budget - cost, 0.0) / inc), 1.0)
    a = a * np.asarray(scale)[..., None]
    inc = np.where(over, np.maximum(r_budget - cost, 0.0), inc)
    new_cost = np.where(over, r_budget, cost + inc)
    return a, inc, new_cost, np.logical_or(stopped, over)


def _first_row(batch):
    z = np.zeros(batch) if batch else 0.0
    return {"girsanov_cost": z, "log_density": z,
            "stopped": np.zeros(batch, dtype=bool) if batch else False}


def _pair_step(U, Ut, a_full, dt, prev, r_budget, stepper, draws):
    if U.stream.coordinates() != Ut.stream.coordinates():
        raise ValueError("coupled trajectories must share the noise stream coordinates")
    a, inc, cost, stopped = _budgeted(a_full, dt, prev, r_budget)
    dw = draws(U.stream)
    a_dot_dw = np.sum(a * dw, axis=-1)
    log_d = prev["log_density"] + a_dot_dw - 0.5 * inc
    U2 = stepper(U, None)
    Ut2 = stepper(Ut, a * dt)
    row = {"t": U2.t, "girsanov_cost": cost, "log_density": log_d, "stopped": stopped,
           "a_dot_dw": a_dot_dw, "a_sq_dt": inc, "stream": U.stream.coordinates()}
    return U2, Ut2, row


def step_coupled_pair(U, Ut, params, bases, ccfg: CouplingConfig, config, last_row=None):
    """Advance a reference trajectory U and its nudged copy Ut by one step.

    Returns ``(U, Ut, row)``; pass ``row`` back as ``last_row`` on the next
    call so the cost, log-density and stopping latch carry over.
    """
    ccfg.validate(bases)
    batch = U.theta.values.shape[:-2]
    prev = last_row or _first_row(batch)
    a_full = shift_vector(U, Ut, bases, ccfg)
    dt = config.dt

    def draws(stream):
        if not config.noise:
            return np.zeros(batch + (bases.n_draws,))
        return math.sqrt(dt) * stream.normals(bases.n_draws)

    def stepper(S, shift):
        return step_finite_pr(S, params, bases, config, shift=shift)

    U2, Ut2, row = _pair_step(U, Ut, a_full, dt, prev, ccfg.r_budget, stepper, draws)
    g = U2.grid
    row["diff_u_sq"] = integrate((Ut2.velocity.u1 - U2.velocity.u1) ** 2
                                 + (Ut2.velocity.u2 - U2.velocity.u2) ** 2, g)
    row["diff_theta_sq"] = integrate((Ut2.theta.values - U2.theta.values) ** 2, g)
    return U2, Ut2, row


def couple_infinite_pr(state, nudged_state, ccfg: CouplingConfig, params, basis, config,
                       last_row=None):
    """Infinite-Pr pair: theta-tilde nudged by -lambda2 P_N (theta-tilde - theta)."""
    if ccfg.lambda2 and ccfg.n2_nudge > len(basis):
        raise NotRepresentable(
            f"Girsanov shift not representable: {ccfg.n2_nudge} modes nudged, {len(basis)} forced")
    batch = state.theta.values.shape[:-2]
    prev = last_row or _first_row(batch)
    a_full = np.zeros(batch + (len(basis),))
    if ccfg.lambda2 and ccfg.n2_nudge:
        c = modal_coefficients(nudged_state.theta.values - state.theta.values, basis, ccfg.n2_nudge)
        a_full[..., :ccfg.n2_nudge] = ccfg.lambda2 * c / basis.amplitudes[:ccfg.n2_nudge]
    dt = config.dt

    def draws(stream):
        if not config.noise:
            return np.zeros(batch + (len(basis),))
        return math.sqrt(dt) * stream.normals(len(basis))

    def stepper(S, shift):
        return step_infinite_pr(S, params, basis, config, shift=shift)

    s2, n2, row = _pair_step(state, nudged_state, a_full, dt, prev, ccfg.r_budget, stepper, draws)
    g = s2.grid
    row["diff_u_sq"] = integrate((n2.velocity.u1 - s2.velocity.u1) ** 2
                                 + (n2.velocity.u2 - s2.velocity.u2) ** 2, g)
    row["diff_theta_sq"] = integrate((n2.theta.values - s2.theta.values) ** 2, g)
    return s2, n2, row


# ------------------------------------------------------------------ traces

TRACE_COLUMNS = ("t", "diff_u_sq", "diff_theta_sq", "girsanov_cost", "log_density", "stopped")


@dataclass
class CouplingTrace:
    """Per-step rows of a coupled run, stored column-wise.

    Columns may carry a trailing member axis for ensembles.
    """
    rows: list = field(default_factory=list)

    def append(self, row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def member(self, i):
        out = CouplingTrace()
        for r in self.rows:
            out.append({k: (v[i] if isinstance(v, np.ndarray) and v.ndim else v)
                        for k, v in r.items() if k != "stream"})
        return out

    def __len__(self):
        return len(self.rows)


def girsanov_log_density(trace: CouplingTrace):
    """log D(t) at the end of the trace, re-accumulated from the per-step
    a.dW and |a|^2 dt records."""
    if not len(trace):
        return 0.0
    return np.sum(trace.column("a_dot_dw"), axis=0) - 0.5 * np.sum(trace.column("a_sq_dt"), axis=0)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    synced: bool
    rate_defined: bool = True


def estimate_decay(t, total, fit_window=0.5, sync_eps=1e-10, floor=1e-20) -> DecayFit:
    """Log-linear fit of ||v||^2 + ||phi||^2 over the final ``fit_window``
    fraction of the resolved part of the trace.

    Once the difference reaches ``floor`` it is rounding noise, so the
    span used is [t0, t_sat] with t_sat the first time at or below the
    floor (the whole trace if never reached).  ``synced`` compares the
    last sample with ``sync_eps``.
    """
    t = np.asarray(t, dtype=float)
    total = np.asarray(total, dtype=float)
    if t.size < 2:
        raise ValueError("trace shorter than the fit window")
    if np.all(total == 0):
        return DecayFit(float("nan"), float("nan"), True, False)
    synced = bool(total[-1] < sync_eps)
    below = np.nonzero(total <= floor)[0]
    end = below[0] if below.size else t.size
    ts, ys = t[:end], total[:end]
    if ts.size < 3:
        return DecayFit(float("nan"), float("nan"), synced, False)
    t0 = ts[-1] - fit_window * (ts[-1] - ts[0])
    sel = ts >= t0
    if np.count_nonzero(sel) < 3:
        return DecayFit(float("nan"), float("nan"), synced, False)
    y = np.log(ys[sel])
    x = ts[sel]
    if np.ptp(y) == 0:
        return DecayFit(0.0, 1.0, synced, True)
    res = stats.linregress(x, y)
    return DecayFit(float(res.slope), float(res.rvalue ** 2), synced, True)
