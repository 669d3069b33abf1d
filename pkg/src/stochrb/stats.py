"""Time averaging, Nusselt estimators, the background bound and the
martingale / exponential-moment monitors.

Nusselt numbers use domain-averaged integrals: every functional is
divided by |D| = L so that the three estimators share one convention.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .fields import dirichlet_energy, enstrophy, integrate
from .noise import modal_coefficients
from .params import BackgroundProfile

N_BATCHES = 8


class WindowTooShort(ValueError):
    pass


class Underpowered(ValueError):
    pass


@dataclass
class TimeAverager:
    """Trapezoidal running integrals of registered functionals.

    Rows before ``t_start`` are skipped; accumulation starts at the first
    row at or after it.  Values may be arrays (one entry per ensemble
    member).  Per-interval contributions are kept so batch means can be
    formed afterwards.
    """
    t_start: float = 0.0
    names: tuple = ()
    t_first: float = None
    t_now: float = None
    last: dict = None
    integrals: dict = field(default_factory=dict)
    count: int = 0
    pieces: list = field(default_factory=list)

    def update(self, row, dt=None):
        t = row.get("t") if "t" in row else None
        if t is None:
            if dt is None or self.t_now is None:
                raise ValueError("row needs a time stamp")
            t = self.t_now + dt
        t = float(t)
        if t < self.t_start:
            return self
        vals = {k: np.asarray(row[k], dtype=float) for k in (self.names or
                [k for k in row if k != "t"])}
        if not self.names:
            self.names = tuple(vals)
        if self.t_now is None:
            self.t_first = self.t_now = t
            self.last = vals
            self.integrals = {k: np.zeros_like(v) for k, v in vals.items()}
            self.count = 1
            return self
        if t < self.t_now:
            raise ValueError(f"out-of-order time stamp {t} < {self.t_now}")
        if t == self.t_now:
            return self
        h = t - self.t_now
        piece = {k: 0.5 * h * (self.last[k] + vals[k]) for k in self.names}
        for k in self.names:
            self.integrals[k] = self.integrals[k] + piece[k]
        self.pieces.append((h, piece))
        self.t_now = t
        self.last = vals
        self.count += 1
        return self

    @property
    def span(self):
        return 0.0 if self.t_now is None else self.t_now - self.t_first

    def average(self, name):
        if not self.span > 0:
            raise WindowTooShort("window too short: no time elapsed after burn-in")
        return self.integrals[name] / self.span

    def batch_means(self, name, n_batches=N_BATCHES):
        """Averages over ``n_batches`` consecutive groups of intervals."""
        if len(self.pieces) < 2 * n_batches:
            raise WindowTooShort(
                f"window too short: {len(self.pieces)} intervals for {n_batches} batches")
        groups = np.array_split(np.arange(len(self.pieces)), n_batches)
        out = []
        for g in groups:
            h = sum(self.pieces[i][0] for i in g)
            s = sum(self.pieces[i][1][name] for i in g)
            out.append(s / h)
        return np.array(out)

    def halfwidth(self, name, n_batches=N_BATCHES, level=0.95):
        b = self.batch_means(name, n_batches)
        q = stats.t.ppf(0.5 + level / 2, n_batches - 1)
        return q * np.std(b, axis=0, ddof=1) / math.sqrt(n_batches)

    def to_dict(self):
        enc = lambda d: {k: np.asarray(v).tolist() for k, v in d.items()}
        return {"t_start": self.t_start, "names": list(self.names), "t_first": self.t_first,
                "t_now": self.t_now, "count": self.count,
                "last": enc(self.last) if self.last else None,
                "integrals": enc(self.integrals),
                "pieces": [[h, enc(p)] for h, p in self.pieces]}

    @classmethod
    def from_dict(cls, d):
        dec = lambda m: {k: np.asarray(v, dtype=float) for k, v in m.items()}
        return cls(t_start=d["t_start"], names=tuple(d["names"]), t_first=d["t_first"],
                   t_now=d["t_now"], last=dec(d["last"]) if d["last"] else None,
                   integrals=dec(d["integrals"]), count=d["count"],
                   pieces=[(h, dec(p)) for h, p in d["pieces"]])


def update_averages(averager: TimeAverager, state_diagnostics, dt=None) -> TimeAverager:
    return averager.update(state_diagnostics, dt)


# ------------------------------------------------------------------ Nusselt

NUSSELT_FUNCTIONALS = ("flux_term", "grad_theta_sq", "grad_u_sq")


def nusselt_functionals(state):
    """Instantaneous integrals feeding the Nusselt estimators.

    Gradients use the discrete forms matching the solver's operators
    (the Dirichlet form for theta, Thom-wall enstrophy for u), so the
    discrete energy balances close without a quadrature mismatch.
    """
    g = state.theta.grid
    th = state.theta.values
    return {"flux_term": integrate(th * state.velocity.u2, g),
            "grad_theta_sq": dirichlet_energy(th, g),
            "grad_u_sq": enstrophy(state.velocity)}


@dataclass(frozen=True)
class NusseltEstimates:
    nu_flux: float
    nu_grad_t: float
    nu_grad_u: float
    hw_flux: float
    hw_grad_t: float
    hw_grad_u: float
    window: tuple = (0.0, 0.0)

    @property
    def residuals(self):
        return {"flux_minus_grad_u": self.nu_flux - self.nu_grad_u,
                "flux_minus_grad_t": self.nu_flux - self.nu_grad_t,
                "grad_t_minus_grad_u": self.nu_grad_t - self.nu_grad_u}

    def agree(self, allowance=0.05):
        """Pairwise agreement within summed halfwidths plus a relative allowance."""
        pairs = ((self.nu_flux, self.hw_flux, self.nu_grad_u, self.hw_grad_u),
                 (self.nu_flux, self.hw_flux, self.nu_grad_t, self.hw_grad_t),
                 (self.nu_grad_t, self.hw_grad_t, self.nu_grad_u, self.hw_grad_u))
        return all(abs(a - b) <= ha + hb + allowance * abs(a) for a, ha, b, hb in pairs)

    def as_dict(self):
        d = {k: float(getattr(self, k)) for k in
             ("nu_flux", "nu_grad_t", "nu_grad_u", "hw_flux", "hw_grad_t", "hw_grad_u")}
        d["window"] = list(self.window)
        d["residuals"] = {k: float(v) for k, v in self.residuals.items()}
        return d


def _nu_transforms(params, noise_norm_sq):
    rt, ra, area = params.ra_tilde, params.ra, params.area
    return {
        "flux_term": lambda m: 1.0 + m / (rt * area),
        # ||grad T||^2 = ||grad theta||^2 + R~a^2 |D| for wall-vanishing theta
        "grad_theta_sq": lambda m: 1.0 + m / (rt ** 2 * area) - noise_norm_sq / (2 * rt ** 2 * area),
        "grad_u_sq": lambda m: 1.0 + m / (ra * rt * area),
    }


def nusselt_estimates(averager: TimeAverager, params, noise_norm_sq=1.0,
                      n_batches=N_BATCHES) -> NusseltEstimates:
    """The three Nusselt estimators from one averaging window.

    ``noise_norm_sq`` is ||sigma||^2, the Ito correction carried by the
    gradient form (1 for the default normalized temperature forcing).
    """
    for k in NUSSELT_FUNCTIONALS:
        if k not in averager.names:
            raise ValueError(f"functional {k!r} not registered")
    tr = _nu_transforms(params, noise_norm_sq)
    vals, hws = {}, {}
    for k in NUSSELT_FUNCTIONALS:
        vals[k] = float(np.mean(tr[k](averager.average(k))))
        # the maps are affine, so halfwidths scale by the slope
        slope = tr[k](1.0) - tr[k](0.0)
        hws[k] = float(np.max(np.abs(slope * averager.halfwidth(k, n_batches))))
    return NusseltEstimates(vals["flux_term"], vals["grad_theta_sq"], vals["grad_u_sq"],
                            hws["flux_term"], hws["grad_theta_sq"], hws["grad_u_sq"],
                            (averager.t_first, averager.t_now))


def background_bound(params, profile: BackgroundProfile) -> float:
    """(2/R~a^2) int (tau')^2 + 1/(R~a^2 |D|) - 1 with the exact polynomial integral."""
    rt = params.ra_tilde
    return 2.0 / rt ** 2 * profile.tau_prime_sq_integral() + 1.0 / (rt ** 2 * params.area) - 1.0


def pointwise_background_inequality(state, profile: BackgroundProfile, params):
    """sqrt(R~a/(2 Ra)) ||grad u|| ||grad theta_b|| - |int u2 tau' theta_b|.

    theta_b = T - tau is the fluctuation about the background; the
    returned residual is nonnegative whenever the key estimate holds.
    """
    g = state.theta.grid
    z = g.z
    theta_b = state.theta.values + params.ra_tilde * (1.0 - z) - profile.tau(z)
    theta_b = np.array(theta_b)
    theta_b[..., 0] = theta_b[..., -1] = 0.0
    u = state.velocity
    tp = profile.tau_prime(z)
    coupling = np.abs(integrate(u.u2 * tp * theta_b, g))
    gu = np.sqrt(enstrophy(u))
    gt = np.sqrt(dirichlet_energy(theta_b, g))
    return math.sqrt(params.ra_tilde / (2 * params.ra)) * gu * gt - coupling


# ----------------------------------------------------------- tail monitors

@dataclass(frozen=True)
class ExceedanceRow:
    k: float
    frequency: float
    bound: float
    sigma: float
    count: int
    n: int

    @property
    def ok(self):
        return self.frequency <= self.bound + 3 * self.sigma

    def as_dict(self):
        return {"K": self.k, "frequency": self.frequency, "bound": self.bound,
                "sigma": self.sigma, "exceed": self.count, "n": self.n, "ok": self.ok}


def martingale_exceedance_test(m_increments, qv_increments, gamma, k_list, min_traces=100):
    """Empirical P(sup_t (M_t - gamma/2 <M>_t) >= K) against exp(-gamma K).

    Inputs have shape (n_traces, n_steps) and hold per-step increments of
    M and of its quadratic variation.  sigma is the binomial standard
    error at the bound probability.
    """
    dm = np.asarray(m_increments, dtype=float)
    dq = np.asarray(qv_increments, dtype=float)
    if dm.shape != dq.shape or dm.ndim != 2:
        raise ValueError("increments must be (n_traces, n_steps) arrays of equal shape")
    n = dm.shape[0]
    if n < min_traces:
        raise Underpowered(f"underpowered: {n} traces, need at least {min_traces}")
    path = np.cumsum(dm - 0.5 * gamma * dq, axis=1)
    sup = np.maximum(path.max(axis=1), 0.0)
    rows = []
    for k in sorted(k_list):
        b = math.exp(-gamma * k)
        c = int(np.count_nonzero(sup >= k))
        rows.append(ExceedanceRow(float(k), c / n, b, math.sqrt(b * (1 - b) / n), c, n))
    return rows


@dataclass(frozen=True)
class MomentRow:
    eta: float
    value: float
    stderr: float
    status: str = "ok"

    def as_dict(self):
        return {"eta": self.eta, "value": self.value, "stderr": self.stderr, "status": self.status}


def exponential_moment_report(samples, eta_list, min_samples=100):
    """E exp(eta (|u|^2 + |theta|_Lp^2)) with jackknife standard errors.

    ``samples`` is (n, 2) or (n,) of the summed functional.  Estimates whose
    log exceeds the float range are flagged "eta too large".
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim == 2:
        s = s.sum(axis=1)
    n = s.size
    if n < min_samples:
        raise Underpowered(f"underpowered: {n} samples, need at least {min_samples}")
    rows = []
    for eta in eta_list:
        if eta == 0:
            rows.append(MomentRow(float(eta), 1.0, 0.0))
            continue
        x = eta * s
        logmean = special.logsumexp(x) - math.log(n)
        if not np.isfinite(logmean) or logmean > 700:
            rows.append(MomentRow(float(eta), float("inf"), float("nan"), "eta too large"))
            continue
        # jackknife on the shifted scale to keep it finite
        shift = x.max()
        w = np.exp(x - shift)
        loo = (w.sum() - w) / (n - 1)
        se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)) * math.exp(shift)
        rows.append(MomentRow(float(eta), float(math.exp(logmean)), float(se)))
    return rows


def theta_martingale_increments(theta_values, basis, dw, dt):
    """Increment of the ||theta||^2 Ito martingale and its quadratic variation.

    dM = 2 sum_k sigma_k <theta, e_k> dW_k and d<M> = 4 sum_k sigma_k^2 <theta, e_k>^2 dt,
    with theta taken at the start of the step.
    """
    c = modal_coefficients(theta_values, basis)
    amp = basis.amplitudes
    return 2.0 * np.sum(amp * c * dw, axis=-1), 4.0 * dt * np.sum((amp * c) ** 2, axis=-1)
