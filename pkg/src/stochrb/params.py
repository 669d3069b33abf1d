"""Physical and non-dimensional parameters, the conduction shift and the
background temperature profile."""
import math
from dataclasses import dataclass, field, fields

import numpy as np


class DomainError(ValueError):
    """Invalid parameter value; the message names the offending field."""


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional inputs (SI numbers, no unit checking).

    ``gamma`` and ``gamma_tilde`` are the raw temperature and velocity
    flux coefficients of the stochastic forcing.
    """
    nu: float
    kappa: float
    g: float
    alpha: float
    gamma: float
    gamma_tilde: float
    h: float
    T1: float
    L_phys: float
    d: int = 2

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "d":
                if v not in (2, 3):
                    raise DomainError(f"d must be 2 or 3, got {v!r}")
            elif f.name == "gamma_tilde":
                if not v >= 0:
                    raise DomainError(f"gamma_tilde must be >= 0, got {v!r}")
            elif not v > 0:
                raise DomainError(f"{f.name} must be > 0, got {v!r}")


@dataclass(frozen=True)
class NondimParams:
    """Unitless parameter set governing every solver.

    ``pr = inf`` selects the infinite-Prandtl system.  ``sigma_tilde_norm``
    is the L2 norm of the whole velocity forcing; each of the ``n1`` velocity
    modes carries amplitude ``sigma_tilde_norm / sqrt(n1)``.
    """
    pr: float
    ra: float
    ra_tilde: float
    aspect: float = 2.0
    n1: int = 0
    n2: int = 1
    sigma_tilde_norm: float = field(default=None)

    def __post_init__(self):
        for name in ("pr", "ra", "ra_tilde", "aspect"):
            v = getattr(self, name)
            if not v > 0:
                raise DomainError(f"{name} must be > 0, got {v!r}")
        if int(self.n1) != self.n1 or self.n1 < 0:
            raise DomainError(f"n1 must be an integer >= 0, got {self.n1!r}")
        if int(self.n2) != self.n2 or self.n2 < 1:
            raise DomainError(f"n2 must be an integer >= 1, got {self.n2!r}")
        if self.sigma_tilde_norm is None:
            object.__setattr__(self, "sigma_tilde_norm", math.sqrt(self.n1))
        if self.sigma_tilde_norm < 0:
            raise DomainError("sigma_tilde_norm must be >= 0")
        if (self.n1 == 0) != (self.sigma_tilde_norm == 0):
            raise DomainError("sigma_tilde_norm must vanish exactly when n1 = 0")

    @property
    def infinite_pr(self):
        return math.isinf(self.pr)

    @property
    def area(self):
        return self.aspect

    @property
    def velocity_amplitude(self):
        return self.sigma_tilde_norm / math.sqrt(self.n1) if self.n1 else 0.0


def nondimensionalize(p: PhysicalParams, n1=0, n2=1) -> NondimParams:
    """Map dimensional inputs to (Pr, Ra, R~a, L).

    Uses the diffusive scales ``x = h x'``, ``t = (h^2/kappa) t'`` and the
    temperature scale chosen so the temperature forcing has unit strength.
    The velocity forcing strength becomes
    ``gamma_tilde / (nu sqrt(kappa) h^(d/2 - 2))`` per unit basis mode.
    """
    d = p.d
    pr = p.nu / p.kappa
    ra = p.g * p.alpha * p.gamma * p.h ** (4 - d / 2) / (p.nu * p.kappa ** 1.5)
    ra_tilde = math.sqrt(p.kappa) * p.h ** (d / 2 - 1) * p.T1 / p.gamma
    s = p.gamma_tilde / (p.nu * math.sqrt(p.kappa) * p.h ** (d / 2 - 2))
    if s == 0:
        n1 = 0
    return NondimParams(pr=pr, ra=ra, ra_tilde=ra_tilde, aspect=p.L_phys / p.h,
                        n1=n1, n2=n2, sigma_tilde_norm=s * math.sqrt(n1))


def _values(T):
    return getattr(T, "values", T)


def _rewrap(T, values):
    if hasattr(T, "values"):
        return type(T)(T.grid, values)
    return values


def temperature_to_theta(T, ra_tilde):
    """theta = T - R~a (1 - x2)."""
    z = T.grid.z
    return _rewrap(T, _values(T) - ra_tilde * (1.0 - z))


def theta_to_temperature(theta, ra_tilde):
    """T = theta + R~a (1 - x2)."""
    z = theta.grid.z
    return _rewrap(theta, _values(theta) + ra_tilde * (1.0 - z))


# polynomial bump psi(z) = 30 z^2 (1-z)^2 and its antiderivative
def bump(z):
    z = np.asarray(z, dtype=float)
    out = 30.0 * z ** 2 * (1.0 - z) ** 2
    return np.where((z >= 0) & (z <= 1), out, 0.0)


def bump_cdf(s):
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s ** 3 * (10.0 + s * (-15.0 + 6.0 * s))


# int_0^1 psi^2 = 900 B(5, 5) = 10/7, obtained by exact polynomial integration
BUMP_SQ_INTEGRAL = float((np.polynomial.Polynomial([0, 0, 30, -60, 30]) ** 2).integ()(1.0))


@dataclass(frozen=True)
class BackgroundProfile:
    """Boundary-layer background temperature tau(x2).

    ``psi_samples`` holds the unit-mass bump on the vertical grid and
    ``tau_samples`` the profile ``tau = R~a - (R~a/delta) int_0^x2 psi(s/delta) ds``.
    """
    delta: float
    ra_tilde: float
    z: np.ndarray
    psi_samples: np.ndarray
    tau_samples: np.ndarray

    def tau(self, z):
        z = np.asarray(z, dtype=float)
        out = self.ra_tilde * (1.0 - bump_cdf(z / self.delta))
        return np.where(z >= 1.0, 0.0, np.where(z <= 0.0, self.ra_tilde, out))

    def tau_prime(self, z):
        return -(self.ra_tilde / self.delta) * bump(np.asarray(z, dtype=float) / self.delta)

    def tau_prime_sq_integral(self):
        """Exact int_0^1 (tau')^2."""
        return self.ra_tilde ** 2 / self.delta * BUMP_SQ_INTEGRAL


def boundary_layer_width(ra, ra_tilde):
    return min(1.0, 1.0 / math.sqrt(2.0 * ra_tilde * ra))


def build_background_profile(ra, ra_tilde, grid) -> BackgroundProfile:
    """Background profile with delta = min(1, 1/sqrt(2 Ra R~a))."""
    delta = boundary_layer_width(ra, ra_tilde)
    z = grid.z
    psi = bump(z)
    prof = BackgroundProfile(delta=delta, ra_tilde=float(ra_tilde), z=z,
                             psi_samples=psi, tau_samples=None)
    tau = prof.tau(z)
    tau[0] = ra_tilde
    tau[-1] = 0.0
    object.__setattr__(prof, "tau_samples", tau)
    return prof
