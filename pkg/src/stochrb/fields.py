"""Grid, fields, discrete norms and the advection operator.

The domain is [0, L] x [0, 1], periodic in x1 and bounded by walls at
x2 = 0, 1.  Arrays have shape ``(..., nx, nz)``: any leading axes index
ensemble members and are carried through every operation unchanged.
Derivatives are spectral in x1 and second-order finite differences in x2.
"""
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    nx: int
    nz: int
    aspect: float = 2.0

    def __post_init__(self):
        if self.nx < 8 or self.nx & (self.nx - 1):
            raise ValueError(f"nx must be a power of two >= 8, got {self.nx}")
        if self.nz < 9 or self.nz % 2 == 0:
            raise ValueError(f"nz must be odd and >= 9, got {self.nz}")
        if not self.aspect > 0:
            raise ValueError(f"aspect must be > 0, got {self.aspect}")

    @property
    def dx(self):
        return self.aspect / self.nx

    @property
    def dz(self):
        return 1.0 / (self.nz - 1)

    @property
    def shape(self):
        return (self.nx, self.nz)

    @cached_property
    def x(self):
        return np.arange(self.nx) * self.dx

    @cached_property
    def z(self):
        return np.linspace(0.0, 1.0, self.nz)

    @cached_property
    def mesh(self):
        return np.meshgrid(self.x, self.z, indexing="ij")

    @cached_property
    def k(self):
        """Horizontal wavenumbers 2 pi j / L of the rfft modes."""
        return 2 * np.pi * np.arange(self.nx // 2 + 1) / self.aspect

    @cached_property
    def ik(self):
        # the Nyquist derivative is dropped so that d/dx1 stays skew-symmetric
        ik = 1j * self.k
        ik[-1] = 0.0
        return ik[:, None]

    @cached_property
    def k2(self):
        return (self.k ** 2)[:, None]

    @cached_property
    def dealias_mask(self):
        j = np.arange(self.nx // 2 + 1)
        return (3 * j < self.nx).astype(float)[:, None]

    @cached_property
    def wz(self):
        w = np.full(self.nz, self.dz)
        w[0] = w[-1] = 0.5 * self.dz
        return w

    @property
    def area(self):
        return self.aspect


def _check_same(a, b):
    if a != b:
        raise GridMismatch(f"fields live on different grids: {a} vs {b}")


# ---------------------------------------------------------------- transforms

def rfft_x(f):
    return np.fft.rfft(f, axis=-2)


def irfft_x(F, grid):
    return np.fft.irfft(F, n=grid.nx, axis=-2)


def ddx(f, grid):
    return irfft_x(grid.ik * rfft_x(f), grid)


def ddz(f, grid):
    """Centered differences inside, second-order one-sided on the walls."""
    dz = grid.dz
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2 * dz)
    out[..., 0] = (-3 * f[..., 0] + 4 * f[..., 1] - f[..., 2]) / (2 * dz)
    out[..., -1] = (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * dz)
    return out


def dealias(f, grid):
    return irfft_x(grid.dealias_mask * rfft_x(f), grid)


# -------------------------------------------------------------------- fields

@dataclass(frozen=True)
class ScalarField:
    """Grid samples of a temperature-like scalar.

    ``values`` has shape ``(..., nx, nz)``; the last axis runs from the
    bottom wall (x2 = 0) to the top wall (x2 = 1).
    """
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[-2:] != self.grid.shape:
            raise GridMismatch(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid, batch=()):
        return cls(grid, np.zeros(tuple(batch) + grid.shape))

    @classmethod
    def from_function(cls, grid, fn):
        X, Z = grid.mesh
        return cls(grid, fn(X, Z))

    def __add__(self, other):
        _check_same(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a):
        return ScalarField(self.grid, self.values * a)

    __rmul__ = __mul__

    def horizontal_mean(self):
        return self.values.mean(axis=-2)


def thom_vorticity(psi, grid, psi_hat=None):
    """omega = -lap(psi) with Thom's wall closure -2 psi_1 / dz^2."""
    dz2 = grid.dz ** 2
    if psi_hat is None:
        psi_hat = rfft_x(psi)
    om = irfft_x(grid.k2 * psi_hat, grid)
    om[..., 1:-1] -= (psi[..., 2:] - 2 * psi[..., 1:-1] + psi[..., :-2]) / dz2
    om[..., 0] = -2 * psi[..., 1] / dz2
    om[..., -1] = -2 * psi[..., -2] / dz2
    return om


def velocity_from_psi(psi, grid, psi_hat=None):
    if psi_hat is None:
        psi_hat = rfft_x(psi)
    u1 = ddz(psi, grid)
    u1[..., 0] = 0.0
    u1[..., -1] = 0.0
    u2 = -irfft_x(grid.ik * psi_hat, grid)
    u2[..., 0] = 0.0
    u2[..., -1] = 0.0
    return u1, u2


@dataclass(frozen=True)
class VelocityField:
    """Divergence-free, no-slip velocity backed by a streamfunction.

    u1 = d psi / d x2, u2 = -d psi / d x1.  psi vanishes on both walls and
    the no-slip condition is imposed by the clamped closure (ghost value
    psi_{-1} = psi_1), which is also what yields Thom's wall vorticity.
    """
    grid: Grid
    psi: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.psi, dtype=float)
        if p.shape[-2:] != self.grid.shape:
            raise GridMismatch(f"psi shape {p.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "psi", p)

    @classmethod
    def zeros(cls, grid, batch=()):
        return cls(grid, np.zeros(tuple(batch) + grid.shape))

    @cached_property
    def psi_hat(self):
        return rfft_x(self.psi)

    @cached_property
    def _components(self):
        return velocity_from_psi(self.psi, self.grid, self.psi_hat)

    @property
    def u1(self):
        return self._components[0]

    @property
    def u2(self):
        return self._components[1]

    @cached_property
    def omega(self):
        return thom_vorticity(self.psi, self.grid, self.psi_hat)

    def divergence(self):
        return ddx(self.u1, self.grid) + ddz(self.u2, self.grid)

    def max_speed(self):
        return np.sqrt(self.u1 ** 2 + self.u2 ** 2).max()

    def __add__(self, other):
        _check_same(self.grid, other.grid)
        return VelocityField(self.grid, self.psi + other.psi)

    def __sub__(self, other):
        _check_same(self.grid, other.grid)
        return VelocityField(self.grid, self.psi - other.psi)

    def __mul__(self, a):
        return VelocityField(self.grid, self.psi * a)

    __rmul__ = __mul__


# --------------------------------------------------------------------- norms

def integrate(f, grid):
    """Trapezoidal quadrature over the domain (exact sum in periodic x1)."""
    # plain row sums: results for one ensemble member never depend on others
    return (f * grid.wz).sum(axis=-1).sum(axis=-1) * grid.dx


def inner(f, g, grid):
    return integrate(f * g, grid)


def l2_norm(f):
    """L2 norm of a scalar or velocity field."""
    if isinstance(f, VelocityField):
        return np.sqrt(integrate(f.u1 ** 2 + f.u2 ** 2, f.grid))
    return np.sqrt(integrate(f.values ** 2, f.grid))


def lp_norm(f, p):
    if p < 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    if isinstance(f, VelocityField):
        mag = np.sqrt(f.u1 ** 2 + f.u2 ** 2)
    else:
        mag = np.abs(f.values)
    return integrate(mag ** p, f.grid) ** (1.0 / p)


def grad_sq(values, grid):
    """Integral of |grad f|^2 for a raw array."""
    return integrate(ddx(values, grid) ** 2 + ddz(values, grid) ** 2, grid)


def grad_norm(f):
    """L2 norm of the gradient (all components for a velocity field)."""
    if isinstance(f, VelocityField):
        return np.sqrt(grad_sq(f.u1, f.grid) + grad_sq(f.u2, f.grid))
    return np.sqrt(grad_sq(f.values, f.grid))


def enstrophy(u: VelocityField):
    """Integral of omega^2 with Thom wall values.

    For no-slip divergence-free fields this equals ||grad u||^2 in the
    continuum; discretely it is the quadratic form of the clamped
    biharmonic operator, so energy identities of the Stokes solve hold
    exactly for it.
    """
    return integrate(u.omega ** 2, u.grid)


def dirichlet_energy(values, grid):
    """-<f, lap_h f> for a wall-vanishing f.

    This is the discrete ||grad f||^2 matching the operator used by the
    implicit diffusion solve: Parseval in x1 (Nyquist included) and
    edge differences in x2.
    """
    F = rfft_x(values)[..., 1:-1]
    w = np.full(grid.nx // 2 + 1, 2.0)
    w[0] = w[-1] = 1.0
    spec = (w[:, None] * grid.k2 * np.abs(F) ** 2).sum(axis=-1).sum(axis=-1)
    xpart = spec * grid.dz * grid.dx / grid.nx
    zpart = (np.diff(values, axis=-1) ** 2).sum(axis=-1).sum(axis=-1) * grid.dx / grid.dz
    return xpart + zpart


# ---------------------------------------------------------------- advection

def filtered_velocity(u: VelocityField, dealias_on=True):
    if not dealias_on:
        return u.u1, u.u2
    grid = u.grid
    ph = grid.dealias_mask * u.psi_hat
    return velocity_from_psi(irfft_x(ph, grid), grid, ph)


def advection_hat(f, u1, u2, grid, dealias_on=True):
    """Spectrum of the advection term u . grad f in skew-symmetric form.

    Returns the rfft (along x1) of ``(u . grad f + div(u f)) / 2`` with
    both wall rows set to zero.  With ``dealias_on`` the inputs and the
    output are truncated by the 2/3 rule; ``u1, u2`` are expected to be
    truncated already (see ``filtered_velocity``).
    """
    F = rfft_x(f)
    if dealias_on:
        F = grid.dealias_mask * F
        f = irfft_x(F, grid)
    fx = irfft_x(grid.ik * F, grid)
    fz = ddz(f, grid)
    g1 = u1 * f
    g2 = u2 * f
    out_hat = 0.5 * grid.ik * rfft_x(g1)
    rest = 0.5 * (u1 * fx + u2 * fz + ddz(g2, grid))
    out_hat = out_hat + rfft_x(rest)
    if dealias_on:
        out_hat = grid.dealias_mask * out_hat
    out_hat[..., 0] = 0.0
    out_hat[..., -1] = 0.0
    return out_hat


def advect(scalar: ScalarField, u: VelocityField, dealias_on=True) -> ScalarField:
    """u . grad(scalar).

    The discrete form is the average of the advective and conservative
    forms, which makes it exactly skew-adjoint: int theta (u.grad theta) = 0
    to rounding for every wall-vanishing theta.
    """
    _check_same(scalar.grid, u.grid)
    grid = scalar.grid
    u1, u2 = filtered_velocity(u, dealias_on)
    out = irfft_x(advection_hat(scalar.values, u1, u2, grid, dealias_on), grid)
    return ScalarField(grid, out)


# ----------------------------------------------------------------- snapshots

SNAPSHOT_MAGIC = b"BFLD"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


class SnapshotError(ValueError):
    pass


def write_snapshot(path, field, time=0.0):
    """Binary little-endian field snapshot (one nx x nz array)."""
    grid = field.grid
    values = field.values if isinstance(field, ScalarField) else field.psi
    if values.shape != grid.shape:
        raise ValueError("snapshots hold a single field, not an ensemble")
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.nx, grid.nz,
                          float(grid.aspect), float(time))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_snapshot(path):
    """Return (grid, values, time); raises SnapshotError on bad input."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, version, nx, nz, aspect, time = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: snapshot version {version}, reader supports {SNAPSHOT_VERSION}")
    try:
        grid = Grid(nx, nz, aspect)
    except ValueError as exc:
        raise SnapshotError(f"{path}: invalid grid in header ({exc})") from None
    body = raw[_HEADER.size:]
    if len(body) != 8 * nx * nz:
        raise SnapshotError(f"{path}: expected {8 * nx * nz} data bytes, found {len(body)}")
    values = np.frombuffer(body, dtype="<f8").reshape(nx, nz).astype(float)
    return grid, values, time


def write_profile_csv(path, field: ScalarField):
    """Horizontal-mean profile as CSV (columns x2, mean)."""
    prof = field.horizontal_mean()
    with open(path, "w") as fh:
        fh.write("x2,mean\n")
        for z, m in zip(field.grid.z, prof):
            fh.write(f"{z!r},{m!r}\n")
