"""Forcing bases, counter-based Wiener increments and low-mode projections."""
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import legendre

from .fields import Grid, ScalarField, VelocityField, ddz, integrate, velocity_from_psi


class UnderResolved(ValueError):
    pass


@dataclass(frozen=True)
class NoiseMode:
    j: int
    m: int
    parity: str
    eigenvalue: float
    amplitude: float

    def as_dict(self):
        return {"j": self.j, "m": self.m, "parity": self.parity,
                "eigenvalue": self.eigenvalue, "amplitude": self.amplitude}


@dataclass(frozen=True, eq=False)
class NoiseBasis:
    """Ordered forcing modes on a grid.

    ``shapes`` holds the L2-normalized mode functions, shape (n, nx, nz):
    the eigenfunctions themselves for temperature, the streamfunctions
    whose velocity has unit L2 norm for velocity.  The forcing fields are
    ``sigma_k = amplitude_k * mode_k``.
    """
    kind: str
    grid: Grid
    modes: tuple
    shapes: np.ndarray
    u1: np.ndarray = None
    u2: np.ndarray = None

    def __len__(self):
        return len(self.modes)

    @property
    def amplitudes(self):
        return np.array([m.amplitude for m in self.modes])

    @property
    def eigenvalues(self):
        return np.array([m.eigenvalue for m in self.modes])

    @property
    def total_norm_sq(self):
        if not self.modes:
            return 0.0
        if self.kind == "temperature":
            norms = integrate(self.shapes ** 2, self.grid)
        else:
            norms = integrate(self.u1 ** 2 + self.u2 ** 2, self.grid)
        return float(np.sum(self.amplitudes ** 2 * norms))

    def manifest(self):
        return [m.as_dict() for m in self.modes]


def _horizontal(grid, j, parity):
    x = grid.x
    if j == 0:
        return np.ones_like(x)
    kx = 2 * np.pi * j / grid.aspect
    return np.cos(kx * x) if parity == "cos" else np.sin(kx * x)


def _check_resolved(grid, modes):
    for md in modes:
        if 2 * md.m >= grid.nz or 3 * md.j >= grid.nx:
            raise UnderResolved(
                f"basis under-resolved: mode (j={md.j}, m={md.m}) needs m < nz/2 and j < nx/3 "
                f"on a {grid.nx}x{grid.nz} grid")


def _sort_key(md):
    return (md.eigenvalue, md.m, md.j, 0 if md.parity == "cos" else 1)


def build_temperature_basis(n2, grid: Grid) -> NoiseBasis:
    """First n2 Dirichlet eigenfunctions, equal amplitudes, sum ||sigma_k||^2 = 1."""
    if n2 < 1:
        raise ValueError("n2 must be >= 1")
    L = grid.aspect
    cands = []
    jmax = grid.nx // 3 + 1
    mmax = grid.nz // 2 + 1
    for j in range(jmax + 1):
        for m in range(1, mmax + 1):
            ev = (2 * np.pi * j / L) ** 2 + (np.pi * m) ** 2
            for par in (("cos",) if j == 0 else ("cos", "sin")):
                cands.append(NoiseMode(j, m, par, ev, 0.0))
    cands.sort(key=_sort_key)
    if n2 > len(cands):
        raise UnderResolved(f"basis under-resolved: {n2} modes requested")
    amp = 1.0 / math.sqrt(n2)
    modes = tuple(replace(md, amplitude=amp) for md in cands[:n2])
    _check_resolved(grid, modes)
    shapes = np.empty((n2,) + grid.shape)
    for i, md in enumerate(modes):
        f = np.outer(_horizontal(grid, md.j, md.parity), np.sin(np.pi * md.m * grid.z))
        f[:, 0] = f[:, -1] = 0.0
        shapes[i] = f / math.sqrt(integrate(f ** 2, grid))
    return NoiseBasis("temperature", grid, modes, shapes)


def _clamped_profiles(grid, j, mmax):
    """Gram-Schmidt clamped polynomials for horizontal wavenumber index j.

    Orthonormal in the velocity inner product int(q' q'' + k^2 q q''),
    restricted to one horizontal factor of unit mean square.
    Returns (profiles, rayleigh_quotients).
    """
    z = grid.z
    kx = 2 * np.pi * j / grid.aspect
    w = grid.wz
    dz2 = grid.dz ** 2
    raw = []
    for m in range(1, mmax + 1):
        c = np.zeros(m)
        c[-1] = 1.0
        q = z ** 2 * (1 - z) ** 2 * legendre.legval(2 * z - 1, c)
        raw.append(q)

    def dq(q):
        d = ddz(q, grid)
        d[0] = d[-1] = 0.0
        return d

    def ip(a, b):
        return np.sum(w * (dq(a) * dq(b) + kx ** 2 * a * b))

    out = []
    for q in raw:
        for _ in range(2):
            for p in out:
                q = q - ip(q, p) * p
        q = q / math.sqrt(ip(q, q))
        q[0] = q[-1] = 0.0
        out.append(q)
    rq = []
    for q in out:
        om = np.empty_like(q)
        om[1:-1] = -((q[2:] - 2 * q[1:-1] + q[:-2]) / dz2 - kx ** 2 * q[1:-1])
        om[0] = -2 * q[1] / dz2
        om[-1] = -2 * q[-2] / dz2
        rq.append(np.sum(w * om ** 2))
    return out, rq


def build_velocity_basis(n1, grid: Grid, amplitude=1.0) -> NoiseBasis:
    """First n1 divergence-free no-slip modes from clamped streamfunctions.

    psi_{j,m} = trig(2 pi j x1 / L) q_m(x2) with q = q' = 0 on the walls,
    Gram-Schmidt orthonormalized in L2 of velocity, ordered by the
    Rayleigh quotient ||omega||^2 / ||u||^2.
    """
    if n1 < 0:
        raise ValueError("n1 must be >= 0")
    if n1 == 0:
        empty = np.zeros((0,) + grid.shape)
        return NoiseBasis("velocity", grid, (), empty, empty, empty)
    jmax = grid.nx // 3 + 1
    mmax = min(grid.nz // 2 + 1, grid.nz - 3)
    cands = []
    profiles = {}
    for j in range(jmax + 1):
        qs, rqs = _clamped_profiles(grid, j, mmax)
        for m, (q, rq) in enumerate(zip(qs, rqs), start=1):
            profiles[(j, m)] = q
            for par in (("cos",) if j == 0 else ("cos", "sin")):
                cands.append(NoiseMode(j, m, par, float(rq), float(amplitude)))
    cands.sort(key=_sort_key)
    if n1 > len(cands):
        raise UnderResolved(f"basis under-resolved: {n1} velocity modes requested")
    modes = tuple(cands[:n1])
    _check_resolved(grid, modes)
    shapes = np.empty((n1,) + grid.shape)
    for i, md in enumerate(modes):
        shapes[i] = np.outer(_horizontal(grid, md.j, md.parity), profiles[(md.j, md.m)])
    u1, u2 = velocity_from_psi(shapes, grid)
    scale = 1.0 / np.sqrt(integrate(u1 ** 2 + u2 ** 2, grid))
    shapes = shapes * scale[:, None, None]
    u1 = u1 * scale[:, None, None]
    u2 = u2 * scale[:, None, None]
    return NoiseBasis("velocity", grid, modes, shapes, u1, u2)


# --------------------------------------------------------------- randomness

_MASK64 = (1 << 64) - 1


def splitmix64(x):
    """One round of the splitmix64 output function."""
    x = (int(x) + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_member_seed(base_seed, member_index):
    return splitmix64((int(base_seed) ^ int(member_index)) & _MASK64)


NOISE_LANE = 0
INIT_LANE = 1
AUX_LANE = 2


def philox_normals(seed, trajectory_id, step, count, lane=NOISE_LANE):
    """Standard normals at stream coordinates (seed, trajectory, step, lane).

    Philox4x64 keyed by (seed, trajectory_id) with the counter starting at
    (0, step, lane, 0); uniforms are mapped by Box-Muller, so exactly
    ``count`` rounded up to even raw words are consumed.
    """
    if count == 0:
        return np.zeros(0)
    key = np.array([int(seed) & _MASK64, int(trajectory_id) & _MASK64], dtype=np.uint64)
    ctr = np.array([0, int(step) & _MASK64, int(lane) & _MASK64, 0], dtype=np.uint64)
    bg = np.random.Philox(key=key, counter=ctr)
    n = count + (count & 1)
    raw = bg.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    ang = 2.0 * np.pi * u[1::2]
    out = np.empty(n)
    out[0::2] = r * np.cos(ang)
    out[1::2] = r * np.sin(ang)
    return out[:count]


@dataclass(frozen=True)
class WienerStream:
    """Position in a counter-based Gaussian stream.

    ``trajectory_id`` may be a tuple of ids, one per ensemble member; the
    draws then carry a leading member axis.
    """
    seed: int
    trajectory_id: object = 0
    step_index: int = 0

    @property
    def ids(self):
        t = self.trajectory_id
        return tuple(t) if isinstance(t, (tuple, list, np.ndarray)) else None

    def normals(self, count, lane=NOISE_LANE):
        ids = self.ids
        if ids is None:
            return philox_normals(self.seed, self.trajectory_id, self.step_index, count, lane)
        return np.stack([philox_normals(self.seed, t, self.step_index, count, lane) for t in ids])

    def advance(self, n=1):
        return replace(self, step_index=self.step_index + n)

    def member(self, i):
        ids = self.ids
        return replace(self, trajectory_id=ids[i]) if ids is not None else self

    def coordinates(self):
        return (int(self.seed), self.ids if self.ids is not None else int(self.trajectory_id),
                int(self.step_index))


def combine(basis: NoiseBasis, coeffs, component="shapes"):
    """sum_k coeffs[..., k] * basis mode k, accumulated in mode order."""
    arr = getattr(basis, component)
    coeffs = np.asarray(coeffs)
    out = np.zeros(coeffs.shape[:-1] + basis.grid.shape)
    for k in range(coeffs.shape[-1]):
        out += coeffs[..., k, None, None] * arr[k]
    return out


def sample_increment(basis: NoiseBasis, dt, stream: WienerStream, lane=NOISE_LANE):
    """sum_k sigma_k sqrt(dt) g_k with g drawn at the stream's coordinates."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    g = stream.normals(len(basis), lane)
    coeffs = basis.amplitudes * math.sqrt(dt) * g
    values = combine(basis, coeffs)
    if basis.kind == "velocity":
        return VelocityField(basis.grid, values)
    return ScalarField(basis.grid, values)


def modal_coefficients(f, basis: NoiseBasis, n=None):
    """L2 inner products of f with the first n normalized modes."""
    n = len(basis) if n is None else n
    if n > len(basis):
        raise ValueError(f"only {len(basis)} modes available, {n} requested")
    grid = basis.grid
    if basis.kind == "velocity":
        u1, u2 = (f.u1, f.u2) if isinstance(f, VelocityField) else f
        lead = np.shape(u1)[:-2]
        out = np.empty(lead + (n,))
        for k in range(n):
            out[..., k] = integrate(u1 * basis.u1[k] + u2 * basis.u2[k], grid)
        return out
    v = f.values if isinstance(f, ScalarField) else np.asarray(f)
    out = np.empty(v.shape[:-2] + (n,))
    for k in range(n):
        out[..., k] = integrate(v * basis.shapes[k], grid)
    return out


def project_low_modes(f, basis: NoiseBasis, n):
    """Orthogonal L2 projection onto the span of the first n modes."""
    c = modal_coefficients(f, basis, n)
    if n == 0:
        c = np.zeros(np.shape(c)[:-1] + (0,))
    sub = NoiseBasis(basis.kind, basis.grid, basis.modes[:n], basis.shapes[:n])
    values = combine(sub, c)
    if basis.kind == "velocity":
        return VelocityField(basis.grid, values)
    return ScalarField(basis.grid, values)
