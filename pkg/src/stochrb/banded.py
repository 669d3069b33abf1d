"""Batched symmetric banded factorizations for the per-wavenumber solves.

Every vertical operator in the solver (Poisson, Crank-Nicolson heat,
clamped biharmonic) is real, symmetric positive definite and banded with
half-bandwidth 1 or 2, one matrix per horizontal wavenumber.  They are
factored once as ``A = L D L^T`` and reused for complex right-hand sides.

The kernels are compiled with numba.  Each system is solved by the same
sequential recurrence, so results for one system never depend on how many
other systems (wavenumbers, ensemble members) are solved alongside it.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _ldl_factor(ab):
    # ab[k, d, i] = A_k[i + d, i]
    nk, p1, n = ab.shape
    p = p1 - 1
    low = np.zeros((nk, p1, n))
    diag = np.zeros((nk, n))
    for k in range(nk):
        for i in range(n):
            s = ab[k, 0, i]
            for d in range(1, p + 1):
                j = i - d
                if j >= 0:
                    s -= low[k, d, j] ** 2 * diag[k, j]
            if s <= 0.0:
                raise ValueError("matrix is not positive definite")
            diag[k, i] = s
            for d in range(1, p + 1):
                r = i + d
                if r >= n:
                    break
                s = ab[k, d, i]
                for e in range(1, p + 1):
                    j = i - e
                    if j < 0 or r - j > p:
                        continue
                    s -= low[k, r - j, j] * low[k, e, j] * diag[k, j]
                low[k, d, i] = s / diag[k, i]
    return low, diag


@njit(cache=True)
def _ldl_solve(low, diag, rhs, out):
    # rhs, out: (m, nk, n) complex; systems are independent along m and nk
    m, nk, n = rhs.shape
    p = low.shape[1] - 1
    for b in range(m):
        for k in range(nk):
            for i in range(n):
                s = rhs[b, k, i]
                for d in range(1, p + 1):
                    j = i - d
                    if j >= 0:
                        s -= low[k, d, j] * out[b, k, j]
                out[b, k, i] = s
            for i in range(n):
                out[b, k, i] = out[b, k, i] / diag[k, i]
            for i in range(n - 1, -1, -1):
                s = out[b, k, i]
                for d in range(1, p + 1):
                    r = i + d
                    if r < n:
                        s -= low[k, d, i] * out[b, k, r]
                out[b, k, i] = s


class BandedSPD:
    """Factored stack of symmetric positive definite banded matrices.

    Parameters
    ----------
    bands : ndarray, shape (nk, p + 1, n)
        Lower band storage, ``bands[k, d, i] = A_k[i + d, i]``.
    """

    def __init__(self, bands):
        bands = np.ascontiguousarray(bands, dtype=np.float64)
        self.bands = bands
        self.low, self.diag = _ldl_factor(bands)

    @property
    def n(self):
        return self.bands.shape[2]

    def solve(self, rhs):
        """Solve ``A_k x = rhs[..., k, :]`` for every leading index."""
        rhs = np.asarray(rhs)
        shape = rhs.shape
        flat = np.ascontiguousarray(rhs.reshape((-1,) + shape[-2:]), dtype=np.complex128)
        out = np.empty_like(flat)
        _ldl_solve(self.low, self.diag, flat, out)
        out = out.reshape(shape)
        if not np.iscomplexobj(rhs):
            out = out.real.copy()
        return out

    def matvec(self, x):
        """Apply the (unfactored) matrices, used for residual checks."""
        x = np.asarray(x)
        y = self.bands[:, 0, :] * x
        p = self.bands.shape[1] - 1
        for d in range(1, p + 1):
            off = self.bands[:, d, :-d]
            y[..., d:] += off * x[..., :-d]
            y[..., :-d] += off * x[..., d:]
        return y


def dense_to_bands(mats, p):
    """Lower band storage of a stack of dense symmetric matrices."""
    nk, n, _ = mats.shape
    bands = np.zeros((nk, p + 1, n))
    for d in range(p + 1):
        bands[:, d, : n - d] = np.diagonal(mats, offset=-d, axis1=1, axis2=2)
    return bands
