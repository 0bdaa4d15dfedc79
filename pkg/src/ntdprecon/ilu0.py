"""Zero-fill incomplete LU of the two decoupled halves of a banded matrix.

The matrix is split at row floor(N/2) into two diagonal blocks; couplings
across the split are dropped, and each block gets an ILU0 factorization on
the original 7-band pattern.  The halves are fully independent, so both
the factorization and the triangular solves run as a two-member team.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .banded_core import FactorizationError, worker_team


@dataclass
class ILU0Factors:
    """Factored bands in the same 7-diagonal layout as the input matrix:
    the three lower bands hold unit-L multipliers, the diagonal and upper
    bands hold U."""

    nx: int
    ny: int
    nz: int
    split: int
    data: np.ndarray

    @property
    def n_rows(self):
        return self.nx * self.ny * self.nz


@njit(cache=True, nogil=True)
def _ilu0_half(f, orig, lo, hi, nx, nxy):
    """IKJ elimination of rows [lo, hi) on the original band pattern.
    Returns -1 or the row of a zero/non-finite pivot."""
    for i in range(lo, hi):
        for t in range(3):
            if t == 0:
                d = nxy
            elif t == 1:
                d = nx
            else:
                d = 1
            k = i - d
            if k < lo or orig[t, i] == 0.0:
                continue
            fac = f[t, i] / f[3, k]
            f[t, i] = fac
            for s in range(3):
                if s == 0:
                    du = 1
                elif s == 1:
                    du = nx
                else:
                    du = nxy
                uv = f[4 + s, k]
                if uv == 0.0:
                    continue
                j = k + du
                if j >= hi:
                    continue
                dj = j - i
                if dj == 0:
                    f[3, i] -= fac * uv
                elif dj == 1 and orig[4, i] != 0.0:
                    f[4, i] -= fac * uv
                elif dj == nx and orig[5, i] != 0.0:
                    f[5, i] -= fac * uv
                elif dj == nxy and orig[6, i] != 0.0:
                    f[6, i] -= fac * uv
                elif dj == -1 and orig[2, i] != 0.0:
                    f[2, i] -= fac * uv
                elif dj == -nx and orig[1, i] != 0.0:
                    f[1, i] -= fac * uv
                elif dj == -nxy and orig[0, i] != 0.0:
                    f[0, i] -= fac * uv
        # the row is final now; later rows divide by this pivot
        piv = f[3, i]
        if piv == 0.0 or not np.isfinite(piv):
            return i
    return -1


@njit(cache=True, nogil=True, parallel=True)
def _ilu0_factor_kernel(f, orig, split, n, nx, nxy, status):
    for h in prange(2):
        if h == 0:
            status[0] = _ilu0_half(f, orig, 0, split, nx, nxy)
        else:
            status[1] = _ilu0_half(f, orig, split, n, nx, nxy)


@njit(cache=True, nogil=True)
def _ilu0_apply_half(f, r, z, lo, hi, nx, nxy):
    for i in range(lo, hi):
        acc = r[i]
        if i - 1 >= lo:
            acc -= f[2, i] * z[i - 1]
        if i - nx >= lo:
            acc -= f[1, i] * z[i - nx]
        if i - nxy >= lo:
            acc -= f[0, i] * z[i - nxy]
        z[i] = acc
    for i in range(hi - 1, lo - 1, -1):
        acc = z[i]
        if i + 1 < hi:
            acc -= f[4, i] * z[i + 1]
        if i + nx < hi:
            acc -= f[5, i] * z[i + nx]
        if i + nxy < hi:
            acc -= f[6, i] * z[i + nxy]
        z[i] = acc / f[3, i]


@njit(cache=True, nogil=True, parallel=True)
def _ilu0_apply_kernel(f, r, z, split, n, nx, nxy):
    for h in prange(2):
        if h == 0:
            _ilu0_apply_half(f, r, z, 0, split, nx, nxy)
        else:
            _ilu0_apply_half(f, r, z, split, n, nx, nxy)


def _drop_split_couplings(f, split, n, offsets):
    for idx, d in enumerate(offsets):
        if d > 0:
            f[idx, max(0, split - d):split] = 0.0
        elif d < 0:
            f[idx, split:min(n, split - d)] = 0.0


def build_block_ilu0(a, workers=1, split=None):
    """ILU0 of blkdiag(A[:M, :M], A[M:, M:]) with M = floor(N/2).

    `split` is overridable for diagnostics (split == N factors the whole
    matrix as a single block).
    """
    n = a.n_rows
    if n < 2:
        raise ValueError("need at least two rows to split")
    if split is None:
        split = n // 2
    if not 1 <= split <= n:
        raise ValueError("split out of range")
    nx, nxy = a.nx, a.nx * a.ny
    f = a.data.copy()
    _drop_split_couplings(f, split, n, a.offsets)
    status = np.full(2, -1, dtype=np.int64)
    with worker_team(workers):
        _ilu0_factor_kernel(f, a.data, split, n, nx, nxy, status)
    bad = status[status >= 0]
    if bad.size:
        raise FactorizationError(f"zero or non-finite pivot at row {bad.min()}")
    return ILU0Factors(nx=a.nx, ny=a.ny, nz=a.nz, split=split, data=f)


def ilu0_apply(factors, r, workers=1):
    """z = (L U)^{-1} r, both halves solved independently."""
    n = factors.n_rows
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (n,):
        raise ValueError(f"operand length {r.shape} does not match {n} rows")
    z = np.empty(n)
    nx, nxy = factors.nx, factors.nx * factors.ny
    with worker_team(workers):
        _ilu0_apply_kernel(factors.data, r, z, factors.split, n, nx, nxy)
    return z
