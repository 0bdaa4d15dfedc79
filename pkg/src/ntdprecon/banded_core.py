"""Diagonal-format storage for 7-band structured-grid matrices plus the dense
vector kernels everything else is built on."""

from contextlib import contextmanager

import numpy as np
import numba
from numba import njit, prange

N_BANDS = 7
MAX_WORKERS = 4


class FactorizationError(RuntimeError):
    """Raised when a factorization hits a zero or non-finite pivot."""


def clamp_workers(workers):
    """Clamp a requested worker count to what the thread pool can schedule."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return max(1, min(workers, MAX_WORKERS, numba.config.NUMBA_NUM_THREADS))


@contextmanager
def worker_team(workers):
    """Temporarily size the kernel thread team to `workers` (clamped)."""
    prev = numba.get_num_threads()
    numba.set_num_threads(clamp_workers(workers))
    try:
        yield
    finally:
        numba.set_num_threads(prev)


class BandedMatrix:
    """A matrix on an nx*ny*nz grid stored as seven length-N diagonals.

    Row r couples to r-1/r+1 within a grid line, r-nx/r+nx within a plane
    and r-nx*ny/r+nx*ny across planes.  Band d holds entry (r, r+d) at
    index r; positions whose neighbour would fall off the grid or cross a
    line/plane boundary are kept exactly zero.

    Storage order of `data` rows: -nx*ny, -nx, -1, 0, +1, +nx, +nx*ny.
    """

    def __init__(self, nx, ny, nz, data=None):
        if nx < 1 or ny < 1 or nz < 1:
            raise ValueError("grid dimensions must be positive")
        self.nx = int(nx)
        self.ny = int(ny)
        self.nz = int(nz)
        n = self.nx * self.ny * self.nz
        if data is None:
            data = np.zeros((N_BANDS, n))
        else:
            data = np.ascontiguousarray(data, dtype=np.float64)
            if data.shape != (N_BANDS, n):
                raise ValueError(
                    f"band data must have shape ({N_BANDS}, {n}), got {data.shape}"
                )
        self.data = data

    @property
    def n_rows(self):
        return self.nx * self.ny * self.nz

    @property
    def offsets(self):
        nxy = self.nx * self.ny
        return (-nxy, -self.nx, -1, 0, 1, self.nx, nxy)

    def band(self, offset):
        """Return the length-N diagonal at `offset` (a view into data)."""
        try:
            idx = self.offsets.index(offset)
        except ValueError:
            raise ValueError(f"no band at offset {offset}") from None
        return self.data[idx]

    def copy(self):
        return BandedMatrix(self.nx, self.ny, self.nz, self.data.copy())

    def to_dense(self):
        """Materialize as a dense array (debugging / tiny grids only).
        Accumulates, since offsets can coincide on degenerate grids."""
        n = self.n_rows
        a = np.zeros((n, n))
        for idx, d in enumerate(self.offsets):
            for r in range(max(0, -d), min(n, n - d)):
                a[r, r + d] += self.data[idx, r]
        return a


@njit(cache=True, nogil=True, parallel=True)
def _spmv_kernel(data, x, y, n, nx, nxy):
    lo3 = data[0]
    lo2 = data[1]
    lo1 = data[2]
    dg = data[3]
    up1 = data[4]
    up2 = data[5]
    up3 = data[6]
    for r in prange(n):
        s = dg[r] * x[r]
        if r >= 1:
            s += lo1[r] * x[r - 1]
        if r >= nx:
            s += lo2[r] * x[r - nx]
        if r >= nxy:
            s += lo3[r] * x[r - nxy]
        if r + 1 < n:
            s += up1[r] * x[r + 1]
        if r + nx < n:
            s += up2[r] * x[r + nx]
        if r + nxy < n:
            s += up3[r] * x[r + nxy]
        y[r] = s


def spmv(a, x, workers=1):
    """y = A x for a BandedMatrix.  Parallel over contiguous row blocks;
    the result is independent of the worker count."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (a.n_rows,):
        raise ValueError(f"operand length {x.shape} does not match {a.n_rows} rows")
    y = np.empty(a.n_rows)
    with worker_team(workers):
        _spmv_kernel(a.data, x, y, a.n_rows, a.nx, a.nx * a.ny)
    return y


def dot(x, y):
    if x.shape != y.shape:
        raise ValueError("dot operands must have equal length")
    return float(np.dot(x, y))


def axpy(alpha, x, y):
    """alpha*x + y as a new vector."""
    if x.shape != y.shape:
        raise ValueError("axpy operands must have equal length")
    return alpha * x + y


def norm2(x):
    return float(np.sqrt(np.dot(x, x)))


def to_matrix_market(a, path):
    """Write a BandedMatrix in MatrixMarket coordinate format (1-indexed,
    'general', symmetric entries written out explicitly)."""
    n = a.n_rows
    rows = []
    for idx, d in enumerate(a.offsets):
        band = a.data[idx]
        for r in range(max(0, -d), min(n, n - d)):
            v = band[r]
            if v != 0.0:
                rows.append((r + 1, r + d + 1, v))
    rows.sort()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{n} {n} {len(rows)}\n")
        for i, j, v in rows:
            fh.write(f"{i} {j} {v:.17g}\n")
