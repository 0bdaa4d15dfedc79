"""Diffusion test problems on the unit cube: jumping coefficient fields and
their 7-point finite-volume discretization."""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit, prange

from .banded_core import BandedMatrix, spmv, worker_team


class CoefficientField(IntEnum):
    """Diffusion coefficient layouts, numbered as in the benchmark CLI."""

    SKYSCRAPER = 1
    RING = 2
    POISSON = 3


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on the open unit cube."""

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.nz < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def h(self):
        return 1.0 / (self.nx + 1)

    @property
    def n_rows(self):
        return self.nx * self.ny * self.nz


@njit(cache=True, nogil=True)
def _kappa_scalar(kind, x, y, z):
    if kind == 1:
        # skyscrapers: high islands on cells whose decimal block index is
        # even in every direction, with height growing along y
        ix = int(np.floor(10.0 * x))
        iy = int(np.floor(10.0 * y))
        iz = int(np.floor(10.0 * z))
        if ix % 2 == 0 and iy % 2 == 0 and iz % 2 == 0:
            return 1.0e3 * (iy + 1.0)
        return 1.0
    if kind == 2:
        # spherical shell of high conductivity around the cube center
        dx = x - 0.5
        dy = y - 0.5
        dz = z - 0.5
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        if 1.0 / (2.0 * np.sqrt(2.0)) <= r <= 0.5:
            return 1.0e3
        return 1.0
    return 1.0


def kappa_eval(field, point):
    """Coefficient value at a point strictly inside the unit cube."""
    kind = int(CoefficientField(field))
    x, y, z = (float(c) for c in point)
    if not (0.0 < x < 1.0 and 0.0 < y < 1.0 and 0.0 < z < 1.0):
        raise ValueError(f"point {point!r} is not inside the open unit cube")
    return float(_kappa_scalar(kind, x, y, z))


@njit(cache=True, nogil=True, parallel=True)
def _kappa_grid(kind, nx, ny, nz, kap):
    nxy = nx * ny
    n = nxy * nz
    for r in prange(n):
        k = r // nxy
        j = (r - k * nxy) // nx
        i = r - k * nxy - j * nx
        kap[r] = _kappa_scalar(
            kind, (i + 0.5) / nx, (j + 0.5) / ny, (k + 0.5) / nz
        )


@njit(cache=True, nogil=True, parallel=True)
def _assemble_kernel(nx, ny, nz, kap, data):
    nxy = nx * ny
    n = nxy * nz
    for r in prange(n):
        k = r // nxy
        j = (r - k * nxy) // nx
        i = r - k * nxy - j * nx
        kc = kap[r]
        diag = 0.0
        if i > 0:
            c = 2.0 * kc * kap[r - 1] / (kc + kap[r - 1])
            data[2, r] = -c
            diag += c
        else:
            diag += kc
        if i + 1 < nx:
            c = 2.0 * kc * kap[r + 1] / (kc + kap[r + 1])
            data[4, r] = -c
            diag += c
        else:
            diag += kc
        if j > 0:
            c = 2.0 * kc * kap[r - nx] / (kc + kap[r - nx])
            data[1, r] = -c
            diag += c
        else:
            diag += kc
        if j + 1 < ny:
            c = 2.0 * kc * kap[r + nx] / (kc + kap[r + nx])
            data[5, r] = -c
            diag += c
        else:
            diag += kc
        if k > 0:
            c = 2.0 * kc * kap[r - nxy] / (kc + kap[r - nxy])
            data[0, r] = -c
            diag += c
        else:
            diag += kc
        if k + 1 < nz:
            c = 2.0 * kc * kap[r + nxy] / (kc + kap[r + nxy])
            data[6, r] = -c
            diag += c
        else:
            diag += kc
        data[3, r] = diag


def assemble(grid, field, workers=1):
    """Assemble the 7-point diffusion operator for `field` on `grid`.

    Face coefficients are harmonic means of the two adjacent cell values;
    Dirichlet boundary faces use the interior cell's coefficient and
    contribute to the diagonal only.  Rows are scaled by h^2, so the
    constant-coefficient interior stencil is (-1, ..., 6, ..., -1).
    """
    kind = int(CoefficientField(field))
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    kap = np.empty(grid.n_rows)
    a = BandedMatrix(nx, ny, nz)
    with worker_team(workers):
        _kappa_grid(kind, nx, ny, nz, kap)
        _assemble_kernel(nx, ny, nz, kap, a.data)
    return a


def make_rhs(a, mode="ones", workers=1):
    """Right-hand side for a benchmark solve.

    "ones": the all-ones vector.  "manufactured": A times the all-ones
    vector, so the exact solution is known.
    """
    ones = np.ones(a.n_rows)
    if mode == "ones":
        return ones
    if mode == "manufactured":
        return spmv(a, ones, workers=workers)
    raise ValueError(f"unknown rhs mode {mode!r}")
