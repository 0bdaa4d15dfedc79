"""Applying the inverse of the nested twisted preconditioner.

The factorization stores, per level, a lower factor with the level's own
block diagonal and a unit-diagonal upper factor; applying the inverse is a
lower sweep that marches from both grid ends toward the twist block,
followed by an upper sweep that marches back outward from the twist.  At
the innermost level the block solves degenerate to first-order linear
recurrences, which are evaluated by composing the affine update
coefficients over independent lanes so the sweep vectorizes.
"""

import numpy as np
from numba import njit, prange

from .banded_core import worker_team

CHAIN_LANES = 4


@njit(cache=True, nogil=True)
def _chain_scaled(x, dr, off, rhs, lo, hi, step, x_init, lanes, aw, cw):
    """Recurrence x[p] = (rhs[p] - off[p]*x[p-step]) * dr[p] for
    p = lo, lo+step, ..., hi (inclusive), seeded with x_init.

    With lanes > 1 the walk is split into equal chunks whose affine update
    coefficients (a, c) with x_new = a*x_prev + c are composed per lane,
    the lane carries are stitched sequentially and the values substituted
    back.  lanes == 1 evaluates the recurrence in its natural form.
    """
    m = (hi - lo) * step + 1
    if m <= 0:
        return
    if lanes <= 1 or m < 2 * lanes:
        xp = x_init
        p = lo
        for _ in range(m):
            xp = (rhs[p] - off[p] * xp) * dr[p]
            x[p] = xp
            p += step
        return
    chunk = m // lanes
    for l in range(lanes):
        base = l * chunk
        p = lo + base * step
        a = -off[p] * dr[p]
        aw[base] = a
        cw[base] = rhs[p] * dr[p]
        for t in range(1, chunk):
            p += step
            a = -off[p] * dr[p]
            aw[base + t] = a * aw[base + t - 1]
            cw[base + t] = a * cw[base + t - 1] + rhs[p] * dr[p]
    carry = x_init
    for l in range(lanes):
        base = l * chunk
        for t in range(chunk):
            x[lo + (base + t) * step] = aw[base + t] * carry + cw[base + t]
        carry = aw[base + chunk - 1] * carry + cw[base + chunk - 1]
    xp = carry
    p = lo + lanes * chunk * step
    for _ in range(lanes * chunk, m):
        xp = (rhs[p] - off[p] * xp) * dr[p]
        x[p] = xp
        p += step


@njit(cache=True, nogil=True)
def _chain_unit(x, dr, off, lo, hi, step, x_init, lanes, aw, cw):
    """In-place recurrence x[p] = x[p] - dr[p]*off[p]*x[p-step] along the
    same walk as _chain_scaled (unit diagonal, lane-composed)."""
    m = (hi - lo) * step + 1
    if m <= 0:
        return
    if lanes <= 1 or m < 2 * lanes:
        xp = x_init
        p = lo
        for _ in range(m):
            xp = x[p] - dr[p] * off[p] * xp
            x[p] = xp
            p += step
        return
    chunk = m // lanes
    for l in range(lanes):
        base = l * chunk
        p = lo + base * step
        aw[base] = -dr[p] * off[p]
        cw[base] = x[p]
        for t in range(1, chunk):
            p += step
            a = -dr[p] * off[p]
            aw[base + t] = a * aw[base + t - 1]
            cw[base + t] = a * cw[base + t - 1] + x[p]
    carry = x_init
    for l in range(lanes):
        base = l * chunk
        for t in range(chunk):
            x[lo + (base + t) * step] = aw[base + t] * carry + cw[base + t]
        carry = aw[base + chunk - 1] * carry + cw[base + chunk - 1]
    xp = carry
    p = lo + lanes * chunk * step
    for _ in range(lanes * chunk, m):
        xp = x[p] - dr[p] * off[p] * xp
        x[p] = xp
        p += step


@njit(cache=True, nogil=True)
def _line_lower(x, b, mr, l1, u1, s, e, lanes, aw, cw):
    """Forward phase of the twisted line solve on rows [s, e): both halves
    march toward the twist row, which is resolved last."""
    t = s + (e - s - 1) // 2
    if t - 1 >= s:
        _chain_scaled(x, mr, l1, b, s, t - 1, 1, 0.0, lanes, aw, cw)
    if t + 1 <= e - 1:
        _chain_scaled(x, mr, u1, b, e - 1, t + 1, -1, 0.0, lanes, aw, cw)
    acc = b[t]
    if t > s:
        acc -= l1[t] * x[t - 1]
    if t < e - 1:
        acc -= u1[t] * x[t + 1]
    x[t] = acc * mr[t]


@njit(cache=True, nogil=True)
def _line_upper(x, mr, l1, u1, s, e, lanes, aw, cw):
    """Backward phase: correct both halves outward from the twist row."""
    t = s + (e - s - 1) // 2
    if t - 1 >= s:
        _chain_unit(x, mr, u1, t - 1, s, -1, x[t], lanes, aw, cw)
    if t + 1 <= e - 1:
        _chain_unit(x, mr, l1, t + 1, e - 1, 1, x[t], lanes, aw, cw)


@njit(cache=True, nogil=True)
def _line_solve(x, b, mr, l1, u1, s, e, lanes, aw, cw):
    _line_lower(x, b, mr, l1, u1, s, e, lanes, aw, cw)
    _line_upper(x, mr, l1, u1, s, e, lanes, aw, cw)


@njit(cache=True, nogil=True)
def _plane_solve(x, b, xs, bs, mr, l1, u1, l2, u2, base, nx, ny, lanes, aw, cw):
    """Twisted solve of one factored plane: rows [base, base + nx*ny).

    b is consumed (the lower sweep eliminates into it); x receives the
    solution.  xs/bs are scratch rows for the upper sweep's line solves.
    """
    t = (ny - 1) // 2
    if t > 0:
        s = base
        _line_solve(x, b, mr, l1, u1, s, s + nx, lanes, aw, cw)
        for q in range(1, t):
            s = base + q * nx
            for r in range(s, s + nx):
                b[r] -= l2[r] * x[r - nx]
            _line_solve(x, b, mr, l1, u1, s, s + nx, lanes, aw, cw)
    if t < ny - 1:
        s = base + (ny - 1) * nx
        _line_solve(x, b, mr, l1, u1, s, s + nx, lanes, aw, cw)
        for q in range(ny - 2, t, -1):
            s = base + q * nx
            for r in range(s, s + nx):
                b[r] -= u2[r] * x[r + nx]
            _line_solve(x, b, mr, l1, u1, s, s + nx, lanes, aw, cw)
    s = base + t * nx
    if t > 0:
        for r in range(s, s + nx):
            b[r] -= l2[r] * x[r - nx]
    if t < ny - 1:
        for r in range(s, s + nx):
            b[r] -= u2[r] * x[r + nx]
    _line_solve(x, b, mr, l1, u1, s, s + nx, lanes, aw, cw)
    for q in range(t - 1, -1, -1):
        s = base + q * nx
        for r in range(s, s + nx):
            bs[r] = u2[r] * x[r + nx]
        _line_solve(xs, bs, mr, l1, u1, s, s + nx, lanes, aw, cw)
        for r in range(s, s + nx):
            x[r] -= xs[r]
    for q in range(t + 1, ny):
        s = base + q * nx
        for r in range(s, s + nx):
            bs[r] = l2[r] * x[r - nx]
        _line_solve(xs, bs, mr, l1, u1, s, s + nx, lanes, aw, cw)
        for r in range(s, s + nx):
            x[r] -= xs[r]


@njit(cache=True, nogil=True, parallel=True)
def _apply_kernel(x, b, xs2, bs2, xs3, bs3, mr, l1, u1, l2, u2, l3, u3,
                  nx, ny, nz, lanes):
    """Full three-level twisted solve; b is consumed, x receives B^{-1} b.

    The two halves of each sweep touch disjoint plane ranges and run as a
    two-member parallel team; the twist plane is handled in between.
    """
    nxy = nx * ny
    t = (nz - 1) // 2
    for h in prange(2):
        aw = np.empty(nx)
        cw = np.empty(nx)
        if h == 0:
            if t > 0:
                _plane_solve(x, b, xs2, bs2, mr, l1, u1, l2, u2, 0,
                             nx, ny, lanes, aw, cw)
                for p in range(1, t):
                    base = p * nxy
                    for r in range(base, base + nxy):
                        b[r] -= l3[r] * x[r - nxy]
                    _plane_solve(x, b, xs2, bs2, mr, l1, u1, l2, u2, base,
                                 nx, ny, lanes, aw, cw)
        else:
            if t < nz - 1:
                base = (nz - 1) * nxy
                _plane_solve(x, b, xs2, bs2, mr, l1, u1, l2, u2, base,
                             nx, ny, lanes, aw, cw)
                for p in range(nz - 2, t, -1):
                    base = p * nxy
                    for r in range(base, base + nxy):
                        b[r] -= u3[r] * x[r + nxy]
                    _plane_solve(x, b, xs2, bs2, mr, l1, u1, l2, u2, base,
                                 nx, ny, lanes, aw, cw)
    base = t * nxy
    if t > 0:
        for r in range(base, base + nxy):
            b[r] -= l3[r] * x[r - nxy]
    if t < nz - 1:
        for r in range(base, base + nxy):
            b[r] -= u3[r] * x[r + nxy]
    aw0 = np.empty(nx)
    cw0 = np.empty(nx)
    _plane_solve(x, b, xs2, bs2, mr, l1, u1, l2, u2, base, nx, ny,
                 lanes, aw0, cw0)
    for h in prange(2):
        aw = np.empty(nx)
        cw = np.empty(nx)
        if h == 0:
            for p in range(t - 1, -1, -1):
                base = p * nxy
                for r in range(base, base + nxy):
                    bs3[r] = u3[r] * x[r + nxy]
                _plane_solve(xs3, bs3, xs2, bs2, mr, l1, u1, l2, u2, base,
                             nx, ny, lanes, aw, cw)
                for r in range(base, base + nxy):
                    x[r] -= xs3[r]
        else:
            for p in range(t + 1, nz):
                base = p * nxy
                for r in range(base, base + nxy):
                    bs3[r] = l3[r] * x[r - nxy]
                _plane_solve(xs3, bs3, xs2, bs2, mr, l1, u1, l2, u2, base,
                             nx, ny, lanes, aw, cw)
                for r in range(base, base + nxy):
                    x[r] -= xs3[r]


class SolveWorkspace:
    """Scratch vectors reused across preconditioner applications.

    One rhs copy plus a scratch (x, b) pair per nesting level above the
    lines; the twisted halves write disjoint row ranges, so a single set
    is safe under the two-member team.
    """

    def __init__(self, n):
        self.b = np.empty(n)
        self.x2 = np.empty(n)
        self.b2 = np.empty(n)
        self.x3 = np.empty(n)
        self.b3 = np.empty(n)


def chain_bidiagonal_solve(diag_recip, offdiag, b, direction="forward",
                           lanes=CHAIN_LANES):
    """Solve a bidiagonal system by the chained recurrence
    x[i] = (b[i] - offdiag[i]*x[i_prev]) * diag_recip[i].

    "forward" walks rows 0..n-1 (offdiag[i] couples to i-1), "backward"
    walks n-1..0 (offdiag[i] couples to i+1).  lanes == 1 reproduces the
    plain sequential recurrence bit for bit.
    """
    dr = np.ascontiguousarray(diag_recip, dtype=np.float64)
    off = np.ascontiguousarray(offdiag, dtype=np.float64)
    rhs = np.ascontiguousarray(b, dtype=np.float64)
    n = dr.shape[0]
    if off.shape[0] != n or rhs.shape[0] != n:
        raise ValueError("chain solve operands must have equal length")
    if lanes < 1:
        raise ValueError("lanes must be >= 1")
    x = np.empty(n)
    if n == 0:
        return x
    aw = np.empty(n)
    cw = np.empty(n)
    if direction == "forward":
        _chain_scaled(x, dr, off, rhs, 0, n - 1, 1, 0.0, lanes, aw, cw)
    elif direction == "backward":
        _chain_scaled(x, dr, off, rhs, n - 1, 0, -1, 0.0, lanes, aw, cw)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return x


def ntd_apply(pre, b, workers=1, lanes=CHAIN_LANES, workspace=None):
    """Apply the factored preconditioner's inverse to b.

    workers in {1, 2, 4}: the twisted halves run as a parallel pair; the
    result is bitwise independent of the worker count.
    """
    n = pre.n_rows
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (n,):
        raise ValueError(f"rhs length {b.shape} does not match {n} rows")
    if workspace is None:
        workspace = SolveWorkspace(n)
    x = np.empty(n)
    np.copyto(workspace.b, b)
    with worker_team(workers):
        _apply_kernel(x, workspace.b, workspace.x2, workspace.b2,
                      workspace.x3, workspace.b3,
                      pre.m_recip, pre.l1, pre.u1, pre.l2, pre.u2,
                      pre.l3, pre.u3, pre.nx, pre.ny, pre.nz, lanes)
    return x
