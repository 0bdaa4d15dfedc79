"""Building the nested twisted preconditioner.

The grid is split into planes, planes into lines.  Each level carries a
twisted block factorization: elimination marches from both ends toward a
middle twist block.  The Schur-style neighbour term is replaced by a
sparse surrogate 2*beta - beta*P*beta, where the diagonal filter beta is
chosen so the surrogate acts exactly like the neighbour's inverse on the
all-ones vector.  Lines (innermost level) are factored exactly.  The
assembled preconditioner reproduces the matrix rowsums: B*ones equals
A*ones to rounding, which pins the smoothest error component.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .banded_core import BandedMatrix, FactorizationError, clamp_workers
from .ntd_solve import CHAIN_LANES, _line_solve, _plane_solve


def twist_index(num_blocks):
    """1-indexed block where the two elimination sweeps meet."""
    if num_blocks < 1:
        raise ValueError("need at least one block")
    return (num_blocks - 1) // 2 + 1


@dataclass
class LineBands:
    """Tridiagonal bands of one grid line (row-indexed, ends zero-padded)."""

    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class PlaneBands:
    """Pentadiagonal bands of one grid plane: +-1 couple within a line,
    +-nx couple neighbouring lines."""

    diag: np.ndarray
    lower1: np.ndarray
    upper1: np.ndarray
    lower2: np.ndarray
    upper2: np.ndarray


@dataclass
class PreconBands:
    """Factored preconditioner: seven length-N arrays.

    l3/u3 are the original plane couplings, l2/u2 the filtered line
    couplings, l1/u1 the filtered in-line couplings and m_recip the
    reciprocal pivots of the exact innermost factorization.  twist1..3 are
    the 1-indexed twist positions at each level.
    """

    nx: int
    ny: int
    nz: int
    l1: np.ndarray
    u1: np.ndarray
    l2: np.ndarray
    u2: np.ndarray
    l3: np.ndarray
    u3: np.ndarray
    m_recip: np.ndarray
    twist1: int
    twist2: int
    twist3: int

    @property
    def n_rows(self):
        return self.nx * self.ny * self.nz


@njit(cache=True, nogil=True)
def _line_factor(td, tl, tu, mr, s, e):
    """Twisted scalar factorization of the tridiagonal rows [s, e): pivots
    march from both ends to the twist row.  Writes reciprocals into mr;
    returns -1 or the row of a zero/non-finite pivot."""
    t = s + (e - s - 1) // 2
    for i in range(s, t):
        if i == s:
            piv = td[i]
        else:
            piv = td[i] - tl[i] * tu[i - 1] * mr[i - 1]
        if piv == 0.0 or not np.isfinite(piv):
            return i
        mr[i] = 1.0 / piv
    for i in range(e - 1, t, -1):
        if i == e - 1:
            piv = td[i]
        else:
            piv = td[i] - tu[i] * tl[i + 1] * mr[i + 1]
        if piv == 0.0 or not np.isfinite(piv):
            return i
        mr[i] = 1.0 / piv
    piv = td[t]
    if t > s:
        piv -= tl[t] * tu[t - 1] * mr[t - 1]
    if t < e - 1:
        piv -= tu[t] * tl[t + 1] * mr[t + 1]
    if piv == 0.0 or not np.isfinite(piv):
        return t
    mr[t] = 1.0 / piv
    return -1


@njit(cache=True, nogil=True)
def _correct_line(q, m, pl2, pu2, tdw, l1g, u1g, mrg, nx, lanes, aw, cw, xw, bw):
    """Subtract the filtered coupling through factored neighbour line m
    from line q's working tridiagonal (tdw and the l1g/u1g segments).

    All arrays are plane-local.  Returns -1, or the local row where the
    filter weight came out non-finite.
    """
    sq = q * nx
    sm = m * nx
    if m < q:
        for k in range(nx):
            bw[sm + k] = pu2[sm + k]
    else:
        for k in range(nx):
            bw[sm + k] = pl2[sm + k]
    _line_solve(xw, bw, mrg, l1g, u1g, sm, sm + nx, lanes, aw, cw)
    for k in range(nx):
        u = bw[sm + k]
        bet = xw[sm + k] / u if u != 0.0 else 0.0
        if not np.isfinite(bet):
            return sm + k
        xw[sm + k] = bet
    for k in range(nx):
        rs = pl2[sq + k] if m < q else pu2[sq + k]
        bet = xw[sm + k]
        tdw[sq + k] -= rs * (2.0 * bet - bet * tdw[sm + k] * bet) * bw[sm + k]
        if k >= 1:
            l1g[sq + k] += rs * bet * l1g[sm + k] * xw[sm + k - 1] * bw[sm + k - 1]
        if k + 1 < nx:
            u1g[sq + k] += rs * bet * u1g[sm + k] * xw[sm + k + 1] * bw[sm + k + 1]
    return -1


@njit(cache=True, nogil=True)
def _factor_plane(pd, pl1, pu1, pl2, pu2, nx, ny, l1g, u1g, mrg, tdw,
                  lanes, aw, cw, xw, bw):
    """Twisted line-by-line factorization of one plane (plane-local rows).

    Inputs are the plane's (possibly already corrected) bands; outputs go
    to the l1g/u1g/mrg segments.  tdw keeps the corrected line diagonals
    for the neighbour corrections.  Returns (0, -1) on success,
    (1, row) for a bad pivot or (2, row) for a bad filter weight.
    """
    t = (ny - 1) // 2
    if t > 0:
        for k in range(nx):
            tdw[k] = pd[k]
            l1g[k] = pl1[k]
            u1g[k] = pu1[k]
        st = _line_factor(tdw, l1g, u1g, mrg, 0, nx)
        if st >= 0:
            return 1, st
        for q in range(1, t):
            sq = q * nx
            for k in range(sq, sq + nx):
                tdw[k] = pd[k]
                l1g[k] = pl1[k]
                u1g[k] = pu1[k]
            st = _correct_line(q, q - 1, pl2, pu2, tdw, l1g, u1g, mrg,
                               nx, lanes, aw, cw, xw, bw)
            if st >= 0:
                return 2, st
            st = _line_factor(tdw, l1g, u1g, mrg, sq, sq + nx)
            if st >= 0:
                return 1, st
    if t < ny - 1:
        sq = (ny - 1) * nx
        for k in range(sq, sq + nx):
            tdw[k] = pd[k]
            l1g[k] = pl1[k]
            u1g[k] = pu1[k]
        st = _line_factor(tdw, l1g, u1g, mrg, sq, sq + nx)
        if st >= 0:
            return 1, st
        for q in range(ny - 2, t, -1):
            sq = q * nx
            for k in range(sq, sq + nx):
                tdw[k] = pd[k]
                l1g[k] = pl1[k]
                u1g[k] = pu1[k]
            st = _correct_line(q, q + 1, pl2, pu2, tdw, l1g, u1g, mrg,
                               nx, lanes, aw, cw, xw, bw)
            if st >= 0:
                return 2, st
            st = _line_factor(tdw, l1g, u1g, mrg, sq, sq + nx)
            if st >= 0:
                return 1, st
    sq = t * nx
    for k in range(sq, sq + nx):
        tdw[k] = pd[k]
        l1g[k] = pl1[k]
        u1g[k] = pu1[k]
    if t > 0:
        st = _correct_line(t, t - 1, pl2, pu2, tdw, l1g, u1g, mrg,
                           nx, lanes, aw, cw, xw, bw)
        if st >= 0:
            return 2, st
    if t < ny - 1:
        st = _correct_line(t, t + 1, pl2, pu2, tdw, l1g, u1g, mrg,
                           nx, lanes, aw, cw, xw, bw)
        if st >= 0:
            return 2, st
    st = _line_factor(tdw, l1g, u1g, mrg, sq, sq + nx)
    if st >= 0:
        return 1, st
    return 0, -1


@njit(cache=True, nogil=True)
def _plane_correction(pd, pl1, pu1, pl2, pu2, qd, ql1, qu1, ql2, qu2,
                      beta, rowscale, colscale, nx, nxy):
    """Subtract diag(rowscale) * (2B - B*Q*B) * diag(colscale) from plane
    bands p*, where Q is the neighbour's corrected pentadiagonal and
    B = diag(beta).  Zero padding in q* keeps the sparsity pattern."""
    for k in range(nxy):
        rs = rowscale[k]
        bet = beta[k]
        pd[k] -= rs * (2.0 * bet - bet * qd[k] * bet) * colscale[k]
        if k >= 1:
            pl1[k] += rs * bet * ql1[k] * beta[k - 1] * colscale[k - 1]
        if k + 1 < nxy:
            pu1[k] += rs * bet * qu1[k] * beta[k + 1] * colscale[k + 1]
        if k >= nx:
            pl2[k] += rs * bet * ql2[k] * beta[k - nx] * colscale[k - nx]
        if k + nx < nxy:
            pu2[k] += rs * bet * qu2[k] * beta[k + nx] * colscale[k + nx]


def _beta_from(w, u):
    """Elementwise w / u with zeros where u is zero; rejects non-finite."""
    beta = np.zeros_like(u)
    mask = u != 0.0
    beta[mask] = w[mask] / u[mask]
    if not np.all(np.isfinite(beta)):
        raise FactorizationError("non-finite filter weights")
    return beta


def compute_beta(apply_inv, u_seg):
    """Filter weights beta = (apply_inv(u) ./ u), zero where u is zero.

    apply_inv applies the factored neighbour block's inverse; the weights
    make the surrogate 2B - B*P*B reproduce that inverse's action on u
    exactly (for the positions where u is nonzero).
    """
    u = np.asarray(u_seg, dtype=np.float64)
    w = np.asarray(apply_inv(u), dtype=np.float64)
    if w.shape != u.shape:
        raise ValueError("apply_inv changed the segment length")
    return _beta_from(w, u)


def _plane_band_action(bands, w, nx):
    """Product of a plane's pentadiagonal bands with vector w."""
    pd, pl1, pu1, pl2, pu2 = bands
    out = pd * w
    out[1:] += pl1[1:] * w[:-1]
    out[:-1] += pu1[:-1] * w[1:]
    out[nx:] += pl2[nx:] * w[:-nx]
    out[:-nx] += pu2[:-nx] * w[nx:]
    return out


def factor_level1(line, twist=None):
    """Exact twisted factorization of one tridiagonal line.

    Returns the reciprocal pivots; the line's own off-diagonals serve as
    the factor couplings.  `twist` defaults to the midpoint the solver
    uses; any other value is rejected to keep factor and solve aligned.
    """
    td = np.ascontiguousarray(line.diag, dtype=np.float64)
    tl = np.ascontiguousarray(line.lower, dtype=np.float64)
    tu = np.ascontiguousarray(line.upper, dtype=np.float64)
    n = td.shape[0]
    if tl.shape[0] != n or tu.shape[0] != n:
        raise ValueError("line bands must have equal length")
    if n < 1:
        raise ValueError("empty line")
    if twist is None:
        twist = twist_index(n)
    elif twist != twist_index(n):
        raise ValueError("twist must be the midpoint block used by the solver")
    mr = np.empty(n)
    st = _line_factor(td, tl, tu, mr, 0, n)
    if st >= 0:
        raise FactorizationError(f"zero or non-finite pivot at row {st}")
    return mr


def factor_level2(plane, grid, lanes=CHAIN_LANES):
    """Twisted factorization of one plane with filtered line corrections.

    Returns (l1, u1, m_recip) segments of length nx*ny; the plane's own
    +-nx couplings are the level-2 factor couplings.
    """
    nx, ny = grid.nx, grid.ny
    nxy = nx * ny
    bands = []
    for arr in (plane.diag, plane.lower1, plane.upper1, plane.lower2,
                plane.upper2):
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.shape != (nxy,):
            raise ValueError(f"plane bands must have length {nxy}")
        bands.append(arr)
    pd, pl1, pu1, pl2, pu2 = bands
    l1 = np.zeros(nxy)
    u1 = np.zeros(nxy)
    mr = np.zeros(nxy)
    tdw = np.empty(nxy)
    aw = np.empty(nx)
    cw = np.empty(nx)
    xw = np.empty(nxy)
    bw = np.empty(nxy)
    code, idx = _factor_plane(pd, pl1, pu1, pl2, pu2, nx, ny, l1, u1, mr,
                              tdw, lanes, aw, cw, xw, bw)
    if code == 1:
        raise FactorizationError(f"zero or non-finite pivot at row {idx}")
    if code == 2:
        raise FactorizationError(f"non-finite filter weight at row {idx}")
    return l1, u1, mr


def _apply_factored_plane(mr, l1, u1, l2, u2, base, nx, ny, rhs, lanes):
    """Solve one factored plane (rows [base, base+nx*ny)) for rhs."""
    nxy = nx * ny
    x = np.empty(nxy)
    b = np.array(rhs, dtype=np.float64)
    xs = np.empty(nxy)
    bs = np.empty(nxy)
    aw = np.empty(nx)
    cw = np.empty(nx)
    _plane_solve(x, b, xs, bs, mr[base:base + nxy], l1[base:base + nxy],
                 u1[base:base + nxy], l2[base:base + nxy],
                 u2[base:base + nxy], 0, nx, ny, lanes, aw, cw)
    return x


def factor_level3(a, lanes=CHAIN_LANES, workers=1):
    """Factor the full three-level preconditioner for a BandedMatrix.

    Planes are processed from both grid ends toward the twist plane, each
    corrected through its already-factored neighbour; with workers >= 2
    the two sweeps run concurrently (identical results either way).
    """
    nx, ny, nz = a.nx, a.ny, a.nz
    n = a.n_rows
    nxy = nx * ny
    ad, al1, au1 = a.data[3], a.data[2], a.data[4]
    al2, au2 = a.data[1], a.data[5]
    l3 = a.data[0].copy()
    u3 = a.data[6].copy()
    l1 = np.zeros(n)
    u1 = np.zeros(n)
    l2 = np.zeros(n)
    u2 = np.zeros(n)
    mr = np.zeros(n)
    t3 = (nz - 1) // 2

    def plane_bands_of(p):
        base = p * nxy
        sl = slice(base, base + nxy)
        return (ad[sl].copy(), al1[sl].copy(), au1[sl].copy(),
                al2[sl].copy(), au2[sl].copy())

    def correct_from(bands, p, m, nb_bands):
        mb = m * nxy
        useg = u3[mb:mb + nxy] if m < p else l3[mb:mb + nxy]
        w = _apply_factored_plane(mr, l1, u1, l2, u2, mb, nx, ny, useg,
                                  lanes)
        try:
            beta = _beta_from(w, useg)
        except FactorizationError as exc:
            raise FactorizationError(f"plane {p}: {exc}") from exc
        # The neighbour's nested solve is only an approximate inverse of
        # its pentadiagonal bands, so sandwiching those bands as-is would
        # leave a residual in the rowsums.  Shifting the sandwiched
        # diagonal so that the bands reproduce useg on w makes the
        # surrogate act exactly like the nested solve on the coupling
        # vector, preserving B*ones == A*ones through all levels.
        qw = _plane_band_action(nb_bands, w, nx)
        qd = nb_bands[0].copy()
        mask = w != 0.0
        qd[mask] += (useg[mask] - qw[mask]) / w[mask]
        if not np.all(np.isfinite(qd)):
            raise FactorizationError(
                f"plane {p}: non-finite sandwich adjustment")
        pb = p * nxy
        rowscale = l3[pb:pb + nxy] if m < p else u3[pb:pb + nxy]
        _plane_correction(*bands, qd, nb_bands[1], nb_bands[2],
                          nb_bands[3], nb_bands[4], beta, rowscale, useg,
                          nx, nxy)

    def factor_one(p, bands, work):
        tdw, aw, cw, xw, bw = work
        base = p * nxy
        sl = slice(base, base + nxy)
        l2[sl] = bands[3]
        u2[sl] = bands[4]
        code, idx = _factor_plane(*bands, nx, ny, l1[sl], u1[sl], mr[sl],
                                  tdw, lanes, aw, cw, xw, bw)
        if code == 1:
            raise FactorizationError(
                f"zero or non-finite pivot at row {base + idx} (plane {p})")
        if code == 2:
            raise FactorizationError(
                f"non-finite filter weight at row {base + idx} (plane {p})")

    def make_work():
        return (np.empty(nxy), np.empty(nx), np.empty(nx), np.empty(nxy),
                np.empty(nxy))

    def run_half(planes):
        work = make_work()
        prev, prev_p = None, -1
        for p in planes:
            bands = plane_bands_of(p)
            if prev is not None:
                correct_from(bands, p, prev_p, prev)
            factor_one(p, bands, work)
            prev, prev_p = bands, p
        return prev, prev_p

    asc = range(0, t3)
    desc = range(nz - 1, t3, -1)
    if clamp_workers(workers) >= 2 and len(asc) > 0 and len(desc) > 0:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_a = pool.submit(run_half, asc)
            fut_d = pool.submit(run_half, desc)
            prev_a, pa = fut_a.result()
            prev_d, pd_ = fut_d.result()
    else:
        prev_a, pa = run_half(asc)
        prev_d, pd_ = run_half(desc)

    bands = plane_bands_of(t3)
    if prev_a is not None:
        correct_from(bands, t3, pa, prev_a)
    if prev_d is not None:
        correct_from(bands, t3, pd_, prev_d)
    factor_one(t3, bands, make_work())

    return PreconBands(nx=nx, ny=ny, nz=nz, l1=l1, u1=u1, l2=l2, u2=u2,
                       l3=l3, u3=u3, m_recip=mr,
                       twist1=twist_index(nx), twist2=twist_index(ny),
                       twist3=twist_index(nz))


_DUMP_ORDER = ("l1", "u1", "l2", "u2", "l3", "u3", "m_recip")


def dump_precon_bands(pre, path):
    """Write factored bands to a binary file: little-endian int64 header
    (N, nx, ny, nz) followed by the seven float64 band arrays."""
    with open(path, "wb") as fh:
        np.array([pre.n_rows, pre.nx, pre.ny, pre.nz],
                 dtype="<i8").tofile(fh)
        for name in _DUMP_ORDER:
            getattr(pre, name).astype("<f8").tofile(fh)


def load_precon_bands(path):
    """Inverse of dump_precon_bands."""
    with open(path, "rb") as fh:
        hdr = np.fromfile(fh, dtype="<i8", count=4)
        if hdr.shape[0] != 4:
            raise ValueError("truncated header")
        n, nx, ny, nz = (int(v) for v in hdr)
        if nx < 1 or ny < 1 or nz < 1 or n != nx * ny * nz:
            raise ValueError("inconsistent header")
        arrays = {}
        for name in _DUMP_ORDER:
            arr = np.fromfile(fh, dtype="<f8", count=n)
            if arr.shape[0] != n:
                raise ValueError(f"truncated band data ({name})")
            arrays[name] = arr.astype(np.float64)
    return PreconBands(nx=nx, ny=ny, nz=nz, twist1=twist_index(nx),
                       twist2=twist_index(ny), twist3=twist_index(nz),
                       **arrays)
