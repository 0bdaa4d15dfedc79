import numpy as np
import pytest

from ntdprecon.banded_core import (BandedMatrix, axpy, clamp_workers, dot,
                                   norm2, spmv, to_matrix_market)
from ntdprecon.problem_gen import GridSpec, assemble


def test_identity_spmv(rng):
    a = BandedMatrix(3, 2, 2)
    a.data[3] = 1.0
    x = rng.standard_normal(a.n_rows)
    assert np.array_equal(spmv(a, x), x)


def test_1d_laplacian_rowsums():
    a = BandedMatrix(3, 1, 1)
    a.data[3] = [2.0, 2.0, 2.0]
    a.data[2] = [0.0, -1.0, -1.0]
    a.data[4] = [-1.0, -1.0, 0.0]
    y = spmv(a, np.ones(3))
    assert np.array_equal(y, [1.0, 0.0, 1.0])


@pytest.mark.parametrize("nx", [1, 2, 3, 4])
@pytest.mark.parametrize("ny", [1, 2, 3, 4])
@pytest.mark.parametrize("nz", [1, 2, 3, 4])
def test_spmv_matches_dense_product(nx, ny, nz, rng):
    a = assemble(GridSpec(nx, ny, nz), 1)
    x = rng.standard_normal(a.n_rows)
    want = a.to_dense() @ x
    got = spmv(a, x)
    scale = max(1.0, np.abs(want).max())
    assert np.abs(got - want).max() <= 1e-13 * scale


def test_spmv_worker_invariance(rng):
    a = assemble(GridSpec(24, 24, 24), 1)
    x = rng.standard_normal(a.n_rows)
    y1 = spmv(a, x, workers=1)
    for w in (2, 4):
        assert np.array_equal(spmv(a, x, workers=w), y1)


def test_spmv_adjoint_on_symmetric_matrix(rng):
    a = assemble(GridSpec(5, 4, 3), 2)
    x = rng.standard_normal(a.n_rows)
    y = rng.standard_normal(a.n_rows)
    lhs = dot(spmv(a, x), y)
    rhs = dot(x, spmv(a, y))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_spmv_length_mismatch():
    a = BandedMatrix(2, 2, 2)
    with pytest.raises(ValueError):
        spmv(a, np.ones(5))


def test_vector_kernels():
    assert dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
    assert np.array_equal(axpy(2.0, np.array([1.0, 1.0]),
                               np.array([0.0, 1.0])), [2.0, 3.0])
    assert norm2(np.array([3.0, 4.0])) == 5.0
    with pytest.raises(ValueError):
        dot(np.ones(2), np.ones(3))
    with pytest.raises(ValueError):
        axpy(1.0, np.ones(2), np.ones(3))


def test_banded_matrix_validation():
    with pytest.raises(ValueError):
        BandedMatrix(0, 1, 1)
    with pytest.raises(ValueError):
        BandedMatrix(2, -1, 2)


def test_band_padding_is_zero_everywhere_off_grid():
    a = assemble(GridSpec(3, 3, 3), 1)
    n = a.n_rows
    for idx, d in enumerate(a.offsets):
        band = a.data[idx]
        for r in range(n):
            c = r + d
            off_grid = c < 0 or c >= n
            if d in (-1, 1) and not off_grid:
                off_grid = (r // a.nx) != (c // a.nx)
            nxy = a.nx * a.ny
            if d in (-a.nx, a.nx) and not off_grid:
                off_grid = (r // nxy) != (c // nxy)
            if off_grid:
                assert band[r] == 0.0, (d, r)


def test_offsets_and_band_view():
    a = BandedMatrix(2, 3, 4)
    assert a.offsets == (-6, -2, -1, 0, 1, 2, 6)
    a.band(0)[:] = 5.0
    assert np.all(a.data[3] == 5.0)


def test_to_dense_roundtrip_through_data():
    a = assemble(GridSpec(2, 3, 2), 3)
    b = BandedMatrix(2, 3, 2, a.data)
    assert np.array_equal(a.to_dense(), b.to_dense())


def test_matrix_market_export(tmp_path):
    a = assemble(GridSpec(2, 2, 2), 1)
    path = tmp_path / "a.mtx"
    to_matrix_market(a, str(path))
    text = path.read_text().splitlines()
    assert text[0].startswith("%%MatrixMarket matrix coordinate real")
    n, m, nnz = (int(v) for v in text[1].split())
    assert (n, m) == (a.n_rows, a.n_rows)
    assert nnz == len(text) - 2
    dense = np.zeros((n, n))
    for row in text[2:]:
        i, j, v = row.split()
        dense[int(i) - 1, int(j) - 1] = float(v)
    assert np.allclose(dense, a.to_dense(), rtol=0, atol=0)


def test_clamp_workers():
    assert clamp_workers(1) == 1
    assert clamp_workers(99) == clamp_workers(4)
    with pytest.raises(ValueError):
        clamp_workers(0)
