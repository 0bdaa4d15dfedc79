"""Structured-grid linear solver built around a nested twisted
frequency-filtering preconditioner with a block-ILU0 companion."""

import os

# Worker hints go up to 4; make sure the kernel thread pool can schedule
# them even on smaller machines.  Must happen before numba's first import.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(4, os.cpu_count() or 1)))

from .banded_core import (BandedMatrix, FactorizationError, axpy,
                          clamp_workers, dot, norm2, spmv, to_matrix_market)
from .problem_gen import (CoefficientField, GridSpec, assemble, kappa_eval,
                          make_rhs)
from .ntd_solve import (CHAIN_LANES, SolveWorkspace, chain_bidiagonal_solve,
                        ntd_apply)
from .ntd_factor import (LineBands, PlaneBands, PreconBands, compute_beta,
                         dump_precon_bands, factor_level1, factor_level2,
                         factor_level3, load_precon_bands, twist_index)
from .ilu0 import ILU0Factors, build_block_ilu0, ilu0_apply
from .precond_pcg import (CombinedPrecond, DivergenceError, SolveStats,
                          combined_apply, pcg)
from .bench_cli import BenchConfig, BenchReport, run_benchmark, speedup_probe

__version__ = "0.1.0"

__all__ = [
    "BandedMatrix", "FactorizationError", "axpy", "clamp_workers", "dot",
    "norm2", "spmv", "to_matrix_market",
    "CoefficientField", "GridSpec", "assemble", "kappa_eval", "make_rhs",
    "CHAIN_LANES", "SolveWorkspace", "chain_bidiagonal_solve", "ntd_apply",
    "LineBands", "PlaneBands", "PreconBands", "compute_beta",
    "dump_precon_bands", "factor_level1", "factor_level2", "factor_level3",
    "load_precon_bands", "twist_index",
    "ILU0Factors", "build_block_ilu0", "ilu0_apply",
    "CombinedPrecond", "DivergenceError", "SolveStats", "combined_apply",
    "pcg",
    "BenchConfig", "BenchReport", "run_benchmark", "speedup_probe",
]
