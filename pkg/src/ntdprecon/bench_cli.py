"""Benchmark harness: assemble a test problem, factor, solve, report.

Exit codes: 0 solved, 1 unexpected error, 2 bad arguments, 3 iteration
limit reached without convergence, 4 numerical failure.
"""

import argparse
import json
import sys
from dataclasses import asdict, dataclass
from time import perf_counter

import numba

from .banded_core import FactorizationError, to_matrix_market
from .ilu0 import build_block_ilu0, ilu0_apply
from .ntd_factor import factor_level3
from .ntd_solve import SolveWorkspace, ntd_apply
from .precond_pcg import CombinedPrecond, DivergenceError, pcg
from .problem_gen import GridSpec, assemble, make_rhs

PRECOND_CHOICES = ("ntd+ilu0", "ntd", "ilu0", "none")
CSV_HEADER = "type,rows,tol,setup_s,solve_s,overall_s,iters,relres"


@dataclass
class BenchConfig:
    matrix_type: int = 3
    n: int = 50
    tol: float = 1e-7
    max_iters: int = 200
    workers: int = 1
    rhs_mode: str = "ones"
    precond: str = "ntd+ilu0"
    output_format: str = "table"
    dump_matrix: str = None
    speedup: bool = False

    def validate(self):
        if self.matrix_type not in (1, 2, 3):
            raise ValueError("matrix type must be 1, 2 or 3")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max-iters must be >= 1")
        if self.workers not in (1, 2, 4):
            raise ValueError("workers must be 1, 2 or 4")
        if self.rhs_mode not in ("ones", "manufactured"):
            raise ValueError(f"unknown rhs mode {self.rhs_mode!r}")
        if self.precond not in PRECOND_CHOICES:
            raise ValueError(f"unknown preconditioner {self.precond!r}")
        if self.output_format not in ("json", "csv", "table"):
            raise ValueError(f"unknown output format {self.output_format!r}")


@dataclass
class BenchReport:
    matrix_type: int
    rows: int
    tol: float
    workers: int
    precond: str
    assembly_seconds: float
    setup_seconds: float
    solve_seconds: float
    iterations: int
    converged: bool
    final_relres: float
    residual_history: list

    @property
    def overall_seconds(self):
        return self.setup_seconds + self.solve_seconds

    def to_json(self):
        d = asdict(self)
        d["overall_seconds"] = self.overall_seconds
        return json.dumps(d, indent=2)

    def to_csv(self):
        row = (f"{self.matrix_type},{self.rows},{self.tol:g},"
               f"{self.setup_seconds:.6f},{self.solve_seconds:.6f},"
               f"{self.overall_seconds:.6f},{self.iterations},"
               f"{self.final_relres:.6e}")
        return CSV_HEADER + "\n" + row

    def to_table(self):
        status = "converged" if self.converged else "NOT CONVERGED"
        return "\n".join([
            f"matrix type     : {self.matrix_type}",
            f"rows            : {self.rows}",
            f"preconditioner  : {self.precond}",
            f"workers         : {self.workers}",
            f"tolerance       : {self.tol:g}",
            f"assembly        : {self.assembly_seconds:.3f} s",
            f"setup           : {self.setup_seconds:.3f} s",
            f"solve           : {self.solve_seconds:.3f} s",
            f"overall         : {self.overall_seconds:.3f} s",
            f"iterations      : {self.iterations} ({status})",
            f"final rel. res. : {self.final_relres:.3e}",
        ])

    def rendered(self, output_format):
        if output_format == "json":
            return self.to_json()
        if output_format == "csv":
            return self.to_csv()
        return self.to_table()


class _NtdPrecond:
    def __init__(self, a, workers):
        self.pre = factor_level3(a, workers=workers)
        self.workspace = SolveWorkspace(a.n_rows)
        self.workers = workers

    def __call__(self, r):
        return ntd_apply(self.pre, r, workers=self.workers,
                         workspace=self.workspace)


class _IluPrecond:
    def __init__(self, a, workers):
        self.factors = build_block_ilu0(a, workers=workers)
        self.workers = workers

    def __call__(self, r):
        return ilu0_apply(self.factors, r, workers=self.workers)


def build_precond(a, kind, workers=1):
    if kind == "ntd+ilu0":
        return CombinedPrecond(a, workers=workers)
    if kind == "ntd":
        return _NtdPrecond(a, workers)
    if kind == "ilu0":
        return _IluPrecond(a, workers)
    if kind == "none":
        return None
    raise ValueError(f"unknown preconditioner {kind!r}")


def run_benchmark(cfg):
    """Assemble, factor and solve one configuration.  Assembly is timed
    separately; overall = setup + solve."""
    cfg.validate()
    grid = GridSpec(cfg.n, cfg.n, cfg.n)
    t0 = perf_counter()
    a = assemble(grid, cfg.matrix_type, workers=cfg.workers)
    assembly_s = perf_counter() - t0
    if cfg.dump_matrix:
        to_matrix_market(a, cfg.dump_matrix)
    b = make_rhs(a, cfg.rhs_mode, workers=cfg.workers)
    t0 = perf_counter()
    precond = build_precond(a, cfg.precond, workers=cfg.workers)
    setup_s = perf_counter() - t0
    x, stats = pcg(a, b, precond, tol=cfg.tol, max_iters=cfg.max_iters,
                   workers=cfg.workers)
    return BenchReport(
        matrix_type=cfg.matrix_type, rows=a.n_rows, tol=cfg.tol,
        workers=cfg.workers, precond=cfg.precond,
        assembly_seconds=assembly_s, setup_seconds=setup_s,
        solve_seconds=stats.solve_seconds, iterations=stats.iterations,
        converged=stats.converged, final_relres=stats.final_relres,
        residual_history=list(stats.relres_history))


def speedup_probe(cfg):
    """Re-run the identical solve with 1, 2 and 4 workers and report the
    timing ratios.  Numbers are machine-dependent; iteration counts and
    solutions are not."""
    cfg.validate()
    grid = GridSpec(cfg.n, cfg.n, cfg.n)
    a = assemble(grid, cfg.matrix_type)
    b = make_rhs(a, cfg.rhs_mode)
    precond = build_precond(a, cfg.precond, workers=cfg.workers)
    rows = []
    base = None
    for w in (1, 2, 4):
        if precond is not None:
            precond.workers = w
        x, stats = pcg(a, b, precond, tol=cfg.tol,
                       max_iters=cfg.max_iters, workers=w)
        if base is None:
            base = stats.solve_seconds
        rows.append({
            "workers": w,
            "iterations": stats.iterations,
            "converged": stats.converged,
            "solve_seconds": stats.solve_seconds,
            "speedup": base / stats.solve_seconds
                       if stats.solve_seconds > 0 else float("nan"),
        })
    return rows


def render_speedup(rows, output_format):
    if output_format == "json":
        return json.dumps({"threads_available":
                           numba.config.NUMBA_NUM_THREADS,
                           "runs": rows}, indent=2)
    if output_format == "csv":
        lines = ["workers,iters,solve_s,speedup"]
        for r in rows:
            lines.append(f"{r['workers']},{r['iterations']},"
                         f"{r['solve_seconds']:.6f},{r['speedup']:.3f}")
        return "\n".join(lines)
    lines = [f"threads available: {numba.config.NUMBA_NUM_THREADS}"]
    for r in rows:
        lines.append(f"workers={r['workers']}  iters={r['iterations']}  "
                     f"solve={r['solve_seconds']:.3f}s  "
                     f"speedup={r['speedup']:.2f}x")
    return "\n".join(lines)


def make_parser():
    parser = argparse.ArgumentParser(
        prog="ntd-bench",
        description="Benchmark the nested twisted + block-ILU0 "
                    "preconditioned CG solver on cube diffusion problems.")
    parser.add_argument("--type", type=int, choices=(1, 2, 3), default=3,
                        dest="matrix_type",
                        help="coefficient field: 1 skyscraper, 2 ring, "
                             "3 constant (default 3)")
    parser.add_argument("--n", type=int, default=50,
                        help="cells per cube edge (default 50)")
    parser.add_argument("--tol", type=float, default=1e-7,
                        help="relative residual tolerance (default 1e-7)")
    parser.add_argument("--max-iters", type=int, default=200,
                        help="iteration cap (default 200)")
    parser.add_argument("--workers", type=int, choices=(1, 2, 4), default=1,
                        help="worker threads for kernels (default 1)")
    parser.add_argument("--rhs", choices=("ones", "manufactured"),
                        default="ones", dest="rhs_mode",
                        help="right-hand side (default ones)")
    parser.add_argument("--precond", choices=PRECOND_CHOICES,
                        default="ntd+ilu0")
    parser.add_argument("--format", choices=("json", "csv", "table"),
                        default="table", dest="output_format")
    parser.add_argument("--dump-matrix", dest="dump_matrix", default=None,
                        metavar="PATH",
                        help="write the assembled matrix in MatrixMarket "
                             "format")
    parser.add_argument("--speedup", action="store_true",
                        help="re-run the solve with 1/2/4 workers and "
                             "report timing ratios")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    cfg = BenchConfig(**vars(args))
    try:
        cfg.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if cfg.speedup:
            print(render_speedup(speedup_probe(cfg), cfg.output_format))
            return 0
        report = run_benchmark(cfg)
        print(report.rendered(cfg.output_format))
        return 0 if report.converged else 3
    except (FactorizationError, DivergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
