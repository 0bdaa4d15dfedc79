import json

import numpy as np
import pytest

from ntdprecon import bench_cli
from ntdprecon.banded_core import FactorizationError
from ntdprecon.bench_cli import (BenchConfig, CSV_HEADER, build_precond,
                                 make_parser, main, run_benchmark,
                                 speedup_probe)


def tiny_config(**kw):
    cfg = BenchConfig(matrix_type=3, n=6, tol=1e-6, max_iters=100)
    for key, val in kw.items():
        setattr(cfg, key, val)
    return cfg


def test_parser_defaults():
    args = make_parser().parse_args([])
    assert (args.matrix_type, args.n, args.tol) == (3, 50, 1e-7)
    assert (args.max_iters, args.workers) == (200, 1)
    assert (args.rhs_mode, args.precond) == ("ones", "ntd+ilu0")
    assert args.output_format == "table"
    assert args.dump_matrix is None
    assert args.speedup is False


def test_config_validation():
    bad = [dict(matrix_type=4), dict(n=0), dict(tol=-1.0),
           dict(max_iters=0), dict(workers=3), dict(rhs_mode="junk"),
           dict(precond="amg"), dict(output_format="xml")]
    for kw in bad:
        with pytest.raises(ValueError):
            tiny_config(**kw).validate()
    tiny_config().validate()


def test_run_benchmark_converges():
    report = run_benchmark(tiny_config())
    assert report.converged
    assert report.rows == 6 ** 3
    assert report.final_relres < 1e-6
    assert report.iterations == len(report.residual_history)
    assert report.overall_seconds == pytest.approx(
        report.setup_seconds + report.solve_seconds)


def test_tiny_unpreconditioned_run_hits_cg_bound():
    report = run_benchmark(tiny_config(n=2, tol=1e-10, precond="none"))
    assert report.converged
    assert report.iterations <= 8


@pytest.mark.parametrize("precond", bench_cli.PRECOND_CHOICES)
@pytest.mark.parametrize("rhs_mode", ("ones", "manufactured"))
def test_json_schema_across_configs(precond, rhs_mode):
    report = run_benchmark(tiny_config(precond=precond, rhs_mode=rhs_mode))
    doc = json.loads(report.to_json())
    for key in ("matrix_type", "rows", "tol", "workers", "precond",
                "assembly_seconds", "setup_seconds", "solve_seconds",
                "overall_seconds", "iterations", "converged",
                "final_relres", "residual_history"):
        assert key in doc, key
    assert doc["iterations"] == len(doc["residual_history"])


def test_csv_format():
    report = run_benchmark(tiny_config())
    lines = report.to_csv().splitlines()
    assert lines[0] == CSV_HEADER
    fields = lines[1].split(",")
    assert len(fields) == len(CSV_HEADER.split(","))
    assert int(fields[0]) == 3
    assert int(fields[1]) == 216
    assert float(fields[-1]) < 1e-6


def test_table_format():
    text = run_benchmark(tiny_config()).to_table()
    assert "iterations" in text
    assert "converged" in text


def test_worker_count_does_not_change_the_run():
    r1 = run_benchmark(tiny_config(n=8, workers=1))
    r4 = run_benchmark(tiny_config(n=8, workers=4))
    assert r1.iterations == r4.iterations
    assert r1.final_relres == r4.final_relres


def test_build_precond_kinds():
    from ntdprecon.problem_gen import GridSpec, assemble
    a = assemble(GridSpec(4, 4, 4), 3)
    assert build_precond(a, "none") is None
    r = np.ones(a.n_rows)
    for kind in ("ntd+ilu0", "ntd", "ilu0"):
        z = build_precond(a, kind)(r)
        assert z.shape == (a.n_rows,)
        assert np.all(np.isfinite(z))
    with pytest.raises(ValueError):
        build_precond(a, "jacobi")


def test_speedup_probe_rows():
    rows = speedup_probe(tiny_config(n=8))
    assert [r["workers"] for r in rows] == [1, 2, 4]
    assert rows[0]["speedup"] == pytest.approx(1.0)
    assert len({r["iterations"] for r in rows}) == 1  # counts identical
    text = bench_cli.render_speedup(rows, "csv")
    assert text.splitlines()[0] == "workers,iters,solve_s,speedup"
    json.loads(bench_cli.render_speedup(rows, "json"))


def test_main_success_exit_code(capsys):
    rc = main(["--n", "6", "--type", "3", "--tol", "1e-6",
               "--format", "csv"])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.startswith(CSV_HEADER)


def test_main_nonconvergence_exit_code(capsys):
    rc = main(["--n", "6", "--type", "1", "--tol", "1e-14",
               "--max-iters", "2"])
    assert rc == 3
    assert "NOT CONVERGED" in capsys.readouterr().out


def test_main_bad_config_exit_code(capsys):
    rc = main(["--n", "0"])
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_main_numerical_failure_exit_code(monkeypatch, capsys):
    def boom(cfg):
        raise FactorizationError("synthetic pivot failure")

    monkeypatch.setattr(bench_cli, "run_benchmark", boom)
    rc = main(["--n", "6"])
    assert rc == 4
    assert "numerical failure" in capsys.readouterr().err


def test_main_unwritable_dump_path():
    rc = main(["--n", "4", "--tol", "1e-5",
               "--dump-matrix", "/nonexistent-dir/a.mtx"])
    assert rc == 1


def test_main_dump_matrix(tmp_path, capsys):
    path = tmp_path / "a.mtx"
    rc = main(["--n", "4", "--type", "2", "--tol", "1e-5",
               "--dump-matrix", str(path), "--format", "json"])
    assert rc == 0
    assert path.read_text().startswith("%%MatrixMarket")
    doc = json.loads(capsys.readouterr().out)
    assert doc["rows"] == 64


def test_main_speedup_mode(capsys):
    rc = main(["--n", "6", "--tol", "1e-6", "--speedup",
               "--format", "json"])
    assert rc == 0
    doc = json.loads(capsys.readouterr().out)
    assert [r["workers"] for r in doc["runs"]] == [1, 2, 4]
