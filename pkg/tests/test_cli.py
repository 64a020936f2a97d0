import csv
import math
from pathlib import Path

import numpy as np
import pytest

from ocplmi import cli
from ocplmi.benchmarks import brockett, double_integrator, zermelo
from ocplmi.problem import FreeHorizon, Singleton
from ocplmi.problemfile import ProblemFileError, load
from ocplmi.relaxation import read_sdpa
from ocplmi.sdpbackend import SolveOutcome, Status

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"

MINIMAL = """\
name: line
variables: {states: [x], controls: [u]}
dynamics: ["u"]
cost: {running: "1", terminal: "0"}
sets:
  X: {inequalities: ["1 - x^2"], box: [[-1, 1]]}
  U: {inequalities: ["1 - u^2"], box: [[-1, 1]]}
  K: {point: [0]}
initial_state: [0.5]
time: {mode: free-homogeneous, T0: 2}
"""


def _write(tmp_path, text, name="p.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- problem files

def test_shipped_files_match_builtin_problems():
    di, fo = load(PROBLEMS / "double_integrator.yaml")
    ref = double_integrator((1.0, 0.0), time=FreeHorizon(5.0))
    assert di.f == ref.f and di.X == ref.X and di.U == ref.U and di.K == ref.K
    assert di.time == ref.time and di.x0 == ref.x0
    assert fo.oracle == "double_integrator" and fo.r_min == 2 and fo.r_max == 5
    br, _ = load(PROBLEMS / "brockett.yaml")
    ref = brockett()
    assert br.f == ref.f and br.U == ref.U and br.X == ref.X and br.time == ref.time
    ze, fo = load(PROBLEMS / "zermelo.yaml")
    ref = zermelo()
    assert ze.f == ref.f and ze.time == ref.time and fo.oracle == "zermelo"
    for a, b in zip(ze.K.inequalities + ze.U.inequalities, ref.K.inequalities + ref.U.inequalities):
        assert a.allclose(b, 1e-12)


def test_minimal_file(tmp_path):
    prob, fo = load(_write(tmp_path, MINIMAL))
    assert prob.n == 1 and prob.m == 1 and isinstance(prob.K, Singleton)
    assert fo.oracle is None and fo.r_min is None


def test_terminal_cost_with_control_rejected(tmp_path):
    text = MINIMAL.replace('terminal: "0"', 'terminal: "u^2"')
    with pytest.raises(ProblemFileError) as exc:
        load(_write(tmp_path, text))
    assert "terminal" in str(exc.value) and exc.value.line == 4


def test_polynomial_error_position(tmp_path):
    text = MINIMAL.replace('dynamics: ["u"]', 'dynamics: ["u + y"]')
    with pytest.raises(ProblemFileError) as exc:
        load(_write(tmp_path, text))
    assert exc.value.line == 3
    # column of the offending character inside the quoted string
    assert exc.value.column == text.splitlines()[2].rindex("y") + 1
    assert "line 3" in str(exc.value)


@pytest.mark.parametrize("edit,needle", [
    (("initial_state: [0.5]", "initial_state: [0.5, 1]"), "initial_state"),
    (("mode: free-homogeneous", "mode: sometimes"), "mode"),
    (("  K: {point: [0]}\n", ""), "missing K"),
    (("T0: 2", "T: 2"), "T0"),
    (('dynamics: ["u"]', 'dynamics: ["u", "x"]'), "dynamics"),
])
def test_schema_errors(tmp_path, edit, needle):
    with pytest.raises(ProblemFileError) as exc:
        load(_write(tmp_path, MINIMAL.replace(*edit)))
    assert needle in str(exc.value)


def test_yaml_syntax_error_has_line(tmp_path):
    with pytest.raises(ProblemFileError) as exc:
        load(_write(tmp_path, MINIMAL + "sets: [unclosed\n"))
    assert exc.value.line is not None


# ---------------------------------------------------------------- grids

def test_sweep_spec_parse_and_order():
    spec = cli.SweepSpec.parse("0:1:3, -1")
    assert spec.points() == [(0.0, -1.0), (0.5, -1.0), (1.0, -1.0)]
    spec = cli.SweepSpec.parse("0:1:2,0:1:2")
    assert spec.points() == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
    for bad in ("0:1", "a:b:c", "1:0:3", "0:1:0"):
        with pytest.raises(ValueError):
            cli.SweepSpec.parse(bad)
    with pytest.raises(ValueError):
        cli.SweepSpec.parse("-7:0:3,0").check_within(zermelo())


# ---------------------------------------------------------------- commands

def test_solve_writes_csv_and_plot(tmp_path, capsys):
    out = tmp_path / "di.csv"
    code = cli.main(["solve", str(PROBLEMS / "double_integrator.yaml"), "--r-min", "2", "--r-max", "3",
                     "--out", str(out)])
    assert code == 0
    rows = _rows(out)
    assert rows[0] == cli.SOLVE_HEADER
    assert [r[0] for r in rows[1:]] == ["2", "3"]
    assert all(r[1] == "LowerBound" for r in rows[1:])
    b2, b3 = float(rows[1][2]), float(rows[2][2])
    assert b2 <= b3 + 1e-5 and b3 <= 2.0 + 1e-3
    assert out.with_suffix(".png").exists()
    assert "exact value 2.000000" in capsys.readouterr().out


def test_solve_infeasible_exit_code(tmp_path):
    text = (PROBLEMS / "zermelo.yaml").read_text().replace("initial_state: [-2, 0]", "initial_state: [1, 0]")
    code = cli.main(["solve", str(_write(tmp_path, text)), "--no-plot"])
    assert code == cli.EXIT_INFEASIBLE == 2


def test_solve_inaccurate_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "run_hierarchy",
                        lambda *a, **k: [SolveOutcome(Status.INACCURATE, order=1, message="stalled")])
    assert cli.main(["solve", str(_write(tmp_path, MINIMAL)), "--no-plot"]) == cli.EXIT_INACCURATE == 3


def test_exit_code_precedence():
    lb = SolveOutcome(Status.LOWER_BOUND, bound=1.0)
    inf = SolveOutcome(Status.INFEASIBLE)
    bad = SolveOutcome(Status.INACCURATE)
    assert cli.exit_code([lb, inf]) == 0
    assert cli.exit_code([bad, inf]) == 2
    assert cli.exit_code([bad]) == 3


def test_usage_and_input_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve"])
    assert exc.value.code == cli.EXIT_USAGE
    assert cli.main(["solve", str(tmp_path / "missing.yaml")]) == cli.EXIT_ERROR
    bad = MINIMAL.replace('dynamics: ["u"]', 'dynamics: ["u +"]')
    assert cli.main(["solve", str(_write(tmp_path, bad))]) == cli.EXIT_ERROR
    assert "line 3" in capsys.readouterr().err
    assert cli.main(["solve", str(_write(tmp_path, MINIMAL)), "--r-min", "0"]) == cli.EXIT_ERROR


def test_sweep_deterministic_and_parallel_matches_serial(tmp_path):
    path = str(PROBLEMS / "zermelo.yaml")
    grid = "-1:2:4,-1:1:3"
    outs = []
    for name, workers in (("a.csv", 1), ("b.csv", 1), ("c.csv", 2)):
        out = tmp_path / name
        assert cli.main(["sweep", path, f"--grid={grid}", "--r", "1", "--workers", str(workers),
                         "--out", str(out), "--no-plot"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    rows = _rows(tmp_path / "a.csv")
    assert rows[0] == ["x1", "x2", "status", "bound", "r", "oracle", "ratio"]
    assert len(rows) == 13
    for r in rows[1:]:
        x1 = float(r[0])
        if x1 > 0.5:
            assert r[2] == "InfeasibleCertificate" and r[3] == "INFEASIBLE"
            assert r[5] == "ProvablyUnreachable"
        if r[2] == "InfeasibleCertificate":
            # the analytic check must never contradict a certificate on reachable ground
            assert x1 > -0.44


def test_sweep_ratio_column_and_plot(tmp_path):
    out = tmp_path / "di_sweep.csv"
    code = cli.main(["sweep", str(PROBLEMS / "double_integrator.yaml"), "--grid=0:2:3,-1:1:3",
                     "--r", "2", "--out", str(out)])
    assert code == 0
    rows = _rows(out)
    assert len(rows) == 10
    for r in rows[1:]:
        x = (float(r[0]), float(r[1]))
        if x == (0.0, 0.0):
            assert r[6] == ""  # no ratio against a zero oracle
            continue
        assert float(r[5]) == pytest.approx(cli.oracles.double_integrator_time(x), abs=1e-9)
        assert 0.0 <= float(r[6]) <= 1.0 + 1e-3
    assert out.with_suffix(".png").exists()


def test_sweep_certificate_mode_short_circuits(tmp_path):
    out = tmp_path / "cert.csv"
    assert cli.main(["sweep", str(PROBLEMS / "zermelo.yaml"), "--grid", "1.5,0", "--mode", "certificate",
                     "--r-min", "1", "--r", "2", "--out", str(out), "--no-plot"]) == 0
    (row,) = _rows(out)[1:]
    assert row[2] == "InfeasibleCertificate" and row[4] == "1"


def test_value_grid(tmp_path):
    out = tmp_path / "value.csv"
    code = cli.main(["value", str(PROBLEMS / "double_integrator.yaml"), "--r", "3",
                     "--grid=0:2:3,-1:1:3", "--out", str(out)])
    assert code == 0
    rows = _rows(out)
    assert rows[0] == ["x1", "x2", "lambda", "oracle", "gap"]
    assert len(rows) == 10
    for r in rows[1:]:
        lam, ref, gap = (float(v) for v in r[2:])
        assert gap == pytest.approx(lam - ref, abs=1e-8)
        assert gap <= 5e-3
    target = [r for r in rows[1:] if float(r[0]) == 0.0 and float(r[1]) == 0.0][0]
    assert float(target[2]) <= 1e-5
    assert out.with_suffix(".png").exists()


def test_value_default_grid_is_initial_state(tmp_path):
    out = tmp_path / "v.csv"
    assert cli.main(["value", str(PROBLEMS / "brockett.yaml"), "--r", "2", "--out", str(out), "--no-plot"]) == 0
    rows = _rows(out)
    assert len(rows) == 2 and rows[1][:3] == ["0", "0", "1"]
    assert float(rows[1][4]) == pytest.approx(math.sqrt(2 * math.pi), abs=1e-9)


def test_export_sdp(tmp_path, capsys):
    out = tmp_path / "b.dat-s"
    assert cli.main(["export-sdp", str(PROBLEMS / "brockett.yaml"), "--r", "2", "--out", str(out)]) == 0
    c, sizes, entries = read_sdpa(out)
    assert len(c) == 126
    assert 21 in sizes
    assert "decision length 126" in capsys.readouterr().out
