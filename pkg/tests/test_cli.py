import csv
import hashlib

import pytest

from coupled_ipm import cli
from coupled_ipm.report import TRACE_HEADER

GEN = """
[gen]
n_agents = 4
size_min = 8
size_max = 12
eq_min = 1
eq_max = 3
ineq_min = 3
ineq_max = 6
index_pool = 40
seed = 5
"""

SOLVERS = """
[exact]
max_outer = 50
max_inner = 50000

[inexact]
gamma0 = 0.5
max_outer = 300

[baseline]
max_iter = 3000
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _write(tmp, "run.ini", GEN + "\n[run]\nmethod = exact\nseed = 1\n" + SOLVERS)
    prob = str(tmp / "prob.npz")
    assert cli.main(["gen", "--config", cfg, "--out", prob]) == 0
    return tmp, cfg, prob


def test_gen_deterministic_hash(tmp_path):
    cfg = _write(tmp_path, "g.ini", GEN)
    a, b = str(tmp_path / "a.npz"), str(tmp_path / "b.npz")
    assert cli.main(["gen", "--config", cfg, "--out", a]) == 0
    assert cli.main(["gen", "--config", cfg, "--out", b]) == 0
    ha = hashlib.sha256(open(a, "rb").read()).hexdigest()
    hb = hashlib.sha256(open(b, "rb").read()).hexdigest()
    assert ha == hb
    # A different seed produces a different container.
    c = str(tmp_path / "c.npz")
    assert cli.main(["gen", "--config", cfg, "--seed", "99", "--out", c]) == 0
    assert hashlib.sha256(open(c, "rb").read()).hexdigest() != ha


def test_solve_writes_schema_and_exit_zero(workdir):
    tmp, cfg, prob = workdir
    out = str(tmp / "trace.csv")
    assert cli.main(["solve", prob, "--config", cfg, "--out", out]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TRACE_HEADER
    # One row per outer iteration plus the starting point.
    assert all(row[0] == "exact" for row in rows[1:])
    ls = [int(row[1]) for row in rows[1:]]
    assert ls == list(range(len(ls)))
    # Floats round-trip exactly through the shortest-repr formatting.
    merit0 = float(rows[1][2])
    assert repr(merit0) == rows[1][2]


def test_solve_trace_is_deterministic_across_threads(workdir):
    tmp, cfg, prob = workdir
    out1, out2 = str(tmp / "t1.csv"), str(tmp / "t2.csv")
    assert cli.main(["solve", prob, "--config", cfg, "--out", out1, "--threads", "1"]) == 0
    assert cli.main(["solve", prob, "--config", cfg, "--out", out2, "--threads", "3"]) == 0
    assert open(out1, "rb").read() == open(out2, "rb").read()


def test_solve_inner_trace(tmp_path, workdir):
    _, _, prob = workdir
    cfg = _write(tmp_path, "inner.ini",
                 GEN + "\n[run]\nmethod = exact\nseed = 1\ntrace = inner\n" + SOLVERS)
    out = str(tmp_path / "trace.csv")
    assert cli.main(["solve", prob, "--config", cfg, "--out", out]) == 0
    with open(out[:-4] + "_inner.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "l", "k", "agent", "dx_step_sq"]
    assert len(rows) > 1


def test_solve_forcing_sidecar_for_inexact(tmp_path, workdir):
    _, _, prob = workdir
    cfg = _write(tmp_path, "ix.ini", GEN + "\n[run]\nmethod = inexact\nseed = 1\n" + SOLVERS)
    out = str(tmp_path / "trace.csv")
    assert cli.main(["solve", prob, "--config", cfg, "--out", out]) == 0
    with open(out[:-4] + "_forcing.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header[:4] == ["l", "sigma", "eta_hat", "eta_bar"]


def test_exit_code_max_iterations(tmp_path, workdir):
    _, _, prob = workdir
    cfg = _write(tmp_path, "short.ini",
                 GEN + "\n[run]\nmethod = exact\nseed = 1\n[exact]\nmax_outer = 1\n")
    assert cli.main(["solve", prob, "--config", cfg, "--out", str(tmp_path / "t.csv")]) == 2


def test_exit_code_numerical_failure(tmp_path, workdir):
    _, _, prob = workdir
    cfg = _write(tmp_path, "bad.ini",
                 GEN + "\n[run]\nmethod = baseline\nseed = 1\n[baseline]\nlocal_max_iter = 1\n")
    assert cli.main(["solve", prob, "--config", cfg, "--out", str(tmp_path / "t.csv")]) == 3


@pytest.mark.parametrize(
    "text",
    [
        "[exact]\nnot_a_knob = 1\n",
        "[mystery]\nx = 1\n",
        "[exact]\nsigma = abc\n",
        "[run]\nmethod = nonsense\n",
        "[meta]\nversion = 2\n",
    ],
)
def test_exit_code_config_errors(tmp_path, workdir, text):
    _, _, prob = workdir
    cfg = _write(tmp_path, "broken.ini", text)
    assert cli.main(["solve", prob, "--config", cfg, "--out", str(tmp_path / "t.csv")]) == 4


def test_exit_code_missing_problem(tmp_path):
    assert cli.main(["solve", str(tmp_path / "nope.npz"), "--out", str(tmp_path / "t.csv")]) == 4


def test_compare_writes_three_rows(workdir):
    tmp, cfg, prob = workdir
    out = str(tmp / "cmp.csv")
    code = cli.main(["compare", prob, "--config", cfg, "--out", out])
    assert code == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "outer_iters", "total_inner", "rel_obj_error", "wall_time_s"]
    assert [r[0] for r in rows[1:]] == ["exact", "inexact", "baseline"]
    for row in rows[1:]:
        assert float(row[3]) <= 1e-4
