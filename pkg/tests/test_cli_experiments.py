import subprocess
import sys

import numpy as np
import pytest

from pde_sgd import cli
from pde_sgd import experiments as ex
from pde_sgd.config import parse_config
from pde_sgd.mesh import uniform_mesh
from pde_sgd.spaces import P0Function

TINY_SC = """
[problem]
lam = 0.2
[schedule]
max_level = 2
[run]
n_steps = 6
ensemble = 2
snapshots = 4
[estimate]
samples = 5
[reference]
path = ref
n_steps = 8
"""

TINY_AVG = """
[problem]
variant = convex
lam = 0
[step]
rule = variable
[schedule]
c = 2
max_level = 2
[run]
sweep = 3, 4, 6, 8
replicates = 2
fit_skip = 0
[estimate]
samples = 4
[reference]
path = ref
n_steps = 10
alpha = 0.9
"""


def _write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.rglob("*.csv")) if ".timing" not in p.name}


def test_strongly_convex_pipeline(tmp_path):
    cfg_file = _write(tmp_path, TINY_SC)
    out = tmp_path / "out"
    assert cli.main(["sc-run", "--config", cfg_file, "--out", str(out)]) == 0
    assert cli.main(["ref-solution", "--config", cfg_file, "--out", str(out)]) == 0
    assert cli.main(["compare", "--config", cfg_file, "--out", str(out)]) == 0
    assert cli.main(["sc-ensemble", "--config", cfg_file, "--out", str(out)]) == 0
    trace = ex.read_csv(out / "trace.csv")
    assert [int(r["n"]) for r in trace] == list(range(1, 7))
    assert "wall_s" not in trace[0]
    assert (out / "trace.timing.csv").exists()
    assert (out / "ref" / "reference_control.csv").exists()
    cmp = {r["quantity"]: r["value"] for r in ex.read_csv(out / "compare.csv")}
    assert float(cmp["l2_error"]) >= 0
    slopes = ex.read_csv(out / "ensemble_slopes.csv")
    assert {r["quantity"] for r in slopes} == {"error", "objective_gap"}


def test_missing_reference_is_an_error(tmp_path, capsys):
    cfg_file = _write(tmp_path, TINY_SC)
    rc = cli.main(["sc-ensemble", "--config", cfg_file, "--out", str(tmp_path / "empty")])
    assert rc == 1
    assert "ref-solution" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    rc = cli.main(["theory", "--config", _write(tmp_path, "[run]\nn_steps = -1\n")])
    assert rc == 1
    assert "n_steps" in capsys.readouterr().err


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2


@pytest.mark.parametrize("command", ["sc-run", "theory", "fem-convergence"])
def test_same_seed_same_bytes(tmp_path, command):
    cfg_file = _write(tmp_path, TINY_SC)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([command, "--config", cfg_file, "--out", str(a), "--seed", "5"]) == 0
    assert cli.main([command, "--config", cfg_file, "--out", str(b), "--seed", "5"]) == 0
    ca, cb = _csv_bytes(a), _csv_bytes(b)
    assert ca and ca == cb


def test_different_seed_changes_run(tmp_path):
    cfg_file = _write(tmp_path, TINY_SC)
    cli.main(["sc-run", "--config", cfg_file, "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["sc-run", "--config", cfg_file, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "final_control.csv").read_bytes() != (tmp_path / "b" / "final_control.csv").read_bytes()


def test_avg_sweep(tmp_path):
    cfg = parse_config(TINY_AVG).with_output(str(tmp_path / "avg"))
    ex.ref_solution(cfg)
    res = ex.avg_sweep(cfg)
    assert len(res["rows"]) == 4 * 2 * 2
    assert set(res["fits"]) == {"constant", "variable"}
    rows = ex.read_csv(tmp_path / "avg" / "sweep.csv")
    assert all(r["rule"] in ("constant", "variable") for r in rows)
    assert len({r["j_ref"] for r in rows}) == 1


def test_theory_certificate(tmp_path):
    cfg = parse_config(TINY_SC).with_output(str(tmp_path))
    res = ex.theory(cfg)
    assert res["constants"]["certificate_violations"] == 0
    assert len(res["rows"]) == 6
    assert res["rows"][0]["t_n"] == pytest.approx(res["constants"]["theta"] / (1 + res["constants"]["nu"]))


def test_fields_report(tmp_path):
    res = ex.fields_report(parse_config("").with_output(str(tmp_path)), n_samples=200)
    assert res["max_root_residual"] <= 1e-12
    assert all(r["eigen_descending"] for r in res["rows"])


def test_fem_convergence_driver(tmp_path):
    res = ex.fem_convergence(parse_config("[run]\nlevels = 1, 2, 3, 4\n").with_output(str(tmp_path)))
    assert abs(res["fit"].slope - 2) < 0.15


def test_control_round_trip(tmp_path):
    m = uniform_mesh(3)
    u = P0Function(m, np.random.default_rng(0).uniform(-1, 1, m.n_triangles))
    ex.save_control(u, tmp_path, "x")
    v = ex.load_control(tmp_path, "x")
    assert v.mesh is m and np.array_equal(u.values, v.values)
    with pytest.raises(ex.ExperimentError):
        ex.load_control(tmp_path, "missing")


def test_derive_seed_independent_streams():
    seeds = {ex.derive_seed(0, 5, N, r) for N in range(10) for r in range(10)}
    assert len(seeds) == 100
    assert ex.derive_seed(3, 1) == ex.derive_seed(3, 1)


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "pde_sgd.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "avg-sweep" in out.stdout
