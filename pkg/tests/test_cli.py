import filecmp
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from crowdmfg import io
from crowdmfg.cli import EXIT_CONFIG, EXIT_NONCONV, EXIT_NUMERIC, EXIT_OK, main

ROOT = Path(__file__).resolve().parents[1]
DECOUPLED = ROOT / "configs" / "decoupled.toml"

SMALL_COUPLED = """\
grid.L = 2.0
grid.n = 24
time.T = 0.5
time.n_t = 10
kernel.kappa = 0.5
cost.c_cong = 0.5
init.sigma = 0.4
solve.n_particles = 1000
solve.nash_starts = 3
"""



def artifacts(d: Path):
    return sorted(p.name for p in d.iterdir())


def test_solve_decoupled(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(DECOUPLED), "--output", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] <= 2 and summary["converged"]
    for key in ("residual_history", "final_residual", "mass_error_max", "c2_hat_max", "support_radius_max", "nash_gap"):
        assert key in summary
    names = artifacts(out)
    assert {"convergence.csv", "trajectories.csv", "effective_config.toml", "run_info.json"} <= set(names)
    assert sum(n.startswith("density_") for n in names) == 11
    assert sum(n.startswith("value_") for n in names) == 11
    rho = io.read_measure_csv(out / "density_0010.csv")
    assert abs(rho.mass.sum() - 1.0) <= 1e-12


def test_w1_identical_prints_zero(tmp_path, capsys):
    out = tmp_path / "out"
    main(["solve", "--config", str(DECOUPLED), "--output", str(out)])
    capsys.readouterr()
    a = out / "density_0000.csv"
    assert main(["w1", str(a), str(a)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "0.0"


def test_w1_point_clouds(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("x,y\n0,0\n")
    (tmp_path / "b.csv").write_text("x,y\n3,4\n")
    assert main(["w1", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == EXIT_OK
    assert 4.99 <= float(capsys.readouterr().out) <= 5.0


def test_csv_round_trip(tmp_path):
    out = tmp_path / "out"
    main(["solve", "--config", str(DECOUPLED), "--output", str(out)])
    rho = io.read_measure_csv(out / "density_0005.csv")
    io.write_density_csv(tmp_path / "again.csv", rho)
    assert (tmp_path / "again.csv").read_bytes() == (out / "density_0005.csv").read_bytes()
    grid, v = io.read_value_csv(out / "value_0005.csv")
    io.write_value_csv(tmp_path / "v.csv", v, grid)
    assert (tmp_path / "v.csv").read_bytes() == (out / "value_0005.csv").read_bytes()


def test_trajectories_reproduce_solve_output(tmp_path):
    out = tmp_path / "out"
    main(["solve", "--config", str(DECOUPLED), "--output", str(out)])
    before = (out / "trajectories.csv").read_bytes()
    assert main(["trajectories", "--config", str(DECOUPLED), "--output", str(out)]) == EXIT_OK
    assert (out / "trajectories.csv").read_bytes() == before


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("kernel.kapa = 0.5\n")
    assert main(["solve", "--config", str(bad)]) == EXIT_CONFIG
    bad.write_text("cost.eps_run = 0.0\n")
    assert main(["solve", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG

    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL_COUPLED + "solve.max_iter = 1\nsolve.tol_fp = 1e-9\n")
    out = tmp_path / "nc"
    assert main(["solve", "--config", str(cfg), "--output", str(out)]) == EXIT_NONCONV
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is False and summary["iterations"] == 1
    assert (out / "density_0010.csv").exists()

    # an atom outside the box cannot be transported
    cfg.write_text(SMALL_COUPLED + 'init.kind = "atoms"\ninit.atoms = [[0.0, 0.0], [2.5, 0.0]]\n')
    assert main(["solve", "--config", str(cfg), "--output", str(tmp_path / "ood")]) == EXIT_NUMERIC


def test_solve_multi_layout(tmp_path):
    cfg = tmp_path / "m.toml"
    cfg.write_text(
        SMALL_COUPLED + "multi.count = 2\nmulti.coupling = [[0.5, 0.2], [0.2, 0.5]]\n"
        "pop1.cost.target = [0.5, 0.0]\npop2.cost.target = [-0.5, 0.0]\nsolve.max_iter = 3\n"
    )
    out = tmp_path / "m"
    code = main(["solve-multi", "--config", str(cfg), "--output", str(out)])
    assert code in (EXIT_OK, EXIT_NONCONV)
    top = json.loads((out / "summary.json").read_text())
    assert top["populations"] == 2 and len(top["nash_gap"]) == 2
    for p in ("pop1", "pop2"):
        s = json.loads((out / p / "summary.json").read_text())
        assert s["iterations"] == top["iterations"]
        assert top["final_residual"] >= s["final_residual"]


def test_validate_lq_small(tmp_path, capsys):
    cfg = tmp_path / "lq.toml"
    cfg.write_text("grid.L = 3.0\ngrid.n = 48\ntime.n_t = 30\nsolve.n_particles = 5000\n")
    assert main(["validate-lq", "--config", str(cfg)]) == EXIT_OK
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("max relative value error")][0]
    assert float(line.split()[-1]) <= 0.02


def test_output_every_keeps_last_snapshot(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(DECOUPLED.read_text() + "output.every = 4\n")
    out = tmp_path / "o"
    main(["solve", "--config", str(cfg), "--output", str(out)])
    assert sorted(n for n in artifacts(out) if n.startswith("density_")) == [
        "density_0000.csv", "density_0004.csv", "density_0008.csv", "density_0010.csv"
    ]


def _cli(cwd: Path, *args, threads_env="4"):
    env = dict(os.environ, NUMBA_NUM_THREADS=threads_env, MFG_LOG="error")
    return subprocess.run(
        [sys.executable, "-m", "crowdmfg.cli", *args], cwd=cwd, env=env, capture_output=True, text=True, check=False
    )


def _same_tree(a: Path, b: Path, skip=("run_info.json",)):
    cmp = filecmp.dircmp(a, b, ignore=list(skip))
    assert not cmp.left_only and not cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    assert not mismatch and not errors, mismatch


@pytest.mark.parametrize("threads", [(1, 1), (1, 4)])
def test_artifacts_byte_identical(tmp_path, threads):
    cfg = tmp_path / "c.toml"
    cfg.write_text(SMALL_COUPLED + "solve.max_iter = 3\n")
    dirs = []
    for r, t in enumerate(threads):
        d = tmp_path / f"run{r}"
        d.mkdir()
        res = _cli(d, "solve", "--config", str(cfg), "--output", "out", "--threads", str(t))
        assert res.returncode in (EXIT_OK, EXIT_NONCONV), res.stderr
        dirs.append(d / "out")
    _same_tree(*dirs)
    info = [json.loads((d / "run_info.json").read_text()) for d in dirs]
    assert [i["threads"] for i in info] == list(threads)
