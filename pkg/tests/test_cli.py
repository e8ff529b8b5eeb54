import csv
import io
from pathlib import Path

import pytest

from mvhedge import cli
from mvhedge.config import ConfigError, ExperimentConfig, emit_config, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, list(csv.reader(io.StringIO(out.out))), out.err


@pytest.mark.parametrize("name", ["infinite_depth.cfg", "finite_depth.cfg",
                                  "rho_sweep.cfg", "convergence.cfg"])
def test_bundled_configs_round_trip(name):
    cfg = load_config(str(CONFIGS / name))
    assert parse_config(emit_config(cfg)) == cfg


def test_default_config_round_trip():
    cfg = ExperimentConfig()
    assert parse_config(emit_config(cfg)) == cfg


def minimal(extra=""):
    return "[market]\n[schedule]\nn_dates = 3\n[constraints]\n[solver]\n[eval]\n" + extra


def test_unknown_key_reports_line():
    text = minimal().replace("[solver]\n", "[solver]\nalgoo = cashflow\n")
    with pytest.raises(ConfigError, match=r":6: \[solver\] algoo: unknown key"):
        parse_config(text, "x.cfg")


def test_config_errors():
    with pytest.raises(ConfigError, match="missing section"):
        parse_config("[market]\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(minimal("[extra]\n"))
    with pytest.raises(ConfigError, match="rho"):
        parse_config(minimal().replace("[market]\n", "[market]\nrho = abc\n"))
    with pytest.raises(ConfigError, match="algo"):
        parse_config(minimal().replace("[solver]\n", "[solver]\nalgo = magic\n"))
    with pytest.raises(ConfigError):
        parse_config(minimal().replace("[market]\n", "[market]\nrho = 3\n"))


def test_infinite_depth_keyword():
    cfg = parse_config(minimal().replace("[constraints]\n", "[constraints]\nm_bar = inf\nl_bar = inf\n"))
    assert cfg.constraints.m_bar == cfg.constraints.pos_max - cfg.constraints.pos_min


def test_analytic_command(capsys):
    code, rows, _ = run(capsys, "analytic")
    assert code == 0
    assert rows[0] == ["rho", "value0", "var_classical", "var_optimal"]
    assert float(rows[1][3]) == pytest.approx(7.874e14, rel=1e-3)


def test_analytic_sweep(capsys):
    code, rows, _ = run(capsys, "analytic", "--config", str(CONFIGS / "rho_sweep.cfg"))
    assert code == 0 and len(rows) == 1 + 3


def test_optimize_and_evaluate_policy(capsys, tmp_path):
    pol = tmp_path / "p.npz"
    code, rows, _ = run(capsys, "optimize", "--paths", "4000", "--dates", "4", "--mesh", "2x2",
                        "--depth", "1200", "--out", str(pol))
    assert code == 0
    assert rows[0] == ["algo", "paths", "dates", "mesh", "nu0", "x", "variance", "seconds"]
    assert rows[1][:4] == ["cashflow", "4000", "4", "2x2"]
    traj = tmp_path / "t.csv"
    code, rows, _ = run(capsys, "evaluate", "--policy", str(pol), "--paths", "2000", "--seed", "5",
                        "--dump-trajectories", str(traj))
    assert code == 0
    assert rows[0] == ["strategy", "paths", "seed", "variance", "mean_residual"]
    assert rows[1][:3] == ["numerical", "2000", "5"]
    assert traj.read_text().startswith("path,date_index,t,F,D,position")


def test_evaluate_strategies(capsys):
    code, rows, _ = run(capsys, "evaluate", "--strategy", "all", "--paths", "3000", "--dates", "3",
                        "--depth", "1200", "--mesh", "2x2", "--seed", "3")
    assert code == 0
    assert [r[0] for r in rows[1:]] == ["numerical", "analytic", "delta", "nohedge"]
    v = {r[0]: float(r[3]) for r in rows[1:]}
    assert v["numerical"] == v["analytic"] == v["delta"] < v["nohedge"]


def test_emit_config_applies_flags(capsys):
    code = cli.main(["optimize", "--emit-config", "--lambda", "0.01", "--dates", "4"])
    text = capsys.readouterr().out
    assert code == 0
    cfg = parse_config(text)
    assert cfg.constraints.lam == 0.01 and cfg.schedule.n_dates == 4


def test_oracle_check(capsys):
    code, rows, _ = run(capsys, "oracle-check")
    assert code == 0 and rows[1][-1] == "1"
    code, rows, _ = run(capsys, "oracle-check", "--random", "5", "--lambdas", "0")
    assert code == 0 and len(rows) == 7


def test_exit_codes(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[market]\nfoo = 1\n")
    code, _, err = run(capsys, "analytic", "--config", str(bad))
    assert code == 2 and "config error" in err
    code, _, err = run(capsys, "analytic", "--config", str(tmp_path / "missing.cfg"))
    assert code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["optimize", "--mesh", "eight"])
    assert exc.value.code == 2


def test_convergence_small(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(minimal("[convergence]\nmeshes = 1, 2\nsamples_per_cell = 500\npaths = 2000\n"
                           "mesh = 2\nalgos = cashflow\nruns = 2\n"))
    code, rows, _ = run(capsys, "convergence", "--config", str(cfg))
    assert code == 0
    assert rows[0][:6] == ["table", "algo", "mesh", "paths", "runs", "mean_variance"]
    assert [r[:4] for r in rows[1:]] == [["mesh", "cashflow", "1x1", "500"], ["mesh", "cashflow", "2x2", "2000"],
                                         ["paths", "cashflow", "2x2", "2000"]]
