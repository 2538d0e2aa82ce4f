import json
import math

import pytest

from pnlab.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_PASS, main
from pnlab.config import load_config, parse_config
from pnlab.errors import InvalidConfigurationError
from pnlab.experiments import COLUMNS
from pnlab.physics_models import PeriodicPotential


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    def test_minimal_fills_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, "subcommand: cell\n"))
        echo = cfg.echo()
        assert echo["numerics"]["T"] == 200.0 and echo["numerics"]["dt"] > 0
        assert echo["params"] == {"p": "0", "L": 1.0}

    def test_default_potential(self, tmp_path):
        cfg = parse_config(write(tmp_path, "subcommand: layer\npotential:\n"
                                           "  coefficients: [0.025330295910584444]\n"))
        pot = PeriodicPotential(tuple(cfg.potential.coefficients))
        assert pot == PeriodicPotential()
        assert cfg.potential.coefficients[0] == pytest.approx(1 / (4 * math.pi**2))

    def test_rejects_non_power_of_two(self, tmp_path):
        with pytest.raises(InvalidConfigurationError, match=r"numerics\.n: .*power of two"):
            parse_config(write(tmp_path, "subcommand: cell\nnumerics:\n  n: 100\n"))

    def test_unknown_key(self):
        with pytest.raises(InvalidConfigurationError, match="bogus"):
            load_config({"subcommand": "cell", "bogus": 1})

    def test_unknown_param_key_is_path_qualified(self):
        with pytest.raises(InvalidConfigurationError, match=r"params\.q"):
            load_config({"subcommand": "cell", "params": {"q": 1}})

    def test_type_mismatch(self):
        with pytest.raises(InvalidConfigurationError, match=r"numerics\.T"):
            load_config({"subcommand": "cell", "numerics": {"T": "long"}})

    def test_constraint_violation(self):
        with pytest.raises(InvalidConfigurationError, match=r"kernel\.g0"):
            load_config({"subcommand": "cell", "kernel": {"g0": -1}})

    def test_rational_normalisation(self):
        cfg = load_config({"subcommand": "cell", "params": {"p": 0.25}})
        assert cfg.params["p"] == "1/4"

    def test_run_id_deterministic_and_worker_independent(self):
        a = load_config({"subcommand": "cell"})
        b = load_config({"subcommand": "cell", "workers": 4})
        c = load_config({"subcommand": "cell", "params": {"L": 2.0}})
        assert a.run_id == b.run_id != c.run_id

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidConfigurationError, match="not found"):
            parse_config(tmp_path / "nope.yaml")

    def test_bad_yaml(self, tmp_path):
        with pytest.raises(InvalidConfigurationError, match="YAML"):
            parse_config(write(tmp_path, "subcommand: [cell\n"))


class TestCli:
    def test_operator_check(self, tmp_path, capsys):
        assert main(["operator-check", "--out", str(tmp_path)]) == EXIT_PASS
        (run,) = tmp_path.iterdir()
        m = json.loads((run / "manifest.json").read_text())
        files = {a["file"] for a in m["artifacts"]}
        assert files == {"operator_eigen.csv", "operator_quadrature.csv"}
        assert files | {"manifest.json"} == {p.name for p in run.iterdir()}
        assert m["status"] == "pass" and all(m["checks"].values())
        header = (run / "operator_quadrature.csv").read_text().splitlines()[0]
        assert header == ",".join(COLUMNS["operator_quadrature.csv"])
        assert "PASS" in capsys.readouterr().out

    def test_refuses_overwrite(self, tmp_path):
        assert main(["operator-check", "--out", str(tmp_path)]) == EXIT_PASS
        assert main(["operator-check", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert main(["operator-check", "--out", str(tmp_path), "--force"]) == EXIT_PASS

    def test_deterministic_tables(self, tmp_path):
        cfg = write(tmp_path, "subcommand: cell\nnumerics:\n  T: 40.0\nparams:\n  p: 1/2\n")
        outs = []
        for k in range(2):
            out = tmp_path / f"o{k}"
            main(["cell", "--config", str(cfg), "--out", str(out)])
            (run,) = out.iterdir()
            outs.append({p.name: p.read_bytes() for p in run.glob("*.csv")})
        assert outs[0] == outs[1] and len(outs[0]) == 2

    def test_config_error_exit(self, tmp_path):
        cfg = write(tmp_path, "subcommand: cell\nnumerics:\n  n: 100\n")
        assert main(["cell", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_subcommand_mismatch(self, tmp_path):
        cfg = write(tmp_path, "subcommand: cell\n")
        assert main(["layer", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_check_failure_recorded(self, tmp_path):
        cfg = write(tmp_path, "subcommand: cell\nnumerics:\n  T: 40.0\n  tol: 1.0e-30\n")
        assert main(["cell", "--config", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_CHECK
        (run,) = (tmp_path / "out").iterdir()
        m = json.loads((run / "manifest.json").read_text())
        assert m["status"] == "check-failure" and m["checks"]["converged"] is False

    def test_solver_error_recorded(self, tmp_path):
        # a non-(W)-class potential makes the layer relaxation refuse
        cfg = write(tmp_path, "subcommand: layer\npotential:\n  coefficients: [-0.01]\n"
                              "params:\n  closed_form: false\n")
        code = main(["layer", "--config", str(cfg), "--out", str(tmp_path / "out")])
        (run,) = (tmp_path / "out").iterdir()
        m = json.loads((run / "manifest.json").read_text())
        assert code == EXIT_CONFIG and m["status"] == "config-error" and "error" in m

    def test_budget_is_solver_error(self, tmp_path):
        cfg = write(tmp_path, "subcommand: cell\nnumerics:\n  T: 1.0e9\n")
        assert main(["cell", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 3
        (run,) = (tmp_path / "out").iterdir()
        m = json.loads((run / "manifest.json").read_text())
        assert m["status"] == "solver-error" and "BudgetExceeded" in m["error"]
