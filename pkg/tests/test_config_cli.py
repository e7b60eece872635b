import json
import math

import numpy as np
import pytest

from tugrobin.cli import main
from tugrobin.config import ConfigError, compile_expression, load_config, \
    parse_config


def base_config(**overrides):
    cfg = {
        "domain": {"kind": "annulus", "center": [0.0, 0.0],
                   "r_inner": 0.5, "r_outer": 1.5},
        "p": 1.5,
        "gamma0": 1.0,
        "eps": 0.25,
        "boundary_data": {"kind": "constant", "value": 2.0},
        "grid": {"rule": "eps_over_k", "k": 2.0},
        "solver": {"tol": 1e-6, "max_iter": 5000,
                   "direction_count": 8, "quadrature_degree": 2},
        "mc": {"n_traj": 40, "max_steps": 20000, "master_seed": 7},
    }
    cfg.update(overrides)
    return cfg


class TestConfig:
    def test_valid(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(base_config()))
        cfg = load_config(path)
        assert cfg.p == 1.5
        assert cfg.domain.kind == "annulus"
        assert cfg.G([1.0, 0.0]) == 2.0

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(base_config(bogus=1))

    def test_unknown_nested_key_rejected(self):
        raw = base_config()
        raw["solver"]["fancy"] = True
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_range_violation_names_field(self):
        raw = base_config(p=2.5)
        with pytest.raises(ConfigError, match="p"):
            parse_config(raw)

    def test_missing_eps(self):
        raw = base_config()
        del raw["eps"]
        with pytest.raises(ConfigError, match="eps"):
            parse_config(raw)

    def test_odd_direction_count(self):
        raw = base_config()
        raw["solver"]["direction_count"] = 7
        with pytest.raises(ConfigError, match="direction_count"):
            parse_config(raw)

    def test_radial_linear_needs_annulus(self):
        raw = base_config()
        raw["domain"] = {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0}
        raw["boundary_data"] = {"kind": "radial_linear", "inner": 0.0,
                                "outer": 1.0}
        with pytest.raises(ConfigError):
            parse_config(raw)


class TestExpressionGrammar:
    def test_values(self):
        G = compile_expression("sin(x1) + r^2/2 - 0.5*x2")
        pts = np.array([[0.3, 0.4], [1.0, -1.0]])
        expected = np.sin(pts[:, 0]) + np.linalg.norm(pts, axis=1) ** 2 / 2 \
            - 0.5 * pts[:, 1]
        np.testing.assert_allclose(G(pts), expected, atol=1e-14)
        assert G(pts[0]) == pytest.approx(expected[0])

    def test_precedence_and_unary(self):
        G = compile_expression("-x1^2 + 2*3")
        assert G(np.array([2.0, 0.0])) == pytest.approx(-4.0 + 6.0)

    def test_nested_functions(self):
        G = compile_expression("exp(cos(x1)*0.1)")
        assert G(np.array([0.0, 0.0])) == pytest.approx(math.exp(0.1))

    def test_bad_token(self):
        with pytest.raises(ConfigError):
            compile_expression("x1 + $")

    def test_unknown_identifier(self):
        with pytest.raises(ConfigError):
            compile_expression("x1 + foo")

    def test_trailing_garbage(self):
        with pytest.raises(ConfigError):
            compile_expression("x1 )")


class TestCli:
    def write(self, tmp_path, cfg):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_solve_constant(self, tmp_path):
        cfgp = self.write(tmp_path, base_config())
        out = tmp_path / "out"
        code = main(["solve", "--config", cfgp, "--out", str(out)])
        assert code == 0
        assert (out / "u_eps.csv").exists()
        meta = json.loads((out / "u_eps.meta.json").read_text())
        assert meta["converged"] is True
        assert meta["iterations"] <= 2

    def test_solve_malformed_config(self, tmp_path):
        cfgp = self.write(tmp_path, base_config(p=2.5))
        assert main(["solve", "--config", cfgp, "--out", str(tmp_path)]) == 2

    def test_solve_not_converged_exit_code(self, tmp_path):
        cfg = base_config()
        cfg["boundary_data"] = {"kind": "radial_linear", "inner": 0.0,
                                "outer": 1.0}
        cfg["solver"]["max_iter"] = 3
        cfg["solver"]["tol"] = 1e-12
        cfgp = self.write(tmp_path, cfg)
        out = tmp_path / "nc"
        assert main(["solve", "--config", cfgp, "--out", str(out)]) == 3
        assert (out / "u_eps.csv").exists()  # best iterate still written

    def test_simulate_greedy_requires_field(self, tmp_path):
        cfgp = self.write(tmp_path, base_config())
        assert main(["simulate", "--config", cfgp, "--out", str(tmp_path),
                     "--point", "1.0,0.0", "--strategy", "greedy"]) == 2

    def test_simulate_constant_payoff(self, tmp_path):
        cfgp = self.write(tmp_path, base_config())
        out = tmp_path / "out"
        assert main(["solve", "--config", cfgp, "--out", str(out)]) == 0
        code = main(["simulate", "--config", cfgp, "--out", str(out),
                     "--point", "1.0,0.0", "--strategy", "greedy",
                     "--field", str(out / "u_eps.csv")])
        assert code == 0
        rows = (out / "mc_values.csv").read_text().strip().split("\n")
        header = rows[0].split(",")
        vals = rows[1].split(",")
        assert float(vals[header.index("mean")]) == 2.0
        assert float(vals[header.index("se")]) == 0.0

    def test_verify_moments(self, tmp_path):
        cfg = base_config(eps=0.05)
        cfgp = self.write(tmp_path, cfg)
        out = tmp_path / "ver"
        assert main(["verify", "--config", cfgp, "--suite", "moments",
                     "--out", str(out)]) == 0
        assert (out / "verify_moments.csv").exists()

    def test_convergence_single_eps_rejected(self, tmp_path):
        cfg = base_config()
        cfg["eps_list"] = [0.25]
        del cfg["eps"]
        cfgp = self.write(tmp_path, cfg)
        assert main(["convergence", "--config", cfgp,
                     "--out", str(tmp_path)]) == 2

    def test_convergence_constant_data(self, tmp_path):
        cfg = base_config()
        cfg["eps_list"] = [0.3, 0.2]
        del cfg["eps"]
        cfgp = self.write(tmp_path, cfg)
        out = tmp_path / "conv"
        assert main(["convergence", "--config", cfgp, "--out", str(out)]) == 0
        lines = (out / "convergence.csv").read_text().strip().split("\n")
        assert len(lines) == 3
        for line in lines[1:]:
            assert float(line.split(",")[2]) <= 1e-12  # all-zero error column

    def test_reproducible_outputs(self, tmp_path):
        cfg = base_config()
        cfgp = self.write(tmp_path, cfg)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            assert main(["solve", "--config", cfgp, "--out", str(out)]) == 0
            assert main(["simulate", "--config", cfgp, "--out", str(out),
                         "--point", "1.2,0.1", "--strategy", "pull"]) == 0
        assert (out1 / "u_eps.csv").read_bytes() == \
            (out2 / "u_eps.csv").read_bytes()
        assert (out1 / "mc_values.csv").read_bytes() == \
            (out2 / "mc_values.csv").read_bytes()

    def test_shipped_config_parses(self):
        cfg = load_config("configs/annulus_radial.json")
        assert cfg.domain.kind == "annulus"
        cfg2 = load_config("configs/convergence_study.json")
        assert len(cfg2.eps_list) == 3
