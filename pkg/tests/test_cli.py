import csv
import json
import textwrap
from pathlib import Path

import pytest

from switchavg.cli import EXIT_CERTIFICATION, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main, run
from switchavg.config import ConfigError, parse_config

MINIMAL = """
[chain]
labels = ["up", "down"]
rates = [1.0, 2.0]
kernel = [[0.0, 1.0], [1.0, 0.0]]

[field]
kind = "linear"
a = [3.0, -3.0]

[system]
u0 = 1.0
"""


@pytest.fixture
def scenario(tmp_path):
    def write(text=MINIMAL, name="scenario.toml"):
        p = tmp_path / name
        p.write_text(textwrap.dedent(text))
        return p
    return write


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParseConfig:
    def test_defaults(self, scenario):
        cfg = parse_config("deviation-study", scenario())
        st = cfg.scenario["study"]
        assert st["n_paths"] == 2000 and st["epsilons"] == [0.1, 0.01, 0.001]
        assert cfg.scenario["system"]["horizon"] == 1.0
        assert st["containment_levels"] == [4.0, 10.0, 20.0]
        assert cfg.scenario["chain"]["initial_state"] == "up"

    def test_negative_rate_names_state(self, scenario):
        p = scenario(MINIMAL.replace("rates = [1.0, 2.0]", "rates = [1.0, -2.0]"))
        with pytest.raises(ConfigError, match="'down'"):
            parse_config("simulate", p)

    def test_epsilon_override(self, scenario):
        cfg = parse_config("deviation-study", scenario(), epsilon=[0.5])
        assert cfg.scenario["study"]["epsilons"] == [0.5]

    def test_unknown_field_rejected(self, scenario):
        p = scenario(MINIMAL + "\n[study]\nn_path = 3\n")
        with pytest.raises(ConfigError, match="study.n_path"):
            parse_config("simulate", p)

    def test_unknown_section_rejected(self, scenario):
        with pytest.raises(ConfigError, match="extras"):
            parse_config("simulate", scenario(MINIMAL + "\n[extras]\nx = 1\n"))

    def test_type_error_has_path(self, scenario):
        p = scenario(MINIMAL.replace("u0 = 1.0", 'u0 = "one"'))
        with pytest.raises(ConfigError, match=r"system.u0\[0\]"):
            parse_config("simulate", p)

    def test_parse_error_has_line(self, scenario):
        p = scenario(MINIMAL.replace("kind = \"linear\"", "kind = linear"))
        with pytest.raises(ConfigError, match="line 8"):
            parse_config("simulate", p)

    def test_missing_required(self, scenario):
        with pytest.raises(ConfigError, match="field.kind"):
            parse_config("simulate", scenario(MINIMAL.replace('kind = "linear"', "")))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config("simulate", tmp_path / "nope.toml")

    def test_state_count_mismatch(self, scenario):
        with pytest.raises(ConfigError, match="2"):
            parse_config("simulate", scenario(MINIMAL.replace("a = [3.0, -3.0]", "a = [3.0, -3.0, 1.0]")))


def test_chain_analyze(scenario, tmp_path):
    out = tmp_path / "out"
    assert main(["chain-analyze", str(scenario()), "-o", str(out)]) == EXIT_OK
    rows = read_csv(out / "results.csv")
    pi = {r["row"]: float(r["value"]) for r in rows if r["quantity"] == "pi"}
    assert pi["up"] == pytest.approx(2 / 3) and pi["down"] == pytest.approx(1 / 3)
    R0 = {(r["row"], r["col"]): float(r["value"]) for r in rows if r["quantity"] == "R0"}
    assert R0[("down", "up")] == pytest.approx(-2 / 9)
    assert (out / "manifest").exists()


def test_residual_check(scenario, tmp_path):
    out = tmp_path / "out"
    assert main(["residual-check", str(scenario()), "-o", str(out)]) == EXIT_OK
    rows = read_csv(out / "results.csv")
    assert list(rows[0]) == ["epsilon", "u", "state", "lhs", "rhs", "residual"]
    assert len(rows) == 3 * 2 * 201
    assert max(float(r["residual"]) for r in rows) <= 1e-10


def test_simulate_dump_paths(scenario, tmp_path):
    out = tmp_path / "out"
    assert main(["simulate", str(scenario()), "-o", str(out), "--epsilon", "0.1", "--dump-paths"]) == EXIT_OK
    traj = read_csv(out / "trajectories.csv")
    assert list(traj[0]) == ["epsilon", "path", "t", "regime", "u_1"]
    switched = [r for r in traj if r["path"] == "0"]
    assert switched[0]["t"] == "0.0" and switched[0]["u_1"] == "1.0"
    assert {r["regime"] for r in switched} <= {"up", "down"}
    summary = read_csv(out / "results.csv")
    assert len(summary) == 1


def test_deviation_study(scenario, tmp_path):
    out = tmp_path / "out"
    code = main(["deviation-study", str(scenario()), "-o", str(out), "--n-paths", "100"])
    assert code == EXIT_OK
    rows = read_csv(out / "results.csv")
    eps = {r["epsilon"] for r in rows}
    assert {"0.1", "0.01", "0.001"} <= eps
    manifest = json.loads((out / "manifest").read_text())
    assert manifest["scenario"]["study"]["n_paths"] == 100
    assert manifest["seed"] == 0 and manifest["result"]["certified"] is True


def test_certification_failure_exit_code(tmp_path):
    scenario = Path(__file__).resolve().parents[1] / "scenarios" / "quadratic.toml"
    assert main(["deviation-study", str(scenario), "-o", str(tmp_path / "o"), "--n-paths", "10"]) == EXIT_CERTIFICATION
    assert not (tmp_path / "o" / "results.csv").exists()


def test_config_error_exit_code(scenario, tmp_path):
    p = scenario(MINIMAL + "\n[study]\nbogus = 1\n")
    assert main(["simulate", str(p), "-o", str(tmp_path / "o")]) == EXIT_CONFIG


def test_numerical_failure_exit_code(scenario, tmp_path):
    text = MINIMAL.replace('kind = "linear"', 'kind = "quadratic"').replace("a = [3.0, -3.0]", "a = [1.0, 1.0]")
    text = text.replace("u0 = 1.0", "u0 = 2.0")
    p = scenario(text)
    code = main(["simulate", str(p), "-o", str(tmp_path / "o"), "--epsilon", "0.1"])
    assert code == EXIT_NUMERICAL


def test_manifest_round_trip(scenario, tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert main(["moment-study", str(scenario()), "-o", str(first), "--n-paths", "80", "--seed", "9"]) == EXIT_OK
    assert main(["moment-study", str(first / "manifest"), "-o", str(second)]) == EXIT_OK
    assert (first / "results.csv").read_bytes() == (second / "results.csv").read_bytes()
    a = json.loads((first / "manifest").read_text())["scenario"]
    b = json.loads((second / "manifest").read_text())["scenario"]
    assert a == b


def test_manifest_has_no_silent_defaults(scenario, tmp_path):
    out = tmp_path / "o"
    assert main(["chain-analyze", str(scenario()), "-o", str(out)]) == EXIT_OK
    sc = json.loads((out / "manifest").read_text())["scenario"]
    from switchavg.config import SCHEMA
    for section, keys in SCHEMA.items():
        for key, (_, default) in keys.items():
            if default is not None or key in ("labels", "initial_state", "containment_levels"):
                assert key in sc[section], f"{section}.{key} missing from manifest"


def test_run_returns_status(scenario, tmp_path):
    cfg = parse_config("chain-analyze", scenario(), tmp_path / "x")
    assert run(cfg) == EXIT_OK
