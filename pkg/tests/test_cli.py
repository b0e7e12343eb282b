import csv
import json
import textwrap
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from grwflow.cli import OUT_ENV, TRACE_FORMAT, load_schema, main
from grwflow.config import config_echo, config_from_dict, parse_config
from grwflow.flow import ConfigError, FlowTrace
from grwflow.verify import CHECK_IDS

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """
[profile]
name = "steady_state"
[leaf]
n = 2
domain = "interval"
a = 0.0
b = 1.0
[grid]
points = 200
[initial]
kind = "constant"
c = 1.0
[time]
t_end = 0.5
"""


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def read_trace(path):
    lines = Path(path).read_text().splitlines()
    assert lines[0] == f"# {TRACE_FORMAT}"
    return list(csv.DictReader(lines[1:]))


class TestParse:
    def test_minimal_valid(self, tmp_path):
        cfg = parse_config(write(tmp_path, MINIMAL))
        assert (cfg.profile, cfg.n, cfg.points, cfg.t_end) == ("steady_state", 2, 200, 0.5)
        assert cfg.scheme == "explicit_rk2" and cfg.checks.enabled == CHECK_IDS
        echo = config_echo(cfg, 1.0)
        assert echo["time"]["cfl_safety"] == 0.9 and echo["profile"]["s_base"] == 1.0

    def test_bump_not_spacelike(self, tmp_path):
        text = MINIMAL.replace('name = "steady_state"', 'name = "minkowski_product"') \
                      .replace('kind = "constant"', 'kind = "bump"\namplitude = 0.9')
        with pytest.raises(ConfigError, match=r"node \d+"):
            parse_config(write(tmp_path, text))

    def test_unknown_key_nearest(self, tmp_path):
        text = MINIMAL.replace("[grid]", "[grid]\nrho_prime = 1")
        with pytest.raises(ConfigError, match="nearest valid key is 'grid.points'"):
            parse_config(write(tmp_path, text))
        with pytest.raises(ConfigError, match="nearest valid key"):
            config_from_dict({"profile": {"name": "reference", "rho_prime": 2}})

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"\[time\]"):
            config_from_dict({"tme": {}})

    def test_missing_required(self, tmp_path):
        with pytest.raises(ConfigError, match="grid.points"):
            parse_config(write(tmp_path, MINIMAL.replace("points = 200", "")))
        with pytest.raises(ConfigError, match="leaf.R"):
            parse_config(write(tmp_path, MINIMAL.replace('domain = "interval"', 'domain = "ball"')))

    def test_bad_values(self, tmp_path):
        for old, new in [("points = 200", "points = 2.5"), ("t_end = 0.5", 't_end = "soon"'),
                         ("[time]", '[checks]\nenabled = ["heigth_lower"]\n[time]'),
                         ("[time]", "[checks]\nkappa_C0 = 0\n[time]")]:
            with pytest.raises(ConfigError):
                parse_config(write(tmp_path, MINIMAL.replace(old, new)))

    def test_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(write(tmp_path, "[profile\nname="))

    def test_table_relative_to_config(self, tmp_path):
        s = np.linspace(0.0, 3.0, 31)
        np.savetxt(tmp_path / "rho.txt", np.c_[s, np.exp(s)])
        cfg = parse_config(write(tmp_path, MINIMAL.replace('name = "steady_state"', 'table = "rho.txt"')))
        assert cfg.table == str(tmp_path / "rho.txt")

    def test_shipped_configs_parse(self):
        for p in sorted(CONFIGS.glob("*.toml")):
            parse_config(p)


class TestRun:
    def test_steady_state_osc_zero(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", str(CONFIGS / "steady_state_constant.toml"), "--out", str(out)]) == 0
        rows = read_trace(out / "trace.csv")
        assert all(float(r["osc"]) == 0.0 for r in rows)
        assert list(rows[0])[:8] == list(FlowTrace.COLUMNS)
        assert [c for c in rows[0] if c.startswith("margin_")] == [f"margin_{c}" for c in CHECK_IDS]
        assert float(rows[-1]["max_u"]) == pytest.approx(3.0, abs=1e-6)

    def test_outputs_and_schema(self, tmp_path):
        out = tmp_path / "out"
        main(["run", "--config", str(CONFIGS / "flat_interval_bump.toml"), "--out", str(out)])
        rep = json.loads((out / "report.json").read_text())
        jsonschema.validate(rep, load_schema())
        man = json.loads((out / "manifest.json").read_text())
        for f in man["outputs"].values():
            assert Path(f).exists()
        assert man["exit_code"] == 0 and man["config"] == rep["config"]
        res = (out / "residuals.csv").read_text().splitlines()
        assert res[0] == f"# {TRACE_FORMAT}" and "simons_vs_heat" in res[1]

    def test_deterministic(self, tmp_path):
        cfg = str(CONFIGS / "flat_interval_bump.toml")
        main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
        for f in ("trace.csv", "residuals.csv", "report.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
        assert main(["run", "--config", str(CONFIGS / "steady_state_constant.toml")]) == 0
        assert (tmp_path / "env" / "report.json").exists()
        # --out still wins
        main(["run", "--config", str(CONFIGS / "steady_state_constant.toml"), "--out", str(tmp_path / "cli")])
        assert (tmp_path / "cli" / "report.json").exists()

    def test_failed_check_exit_1(self, tmp_path):
        text = MINIMAL.replace("[time]", "[checks]\neps_slack = -1.0\n[time]")
        # a negative slack turns the exact equality cases into failures
        code = main(["run", "--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o")])
        assert code == 1
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert "height_lower" in man["failed_checks"]

    def test_abort_exit_2(self, tmp_path, caplog):
        s = np.linspace(0.0, 2.0, 21)
        np.savetxt(tmp_path / "rho.txt", np.c_[s, np.exp(s)])
        text = MINIMAL.replace('name = "steady_state"', 'table = "rho.txt"').replace("t_end = 0.5", "t_end = 1.0")
        out = tmp_path / "o"
        assert main(["run", "--config", str(write(tmp_path, text)), "--out", str(out)]) == 2
        assert (out / "snapshot.csv").exists()
        rep = json.loads((out / "report.json").read_text())
        jsonschema.validate(rep, load_schema())
        assert rep["outcome"] == "aborted" and rep["error"]["kind"] == "LeftInterval"
        assert "aborted" in caplog.text

    def test_config_error_exit_2(self, tmp_path, caplog):
        assert main(["run", "--config", str(write(tmp_path, MINIMAL + "\n[bogus]\n"))]) == 2
        assert "nearest valid section" in caplog.text
        assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2


class TestCheck:
    def test_de_sitter(self, capsys):
        assert main(["check", "--config", str(CONFIGS / "de_sitter_slice.toml")]) == 0
        out = capsys.readouterr().out
        assert "ratio_nonincreasing=false" in out
        body = json.loads(out[out.index("{"):])
        st = {c["id"]: c["status"] for c in body["checks"]}
        for c in ("height_lower", "rho_upper", "tilt_matM", "H_schedule"):
            assert st[c] == "not-applicable"

    def test_reference(self, capsys):
        assert main(["check", "--config", str(CONFIGS / "reference_ball_bump.toml")]) == 0
        out = capsys.readouterr().out
        assert "ncc_holds=true" in out and "ratio_nonincreasing=true" in out


class TestSweep:
    def test_sweep_index(self, tmp_path):
        for name in ("steady_state_constant", "flat_interval_bump"):
            (tmp_path / f"{name}.toml").write_text((CONFIGS / f"{name}.toml").read_text())
        (tmp_path / "broken.toml").write_text("[profile]\nname = 'nope'\n")
        out = tmp_path / "sweep"
        code = main(["sweep", "--glob", str(tmp_path / "*.toml"), "--jobs", "2", "--out", str(out)])
        idx = json.loads((out / "index.json").read_text())
        assert code == 2 and idx["exit_code"] == 2
        by = {Path(r["config"]).stem: r for r in idx["runs"]}
        assert by["steady_state_constant"]["exit_code"] == 0
        assert by["flat_interval_bump"]["outcome"] == "pass"
        assert by["broken"]["outcome"] == "error"
        assert (out / "steady_state_constant" / "manifest.json").exists()

    def test_no_match(self, tmp_path):
        assert main(["sweep", "--glob", str(tmp_path / "*.toml")]) == 2
