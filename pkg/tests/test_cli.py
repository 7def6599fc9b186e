import json
import math

import pytest

from quenchphase import __version__, epsilon, load_config
from quenchphase.cli import main, run_sweep
from quenchphase.scenarios import REGISTRY, ScenarioError, builtin, scenario_from_dict
from quenchphase.trace import read_trace_csv


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_config(path, spins, omega_khz=335.0):
    path.write_text(json.dumps({
        "label": "test",
        "field": {"b0_gauss": omega_khz / 1.0705, "omega_L_khz": omega_khz},
        "spins": [{"a_par_khz": a, "a_perp_khz": b} for a, b in spins],
    }))
    return str(path)


class TestScenarios:
    def test_list(self, capsys):
        code, out, _ = run(capsys, "scenarios", "list")
        assert code == 0
        for name in REGISTRY:
            assert name in out

    def test_every_builtin_validates(self):
        for name in REGISTRY:
            assert builtin(name).to_dict()["name"] == name

    @pytest.mark.parametrize("patch, match", [
        ({"colour": 1}, "unknown field"),
        ({"params": {"Mx": 2}}, r"params\.Mx"),
        ({"sweep": {"steps": 1}}, r"sweep\.steps"),
        ({"sweep": {"start": 1.0, "stop": 1.0}}, "empty range"),
        ({"sweep": {"variable": "t_wait"}}, r"sweep\.variable"),
        ({"outputs": ["tau_us", "z"]}, "outputs"),
    ])
    def test_validation(self, patch, match):
        with pytest.raises(ScenarioError, match=match):
            scenario_from_dict({"name": "pse-tau", **patch})


class TestSweep:
    def test_columns(self, capsys, tmp_path):
        out = tmp_path / "t.csv"
        code, _, _ = run(capsys, "sweep", "--scenario", "pse-tau", "--steps", "5",
                         "--out", str(out))
        assert code == 0
        tr = read_trace_csv(out)
        assert tr.control.size == 5
        header = [l for l in out.read_text().splitlines() if not l.startswith("#")][0]
        assert header == "tau_us,x,y,w_mag,phi"

    def test_metadata(self, capsys):
        _, out, _ = run(capsys, "sweep", "--scenario", "gaussian-tau", "--steps", "3")
        meta = [l for l in out.splitlines() if l.startswith("#")]
        assert meta[0] == f"# quenchphase {__version__}"
        assert any(l.startswith("# config_sha256: ") for l in meta)
        assert "# seed: 0" in meta

    def test_deterministic_with_threads(self, capsys):
        args = ["sweep", "--scenario", "pse-tau", "--steps", "12", "--param", "noise_sigma=0.01",
                "--seed", "7"]
        _, a, _ = run(capsys, *args)
        _, b, _ = run(capsys, *args, "--threads", "3")
        _, c, _ = run(capsys, *args[:-1], "8")
        assert a == b
        assert a != c

    def test_unknown_scenario(self, capsys):
        code, _, err = run(capsys, "sweep", "--scenario", "nope")
        assert code == 2 and "unknown scenario" in err

    def test_unknown_param(self, capsys):
        code, _, err = run(capsys, "sweep", "--scenario", "xy8", "--param", "repeat=3")
        assert code == 2 and "params.repeat" in err

    def test_scenario_file(self, capsys, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"name": "novel-resonance", "sweep": {"steps": 3},
                                 "outputs": ["f_sl_khz", "pz_bar"]}))
        code, out, _ = run(capsys, "sweep", "--scenario-file", str(p))
        assert code == 0
        rows = [l for l in out.splitlines() if not l.startswith("#")]
        assert rows[0] == "f_sl_khz,pz_bar" and len(rows) == 4

    def test_scenario_file_unknown_field(self, capsys, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"name": "xy8", "sweeep": {}}))
        code, _, err = run(capsys, "sweep", "--scenario-file", str(p))
        assert code == 2 and "sweeep" in err

    def test_scenario_file_bad_json(self, capsys, tmp_path):
        p = tmp_path / "s.json"
        p.write_text('{"name": "xy8",\n "sweep": }')
        code, _, err = run(capsys, "sweep", "--scenario-file", str(p))
        assert code == 2 and "line 2" in err

    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "sweep", "--scenario", "xy8",
                           "--config", str(tmp_path / "none.json"))
        assert code == 2 and "no such file" in err

    def test_no_scenario(self, capsys):
        assert run(capsys, "sweep")[0] == 2

    def test_bad_flag(self, capsys):
        assert run(capsys, "sweep", "--bogus")[0] == 2


class TestFit:
    def _sweep(self, capsys, tmp_path, *extra):
        out = tmp_path / "t.csv"
        code, _, _ = run(capsys, "sweep", "--out", str(out), *extra)
        assert code == 0
        return str(out)

    def test_eq7_round_trip(self, capsys, tmp_path, nv_a):
        path = self._sweep(capsys, tmp_path, "--scenario", "gaussian-tau", "--steps", "40",
                           "--param", "pz=0")
        code, out, _ = run(capsys, "fit", path, "--model", "eq7", "--config", "nv_a")
        assert code == 0
        res = json.loads(out)
        assert res["params"]["eps"] == pytest.approx(epsilon(nv_a, nv_a.field), abs=1e-9)

    def test_tau_sweep_round_trip(self, capsys, tmp_path, nv_a):
        path = self._sweep(capsys, tmp_path, "--scenario", "gaussian-tau", "--steps", "40",
                           "--param", "pz=0.6")
        code, out, _ = run(capsys, "fit", path, "--model", "tau-sweep", "--larmor-khz", "335")
        res = json.loads(out)
        assert code == 0
        assert res["params"]["pz_bar"] == pytest.approx(0.6, abs=1e-8)

    def test_twait(self, capsys, tmp_path):
        path = self._sweep(capsys, tmp_path, "--scenario", "twait", "--steps", "24",
                           "--stop", "3")
        code, out, _ = run(capsys, "fit", path, "--model", "twait", "--config", "nv_b")
        assert code == 0
        assert set(json.loads(out)["params"]) == {"pz_bar", "p_perp_tilde", "phi"}

    def test_missing_column(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("tau_us,x\n0.1,1.0\n0.2,0.9\n")
        code, _, err = run(capsys, "fit", str(p), "--config", "nv_a")
        assert code == 2 and "y" in err

    def test_fit_failure_is_runtime(self, capsys, tmp_path):
        path = self._sweep(capsys, tmp_path, "--scenario", "gaussian-tau", "--steps", "4")
        code, _, err = run(capsys, "fit", path, "--config", "nv_a")
        assert code == 1 and "fit failed" in err

    def test_needs_larmor(self, capsys, tmp_path):
        path = self._sweep(capsys, tmp_path, "--scenario", "gaussian-tau", "--steps", "10")
        assert run(capsys, "fit", path)[0] == 2


class TestValidate:
    def test_nv_a(self, capsys):
        code, out, _ = run(capsys, "validate", "--config", "nv_a")
        assert code == 0
        eps = float(out.split("epsilon: ")[1].split()[0])
        horizon = float(out.split("horizon: ")[1].split()[0])
        assert eps == pytest.approx(0.094, abs=0.002)
        assert horizon == pytest.approx(2.0, abs=0.1)
        assert "WARNING" not in out

    def test_empty_bath(self, capsys, tmp_path):
        code, out, _ = run(capsys, "validate", "--config", write_config(tmp_path / "e.json", []))
        assert code == 0
        assert "epsilon: 0\n" in out and "WARNING" not in out

    def test_strong_coupling_warning(self, capsys, tmp_path):
        code, out, _ = run(capsys, "validate", "--config",
                           write_config(tmp_path / "s.json", [(0.0, 335.0)]))
        assert code == 0
        assert "WARNING: spin 0" in out

    def test_requires_config(self, capsys):
        assert run(capsys, "validate")[0] == 2


def test_version(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0 and __version__ in out


def test_run_sweep_matches_cli(capsys):
    scen = scenario_from_dict({"name": "gaussian-tau", "sweep": {"steps": 6}})
    text = run_sweep(scen, load_config("nv_a"), seed=0)
    _, out, _ = run(capsys, "sweep", "--scenario", "gaussian-tau", "--steps", "6")
    assert text == out
    assert math.isfinite(float(text.splitlines()[-1].split(",")[1]))
