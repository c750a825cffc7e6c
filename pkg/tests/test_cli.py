import json
import subprocess
import sys

import pytest

from conftest import make_m2
from delmdp import __version__
from delmdp.cli import main
from delmdp.errors import LpError
from delmdp.io import load_mdp, save_mdp


@pytest.fixture
def m2_file(tmp_path):
    path = tmp_path / "m2.json"
    save_mdp(make_m2(), path)
    return path


def _field(out, name):
    for line in out.splitlines():
        if line.startswith(name + ":"):
            return line.split(":", 1)[1].strip()
    raise KeyError(name)


def test_solve(m2_file, capsys):
    assert main(["solve", str(m2_file)]) == 0
    out = capsys.readouterr().out
    assert float(_field(out, "g*")) == pytest.approx(0.9, abs=1e-10)
    assert _field(out, "policy") == "1 0"
    assert _field(out, "ergodicity") == "proven-ergodic"
    assert float(_field(out, "delta_min")) == pytest.approx(0.8, abs=1e-10)


def test_lb_unstructured_and_lipschitz(m2_file, capsys):
    assert main(["lb", str(m2_file)]) == 0
    out = capsys.readouterr().out
    assert float(_field(out, "K")) == pytest.approx(130 / 9, abs=1e-9)
    assert main(["lb", str(m2_file), "--structure", "lipschitz", "--L", "0", "--Lp", "0"]) == 0
    out = capsys.readouterr().out
    assert float(_field(out, "K")) == pytest.approx(10.0, abs=1e-9)
    assert "S_lip" in out and "K_lip bound" in out


def test_gen_roundtrip(tmp_path, capsys):
    out = tmp_path / "tc.json"
    assert main(["gen", "two-cluster", "-o", str(out), "--S", "6", "--seed", "3"]) == 0
    assert load_mdp(out).num_states == 6
    rnd = tmp_path / "rnd.json"
    assert main(["gen", "random", "-o", str(rnd), "--S", "5", "--A", "3"]) == 0
    mdp = load_mdp(rnd)
    assert mdp.transitions.shape == (5, 3, 5) and mdp.transitions.min() >= 0.1 - 1e-15


def test_gen_invalid_parameters_exit_3(tmp_path, capsys):
    assert main(["gen", "two-cluster", "-o", str(tmp_path / "x.json"), "--S", "5"]) == 3
    assert "error:" in capsys.readouterr().err


def test_malformed_mdp_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", str(bad)]) == 3
    rows = tmp_path / "rows.json"
    rows.write_text(json.dumps({"num_states": 1, "num_actions": 1, "transitions": [[[0.5]]], "reward_means": [[0]]}))
    assert main(["solve", str(rows)]) == 3
    assert main(["solve", str(tmp_path / "missing.json")]) == 3


def test_reducible_mdp_exit_4(tmp_path, capsys):
    path = tmp_path / "split.json"
    doc = {
        "num_states": 2,
        "num_actions": 1,
        "transitions": [[[1.0, 0.0]], [[0.0, 1.0]]],
        "reward_means": [[0.0], [1.0]],
    }
    path.write_text(json.dumps(doc))
    assert main(["solve", str(path)]) == 4
    assert "not ergodic" in capsys.readouterr().err


def test_lp_failure_exit_5(m2_file, monkeypatch, capsys):
    import delmdp.cli as cli

    def fail(*a, **k):
        raise LpError("iteration limit reached")

    monkeypatch.setattr(cli, "lower_bound", fail)
    assert main(["lb", str(m2_file)]) == 5


def test_lipschitz_lb_needs_embeddings(tmp_path, capsys):
    path = tmp_path / "plain.json"
    save_mdp(make_m2(embed=False), path)
    assert main(["lb", str(path), "--structure", "lipschitz"]) == 3


def _write_config(tmp_path, **extra):
    doc = {
        "T": 200,
        "seeds": [0, 1],
        "record_every": 50,
        "env": {"type": "two-cluster", "num_states": 4},
        "agents": [{"name": "un", "structure": "unstructured", "mode": "simplified"}],
    }
    doc.update(extra)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(doc))  # JSON is valid YAML
    return path


def test_run_uses_output_env(tmp_path, monkeypatch, capsys):
    cfg = _write_config(tmp_path)
    monkeypatch.setenv("DELMDP_OUTPUT_DIR", str(tmp_path / "from-env"))
    assert main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "from-env" / "summary.csv").exists()
    assert "agent=un" in capsys.readouterr().out
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "traces" / "un_seed1.csv").exists()


def test_run_bad_config_exit_3(tmp_path, capsys):
    cfg = _write_config(tmp_path, T=-5)
    assert main(["run", "--config", str(cfg)]) == 3


def test_sweep_and_plot(tmp_path, capsys):
    cfg = _write_config(tmp_path, seeds=[0])
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--sizes", "4,6", "--output-dir", str(out)]) == 0
    assert len((out / "sweep.csv").read_text().splitlines()) == 3
    assert main(["plot", str(out / "sweep.csv"), "-o", str(tmp_path / "fig.svg")]) == 0
    assert (tmp_path / "fig.svg").read_text().startswith("<?xml")
    assert (tmp_path / "fig.dat").exists()


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["sweep", "--config", "x.yaml", "--sizes", "4,a"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "delmdp.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and __version__ in res.stdout
