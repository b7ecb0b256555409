import json
import subprocess
import sys
from pathlib import Path

import pytest

from stochsewing import cli
from stochsewing.averaging import NumericalAbort
from stochsewing.experiments import REGISTRY

QV = """experiment = "qv-brownian"
seed = 7
n_paths = 300
[params]
level = 8
"""


def _run(tmp_path, text, *extra, env=None):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(text)
    out = tmp_path / "out"
    return cli.main(["run", str(cfg), "--output-dir", str(out), *extra]), out


def _contents(run_dir: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())}


def test_every_registered_experiment_is_described(capsys):
    assert len(REGISTRY) == 16
    for name, exp in REGISTRY.items():
        assert exp.claim and exp.description
        assert cli.main(["describe", name]) == 0
    assert cli.main(["describe", "nope"]) == 2
    assert cli.main(["list"]) == 0
    assert "qv-brownian" in capsys.readouterr().out


def test_run_writes_layout_and_passes(tmp_path):
    code, out = _run(tmp_path, QV)
    assert code == 0
    (run_dir,) = list((out / "qv-brownian").iterdir())
    names = {p.name for p in run_dir.iterdir()}
    assert {"summary.json", "manifest.txt", "config.echo.toml", "qv_rate.csv"} <= names
    assert (run_dir / "config.echo.toml").read_text() == QV
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["passed"] is True and summary["seed"] == 7
    assert summary["params"]["level"] == 8
    assert "claim:" in (run_dir / "manifest.txt").read_text()


def test_seed_repeat_is_byte_identical(tmp_path, monkeypatch):
    _run(tmp_path, QV)
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    _run(tmp_path, QV)
    runs = sorted((tmp_path / "out" / "qv-brownian").iterdir())
    assert len(runs) == 2
    assert _contents(runs[0]) == _contents(runs[1])


def test_seed_override_changes_output(tmp_path):
    _run(tmp_path, QV)
    _run(tmp_path, QV, "--seed", "8")
    runs = sorted((tmp_path / "out" / "qv-brownian").iterdir())
    a, b = (_contents(r) for r in runs)
    assert a["qv_rate.csv"] != b["qv_rate.csv"]
    assert json.loads(b["summary.json"])["seed"] == 8


@pytest.mark.parametrize("text", [
    "experiment = 'qv-brownian'\nseed = ",                       # malformed TOML
    "experiment = 'qv-brownian'\n",                              # seed missing
    "experiment = 'qv-brownian'\nseed = 1\ncolour = 'red'\n",     # unknown key
    "experiment = 'qv-brownian'\nseed = 1\n[params]\nlevels = 3\n",
    "experiment = 'qv-brownian'\nseed = 1\n[thresholds]\nslope = 'x'\n",
    "experiment = 'nothing'\nseed = 1\n",
    "experiment = 'qv-brownian'\nseed = -1\n",
    "experiment = 'qv-brownian'\nseed = 1\nm_orders = [1]\n",
])
def test_config_errors_exit_2(tmp_path, text):
    code, out = _run(tmp_path, text)
    assert code == 2
    assert not out.exists()


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.toml")]) == 2


def test_acceptance_failure_exits_1(tmp_path):
    code, _ = _run(tmp_path, QV + "[thresholds]\nmean_tol = 1e-9\n")
    assert code == 1


def test_numerical_abort_exits_3(tmp_path, monkeypatch):
    exp = REGISTRY["qv-brownian"]

    def boom(ctx):
        raise NumericalAbort("non-finite state")

    monkeypatch.setattr(exp, "run", boom)
    code, _ = _run(tmp_path, QV)
    assert code == 3


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "stochsewing", "list"], capture_output=True,
                         text=True, check=False)
    assert res.returncode == 0 and "girsanov" in res.stdout
