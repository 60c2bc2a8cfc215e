import csv
import json

from fedsim import metrics
from fedsim.cli import EXIT_CONFIG, EXIT_OK, expand_grid, run_cli
from fedsim.config import FedConfig

SMALL = ["--rounds", "3"]


def _small_ini(tmp_path, extra=""):
    cfg = FedConfig(workers=8, selected=3, rounds=3, n_samples=300, n_features=4, n_classes=3, beta=0.5)
    p = tmp_path / "small.ini"
    p.write_text(cfg.to_ini() + extra)
    return p


def test_run_writes_all_artifacts(tmp_path):
    out = tmp_path / "run"
    assert run_cli(["run", "--config", str(_small_ini(tmp_path)), "--out", str(out)]) == EXIT_OK
    for name in (metrics.MANIFEST_NAME, metrics.METRICS_NAME, metrics.CSV_NAME, metrics.TIMINGS_NAME):
        assert (out / name).exists()
    man = json.loads((out / metrics.MANIFEST_NAME).read_text())
    assert man["status"] == "complete"


def test_manifest_rerun_reproduces_metrics(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(["run", "--config", str(_small_ini(tmp_path)), "--out", str(a), "--aggregator", "br_drag",
             "--attack", "sign_flip", "--ratio", "0.4"])
    assert run_cli(["run", "--config", str(a / metrics.MANIFEST_NAME), "--out", str(b)]) == EXIT_OK
    assert (a / metrics.METRICS_NAME).read_bytes() == (b / metrics.METRICS_NAME).read_bytes()


def test_config_errors_exit_1(tmp_path, capsys):
    assert run_cli(["run", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG
    assert run_cli(["run", "--config", str(_small_ini(tmp_path)), "--ratio", "2"]) == EXIT_CONFIG
    assert "ratio" in capsys.readouterr().err
    assert run_cli(["bogus-command"]) == EXIT_CONFIG


def test_sweep_and_export(tmp_path):
    out, plots = tmp_path / "sweep", tmp_path / "plots"
    rc = run_cli(["sweep", "--config", str(_small_ini(tmp_path)), "--out", str(out),
                  "--grid", "aggregator=fedavg,drag", "--seeds", "0,1"])
    assert rc == EXIT_OK
    index = json.loads((out / "sweep.json").read_text())
    assert len(index["runs"]) == 4
    assert run_cli(["export-plots", "--in", str(out), "--out", str(plots)]) == EXIT_OK
    with open(plots / "figure__all.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["series"] for r in rows} == {"aggregator=fedavg", "aggregator=drag"}
    assert all(r["n_seeds"] == "2" for r in rows)


def test_sweep_rejects_unsweepable_key(tmp_path):
    rc = run_cli(["sweep", "--config", str(_small_ini(tmp_path)), "--grid", "workers=2,3", "--out", str(tmp_path)])
    assert rc == EXIT_CONFIG


def test_sweep_parallel_matches_serial(tmp_path):
    ini = _small_ini(tmp_path)
    run_cli(["sweep", "--config", str(ini), "--out", str(tmp_path / "s1"), "--grid", "c=0.1,0.5"])
    run_cli(["sweep", "--config", str(ini), "--out", str(tmp_path / "s2"), "--grid", "c=0.1,0.5", "--jobs", "2"])
    for label in ("c=0.1", "c=0.5"):
        a = (tmp_path / "s1" / label / metrics.METRICS_NAME).read_bytes()
        b = (tmp_path / "s2" / label / metrics.METRICS_NAME).read_bytes()
        assert a == b


def test_expand_grid_order_and_seed():
    runs = expand_grid(FedConfig(), {"c": ["0.1", "0.2"], "seed": ["3"]})
    assert [label for label, _ in runs] == ["c=0.1__seed=3", "c=0.2__seed=3"]
    assert runs[1][1].c == 0.2 and runs[1][1].seed_batch == 3


def test_verify_single_check(capsys):
    assert run_cli(["verify", "--check", "algebra"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("PASS")
    assert run_cli(["verify", "--check", "nope"]) == EXIT_CONFIG


def test_configs_lists_packaged(capsys):
    assert run_cli(["configs"]) == EXIT_OK
    assert "paper_defaults" in capsys.readouterr().out
