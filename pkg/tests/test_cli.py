import copy
import json
import os
import subprocess
import sys

import pytest

from kooprobust import config as cfgmod
from kooprobust.analysis import controller_deviation_bound, value_deviation_bound
from kooprobust.cli import main
from kooprobust.identify import ErrorBound

ARTIFACTS = ["model.json", "bounds.json", "valuefn_nominal.json", "valuefn_robust.json",
             "convergence.csv", "cost_table.json", "cost_table.txt", "tradeoff.csv",
             "deviation_report.json"]


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, small_cfg):
    d = tmp_path_factory.mktemp("small")
    cfgp = write_cfg(d, small_cfg)
    assert main(["--config", cfgp, "--out", str(d / "a")]) == 0
    return d, cfgp


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_full_artifact_set(small_run):
    d, _ = small_run
    names = set(_files(d / "a"))
    assert set(ARTIFACTS) <= names and "FAILED" not in names


def test_config_hash_in_every_artifact(small_run, small_cfg):
    d, _ = small_run
    h = cfgmod.config_hash(small_cfg)
    for name, data in _files(d / "a").items():
        if name.endswith(".json"):
            assert json.loads(data)["config_hash"] == h, name
        else:
            assert h in data.decode(), name


def test_rerun_is_byte_identical_across_threads(small_run):
    d, cfgp = small_run
    assert main(["--config", cfgp, "--out", str(d / "b"), "--threads", "3"]) == 0
    assert _files(d / "a") == _files(d / "b")


def test_seed_override_changes_hash(small_run, capsys):
    d, cfgp = small_run
    assert main(["collect", "--config", cfgp, "--out", str(d / "s"), "--seed", "7"]) == 0
    h = json.loads((d / "s" / "collect_manifest.json").read_text())["config_hash"]
    assert h != json.loads((d / "a" / "model.json").read_text())["config_hash"]


def test_report_regenerates_without_simulation(small_run):
    d, cfgp = small_run
    out = d / "a"
    before = {n: (out / n).read_bytes() for n in ("cost_table.json", "cost_table.txt", "tradeoff.csv",
                                                  "deviation_report.json")}
    for n in before:
        (out / n).unlink()
    # evaluation.json is the only input; removing the model proves nothing is re-simulated
    model = (out / "model.json").read_bytes()
    (out / "model.json").unlink()
    try:
        assert main(["report", "--config", cfgp, "--out", str(out)]) == 0
    finally:
        (out / "model.json").write_bytes(model)
    assert {n: (out / n).read_bytes() for n in before} == before


def test_stages_in_isolation(small_run, small_cfg, tmp_path):
    d, cfgp = small_run
    out = tmp_path / "iso"
    for st in ["collect", "fit", "bound"]:
        assert main([st, "--config", cfgp, "--out", str(out)]) == 0
    assert main(["--stage", "solve", "--config", cfgp, "--out", str(out)]) == 0
    for n in ("model.json", "bounds.json", "valuefn_robust.json"):
        assert (out / n).read_bytes() == (d / "a" / n).read_bytes()


def test_nominal_only(small_run, tmp_path):
    d, cfgp = small_run
    out = tmp_path / "nom"
    for st in ["collect", "fit", "bound"]:
        assert main([st, "--config", cfgp, "--out", str(out)]) == 0
    assert main(["solve", "--nominal-only", "--config", cfgp, "--out", str(out)]) == 0
    assert (out / "valuefn_nominal.json").exists()
    assert not (out / "valuefn_robust.json").exists() and not (out / "convergence.csv").exists()


def test_missing_prerequisite_named(small_run, tmp_path, capsys):
    _, cfgp = small_run
    code = main(["fit", "--config", cfgp, "--out", str(tmp_path / "empty")])
    assert code == 12
    err = capsys.readouterr().err
    assert "collect_manifest.json" in err
    assert (tmp_path / "empty" / "FAILED").exists()


def test_single_sample_fails_at_identification(small_cfg, tmp_path, capsys):
    cfg = copy.deepcopy(small_cfg)
    cfg["collection"]["T"] = 1
    out = tmp_path / "t1"
    code = main(["--config", write_cfg(tmp_path, cfg), "--out", str(out)])
    assert code == 12
    assert "rank deficient" in capsys.readouterr().err
    marker = (out / "FAILED").read_text()
    assert marker.startswith("stage: fit") and "RankDeficiencyError" in marker
    assert (out / "samples.csv").exists()          # partial artifacts are kept


def test_failed_marker_cleared_on_success(small_run, small_cfg, tmp_path):
    _, cfgp = small_run
    out = tmp_path / "fm"
    out.mkdir()
    (out / "FAILED").write_text("old")
    assert main(["collect", "--config", cfgp, "--out", str(out)]) == 0
    assert not (out / "FAILED").exists()


def test_bad_config_exit_code(tmp_path, small_cfg, capsys):
    cfg = copy.deepcopy(small_cfg)
    del cfg["solver"]
    assert main(["--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "x")]) == 2
    assert "solver" in capsys.readouterr().err
    assert main(["--config", str(tmp_path / "nope.json")]) == 2


def test_report_fields_recomputable(small_run):
    d, _ = small_run
    dev = json.loads((d / "a" / "deviation_report.json").read_text())
    eb = ErrorBound.from_dict(dev["bound_used"])
    for r in dev["rows"]:
        dv = value_deviation_bound(max(r["V0_at_x0"], 0.0), r["grad_integral"], eb)
        assert dv == r["dv_max"]
        assert controller_deviation_bound(dv, max(r["V0_at_x0"], 0.0), r["grad_integral_actual"], eb) \
            == r["controller_dev_bound"]
    ct = json.loads((d / "a" / "cost_table.json").read_text())
    for r in ct["rows"]:
        assert (r["cost_robust"] - r["cost_actual"]) / r["cost_actual"] == r["rel_extra_robust"]


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "kooprobust", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "--nominal-only" in out.stdout


def test_pure_python_backend_reproduces_results(small_run):
    d, cfgp = small_run
    env = dict(os.environ, KOOPROBUST_PURE_PYTHON="1")
    out = d / "py"
    subprocess.run([sys.executable, "-m", "kooprobust", "--config", cfgp, "--out", str(out)],
                   env=env, check=True, capture_output=True)
    a = json.loads((d / "a" / "cost_table.json").read_text())
    b = json.loads((out / "cost_table.json").read_text())
    for ra, rb in zip(a["rows"], b["rows"]):
        for k in ("cost_actual", "cost_robust", "cost_baseline"):
            assert rb[k] == pytest.approx(ra[k], rel=1e-9)
