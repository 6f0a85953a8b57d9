import json
import shutil

import numpy as np
import pytest

from conftest import FIXTURES
from xbarsim.cli import main
from xbarsim.formats import read_array, read_results


@pytest.fixture
def micro(tmp_path):
    d = tmp_path / "micro"
    shutil.copytree(FIXTURES / "micro_cnn", d)
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_solve_matches_oracle(tmp_path):
    assert run("solve", "--config", FIXTURES / "solve" / "solve.cfg", "--out", tmp_path) == 0
    _, rows = read_results(tmp_path / "currents.csv")
    got = np.array([float(r["current"]) for r in rows])
    want, _ = read_array(FIXTURES / "solve" / "oracle_currents.csv")
    np.testing.assert_allclose(got, want.ravel(), rtol=1e-8)
    assert (tmp_path / "nodes.csv").exists()


def test_solve_ideal_config(tmp_path):
    assert run("solve", "--config", FIXTURES / "solve" / "solve_ideal.cfg", "--out", tmp_path) == 0
    _, rows = read_results(tmp_path / "currents.csv")
    g, _ = read_array(FIXTURES / "solve" / "g.csv")
    v, _ = read_array(FIXTURES / "solve" / "v.csv")
    np.testing.assert_allclose([float(r["current"]) for r in rows], (v @ g).ravel(), rtol=1e-9)


def test_bad_config_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense = 1\n")
    assert run("solve", "--config", cfg) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit"] == 2 and rec["error"] == "InputError"


def test_solve_without_inputs_exit_2(tmp_path):
    assert run("solve", "--out", tmp_path) == 2


def test_run_before_prepare_exit_2(micro, tmp_path):
    assert run("run", "--config", micro / "micro_cnn.cfg", "--out", tmp_path) == 2


def test_prepare_cache_and_run(micro, tmp_path, capsys):
    cfg = micro / "micro_cnn.cfg"
    assert run("prepare", "--config", cfg, "--out", tmp_path) == 0
    first = capsys.readouterr().out
    assert "prepared" in first and "cached" not in first
    assert run("prepare", "--config", cfg, "--out", tmp_path) == 0
    assert capsys.readouterr().out.count("cached") == 3
    assert run("prepare", "--config", cfg, "--out", tmp_path, "--force") == 0
    assert "cached" not in capsys.readouterr().out
    _, plan = read_results(tmp_path / "prepared" / "plan.csv")
    assert [(r["rows"], r["cols"]) for r in plan] == [("27", "16"), ("144", "16"), ("64", "10")]

    assert run("run", "--config", cfg, "--out", tmp_path, "--bits", "none") == 0
    _, rows = read_results(tmp_path / "layers.csv")
    assert {r["reference"] for r in rows} == {"same_input", "software"}
    assert rows[-1]["layer"] == "final"
    assert (tmp_path / "outputs.csv").exists()


def test_changed_weights_invalidate_cache(micro, tmp_path, capsys):
    cfg = micro / "micro_cnn.cfg"
    run("prepare", "--config", cfg, "--out", tmp_path)
    capsys.readouterr()
    k, meta = read_array(micro / "conv2.csv")
    from xbarsim.formats import write_array
    write_array(micro / "conv2.csv", k * 1.5, **meta)
    assert run("prepare", "--config", cfg, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "conv1: cached" in out and "conv2: prepared" in out and "fc: prepared" in out


def test_corrupt_weights_exit_3(micro, tmp_path, capsys):
    (micro / "conv2.csv").write_text("# xbarsim-array v1\n1,2,oops\n")
    assert run("prepare", "--config", micro / "micro_cnn.cfg", "--out", tmp_path) == 3
    out = capsys.readouterr().out
    assert "conv1: prepared" in out
    assert "conv2: weights unusable" in out and "fc: skipped" in out


def test_run_sigma_zero_equals_default(micro, tmp_path):
    cfg = micro / "micro_cnn.cfg"
    cfg.write_text(cfg.read_text() + f"prepared = {tmp_path / 'prep'}\n")
    run("prepare", "--config", cfg, "--out", tmp_path)
    run("run", "--config", cfg, "--out", tmp_path / "a")
    run("run", "--config", cfg, "--out", tmp_path / "b", "--sigma", "0")
    assert (tmp_path / "a" / "outputs.csv").read_bytes() == (tmp_path / "b" / "outputs.csv").read_bytes()
    run("run", "--config", cfg, "--out", tmp_path / "c", "--sigma", "1")
    assert (tmp_path / "a" / "outputs.csv").read_bytes() != (tmp_path / "c" / "outputs.csv").read_bytes()


def test_sweep_small_and_deterministic(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("sizes = 27x16\nsparsities = 0.5\nseeds = 2\nbatch = 40\nclamp = true\n")
    assert run("sweep", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("sweep", "--config", cfg, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()
    meta, rows = read_results(tmp_path / "a" / "sweep.csv")
    assert [r["method"] for r in rows] == ["linear", "convert", "convert+calibrate"]
    assert all(r["status"] in ("ok", "clamped") for r in rows)


def test_strict_sweep_reports_infeasible(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("sizes = 27x16\nsparsities = 0.5\nseeds = 1\nbatch = 20\nclamp = false\n")
    assert run("sweep", "--config", cfg, "--out", tmp_path) == 0
    _, rows = read_results(tmp_path / "sweep.csv")
    assert rows[0]["status"] == "ok"
    assert {r["status"] for r in rows[1:]} == {"infeasible"}
