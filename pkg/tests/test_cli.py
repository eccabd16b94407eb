import json
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from nestquant import store
from nestquant.cli import main

BLOBS = str(Path(__file__).resolve().parents[1] / "configs" / "blobs4.json")


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


@pytest.fixture
def pipeline(tmp_path, capsys):
    ref = tmp_path / "ref.nqf"
    run_json(capsys, "train-ref", "--config", BLOBS, "--seed", 0, "--out", ref)
    nested = tmp_path / "m.nqt"
    run_json(capsys, "nest", "--in", ref, "--out", nested, "--n", 8, "--h", 4, "--jobs", 2)
    return tmp_path, ref, nested


def test_census_csv(capsys):
    code, out, _ = run(capsys, "census", "--n", 8, "--h", "4..7", "--strategy", "rtn", "--format", "csv")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "strategy,n,h,nonzero,min,max"
    assert "rtn,8,4,16,0,8" in lines and len(lines) == 5


def test_census_all_json(capsys):
    rows = run_json(capsys, "census", "--n", 8, "--h", "3..7")
    assert len(rows) == 20
    up3 = next(r for r in rows if r["strategy"] == "up" and r["h"] == 3)
    assert (up3["nonzero"], up3["min"], up3["max"]) == (121, -15, 16)


def test_advise(capsys):
    assert run(capsys, "advise", "--size-mb", 44.7, "--n", 8, "--format", "text")[1].strip() == "h=4"
    assert run_json(capsys, "advise", "--size-mb", 330.3)["h"] == 3


def test_pipeline(pipeline, capsys):
    tmp, ref, nested = pipeline
    info = run_json(capsys, "inspect", "--model", nested)
    assert info["manifest"]["n"] == 8 and info["manifest"]["h"] == 4
    assert info["size"]["total_bytes"] == nested.stat().st_size
    sw = run_json(capsys, "switch", "--model", nested, "--mode", "full", "--report")
    assert sw["mode"] == "full" and sw["transitions"][-1]["direction"] == "upgrade"
    low = sum(l.w_low.nbytes for l in store.load(nested).layers)
    assert sw["transitions"][-1]["bytes_paged_in"] == low
    fp = run_json(capsys, "eval", "--model", ref, "--mode", "fp32", "--config", BLOBS)["accuracy"]
    full = run_json(capsys, "eval", "--model", nested, "--mode", "full", "--config", BLOBS)["accuracy"]
    part = run_json(capsys, "eval", "--model", nested, "--mode", "part", "--config", BLOBS)["accuracy"]
    assert fp >= 0.9 and full >= 0.9 and part >= 0.5


def test_auto_h_and_report(pipeline, capsys):
    tmp, ref, _ = pipeline
    auto = run_json(capsys, "nest", "--in", ref, "--out", tmp / "a.nqt", "--h", "auto")
    assert auto["h"] == 5  # a few kB of fp32 weights
    run_json(capsys, "quantize", "--in", ref, "--out", tmp / "i8.nqt", "--n", 8)
    run_json(capsys, "quantize", "--in", ref, "--out", tmp / "i5.nqt", "--n", 5)
    rep = run_json(capsys, "report", "--model", tmp / "a.nqt", "--diverse", tmp / "i8.nqt", tmp / "i5.nqt")
    assert rep["diverse_bytes"] == (tmp / "i8.nqt").stat().st_size + (tmp / "i5.nqt").stat().st_size
    assert rep["ideal_reduction_pct"] == 30.8
    code, text, _ = run(capsys, "report", "--model", tmp / "a.nqt", "--format", "text")
    assert code == 0 and "INT(8|5)" in text


def test_errors_exit_nonzero(tmp_path, capsys):
    code, _, err = run(capsys, "inspect", "--model", tmp_path / "missing.nqt")
    assert code == 1 and err.startswith("nestquant inspect: error:")
    (tmp_path / "bad.nqt").write_bytes(b"NOPE" + bytes(20))
    code, _, err = run(capsys, "inspect", "--model", tmp_path / "bad.nqt")
    assert code == 1 and "magic" in err
    code, _, err = run(capsys, "eval", "--model", tmp_path / "bad.nqt", "--data", "rows:3")
    assert code == 1


def test_invalid_combination(pipeline, capsys):
    tmp, ref, _ = pipeline
    code, _, err = run(capsys, "nest", "--in", ref, "--out", tmp / "x.nqt", "--n", 8, "--h", 8)
    assert code == 1 and "INT(8|8)" in err


def test_serve_and_push_subprocess(pipeline, tmp_path):
    _, _, nested = pipeline
    recv = tmp_path / "recv"
    env = dict(os.environ, NESTQUANT_LOG="info")
    port = 43000 + os.getpid() % 2000
    proc = subprocess.Popen([sys.executable, "-m", "nestquant", "serve", "--listen", f"127.0.0.1:{port}",
                             "--dir", str(recv)], env=env, stderr=subprocess.PIPE)
    try:
        for _ in range(100):
            out = subprocess.run([sys.executable, "-m", "nestquant", "push", "--to", f"127.0.0.1:{port}",
                                  "--model", str(nested), "--what", "part"], capture_output=True, text=True)
            if out.returncode == 0:
                break
            time.sleep(0.1)
        assert out.returncode == 0, out.stderr
        out = subprocess.run([sys.executable, "-m", "nestquant", "push", "--to", f"127.0.0.1:{port}",
                              "--model", str(nested), "--what", "low-delta"], capture_output=True, text=True)
        assert out.returncode == 0, out.stderr
        assert (recv / "ref.nqt").read_bytes() == nested.read_bytes()
    finally:
        proc.terminate()
        _, err = proc.communicate(timeout=10)
    assert b"INFO" in err
