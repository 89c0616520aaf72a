import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from coherentq.cli import COMMANDS, main


def _run(tmp_path, spec, *extra, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(spec))
    return main(["--spec", str(path), *extra])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


DK = {"command": "dk", "seed": 7, "params": {"symbol": "0", "nu": [40], "n_samples": 4000}}


def test_dk_rerun_byte_identical(tmp_path):
    for out in ("a", "b"):
        assert _run(tmp_path, DK, "--out", str(tmp_path / out), "--svg") == 0
    for f in ("dk.csv", "dk.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_dk_columns_and_seed_override(tmp_path):
    _run(tmp_path, DK, "--out", str(tmp_path / "a"))
    _run(tmp_path, DK, "--out", str(tmp_path / "b"), "--seed", "8")
    a, b = _rows(tmp_path / "a" / "dk.csv"), _rows(tmp_path / "b" / "dk.csv")
    assert list(a[0])[:8] == ["nu", "T", "re", "im", "stderr", "nSamples", "oracle_re", "oracle_im"]
    assert {"hbar", "omega", "dim"} <= set(a[0])
    assert a[0]["re"] != b[0]["re"]
    # oracle is the analytic overlap e^{-1/4} for these labels
    assert complex(float(a[0]["oracle_re"]), float(a[0]["oracle_im"])) == pytest.approx(np.exp(-0.25), abs=1e-10)


def test_csv_is_rfc4180(tmp_path):
    _run(tmp_path, DK, "--out", str(tmp_path))
    raw = (tmp_path / "dk.csv").read_bytes()
    assert raw.count(b"\r\n") == 2 and b"\n" not in raw.replace(b"\r\n", b"")


def test_bohr_energies(tmp_path):
    spec = {"command": "bohr", "params": {"symbol": "0.5*p^2+0.5*q^2", "n_max": 5}}
    assert _run(tmp_path, spec, "--out", str(tmp_path)) == 0
    E = [float(r["energy"]) for r in _rows(tmp_path / "bohr.csv")]
    assert np.allclose(E, np.arange(6) + 0.5, atol=1e-6)


def test_spectrum_levels(tmp_path):
    spec = {"command": "spectrum", "params": {"symbol": "0.5*p^2+0.5*q^2", "count": 10}}
    assert _run(tmp_path, spec, "--out", str(tmp_path)) == 0
    rows = _rows(tmp_path / "spectrum.csv")
    assert np.allclose([float(r["energy"]) for r in rows], np.arange(1, 11), atol=1e-6)
    assert (rows[0]["hbar"], rows[0]["omega"], rows[0]["dim"]) == ("1.0", "1.0", "64")


def test_manifest(tmp_path):
    _run(tmp_path, DK, "--out", str(tmp_path), "--svg")
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["spec"]["seed"] == 7 and m["artifacts"] == ["dk.csv", "dk.svg"]
    assert m["versions"]["numpy"] and m["wall_time_s"] >= 0


@pytest.mark.parametrize("spec,needle", [
    ({"command": "dk", "params": {"colour": 1}}, "unknown params"),
    ({"command": "dk", "extra": 1}, "unknown top-level"),
    ({"command": "teleport"}, "command must be"),
    ({"command": "dk", "seed": -1}, "seed"),
    ({"command": "dk", "seed": 2**64}, "seed"),
    ({"command": "bohr", "params": {"symbol": "0.5*p^^2"}}, "column"),
    ({"command": "spin", "params": {"s": 0.3}}, "half-integer"),
])
def test_validation_errors(tmp_path, capsys, spec, needle):
    assert _run(tmp_path, spec, "--out", str(tmp_path)) == 2
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1 and needle in err
    assert not (tmp_path / "manifest.json").exists()


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_every_command_runs(tmp_path, command):
    params = {"dk": {"nu": [10], "n_samples": 200}, "lattice": {"N": [4, 8]}}.get(command, {})
    assert _run(tmp_path, {"command": command, "params": params}, "--out", str(tmp_path), "--svg") == 0
    assert _rows(tmp_path / f"{command}.csv")


def test_console_script(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"command": "resolution"}))
    res = subprocess.run([sys.executable, "-m", "coherentq.cli", "--spec", str(spec), "--out", str(tmp_path)],
                         capture_output=True, text=True, check=True)
    assert res.stdout.strip().endswith("resolution.csv")
    dev = [float(r["deviation"]) for r in _rows(tmp_path / "resolution.csv")]
    assert max(dev) < 1e-8
