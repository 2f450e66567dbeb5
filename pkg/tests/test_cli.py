import csv
import io
import subprocess
import sys

import pytest

from kimura_spde import chaos, cli
from kimura_spde.cli import ConfigError, parse_config

SMALL = """\
# small white run
grid.z_max = 2
grid.nz = 8
grid.t_max = 0.5
grid.nt = 8
chaos.n_levels = 3
chaos.space_points = 64
chaos.time_refine = 2
mc.n_paths = 200
holder.samples = 200
"""


def _rows(text):
    return list(csv.DictReader(io.StringIO("".join(ln + "\n" for ln in text.splitlines() if not ln.startswith("#")))))


def _run(tmp_path, command, text=SMALL, *extra):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(text)
    out = tmp_path / f"out-{command}"
    status = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return status, out


# -- parsing --------------------------------------------------------------------------

def test_minimal_config_gets_defaults():
    cfg = parse_config("noise.beta = 0\n")
    assert cfg.command == "all"
    assert cfg["quad.rel_tol"] == 1e-6
    assert cfg["bounds.slack"] == 1e-3
    assert cfg["mc.gate"] == 3.0
    assert cfg.grid.shape == (32, 32)
    assert cfg.noise.is_white
    assert cfg.sim.n_paths == 1000
    assert cfg.given == frozenset({"noise.beta"})


def test_comments_blank_lines_and_aliases():
    cfg = parse_config("\n# header\nnoise.spatial.kind = white   # alias\n\n")
    assert cfg["noise.spatial.kind"] == "dirac-white"


def test_colored_section():
    cfg = parse_config("noise.spatial.kind = riesz\nnoise.spatial.h = 0.5\n"
                       "noise.temporal.kind = exponential\nnoise.temporal.scale = 0.5\n")
    assert not cfg.noise.spatial.is_white and not cfg.noise.temporal.is_white


def test_negative_beta_names_key():
    with pytest.raises(ConfigError) as err:
        parse_config("noise.beta = -1\n")
    assert [v.key for v in err.value.violations] == ["noise.beta"]


def test_duplicate_cites_both_lines():
    with pytest.raises(ConfigError) as err:
        parse_config("grid.nz = 8\n\ngrid.nz = 9\n")
    (v,) = err.value.violations
    assert v.key == "grid.nz"
    assert "lines 1 and 3" in v.message


def test_all_violations_reported():
    text = ("noise.beta = -1\ngrid.nz = 8.5\nfoo.bar = 1\nnoise.spatial.kind = riesz\n"
            "mc.n_paths = 10\nnonsense line\n")
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    keys = {v.key for v in err.value.violations}
    assert {"noise.beta", "grid.nz", "foo.bar", "mc.n_paths", "line 6"} <= keys
    # riesz without an exponent is caught when the kernel is built
    assert any(k.startswith("noise.spatial") for k in keys)
    assert "unknown key (line 3)" in str(err.value)


def test_overrides_win():
    cfg = parse_config("seed = 3\n", {"seed": 11, "threads": None})
    assert cfg["seed"] == 11 and cfg["threads"] == 1


def test_echo_round_trip():
    cfg = parse_config(SMALL)
    again = parse_config(cfg.to_text())
    assert again.values == cfg.values


# -- running ----------------------------------------------------------------------------

def test_identities_exit_zero(tmp_path):
    status, out = _run(tmp_path, "identities")
    assert status == 0
    rows = _rows((out / "identities.csv").read_text())
    assert rows
    assert {r["name"] for r in rows} >= {"mass", "energy", "semigroup"}
    for r in rows:
        assert abs(float(r["residual"])) <= float(r["tolerance"])


def test_bounds_white_zero_margins(tmp_path):
    status, out = _run(tmp_path, "bounds")
    assert status == 0
    ledger = chaos.BoundLedger.from_text((out / "ledger.csv").read_text())
    geometric = ledger.named("geometric")
    assert geometric and all(r.margin >= 0.0 for r in geometric)
    assert all(r.margin >= 0.0 for r in ledger.named("total_two"))


def test_outputs_and_manifest(tmp_path):
    status, out = _run(tmp_path, "chaos", SMALL, "--seed", "7")
    assert status == 0
    for name in ("ledger.csv", "moments.csv", "reconciliation.csv", "manifest.txt", "chaos.csv"):
        assert (out / name).exists()
    manifest = (out / "manifest.txt").read_text()
    assert "seed=7\n" in manifest
    assert "library.version=" in manifest and "wall.chaos=" in manifest
    assert manifest.endswith("exit_status=0\n")
    assert b"\r" not in (out / "ledger.csv").read_bytes()


def test_byte_identical_reruns(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, first = _run(tmp_path / "a", "mc")
    _, second = _run(tmp_path / "b", "mc", SMALL, "--threads", "2")
    for name in ("ledger.csv", "moments.csv", "reconciliation.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_manifest_reproduces_outputs(tmp_path):
    (tmp_path / "a").mkdir()
    _, first = _run(tmp_path / "a", "chaos")
    echo = "".join(ln + "\n" for ln in (first / "manifest.txt").read_text().splitlines()
                   if ln.split("=", 1)[0] in cli._SCHEMA)
    (tmp_path / "b").mkdir()
    _, second = _run(tmp_path / "b", "chaos", echo)
    for name in ("ledger.csv", "chaos.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_exit_status_from_ledger_alone(tmp_path):
    status, out = _run(tmp_path, "bounds")
    assert cli.ledger_exit_status((out / "ledger.csv").read_text()) == status
    ledger = chaos.BoundLedger()
    ledger.constants["bound_slack"] = (0.1, "test")
    ledger.add(1, 0.5, 0.5, 1.05, "toy", 1.0)
    assert cli.ledger_exit_status(ledger.to_text()) == cli.EXIT_OK
    ledger.add(1, 0.5, 0.5, 1.2, "toy", 1.0)
    assert cli.ledger_exit_status(ledger.to_text()) == cli.EXIT_BOUND


def test_module_error_exit_two(tmp_path, capsys):
    status, _ = _run(tmp_path, "ratio", SMALL + "noise.beta = 0\n")
    assert status == cli.EXIT_ERROR
    err = capsys.readouterr().err
    assert "chaos" in err and "beta" in err


def test_bad_config_exit_two(tmp_path, capsys):
    status, _ = _run(tmp_path, "chaos", "noise.beta = -1\n")
    assert status == cli.EXIT_ERROR
    assert "noise.beta" in capsys.readouterr().err


def test_missing_config_exit_two(tmp_path):
    assert cli.main(["chaos", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_ERROR


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("grid.nz = 0\n")
    proc = subprocess.run([sys.executable, "-m", "kimura_spde", "chaos", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "grid.nz" in proc.stderr
