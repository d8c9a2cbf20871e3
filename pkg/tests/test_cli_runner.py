import json
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hullcap import shapes
from hullcap.acceptance import CRITERIA, Check
from hullcap.cli_runner import (
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_USAGE,
    EXIT_VERIFY,
    ConfigError,
    default_config,
    main,
    parse_config_text,
    with_overrides,
)
from hullcap.field_core import Grid, dump_field

HULL_INI = """[run]
seed = 3
deterministic = true

[grid]
cells = 48

[obstacle]
preset = star
amplitude = 0.3
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def manifest_of(out_root, command):
    found = sorted(Path(out_root).glob(f"{command}-*/manifest.json"))
    assert len(found) == 1
    return found[0]


def test_defaults_fill_every_key():
    cfg = default_config("pcap")
    assert cfg.get("solver", "p") == 1.5 and cfg.get("grid", "cells") == 256
    assert cfg.get("obstacle", "k") == 5  # preset parameter, typed from its default
    assert not cfg.deterministic


def test_unknown_key_reports_line_and_suggestion():
    with pytest.raises(ConfigError, match=r"<config>:6: unknown key 'cels'.*'cells'"):
        parse_config_text("[run]\nseed = 1\n\n# comment\n[grid]\ncels = 10\n", "hull")


def test_unknown_section_and_wrong_command():
    with pytest.raises(ConfigError, match=r":1: section \[profile\]"):
        parse_config_text("[profile]\nname = cone\n", "hull")
    with pytest.raises(ConfigError, match="config is for 'radial'"):
        parse_config_text("[run]\ncommand = radial\n", "hull")
    with pytest.raises(ConfigError, match="unknown command"):
        parse_config_text("")


@pytest.mark.parametrize("text, pattern", [
    ("[grid]\ncells = many\n", "cannot read 'many' as int"),
    ("[grid]\nn = 4\n", "n must be 2 or 3"),
    ("[grid]\nlower = 1\nupper = 0\n", "upper > lower"),
    ("[obstacle]\npreset = hexagon\n", "unknown obstacle preset"),
    ("[obstacle]\npreset = disk\nk = 5\n", "unknown key 'k'"),
    ("[obstacle]\nmask_file = /nonexistent.field\n", "does not exist"),
    ("[run]\ndeterministic = maybe\n", "as bool"),
])
def test_value_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        parse_config_text(text, "hull")


def test_blob_coefficients_and_command_key():
    cfg = parse_config_text("[run]\ncommand = hull\n[obstacle]\npreset = blob\n"
                            "coeffs = 3:0.15, 5:0.05\n")
    assert cfg.command == "hull"
    assert cfg.get("obstacle", "coeffs") == ((3, 0.15), (5, 0.05))


@given(st.integers(0, 10 ** 6), st.integers(16, 512), st.floats(1.01, 3.0),
       st.lists(st.floats(0.1, 0.9), min_size=1, max_size=3, unique=True))
def test_emit_round_trip(seed, cells, p, radii):
    cfg = default_config("pcap")
    cfg = with_overrides(cfg, "run", seed=seed)
    cfg = with_overrides(cfg, "grid", cells=cells)
    cfg = with_overrides(cfg, "solver", p=p, radii=tuple(sorted(radii)))
    back = parse_config_text(cfg.emit())
    assert back == cfg and back.digest() == cfg.digest()


def test_digest_ignores_output_location_and_threads():
    cfg = default_config("hull")
    moved = with_overrides(cfg, "run", out="elsewhere", threads=4)
    assert moved.digest() == cfg.digest()
    assert with_overrides(cfg, "run", seed=9).digest() != cfg.digest()


def test_hull_run_cache_and_force(tmp_path, capsys):
    ini = write(tmp_path, HULL_INI)
    out = str(tmp_path / "out")
    assert main(["hull", "--config", ini, "--out", out]) == EXIT_OK
    path = manifest_of(out, "hull")
    m = json.loads(path.read_text())
    assert m["status"] == "pass" and m["authoritative"] and "wall_time_s" not in m
    for name, digest in m["outputs"].items():
        assert len(digest) == 64 and (path.parent / name).is_file()
    assert (path.parent / "timing.json").is_file()
    before = path.read_bytes()
    capsys.readouterr()
    assert main(["hull", "--config", ini, "--out", out]) == EXIT_OK
    assert "cache hit" in capsys.readouterr().out
    assert main(["hull", "--config", ini, "--out", out, "--force"]) == EXIT_OK
    assert path.read_bytes() == before


def test_deterministic_runs_are_byte_identical(tmp_path):
    ini = write(tmp_path, HULL_INI)
    main(["hull", "--config", ini, "--out", str(tmp_path / "a")])
    main(["hull", "--config", ini, "--out", str(tmp_path / "b")])
    a, b = manifest_of(tmp_path / "a", "hull"), manifest_of(tmp_path / "b", "hull")
    assert a.read_bytes() == b.read_bytes()


def test_non_deterministic_run_records_wall_time(tmp_path):
    ini = write(tmp_path, HULL_INI.replace("deterministic = true", "deterministic = false"))
    assert main(["hull", "--config", ini, "--out", str(tmp_path)]) == EXIT_OK
    assert "wall_time_s" in json.loads(manifest_of(tmp_path, "hull").read_text())


def test_solver_failure_writes_partial_manifest(tmp_path):
    ini = write(tmp_path, HULL_INI + "\n[solver]\nmax_iters = 2\n")
    assert main(["hull", "--config", ini, "--out", str(tmp_path)]) == EXIT_SOLVER
    m = json.loads(manifest_of(tmp_path, "hull").read_text())
    assert m["status"] == "error" and m["authoritative"] is False
    assert "SolverFailure" in m["error"]


def test_usage_errors_exit_one(tmp_path, capsys):
    bad = write(tmp_path, "[grid]\ncels = 10\n")
    assert main(["hull", "--config", bad, "--out", str(tmp_path)]) == EXIT_USAGE
    assert "c.ini:2" in capsys.readouterr().err
    assert main(["hull", "--config", str(tmp_path / "missing.ini")]) == EXIT_USAGE
    assert main(["verify", "--only", "99", "--out", str(tmp_path)]) == EXIT_USAGE
    too_big = write(tmp_path, "[grid]\ncells = 32\n[obstacle]\npreset = disk\n"
                              "[solver]\nradii = 1.5\n", "p.ini")
    assert main(["pcap", "--config", too_big, "--out", str(tmp_path)]) == EXIT_USAGE


def test_mask_file_input_is_digested(tmp_path):
    g = Grid.box(-1.0, 1.0, 40)
    digest = dump_field(shapes.cross().mask(g), tmp_path / "cross.field")
    ini = write(tmp_path, f"[obstacle]\nmask_file = {tmp_path / 'cross.field'}\n")
    assert main(["hull", "--config", ini, "--out", str(tmp_path)]) == EXIT_OK
    m = json.loads(manifest_of(tmp_path, "hull").read_text())
    assert m["inputs"]["mask_file"] == digest


def test_radial_and_eigen_commands(tmp_path):
    ini = write(tmp_path, "[profile]\nname = cone\na = 0.5\nn = 3\n[solver]\np_values = 1.5, 2\n")
    assert main(["radial", "--config", ini, "--out", str(tmp_path)]) == EXIT_OK
    m = json.loads(manifest_of(tmp_path, "radial").read_text())
    assert m["verdict"]["avr"] == pytest.approx(0.25, abs=1e-6)
    assert m["verdict"]["imcf"]["sup"] == "inf"
    ini = write(tmp_path, "[grid]\ncells = 48\n[obstacle]\npreset = square\n", "e.ini")
    assert main(["eigen", "--config", ini, "--out", str(tmp_path)]) == EXIT_OK
    assert json.loads(manifest_of(tmp_path, "eigen").read_text())["verdict"]["faber_krahn_holds"]


def test_verify_reference_comparison(tmp_path, capsys):
    out = str(tmp_path / "first")
    assert main(["verify", "--only", "7,9", "--deterministic", "--out", out]) == EXIT_OK
    ref = manifest_of(out, "verify")
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("[PASS] criterion  7") and "[SKIP] criterion 14" in lines[2]
    second = ["verify", "--only", "7,9", "--deterministic", "--out", str(tmp_path / "second"),
              "--reference", str(ref)]
    assert main(second) == EXIT_OK
    assert "[PASS] criterion 14" in capsys.readouterr().out
    tampered = tmp_path / "tampered.json"
    tampered.write_bytes(ref.read_bytes().replace(b'"pass"', b'"fail"'))
    second[-1] = str(tampered)
    assert main(second + ["--force"]) == EXIT_VERIFY
    assert "[FAIL] criterion 14" in capsys.readouterr().out
    records = json.loads((ref.parent / "criteria.json").read_text())
    assert all("runtime_s" not in r for r in records)


def test_failing_criterion_exits_three(tmp_path, monkeypatch):
    title = CRITERIA[7][0]
    monkeypatch.setitem(CRITERIA, 7, (title, lambda ctx: [Check("forced", 1, 0, False)], None))
    assert main(["verify", "--only", "7", "--out", str(tmp_path)]) == EXIT_VERIFY
    m = json.loads(manifest_of(tmp_path, "verify").read_text())
    assert m["verdict"]["failed"] == [7]


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "hullcap.cli_runner", "--help"],
                         capture_output=True, text=True, check=True)
    for command in ("hull", "pcap", "limit", "radial", "iso-profile", "symmetrize", "eigen",
                    "verify"):
        assert command in res.stdout
