import csv
import io
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hartreelab.cli import main
from hartreelab.config import ConfigError, parse_config, read_config
from hartreelab.grid import Field, RadialField, RadialGrid, make_grid
from hartreelab.storage import (FieldFormatError, FieldMeta, emit_tables, field_from_bytes,
                                field_io, field_to_bytes, format_value, read_radial_csv,
                                write_radial_csv)

SOLVE_TEXT = ("grid.n = 128\ngrid.L = 16\ngrid.d = 3\nsolve.N = 1.0\nsolve.lambda = 1e3\n"
              "potential.form = saturating\npotential.p = 2")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_parse_valid_solve_config():
    cfg = parse_config(SOLVE_TEXT)
    assert cfg.subcommand == "solve"
    assert cfg["grid.n"] == 128 and cfg["solve.lambda"] == 1e3
    assert cfg["solve.tau"] == 1.0  # default filled in


def test_parse_odd_n():
    with pytest.raises(ConfigError) as exc:
        parse_config("grid.n = 127")
    assert exc.value.line == 1 and "n must be even" in str(exc.value)


def test_parse_unknown_key():
    with pytest.raises(ConfigError, match="unknown key grd.n"):
        parse_config("grd.n = 128")


def test_parse_type_mismatch_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("# comment\n\ngrid.L = wide")
    assert exc.value.line == 3


def test_parse_missing_required():
    with pytest.raises(ConfigError, match="missing required key solve.lambda"):
        parse_config("solve.N = 1.0", subcommand="solve")


def test_parse_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("grid.n = 64\ngrid.n = 32")


def test_parse_comments_and_lists():
    cfg = parse_config("phase.N = 0.3, 0.6  # fractions\nphase.lambda = 1,2,3")
    assert cfg.subcommand == "phase"
    assert cfg["phase.N"] == (0.3, 0.6) and cfg["phase.lambda"] == (1.0, 2.0, 3.0)


def test_parse_subcommand_conflict():
    with pytest.raises(ConfigError):
        parse_config("run.subcommand = einf\neinf.N = 0.5", subcommand="sweep")


def test_config_hash_deterministic():
    a = parse_config(SOLVE_TEXT)
    b = parse_config("\n".join(reversed(SOLVE_TEXT.splitlines())))
    assert a.hash == b.hash
    assert parse_config(SOLVE_TEXT + "\nsolve.tau = 0.5").hash != a.hash


def test_read_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "nope.cfg")


# ---------------------------------------------------------------------------
# field snapshots
# ---------------------------------------------------------------------------

def test_hfld_roundtrip_bytes(tmp_path):
    grid = make_grid(3, 16.0, 32)
    u = Field(grid, np.random.default_rng(1).standard_normal(grid.shape))
    meta = FieldMeta(1e3, 1.4, 2.0)
    path = tmp_path / "u.hfld"
    field_io("write", path, u, meta)
    raw = path.read_bytes()
    v, m = field_io("read", path)
    assert m == meta and v.grid == grid
    assert v.values.tobytes() == u.values.tobytes()
    assert field_to_bytes(v, m) == raw


def test_hfld_header_layout():
    grid = make_grid(3, 2.0, 8)
    buf = field_to_bytes(Field(grid, np.arange(512.0)), FieldMeta(1.0, 2.0, 3.0))
    magic, ver, d, n, L, lam, N, p = struct.unpack_from("<4sHHIdddd", buf)
    assert (magic, ver, d, n, L, lam, N, p) == (b"HFLD", 1, 3, 8, 2.0, 1.0, 2.0, 3.0)
    assert len(buf) == 44 + 8 * 512
    assert np.frombuffer(buf, "<f8", offset=44)[5] == 5.0


def test_hfld_bad_magic():
    grid = make_grid(3, 2.0, 8)
    buf = bytearray(field_to_bytes(Field(grid, np.zeros(grid.shape))))
    buf[:4] = b"XXXX"
    with pytest.raises(FieldFormatError, match="bad magic"):
        field_from_bytes(bytes(buf))


def test_hfld_version_two():
    grid = make_grid(3, 2.0, 8)
    buf = bytearray(field_to_bytes(Field(grid, np.zeros(grid.shape))))
    struct.pack_into("<H", buf, 4, 2)
    with pytest.raises(FieldFormatError, match="unsupported version"):
        field_from_bytes(bytes(buf))


def test_hfld_truncated():
    grid = make_grid(3, 2.0, 8)
    buf = field_to_bytes(Field(grid, np.zeros(grid.shape)))
    with pytest.raises(FieldFormatError, match="truncated"):
        field_from_bytes(buf[:-8])
    with pytest.raises(FieldFormatError, match="truncated header"):
        field_from_bytes(buf[:10])
    with pytest.raises(FieldFormatError, match="trailing"):
        field_from_bytes(buf + b"\0")


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([8, 10, 12]), st.floats(0.1, 100.0),
       st.floats(allow_nan=True, allow_infinity=False, width=64), st.integers(0, 2 ** 32))
def test_hfld_roundtrip_property(n, L, lam, seed):
    grid = make_grid(3, L, n)
    u = Field(grid, np.random.default_rng(seed).standard_normal(grid.shape))
    buf = field_to_bytes(u, FieldMeta(lam, 1.0, 2.0))
    v, m = field_from_bytes(buf)
    assert field_to_bytes(v, m) == buf


def test_field_io_bad_mode(tmp_path):
    with pytest.raises(ValueError):
        field_io("append", tmp_path / "x")


def test_radial_csv_roundtrip(tmp_path):
    rg = RadialGrid(256, 8.0)
    u = RadialField(rg, np.exp(-rg.r))
    path = tmp_path / "q.csv"
    write_radial_csv(path, u)
    assert path.read_text().splitlines()[0] == "r,value"
    v = read_radial_csv(path)
    assert v.rgrid == rg
    assert np.array_equal(v.values, u.values)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(True) == "true" and format_value(None) == "" and format_value(3) == "3"


def test_emit_tables_columns_and_manifest(tmp_path):
    diagram = [{"residual": 1e-7, "energy": -1.0, "diagnosis": "converged", "lambda": 2.0, "N": 1.0}]
    scaling = [{"lambda": lam, "e": 1.0, "T": 1.0, "lambda_P": 1.0, "mu": 0.0, "e_scaled": 1.0,
                "diagnosis": "converged", "exponent": 0.5} for lam in (1e3, 1e2, 1e4)]
    files = emit_tables({"diagram": diagram, "scaling": scaling}, tmp_path, "abc")
    assert files == ["diagram.csv", "scaling.csv", "manifest.csv"]
    head = (tmp_path / "diagram.csv").read_text().splitlines()[0]
    assert head == "N,lambda,diagnosis,energy,residual"
    lams = [float(r["lambda"]) for r in csv.DictReader(io.StringIO((tmp_path / "scaling.csv").read_text()))]
    assert lams == sorted(lams)
    manifest = list(csv.DictReader(io.StringIO((tmp_path / "manifest.csv").read_text())))
    assert [m["file"] for m in manifest] == ["diagram.csv", "scaling.csv"]
    assert all(m["config_hash"] == "abc" and len(m["sha256"]) == 64 for m in manifest)


def test_emit_tables_unwritable(tmp_path):
    target = tmp_path / "file"
    target.write_text("x")
    with pytest.raises(OSError):
        emit_tables({"t": [{"a": 1}]}, target / "sub")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_config_errors(tmp_path, capsys):
    assert main(["solve", "--config", _write(tmp_path, "a.cfg", "grid.n = 127\n"), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["solve", "--config", _write(tmp_path, "b.cfg", "grd.n = 128\n"), "--out", str(tmp_path / "o")]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["nosuch", "--config", "x"]) == 2


def test_cli_threshold_above_critical_is_config_error(tmp_path):
    cfg = _write(tmp_path, "t.cfg", "threshold.N = 1.2\nradial.m = 2048\nradial.R = 30\n")
    assert main(["threshold", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cli_solve_max_iters_exit_code(tmp_path):
    text = "grid.n = 16\ngrid.L = 4\nsolve.N = 1.0\nsolve.lambda = 5\nsolve.max_iters = 2\n"
    cfg = _write(tmp_path, "s.cfg", text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_cli_einf_deterministic(tmp_path):
    text = ("einf.N = 0.3, 0.6\neinf.m = 1024\neinf.R = 10\nradial.m = 2048\nradial.R = 30\n"
            "potential.p = 2\n")
    cfg = _write(tmp_path, "e.cfg", text)
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for o in outs:
        assert main(["einf", "--config", cfg, "--out", str(o), "--seed", "7"]) == 0
    names = sorted(os.listdir(outs[0]))
    assert names == sorted(os.listdir(outs[1]))
    assert "einf.csv" in names and "manifest.csv" in names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
