"""Line-based run configuration: ``section.key = value`` with ``#`` comments."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

SUBCOMMANDS = ("groundstate", "solve", "threshold", "phase", "sweep", "einf")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based (0 when not tied to a line)."""

    def __init__(self, msg: str, line: int = 0):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line
        self.msg = msg


def _to_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _to_int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got {s!r}")
    return int(f)


def _to_floats(s: str) -> tuple[float, ...]:
    parts = [x for x in s.replace(";", ",").split(",") if x.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(x) for x in parts)


_PARSERS = {"int": _to_int, "float": float, "str": str.strip, "bool": _to_bool, "floats": _to_floats}

# key -> (type, default); a default of None marks an optional key without default
SCHEMA: dict[str, tuple[str, object]] = {
    "run.subcommand": ("str", None),
    "run.seed": ("int", 0),
    "grid.d": ("int", 3),
    "grid.L": ("float", 16.0),
    "grid.n": ("int", 128),
    "radial.m": ("int", 8192),
    "radial.R": ("float", 40.0),
    "potential.form": ("str", "saturating"),
    "potential.p": ("float", 2.0),
    "potential.table": ("str", None),
    "groundstate.tol": ("float", 1e-9),
    "groundstate.max_iter": ("int", 2000),
    "groundstate.export_grid": ("bool", True),
    "solve.N": ("float", None),
    "solve.N_units": ("str", "absolute"),
    "solve.lambda": ("float", None),
    "solve.tau": ("float", 1.0),
    "solve.max_iters": ("int", 3000),
    "solve.tol_residual": ("float", 1e-6),
    "solve.tol_energy": ("float", 1e-10),
    "solve.init": ("str", "gaussian"),
    "solve.init_width": ("float", 1.0),
    "solve.energy_floor": ("float", -1e6),
    "solve.multistart": ("bool", False),
    "threshold.N": ("floats", None),
    "threshold.N_units": ("str", "nstar"),
    "threshold.m": ("int", 2048),
    "threshold.L": ("float", 16.0),
    "threshold.bisect": ("bool", True),
    "phase.N": ("floats", None),
    "phase.N_units": ("str", "nstar"),
    "phase.lambda": ("floats", None),
    "phase.boundary_rel": ("float", 0.02),
    "phase.max_iters": ("int", 3000),
    "sweep.N": ("float", None),
    "sweep.N_units": ("str", "nstar"),
    "sweep.lambda": ("floats", None),
    "sweep.L_w": ("float", 6.0),
    "sweep.n": ("int", 64),
    "sweep.tol_residual": ("float", 1e-7),
    "sweep.max_iters": ("int", 5000),
    "sweep.snapshots": ("bool", True),
    "einf.N": ("floats", None),
    "einf.N_units": ("str", "nstar"),
    "einf.m": ("int", 4096),
    "einf.R": ("float", 12.0),
    "einf.tol_residual": ("float", 1e-8),
}

REQUIRED = {
    "groundstate": (),
    "solve": ("solve.N", "solve.lambda"),
    "threshold": ("threshold.N",),
    "phase": ("phase.N", "phase.lambda"),
    "sweep": ("sweep.N", "sweep.lambda"),
    "einf": ("einf.N",),
}


def _check_value(key: str, value, line: int):
    """Domain checks beyond the type."""

    def fail(msg):
        raise ConfigError(msg, line)

    if key == "grid.n":
        if value % 2:
            fail("n must be even")
        if value < 8:
            fail("n must be at least 8")
    elif key == "grid.d" and value not in (3, 4, 5):
        fail("d must be 3, 4 or 5")
    elif key in ("grid.L", "radial.R", "threshold.L", "einf.R", "sweep.L_w", "potential.p",
                 "solve.tau", "solve.init_width") and not value > 0:
        fail(f"{key.split('.')[1]} must be positive")
    elif key in ("radial.m", "einf.m", "threshold.m") and value < 256:
        fail("m must be at least 256")
    elif key == "sweep.n" and (value % 2 or value < 8):
        fail("n must be even and at least 8")
    elif key.endswith("N_units") and value not in ("absolute", "nstar"):
        fail("N_units must be 'absolute' or 'nstar'")
    elif key == "potential.form":
        from .potentials import parse_form

        try:
            parse_form(value)
        except ValueError as exc:
            fail(str(exc))
    elif key == "run.subcommand" and value not in SUBCOMMANDS:
        fail(f"unknown subcommand {value!r}")
    elif key == "run.seed" and not 0 <= value < 2 ** 64:
        fail("seed must fit in an unsigned 64-bit integer")
    elif key in ("solve.N", "sweep.N", "solve.lambda") and not value > 0:
        fail(f"{key.split('.')[1]} must be positive")
    elif key in ("threshold.N", "phase.N", "phase.lambda", "einf.N", "sweep.lambda"):
        if not all(x > 0 and math.isfinite(x) for x in value):
            fail(f"{key} entries must be positive")


@dataclass
class RunConfig:
    """Typed configuration with defaults filled in."""

    subcommand: str | None
    values: dict
    explicit: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int = 0

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def section(self, name: str) -> dict:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    def canonical(self) -> str:
        """Sorted ``key = value`` text of all values (the hashed form)."""
        lines = [f"run.subcommand = {self.subcommand}", f"run.seed = {self.seed}"]
        for k in sorted(self.values):
            if k in ("run.subcommand", "run.seed"):
                continue
            v = self.values[k]
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]


def parse_config(text: str, subcommand: str | None = None) -> RunConfig:
    """Parse configuration text.

    ``subcommand`` (or ``run.subcommand``) selects the required keys; when
    neither is given it is inferred from the single run section present.

    Raises
    ------
    ConfigError
        Unknown key, malformed line, type mismatch, out-of-range value or
        missing required key, with the offending line number.
    """
    explicit: dict[str, tuple[object, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'section.key = value', got {line!r}", lineno)
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key}", lineno)
        if key in explicit:
            raise ConfigError(f"duplicate key {key} (first set on line {explicit[key][1]})", lineno)
        typ, _ = SCHEMA[key]
        try:
            value = _PARSERS[typ](val)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from None
        _check_value(key, value, lineno)
        explicit[key] = (value, lineno)

    sub = subcommand
    if "run.subcommand" in explicit:
        declared, ln = explicit["run.subcommand"]
        if sub is not None and declared != sub:
            raise ConfigError(f"config declares subcommand {declared!r}, invoked as {sub!r}", ln)
        sub = declared
    if sub is None:
        present = sorted({k.split(".")[0] for k in explicit} & set(SUBCOMMANDS))
        if len(present) == 1:
            sub = present[0]
    if sub is not None and sub not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {sub!r}")

    values = {k: d for k, (_, d) in SCHEMA.items()}
    values.update({k: v for k, (v, _) in explicit.items()})
    values["run.subcommand"] = sub
    if sub is not None:
        last = max((ln for _, ln in explicit.values()), default=0)
        for k in REQUIRED[sub]:
            if values.get(k) is None:
                raise ConfigError(f"missing required key {k} for {sub}", last + 1 if last else 0)
    return RunConfig(sub, values, {k: v for k, (v, _) in explicit.items()}, seed=values["run.seed"])


def read_config(path, subcommand: str | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not valid UTF-8") from None
    return parse_config(text, subcommand)


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "REQUIRED", "SUBCOMMANDS", "parse_config", "read_config"]
