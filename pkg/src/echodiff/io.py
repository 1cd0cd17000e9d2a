"""
Delimited-text data files, unit conversion and run manifests.

Data files have a header row of column names followed by a unit row, then
numeric rows. Values are written with repr() so that files round-trip
bit-exactly through `read_table`.
"""

from __future__ import annotations

import csv
import json
import platform
import re
from pathlib import Path

import numpy as np

from . import __version__
from .model import K_B

# factor to SI for each dimension
UNITS = {
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "μs": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "THz": 1e12},
    "field": {"T": 1.0, "mT": 1e-3, "G": 1e-4},
    "temperature": {"K": 1.0, "mK": 1e-3},
    "energy": {"J": 1.0, "K": K_B, "mK": 1e-3 * K_B, "eV": 1.602176634e-19,
               "meV": 1.602176634e-22, "ueV": 1.602176634e-25, "µeV": 1.602176634e-25},
    "frequency_per_decade": {"Hz/decade": 1.0, "kHz/decade": 1e3, "MHz/decade": 1e6},
    "frequency_per_field": {"Hz/T": 1.0, "MHz/T": 1e6, "GHz/T": 1e9},
    "intensity": {"arb": 1.0, "a.u.": 1.0, "": 1.0},
    "dimensionless": {"": 1.0, "1": 1.0},
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


class DataError(ValueError):
    """Malformed or incomplete input data."""


class ConfigError(ValueError):
    """Invalid run configuration."""


def to_si(value, dimension: str, where: str = "value") -> float:
    """
    Convert a number (already SI) or a "<number> <unit>" string to SI.

    >>> to_si("50 ns", "time")
    5e-08
    """
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a quantity, got {value!r}")
    m = _QTY.match(value)
    if not m:
        raise ConfigError(f"{where}: cannot parse quantity {value!r}")
    number, unit = m.groups()
    table = UNITS[dimension]
    if unit not in table:
        raise ConfigError(f"{where}: unit {unit!r} is not a {dimension} unit "
                          f"(known: {', '.join(k for k in table if k)})")
    return float(number) * table[unit]


def write_table(path, columns: dict, units: dict) -> None:
    """Write equal-length numeric columns with a header and a unit row."""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=float) for n in names]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("columns differ in length")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerow([units.get(c, "") for c in names])
        for i in range(n):
            w.writerow([repr(float(a[i])) for a in arrays])


def read_table(path, required: dict, optional: dict | None = None) -> dict:
    """
    Read a delimited table and convert the named columns to SI.

    `required` and `optional` map column name -> dimension. Raises DataError
    with the file name and row number on any problem.
    """
    optional = optional or {}
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    text = path.read_text(encoding="utf-8")
    try:
        dialect = csv.Sniffer().sniff(text.splitlines()[0], delimiters=",;\t")
    except (csv.Error, IndexError):
        dialect = csv.excel
    rows = [r for r in csv.reader(text.splitlines(), dialect) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and a unit row")
    header = [c.strip() for c in rows[0]]
    unit_row = [c.strip() for c in rows[1]]
    if len(unit_row) != len(header):
        raise DataError(f"{path}: row 2 (units) has {len(unit_row)} fields, header has {len(header)}")
    for name in required:
        if name not in header:
            raise DataError(f"{path}: column not found: {name!r} (have {header})")
    out = {}
    for name, dim in {**required, **optional}.items():
        if name not in header:
            continue
        j = header.index(name)
        unit = unit_row[j]
        table = UNITS[dim]
        if unit not in table:
            raise DataError(f"{path}: column {name!r} has unit {unit!r}, expected one of "
                            f"{[k for k in table if k] or ['(none)']}")
        vals = []
        for i, r in enumerate(rows[2:], start=3):
            if len(r) != len(header):
                raise DataError(f"{path}: row {i} has {len(r)} fields, expected {len(header)}")
            try:
                vals.append(float(r[j]))
            except ValueError:
                raise DataError(f"{path}: row {i}, column {name!r}: not a number: {r[j]!r}") from None
        arr = np.array(vals, dtype=float)
        factor = table[unit]
        out[name] = arr if factor == 1.0 else arr * factor
    return out


def write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def manifest(command: str, kind: str, config: dict, outputs: list, seed=None) -> dict:
    """Run record sufficient to regenerate the outputs with `--config <manifest>`."""
    return {
        "schema_version": 1,
        "tool": "echodiff",
        "tool_version": __version__,
        "command": command,
        "kind": kind,
        "seed": seed,
        "config": config,
        "outputs": [str(p) for p in outputs],
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def load_config(path) -> dict:
    """Load a JSON config; a run manifest is accepted and its config used."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if cfg.get("tool") == "echodiff" and "config" in cfg:
        cfg = cfg["config"]
    return cfg


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply one `dotted.key=value` override; value is JSON if it parses."""
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.strip().split(".")
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
        node = nxt
    node[parts[-1]] = value
