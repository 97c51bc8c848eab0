"""File formats: data CSVs, contrast CSVs, permutation files, JSON outputs and manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__


class DataError(ValueError):
    """Malformed input file; the message carries the offending line."""


@dataclass(frozen=True)
class Table:
    columns: list[str]
    values: np.ndarray  # n x k

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise DataError(f"no column named {name!r}; have {self.columns}") from None


def read_table(path) -> Table:
    """Numeric CSV with a header row (RFC 4180 quoting)."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}:1: {exc}") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise DataError(f"{path}:1: header has empty column names")
        if len(set(header)) != len(header):
            raise DataError(f"{path}:1: duplicate column names")
        rows = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(c.strip() == "" for c in row):
                    continue
                if len(row) != len(header):
                    raise DataError(
                        f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
                try:
                    vals = [float(c) for c in row]
                except ValueError:
                    raise DataError(f"{path}:{line}: non-numeric value in {row!r}") from None
                if not all(math.isfinite(v) for v in vals):
                    raise DataError(f"{path}:{line}: non-finite value")
                rows.append(vals)
        except csv.Error as exc:
            raise DataError(f"{path}:{reader.line_num}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return Table(header, np.array(rows, dtype=float))


def read_contrast(path, p: int) -> np.ndarray:
    """``p x r`` contrast matrix; a non-numeric first row is taken as a header."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        R = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if R.ndim != 2 or R.shape[0] != p:
        raise DataError(f"{path}: contrast must have {p} rows (one per design column), "
                        f"got shape {R.shape}")
    return R


def write_permutation(perm: np.ndarray, path) -> Path:
    """One 1-based row index per line."""
    path = Path(path)
    path.write_text("".join(f"{int(i) + 1}\n" for i in perm))
    return path


def read_permutation(path, n: int) -> np.ndarray:
    path = Path(path)
    try:
        vals = [int(line) for line in path.read_text().split()]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    perm = np.array(vals, dtype=int) - 1
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise DataError(f"{path}: not a permutation of 1..{n}")
    return perm


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_schema(name: str) -> dict:
    text = resources.files("cpt").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(instance, name: str):
    """Raise :class:`DataError` naming the JSON path of the first violation."""
    import jsonschema

    schema = load_schema(name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(_clean(instance)), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise DataError(f"schema violation at {e.json_path}: {e.message}")


class Manifest:
    """Reproduction record written next to each output file."""

    def __init__(self, command: str, argv: list[str], params: dict, seed, inputs=()):
        self.command = command
        self.argv = list(argv)
        self.params = params
        self.seed = seed
        self.inputs = [str(p) for p in inputs]
        self.outputs: list[str] = []
        self.started = time.time()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "argv": self.argv,
            "parameters": self.params,
            "seed": self.seed,
            "inputs": [{"path": p, "sha256": sha256_file(p)} for p in self.inputs],
            "outputs": [{"path": p, "sha256": sha256_file(p)} for p in self.outputs],
            "software": {"cpt": __version__, "python": sys.version.split()[0],
                         "numpy": np.__version__, "platform": platform.platform()},
            "wall_clock": {"started": time.strftime("%Y-%m-%dT%H:%M:%S%z",
                                                    time.localtime(self.started)),
                           "elapsed_seconds": time.time() - self.started},
        }

    def write(self, path) -> Path:
        data = self.to_dict()
        validate(data, "manifest")
        return dump_json(data, path)
