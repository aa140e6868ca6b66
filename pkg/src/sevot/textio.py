"""Small text-format helpers shared across modules: JSON-lines logs,
key=value config files, P2 graymaps, and flat CSV parameter dumps."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_kv(path, mapping: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(mapping):
            fh.write(f"{key}={mapping[key]}\n")


def read_kv(path) -> dict[str, str]:
    """Parse flat key=value lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_pgm(path, grid: np.ndarray, maxval: int | None = None) -> None:
    """Plain (P2) portable graymap of small nonnegative integers."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("graymap grid must be 2-D")
    if maxval is None:
        maxval = max(int(grid.max(initial=0)), 1)
    h, w = grid.shape
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n{maxval}\n")
        for row in grid:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_pgm(path) -> np.ndarray:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain P2 graymap")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=np.int64)
    if values.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {values.size}")
    return values.reshape(h, w)


def write_param_csv(path, arrays: dict) -> None:
    """Flat CSV dump of named arrays; round-trips float64 exactly."""
    with open(path, "w") as fh:
        for name in sorted(arrays):
            arr = arrays[name]
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            dims = ",".join(str(d) for d in arr.shape)
            fh.write(f"#array,{name},{dims}\n")
            for v in arr.ravel():
                fh.write(f"{v:.17g}\n")


def read_param_csv(path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    name = None
    shape: tuple[int, ...] = ()
    values: list[float] = []

    def flush():
        if name is not None:
            arr = np.array(values, dtype=float)
            expected = int(np.prod(shape)) if shape else 1
            if arr.size != expected:
                raise ValueError(f"{path}: array {name} has wrong value count")
            arrays[name] = arr.reshape(shape)

    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#array,"):
                flush()
                parts = line.split(",")
                name = parts[1]
                shape = tuple(int(d) for d in parts[2:] if d)
                values = []
            else:
                values.append(float(line))
    flush()
    return arrays
