"""CSV/JSON serialization with byte-stable, round-trip-exact formatting.

Floats are written with ``repr`` (shortest round-trip form), files use comma
delimiters, '.' decimals and LF line endings, and every write goes through a
temp-file + rename so partially written outputs never appear.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .building import MeasurementSet, ModeSet

__all__ = [
    "SCHEMA_VERSION",
    "atomic_write_text",
    "write_json",
    "read_json",
    "write_columns_csv",
    "read_columns_csv",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_modeset_csv",
    "read_modeset_csv",
    "write_measurements",
    "read_measurements",
]

SCHEMA_VERSION = "1"


def _fmt(x) -> str:
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    """Write text through a temp file + rename in the destination directory."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    with open(path, "r") as fh:
        return json.load(fh)


def write_columns_csv(path, header, columns) -> None:
    """Write named float columns; all columns must share one length."""
    columns = [np.asarray(c, dtype=float) for c in columns]
    if len(header) != len(columns):
        raise ValueError("one header entry per column required")
    n = columns[0].size
    if any(c.size != n for c in columns):
        raise ValueError("all columns must have the same length")
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(_fmt(c[i]) for c in columns))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_columns_csv(path) -> tuple[list, np.ndarray]:
    """Read a header row plus float columns; returns (header, data[n, cols])."""
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty CSV")
    header = lines[0].split(",")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed numeric row ({exc})") from exc
    if data.size and data.shape[1] != len(header):
        raise ValueError(f"{path}: row width does not match header")
    return header, data.reshape((-1, len(header)))


def write_matrix_csv(path, matrix) -> None:
    """Write a bare numeric matrix (no header)."""
    matrix = np.asarray(matrix, dtype=float)
    lines = [",".join(_fmt(v) for v in row) for row in np.atleast_2d(matrix)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        return np.array([[float(v) for v in ln.split(",")] for ln in lines])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed numeric row ({exc})") from exc


def _mode_header(n_modes: int) -> list:
    return ["height"] + [f"mode_{j + 1}" for j in range(n_modes)]


def write_modeset_csv(path, modes: ModeSet) -> None:
    """One row per height (base first, ordinate zero), one column per mode."""
    with_base = np.vstack([np.zeros((1, modes.n_modes)), modes.shapes])
    columns = [modes.heights] + [with_base[:, j] for j in range(modes.n_modes)]
    write_columns_csv(path, _mode_header(modes.n_modes), columns)


def read_modeset_csv(path, frequencies=None) -> ModeSet:
    """Rebuild a ModeSet from CSV; frequencies default to the mode index."""
    header, data = read_columns_csv(path)
    if header[:1] != ["height"] or len(header) < 2:
        raise ValueError(f"{path}: expected 'height' plus one column per mode")
    n_modes = len(header) - 1
    heights = data[:, 0]
    if heights[0] != 0.0:
        raise ValueError(f"{path}: first row must be the base (height 0)")
    shapes = data[1:, 1:]
    if frequencies is None:
        frequencies = np.arange(1, n_modes + 1, dtype=float)
    return ModeSet(n_modes=n_modes, heights=heights, shapes=shapes,
                   frequencies=np.asarray(frequencies, dtype=float))


def write_measurements(csv_path, meta_path, measurements: MeasurementSet,
                       extra_meta: dict | None = None) -> None:
    """Write sensor values (CSV) and the metadata envelope (JSON)."""
    columns = [measurements.sensor_heights] + [
        measurements.values[:, j] for j in range(measurements.n_modes)
    ]
    write_columns_csv(csv_path, _mode_header(measurements.n_modes), columns)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "seed": int(measurements.rng_seed),
        "sensor_floors": [int(f) for f in measurements.sensor_floors],
        "noise_std": [float(s) for s in measurements.noise_std],
    }
    if extra_meta:
        meta.update(extra_meta)
    write_json(meta_path, meta)


def read_measurements(csv_path, meta_path) -> tuple[MeasurementSet, dict]:
    """Rebuild a MeasurementSet from the CSV + JSON envelope pair."""
    header, data = read_columns_csv(csv_path)
    if header[:1] != ["height"] or len(header) < 2:
        raise ValueError(f"{csv_path}: expected 'height' plus one column per mode")
    meta = read_json(meta_path)
    for key in ("seed", "sensor_floors", "noise_std"):
        if key not in meta:
            raise ValueError(f"{meta_path}: missing field {key!r}")
    measurements = MeasurementSet(
        sensor_floors=np.asarray(meta["sensor_floors"], dtype=int),
        sensor_heights=data[:, 0],
        values=data[:, 1:],
        noise_std=np.asarray(meta["noise_std"], dtype=float),
        rng_seed=int(meta["seed"]),
    )
    return measurements, meta
