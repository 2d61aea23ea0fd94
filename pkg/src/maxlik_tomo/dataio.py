"""CSV/JSON readers and writers. All writes go through write-then-rename."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .measurement import BinGrid, FrequencyData

HISTOGRAM_COLUMNS = ("phase_index", "bin_index", "bin_center", "theta", "count")


class DataError(ValueError):
    """Input data is malformed or inconsistent with the configuration."""


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, data):
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def write_csv(path, columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = [row[c] for c in columns] if isinstance(row, dict) else row
        writer.writerow([_fmt(v) for v in values])
    atomic_write_text(path, buf.getvalue())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def write_histogram_csv(path, grid: BinGrid, freqs: FrequencyData, random_phase: bool = False):
    """One row per (phase, bin) cell including empty cells; ``theta`` is nan for random-phase data."""
    rows = []
    for (j, i), count in zip(freqs.labels, freqs.counts):
        theta = float("nan") if random_phase else float(grid.phases[j])
        rows.append((int(j), int(i), float(grid.bin_centers[i]), theta, int(count)))
    write_csv(path, HISTOGRAM_COLUMNS, rows)


def read_histogram_csv(path, grid: BinGrid, random_phase: bool = False) -> FrequencyData:
    """Parse a histogram CSV and check it against ``grid``."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != HISTOGRAM_COLUMNS:
                raise DataError(f"{path}: expected columns {','.join(HISTOGRAM_COLUMNS)}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: histogram has no rows")
    try:
        labels = np.array([(int(r["phase_index"]), int(r["bin_index"])) for r in rows])
        counts = np.array([int(r["count"]) for r in rows])
        centers = np.array([float(r["bin_center"]) for r in rows])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    n_phases = 1 if random_phase else grid.n_phases
    if labels.shape[0] != n_phases * grid.n_bins:
        raise DataError(
            f"{path}: {labels.shape[0]} rows, grid expects {n_phases} x {grid.n_bins} cells"
        )
    if np.any(labels[:, 0] < 0) or np.any(labels[:, 0] >= n_phases) or \
            np.any(labels[:, 1] < 0) or np.any(labels[:, 1] >= grid.n_bins):
        raise DataError(f"{path}: phase or bin index outside the grid")
    if not np.allclose(centers, grid.bin_centers[labels[:, 1]], atol=1e-9):
        raise DataError(f"{path}: bin centers do not match the configured grid")
    if np.any(counts < 0):
        raise DataError(f"{path}: negative counts")
    order = np.lexsort((labels[:, 1], labels[:, 0]))
    labels, counts = labels[order], counts[order]
    if np.any(np.all(labels[1:] == labels[:-1], axis=1)):
        raise DataError(f"{path}: duplicate cells")
    if counts.sum() == 0:
        raise DataError(f"{path}: all counts are zero")
    return FrequencyData(counts, labels)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
