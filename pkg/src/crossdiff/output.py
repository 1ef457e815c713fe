"""Deterministic CSV and JSON writers.

Floats are written with 17 significant digits and JSON keys are sorted, so
identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .entropy import vacancy
from .stepper import Trajectory


class OutputError(OSError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(path, payload: Mapping) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def snapshot_columns(n: int) -> List[str]:
    return ["t", "x"] + [f"u_{i + 1}" for i in range(n + 1)]


def snapshot_rows(traj: Trajectory):
    x = traj.grid.x if traj.grid is not None else np.array([])
    for t, values in zip(traj.times, traj.fields):
        full = np.vstack([values, vacancy(values)])
        for j in range(x.size):
            yield (t, x[j], *full[:, j])


def series_columns(n: int) -> List[str]:
    return (["t", "entropy", "rel_entropy", "dissipation_1", "dissipation_2"]
            + [f"mass_{i + 1}" for i in range(n)] + [f"dist_l2_{i + 1}" for i in range(n + 1)])


def table_rows(series: Mapping[str, np.ndarray], columns: Sequence[str]):
    if not columns or columns[0] not in series:
        return
    for k in range(len(series[columns[0]])):
        yield tuple(series[c][k] for c in columns)


def emit_outputs(directory, prefix: str, n: int, trajectory: Optional[Trajectory] = None,
                 series: Optional[Mapping[str, np.ndarray]] = None,
                 tables: Optional[Dict[str, tuple]] = None,
                 summary: Optional[Mapping] = None) -> Dict[str, Path]:
    """Write whatever is given; returns the written paths keyed by kind.

    ``tables`` maps a name to ``(columns, rows)`` and lands in
    ``<prefix>_<name>.csv``.
    """
    directory = Path(directory)
    paths: Dict[str, Path] = {}
    if trajectory is not None:
        paths["snapshots"] = write_csv(directory / f"{prefix}_snapshots.csv", snapshot_columns(n),
                                       snapshot_rows(trajectory))
    if series is not None:
        cols = series_columns(n)
        paths["series"] = write_csv(directory / f"{prefix}_series.csv", cols,
                                    table_rows(series, cols))
    for name, (columns, rows) in sorted((tables or {}).items()):
        paths[name] = write_csv(directory / f"{prefix}_{name}.csv", columns, rows)
    if summary is not None:
        paths["summary"] = write_json(directory / f"{prefix}_summary.json", summary)
    return paths
