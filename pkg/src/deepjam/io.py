"""On-disk formats for datasets, alignment results and configs.

Numeric matrices are CSV files: the first row holds the grid points (a
``t`` column label for the row index followed by one column per grid point)
and every further row is one function. Floats are written with ``repr`` so
they read back bit-exactly. Each directory carries a ``manifest.json``
describing its contents.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .grid import FunctionSample, Grid, SrsfSample

DATASET_FORMAT = "deepjam-dataset"
RESULT_FORMAT = "deepjam-result"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A file is missing, malformed, or inconsistent with its manifest."""


def _fmt(x: float) -> str:
    return repr(float(x))


def matrix_to_csv(matrix: np.ndarray, grid_points: np.ndarray, row_labels=None) -> str:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[1] != len(grid_points):
        raise ValueError(f"matrix has {matrix.shape[1]} columns but the grid has {len(grid_points)} points")
    labels = row_labels if row_labels is not None else range(matrix.shape[0])
    lines = ["t," + ",".join(_fmt(t) for t in grid_points)]
    for label, row in zip(labels, matrix):
        lines.append(f"{label}," + ",".join(_fmt(x) for x in row))
    return "\n".join(lines) + "\n"


def read_matrix(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Read a matrix file; returns ``(values, grid_points, row_labels)``."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing file {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["t"]:
        raise FormatError(f"{path} lacks the grid header row")
    try:
        grid_points = np.array([float(x) for x in rows[0][1:]])
        labels = [r[0] for r in rows[1:]]
        values = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if values.size == 0:
        values = values.reshape(0, len(grid_points))
    if values.shape[1] != len(grid_points):
        raise FormatError(f"{path}: ragged rows")
    return values, grid_points, labels


def write_text(path: str | Path, text: str) -> None:
    """Write via a temporary file and an atomic rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path: str | Path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing file {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def unit_grid(num_points: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, num_points)


# ---------------------------------------------------------------- datasets


def write_dataset(out_dir: str | Path, functions: np.ndarray, num_periods: int, meta: dict | None = None,
                  truth: dict[str, np.ndarray] | None = None, split: np.ndarray | None = None) -> list[str]:
    """Write functions (n, P, J) and optional ground truth; returns the written file names.

    ``truth`` may hold ``true_total``, ``true_global`` (n, P), ``true_local``
    (n, m), ``template`` (m, J), ``extended_template`` (P, J) and
    ``amplitudes`` (n, k).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    functions = np.asarray(functions, dtype=float)
    n, P, J = functions.shape
    m = (P - 1) // num_periods + 1
    files = {}
    for j in range(J):
        name = f"channel_{j + 1}.csv"
        write_text(out / name, matrix_to_csv(functions[:, :, j], unit_grid(P)))
        files[name] = "functions"
    for key, arr in (truth or {}).items():
        if arr is None:
            continue
        arr = np.asarray(arr, dtype=float)
        name = f"{key}.csv"
        if key in ("template", "extended_template"):
            points = np.linspace(0.0, 1.0 / num_periods, m) if key == "template" else unit_grid(P)
            text = matrix_to_csv(arr.T, points, row_labels=[f"channel_{j + 1}" for j in range(arr.shape[1])])
        elif key == "true_local":
            text = matrix_to_csv(arr, unit_grid(arr.shape[1]))
        elif key == "amplitudes":
            text = matrix_to_csv(arr, np.arange(1, arr.shape[1] + 1, dtype=float))
        else:
            text = matrix_to_csv(arr, unit_grid(arr.shape[1]))
        write_text(out / name, text)
        files[name] = key
    if split is not None:
        write_text(out / "split.csv", "subject,split\n" + "".join(f"{i},{s}\n" for i, s in enumerate(split)))
        files["split.csv"] = "split"
    manifest = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "num_subjects": n,
        "num_points": P,
        "num_channels": J,
        "num_periods": num_periods,
        "grid": {"a": 0.0, "b": 1.0},
        "files": files,
        **(meta or {}),
    }
    write_json(out / "manifest.json", manifest)
    return sorted(files) + ["manifest.json"]


class Dataset:
    """A dataset directory loaded into memory."""

    def __init__(self, manifest: dict, functions: np.ndarray, truth: dict, split: np.ndarray | None):
        self.manifest = manifest
        self.functions = functions
        self.truth = truth
        self.split = split

    @property
    def num_periods(self) -> int:
        return int(self.manifest["num_periods"])

    def subset(self, name: str | None) -> "Dataset":
        if name is None or self.split is None:
            return self
        idx = np.flatnonzero(self.split == name)
        if idx.size == 0:
            raise FormatError(f"split {name!r} is empty")
        per_subject = {"true_total", "true_global", "true_local", "amplitudes"}
        truth = {k: (v[idx] if k in per_subject else v) for k, v in self.truth.items()}
        return Dataset(self.manifest, self.functions[idx], truth, self.split[idx])

    def samples(self) -> list[FunctionSample]:
        grid = Grid(self.functions.shape[1])
        return [FunctionSample(grid, f) for f in self.functions]


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path} is not a deepjam dataset directory")
    J, P, n = manifest["num_channels"], manifest["num_points"], manifest["num_subjects"]
    channels = []
    for j in range(J):
        values, grid, _ = read_matrix(path / f"channel_{j + 1}.csv")
        if values.shape != (n, P):
            raise FormatError(f"channel {j + 1} has shape {values.shape}, manifest says ({n}, {P})")
        channels.append(values)
    functions = np.stack(channels, axis=-1)
    truth = {}
    split = None
    for name, key in manifest["files"].items():
        if key in ("functions",):
            continue
        if key == "split":
            with (path / name).open(newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            split = np.array([r[1] for r in rows])
            continue
        values, _, _ = read_matrix(path / name)
        truth[key] = values.T if key in ("template", "extended_template") else values
    return Dataset(manifest, functions, truth, split)


# ---------------------------------------------------------------- alignment results


def write_result(out_dir: str | Path, result, meta: dict | None = None) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = result.num_periods
    P = result.total_warps.shape[1]
    m = result.local_means.shape[1]
    J = result.template.values.shape[1]
    period = np.linspace(0.0, 1.0 / K, m)
    channel_labels = [f"channel_{j + 1}" for j in range(J)]
    files = {
        "total_warps.csv": matrix_to_csv(result.total_warps, unit_grid(P)),
        "local_means.csv": matrix_to_csv(result.local_means, unit_grid(m)),
        "global_warps.csv": matrix_to_csv(result.global_warps, unit_grid(P)),
        "centering_warp.csv": matrix_to_csv(result.centering_warp[None], unit_grid(P)),
        "template_srsf.csv": matrix_to_csv(result.template_srsf.values.T, period, channel_labels),
        "template.csv": matrix_to_csv(result.template.values.T, period, channel_labels),
    }
    for j in range(J):
        files[f"subject_templates_channel_{j + 1}.csv"] = matrix_to_csv(result.subject_templates[:, :, j], period)
    lines = ["iteration,loss," + ",".join(f"variance_channel_{j + 1}" for j in range(J))]
    for e, (loss, var) in enumerate(zip(result.loss_history, result.variance_history), start=1):
        lines.append(f"{e},{_fmt(loss)}," + ",".join(_fmt(v) for v in var))
    files["history.csv"] = "\n".join(lines) + "\n"
    for name, text in files.items():
        write_text(out / name, text)
    manifest = {
        "format": RESULT_FORMAT,
        "version": FORMAT_VERSION,
        "num_subjects": result.num_subjects,
        "num_points": P,
        "num_channels": J,
        "num_periods": K,
        "template_anchor": [float(a) for a in result.template_srsf.anchor],
        "files": sorted(files),
        **(meta or {}),
    }
    write_json(out / "result.json", manifest)
    return sorted(files) + ["result.json"]


def read_result(path: str | Path):
    from .jam import AlignmentResult

    path = Path(path)
    manifest = read_json(path / "result.json")
    if manifest.get("format") != RESULT_FORMAT:
        raise FormatError(f"{path} is not a deepjam result directory")
    K, J = manifest["num_periods"], manifest["num_channels"]
    total, _, _ = read_matrix(path / "total_warps.csv")
    local, _, _ = read_matrix(path / "local_means.csv")
    global_, _, _ = read_matrix(path / "global_warps.csv")
    centering, _, _ = read_matrix(path / "centering_warp.csv")
    tq, period, _ = read_matrix(path / "template_srsf.csv")
    tf, _, _ = read_matrix(path / "template.csv")
    subject = np.stack([read_matrix(path / f"subject_templates_channel_{j + 1}.csv")[0] for j in range(J)], axis=-1)
    with (path / "history.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    grid = Grid(len(period), 0.0, float(period[-1]))
    return AlignmentResult(
        num_periods=K,
        total_warps=total,
        local_means=local,
        global_warps=global_,
        template_srsf=SrsfSample(grid, tq.T, manifest["template_anchor"]),
        template=FunctionSample(grid, tf.T),
        subject_templates=subject,
        centering_warp=centering[0],
        loss_history=[float(r[1]) for r in rows],
        variance_history=[[float(x) for x in r[2:]] for r in rows],
    ), manifest
