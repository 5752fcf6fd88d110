"""File formats: raw complex binaries with JSON sidecars, and metrics CSV.

Fields and kernels are stored as raw little-endian complex128 (two 8-byte
IEEE-754 floats per entry, real then imaginary), row-major over axes. The
sidecar carries just enough metadata to interpret the payload:

    field:  {"dim", "n_per_axis", "extent", "kind": "field"}
    kernel: {"kind": "kernel", "n_total", "hermitian"}

CSV outputs use a fixed shortest-roundtrip float format, UTF-8 and LF line
endings, so identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import Field, Grid
from .stochastic import CovKernel


def _paths(path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix == ".bin":
        base = base.with_suffix("")
    return base.with_suffix(".bin"), base.with_suffix(".json")


def save_field(path, field: Field) -> Path:
    bin_path, meta_path = _paths(path)
    bin_path.write_bytes(np.ascontiguousarray(field.values, dtype="<c16").tobytes())
    meta = {
        "dim": field.grid.dim,
        "n_per_axis": field.grid.n_per_axis,
        "extent": field.grid.extent,
        "kind": "field",
    }
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return bin_path


def load_field(path) -> Field:
    bin_path, meta_path = _paths(path)
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("kind") != "field":
        raise ValueError(f"{meta_path} is not a field sidecar")
    grid = Grid(meta["dim"], meta["n_per_axis"], meta["extent"])
    values = np.frombuffer(bin_path.read_bytes(), dtype="<c16")
    return Field(grid, values)


def save_kernel(path, kernel: CovKernel) -> Path:
    bin_path, meta_path = _paths(path)
    bin_path.write_bytes(np.ascontiguousarray(kernel.values, dtype="<c16").tobytes())
    meta = {
        "kind": "kernel",
        "n_total": kernel.grid.n_total,
        "hermitian": kernel.hermitian,
    }
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return bin_path


def load_kernel(path, grid: Grid) -> CovKernel:
    bin_path, meta_path = _paths(path)
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("kind") != "kernel":
        raise ValueError(f"{meta_path} is not a kernel sidecar")
    if meta["n_total"] != grid.n_total:
        raise ValueError(f"kernel has n_total={meta['n_total']}, grid has {grid.n_total}")
    values = np.frombuffer(bin_path.read_bytes(), dtype="<c16").reshape(grid.n_total, grid.n_total)
    return CovKernel(grid, values, hermitian=meta["hermitian"])


def format_value(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_metrics_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
