"""CSV traces, JSON metadata and plot-script emission."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .. import __version__
from .._kernels import BACKEND
from ..solver import TRACE_COLUMNS, RunResult


def fmt(v) -> str:
    """Fixed 17-significant-digit formatting, so output bytes are reproducible."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def read_csv(path) -> dict:
    """Columns of a CSV written by :func:`write_csv` as float arrays."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = [[float(t) for t in line.strip().split(",")] for line in fh if line.strip()]
    arr = np.array(data, dtype=float).reshape(len(data), len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


def trace_rows(res: RunResult, k_offset: int = 0, extra=()):
    for r in res.records:
        yield (r.k + k_offset, r.elapsed_s, r.err_ref, r.misfit, r.gap, r.tau_k, r.sigma_k, *extra)


def write_trace(path, res: RunResult) -> Path:
    return write_csv(path, TRACE_COLUMNS, trace_rows(res))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_meta(path, config: dict, seed: int, **fields) -> Path:
    """JSON metadata with the config echo, library version and seed."""
    meta = {"library_version": __version__, "backend": BACKEND, "seed": seed, "config": config}
    meta.update(fields)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(meta), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def write_vector(path, v) -> Path:
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return write_csv(path, ("i", "value"), ((i, x) for i, x in enumerate(v)))
    idx = np.indices(v.shape).reshape(v.ndim, -1).T
    cols = tuple(f"i{d}" for d in range(v.ndim)) + ("value",)
    return write_csv(path, cols, ((*ij, x) for ij, x in zip(idx, v.ravel())))


_PLOT_TEMPLATE = '''"""Plot {csv}; needs matplotlib."""
import csv
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open("{csv}") as fh:
    rows = list(csv.DictReader(fh))
x = [float(r["{x}"]) for r in rows]
fig, ax = plt.subplots()
for col in {ys!r}:
    ax.semilogy(x, [abs(float(r[col])) for r in rows], label=col)
ax.set_xlabel("{x}")
ax.legend()
fig.savefig("{png}", dpi=120)
'''


def write_plot_script(path, csv_name: str, x: str = "k", ys=("err_ref", "misfit")) -> Path:
    """Emit a standalone matplotlib script next to the data; it is not run here."""
    path = Path(path)
    png = Path(csv_name).with_suffix(".png").name
    path.write_text(_PLOT_TEMPLATE.format(csv=csv_name, x=x, ys=tuple(ys), png=png), encoding="utf-8")
    return path
