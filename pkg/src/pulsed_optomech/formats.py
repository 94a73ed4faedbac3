"""File formats: tomogram JSON, marginal and Wigner CSV, atomic writes.

Numbers are written with ``repr`` so a reread reproduces every float exactly
and reruns with identical inputs produce identical bytes.
"""
from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .hilbert import Marginal, WignerGrid
from .measurement import MeasurementSpec
from .tomography import Histogram, Tomogram

TOMOGRAM_VERSION = "tomogram v1"
MARGINAL_HEADER = "# marginal v1"
WIGNER_HEADER = "# wigner v1"


def atomic_write(path, data: str | bytes) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps_json(obj))


# ---------------------------------------------------------------------------
# tomogram


def tomogram_to_dict(tomo: Tomogram) -> dict:
    spec = tomo.spec
    return {
        "format": TOMOGRAM_VERSION,
        "angles": [float(a) for a in tomo.angles],
        "chi": float(spec.chi),
        "omega": float(spec.omega_kick),
        "var_pl_in": float(spec.var_pl_in),
        "extra_noise_var": float(spec.extra_noise_var),
        "shots": int(tomo.shots_per_angle),
        "histograms": [
            {"edges": [float(e) for e in h.edges], "counts": [int(c) for c in h.counts]}
            for h in tomo.histograms
        ],
    }


def tomogram_from_dict(doc: dict) -> Tomogram:
    fmt = doc.get("format", TOMOGRAM_VERSION)
    if fmt != TOMOGRAM_VERSION:
        raise ValueError(f"unsupported tomogram format {fmt!r}")
    spec = MeasurementSpec(
        chi=doc["chi"],
        omega_kick=doc["omega"],
        var_pl_in=doc.get("var_pl_in", 0.5),
        extra_noise_var=doc.get("extra_noise_var", 0.0),
    )
    hists = [Histogram(np.asarray(h["edges"], float), np.asarray(h["counts"], np.int64))
             for h in doc["histograms"]]
    if len(hists) != len(doc["angles"]):
        raise ValueError("one histogram per angle is required")
    return Tomogram(np.asarray(doc["angles"], float), hists, spec, int(doc["shots"]))


def save_tomogram(path, tomo: Tomogram) -> Path:
    return write_json(path, tomogram_to_dict(tomo))


def load_tomogram(path) -> Tomogram:
    with open(path) as fh:
        return tomogram_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# CSV curves


def _csv(header_lines, columns, names) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(",".join(names) + "\n")
    for row in zip(*columns):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def marginal_csv(m: Marginal) -> str:
    x = m.x_grid
    return MARGINAL_HEADER + "\n" + _csv(
        [f"theta={m.theta!r}", f"x_min={float(x[0])!r}", f"x_max={float(x[-1])!r}", f"n={x.size}"],
        [x, m.values], ["x", "density"])


def wigner_csv(w: WignerGrid) -> str:
    X, P = np.meshgrid(w.x_grid, w.p_grid, indexing="ij")
    meta = [
        f"x_min={float(w.x_grid[0])!r}", f"x_max={float(w.x_grid[-1])!r}", f"nx={w.x_grid.size}",
        f"p_min={float(w.p_grid[0])!r}", f"p_max={float(w.p_grid[-1])!r}", f"np={w.p_grid.size}",
        "order=x-major",
    ]
    return WIGNER_HEADER + "\n" + _csv(meta, [X.ravel(), P.ravel(), w.values.ravel()], ["x", "p", "W"])


def write_marginal(path, m: Marginal) -> Path:
    return atomic_write(path, marginal_csv(m))


def write_wigner(path, w: WignerGrid) -> Path:
    return atomic_write(path, wigner_csv(w))


def _read_csv(path):
    meta, rows = {}, []
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# ") and "=" in ln:
            k, v = ln[2:].split("=", 1)
            meta[k.strip()] = v.strip()
    names = body[0].split(",")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in body[1:] if ln])
    return lines[0], meta, names, rows


def read_marginal(path) -> Marginal:
    head, meta, _, rows = _read_csv(path)
    if head != MARGINAL_HEADER:
        raise ValueError(f"{path}: not a marginal file")
    return Marginal(float(meta["theta"]), rows[:, 0], rows[:, 1])


def read_wigner(path) -> WignerGrid:
    head, meta, _, rows = _read_csv(path)
    if head != WIGNER_HEADER:
        raise ValueError(f"{path}: not a wigner file")
    nx, npp = int(meta["nx"]), int(meta["np"])
    x = rows[:, 0].reshape(nx, npp)[:, 0]
    p = rows[:, 1].reshape(nx, npp)[0, :]
    return WignerGrid(x, p, rows[:, 2].reshape(nx, npp))
