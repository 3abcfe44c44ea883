"""Writers for plans, kernels, segmentation results and SVG scatters.

All text output is UTF-8 with ``\\n`` line endings and ``repr`` floats, so the
same data always produces the same bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .clustering import ClusterResult
from .ot_solvers import TransportPlan
from .spectral import SpectralDecomposition

RESULT_SCHEMA_VERSION = 1


def _f(x) -> str:
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_json(path, record: dict) -> None:
    text = json.dumps(_jsonable(record), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def save_plan_csv(path, plan: TransportPlan) -> None:
    """Dense row-major plan with header ``i,j,mass``."""
    P = plan.matrix
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["i", "j", "mass"])
        for i in range(P.shape[0]):
            for j in range(P.shape[1]):
                wr.writerow([i, j, _f(P[i, j])])


def load_plan_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    i, j = data[:, 0].astype(int), data[:, 1].astype(int)
    P = np.zeros((i.max() + 1, j.max() + 1))
    P[i, j] = data[:, 2]
    return P


def save_plan_json(path, plan: TransportPlan) -> None:
    write_json(path, plan.to_dict())


def save_matrix_csv(path, M) -> None:
    """Dense matrix, one row per line, no header."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        for row in M:
            wr.writerow([_f(v) for v in row])


def result_record(decomp: SpectralDecomposition, clusters: ClusterResult | None = None,
                  extra: dict | None = None) -> dict:
    """Segmentation result in the documented ``result.json`` layout."""
    s = decomp.singular_values
    rec = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "singular_values": s,
        "sigma_1": s[0],
        "f": decomp.partition_left.T if decomp.partition_left is not None else [],
        "g": decomp.partition_right.T if decomp.partition_right is not None else [],
        "diagnostics": dict(decomp.flags),
    }
    rec["diagnostics"]["leading_alignment"] = min(
        decomp.flags.get("leading_alignment_left", float("nan")),
        decomp.flags.get("leading_alignment_right", float("nan")))
    if decomp.plans:
        rec["diagnostics"]["plans"] = [p.to_dict() for p in decomp.plans]
    if clusters is not None:
        rec["clusters"] = {
            "k": clusters.k,
            "labels_initial": clusters.labels_at(0),
            "labels_final": clusters.labels_at(1),
            "membership_initial": clusters.membership_at(0),
            "membership_final": clusters.membership_at(1),
            "centers": clusters.centers,
            "iterations": clusters.iterations,
            "converged": clusters.converged,
        }
    if extra:
        rec.update(extra)
    return rec


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _diverging(v, vmax):
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    # blue (negative) -> white -> red (positive)
    if t >= 0:
        r, g, b = 255, int(round(255 * (1 - t))), int(round(255 * (1 - t)))
    else:
        r, g, b = int(round(255 * (1 + t))), int(round(255 * (1 + t))), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def scatter_svg(points, values=None, labels=None, size: int = 480, radius: float = 3.0,
                title: str = "") -> str:
    """Scatter of the first two coordinates, colored by ``labels`` or ``values``.

    1-D points are drawn against the point index.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1 or P.shape[1] == 1:
        P = np.column_stack([P.reshape(-1), np.arange(len(P))])
    P = P[:, :2]
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    pad = 12.0
    scale = (size - 2 * pad) / span.max()
    w = span[0] * scale + 2 * pad
    h = span[1] * scale + 2 * pad
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1f}" height="{h:.1f}" '
           f'viewBox="0 0 {w:.1f} {h:.1f}">']
    if title:
        out.append(f"<title>{title}</title>")
    out.append(f'<rect width="{w:.1f}" height="{h:.1f}" fill="white"/>')
    vmax = float(np.abs(values).max()) if values is not None and len(values) else 0.0
    for k, (x, y) in enumerate(P):
        cx = pad + (x - lo[0]) * scale
        cy = h - pad - (y - lo[1]) * scale
        if labels is not None:
            color = _PALETTE[int(labels[k]) % len(_PALETTE)]
        elif values is not None:
            color = _diverging(float(values[k]), vmax)
        else:
            color = "#333333"
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{radius}" fill="{color}" '
                   f'stroke="#444" stroke-width="0.3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, *args, **kwargs) -> None:
    Path(path).write_text(scatter_svg(*args, **kwargs), encoding="utf-8")
