"""Deterministic CSV / JSON / SVG reports for metric tables and sweeps."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402

FORMATS = ("csv", "json", "svg")
METRIC_COLUMNS = ["sequence", "frames", "psnr", "ssim", "mtsed", "fvd"]


def _columns(rows, columns):
    if columns:
        return list(columns)
    if not rows:
        return list(METRIC_COLUMNS)
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _json_value(v):
    if isinstance(v, dict):
        return {k: _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else _cell(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def render_csv(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    cols = _columns(rows, columns)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k, "")) for k in cols})
    return buf.getvalue()


def render_json(results) -> str:
    """Non-finite floats are written as the strings "inf", "-inf" and "nan"."""
    return json.dumps(_json_value(results), indent=2, sort_keys=True) + "\n"


def _svg_bytes(fig: Figure) -> bytes:
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "panoview", "svg.fonttype": "path"}):
        FigureCanvasSVG(fig).print_svg(buf, metadata={"Date": None})
    return buf.getvalue()


def plot_metric_curves(rows: Sequence[dict], x: str, metrics: Sequence[str], title: str = "") -> bytes:
    """Metric-versus-x line plot (for instance metric against frame count)."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    for m in metrics:
        pts = [(float(r[x]), float(r[m])) for r in rows if m in r and x in r and math.isfinite(float(r[m]))]
        if pts:
            xs, ys = zip(*sorted(pts))
            ax.plot(xs, ys, marker="o", label=m)
    ax.set_xlabel(x)
    ax.set_title(title)
    if ax.lines:
        ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _svg_bytes(fig)


def plot_sweep_heatmap(tau_t: Sequence[float], tau_q: Sequence[float], scores, title: str = "") -> bytes:
    """Heat map of a score over the (tau_t, tau_q) grid; rows follow tau_q."""
    S = np.asarray(scores, dtype=np.float64)
    fig = Figure(figsize=(6, 5))
    ax = fig.add_subplot(111)
    im = ax.imshow(S, origin="lower", aspect="auto",
                   extent=(min(tau_t), max(tau_t), min(tau_q), max(tau_q)), cmap="viridis")
    fig.colorbar(im, ax=ax, label="score")
    k = np.unravel_index(np.nanargmax(S), S.shape)
    ax.plot([tau_t[k[1]]], [tau_q[k[0]]], "r+", markersize=12)
    ax.set_xlabel("tau_t (m)")
    ax.set_ylabel("tau_q (rad)")
    ax.set_title(title or f"best tau_t={tau_t[k[1]]:.2f} m, tau_q={tau_q[k[0]]:.2f} rad")
    fig.tight_layout()
    return _svg_bytes(fig)


def emit_report(results, fmt: str, path, columns: Optional[Sequence[str]] = None,
                x: Optional[str] = None) -> Path:
    """Write ``results`` to ``path`` in ``fmt`` (csv, json or svg).

    ``results`` is a list of row dicts, or a dict holding ``rows`` and, for a
    parameter sweep, ``tau_t``/``tau_q``/``scores``.  An SVG of a sweep is a
    heat map; otherwise it plots every numeric column against ``x`` (default
    ``frames`` when present, else the first column).
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = results.get("rows", []) if isinstance(results, dict) else list(results)
    if fmt == "csv":
        path.write_text(render_csv(rows, columns))
    elif fmt == "json":
        path.write_text(render_json(results if isinstance(results, dict) else {"rows": rows}))
    else:
        if isinstance(results, dict) and "scores" in results:
            path.write_bytes(plot_sweep_heatmap(results["tau_t"], results["tau_q"], results["scores"]))
        else:
            cols = _columns(rows, columns)
            xcol = x or ("frames" if "frames" in cols else cols[0])
            numeric = [c for c in cols if c != xcol and rows
                       and all(isinstance(r.get(c), (int, float, np.number)) for r in rows)]
            path.write_bytes(plot_metric_curves(rows, xcol, numeric))
    return path
