"""CSV/JSON serialization of sweep results, run manifests and static SVG charts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .attacks import MEASURES
from .sweep import GridPoint, GroupSummary, SweepResult, assemble

log = logging.getLogger(__name__)

CSV_HEADER = (
    "p,epsilon,clean_accuracy,adv_accuracy,success_rate,"
    "gini_mean,hoyer_mean,l0_frac_mean,t_gauss_mean,t_lowpass_mean,t_taylor_mean,"
    "gini_norm,hoyer_norm,l0_norm,t_gauss_norm,t_lowpass_norm,t_taylor_norm,"
    "undefined_sparsity_count"
).split(",")

_NORM_COLUMN = {"gini": "gini_norm", "hoyer": "hoyer_norm", "l0_frac": "l0_norm",
                "t_gauss": "t_gauss_norm", "t_lowpass": "t_lowpass_norm", "t_taylor": "t_taylor_norm"}


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.9g}"


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode()
    tmp.write_bytes(data)
    os.replace(tmp, path)


def measures_csv_text(result: SweepResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i, pt in enumerate(result.points):
        row = [fmt(pt.p), fmt(pt.epsilon), fmt(pt.clean_accuracy), fmt(pt.adv_accuracy), fmt(pt.success_rate)]
        row += [fmt(pt.means.get(m, float("nan"))) for m in MEASURES]
        row += [fmt(result.curves[m].normalized[i]) if m in result.curves else "nan" for m in MEASURES]
        row.append(str(int(pt.undefined_sparsity)))
        writer.writerow(row)
    return buf.getvalue()


def write_measures_csv(result: SweepResult, path) -> None:
    atomic_write(path, measures_csv_text(result))


def read_measures_csv(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [{k: float(v) for k, v in zip(header, row)} for row in reader]


def result_from_csv(path, model_id: str = "", dataset_id: str = "", flagged=()) -> SweepResult:
    """Rebuild a SweepResult (without calibration traces) from measures.csv."""
    rows = read_measures_csv(path)
    points = []
    for r in rows:
        means = {m: r[f"{m}_mean"] for m in MEASURES}
        points.append(GridPoint(r["p"], r["epsilon"], r["clean_accuracy"], r["adv_accuracy"], r["success_rate"],
                                means, int(r["undefined_sparsity_count"]), flagged=r["p"] in flagged))
    return assemble(points, model_id, dataset_id)


def optimal_p_doc(result: SweepResult) -> dict:
    return {
        "beta_opt": result.beta_opt,
        "optimal_p_set": result.optimal_p_set,
        "per_measure_argmax": result.per_measure_argmax,
        "flagged_p": [pt.p for pt in result.points if pt.flagged],
    }


def write_optimal_p(result: SweepResult, path) -> None:
    atomic_write(path, json.dumps(optimal_p_doc(result), indent=2, sort_keys=True) + "\n")


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(run_dir, run_id: str, command: list[str], config: dict, seeds: dict, started: datetime) -> None:
    run_dir = Path(run_dir)
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    doc = {
        "run_id": run_id,
        "command": command,
        "config": config,
        "seeds": seeds,
        "artifacts": {str(p.relative_to(run_dir)): sha256(p) for p in files},
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    atomic_write(run_dir / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- SVG -----------------------------------------------------------------

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
_W, _H, _PAD = 640, 400, 60


def _xy(px, py, xlo, xhi, ylo, yhi):
    sx = _PAD + (px - xlo) / (xhi - xlo or 1.0) * (_W - 2 * _PAD)
    sy = _H - _PAD - (py - ylo) / (yhi - ylo or 1.0) * (_H - 2 * _PAD)
    return f"{sx:.2f}", f"{sy:.2f}"


def _axes(title, xlabel, ylabel, xlo, xhi, ylo, yhi) -> list[str]:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>',
        f'<text x="{_W / 2:.0f}" y="{_H - 15}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{_H / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {_H / 2:.0f})">{ylabel}</text>',
    ]
    for t in np.linspace(xlo, xhi, 6):
        x, y = _xy(t, ylo, xlo, xhi, ylo, yhi)
        out.append(f'<text x="{x}" y="{float(y) + 16:.2f}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{t:.2f}</text>')
    for t in np.linspace(ylo, yhi, 6):
        x, y = _xy(xlo, t, xlo, xhi, ylo, yhi)
        out.append(f'<text x="{float(x) - 6:.2f}" y="{float(y) + 3:.2f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{t:.2f}</text>')
    return out


def curves_svg(result: SweepResult) -> str:
    grid = result.grid
    xlo, xhi = min(grid), max(grid)
    if xhi == xlo:
        xlo, xhi = xlo - 0.05, xhi + 0.05
    out = _axes(f"Normalized measures vs p ({result.model_id} / {result.dataset_id})", "p",
                "normalized value", xlo, xhi, 0.0, 1.0)
    for k, (name, curve) in enumerate(result.curves.items()):
        pts = [_xy(p, v, xlo, xhi, 0.0, 1.0) for p, v in zip(grid, curve.normalized) if np.isfinite(v)]
        color = _COLORS[k % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" data-measure="{name}" '
                   f'points="{" ".join(f"{x},{y}" for x, y in pts)}"/>')
        out.append(f'<text x="{_W - _PAD + 4}" y="{_PAD + 14 * k}" font-family="sans-serif" font-size="10" '
                   f'fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def optimal_p_svg(groups: list[GroupSummary], title: str = "Optimal p") -> str:
    n = len(groups)
    out = _axes(title, "group", "optimal p", 0.0, float(n + 1), 1.0, 2.0)
    for i, g in enumerate(groups, start=1):
        cx, cy = _xy(i, g.mean, 0.0, n + 1.0, 1.0, 2.0)
        _, top = _xy(i, min(2.0, g.mean + g.std), 0.0, n + 1.0, 1.0, 2.0)
        _, bot = _xy(i, max(1.0, g.mean - g.std), 0.0, n + 1.0, 1.0, 2.0)
        out.append(f'<line x1="{cx}" y1="{top}" x2="{cx}" y2="{bot}" stroke="#1f77b4" stroke-width="2"/>')
        out.append(f'<circle cx="{cx}" cy="{cy}" r="5" fill="#1f77b4"/>')
        for p in g.points:
            px, py = _xy(i + 0.15, p, 0.0, n + 1.0, 1.0, 2.0)
            out.append(f'<text x="{px}" y="{float(py) + 4:.2f}" font-family="sans-serif" font-size="12" '
                       f'text-anchor="middle">x</text>')
        _, ly = _xy(i, 1.0, 0.0, n + 1.0, 1.0, 2.0)
        out.append(f'<text x="{cx}" y="{float(ly) + 30:.2f}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="10">{g.group}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plots(data, out_dir) -> list[Path]:
    """Write curves.svg for a SweepResult, optimal_p.svg for a list of GroupSummary."""
    out_dir = Path(out_dir)
    if isinstance(data, SweepResult):
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "curves.svg"
        atomic_write(path, curves_svg(data))
        return [path]
    groups = list(data)
    if not groups:
        log.warning("empty aggregate: no optimal-p chart written")
        return []
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "optimal_p.svg"
    atomic_write(path, optimal_p_svg(groups))
    return [path]


def text_summary(results: list[SweepResult], groups: list[GroupSummary]) -> str:
    lines = []
    for r in results:
        lines.append(f"run {r.model_id} / {r.dataset_id}: beta_opt={r.beta_opt:.4f} "
                     f"optimal p={', '.join(f'{p:.2f}' for p in r.optimal_p_set)}")
        flagged = [pt.p for pt in r.points if pt.flagged]
        if flagged:
            lines.append(f"  flagged (calibration failed): {', '.join(f'{p:.2f}' for p in flagged)}")
    for g in groups:
        lines.append(f"group {g.group}: mean optimal p={g.mean:.3f} std={g.std:.3f} n={len(g.points)}")
    return "\n".join(lines) + "\n"
