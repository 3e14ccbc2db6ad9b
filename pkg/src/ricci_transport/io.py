"""
Trajectory archives, CSV tables and a minimal SVG writer.

Every emitted file carries the configuration hash: a ``config_hash`` field in
JSON, a leading ``# config_hash:`` line in CSV and an XML comment in SVG.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .flow import FlowCheckpoint, FlowConfig, FlowTrajectory, flow_rhs
from .harmonics import load_spectral, save_spectral
from .metric import ConformalMetric

__all__ = [
    "ARCHIVE_VERSION",
    "ATLAS_COLUMNS",
    "DIAGNOSTIC_COLUMNS",
    "dumps_json",
    "load_metric",
    "load_trajectory",
    "read_csv",
    "save_metric",
    "save_trajectory",
    "svg_heatmap",
    "svg_timeseries",
    "write_atlas_csv",
    "write_csv",
    "write_json",
]

ARCHIVE_VERSION = 1
DIAGNOSTIC_COLUMNS = ("t", "volume", "r", "gauss_bonnet", "min_R", "max_R",
                      "sup_R_minus_r", "sup_hess_xi")
ATLAS_COLUMNS = ("y1", "y2", "y3", "x1", "x2", "x3", "J11", "J12", "J21", "J22",
                 "opnorm", "status")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps_json(obj) -> str:
    """Canonical JSON (sorted keys, shortest round-trip floats, trailing newline)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, obj, config_hash: str) -> Path:
    path = Path(path)
    data = dict(_jsonable(obj))
    data["config_hash"] = config_hash
    path.write_text(dumps_json(data))
    return path


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: str | Path, columns, rows, config_hash: str) -> Path:
    path = Path(path)
    buf = io.StringIO()
    buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        values = [row.get(c) for c in columns] if isinstance(row, dict) else row
        w.writerow([_fmt(v) for v in values])
    path.write_text(buf.getvalue())
    return path


def read_csv(path: str | Path) -> tuple[str | None, list[dict]]:
    """Return ``(config_hash, rows)``; values are left as strings."""
    lines = Path(path).read_text().splitlines()
    h = None
    if lines and lines[0].startswith("# config_hash:"):
        h = lines[0].split(":", 1)[1].strip()
        lines = lines[1:]
    return h, list(csv.DictReader(lines))


# -- trajectory archive ------------------------------------------------------

def save_trajectory(out_dir: str | Path, traj: FlowTrajectory, config_hash: str,
                    run_config: dict | None = None) -> Path:
    """Write ``manifest.json``, one coefficient file pair per checkpoint and field,
    and ``diagnostics.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = {"config_hash": config_hash}
    entries = []
    for k, c in enumerate(traj.checkpoints):
        entry = {"t": float(c.t), "u": save_spectral(out / f"u_{k:04d}", c.u, tag).name}
        if c.xi is not None:
            entry["xi"] = save_spectral(out / f"xi_{k:04d}", c.xi, tag).name
        entry["diagnostics"] = dict(c.diagnostics)
        entries.append(entry)
    manifest = {
        "archive_version": ARCHIVE_VERSION,
        "grid": {"L": traj.L, "nlat": traj.L + 1, "nlon": 2 * traj.L + 2,
                 "rule": "gauss-legendre x equispaced"},
        "r": traj.r,
        "volume0": traj.volume0,
        "tol_conv": traj.tol_conv,
        "dealias": traj.dealias,
        "converged": traj.converged,
        "events": list(traj.events),
        "flow": traj.config.to_dict(),
        "interpolation": dict(FlowTrajectory.interpolation),
        "checkpoints": entries,
        "run_config": run_config,
    }
    write_json(out / "manifest.json", manifest, config_hash)
    rows = [{"t": c.t, **c.diagnostics} for c in traj.checkpoints]
    write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS, rows, config_hash)
    return out


def load_trajectory(archive: str | Path) -> tuple[FlowTrajectory, dict]:
    """Inverse of :func:`save_trajectory`; flow velocities are recomputed from ``u``."""
    archive = Path(archive)
    path = archive / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"no trajectory archive at {archive}")
    manifest = json.loads(path.read_text())
    if manifest.get("archive_version") != ARCHIVE_VERSION:
        raise ConfigurationError(f"unsupported archive version in {path}")
    dealias = bool(manifest["dealias"])
    cps = []
    for entry in manifest["checkpoints"]:
        u = load_spectral(archive / entry["u"])
        xi = load_spectral(archive / entry["xi"]) if entry.get("xi") else None
        cps.append(FlowCheckpoint(float(entry["t"]), u, flow_rhs(ConformalMetric(u), dealias),
                                  dict(entry["diagnostics"]), xi))
    traj = FlowTrajectory(
        tuple(cps), float(manifest["r"]), float(manifest["volume0"]),
        float(manifest["tol_conv"]), dealias, bool(manifest["converged"]),
        tuple(manifest["events"]), FlowConfig(**manifest["flow"]),
    )
    return traj, manifest


def save_metric(stem: str | Path, m: ConformalMetric, description: str = "",
                config_hash: str | None = None) -> Path:
    """Store ``u`` in the coefficient format with a ``{volume, description}`` sidecar."""
    extra = {"volume": m.volume, "description": description}
    if config_hash:
        extra["config_hash"] = config_hash
    return save_spectral(stem, m.u, extra)


def load_metric(path: str | Path) -> ConformalMetric:
    return ConformalMetric(load_spectral(path))


def write_atlas_csv(path: str | Path, atlas, config_hash: str) -> Path:
    rows = []
    for i in range(len(atlas)):
        rows.append([*atlas.y[i], *atlas.x[i], *atlas.J[i].reshape(-1),
                     atlas.opnorm[i], "ok" if atlas.ok[i] else "failed"])
    return write_csv(path, ATLAS_COLUMNS, rows, config_hash)


# -- SVG ---------------------------------------------------------------------

# Fixed perceptual ramp (dark blue -> teal -> yellow), linearly interpolated.
_RAMP = np.array([
    [0.267, 0.005, 0.329],
    [0.230, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
])


def _color(s: float) -> str:
    s = min(max(s, 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(s), len(_RAMP) - 2)
    c = _RAMP[i] + (s - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(255 * v)) for v in c)


def svg_heatmap(path: str | Path, values: np.ndarray, title: str, config_hash: str,
                cell: int = 6) -> Path:
    """Equirectangular heatmap of grid values, shape ``(nlat, nlon)``, north up."""
    values = np.asarray(values, dtype=float)
    nlat, nlon = values.shape
    lo, hi = float(np.min(values)), float(np.max(values))
    span = hi - lo if hi > lo else 1.0
    w, h = nlon * cell, nlat * cell
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h + 30}">',
        f"<!-- config_hash: {config_hash} -->",
        f'<text x="4" y="14" font-size="12" font-family="monospace">{title} '
        f"[{lo:.4g}, {hi:.4g}]</text>",
        '<g transform="translate(0,20)" shape-rendering="crispEdges">',
    ]
    for i in range(nlat):
        for j in range(nlon):
            out.append(f'<rect x="{j * cell}" y="{i * cell}" width="{cell}" height="{cell}" '
                       f'fill="{_color((values[i, j] - lo) / span)}"/>')
    out += ["</g>", "</svg>", ""]
    Path(path).write_text("\n".join(out))
    return Path(path)


def svg_timeseries(path: str | Path, t: np.ndarray, series: dict, title: str,
                   config_hash: str, width: int = 640, height: int = 360) -> Path:
    """Log-scale line plot of positive series against ``t``."""
    t = np.asarray(t, dtype=float)
    palette = ("#1f4e9c", "#c0392b", "#27865f", "#8e44ad")
    pos = [np.asarray(v, dtype=float) for v in series.values()]
    allv = np.concatenate([v[v > 0] for v in pos]) if pos else np.array([1.0])
    if allv.size == 0:
        allv = np.array([1.0])
    ylo, yhi = math.log10(allv.min()), math.log10(allv.max())
    if yhi <= ylo:
        yhi = ylo + 1.0
    tlo, thi = float(t.min()), float(t.max()) if t.max() > t.min() else float(t.min()) + 1.0
    pad = 40

    def xy(tt, v):
        x = pad + (tt - tlo) / (thi - tlo) * (width - 2 * pad)
        y = height - pad - (math.log10(v) - ylo) / (yhi - ylo) * (height - 2 * pad)
        return f"{x:.2f},{y:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f"<!-- config_hash: {config_hash} -->",
        f'<text x="{pad}" y="20" font-size="12" font-family="monospace">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#888"/>',
        f'<text x="4" y="{pad + 10}" font-size="10" font-family="monospace">1e{yhi:.1f}</text>',
        f'<text x="4" y="{height - pad}" font-size="10" font-family="monospace">1e{ylo:.1f}</text>',
        f'<text x="{width - pad - 40}" y="{height - 10}" font-size="10" '
        f'font-family="monospace">t={thi:.3g}</text>',
    ]
    for k, (name, v) in enumerate(series.items()):
        v = np.asarray(v, dtype=float)
        keep = v > 0
        if keep.sum() >= 2:
            pts = " ".join(xy(a, b) for a, b in zip(t[keep], v[keep]))
            color = palette[k % len(palette)]
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            out.append(f'<text x="{width - 2 * pad - 100}" y="{pad + 15 + 14 * k}" font-size="11" '
                       f'fill="{color}" font-family="monospace">{name}</text>')
    out += ["</svg>", ""]
    Path(path).write_text("\n".join(out))
    return Path(path)
