"""
Command-line driver: ``ricci-transport <flow|transport|certify|verify|report|sweep>``.

Failures print a JSON object ``{"error": ..., "message": ...}`` on stderr and
exit nonzero: 2 for missing inputs or bad configuration, 3 for numerical
failures reported by the library.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import __version__
from .certify import (
    MONOTONE_COLUMNS,
    certify,
    checkpoint_tensors,
    hessian_decay_monitor,
    monotonicity_table,
)
from .config import PRESETS, RunConfig, config_hash, initial_metric, load_config, preset
from .errors import ConfigurationError, FlowNotConverged, RicciTransportError
from .flow import fit_decay_rate, run_flow
from .harmonics import build_grid, synthesize
from .io import (
    dumps_json,
    load_trajectory,
    save_trajectory,
    svg_heatmap,
    svg_timeseries,
    write_atlas_csv,
    write_csv,
    write_json,
)
from .metric import ConformalMetric, hessian_g, max_abs_eigenvalue_rel
from .potential import fill_potentials
from .transport import KimMilmanMap, build_atlas, fibonacci_points
from .verification import lichnerowicz_report, linearized_decay_oracle, pushforward_test

log = logging.getLogger("ricci_transport")

THREADS_ENV = "RICCI_TRANSPORT_THREADS"
DEFAULT_LADDER = (0.005, 0.01, 0.02, 0.05)


def resolve_threads(value: int | None) -> int:
    """Explicit value, else the environment variable, else 1."""
    if value is not None:
        return max(1, int(value))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return 1


def sample_points(cfg: RunConfig) -> np.ndarray:
    """Grid nodes of bandlimit ``L`` followed by a seeded rotation of a spiral point set."""
    grid = build_grid(cfg.L).points.reshape(-1, 3)
    spiral = fibonacci_points(cfg.n_quasi)
    rot = Rotation.random(random_state=cfg.seed).as_matrix()
    return np.concatenate([grid, spiral @ rot.T])


# -- pipeline ------------------------------------------------------------------

def compute_trajectory(cfg: RunConfig):
    """Initial metric, flow to convergence, and potentials at every checkpoint."""
    return fill_potentials(run_flow(initial_metric(cfg), cfg.flow))


def compute_atlas(traj, cfg: RunConfig, threads: int = 1, kmap: KimMilmanMap | None = None):
    kmap = kmap or KimMilmanMap(traj, ode_tol=cfg.ode_tol)
    manifest = {"samples": "grid nodes then seeded spiral", "n_quasi": cfg.n_quasi,
                "seed": cfg.seed, "L": cfg.L}
    return build_atlas(kmap, sample_points(cfg), threads=threads, manifest=manifest)


def compute_certificate(traj, cfg: RunConfig, measure: bool = True, threads: int = 1):
    atlas = compute_atlas(traj, cfg, threads) if measure else None
    prov = {"config_hash": config_hash(cfg), "ode_tol": cfg.ode_tol}
    return certify(traj, atlas, provenance=prov)


# -- argument handling -----------------------------------------------------------

def _config_from_args(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset, v=args.v, eps=args.eps, L=args.L)
    updates = {}
    if getattr(args, "out", None):
        updates["out_dir"] = args.out
    if getattr(args, "svg", False):
        updates["emit_svg"] = True
    if getattr(args, "n_quasi", None) is not None:
        updates["n_quasi"] = args.n_quasi
    return cfg.with_updates(**updates) if updates else cfg


def _load_archive(path: str):
    traj, manifest = load_trajectory(path)
    rc = manifest.get("run_config")
    cfg = RunConfig.from_dict(rc) if rc else RunConfig(volume=traj.volume0, L=traj.L)
    return traj, cfg.with_updates(out_dir=str(path)), manifest["config_hash"]


def _emit(obj) -> None:
    sys.stdout.write(dumps_json(obj))


def cmd_flow(args) -> int:
    cfg = _config_from_args(args)
    h = config_hash(cfg)
    traj = compute_trajectory(cfg)
    out = save_trajectory(cfg.out_dir, traj, h, cfg.to_dict())
    write_json(out / "config.json", cfg.to_dict(), h)
    _emit({"archive": str(out), "config_hash": h, "t_final": traj.t_final,
           "checkpoints": len(traj.checkpoints), "events": list(traj.events)})
    return 0


def cmd_transport(args) -> int:
    traj, cfg, h = _load_archive(args.archive)
    if args.n_quasi is not None:
        cfg = cfg.with_updates(n_quasi=args.n_quasi)
        h = config_hash(cfg)
    atlas = compute_atlas(traj, cfg, resolve_threads(args.threads))
    path = write_atlas_csv(Path(args.archive) / "atlas.csv", atlas, h)
    _emit({"atlas": str(path), "samples": len(atlas), "failed": int((~atlas.ok).sum()),
           "lipschitz_measured": float(np.nanmax(atlas.opnorm)) if atlas.ok.any() else None,
           "config_hash": h})
    return 0


def cmd_certify(args) -> int:
    traj, cfg, h = _load_archive(args.archive)
    if args.n_quasi is not None:
        cfg = cfg.with_updates(n_quasi=args.n_quasi)
        h = config_hash(cfg)
    cert = compute_certificate(traj, cfg, measure=args.measure,
                               threads=resolve_threads(args.threads))
    path = write_json(Path(args.archive) / "certificate.json", cert.to_dict(), h)
    _emit({"certificate": str(path), **cert.to_dict()})
    return 0


def cmd_verify(args) -> int:
    traj, cfg, h = _load_archive(args.archive)
    push = pushforward_test(traj)
    m0 = ConformalMetric(traj.checkpoints[0].u)
    lich = lichnerowicz_report(m0)
    monitor = hessian_decay_monitor(traj)
    monitor_ok = monitor.verdict
    report = {
        "pushforward": push.to_dict(),
        "lichnerowicz": {"lambda1": lich.lambda1, "min_R": lich.min_R, "L_eig": lich.L_eig,
                         "skipped": lich.skipped, "notice": lich.notice, "holds": lich.holds},
        "hessian_decay_monitor": {"C": monitor.C, "verdict": monitor_ok,
                                  "first_violation": monitor.first_violation},
    }
    modes = {(l, m) for l, m, a in cfg.perturbation if a != 0}
    degrees = {l for l, _ in modes}
    if len(modes) == 1 and min(degrees) >= 2:
        (l,) = degrees
        rate = fit_decay_rate(traj)
        oracle = linearized_decay_oracle(l, traj.r)
        report["decay_rate"] = {"fitted": rate, "oracle": oracle, "degree": l,
                                "relative_error": abs(rate - oracle) / abs(oracle)}
    out = Path(args.archive)
    write_json(out / "verification.json", report, h)
    rows = [{"check": f"pushforward:{k}", "value": v} for k, v in push.errors.items()]
    rows.append({"check": "lichnerowicz_lambda1", "value": lich.lambda1})
    rows.append({"check": "hessian_decay_monitor", "value": monitor_ok})
    if "decay_rate" in report:
        rows.append({"check": "decay_rate_relative_error",
                     "value": report["decay_rate"]["relative_error"]})
    write_csv(out / "verification.csv", ("check", "value"), rows, h)
    _emit(report)
    return 0


def cmd_report(args) -> int:
    traj, cfg, h = _load_archive(args.archive)
    out = Path(args.archive)
    tensors = checkpoint_tensors(traj)
    rows = [
        {"t": c.t, "sup_R_minus_r": c.diagnostics["sup_R_minus_r"],
         "min_R": c.diagnostics["min_R"], "lambda_dot": tr.lambda_dot,
         "sup_hess_xi": tr.sup_hess_xi, "sup_M": tr.sup_M}
        for c, tr in zip(traj.checkpoints, tensors)
    ]
    cols = ("t", "sup_R_minus_r", "min_R", "lambda_dot", "sup_hess_xi", "sup_M")
    write_csv(out / "report.csv", cols, rows, h)
    files = [str(out / "report.csv")]
    if args.svg or cfg.emit_svg:
        for k in sorted({0, len(traj.checkpoints) // 2}):
            c = traj.checkpoints[k]
            m = ConformalMetric(c.u)
            tag = f"{k:04d}"
            fields = {
                "R": m.R,
                "xi": synthesize(c.xi, m.grid),
                "hess_xi": max_abs_eigenvalue_rel(m, hessian_g(m, c.xi)),
            }
            for name, vals in fields.items():
                p = svg_heatmap(out / f"{name}_{tag}.svg", vals, f"{name} t={c.t:.4g}", h)
                files.append(str(p))
        p = svg_timeseries(out / "timeseries.svg", np.array([r["t"] for r in rows]),
                           {"lambda_dot": [r["lambda_dot"] for r in rows],
                            "sup|R-r|": [r["sup_R_minus_r"] for r in rows]},
                           "lambda_dot and sup|R - r|", h)
        files.append(str(p))
    _emit({"files": files, "config_hash": h})
    return 0


def cmd_sweep(args) -> int:
    base = _config_from_args(args)
    eps_list = [float(e) for e in args.eps_list] if args.eps_list else list(DEFAULT_LADDER)
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    certs = []
    threads = resolve_threads(args.threads)
    for e in eps_list:
        cfg = preset(args.preset, v=base.volume, eps=e, L=base.L)
        traj = compute_trajectory(cfg)
        certs.append(compute_certificate(traj, cfg, measure=args.measure, threads=threads))
    table = monotonicity_table(eps_list, certs)
    sweep_cfg = {"preset": args.preset, "v": base.volume, "L": base.L, "eps": sorted(eps_list),
                 "measure": bool(args.measure)}
    h = config_hash(base.with_updates(perturbation=(), name=f"sweep:{args.preset}",
                                      eps=None, n_quasi=base.n_quasi if args.measure else 0))
    h = hashlib.sha256((h + json.dumps(sweep_cfg, sort_keys=True)).encode()).hexdigest()
    write_csv(out / "sweep.csv", MONOTONE_COLUMNS, table["rows"], h)
    write_json(out / "sweep.json", {"sweep": sweep_cfg, **table}, h)
    _emit({"sweep": sweep_cfg, **table, "config_hash": h})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ricci-transport", allow_abbrev=False,
                                description="Ricci-flow transport maps on the sphere.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_opts(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--preset", default="y20", choices=sorted(PRESETS))
        sp.add_argument("--v", type=float, default=2.0 * math.pi, help="total volume")
        sp.add_argument("--eps", type=float, default=0.05, help="perturbation amplitude")
        sp.add_argument("--L", type=int, default=32, help="bandlimit")
        sp.add_argument("--out", help="output directory")

    def archive_opt(sp):
        sp.add_argument("--archive", required=True, help="trajectory archive directory")

    sp = sub.add_parser("flow", help="run the flow and write a trajectory archive")
    run_opts(sp)
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("transport", help="sample the transport map and its differential")
    archive_opt(sp)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--n-quasi", type=int, dest="n_quasi")
    sp.set_defaults(func=cmd_transport)

    sp = sub.add_parser("certify", help="write the contraction certificate")
    archive_opt(sp)
    sp.add_argument("--measure", action="store_true", help="also sample the map's Lipschitz constant")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--n-quasi", type=int, dest="n_quasi")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("verify", help="pushforward, Lichnerowicz and decay-rate checks")
    archive_opt(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("report", help="time-series CSV and optional SVG figures")
    archive_opt(sp)
    sp.add_argument("--svg", action="store_true")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("sweep", help="certificates over an amplitude ladder")
    run_opts(sp)
    sp.add_argument("--eps-list", nargs="+", type=float, dest="eps_list")
    sp.add_argument("--measure", action="store_true")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_sweep)
    return p


def _error(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, FlowNotConverged):
        payload["diagnostics"] = exc.diagnostics
    sys.stderr.write(dumps_json(payload))
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except (FileNotFoundError, ConfigurationError) as exc:
        return _error(exc, 2)
    except RicciTransportError as exc:
        return _error(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
