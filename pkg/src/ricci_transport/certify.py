"""
Lipschitz certificate for the transport map built from the normalized flow.

The per-time rate ``lambda_dot`` is the smallest nonnegative constant with
``2 Hess_g xi + (R - r) g >= -lambda_dot g``.  The a priori route bounds the
same tensor by ``6 Lambda exp(-C t)`` with ``Lambda`` the larger of the initial
sup-norms of ``Hess xi`` and ``M = Hess xi - (R - r) g / 2``.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import CertificationError, ConfigurationError
from .flow import FlowTrajectory, track_min_R
from .harmonics import SpectralField
from .metric import (
    ConformalMetric,
    SymmetricBilinearField,
    hessian_g,
    max_abs_eigenvalue_rel,
    metric_components,
    min_eigenvalue_rel,
)

__all__ = [
    "CheckpointTensors",
    "ContractionCertificate",
    "DecayMonitor",
    "M_field",
    "certify",
    "checkpoint_tensors",
    "condition12_threshold",
    "hessian_decay_monitor",
    "lambda_dot",
    "lambda_dot_forms",
    "monotonicity_table",
    "trajectory_hash",
]

FORM_TOL = 1e-10
SLACK = 0.05


def M_field(m: ConformalMetric, xi: SpectralField) -> SymmetricBilinearField:
    """``M = Hess_g xi - (R - r) g / 2``; its ``g``-trace is ``Lap_g xi - (R - r)``."""
    return hessian_g(m, xi) - metric_components(m).scaled(0.5 * m.curvature_deviation)


def lambda_dot_forms(m: ConformalMetric, xi: SpectralField, r: float | None = None):
    """Rate from the bilinear-form inequality and from its Ricci rewriting.

    Returns ``(proposition_form, corollary_form)``.  The first is
    ``max(0, -min eig(2 Hess xi + (R - r) g))``, the second
    ``max(0, r - 2 min eig(Hess xi + Ric))`` with ``Ric = (R/2) g``.
    """
    r = m.r if r is None else r
    h = hessian_g(m, xi)
    g = metric_components(m)
    prop = min_eigenvalue_rel(m, h.scaled(2.0) + g.scaled(m.curvature_deviation + (m.r - r)))
    cor = min_eigenvalue_rel(m, h + g.scaled(0.5 * m.R))
    return max(0.0, -float(np.min(prop))), max(0.0, r - 2.0 * float(np.min(cor)))


def _checked_rate(m: ConformalMetric, xi: SpectralField, r: float, t: float) -> float:
    prop, cor = lambda_dot_forms(m, xi, r)
    if abs(prop - cor) > FORM_TOL * max(1.0, abs(prop)):
        raise CertificationError(
            f"lambda_dot forms disagree at t={t:.6g}: {prop!r} vs {cor!r}"
        )
    return prop


def lambda_dot(traj: FlowTrajectory, t: float) -> float:
    """Smallest admissible nonnegative ``lambda_dot`` at time ``t``.

    Between checkpoints the metric and potential are interpolated in time.
    """
    if not traj.has_potentials:
        raise ConfigurationError("trajectory has no curvature potentials")
    times = traj.times
    hit = np.nonzero(np.isclose(times, t, rtol=0.0, atol=1e-14))[0]
    if hit.size:
        c = traj.checkpoints[int(hit[0])]
        return _checked_rate(ConformalMetric(c.u), c.xi, traj.r, t)
    return _checked_rate(traj.metric_at(t), traj.xi_at(t), traj.r, t)


@dataclass(frozen=True)
class CheckpointTensors:
    """Per-checkpoint sup-norms and rates used by the certificate."""

    t: float
    sup_hess_xi: float
    sup_M: float
    lambda_dot: float
    lambda_dot_corollary: float


def _tensors_at(c, r: float) -> CheckpointTensors:
    m = ConformalMetric(c.u)
    h = hessian_g(m, c.xi)
    Mf = h - metric_components(m).scaled(0.5 * m.curvature_deviation)
    prop, cor = lambda_dot_forms(m, c.xi, r)
    return CheckpointTensors(
        t=float(c.t),
        sup_hess_xi=float(np.max(max_abs_eigenvalue_rel(m, h))),
        sup_M=float(np.max(max_abs_eigenvalue_rel(m, Mf))),
        lambda_dot=prop,
        lambda_dot_corollary=cor,
    )


def checkpoint_tensors(traj: FlowTrajectory, threads: int | None = None) -> list[CheckpointTensors]:
    """Evaluate every checkpoint independently; results come back in checkpoint order."""
    if not traj.has_potentials:
        raise ConfigurationError("trajectory has no curvature potentials")
    cps = traj.checkpoints
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _tensors_at(c, traj.r), cps))
    else:
        rows = [_tensors_at(c, traj.r) for c in cps]
    for row in rows:
        if abs(row.lambda_dot - row.lambda_dot_corollary) > FORM_TOL * max(1.0, row.lambda_dot):
            raise CertificationError(
                f"lambda_dot forms disagree at t={row.t:.6g}: "
                f"{row.lambda_dot!r} vs {row.lambda_dot_corollary!r}"
            )
    return rows


@dataclass(frozen=True)
class DecayMonitor:
    """Sup-norm series of ``Hess xi`` and ``M`` against ``initial * exp(-C t)``."""

    t: np.ndarray
    sup_hess_xi: np.ndarray
    sup_M: np.ndarray
    C: float
    slack: float
    verdict: bool
    first_violation: float | None = None

    def envelope(self) -> tuple[np.ndarray, np.ndarray]:
        decay = np.exp(-self.C * self.t)
        return self.sup_hess_xi[0] * decay, self.sup_M[0] * decay


def _monitor_from_rows(rows, C: float, slack: float) -> DecayMonitor:
    t = np.array([r.t for r in rows])
    hx = np.array([r.sup_hess_xi for r in rows])
    mx = np.array([r.sup_M for r in rows])
    decay = np.exp(-C * t)
    # Round-off floor, so an identically vanishing series is not judged on noise.
    floor = 1e-10 * max(1.0, hx[0], mx[0])
    bad = (hx > (1.0 + slack) * hx[0] * decay + floor) | (mx > (1.0 + slack) * mx[0] * decay + floor)
    first = float(t[np.argmax(bad)]) if bad.any() else None
    return DecayMonitor(t, hx, mx, C, slack, not bool(bad.any()), first)


def hessian_decay_monitor(
    traj: FlowTrajectory, C: float | None = None, slack: float = SLACK,
    threads: int | None = None,
) -> DecayMonitor:
    """Check ``sup|Hess xi_t| <= sup|Hess xi_0| exp(-C t)`` (and the same for ``M``)."""
    C = track_min_R(traj) if C is None else C
    if not C > 0:
        raise CertificationError(f"curvature floor C = {C:.4g} is not positive")
    return _monitor_from_rows(checkpoint_tensors(traj, threads), C, slack)


def condition12_threshold(C: float, v: float) -> float:
    """Largest ``Lambda`` for which ``rho exp(3 Lambda / C) <= 1``: ``(C/6) log(4 pi / v)``."""
    return C / 6.0 * math.log(4.0 * math.pi / v)


def trajectory_hash(traj: FlowTrajectory) -> str:
    """SHA-256 over checkpoint times and coefficient bytes (little-endian float64)."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(traj.times, dtype="<f8").tobytes())
    for c in traj.checkpoints:
        h.update(np.ascontiguousarray(c.u.coeffs, dtype="<f8").tobytes())
        if c.xi is not None:
            h.update(np.ascontiguousarray(c.xi.coeffs, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class ContractionCertificate:
    C: float
    Lambda: float
    lambda_dot_integral: float
    lambda_dot_trapezoid: float
    lambda_dot_tail: float
    rho: float
    volume: float
    bound_paper: float
    bound_flowwise: float
    bound_flowwise_half: float
    condition12: bool
    condition12_threshold: float
    measured: float | None
    t_final: float
    lambda_dot_initial: float
    decay_monitor_verdict: bool
    provenance: dict = field(default_factory=dict)

    @property
    def bound_min(self) -> float:
        return min(self.bound_paper, self.bound_flowwise, self.bound_flowwise_half)

    def ordering_holds(self, slack: float = SLACK) -> bool:
        """``measured <= rho e^{I/2} <= rho e^{I}`` and ``rho e^{I/2} <= bound_paper``.

        Measured-versus-bound comparisons use the multiplicative slack.
        """
        ok = self.bound_flowwise_half <= self.bound_flowwise
        ok &= self.bound_flowwise_half <= (1.0 + slack) * self.bound_paper
        if self.measured is not None:
            ok &= self.measured <= (1.0 + slack) * self.bound_min
        return bool(ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound_flowwise_variants"] = {
            "exp_integral": self.bound_flowwise,
            "exp_half_integral": self.bound_flowwise_half,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def certify(
    traj: FlowTrajectory,
    atlas=None,
    threads: int | None = None,
    provenance: dict | None = None,
) -> ContractionCertificate:
    """Assemble the certificate; ``atlas`` (a ``TransportAtlas``) fills ``measured``.

    Raises ``CertificationError`` when the curvature floor is not positive.
    """
    if not traj.has_potentials:
        raise ConfigurationError("trajectory has no curvature potentials")
    C = track_min_R(traj)
    rows = checkpoint_tensors(traj, threads)
    Lam = max(rows[0].sup_hess_xi, rows[0].sup_M)
    times = traj.times
    rates = np.array([r.lambda_dot for r in rows])
    trap = float(np.sum(0.5 * (rates[1:] + rates[:-1]) * np.diff(times))) if len(rows) > 1 else 0.0
    tail = 6.0 * Lam * math.exp(-C * traj.t_final) / C
    integral = trap + tail
    rho = traj.rho
    threshold = condition12_threshold(C, traj.volume0)
    monitor = _monitor_from_rows(rows, C, SLACK)
    measured = None
    if atlas is not None:
        from .transport import lipschitz_measured

        measured = lipschitz_measured(atlas)
    grid_L = traj.L
    prov = {
        "trajectory_hash": trajectory_hash(traj),
        "grid": {"L": grid_L, "nlat": grid_L + 1, "nlon": 2 * grid_L + 2,
                 "rule": "gauss-legendre x equispaced"},
        "tol_conv": traj.tol_conv,
        "checkpoints": len(rows),
        "flow": traj.config.to_dict(),
    }
    if atlas is not None:
        prov["atlas"] = {"samples": int(len(atlas)), "failed": int((~atlas.ok).sum()),
                         "ode_tol": atlas.ode_tol}
    if provenance:
        prov.update(provenance)
    return ContractionCertificate(
        C=C,
        Lambda=Lam,
        lambda_dot_integral=integral,
        lambda_dot_trapezoid=trap,
        lambda_dot_tail=tail,
        rho=rho,
        volume=traj.volume0,
        bound_paper=rho * math.exp(3.0 * Lam / C),
        bound_flowwise=rho * math.exp(integral),
        bound_flowwise_half=rho * math.exp(0.5 * integral),
        condition12=bool(Lam <= threshold),
        condition12_threshold=threshold,
        measured=measured,
        t_final=traj.t_final,
        lambda_dot_initial=float(rates[0]),
        decay_monitor_verdict=monitor.verdict,
        provenance=prov,
    )


def perturb_potential(traj: FlowTrajectory, k: int, delta: SpectralField) -> FlowTrajectory:
    """Copy of ``traj`` with ``delta`` added to the potential at checkpoint ``k``."""
    cps = list(traj.checkpoints)
    cps[k] = replace(cps[k], xi=cps[k].xi + delta)
    return replace(traj, checkpoints=tuple(cps))


MONOTONE_COLUMNS = ("eps", "Lambda", "C", "Lambda_over_eps", "lambda_dot_integral",
                    "bound_paper", "bound_flowwise_half", "condition12")


def monotonicity_table(eps, certs) -> dict:
    """Rows of the epsilon ladder plus the monotonicity verdicts."""
    order = np.argsort(eps)
    eps = [float(eps[i]) for i in order]
    certs = [certs[i] for i in order]
    rows = [
        {
            "eps": e,
            "Lambda": c.Lambda,
            "C": c.C,
            "Lambda_over_eps": c.Lambda / e if e > 0 else float("nan"),
            "lambda_dot_integral": c.lambda_dot_integral,
            "bound_paper": c.bound_paper,
            "bound_flowwise_half": c.bound_flowwise_half,
            "condition12": c.condition12,
        }
        for e, c in zip(eps, certs)
    ]
    lam = [r["Lambda"] for r in rows]
    cs = [r["C"] for r in rows]
    ratio = [r["Lambda_over_eps"] for r in rows]
    return {
        "rows": rows,
        "Lambda_nondecreasing": all(b >= a for a, b in zip(lam, lam[1:])),
        "C_nonincreasing": all(b <= a for a, b in zip(cs, cs[1:])),
        "Lambda_over_eps_max": max(ratio) if ratio else float("nan"),
        "Lambda_over_eps_spread": (max(ratio) / min(ratio)) if ratio and min(ratio) > 0 else float("inf"),
    }
