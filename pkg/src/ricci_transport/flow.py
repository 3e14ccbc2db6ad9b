"""
Volume-normalized Ricci flow in conformal form, ``du/dt = (r - R) / 2``.

Explicit RK4 with a growth monitor, checkpointing, convergence detection and
the empirical curvature floor tracked along the trajectory.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CertificationError, ConfigurationError, FlowNotConverged, StepRejected
from .harmonics import SpectralField, analyze, build_grid, degree_of, gradient_can, synthesize
from .metric import ConformalMetric

log = logging.getLogger(__name__)

__all__ = [
    "FlowCheckpoint",
    "FlowConfig",
    "FlowTrajectory",
    "checkpoint_diagnostics",
    "continuity_residual",
    "fit_decay_rate",
    "flow_rhs",
    "hermite_weights",
    "lagrange_stencil",
    "run_flow",
    "step",
    "track_min_R",
]


@dataclass(frozen=True)
class FlowConfig:
    """Time-stepping controls.

    ``safety`` is the largest growth factor of ``sup|R - r|`` accepted in one
    step before the step is rejected and ``dt`` halved.  ``checkpoint_every``
    defaults to the number of steps spanning ``checkpoint_spacing``.
    """

    dt_init: float = 1e-2
    safety: float = 2.0
    t_max: float = 20.0
    tol_conv: float | None = None
    checkpoint_every: int | None = None
    checkpoint_spacing: float = 1e-2
    dealias: bool = True
    stability: float = 2.0
    max_halvings: int = 30

    def __post_init__(self):
        if not self.dt_init > 0:
            raise ConfigurationError("dt_init must be positive")
        if not self.t_max > 0:
            raise ConfigurationError("t_max must be positive")
        if self.tol_conv is not None and not self.tol_conv > 0:
            raise ConfigurationError("tol_conv must be positive")
        if not self.safety > 1:
            raise ConfigurationError("safety must exceed 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")

    def to_dict(self) -> dict:
        return {
            "dt_init": self.dt_init,
            "safety": self.safety,
            "t_max": self.t_max,
            "tol_conv": self.tol_conv,
            "checkpoint_every": self.checkpoint_every,
            "checkpoint_spacing": self.checkpoint_spacing,
            "dealias": self.dealias,
            "stability": self.stability,
            "max_halvings": self.max_halvings,
        }


@dataclass(frozen=True, eq=False)
class FlowCheckpoint:
    t: float
    u: SpectralField
    dudt: SpectralField
    diagnostics: dict
    xi: SpectralField | None = None


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    """Checkpointed curve ``t -> (u_t, xi_t)``.

    ``u`` is interpolated by cubic Hermite with the flow velocity as slope
    data; ``xi`` by the cubic through the four nearest checkpoints.
    """

    checkpoints: tuple
    r: float
    volume0: float
    tol_conv: float
    dealias: bool
    converged: bool = True
    events: tuple = ()
    config: FlowConfig = field(default_factory=FlowConfig)

    interpolation = {"u": "cubic-hermite", "xi": "lagrange-4"}

    @property
    def L(self) -> int:
        return self.checkpoints[0].u.L

    @property
    def times(self) -> np.ndarray:
        return np.array([c.t for c in self.checkpoints])

    @property
    def t_final(self) -> float:
        return self.checkpoints[-1].t

    @property
    def rho(self) -> float:
        return math.sqrt(self.volume0 / (4.0 * math.pi))

    @property
    def has_potentials(self) -> bool:
        return all(c.xi is not None for c in self.checkpoints)

    def metric(self, k: int) -> ConformalMetric:
        return ConformalMetric(self.checkpoints[k].u)

    def u_at(self, t: float) -> SpectralField:
        k, tau, h = _locate(self.times, t)
        if h == 0.0:
            return self.checkpoints[k].u
        w = hermite_weights(tau, h)
        a, b = self.checkpoints[k], self.checkpoints[k + 1]
        c = w[0] * a.u.coeffs + w[1] * a.dudt.coeffs + w[2] * b.u.coeffs + w[3] * b.dudt.coeffs
        return SpectralField(self.L, c)

    def xi_at(self, t: float) -> SpectralField:
        if not self.has_potentials:
            raise ConfigurationError("trajectory has no curvature potentials")
        times = self.times
        k, _, h = _locate(times, t)
        if h == 0.0:
            return self.checkpoints[k].xi
        idx, weights = lagrange_stencil(times, k, t)
        c = sum(w * self.checkpoints[i].xi.coeffs for i, w in zip(idx, weights))
        return SpectralField(self.L, c)

    def metric_at(self, t: float) -> ConformalMetric:
        return ConformalMetric(self.u_at(t))


def _locate(times: np.ndarray, t: float):
    """Interval index, normalized position and length for time ``t``."""
    if len(times) == 1 or t <= times[0]:
        return 0, 0.0, 0.0
    if t >= times[-1]:
        return len(times) - 1, 0.0, 0.0
    k = int(np.searchsorted(times, t, side="right")) - 1
    h = times[k + 1] - times[k]
    return k, (t - times[k]) / h, h


def hermite_weights(tau, h):
    """Cubic Hermite weights for ``(y_k, y'_k, y_{k+1}, y'_{k+1})``."""
    tau2 = tau * tau
    tau3 = tau2 * tau
    return (
        2 * tau3 - 3 * tau2 + 1,
        (tau3 - 2 * tau2 + tau) * h,
        -2 * tau3 + 3 * tau2,
        (tau3 - tau2) * h,
    )


def lagrange_stencil(times: np.ndarray, k: int, t):
    """Indices and weights of the cubic through the four checkpoints around interval ``k``."""
    n = len(times)
    lo = min(max(k - 1, 0), max(n - 4, 0))
    idx = list(range(lo, min(lo + 4, n)))
    nodes = times[idx]
    weights = []
    for i, ti in enumerate(nodes):
        w = 1.0
        for j, tj in enumerate(nodes):
            if j != i:
                w = w * (t - tj) / (ti - tj)
        weights.append(w)
    return idx, weights


def dealias_degree(L: int, dealias: bool) -> int:
    return (2 * L) // 3 if dealias else L


def flow_rhs(m: ConformalMetric, dealias: bool = True) -> SpectralField:
    """``(r - R) / 2`` in coefficient space, top third zeroed when dealiasing."""
    rhs = analyze(-0.5 * m.curvature_deviation, m.grid)
    lmax = dealias_degree(m.L, dealias)
    if lmax < m.L:
        rhs = rhs.truncated(lmax)
    return rhs


def step(
    m: ConformalMetric,
    dt: float,
    dealias: bool = True,
    safety: float | None = None,
    floor: float = 0.0,
) -> ConformalMetric:
    """One classical RK4 step.

    Raises ``StepRejected`` when ``sup|R - r|`` grows by more than ``safety``
    (and ends above ``floor``).
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    u0 = m.u
    k1 = flow_rhs(m, dealias)
    k2 = flow_rhs(ConformalMetric(u0 + 0.5 * dt * k1, m.grid), dealias)
    k3 = flow_rhs(ConformalMetric(u0 + 0.5 * dt * k2, m.grid), dealias)
    k4 = flow_rhs(ConformalMetric(u0 + dt * k3, m.grid), dealias)
    u1 = u0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    new = ConformalMetric(u1, m.grid)
    if safety is not None:
        before = m.sup_R_minus_r()
        after = new.sup_R_minus_r()
        if not np.isfinite(after) or (after > floor and after > safety * max(before, floor)):
            growth = after / before if before > 0 and np.isfinite(after) else math.inf
            raise StepRejected(
                f"sup|R-r| grew by {growth:.3g} in one step of dt={dt:.3g}", dt, growth
            )
    return new


def checkpoint_diagnostics(m: ConformalMetric, r: float) -> dict:
    return {
        "volume": m.volume,
        "r": m.r,
        "gauss_bonnet": m.integrate(m.R),
        "min_R": float(np.min(m.R)),
        "max_R": float(np.max(m.R)),
        "sup_R_minus_r": m.sup_R_minus_r(r),
        "sup_hess_xi": None,
    }


def _checkpoint(t: float, m: ConformalMetric, r: float, dealias: bool) -> FlowCheckpoint:
    return FlowCheckpoint(t, m.u, flow_rhs(m, dealias), checkpoint_diagnostics(m, r))


def run_flow(m0: ConformalMetric, cfg: FlowConfig | None = None) -> FlowTrajectory:
    """Integrate until ``sup|R - r| <= tol_conv``.

    Raises ``FlowNotConverged`` (carrying the partial trajectory) when ``t_max``
    is reached first.  Loss of positive curvature is recorded as an event.
    """
    cfg = cfg or FlowConfig()
    r = m0.r
    tol = cfg.tol_conv if cfg.tol_conv is not None else 1e-9 * r
    events = []
    if np.min(m0.R) <= 0:
        warnings.warn("initial metric does not have positive curvature", stacklevel=2)
        events.append({"kind": "nonpositive_initial_curvature", "t": 0.0,
                       "min_R": float(np.min(m0.R))})
    l1 = m0.u.coeffs[1:4]
    if np.max(np.abs(l1)) > 1e-12:
        log.info("initial conformal factor has l=1 content (neutral Moebius modes)")
        events.append({"kind": "l1_content", "t": 0.0, "amplitude": float(np.max(np.abs(l1)))})

    lmax = dealias_degree(m0.L, cfg.dealias)
    dt_stab = cfg.stability / (lmax * (lmax + 1) * float(np.max(np.exp(-2.0 * m0.u_grid))))
    dt = min(cfg.dt_init, dt_stab)
    every = cfg.checkpoint_every or max(1, int(round(cfg.checkpoint_spacing / dt)))

    checkpoints = [_checkpoint(0.0, m0, r, cfg.dealias)]
    m, t, n, halvings = m0, 0.0, 0, 0
    sign_lost = np.min(m0.R) <= 0
    sup = m0.sup_R_minus_r(r)
    while sup > tol:
        if t >= cfg.t_max - 1e-14:
            traj = FlowTrajectory(tuple(checkpoints), r, m0.volume, tol, cfg.dealias,
                                  converged=False, events=tuple(events), config=cfg)
            raise FlowNotConverged(
                f"sup|R-r| = {sup:.3e} > {tol:.3e} at t_max = {cfg.t_max}",
                trajectory=traj,
                diagnostics=checkpoints[-1].diagnostics,
            )
        h = min(dt, cfg.t_max - t)
        try:
            m_new = step(m, h, cfg.dealias, cfg.safety, floor=tol)
        except StepRejected as exc:
            halvings += 1
            if halvings > cfg.max_halvings:
                raise
            dt = 0.5 * dt
            log.info("step rejected at t=%.4g (%s); dt -> %.3g", t, exc, dt)
            events.append({"kind": "step_rejected", "t": t, "dt": dt})
            continue
        m, t, n = m_new, t + h, n + 1
        sup = m.sup_R_minus_r(r)
        if not sign_lost and np.min(m.R) <= 0:
            sign_lost = True
            events.append({"kind": "curvature_sign_loss", "t": t, "min_R": float(np.min(m.R))})
        if n % every == 0 or sup <= tol:
            checkpoints.append(_checkpoint(t, m, r, cfg.dealias))
    return FlowTrajectory(tuple(checkpoints), r, m0.volume, tol, cfg.dealias,
                          converged=True, events=tuple(events), config=cfg)


def track_min_R(traj: FlowTrajectory) -> float:
    """Empirical curvature floor: min of ``R_t`` over checkpoints and interval midpoints."""
    if not traj.checkpoints:
        raise ConfigurationError("empty trajectory")
    values = [c.diagnostics["min_R"] for c in traj.checkpoints]
    times = traj.times
    for a, b in zip(times[:-1], times[1:]):
        values.append(float(np.min(traj.metric_at(0.5 * (a + b)).R)))
    c_emp = min(values)
    if not c_emp > 0:
        raise CertificationError(
            f"curvature floor is not positive (min R = {c_emp:.4g}); no certificate possible"
        )
    return c_emp


def _derivative_weights(x0: float, nodes: np.ndarray) -> np.ndarray:
    """First-derivative weights of the interpolating polynomial (Fornberg)."""
    n = len(nodes)
    c = np.zeros((n, 2))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, 1)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, 1]


def time_derivative(times: np.ndarray, values: np.ndarray, width: int = 11) -> np.ndarray:
    """Derivative of sampled data from local polynomials on ``width`` nearest samples."""
    n = len(times)
    if n == 1:
        return np.zeros_like(values)
    width = min(width, n)
    out = np.empty_like(values)
    for i in range(n):
        lo = min(max(i - width // 2, 0), n - width)
        sl = slice(lo, lo + width)
        out[i] = _derivative_weights(times[i], times[sl]) @ values[sl]
    return out


def continuity_residual(traj: FlowTrajectory, f: SpectralField) -> dict:
    """Residuals of the continuity equation and its weak divergence form at checkpoints.

    ``rate`` compares ``d/dt int f dnu`` with ``int f (r - R) dnu``; ``weak``
    compares it with ``int <grad f, grad xi>_g dnu``.
    """
    if not traj.has_potentials:
        raise ConfigurationError("continuity residual needs curvature potentials")
    grid = build_grid(traj.L)
    f = f.resized(traj.L) if f.L != traj.L else f
    f_grid = synthesize(f, grid)
    grad_f = gradient_can(f, grid)
    masses, rate_terms, weak_terms, sups = [], [], [], []
    for c in traj.checkpoints:
        m = ConformalMetric(c.u, grid)
        masses.append(m.integrate(f_grid))
        rate_terms.append(-m.integrate(f_grid * m.curvature_deviation))
        # <grad f, grad xi>_g dnu equals the round pairing against dA in 2D
        weak_terms.append(float(np.sum(grad_f.dot(gradient_can(c.xi, grid)) * grid.area_weights)))
        sups.append(c.diagnostics["sup_R_minus_r"])
    times = traj.times
    deriv = time_derivative(times, np.array(masses))
    return {
        "t": times,
        "d_mass": deriv,
        "rate_term": np.array(rate_terms),
        "weak_term": np.array(weak_terms),
        "rate": np.abs(deriv - np.array(rate_terms)),
        "weak": np.abs(deriv - np.array(weak_terms)),
        "sup_R_minus_r": np.array(sups),
    }


def fit_decay_rate(traj: FlowTrajectory, upper: float = 1e-1, lower: float = 1e-3) -> float:
    """Least-squares slope of ``log sup|R - r|`` over the window ``[lower, upper] * initial``."""
    s = np.array([c.diagnostics["sup_R_minus_r"] for c in traj.checkpoints])
    t = traj.times
    s0 = s[0]
    mask = (s <= upper * s0) & (s >= lower * s0) & (s > 100 * traj.tol_conv)
    if mask.sum() < 3:
        raise ConfigurationError("not enough checkpoints inside the fitting window")
    slope, _ = np.polyfit(t[mask], np.log(s[mask]), 1)
    return float(slope)


def with_potentials(traj: FlowTrajectory, xis, sup_hess) -> FlowTrajectory:
    """Copy of ``traj`` with potentials and their Hessian diagnostics attached."""
    cps = []
    for c, xi, h in zip(traj.checkpoints, xis, sup_hess):
        diag = dict(c.diagnostics)
        diag["sup_hess_xi"] = h
        cps.append(replace(c, xi=xi, diagnostics=diag))
    return replace(traj, checkpoints=tuple(cps))


def l1_amplitude(u: SpectralField) -> float:
    return float(np.max(np.abs(u.coeffs[degree_of(u.L) == 1])))
