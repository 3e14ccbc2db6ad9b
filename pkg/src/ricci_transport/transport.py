"""
Flow map of the advection field ``grad_{g_t} xi_t`` and its inverse limit.

Characteristics are integrated in the ambient R^3 picture.  At every checkpoint
the velocity is stored as band-limited Cartesian "jets":

* ``u`` and the Cartesian components of ``grad_can u`` (Hermite in time, with
  the flow velocity as slope data);
* ``G = grad_can xi`` and ``DG[i, j] = d_j G_i`` (four-point cubic in time).

Then ``V = exp(-2u) G`` and its ambient derivative along tangent vectors is
``A = exp(-2u) (DG - 2 G (x) grad u)``.  Differentials are integrated as
``dJ/ds = A J`` jointly with the point, so ``J`` stays in globally defined
Cartesian coordinates and is only projected onto round orthonormal frames
at the two endpoints.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, IntegrationError
from .flow import FlowTrajectory, hermite_weights, lagrange_stencil
from .harmonics import SpectralField, cartesian_gradient, degree_of, evaluate, ncoef, point_basis

__all__ = [
    "KimMilmanMap",
    "TransportAtlas",
    "build_atlas",
    "default_sample_points",
    "differential",
    "fibonacci_points",
    "flow_backward",
    "lipschitz_measured",
    "tangent_frame",
]

DEFAULT_ODE_TOL = 1e-11
CHUNK = 512


def fibonacci_points(n: int) -> np.ndarray:
    """Quasi-uniform points on the unit sphere (golden-angle spiral)."""
    if n <= 0:
        return np.zeros((0, 3))
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    ang = math.pi * (3.0 - math.sqrt(5.0)) * k
    return np.stack([s * np.cos(ang), s * np.sin(ang), z], axis=1)


def tangent_frame(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Round orthonormal frame ``(e_theta, e_phi)``; ``(e_x, +/-e_y)`` exactly at a pole."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    rxy = np.hypot(p[:, 0], p[:, 1])
    pole = rxy < 1e-300
    safe = np.where(pole, 1.0, rxy)
    cphi = np.where(pole, 1.0, p[:, 0] / safe)
    sphi = np.where(pole, 0.0, p[:, 1] / safe)
    e_theta = np.stack([p[:, 2] * cphi, p[:, 2] * sphi, -rxy], axis=1)
    e_phi = np.stack([-sphi, cphi, np.zeros_like(cphi)], axis=1)
    return e_theta, e_phi


def _frame_matrix(points: np.ndarray) -> np.ndarray:
    e1, e2 = tangent_frame(points)
    return np.stack([e1, e2], axis=2)


def _effective_degree(stacks, L: int, tol: float) -> int:
    """Smallest degree whose discarded tail is below ``tol`` times the field size.

    By the addition theorem ``|sum_m c_lm Y_lm| <= |c_l| sqrt((2l+1)/4pi)``, so
    the summed per-degree bounds above the cut bound the pointwise truncation
    error of every stored row at every checkpoint.
    """
    deg = degree_of(L)
    growth = np.sqrt((2.0 * np.arange(L + 1) + 1.0) / (4.0 * math.pi))
    lmax = 1
    for s in stacks:
        rows = s.reshape(-1, s.shape[-1])
        energy = np.zeros((rows.shape[0], L + 1))
        np.add.at(energy.T, deg, (rows * rows).T)
        bound = np.sqrt(energy) * growth
        total = bound.sum(axis=1)
        tail = np.cumsum(bound[:, ::-1], axis=1)[:, ::-1]
        scale = total.max()
        if scale == 0:
            continue
        # tail[:, l] bounds everything of degree >= l; keep degrees below the first small tail.
        small = np.all(tail <= tol * scale, axis=0)
        cut = int(np.argmax(small)) if small.any() else L + 1
        lmax = max(lmax, cut - 1)
    return min(lmax, L)


class KimMilmanMap:
    """Discrete inverse flow map built from a converged trajectory with potentials.

    The per-interval RK4 substep counts are fixed once, on a probe set, from
    step-doubling error estimates; every sample then uses the same schedule,
    so the discrete map is a smooth function of the start point.
    """

    def __init__(
        self,
        traj: FlowTrajectory,
        ode_tol: float = DEFAULT_ODE_TOL,
        coeff_tol: float = 1e-11,
        max_subdivisions: int = 4096,
        probes: np.ndarray | None = None,
    ):
        if not traj.converged:
            raise ConfigurationError("trajectory did not converge")
        if not traj.has_potentials:
            raise ConfigurationError("trajectory has no curvature potentials")
        last = traj.checkpoints[-1].diagnostics["sup_R_minus_r"]
        if last > traj.tol_conv:
            raise ConfigurationError(
                f"final sup|R-r| = {last:.3e} exceeds tol_conv = {traj.tol_conv:.3e}"
            )
        self.traj = traj
        self.ode_tol = ode_tol
        self.max_subdivisions = max_subdivisions
        self.times = traj.times
        self.rho = traj.rho
        self._build_jets(coeff_tol)
        self.u_initial = traj.checkpoints[0].u
        self.u_final = traj.checkpoints[-1].u
        self.worst_error = 0.0
        self.schedule = self._build_schedule(
            fibonacci_points(96) if probes is None else np.asarray(probes, dtype=float)
        )

    # -- jets ---------------------------------------------------------------

    def _build_jets(self, tol: float):
        L = self.traj.L
        Lp = L + 2
        n = ncoef(Lp)
        K = len(self.traj.checkpoints)
        H = np.zeros((K, 4, n))
        Hs = np.zeros((K, 4, n))
        Lg = np.zeros((K, 12, n))
        for lo in range(0, K, 32):
            cps = self.traj.checkpoints[lo : lo + 32]
            u = SpectralField(L, np.stack([c.u.coeffs for c in cps]))
            du = SpectralField(L, np.stack([c.dudt.coeffs for c in cps]))
            xi = SpectralField(L, np.stack([c.xi.coeffs for c in cps]))
            sl = slice(lo, lo + len(cps))
            H[sl, 0, : ncoef(L)] = u.coeffs
            Hs[sl, 0, : ncoef(L)] = du.coeffs
            H[sl, 1:, : ncoef(L + 1)] = cartesian_gradient(u).coeffs
            Hs[sl, 1:, : ncoef(L + 1)] = cartesian_gradient(du).coeffs
            G = cartesian_gradient(xi)
            Lg[sl, :3, : ncoef(L + 1)] = G.coeffs
            Lg[sl, 3:, :] = cartesian_gradient(G).coeffs.reshape(len(cps), 9, n)
        lmax = _effective_degree([H[:, 1:], Hs, Lg], Lp, tol)
        k = ncoef(lmax)
        self.lmax = lmax
        self.H, self.Hs, self.Lg = H[..., :k].copy(), Hs[..., :k].copy(), Lg[..., :k].copy()

    def _coefficients(self, k: int, s: float, jac: bool):
        t0, t1 = self.times[k], self.times[k + 1]
        h = t1 - t0
        tau = (s - t0) / h
        w = hermite_weights(tau, h)
        rows = slice(None) if jac else slice(0, 1)
        hc = (
            w[0] * self.H[k, rows] + w[1] * self.Hs[k, rows]
            + w[2] * self.H[k + 1, rows] + w[3] * self.Hs[k + 1, rows]
        )
        idx, lw = lagrange_stencil(self.times, k, s)
        lrows = slice(None) if jac else slice(0, 3)
        lc = sum(wi * self.Lg[i, lrows] for i, wi in zip(idx, lw))
        return hc, lc

    def _rhs(self, k: int, s: float, X: np.ndarray, J: np.ndarray | None):
        hc, lc = self._coefficients(k, s, J is not None)
        B = point_basis(X, self.lmax)
        vals = B @ np.concatenate([hc, lc]).T
        hv, lv = vals[:, : len(hc)], vals[:, len(hc) :]
        damp = np.exp(-2.0 * hv[:, 0])
        G = lv[:, :3]
        V = damp[:, None] * G
        if J is None:
            return V, None
        DG = lv[:, 3:].reshape(-1, 3, 3)
        gu = hv[:, 1:4]
        A = damp[:, None, None] * (DG - 2.0 * G[:, :, None] * gu[:, None, :])
        return V, A @ J

    # -- integration --------------------------------------------------------

    def _interval(self, k: int, n: int, X, J, backward: bool):
        t0, t1 = self.times[k], self.times[k + 1]
        h = (t1 - t0) / n
        if backward:
            h = -h
        s = t1 if backward else t0
        for _ in range(n):
            if J is None:
                k1, _ = self._rhs(k, s, X, None)
                k2, _ = self._rhs(k, s + 0.5 * h, X + 0.5 * h * k1, None)
                k3, _ = self._rhs(k, s + 0.5 * h, X + 0.5 * h * k2, None)
                k4, _ = self._rhs(k, s + h, X + h * k3, None)
                X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            else:
                k1, l1 = self._rhs(k, s, X, J)
                k2, l2 = self._rhs(k, s + 0.5 * h, X + 0.5 * h * k1, J + 0.5 * h * l1)
                k3, l3 = self._rhs(k, s + 0.5 * h, X + 0.5 * h * k2, J + 0.5 * h * l2)
                k4, l4 = self._rhs(k, s + h, X + h * k3, J + h * l3)
                X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                J = J + (h / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
            X = X / np.linalg.norm(X, axis=1, keepdims=True)
            if J is not None:
                J = J - X[:, :, None] * np.einsum("ni,nij->nj", X, J)[:, None, :]
            s = s + h
        return X, J

    def _build_schedule(self, probes: np.ndarray) -> np.ndarray:
        K = len(self.times) - 1
        schedule = np.ones(K, dtype=int)
        if K == 0:
            return schedule
        X = probes / np.linalg.norm(probes, axis=1, keepdims=True)
        J = _frame_matrix(X)
        n = 1
        for k in range(K - 1, -1, -1):
            n = max(1, n // 2)
            while True:
                Xa, Ja = self._interval(k, n, X, J, backward=True)
                Xb, Jb = self._interval(k, 2 * n, X, J, backward=True)
                err = max(np.max(np.abs(Xa - Xb)), np.max(np.abs(Ja - Jb))) / 15.0
                if err <= self.ode_tol:
                    break
                if 2 * n > self.max_subdivisions:
                    raise IntegrationError(
                        f"interval {k} needs more than {self.max_subdivisions} substeps "
                        f"(local error {err:.2e} > {self.ode_tol:.2e})",
                        worst_error=err,
                    )
                n *= 2
            self.worst_error = max(self.worst_error, err)
            schedule[k] = n
            X, J = Xa, Ja
        return schedule

    def _run(self, points, jac: bool, backward: bool):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) > CHUNK:
            parts = [self._run_chunk(pts[i : i + CHUNK], jac, backward)
                     for i in range(0, len(pts), CHUNK)]
            X = np.concatenate([p[0] for p in parts])
            J = np.concatenate([p[1] for p in parts]) if jac else None
            return X, J
        return self._run_chunk(pts, jac, backward)

    def _run_chunk(self, X, jac: bool, backward: bool):
        X = X / np.linalg.norm(X, axis=1, keepdims=True)
        J = _frame_matrix(X) if jac else None
        K = len(self.times) - 1
        order = range(K - 1, -1, -1) if backward else range(K)
        for k in order:
            X, J = self._interval(k, int(self.schedule[k]), X, J, backward)
        return X, J

    def flow_backward(self, points) -> np.ndarray:
        """``S_{t_final}^{-1}(y)``: integrate characteristics from ``t_final`` back to 0."""
        return self._run(points, jac=False, backward=True)[0]

    def flow_forward(self, points) -> np.ndarray:
        """``S_{t_final}(x)``: integrate characteristics from 0 to ``t_final``."""
        return self._run(points, jac=False, backward=False)[0]

    def differential(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Image points and 2x2 differentials in round frames (source y -> target x)."""
        y = np.asarray(points, dtype=float).reshape(-1, 3)
        x, Jc = self._run(y, jac=True, backward=True)
        J = np.einsum("nia,nib->nab", _frame_matrix(x), Jc)
        return x, J

    def composed_norms(self, y: np.ndarray, x: np.ndarray, J: np.ndarray) -> np.ndarray:
        """Operator norms of ``dT`` composed with the dilation from the unit sphere.

        Source vectors are measured in ``g_{t_final}`` (the round limit of radius
        ``rho``), targets in ``g_0``: ``rho * exp(u_0(x) - u_final(y)) * |J|``.
        """
        if len(y) == 0:
            return np.zeros(0)
        sv = np.linalg.svd(J, compute_uv=False)[:, 0]
        u0 = evaluate(self.u_initial, x)
        uf = evaluate(self.u_final, y)
        return self.rho * np.exp(u0 - uf) * sv


def _as_map(obj, ode_tol=None) -> KimMilmanMap:
    if isinstance(obj, KimMilmanMap):
        return obj
    return KimMilmanMap(obj, ode_tol=DEFAULT_ODE_TOL if ode_tol is None else ode_tol)


def flow_backward(traj, y, ode_tol: float | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = _as_map(traj, ode_tol).flow_backward(y.reshape(-1, 3))
    return out.reshape(y.shape)


def differential(traj, y, ode_tol: float | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    _, J = _as_map(traj, ode_tol).differential(y.reshape(-1, 3))
    return J.reshape(y.shape[:-1] + (2, 2))


@dataclass(frozen=True, eq=False)
class TransportAtlas:
    """Sampled evaluations of the Kim-Milman map and its differential."""

    y: np.ndarray
    x: np.ndarray
    J: np.ndarray
    opnorm: np.ndarray
    ok: np.ndarray
    rho: float
    ode_tol: float
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def status(self) -> list[str]:
        return ["ok" if k else "failed" for k in self.ok]


def default_sample_points(grid_L: int | None, n_quasi: int = 10_000) -> np.ndarray:
    """Quadrature nodes of the ``grid_L`` grid followed by ``n_quasi`` spiral points."""
    from .harmonics import build_grid

    parts = []
    if grid_L is not None:
        parts.append(build_grid(grid_L).points.reshape(-1, 3))
    parts.append(fibonacci_points(n_quasi))
    return np.concatenate(parts)


def build_atlas(traj, points, threads: int | None = None, ode_tol: float | None = None,
                manifest: dict | None = None) -> TransportAtlas:
    """Evaluate ``T`` and ``dT`` at ``points`` in fixed-size chunks.

    Chunks are independent and may run on a thread pool; results are
    reassembled in sample order, so the output does not depend on ``threads``.
    """
    km = _as_map(traj, ode_tol)
    y = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(y):
        y = y / np.linalg.norm(y, axis=1, keepdims=True)
    chunks = [y[i : i + CHUNK] for i in range(0, len(y), CHUNK)]

    def work(chunk):
        with np.errstate(all="ignore"):
            x, J = km.differential(chunk)
        return x, J

    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    if results:
        x = np.concatenate([r[0] for r in results])
        J = np.concatenate([r[1] for r in results])
    else:
        x, J = np.zeros((0, 3)), np.zeros((0, 2, 2))
    ok = np.all(np.isfinite(x), axis=1) & np.all(np.isfinite(J), axis=(1, 2))
    opnorm = np.full(len(y), np.nan)
    if ok.any():
        opnorm[ok] = km.composed_norms(y[ok], x[ok], J[ok])
    return TransportAtlas(y, x, J, opnorm, ok, km.rho, km.ode_tol, dict(manifest or {}))


def lipschitz_measured(atlas: TransportAtlas) -> float:
    """Largest sampled operator norm of ``dT`` composed with the dilation."""
    if not atlas.ok.any():
        raise ConfigurationError("atlas has no successful samples")
    return float(np.max(atlas.opnorm[atlas.ok]))
