"""
Conformal metrics ``g = exp(2u) g_can`` on the unit sphere.

Every tensor is carried in the round orthonormal frame ``(e_theta, e_phi)``,
where ``g`` is ``exp(2u)`` times the identity; relative eigenvalues then reduce
to a 2x2 symmetric problem after one scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .harmonics import (
    SpectralField,
    SphereGrid,
    TangentVectorField,
    build_grid,
    gradient_can,
    integrate,
    laplacian_can,
    phi_derivative,
    synthesize,
    _synthesize_table,
    _coeffs_for_grid,
)

__all__ = [
    "ConformalMetric",
    "SymmetricBilinearField",
    "gradient_g",
    "hessian_can",
    "hessian_g",
    "laplacian_g",
    "max_abs_eigenvalue_rel",
    "mean_curvature_r",
    "metric_components",
    "min_eigenvalue_rel",
    "scalar_curvature",
    "trace_rel",
    "volume",
]


@dataclass(frozen=True, eq=False)
class SymmetricBilinearField:
    """Symmetric 2-tensor at grid nodes, components in the round orthonormal frame."""

    grid: SphereGrid
    tt: np.ndarray
    tp: np.ndarray
    pp: np.ndarray

    def __add__(self, other):
        return SymmetricBilinearField(
            self.grid, self.tt + other.tt, self.tp + other.tp, self.pp + other.pp
        )

    def __sub__(self, other):
        return SymmetricBilinearField(
            self.grid, self.tt - other.tt, self.tp - other.tp, self.pp - other.pp
        )

    def scaled(self, factor) -> "SymmetricBilinearField":
        return SymmetricBilinearField(
            self.grid, self.tt * factor, self.tp * factor, self.pp * factor
        )

    def matrices(self) -> np.ndarray:
        """Per-node 2x2 component matrices, shape ``grid.shape + (2, 2)``."""
        return np.stack(
            [np.stack([self.tt, self.tp], -1), np.stack([self.tp, self.pp], -1)], -2
        )


class ConformalMetric:
    """The metric ``exp(2u) g_can`` with grid caches of ``u``, ``exp(2u)`` and ``R``.

    Immutable after construction; all caches are built eagerly.
    """

    def __init__(self, u: SpectralField, grid: SphereGrid | None = None):
        self.u = u
        self.grid = grid or build_grid(u.L)
        self.u_grid = synthesize(u, self.grid)
        self.conformal = np.exp(2.0 * self.u_grid)
        self.lap_u_grid = synthesize(laplacian_can(u), self.grid)
        self.R = np.exp(-2.0 * self.u_grid) * (2.0 - 2.0 * self.lap_u_grid)
        self.volume = integrate(self.conformal, None, self.grid)
        self.r = 8.0 * math.pi / self.volume
        self.curvature_deviation = _curvature_deviation(u, self.grid, self.u_grid)
        for arr in (self.u_grid, self.conformal, self.lap_u_grid, self.R,
                    self.curvature_deviation):
            arr.flags.writeable = False

    @property
    def L(self) -> int:
        return self.u.L

    @property
    def rho(self) -> float:
        return math.sqrt(self.volume / (4.0 * math.pi))

    def integrate(self, f) -> float:
        """Integral against the Riemannian volume measure of this metric."""
        return integrate(f, self.conformal, self.grid)

    def sup_R_minus_r(self, r: float | None = None) -> float:
        dev = self.curvature_deviation
        return float(np.max(np.abs(dev if r is None else dev + (self.r - r))))


def _curvature_deviation(u: SpectralField, grid: SphereGrid, u_grid: np.ndarray) -> np.ndarray:
    """``R - r`` without cancellation against ``r``.

    With ``u = c + w`` (``c`` the round mean) and ``E = int expm1(2w) dA``,
    ``R - r = exp(-2u) (-2 Lap w - 2 expm1(2w) + 2 E exp(2w) / (4 pi + E))``.
    Every term is small near a round metric, so roundoff scales with ``|R - r|``.
    """
    wc = u.coeffs.copy()
    wc[0] = 0.0
    w = synthesize(SpectralField(u.L, wc), grid)
    e = np.expm1(2.0 * w)
    big_e = integrate(e, None, grid)
    lap_w = synthesize(laplacian_can(u), grid)
    inner = -2.0 * lap_w - 2.0 * e + 2.0 * big_e * (1.0 + e) / (4.0 * math.pi + big_e)
    return np.exp(-2.0 * u_grid) * inner


def scalar_curvature(m: ConformalMetric) -> np.ndarray:
    """``R = exp(-2u) (2 - 2 Lap_can u)`` at the grid nodes."""
    return m.R


def volume(m: ConformalMetric) -> float:
    return m.volume


def mean_curvature_r(m: ConformalMetric) -> float:
    """Volume-averaged scalar curvature, ``8 pi / volume`` by Gauss-Bonnet."""
    return m.r


def metric_components(m: ConformalMetric) -> SymmetricBilinearField:
    return SymmetricBilinearField(m.grid, m.conformal, np.zeros(m.grid.shape), m.conformal)


def gradient_g(m: ConformalMetric, f: SpectralField) -> TangentVectorField:
    """``grad_g f = exp(-2u) grad_can f``; its g-length is ``exp(-u) |grad_can f|``."""
    return gradient_can(f, m.grid).scaled(np.exp(-2.0 * m.u_grid))


def laplacian_g(m: ConformalMetric, f: SpectralField) -> np.ndarray:
    """``Lap_g f = exp(-2u) Lap_can f`` (two dimensions only)."""
    return np.exp(-2.0 * m.u_grid) * synthesize(laplacian_can(f), m.grid)


def hessian_can(f: SpectralField, grid: SphereGrid | None = None) -> SymmetricBilinearField:
    """Round covariant Hessian at the nodes.

    Coordinate form with the Christoffel symbols of the unit sphere; Gauss
    nodes keep ``sin(theta)`` away from zero.  At each node this equals the
    ambient second derivative of the degree-zero extension ``f(x/|x|)``
    restricted to tangent vectors.
    """
    grid = grid or build_grid(f.L)
    c = _coeffs_for_grid(f, grid)
    fld = SpectralField(grid.L, c)
    dphi = phi_derivative(fld)
    dphi2 = phi_derivative(dphi)
    f_t = _synthesize_table(c, grid, grid.dplm)
    f_tt = _synthesize_table(c, grid, grid.d2plm)
    f_p = _synthesize_table(dphi.coeffs, grid, grid.plm)
    f_tp = _synthesize_table(dphi.coeffs, grid, grid.dplm)
    f_pp = _synthesize_table(dphi2.coeffs, grid, grid.plm)
    s = grid.sin_theta[:, None]
    cot = (grid.cos_theta / grid.sin_theta)[:, None]
    return SymmetricBilinearField(
        grid,
        f_tt,
        (f_tp - cot * f_p) / s,
        f_pp / (s * s) + cot * f_t,
    )


def hessian_g(m: ConformalMetric, f: SpectralField) -> SymmetricBilinearField:
    """Covariant Hessian of ``f`` for ``g = exp(2u) g_can``.

    ``Hess_g f = Hess_can f - du (x) df - df (x) du + <du, df>_can g_can``.
    """
    h = hessian_can(f, m.grid)
    a = gradient_can(m.u, m.grid)
    b = gradient_can(f, m.grid)
    ab = a.dot(b)
    return SymmetricBilinearField(
        m.grid,
        h.tt - 2.0 * a.theta * b.theta + ab,
        h.tp - (a.theta * b.phi + a.phi * b.theta),
        h.pp - 2.0 * a.phi * b.phi + ab,
    )


def _relative_eigenvalues(m: ConformalMetric, A: SymmetricBilinearField):
    s = np.exp(-2.0 * m.u_grid)
    mean = 0.5 * (A.tt + A.pp)
    rad = np.hypot(0.5 * (A.tt - A.pp), A.tp)
    return s * (mean - rad), s * (mean + rad)


def min_eigenvalue_rel(m: ConformalMetric, A: SymmetricBilinearField) -> np.ndarray:
    """Smaller eigenvalue of ``A`` relative to ``g`` at every node."""
    return _relative_eigenvalues(m, A)[0]


def max_abs_eigenvalue_rel(m: ConformalMetric, A: SymmetricBilinearField) -> np.ndarray:
    """Pointwise operator norm ``|A|_g`` (largest absolute relative eigenvalue)."""
    lo, hi = _relative_eigenvalues(m, A)
    return np.maximum(np.abs(lo), np.abs(hi))


def trace_rel(m: ConformalMetric, A: SymmetricBilinearField) -> np.ndarray:
    return np.exp(-2.0 * m.u_grid) * (A.tt + A.pp)
