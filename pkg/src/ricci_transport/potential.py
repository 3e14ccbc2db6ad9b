"""
Curvature potential ``xi`` with ``Lap_g xi = R - r`` and its advection velocity.

In two dimensions the equation is solved in conformal form,
``Lap_can xi = exp(2u) (R - r)``, by exact spectral inversion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AccuracyWarning, ConfigurationError, SolvabilityError
from .flow import FlowTrajectory, with_potentials
from .harmonics import (
    SpectralField,
    TangentVectorField,
    analyze,
    degree_of,
    laplacian_can,
    poisson_solve_can,
    synthesize,
)
from .metric import ConformalMetric, gradient_g, hessian_g, max_abs_eigenvalue_rel

__all__ = ["PotentialSolveReport", "fill_potentials", "solve_potential", "velocity"]

BALANCE_TOL = 1e-8
SATURATION_FRACTION = 1e-2


@dataclass(frozen=True)
class PotentialSolveReport:
    residual_inf: float
    source_mean: float
    normalization: float

    def within_bound(self, sup_source: float) -> bool:
        return self.residual_inf <= 1e-8 * sup_source + 1e-12


def solve_potential(
    m: ConformalMetric,
    rhs: np.ndarray | None = None,
    normalization: str = "volume",
) -> tuple[SpectralField, PotentialSolveReport]:
    """Solve ``Lap_g xi = rhs`` (default ``R - r``) on the grid of ``m``.

    ``normalization="volume"`` fixes ``int xi dnu = 0``; ``"round"`` fixes the
    round mean (``a_00 = 0``) instead.  The velocity does not depend on it.
    """
    grid = m.grid
    rhs = m.curvature_deviation if rhs is None else np.asarray(rhs, dtype=float)
    sup = float(np.max(np.abs(rhs)))
    source_mean = m.integrate(rhs)
    if abs(source_mean) > BALANCE_TOL * max(1.0, sup * m.volume):
        raise SolvabilityError(
            f"Poisson source is not balanced: int (R - r) dnu = {source_mean:.3e}"
        )
    centered = rhs - source_mean / m.volume
    source = analyze(m.conformal * centered, grid)
    energy = source.coeffs**2
    total = float(energy[1:].sum())
    top = float(energy[degree_of(m.L) > (2 * m.L) // 3].sum())
    if total > 0 and top > SATURATION_FRACTION * total:
        warnings.warn(
            f"source spectrum saturates the bandlimit ({top / total:.1%} in the top third)",
            AccuracyWarning,
            stacklevel=2,
        )
    c = source.coeffs.copy()
    c[0] = 0.0
    xi = poisson_solve_can(SpectralField(m.L, c))
    if normalization == "volume":
        shift = -m.integrate(synthesize(xi, grid)) / m.volume
        xi = xi + SpectralField.constant(m.L, shift)
    elif normalization != "round":
        raise ConfigurationError(f"unknown normalization {normalization!r}")
    lap_g = np.exp(-2.0 * m.u_grid) * synthesize(laplacian_can(xi), grid)
    report = PotentialSolveReport(
        residual_inf=float(np.max(np.abs(lap_g - rhs))),
        source_mean=abs(source_mean),
        normalization=m.integrate(synthesize(xi, grid)),
    )
    return xi, report


def velocity(m: ConformalMetric, xi: SpectralField) -> TangentVectorField:
    """Advection field ``grad_g xi = exp(-2u) grad_can xi`` at the grid nodes."""
    return gradient_g(m, xi)


def fill_potentials(traj: FlowTrajectory) -> FlowTrajectory:
    """Solve the potential at every checkpoint and record ``sup|Hess_g xi|_g``."""
    xis, sups = [], []
    for c in traj.checkpoints:
        m = ConformalMetric(c.u)
        xi, report = solve_potential(m)
        sup_src = m.sup_R_minus_r()
        if not report.within_bound(sup_src):
            warnings.warn(
                f"potential residual {report.residual_inf:.2e} at t={c.t:.4g} exceeds bound",
                AccuracyWarning,
                stacklevel=2,
            )
        xis.append(xi)
        sups.append(float(np.max(max_abs_eigenvalue_rel(m, hessian_g(m, xi)))))
    return with_potentials(traj, xis, sups)
