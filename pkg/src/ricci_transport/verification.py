"""
Independent checks: weak pushforward of measures, a spectral Lichnerowicz
diagnostic, and the linearized decay rate of single curvature modes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, RicciTransportError
from .harmonics import build_grid, degree_of, integrate, point_basis, synthesize
from .metric import ConformalMetric

__all__ = [
    "LichnerowiczReport",
    "PreconditionWarning",
    "PushforwardReport",
    "TEST_FUNCTIONS",
    "VerificationFailure",
    "lichnerowicz_check",
    "lichnerowicz_report",
    "linearized_decay_oracle",
    "pushforward_test",
    "test_function_values",
]

TEST_ROTATION = Rotation.from_euler("zyz", [0.3, 0.7, 1.1]).as_matrix()
TEST_FUNCTIONS = ("one", "x", "y", "z", "xy", "Y20_rotated")
_Y20 = math.sqrt(5.0 / (16.0 * math.pi))


class VerificationFailure(RicciTransportError):
    pass


class PreconditionWarning(UserWarning):
    pass


def test_function_values(points: np.ndarray) -> dict[str, np.ndarray]:
    """The fixed test functions at unit-sphere points."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    q = p @ TEST_ROTATION.T
    return {
        "one": np.ones(len(p)),
        "x": p[:, 0],
        "y": p[:, 1],
        "z": p[:, 2],
        "xy": p[:, 0] * p[:, 1],
        "Y20_rotated": _Y20 * (3.0 * q[:, 2] ** 2 - 1.0),
    }


test_function_values.__test__ = False


@dataclass(frozen=True)
class PushforwardReport:
    errors: dict
    source_side: dict
    target_side: dict
    quadrature_size: int
    quadrature_rule: str
    worst_error: float
    worst_function: str

    def to_dict(self) -> dict:
        return {
            "errors": dict(self.errors),
            "source_side": dict(self.source_side),
            "target_side": dict(self.target_side),
            "quadrature_size": self.quadrature_size,
            "quadrature_rule": self.quadrature_rule,
            "worst_error": self.worst_error,
            "worst_function": self.worst_function,
        }


def _grid_images(traj, atlas, grid):
    nodes = grid.points.reshape(-1, 3)
    if atlas is not None:
        if len(atlas) < len(nodes) or not np.allclose(atlas.y[: len(nodes)], nodes, atol=1e-14):
            raise ConfigurationError("atlas was not built on the quadrature grid of the trajectory")
        x = atlas.x[: len(nodes)]
        if not np.all(atlas.ok[: len(nodes)]):
            raise VerificationFailure("atlas has failed samples on the quadrature grid")
        return nodes, x
    from .transport import KimMilmanMap

    km = traj if isinstance(traj, KimMilmanMap) else KimMilmanMap(traj)
    return nodes, km.flow_backward(nodes)


def pushforward_test(traj, atlas=None, target_L: int | None = None) -> PushforwardReport:
    """Weak check that ``T`` pushes the final measure onto ``nu_0``.

    ``Q1 = sum_i w_i exp(2 u_final(y_i)) f(T(y_i))`` over the Gauss nodes ``y_i``
    of the trajectory grid; ``Q2 = int f exp(2 u_0) dA`` on a grid of bandlimit
    ``target_L`` (default ``2L``).  Errors are ``|Q1 - Q2| / (1 + |Q2|)``.

    ``traj`` may be a ``FlowTrajectory`` or an already built ``KimMilmanMap``.
    """
    from .transport import KimMilmanMap

    base = traj.traj if isinstance(traj, KimMilmanMap) else traj
    grid = build_grid(base.L)
    nodes, x = _grid_images(traj, atlas, grid)
    u_final = base.checkpoints[-1].u
    src_w = grid.area_weights.reshape(-1) * np.exp(2.0 * synthesize(u_final, grid).reshape(-1))
    fx = test_function_values(x)

    tgrid = build_grid(target_L or 2 * base.L)
    dens = np.exp(2.0 * synthesize(base.checkpoints[0].u, tgrid))
    fy = test_function_values(tgrid.points.reshape(-1, 3))

    errors, q1s, q2s = {}, {}, {}
    for name in TEST_FUNCTIONS:
        q1 = float(np.dot(src_w, fx[name]))
        q2 = integrate(fy[name].reshape(tgrid.shape), dens, tgrid)
        q1s[name], q2s[name] = q1, q2
        errors[name] = abs(q1 - q2) / (1.0 + abs(q2))
    worst = max(errors, key=errors.get)
    rule = f"gauss-legendre L={grid.L} ({grid.nlat}x{grid.nlon}); target L={tgrid.L}"
    return PushforwardReport(errors, q1s, q2s, len(nodes), rule, errors[worst], worst)


@dataclass(frozen=True)
class LichnerowiczReport:
    lambda1: float
    min_R: float
    L_eig: int
    skipped: bool
    notice: str = ""
    holds: bool | None = None
    spectrum: np.ndarray = field(default_factory=lambda: np.zeros(0))


def lichnerowicz_report(m0: ConformalMetric, L_eig: int | None = None,
                        tol: float = 1e-6) -> LichnerowiczReport:
    """First nonzero eigenvalue of ``Lap_g`` by Galerkin on harmonics up to ``L_eig``.

    In two dimensions the Dirichlet energy is conformally invariant, so the
    stiffness matrix is ``diag(l(l+1))``; the mass matrix carries ``exp(2u)``.
    """
    min_R = float(np.min(m0.R))
    L_eig = min(m0.L // 2, 24) if L_eig is None else int(L_eig)
    if L_eig < 1:
        raise ConfigurationError("L_eig must be at least 1")
    if min_R < 2.0:
        return LichnerowiczReport(float("nan"), min_R, L_eig, True,
                                  f"skipped: min R = {min_R:.6g} < 2")
    qgrid = build_grid(2 * L_eig + m0.L)
    dens = np.exp(2.0 * synthesize(m0.u, qgrid)).reshape(-1)
    w = qgrid.area_weights.reshape(-1) * dens
    B = point_basis(qgrid.points.reshape(-1, 3), L_eig)
    mass = (B * w[:, None]).T @ B
    mass = 0.5 * (mass + mass.T)
    deg = degree_of(L_eig).astype(float)
    stiff = np.diag(deg * (deg + 1.0))
    evals = scipy.linalg.eigh(stiff, mass, eigvals_only=True)
    lam1 = float(evals[1])
    return LichnerowiczReport(lam1, min_R, L_eig, False, "", lam1 >= 2.0 - tol, evals)


def lichnerowicz_check(m0: ConformalMetric, L_eig: int | None = None,
                       tol: float = 1e-6) -> float:
    """Return ``lambda_1`` and assert ``lambda_1 >= 2 - tol``.

    When ``min R < 2`` the check is skipped with a ``PreconditionWarning``
    and ``nan`` is returned.
    """
    rep = lichnerowicz_report(m0, L_eig, tol)
    if rep.skipped:
        warnings.warn(rep.notice, PreconditionWarning, stacklevel=2)
        return rep.lambda1
    if not rep.holds:
        raise VerificationFailure(f"lambda_1 = {rep.lambda1:.10g} < 2 with min R >= 2")
    return rep.lambda1


def linearized_decay_oracle(l: int, r: float) -> float:
    """Linear decay rate ``r (1 - l(l+1)/2)`` of the degree-``l`` curvature mode."""
    if l < 1:
        raise ConfigurationError("degree must be at least 1")
    return r * (1.0 - l * (l + 1) / 2.0)
