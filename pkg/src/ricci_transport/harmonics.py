"""
Real spherical harmonics on the unit sphere.

Gauss-Legendre colatitude nodes times an equispaced longitude ring, fully
normalized associated Legendre functions by three-term recurrence, and the
round-metric operators (Laplacian, Poisson inverse, gradient, Hessian
building blocks) that every other module is built on.

Conventions
-----------
* Real orthonormal basis: ``Y_l0 = Pbar_l0``, ``Y_lm = sqrt(2) Pbar_lm cos(m phi)``
  and ``Y_l,-m = sqrt(2) Pbar_lm sin(m phi)`` for ``m > 0``, with
  ``int Y_lm**2 dA = 1``.  No Condon-Shortley phase.
* Flat coefficient index ``l*l + l + m`` ("l-major, m from -l to l").
* Colatitude ``theta`` ascends from the north pole; no node sits on a pole.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigurationError, SolvabilityError

__all__ = [
    "SphereGrid",
    "SpectralField",
    "TangentVectorField",
    "analyze",
    "build_grid",
    "cartesian_gradient",
    "degree_of",
    "evaluate",
    "gradient_can",
    "integrate",
    "laplacian_can",
    "load_spectral",
    "ncoef",
    "phi_derivative",
    "point_basis",
    "poisson_solve_can",
    "save_spectral",
    "synthesize",
]

MIN_BANDLIMIT = 4
FOUR_PI = 4.0 * math.pi


def ncoef(L: int) -> int:
    return (L + 1) * (L + 1)


@functools.lru_cache(maxsize=None)
def degree_of(L: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient index up to bandlimit ``L``."""
    return np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)


@functools.lru_cache(maxsize=None)
def _order_of(L: int) -> np.ndarray:
    return np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])


@functools.lru_cache(maxsize=None)
def _table_index(L: int):
    """Flat indices of the (m, l) cosine and sine tables.

    Entries with ``l < m`` (and ``m = 0`` for the sine table) point at a
    sentinel slot one past the end, which always holds zero.
    """
    m = np.arange(L + 1)[:, None]
    l = np.arange(L + 1)[None, :]
    sentinel = ncoef(L)
    valid = l >= m
    icos = np.where(valid, l * l + l + m, sentinel)
    isin = np.where(valid & (m > 0), l * l + l - m, sentinel)
    return icos, isin, valid


def _legendre_q(z: np.ndarray, L: int) -> np.ndarray:
    """Fully normalized ``Pbar_lm / sin(theta)**m`` as polynomials in ``z``.

    Returns an array of shape ``(L+1, L+1) + z.shape`` indexed ``[m, l]``;
    entries with ``l < m`` are zero.  The recurrence runs along diagonals
    ``l - m = d`` so every order is advanced at once.
    """
    z = np.asarray(z, dtype=float)
    q = np.zeros((L + 1, L + 1) + z.shape)
    m = np.arange(L + 1, dtype=float)
    diag = np.empty(L + 1)
    diag[0] = 1.0 / math.sqrt(FOUR_PI)
    if L > 0:
        diag[1:] = diag[0] * np.cumprod(np.sqrt((2 * m[1:] + 1) / (2 * m[1:])))
    extra = (None,) * z.ndim
    idx = np.arange(L + 1)
    q[idx, idx] = diag[(slice(None),) + extra] * np.ones_like(z)
    if L == 0:
        return q
    mm = idx[:-1]
    q[mm, mm + 1] = np.sqrt(2 * m[:-1] + 3)[(slice(None),) + extra] * z * q[mm, mm]
    for d in range(2, L + 1):
        mm = idx[: L + 1 - d]
        ll = mm + d
        lf = ll.astype(float)
        mf = mm.astype(float)
        a = np.sqrt((4 * lf * lf - 1) / (lf * lf - mf * mf))
        b = np.sqrt(((lf - 1) ** 2 - mf * mf) / (4 * (lf - 1) ** 2 - 1))
        a = a[(slice(None),) + extra]
        b = b[(slice(None),) + extra]
        q[mm, ll] = a * (z * q[mm, ll - 1] - b * q[mm, ll - 2])
    return q


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Gauss-Legendre x equispaced grid with Legendre tables for bandlimit ``L``.

    ``plm``, ``dplm`` and ``d2plm`` hold ``Pbar_lm`` and its first and second
    colatitude derivatives at the nodes, indexed ``[m, l, j]``.
    """

    L: int
    theta: np.ndarray
    phi: np.ndarray
    cos_theta: np.ndarray
    sin_theta: np.ndarray
    weights: np.ndarray
    plm: np.ndarray
    dplm: np.ndarray
    d2plm: np.ndarray

    @property
    def nlat(self) -> int:
        return self.theta.size

    @property
    def nlon(self) -> int:
        return self.phi.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @property
    def dphi(self) -> float:
        return 2.0 * math.pi / self.nlon

    @functools.cached_property
    def area_weights(self) -> np.ndarray:
        """Quadrature weight of every node; sums to 4 pi."""
        return np.repeat(self.weights[:, None] * self.dphi, self.nlon, axis=1)

    @functools.cached_property
    def points(self) -> np.ndarray:
        """Unit vectors of the nodes, shape ``(nlat, nlon, 3)``."""
        st = self.sin_theta[:, None]
        return np.stack(
            [
                st * np.cos(self.phi)[None, :],
                st * np.sin(self.phi)[None, :],
                np.repeat(self.cos_theta[:, None], self.nlon, axis=1),
            ],
            axis=-1,
        )

    @functools.cached_property
    def e_theta(self) -> np.ndarray:
        ct = self.cos_theta[:, None]
        return np.stack(
            [
                ct * np.cos(self.phi)[None, :],
                ct * np.sin(self.phi)[None, :],
                np.repeat(-self.sin_theta[:, None], self.nlon, axis=1),
            ],
            axis=-1,
        )

    @functools.cached_property
    def e_phi(self) -> np.ndarray:
        zeros = np.zeros(self.shape)
        return np.stack(
            [
                np.broadcast_to(-np.sin(self.phi)[None, :], self.shape),
                np.broadcast_to(np.cos(self.phi)[None, :], self.shape),
                zeros,
            ],
            axis=-1,
        )

    def describe(self) -> dict:
        return {
            "L": self.L,
            "nlat": self.nlat,
            "nlon": self.nlon,
            "rule": "gauss-legendre x equispaced",
        }


@functools.lru_cache(maxsize=16)
def build_grid(L: int) -> SphereGrid:
    """Build the quadrature grid for bandlimit ``L`` (``nlat = L+1``, ``nlon = 2L+2``)."""
    if int(L) != L or L < MIN_BANDLIMIT:
        raise ConfigurationError(f"bandlimit must be an integer >= {MIN_BANDLIMIT}, got {L}")
    L = int(L)
    x, w = roots_legendre(L + 1)
    x, w = x[::-1].copy(), w[::-1].copy()
    theta = np.arccos(x)
    s = np.sqrt((1.0 - x) * (1.0 + x))
    phi = 2.0 * math.pi * np.arange(2 * L + 2) / (2 * L + 2)

    q = _legendre_q(x, L)
    m = np.arange(L + 1, dtype=float)[:, None, None]
    l = np.arange(L + 1, dtype=float)[None, :, None]
    p = q * s[None, None, :] ** m

    # sin(theta) dP_lm/dtheta = l x P_lm - c_lm P_{l-1,m}
    p_prev = np.zeros_like(p)
    p_prev[:, 1:] = p[:, :-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.sqrt((2 * l + 1) / (2 * l - 1) * np.maximum(l * l - m * m, 0.0))
    c = np.where(l > m, c, 0.0)
    dp = (l * x[None, None, :] * p - c * p_prev) / s[None, None, :]
    # associated Legendre equation in theta
    cot = x / s
    d2p = -cot * dp + (m * m / (s * s) - l * (l + 1)) * p
    valid = (l >= m)
    p = np.where(valid, p, 0.0)
    dp = np.where(valid, dp, 0.0)
    d2p = np.where(valid, d2p, 0.0)
    return SphereGrid(L, theta, phi, x, s, w, p, dp, d2p)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Band-limited real field stored as real orthonormal harmonic coefficients.

    ``coeffs`` may carry leading batch axes; the last axis has length ``(L+1)**2``.
    """

    L: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape[-1] != ncoef(self.L):
            raise ConfigurationError(
                f"expected {ncoef(self.L)} coefficients for L={self.L}, got {c.shape[-1]}"
            )
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, L: int) -> "SpectralField":
        return cls(L, np.zeros(ncoef(L)))

    @classmethod
    def from_modes(cls, L: int, modes) -> "SpectralField":
        """Build from ``{(l, m): amplitude}`` or an iterable of ``(l, m, amplitude)``."""
        items = modes.items() if isinstance(modes, dict) else (((l, m), a) for l, m, a in modes)
        c = np.zeros(ncoef(L))
        for (l, m), a in items:
            if not (0 <= l <= L and -l <= m <= l):
                raise ConfigurationError(f"mode ({l}, {m}) outside bandlimit {L}")
            c[l * l + l + m] += a
        return cls(L, c)

    @classmethod
    def constant(cls, L: int, value: float) -> "SpectralField":
        c = np.zeros(ncoef(L))
        c[0] = value * math.sqrt(FOUR_PI)
        return cls(L, c)

    def coeff(self, l: int, m: int) -> float:
        return float(self.coeffs[..., l * l + l + m])

    def resized(self, L: int) -> "SpectralField":
        """Zero-pad or truncate to bandlimit ``L``."""
        n = ncoef(L)
        c = np.zeros(self.coeffs.shape[:-1] + (n,))
        k = min(n, self.coeffs.shape[-1])
        c[..., :k] = self.coeffs[..., :k]
        return SpectralField(L, c)

    def truncated(self, lmax: int) -> "SpectralField":
        """Zero every degree above ``lmax`` while keeping the bandlimit."""
        c = np.where(degree_of(self.L) <= lmax, self.coeffs, 0.0)
        return SpectralField(self.L, c)

    def mean(self) -> float:
        """Area average with respect to the round measure."""
        return float(self.coeffs[..., 0]) / math.sqrt(FOUR_PI)

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.L, self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.L, self.coeffs - other.coeffs)
        return NotImplemented

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SpectralField(self.L, self.coeffs * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.L, -self.coeffs)

    def _check(self, other: "SpectralField"):
        if other.L != self.L:
            raise ConfigurationError(f"bandlimit mismatch: {self.L} vs {other.L}")


@dataclass(frozen=True, eq=False)
class TangentVectorField:
    """Tangent field in the round orthonormal frame ``(e_theta, e_phi)`` at grid nodes."""

    grid: SphereGrid
    theta: np.ndarray
    phi: np.ndarray

    def cartesian(self) -> np.ndarray:
        return (
            self.theta[..., None] * self.grid.e_theta + self.phi[..., None] * self.grid.e_phi
        )

    def scaled(self, factor) -> "TangentVectorField":
        return TangentVectorField(self.grid, self.theta * factor, self.phi * factor)

    def dot(self, other: "TangentVectorField") -> np.ndarray:
        """Round-metric inner product, node by node."""
        return self.theta * other.theta + self.phi * other.phi


def _tables(coeffs: np.ndarray, L: int):
    icos, isin, _ = _table_index(L)
    pad = np.concatenate([coeffs, np.zeros(coeffs.shape[:-1] + (1,))], axis=-1)
    return pad[..., icos], pad[..., isin]


def _coeffs_for_grid(field: SpectralField, grid: SphereGrid) -> np.ndarray:
    if field.L > grid.L:
        raise ConfigurationError(
            f"field bandlimit {field.L} exceeds grid bandlimit {grid.L}"
        )
    if field.L == grid.L:
        return field.coeffs
    return field.resized(grid.L).coeffs


def _synthesize_table(coeffs: np.ndarray, grid: SphereGrid, table: np.ndarray) -> np.ndarray:
    acos, asin = _tables(coeffs, grid.L)
    batch = acos.shape[:-2]
    nb = int(np.prod(batch, dtype=int))
    a = np.concatenate([acos.reshape(nb, grid.L + 1, -1), asin.reshape(nb, grid.L + 1, -1)])
    # One matrix product per order m: (m, 2B, l) @ (m, l, j) -> (m, 2B, j).
    cs = np.matmul(a.transpose(1, 0, 2), table).transpose(1, 2, 0)
    c = cs[:nb].reshape(batch + cs.shape[1:])
    s = cs[nb:].reshape(batch + cs.shape[1:])
    n = grid.nlon
    z = np.zeros(c.shape[:-1] + (n // 2 + 1,), dtype=complex)
    z[..., 0] = n * c[..., 0]
    z[..., 1 : grid.L + 1] = (n / math.sqrt(2.0)) * (c[..., 1:] - 1j * s[..., 1:])
    return np.fft.irfft(z, n=n, axis=-1)


def synthesize(field: SpectralField, grid: SphereGrid | None = None) -> np.ndarray:
    """Values of ``field`` at the nodes of ``grid`` (default: the grid of its bandlimit)."""
    grid = grid or build_grid(field.L)
    return _synthesize_table(_coeffs_for_grid(field, grid), grid, grid.plm)


def analyze(values: np.ndarray, grid: SphereGrid, L: int | None = None) -> SpectralField:
    """Quadrature projection of node values onto harmonics of degree ``<= L``."""
    values = np.asarray(values, dtype=float)
    if values.shape[-2:] != grid.shape:
        raise ConfigurationError(
            f"values of shape {values.shape[-2:]} do not match grid {grid.shape}"
        )
    L = grid.L if L is None else L
    if L > grid.L:
        raise ConfigurationError(f"cannot analyze to L={L} on a grid for L={grid.L}")
    f = np.fft.rfft(values, axis=-1)[..., : grid.L + 1]
    wf = f * (grid.weights[:, None] * grid.dphi)
    batch = wf.shape[:-2]
    nb = int(np.prod(batch, dtype=int))
    w2 = wf.reshape((nb,) + wf.shape[-2:])
    parts = np.concatenate([w2.real, w2.imag]).transpose(2, 1, 0)
    # (m, l, j) @ (m, j, 2B) -> (m, l, 2B)
    prod = np.matmul(grid.plm, parts).transpose(2, 0, 1)
    re = prod[:nb].reshape(batch + prod.shape[1:])
    im = prod[nb:].reshape(batch + prod.shape[1:])
    scale = np.full(grid.L + 1, math.sqrt(2.0))
    scale[0] = 1.0
    acos = re * scale[:, None]
    asin = -im * scale[:, None]
    icos, isin, valid = _table_index(grid.L)
    out = np.zeros(values.shape[:-2] + (ncoef(grid.L) + 1,))
    out[..., icos[valid]] = acos[..., valid]
    sin_valid = valid.copy()
    sin_valid[0] = False
    out[..., isin[sin_valid]] = asin[..., sin_valid]
    out = out[..., : ncoef(grid.L)]
    return SpectralField(L, out[..., : ncoef(L)])


def integrate(f: np.ndarray, density: np.ndarray | None, grid: SphereGrid) -> float:
    """Quadrature of ``f * density`` over the sphere against the round area element."""
    integrand = np.asarray(f, dtype=float)
    if density is not None:
        integrand = integrand * density
    return float(np.sum(integrand * grid.area_weights))


def laplacian_can(field: SpectralField) -> SpectralField:
    l = degree_of(field.L)
    return SpectralField(field.L, field.coeffs * (-l * (l + 1.0)))


def poisson_solve_can(source: SpectralField, mean_tol: float | None = None) -> SpectralField:
    """Solve ``Lap_can xi = source`` with zero round-mean; the source must be centered."""
    norm = float(np.sqrt(np.sum(source.coeffs**2)))
    tol = 1e-9 * max(norm, 1.0) if mean_tol is None else mean_tol
    a00 = float(np.max(np.abs(source.coeffs[..., 0])))
    if a00 > tol:
        raise SolvabilityError(
            f"source is not centered: |a00| = {a00:.3e} exceeds {tol:.3e}"
        )
    l = degree_of(source.L).astype(float)
    inv = np.zeros_like(l)
    inv[1:] = -1.0 / (l[1:] * (l[1:] + 1.0))
    return SpectralField(source.L, source.coeffs * inv)


def phi_derivative(field: SpectralField) -> SpectralField:
    """Exact longitude derivative in coefficient space."""
    L = field.L
    m = _order_of(L)
    l = degree_of(L)
    partner = l * l + l - m
    c = field.coeffs[..., partner] * m
    # cos part (m > 0) gets +m a_{l,-m}; sin part (m < 0) gets -|m| a_{l,|m|}
    return SpectralField(L, c)


def gradient_can(field: SpectralField, grid: SphereGrid | None = None) -> TangentVectorField:
    """Round-metric gradient ``(d_theta f, d_phi f / sin theta)`` at the grid nodes."""
    grid = grid or build_grid(field.L)
    c = _coeffs_for_grid(field, grid)
    f_theta = _synthesize_table(c, grid, grid.dplm)
    f_phi = _synthesize_table(phi_derivative(SpectralField(grid.L, c)).coeffs, grid, grid.plm)
    return TangentVectorField(grid, f_theta, f_phi / grid.sin_theta[:, None])


def cartesian_gradient(field: SpectralField) -> SpectralField:
    """Cartesian components of the round gradient as exact fields of bandlimit ``L+1``.

    Each component of the surface gradient of a degree-``l`` harmonic has degree
    at most ``l+1``, so analysis on the ``L+1`` grid reproduces it exactly.
    Leading batch axes are preserved and a trailing component axis of length 3
    is inserted before the coefficient axis.
    """
    grid = build_grid(field.L + 1)
    g = gradient_can(field.resized(field.L + 1), grid).cartesian()
    return analyze(np.moveaxis(g, -1, -3), grid)


@functools.lru_cache(maxsize=None)
def _degree_recurrence(L: int):
    """Per-degree coefficients ``(a, b)`` of ``Q_lm = a (z Q_{l-1,m} - b Q_{l-2,m})``."""
    out = []
    for l in range(L + 1):
        m = np.arange(max(l - 1, 0), dtype=float)
        a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))[:, None]
        b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))[:, None]
        out.append((a, b))
    return out


def point_basis(points: np.ndarray, L: int) -> np.ndarray:
    """Real harmonics up to ``L`` at arbitrary points, shape ``(N, (L+1)**2)``.

    Uses ``Pbar_lm = sin(theta)**m Q_lm(z)`` and ``sin(theta)**m e^{i m phi} =
    (x + i y)**m`` so the evaluation is smooth through the poles.  The
    recurrence advances one degree at a time across all orders.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    n = p.shape[0]
    z = p[:, 2]
    w = p[:, 0] + 1j * p[:, 1]
    powers = np.ones((L + 1, n), dtype=complex)
    for m in range(1, L + 1):
        powers[m] = powers[m - 1] * w
    rc = powers.real * math.sqrt(2.0)
    rc[0] = 1.0
    rs = powers.imag * math.sqrt(2.0)
    diag = 1.0 / math.sqrt(FOUR_PI)
    rec = _degree_recurrence(L)
    out = np.empty((ncoef(L), n))
    q_prev2 = None
    q_prev = np.full((1, n), diag)
    out[0] = q_prev[0]
    for l in range(1, L + 1):
        q = np.empty((l + 1, n))
        if l >= 2:
            a, b = rec[l]
            q[: l - 1] = a * (z * q_prev[: l - 1] - b * q_prev2[: l - 1])
        q[l - 1] = math.sqrt(2.0 * l + 1.0) * z * q_prev[l - 1]
        diag *= math.sqrt((2.0 * l + 1.0) / (2.0 * l))
        q[l] = diag
        c = l * l + l
        out[c : c + l + 1] = q * rc[: l + 1]
        out[l * l : c] = (q[1:] * rs[1 : l + 1])[::-1]
        q_prev2, q_prev = q_prev, q
    return out.T


def evaluate(field: SpectralField, points: np.ndarray) -> np.ndarray:
    """Values at arbitrary points on the sphere (exact at bandlimit)."""
    basis = point_basis(points, field.L)
    return np.einsum("nk,...k->...n", basis, field.coeffs)


def save_spectral(stem: str | Path, field: SpectralField, extra: dict | None = None) -> Path:
    """Write ``<stem>.json`` header plus ``<stem>.bin`` little-endian float64 payload."""
    stem = Path(stem)
    payload = stem.with_suffix(".bin")
    np.ascontiguousarray(field.coeffs, dtype="<f8").tofile(payload)
    header = {
        "convention": "real-orthonormal",
        "L": field.L,
        "ordering": "l-major, m from -l to l",
        "dtype": "<f8",
        "shape": list(field.coeffs.shape),
        "payload": payload.name,
    }
    if extra:
        header.update(extra)
    path = stem.with_suffix(".json")
    path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_spectral(path: str | Path) -> SpectralField:
    path = Path(path)
    header = json.loads(path.read_text())
    if header.get("convention") != "real-orthonormal":
        raise ConfigurationError(f"unsupported coefficient convention in {path}")
    data = np.fromfile(path.parent / header["payload"], dtype="<f8")
    shape = tuple(header.get("shape", [data.size]))
    return SpectralField(int(header["L"]), data.reshape(shape))
