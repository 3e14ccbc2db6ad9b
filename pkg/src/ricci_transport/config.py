"""
Run configuration, preset catalog and the configuration hash.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .flow import FlowConfig
from .harmonics import SpectralField, degree_of, load_spectral
from .metric import ConformalMetric

__all__ = [
    "PRESETS",
    "RunConfig",
    "config_hash",
    "initial_metric",
    "load_config",
    "preset",
]

FOUR_PI = 4.0 * math.pi

# Relative weights of the "mixed" preset; each is multiplied by eps.
MIXED_MODES = ((2, 0, 1.0), (3, 1, 0.6), (2, 2, 0.4), (4, -3, 0.3))

PRESETS = {
    "round": lambda eps: (),
    "y20": lambda eps: ((2, 0, eps),),
    "y31": lambda eps: ((3, 1, eps),),
    "mixed": lambda eps: tuple((l, m, a * eps) for l, m, a in MIXED_MODES),
}

# Fields that change where or how fast a run happens but not its results.
UNHASHED = ("out_dir", "threads")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run.

    ``perturbation`` lists ``(l, m, amplitude)`` triples added to the round
    conformal factor; alternatively ``perturbation_file`` names a coefficient
    JSON sidecar.  The initial metric is shifted to have volume ``volume``.
    """

    volume: float = 2.0 * math.pi
    perturbation: tuple = ()
    perturbation_file: str | None = None
    L: int = 32
    flow: FlowConfig = field(default_factory=FlowConfig)
    ode_tol: float = 1e-11
    n_quasi: int = 10_000
    seed: int = 0
    emit_svg: bool = False
    out_dir: str = "run"
    threads: int | None = None
    name: str = "custom"
    eps: float | None = None

    def __post_init__(self):
        if not (0.0 < self.volume < FOUR_PI):
            raise ConfigurationError(f"volume must lie strictly inside (0, 4 pi), got {self.volume!r}")
        if self.L < 4:
            raise ConfigurationError("bandlimit L must be at least 4")
        if not self.ode_tol > 0:
            raise ConfigurationError("ode_tol must be positive")
        if self.n_quasi < 0:
            raise ConfigurationError("n_quasi must be nonnegative")
        pert = tuple((int(l), int(m), float(a)) for l, m, a in self.perturbation)
        for l, m, _ in pert:
            if l < 0 or abs(m) > l:
                raise ConfigurationError(f"invalid mode (l={l}, m={m})")
            if 3 * l > self.L:
                raise ConfigurationError(
                    f"perturbation degree {l} exceeds L/3 = {self.L / 3:.4g}"
                )
        object.__setattr__(self, "perturbation", pert)
        if isinstance(self.flow, dict):
            object.__setattr__(self, "flow", FlowConfig(**self.flow))

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "flow":
                val = val.to_dict()
            elif f.name == "perturbation":
                val = [list(p) for p in val]
            d[f.name] = val
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
        d = dict(d)
        if "flow" in d:
            d["flow"] = FlowConfig(**d["flow"])
        if "perturbation" in d:
            d["perturbation"] = tuple(tuple(p) for p in d["perturbation"])
        return cls(**d)

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON of ``cfg`` without output location or thread count."""
    d = cfg.to_dict()
    for key in UNHASHED:
        d.pop(key, None)
    text = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def preset(name: str, v: float = 2.0 * math.pi, eps: float = 0.05, L: int = 32,
           **overrides) -> RunConfig:
    """Catalog entry ``name`` at volume ``v`` and amplitude ``eps``.

    ``mixed`` uses ``eps * (Y20 + 0.6 Y31 + 0.4 Y22 + 0.3 Y4,-3)``.
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return RunConfig(volume=v, perturbation=PRESETS[name](eps), L=L, name=name,
                     eps=None if name == "round" else eps, **overrides)


def _perturbation_field(cfg: RunConfig) -> SpectralField:
    u = SpectralField.zeros(cfg.L)
    if cfg.perturbation:
        u = u + SpectralField.from_modes(cfg.L, {(l, m): a for l, m, a in cfg.perturbation})
    if cfg.perturbation_file:
        extra = load_spectral(cfg.perturbation_file)
        nz = np.nonzero(extra.coeffs)[0]
        if nz.size and 3 * int(degree_of(extra.L)[nz].max()) > cfg.L:
            raise ConfigurationError("perturbation file exceeds the L/3 bandlimit")
        u = u + extra.resized(cfg.L)
    return u


def initial_metric(cfg: RunConfig) -> ConformalMetric:
    """``u = log(rho) + perturbation + c`` with ``c`` fixing the volume to ``cfg.volume``.

    The volume is ``exp(2c)`` times that of the unshifted factor, so ``c`` has
    the closed form ``log(v / vol) / 2``.
    """
    u = _perturbation_field(cfg) + SpectralField.constant(cfg.L, 0.5 * math.log(cfg.volume / FOUR_PI))
    vol = ConformalMetric(u).volume
    return ConformalMetric(u + SpectralField.constant(cfg.L, 0.5 * math.log(cfg.volume / vol)))
