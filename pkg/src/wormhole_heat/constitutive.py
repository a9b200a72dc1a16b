"""Pointwise closure laws: permeability, interfacial area, reaction kinetics, heat.

Every function is vectorised over numpy arrays and also accepts plain floats.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Annotated

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from .grid import CellField, FieldRole

__all__ = [
    "DEFAULT_PERMEABILITY_EPS",
    "ConstitutiveDomainError",
    "MediumFields",
    "PhysParams",
    "clamp_conc",
    "heat_capacity",
    "heat_capacity_slope",
    "interface_conc",
    "interfacial_area",
    "interfacial_area_from_porosity",
    "permeability",
    "permeability_clip_count",
    "permeability_derivative",
    "reaction_fraction",
    "reaction_heat",
    "reaction_rate",
    "reaction_rate_closed",
    "reset_permeability_clips",
    "surface_rate",
    "thermal_conductivity",
    "thermal_conductivity_slope",
]

logger = logging.getLogger("wormhole_heat.constitutive")

DEFAULT_PERMEABILITY_EPS = 1e-9

Positive = Annotated[float, Field(gt=0)]


class ConstitutiveDomainError(ValueError):
    """Raised when a closure law is evaluated outside its domain."""


class PhysParams(BaseModel):
    """Scalar physical constants (SI units)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: Positive = 1.0  # 1/Pa
    mu: Positive = 1.0  # Pa s
    diffusion: tuple[Positive, ...] = Field(default=(1e-2,), min_length=1, max_length=3)
    k_c: Positive = 1.0  # m/s
    a0: Positive = 1.0  # 1/m
    alpha: Positive = 1.0  # kg/mol
    rho_s: Positive = 10.0
    rho_f: Positive = 1.0
    theta_s: Positive = 1.0
    theta_f: Positive = 10.0
    lambda_s: Positive = 10.0
    lambda_f: Positive = 1.0
    k_s0: Positive = 1.0  # m/s at t_ref
    e_g: Positive = 1.0  # J/mol
    r_g: Positive = 1.0  # J/(mol K)
    t_ref: Positive = 10.0  # K
    c_inj: Positive = 1.0  # mol/m^3

    @classmethod
    def verification(cls) -> "PhysParams":
        """Unit-square constants used by the manufactured-solution cases."""

        return cls()

    @classmethod
    def realistic(cls) -> "PhysParams":
        """Carbonate/HCl constants used by the dissolution scenarios."""

        return cls(
            gamma=1.0,
            mu=1.0e-3,
            diffusion=(1e-9,),
            k_c=1e-3,
            a0=0.5,
            alpha=5e-2,
            rho_s=2.71e3,
            rho_f=1.01e3,
            theta_s=2.0e2,
            theta_f=4.184e3,
            lambda_s=5.526,
            lambda_f=0.58,
            k_s0=2e-3,
            e_g=5.02416e4,
            r_g=8.314,
            t_ref=298.0,
            c_inj=1e3,
        )

    def diffusion_along(self, axis: int) -> float:
        return self.diffusion[min(axis, len(self.diffusion) - 1)]

    def porosity_rate_bound(self, phi0: ArrayLike, c_max: float = 1.0) -> np.ndarray:
        """Upper bound of the porosity rate for a clamp bound ``c_max``."""

        return self.alpha * self.k_c * self.a0 * c_max / (self.rho_s * (1.0 - np.asarray(phi0)))


@dataclass(frozen=True, slots=True)
class MediumFields:
    """Initial porosity and permeability of the rock, frozen for the whole run."""

    phi0: CellField
    k0: CellField

    def __post_init__(self) -> None:
        if self.phi0.grid != self.k0.grid:
            raise ConstitutiveDomainError("phi0 and K0 must share a grid")
        _check_unit_interval("phi0", self.phi0.values)
        if self.phi0.role is not FieldRole.POROSITY:
            object.__setattr__(
                self, "phi0", CellField(self.phi0.grid, self.phi0.values, FieldRole.POROSITY)
            )
        if not np.all(self.k0.values > 0):
            raise ConstitutiveDomainError("Initial permeability must be strictly positive")

    @property
    def phi0_min(self) -> float:
        return float(self.phi0.values.min())


class _ClipCounter:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int) -> None:
        with self._lock:
            self._count += n

    def value(self) -> int:
        with self._lock:
            return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


_CLIPS = _ClipCounter()


def permeability_clip_count() -> int:
    """Number of porosity values clipped by the permeability guard since reset."""

    return _CLIPS.value()


def reset_permeability_clips() -> None:
    _CLIPS.reset()


def _check_unit_interval(name: str, value: np.ndarray) -> None:
    if not np.all((value > 0.0) & (value < 1.0)):
        raise ConstitutiveDomainError(f"{name} must lie strictly inside (0, 1)")


def permeability(
    phi: ArrayLike,
    phi0: ArrayLike,
    k0: ArrayLike,
    *,
    guard: bool = True,
    eps: float = DEFAULT_PERMEABILITY_EPS,
    phi_min: float | None = None,
) -> np.ndarray:
    """Carman-Kozeny permeability ``K0 (phi/phi0) (phi (1-phi0) / (phi0 (1-phi)))^2``.

    With ``guard`` the porosity is clipped to ``[phi_min, 1 - eps]`` first and the
    number of clipped entries is added to :func:`permeability_clip_count`.
    ``phi_min`` defaults to ``eps``.
    """

    phi = np.asarray(phi, dtype=np.float64)
    phi0 = np.asarray(phi0, dtype=np.float64)
    _check_unit_interval("phi0", phi0)
    if guard:
        lower = eps if phi_min is None else phi_min
        if not 0.0 < lower < 1.0 - eps:
            raise ConstitutiveDomainError(f"Porosity floor {lower!r} must lie in (0, 1 - eps)")
        clipped = np.clip(phi, lower, 1.0 - eps)
        n_clipped = int(np.count_nonzero(clipped != phi))
        if n_clipped:
            _CLIPS.add(n_clipped)
            logger.debug("Permeability guard clipped %d porosity values", n_clipped)
        phi = clipped
    else:
        _check_unit_interval("phi", phi)

    ratio = phi * (1.0 - phi0) / (phi0 * (1.0 - phi))
    return np.asarray(k0, dtype=np.float64) * (phi / phi0) * ratio * ratio


def permeability_derivative(phi: ArrayLike, phi0: ArrayLike, k0: ArrayLike) -> np.ndarray:
    """dK/dphi of the Carman-Kozeny law (no guard)."""

    phi = np.asarray(phi, dtype=np.float64)
    phi0 = np.asarray(phi0, dtype=np.float64)
    scale = np.asarray(k0, dtype=np.float64) * (1.0 - phi0) ** 2 / phi0**3
    return scale * phi**2 * (3.0 - phi) / (1.0 - phi) ** 3


def interfacial_area(
    phi: ArrayLike, phi0: ArrayLike, a0: float, k: ArrayLike, k0: ArrayLike
) -> np.ndarray:
    """Interfacial area ``a0 (phi/phi0) sqrt(K0 phi / (K phi0))``."""

    phi = np.asarray(phi, dtype=np.float64)
    phi0 = np.asarray(phi0, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    k0 = np.asarray(k0, dtype=np.float64)
    if not np.all(k > 0) or not np.all(k0 > 0):
        raise ConstitutiveDomainError("Permeabilities must be strictly positive")
    _check_unit_interval("phi0", phi0)
    return a0 * (phi / phi0) * np.sqrt(k0 * phi / (k * phi0))


def interfacial_area_from_porosity(phi: ArrayLike, phi0: ArrayLike, a0: float) -> np.ndarray:
    """``a0 (1 - phi) / (1 - phi0)``; equal to :func:`interfacial_area` with Carman-Kozeny K."""

    return a0 * (1.0 - np.asarray(phi, dtype=np.float64)) / (1.0 - np.asarray(phi0, dtype=np.float64))


def surface_rate(temperature: ArrayLike, params: PhysParams) -> np.ndarray:
    """Arrhenius surface reaction rate ``k_s(T)``."""

    t = np.asarray(temperature, dtype=np.float64)
    if not np.all(t > 0):
        raise ConstitutiveDomainError("Temperature must be strictly positive")
    return params.k_s0 * np.exp((params.e_g / params.r_g) * (1.0 / params.t_ref - 1.0 / t))


def reaction_heat(temperature: ArrayLike) -> np.ndarray:
    """Reaction heat per mole of acid consumed, J/mol."""

    t = np.asarray(temperature, dtype=np.float64)
    return np.abs(-9702.0 + 16.97 * t - 0.00234 * t * t)


def reaction_fraction(temperature: ArrayLike, params: PhysParams) -> np.ndarray:
    """``1 - 1/(1 + k_s/k_c)`` in the cancellation-free form ``x/(1+x)``."""

    x = surface_rate(temperature, params) / params.k_c
    return x / (1.0 + x)


def interface_conc(conc: ArrayLike, temperature: ArrayLike, params: PhysParams) -> np.ndarray:
    return np.asarray(conc, dtype=np.float64) / (
        1.0 + surface_rate(temperature, params) / params.k_c
    )


def reaction_rate(conc: ArrayLike, temperature: ArrayLike, params: PhysParams) -> np.ndarray:
    """``R = k_c (c_f - c_s)``."""

    conc = np.asarray(conc, dtype=np.float64)
    return params.k_c * (conc - interface_conc(conc, temperature, params))


def reaction_rate_closed(
    conc: ArrayLike, temperature: ArrayLike, params: PhysParams
) -> np.ndarray:
    return params.k_c * reaction_fraction(temperature, params) * np.asarray(conc, dtype=np.float64)


def thermal_conductivity(phi: ArrayLike, params: PhysParams) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    return (1.0 - phi) * params.lambda_s + phi * params.lambda_f


def thermal_conductivity_slope(params: PhysParams) -> float:
    return params.lambda_f - params.lambda_s


def heat_capacity(phi: ArrayLike, params: PhysParams) -> np.ndarray:
    """Volumetric heat capacity ``rho_s theta_s (1-phi) + rho_f theta_f phi``."""

    phi = np.asarray(phi, dtype=np.float64)
    return params.rho_s * params.theta_s * (1.0 - phi) + params.rho_f * params.theta_f * phi


def heat_capacity_slope(params: PhysParams) -> float:
    return params.rho_f * params.theta_f - params.rho_s * params.theta_s


def clamp_conc(conc: ArrayLike, c_max: float = 1.0) -> np.ndarray:
    if not c_max > 0:
        raise ConstitutiveDomainError(f"Clamp bound must be positive, got {c_max!r}")
    return np.clip(np.asarray(conc, dtype=np.float64), 0.0, c_max)
