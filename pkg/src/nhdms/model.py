"""Physical parameters, scaling and piecewise coefficient fields.

Everything downstream works in scaled units: lengths in ``L0`` (1 nm by
default) and angular frequencies in ``w0`` (the plasma frequency by default),
with vacuum permittivity and permeability both set to one. Time-harmonic
Maxwell then carries the dimensionless factor ``kappa = w0 * L0 / c`` in
front of every frequency that multiplies a length, so the free-space
wavenumber of a scaled frequency ``w`` is ``kappa * w``. Setting
``kappa = 1`` recovers the literal convention in which lengths are measured
in units of ``c / w0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS0_SI = 8.8541878128e-12
MU0_SI = 1.25663706212e-6

VACUUM, HOST, METAL = 0, 1, 2
REGION_NAMES = {VACUUM: "vacuum", HOST: "host", METAL: "metal"}


@dataclass(frozen=True)
class MaterialSet:
    """Drude metal in a dielectric host, SI units.

    Attributes:
        omega_p: Plasma frequency (rad/s).
        gamma: Damping constant (rad/s).
        beta: Nonlocality velocity (m/s).
        eps_metal: Relative background permittivity of the metal.
        mu_metal: Relative permeability of the metal.
        eps_host: Relative permittivity of the host.
        mu_host: Relative permeability of the host.
        eps0: Vacuum permittivity.
        mu0: Vacuum permeability.
    """

    omega_p: float = 1.37e16
    gamma: float = 1.08e14
    beta: float = 1.08e6
    eps_metal: float = 9.5
    mu_metal: float = 1.0
    eps_host: float = 3.9
    mu_host: float = 1.0
    eps0: float = EPS0_SI
    mu0: float = MU0_SI

    def __post_init__(self):
        for name in ("omega_p", "gamma", "beta", "eps_metal", "mu_metal",
                     "eps_host", "mu_host", "eps0", "mu0"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def light_speed(self) -> float:
        return 1.0 / np.sqrt(self.eps0 * self.mu0)


HOST_PRESETS = {
    "case_5_1": {"eps_host": 3.9, "mu_host": 1.0},   # silicon dioxide
    "case_5_2": {"eps_host": 80.0, "mu_host": 1.0},  # water
}


def preset_materials(name: str, **overrides) -> MaterialSet:
    """Default metal parameters with one of the named host media."""
    if name not in HOST_PRESETS:
        raise KeyError(f"unknown material preset {name!r}; known: {sorted(HOST_PRESETS)}")
    return MaterialSet(**{**HOST_PRESETS[name], **overrides})


@dataclass(frozen=True)
class NondimScheme:
    """Length and frequency units of the scaled problem.

    Attributes:
        length_scale: ``L0`` in meters.
        frequency_scale: ``w0`` in rad/s, or None to use the plasma frequency.
    """

    length_scale: float = 1e-9
    frequency_scale: float | None = None

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if self.frequency_scale is not None and not self.frequency_scale > 0:
            raise ValueError("frequency_scale must be positive")

    def omega0(self, mats: MaterialSet) -> float:
        return mats.omega_p if self.frequency_scale is None else self.frequency_scale

    def scale_frequency(self, omega: float, mats: MaterialSet) -> float:
        return omega / self.omega0(mats)

    def unscale_frequency(self, omega: float, mats: MaterialSet) -> float:
        return omega * self.omega0(mats)

    def scale_length(self, x: float) -> float:
        return x / self.length_scale

    def unscale_length(self, x: float) -> float:
        return x * self.length_scale

    def scale_velocity(self, v: float, mats: MaterialSet) -> float:
        return v / (self.length_scale * self.omega0(mats))


@dataclass(frozen=True)
class ScaledMaterials:
    """Dimensionless constants used by the assembly code."""

    omega_p: float
    gamma: float
    beta: float
    eps_metal: float
    mu_metal: float
    eps_host: float
    mu_host: float
    wave_factor: float

    @property
    def beta2(self) -> float:
        return self.beta ** 2

    def wavenumber(self, omega: float) -> float:
        """Free-space wavenumber of the scaled frequency ``omega``."""
        return self.wave_factor * omega

    def gamma_star(self, omega: float, gamma):
        """``w (w + i gamma) / w_p^2``, the scaled inverse J susceptibility."""
        return omega * (omega + 1j * np.asarray(gamma)) / self.omega_p ** 2

    def beta_star(self, beta2):
        return np.asarray(beta2) / self.omega_p ** 2


def nondimensionalize(mats: MaterialSet, scheme: NondimScheme = NondimScheme(),
                      wave_factor: float | None = None) -> ScaledMaterials:
    """Scale a material set.

    Args:
        mats: Physical parameters.
        scheme: Units of length and frequency.
        wave_factor: Override for ``w0 * L0 / c``. Pass 1.0 for the literal
            convention where the scaled wavenumber equals the scaled frequency.

    Returns:
        The scaled constants. Relative permittivities and permeabilities pass
        through unchanged.
    """
    w0 = scheme.omega0(mats)
    if wave_factor is None:
        wave_factor = w0 * scheme.length_scale / mats.light_speed
    if not wave_factor > 0:
        raise ValueError("wave_factor must be positive")
    return ScaledMaterials(
        omega_p=mats.omega_p / w0,
        gamma=mats.gamma / w0,
        beta=scheme.scale_velocity(mats.beta, mats),
        eps_metal=mats.eps_metal,
        mu_metal=mats.mu_metal,
        eps_host=mats.eps_host,
        mu_host=mats.mu_host,
        wave_factor=float(wave_factor),
    )


@dataclass(frozen=True)
class CoefficientField:
    """Element-constant coefficients on a tagged mesh.

    ``gamma`` and ``beta2`` take the metal values on metal elements and the
    extension value ``lam`` on host elements. They are zero on vacuum
    elements, where no current unknown lives.
    """

    region: np.ndarray
    mu: np.ndarray
    eps: np.ndarray
    gamma: np.ndarray
    beta2: np.ndarray
    lam: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_elements(self) -> int:
        return self.region.size


def build_coefficient_field(region: np.ndarray, mats: ScaledMaterials,
                            lam: float | None = None) -> CoefficientField:
    """Fill per-element coefficients from region tags.

    Args:
        region: Element tags (``VACUUM``, ``HOST`` or ``METAL``), or a tagged
            mesh carrying them.
        mats: Scaled materials.
        lam: Extension parameter for the host, or None when the current is
            confined to the metal.

    Raises:
        ValueError: On unknown tags or a negative ``lam``.
    """
    region = getattr(region, "region", region)
    if region is None:
        raise ValueError("mesh has not been tagged")
    region = np.asarray(region)
    bad = ~np.isin(region, (VACUUM, HOST, METAL))
    if bad.any():
        raise ValueError(f"{int(bad.sum())} elements carry no valid region tag "
                         f"(first: element {int(np.flatnonzero(bad)[0])})")
    if lam is not None and lam < 0:
        raise ValueError("extension parameter must be nonnegative")
    metal = region == METAL
    host = region == HOST
    mu = np.ones(region.size)
    eps = np.ones(region.size)
    mu[metal], eps[metal] = mats.mu_metal, mats.eps_metal
    mu[host], eps[host] = mats.mu_host, mats.eps_host
    gamma = np.zeros(region.size)
    beta2 = np.zeros(region.size)
    gamma[metal], beta2[metal] = mats.gamma, mats.beta2
    if lam is not None:
        gamma[host] = beta2[host] = lam
    return CoefficientField(region=region, mu=mu, eps=eps, gamma=gamma,
                            beta2=beta2, lam=lam)
