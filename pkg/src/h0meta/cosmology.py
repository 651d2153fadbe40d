"""Flat LambdaCDM distances used by time-delay cosmography.

All distances are in Mpc and the Hubble constant in km/s/Mpc, so the Hubble
distance is ``C_KM_PER_S / h0``. Time delays are in days and enter through
``C_MPC_PER_DAY``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate

__all__ = [
    "C_KM_PER_S",
    "SECONDS_PER_DAY",
    "KM_PER_MPC",
    "C_MPC_PER_DAY",
    "ARCSEC2_TO_RAD2",
    "Cosmology",
    "RedshiftPair",
    "CosmologyDomainError",
    "DegenerateGeometryError",
    "QuadratureError",
    "inverse_expansion_rate",
    "comoving_integral",
    "comoving_integrals",
    "angular_diameter_distances",
    "time_delay_distance",
    "external_time_delay_distance",
    "time_delay_distance_times_h0",
]

C_KM_PER_S = 299792.458
SECONDS_PER_DAY = 86400.0
KM_PER_MPC = 3.0856775814913673e19
#: speed of light in Mpc per day (~8.394e-10)
C_MPC_PER_DAY = C_KM_PER_S * SECONDS_PER_DAY / KM_PER_MPC
#: one square arcsecond in square radians
ARCSEC2_TO_RAD2 = (np.pi / 648000.0) ** 2

DEFAULT_REL_TOL = 1e-8
MAX_SUBDIVISIONS = 200
MIN_REL_TOL = 1e-13  # QUADPACK refuses anything near machine precision


class CosmologyDomainError(ValueError):
    """An argument lies outside the domain of a distance function."""


class DegenerateGeometryError(CosmologyDomainError):
    """The deflector is not strictly in front of the source."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved_rel_error):
        super().__init__(message)
        self.achieved_rel_error = achieved_rel_error


@dataclass(frozen=True)
class Cosmology:
    """Flat LambdaCDM cosmology; ``omega_lambda`` is always ``1 - omega_m``."""

    h0: float
    omega_m: float

    def __post_init__(self):
        if not (np.isfinite(self.h0) and self.h0 > 0):
            raise CosmologyDomainError(f"h0 must be positive, got {self.h0!r}")
        if not (0.0 < self.omega_m < 1.0):
            raise CosmologyDomainError(
                f"omega_m must lie in (0, 1), got {self.omega_m!r}")

    @property
    def omega_lambda(self) -> float:
        return 1.0 - self.omega_m


@dataclass(frozen=True)
class RedshiftPair:
    z_d: float
    z_s: float

    def __post_init__(self):
        if not (self.z_d > 0 and np.isfinite(self.z_s)):
            raise DegenerateGeometryError(
                f"need 0 < z_d < z_s, got z_d={self.z_d!r}, z_s={self.z_s!r}")
        if not self.z_d < self.z_s:
            raise DegenerateGeometryError(
                f"need z_d < z_s, got z_d={self.z_d!r}, z_s={self.z_s!r}")


def _omega(cosmo) -> float:
    return cosmo.omega_m if isinstance(cosmo, Cosmology) else float(cosmo)


def inverse_expansion_rate(u, cosmo):
    """Return ``W(u) = sqrt((1 + u)^3 omega_m + omega_lambda)``.

    ``cosmo`` may be a :class:`Cosmology` or a bare ``omega_m``. The
    comoving integrand is the reciprocal of this value.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise CosmologyDomainError("redshift must be non-negative")
    om = _omega(cosmo)
    w = np.sqrt((1.0 + u) ** 3 * om + (1.0 - om))
    return float(w) if w.ndim == 0 else w


def comoving_integral(z, cosmo, rel_tol=DEFAULT_REL_TOL):
    """Dimensionless line-of-sight integral ``int_0^z du / W(u)``."""
    if z < 0:
        raise CosmologyDomainError(f"redshift must be non-negative, got {z!r}")
    if not rel_tol >= MIN_REL_TOL:
        raise ValueError(f"rel_tol must be at least {MIN_REL_TOL:g}")
    if z == 0:
        return 0.0
    om = _omega(cosmo)
    ol = 1.0 - om
    value, abserr, info = integrate.quad(
        lambda u: 1.0 / np.sqrt((1.0 + u) ** 3 * om + ol), 0.0, z,
        epsabs=0.0, epsrel=rel_tol, limit=MAX_SUBDIVISIONS, full_output=True)[:3]
    achieved = abserr / abs(value)
    if achieved > rel_tol:
        raise QuadratureError(
            f"quadrature did not converge for z={z}: relative error {achieved:.3g}",
            achieved)
    return value


def comoving_integrals(zs, omega_m, rel_tol=DEFAULT_REL_TOL):
    """Vectorised :func:`comoving_integral` over an array of redshifts.

    Substituting ``u = z t`` maps every integral onto ``[0, 1]`` so one
    adaptive vector quadrature handles the whole batch.
    """
    zs = np.asarray(zs, dtype=float)
    if zs.size == 0:
        return np.zeros_like(zs)
    if np.any(zs < 0):
        raise CosmologyDomainError("redshift must be non-negative")
    om = float(omega_m)
    ol = 1.0 - om

    def integrand(t):
        return zs / np.sqrt((1.0 + zs * t) ** 3 * om + ol)

    # each integral is bounded below by z / W(z), so this absolute max-norm
    # tolerance guarantees rel_tol on every component
    lower = zs / np.sqrt((1.0 + zs) ** 3 * om + ol)
    positive = lower[zs > 0]
    if positive.size == 0:
        return np.zeros_like(zs)
    epsabs = rel_tol * positive.min()
    values, err = integrate.quad_vec(
        integrand, 0.0, 1.0, epsabs=epsabs, epsrel=0.0, norm="max",
        limit=MAX_SUBDIVISIONS)
    if err > epsabs:
        raise QuadratureError("vector quadrature did not converge",
                              err / positive.min())
    return values


def _check_pair(z) -> RedshiftPair:
    if isinstance(z, RedshiftPair):
        return z
    return RedshiftPair(*z)


def angular_diameter_distances(cosmo: Cosmology, z, rel_tol=DEFAULT_REL_TOL):
    """Return ``(D_d, D_s, D_ds)`` in Mpc for a lens at ``z.z_d`` and source at ``z.z_s``."""
    z = _check_pair(z)
    i_d = comoving_integral(z.z_d, cosmo, rel_tol)
    i_s = comoving_integral(z.z_s, cosmo, rel_tol)
    d_h = C_KM_PER_S / cosmo.h0
    d_ds = d_h * (i_s - i_d) / (1.0 + z.z_s)
    if not d_ds > 0:
        raise DegenerateGeometryError("D_ds is not positive")
    return d_h * i_d / (1.0 + z.z_d), d_h * i_s / (1.0 + z.z_s), d_ds


def time_delay_distance_times_h0(i_d, i_s):
    """``H0 * D_dt`` from the two comoving integrals (works on arrays)."""
    return C_KM_PER_S * i_d * i_s / (i_s - i_d)


def time_delay_distance(cosmo: Cosmology, z, rel_tol=DEFAULT_REL_TOL):
    """Time-delay distance ``(1 + z_d) D_d D_s / D_ds`` in Mpc."""
    z = _check_pair(z)
    i_d = comoving_integral(z.z_d, cosmo, rel_tol)
    i_s = comoving_integral(z.z_s, cosmo, rel_tol)
    if not i_s > i_d:
        raise DegenerateGeometryError("D_ds is not positive")
    return time_delay_distance_times_h0(i_d, i_s) / cosmo.h0


def external_time_delay_distance(cosmo: Cosmology, z, kappa_ext, rel_tol=DEFAULT_REL_TOL):
    """Time-delay distance rescaled by the line-of-sight convergence, ``D_dt / (1 - kappa)``."""
    if not kappa_ext < 1:
        raise CosmologyDomainError(f"kappa_ext must be < 1, got {kappa_ext!r}")
    return time_delay_distance(cosmo, z, rel_tol) / (1.0 - kappa_ext)
