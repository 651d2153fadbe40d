"""Brute-force reference computations, deliberately independent of the package.

Nothing here imports h0meta. Constants are restated from their SI
definitions and integrals use fixed-step composite trapezoid rules.
"""
import math

import numpy as np

C_KMS = 299792.458
KM_PER_MPC = 3.0856775814913673e19
C_MPC_DAY = C_KMS * 86400.0 / KM_PER_MPC
N_PANELS = 10**6


def trapezoid_integral(z, omega_m, n=N_PANELS):
    """Integral of du / sqrt((1+u)^3 Om + 1 - Om) on [0, z] by the trapezoid rule."""
    if z == 0:
        return 0.0
    u = np.linspace(0.0, z, n + 1)
    f = 1.0 / np.sqrt((1.0 + u) ** 3 * omega_m + 1.0 - omega_m)
    return float(np.trapezoid(f, u))


def distances(h0, omega_m, z_d, z_s):
    i_d = trapezoid_integral(z_d, omega_m)
    i_s = trapezoid_integral(z_s, omega_m)
    dh = C_KMS / h0
    return dh * i_d / (1 + z_d), dh * i_s / (1 + z_s), dh * (i_s - i_d) / (1 + z_s)


def time_delay_distance(h0, omega_m, z_d, z_s):
    d_d, d_s, d_ds = distances(h0, omega_m, z_d, z_s)
    return (1 + z_d) * d_d * d_s / d_ds


def t4_density(x, loc, scale):
    """Student-t, 4 dof, by the textbook gamma-function formula."""
    nu = 4.0
    r = (x - loc) / scale
    norm = math.gamma((nu + 1) / 2) / (math.gamma(nu / 2) * math.sqrt(nu * math.pi) * scale)
    return norm * (1 + r * r / nu) ** (-(nu + 1) / 2)


def marginal_density_by_quadrature(phi_hat, a, b, sigma_phi):
    """Density of phi_hat after integrating out the latent delay and the variance factor.

    Generative model written directly from the hierarchical form:
      delta ~ flat, delta_hat | delta, alpha ~ N(delta, alpha sd_delta^2),
      phi_hat | delta, alpha ~ N(a delta, alpha sigma_phi^2),
      alpha ~ InvGamma(2, 2).
    Taking sd_delta so that a * sd_delta = b, the location is ``a * delta_hat``
    and the marginal scale is ``sqrt(b^2 + sigma_phi^2)``. We put
    delta_hat = 1 so the location equals ``a``.
    The delta integral is done on a fine grid; the alpha integral on a
    log-spaced grid.
    """
    delta_hat = 1.0
    sd_delta = b / a
    s_tot = math.sqrt(b * b + sigma_phi * sigma_phi)
    # alpha on a log grid; InvGamma(2, 2) density is 4 alpha^-3 exp(-2 / alpha)
    t = np.linspace(math.log(1e-3), math.log(1e7), 3001)[:, None]
    alpha = np.exp(t)
    w_alpha = 4.0 * alpha ** -2 * np.exp(-2.0 / alpha)  # density times d alpha / dt
    sd_d = np.sqrt(alpha) * sd_delta
    sd_p = np.sqrt(alpha) * sigma_phi
    half = 12.0 * np.sqrt(alpha) * max(sd_delta, s_tot / a)
    u = np.linspace(-1.0, 1.0, 2001)[None, :]
    d = delta_hat + half * u
    f = (np.exp(-0.5 * ((delta_hat - d) / sd_d) ** 2) / (sd_d * math.sqrt(2 * math.pi))
         * np.exp(-0.5 * ((phi_hat - a * d) / sd_p) ** 2) / (sd_p * math.sqrt(2 * math.pi)))
    inner = np.trapezoid(f, u, axis=1) * half[:, 0]
    return float(np.trapezoid(inner * w_alpha[:, 0], t[:, 0]))
