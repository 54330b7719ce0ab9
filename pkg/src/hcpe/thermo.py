"""Hydrostatic column functionals of the temperature.

With all physical constants set to one, hydrostatic balance and the ideal gas
law give every column's pressure and density as explicit functionals of the
temperature profile ``theta(z)``:

* ``A(z)   = int_0^z 1/theta``
* ``B      = exp(-A) / theta``
* ``Bbar   = 1 - exp(-A(1))``         (column integral of ``B``)
* ``Bhat   = B / Bbar``               (unit column integral)
* ``p      = p_s exp(-A)``,  ``rho = rho_bar * Bhat``

All functions act on the last (vertical) axis, so they accept bare profiles as
well as full 3D fields. Column integrals use the trapezoid rule of
:mod:`hcpe.grid`; ``Bbar`` is the closed form in ``A(1)``, which is why
``int Bhat`` equals one only up to quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as g
from .errors import DegeneracyError, RegimeError


def _positive(theta):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or np.min(theta) <= 0.0:
        raise RegimeError("temperature must be finite and positive", field="theta")
    return theta


def inverse_temperature_integral(theta):
    """``A(z) = int_0^z theta^{-1}``, always from the quadrature of ``1/theta``."""
    return g.cumulative_integral(1.0 / _positive(theta))


def B_of_theta(theta):
    theta = _positive(theta)
    return np.exp(-inverse_temperature_integral(theta)) / theta


def Bbar(theta):
    """Column integral of ``B`` in closed form, ``1 - exp(-int_0^1 1/theta)``."""
    return -np.expm1(-g.vertical_mean(1.0 / _positive(theta)))


def Bhat(theta):
    return g.divide(B_of_theta(theta), Bbar(theta)[..., None], "Bbar")


def pressure(p_s, theta):
    return np.asarray(p_s, dtype=float)[..., None] * np.exp(-inverse_temperature_integral(theta))


def top_pressure(p_s, theta):
    return np.asarray(p_s, dtype=float) * np.exp(-g.vertical_mean(1.0 / _positive(theta)))


def surface_pressure(rho_bar, theta):
    """``p_s = rho_bar / Bbar`` so that ``rho_bar = p_s - p_t``."""
    return g.divide(np.asarray(rho_bar, dtype=float), Bbar(theta), "Bbar")


def density(rho_bar, theta):
    return np.asarray(rho_bar, dtype=float)[..., None] * Bhat(theta)


def frechet_DBhat(theta, h):
    """Directional derivative of ``Bhat`` at ``theta`` in direction ``h``.

    Written as a multiplication term plus two column integrals of
    ``h / theta^2``. With the discrete quadrature it is the exact derivative of
    the discrete map :func:`Bhat`.
    """
    theta = _positive(theta)
    h = np.asarray(h, dtype=float)
    a = inverse_temperature_integral(theta)
    a1 = a[..., -1:]
    norm = -np.expm1(-a1)
    if np.min(np.abs(norm)) < g.GUARD:
        raise DegeneracyError("Bbar is degenerate")
    decay = np.exp(-a)
    weighted = h / theta**2
    local = decay / norm * (-weighted + g.cumulative_integral(weighted) / theta)
    top = decay / theta / norm**2 * np.exp(-a1) * g.vertical_mean(weighted)[..., None]
    return local + top


def frechet_matrix(theta):
    """Per-column matrices ``M`` with ``M @ h == frechet_DBhat(theta, h)``.

    Returns shape ``theta.shape + (nz,)``.
    """
    theta = _positive(theta)
    nz = theta.shape[-1]
    a = inverse_temperature_integral(theta)
    a1 = a[..., -1:]
    norm = -np.expm1(-a1)
    decay = np.exp(-a)
    inv_t2 = 1.0 / theta**2
    c = g.cumulative_matrix(nz)
    w = g.trapezoid_weights(nz)
    mat = (decay / norm / theta)[..., :, None] * c * inv_t2[..., None, :]
    diag = np.arange(nz)
    mat[..., diag, diag] -= decay / norm * inv_t2
    mat += (decay / theta / norm**2 * np.exp(-a1))[..., :, None] * (w * inv_t2)[..., None, :]
    return mat


@dataclass(frozen=True)
class Equilibrium:
    """Constant reference state and its vertical profiles on ``nz`` nodes.

    ``beta`` is the closed form. ``beta_h`` is the same profile rescaled so
    that its trapezoid integral is exactly one; the nonlocal operators use it
    so that the discrete projection is idempotent to rounding error.
    """

    rho_bar_star: float
    theta_star: float
    z: np.ndarray
    Bhat_star: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    beta_h: np.ndarray

    @classmethod
    def create(cls, rho_bar_star, theta_star, nz, beta_scale=1.0):
        """Build the profiles; ``beta_scale`` != 1 deliberately breaks normalization."""
        if rho_bar_star <= 0 or theta_star <= 0:
            raise RegimeError("equilibrium constants must be positive")
        z = np.linspace(0.0, 1.0, nz)
        denom = theta_star * -np.expm1(-1.0 / theta_star)
        bhat = np.exp(-z / theta_star) / denom
        beta = np.exp((z - 1.0) / theta_star) / denom
        beta_h = beta / g.vertical_mean(beta) * beta_scale
        return cls(
            rho_bar_star=float(rho_bar_star),
            theta_star=float(theta_star),
            z=z,
            Bhat_star=bhat,
            alpha=1.0 / (rho_bar_star * bhat),
            beta=beta * beta_scale,
            beta_h=beta_h,
        )

    @property
    def nz(self):
        return self.z.size

    @property
    def top_weight(self):
        """``exp(-1/T*) / (T*^2 (1 - exp(-1/T*)))``, the coefficient of ``int_0^1 h`` in DBhat*."""
        ts = self.theta_star
        return np.exp(-1.0 / ts) / (ts * ts * -np.expm1(-1.0 / ts))

    def density_profile(self):
        return self.rho_bar_star * self.Bhat_star

    def check_regime(self, theta, where="theta"):
        """Raise :class:`RegimeError` unless ``T*/2 <= theta <= 3 T*/2`` everywhere."""
        theta = np.asarray(theta)
        lo, hi = 0.5 * self.theta_star, 1.5 * self.theta_star
        bad = (theta < lo) | (theta > hi) | ~np.isfinite(theta)
        if np.any(bad):
            loc = tuple(int(i) for i in np.unravel_index(np.argmax(bad), theta.shape))
            raise RegimeError(
                f"{where} left [{lo:g}, {hi:g}] at index {loc} (value {theta[loc]:.6g})",
                field=where,
                location=loc,
            )


def DBhat_equilibrium(eq, h):
    """Derivative of ``Bhat`` at the constant temperature ``eq.theta_star``."""
    h = np.asarray(h, dtype=float)
    ts = eq.theta_star
    inner = -h / ts + g.cumulative_integral(h) / ts**2 + eq.top_weight * g.vertical_mean(h)[..., None]
    return eq.Bhat_star * inner


def delta_Bhat(theta_L, eq):
    """``Bhat(theta_L + T*) - Bhat(T*)``."""
    return Bhat(np.asarray(theta_L, dtype=float) + eq.theta_star) - eq.Bhat_star


def delta_DBhat(theta_L, eq, h):
    """``DBhat(theta_L + T*)[h] - DBhat(T*)[h]``."""
    return frechet_DBhat(np.asarray(theta_L, dtype=float) + eq.theta_star, h) - DBhat_equilibrium(eq, h)
