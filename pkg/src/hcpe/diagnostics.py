"""Eulerian diagnostics: averaged flux, vertical velocity, residuals and energy.

The prognostic state is the triple (vertically averaged density ``rho_bar``,
horizontal velocity ``v``, temperature ``theta``). Density and pressure follow
from the column functionals in :mod:`hcpe.thermo`:
``rho = rho_bar * Bhat(theta)`` and ``p = rho * theta``.

The vertical velocity is diagnostic. Integrating the continuity equation from
the ground up gives

    rho w (z) = -int_0^z [ d_t rho + div_H(rho v) ] dz',
    d_t rho   = Bhat d_t rho_bar + rho_bar DBhat(theta)[d_t theta],

which, once ``d_t rho_bar = -div_H(rho_bar b)`` is substituted, is the
averaged-continuity form that never references ``d_t rho_bar``. Both variants
are available through ``form``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import grid as g
from . import thermo

HEATING_VARIANTS = ("full", "horizontal", "none")


@dataclass(frozen=True)
class Physics:
    """Viscosities and the heating closure.

    ``viscous_heating`` selects the dissipation returned to the temperature
    equation: ``"full"`` uses the complete velocity gradient (including
    ``d_z v``), which is the choice that conserves total energy;
    ``"horizontal"`` keeps only ``grad_H v``; ``"none"`` drops it.
    ``heat_source`` maps time to a prescribed heating field, or is ``None``.
    """

    mu: float = 0.1
    mu_prime: float = 0.1
    viscous_heating: str = "full"
    heat_source: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        if self.viscous_heating not in HEATING_VARIANTS:
            raise ValueError(f"viscous_heating must be one of {HEATING_VARIANTS}")
        if not (self.mu > 0 and self.mu + self.mu_prime > 0):
            raise ValueError("viscosities must satisfy mu > 0 and mu + mu_prime > 0")


@dataclass
class State:
    rho_bar: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    time: float = 0.0

    def copy(self):
        return State(self.rho_bar.copy(), self.v.copy(), self.theta.copy(), self.time)

    def check(self, grid):
        grid.check2(self.rho_bar, "rho_bar")
        grid.check3(self.theta, "theta")
        if self.v.shape != (2,) + grid.shape3:
            raise g.GridMismatchError(f"v: expected shape {(2,) + grid.shape3}, got {self.v.shape}")
        return self


@dataclass
class Tendencies:
    d_rho_bar: np.ndarray
    d_v: np.ndarray
    d_theta: np.ndarray
    extras: dict = field(default_factory=dict)

    def scaled(self, factor):
        return Tendencies(self.d_rho_bar * factor, self.d_v * factor, self.d_theta * factor)


def equilibrium_state(grid, eq, time=0.0):
    return State(
        rho_bar=np.full(grid.shape2, eq.rho_bar_star),
        v=np.zeros((2,) + grid.shape3),
        theta=np.full(grid.shape3, eq.theta_star),
        time=time,
    )


def b_field(state):
    """Density-weighted column mean of the velocity, ``int_0^1 Bhat v``."""
    return g.vertical_mean(thermo.Bhat(state.theta) * state.v)


def density(state):
    return thermo.density(state.rho_bar, state.theta)


def mass_flux_divergence(grid, state, d_rho_bar, d_theta, form="flux"):
    """Pointwise ``d_t rho + div_H(rho v)`` (the integrand of the w formula).

    ``form="flux"`` uses the supplied ``d_rho_bar``; ``form="averaged"`` uses
    the averaged-continuity substitution and ignores ``d_rho_bar``.
    """
    bhat = thermo.Bhat(state.theta)
    rb = state.rho_bar[..., None]
    d_bhat = thermo.frechet_DBhat(state.theta, d_theta)
    if form == "flux":
        return bhat * np.asarray(d_rho_bar)[..., None] + rb * d_bhat + grid.div_h(rb * bhat * state.v)
    if form == "averaged":
        b = g.vertical_mean(bhat * state.v)
        grad_rb = grid.grad_h(state.rho_bar)
        relative = state.v - b[..., None]
        advect = np.einsum("i...k,i...->...k", relative, grad_rb)
        return bhat * advect + rb * (d_bhat + grid.div_h(bhat * state.v) - bhat * grid.div_h(b)[..., None])
    raise ValueError(f"unknown form {form!r}")


def vertical_mass_flux(grid, state, d_rho_bar, d_theta, form="flux"):
    """``rho w`` from the column integral of the continuity equation."""
    return -g.cumulative_integral(mass_flux_divergence(grid, state, d_rho_bar, d_theta, form))


def vertical_velocity(grid, state, d_rho_bar, d_theta, form="flux"):
    """Diagnostic ``w``; ``w(z=0) == 0`` exactly."""
    rho = density(state)
    return g.divide(vertical_mass_flux(grid, state, d_rho_bar, d_theta, form), rho, "rho")


def averaged_continuity_residual(grid, state, d_rho_bar, d_theta):
    """Column mean of ``d_t rho + div_H(rho v)``.

    This is the discrete averaged continuity equation written for the diagnostic
    density. It equals ``-rho w`` at the lid, so ``|w(1)|`` is bounded by it
    divided by the lid density.
    """
    return g.vertical_mean(mass_flux_divergence(grid, state, d_rho_bar, d_theta, "flux"))


def viscous_heating(grid, v, physics):
    """Dissipation returned as heat, per the selected closure variant."""
    if physics.viscous_heating == "none":
        return np.zeros(v.shape[1:])
    jac = grid.jacobian_h(v)
    heat = physics.mu * np.sum(jac * jac, axis=(0, 1))
    if physics.viscous_heating == "full":
        heat = heat + physics.mu * (g.face_gradient_squared(v[0]) + g.face_gradient_squared(v[1]))
    div = grid.div_h(v)
    return heat + physics.mu_prime * div * div


def heat_source(physics, time, shape):
    if physics.heat_source is None:
        return np.zeros(shape)
    return np.broadcast_to(physics.heat_source(time), shape)


def viscous_force(grid, v, physics):
    """``mu Delta v + mu' grad_H div_H v`` with Neumann data in z."""
    lap = np.stack([grid.laplacian3(v[0]), grid.laplacian3(v[1])])
    return physics.mu * lap + physics.mu_prime * grid.grad_h_div_h(v)


def advective_derivative(grid, v, w, f, neumann=True):
    """``v . grad_H f + w d_z f`` for a scalar 3D field."""
    grad = grid.grad_h(f)
    return v[0] * grad[0] + v[1] * grad[1] + w * g.dz(f, neumann=neumann)


def pressure_work(theta, rho_w, d_rho_w):
    """``p d_z w`` rewritten with hydrostatic balance as ``(d_z theta + 1) rho w + theta d_z(rho w)``."""
    return (g.dz(theta, neumann=True) + 1.0) * rho_w + theta * d_rho_w


def residual_full_system(grid, state, tend, physics, system="recast", form="flux"):
    """Left-hand sides of the evolution equations for a state and its tendencies.

    ``system="recast"`` evaluates the averaged-density form (continuity for
    ``rho_bar``, momentum, temperature), with the pressure work expressed
    through the hydrostatic identity and ``d_z(rho w)`` taken from the
    continuity integrand. ``system="cpe"`` evaluates the original
    equations (full continuity, momentum, hydrostatic balance, gas law,
    temperature) with plain finite differences in z.
    Returns a dict of residual fields; heating sources sit on the right-hand
    side, so a solution gives zeros.
    """
    state.check(grid)
    theta, v, rb = state.theta, state.v, state.rho_bar
    bhat = thermo.Bhat(theta)
    rho = rb[..., None] * bhat
    p = rho * theta
    q = mass_flux_divergence(grid, state, tend.d_rho_bar, tend.d_theta, form)
    rho_w = -g.cumulative_integral(q)
    w = g.divide(rho_w, rho, "rho")
    forcing = heat_source(physics, state.time, theta.shape) + viscous_heating(grid, v, physics)
    adv_v = np.stack([advective_derivative(grid, v, w, v[i]) for i in range(2)])
    momentum = rho * (tend.d_v + adv_v) - viscous_force(grid, v, physics) + grid.grad_h(p)
    div_v = grid.div_h(v)
    adv_theta = advective_derivative(grid, v, w, theta)
    if system == "recast":
        b = g.vertical_mean(bhat * v)
        work = pressure_work(theta, rho_w, -q)
        temperature = rho * (tend.d_theta + adv_theta) + p * div_v + work - grid.laplacian3(theta) - forcing
        return {
            "continuity": tend.d_rho_bar + grid.div_h(rb * b),
            "momentum": momentum,
            "temperature": temperature,
        }
    if system == "cpe":
        d_rho = bhat * tend.d_rho_bar[..., None] + rb[..., None] * thermo.frechet_DBhat(theta, tend.d_theta)
        p_gas = thermo.pressure(thermo.surface_pressure(rb, theta), theta)
        temperature = (
            rho * (tend.d_theta + adv_theta)
            + p_gas * (div_v + g.dz(w))
            - grid.laplacian3(theta)
            - forcing
        )
        return {
            "continuity": d_rho + grid.div_h(rho * v) + g.dz(rho_w),
            "momentum": rho * (tend.d_v + adv_v) - viscous_force(grid, v, physics) + grid.grad_h(p_gas),
            "hydrostatic": g.dz(p_gas) + rho,
            "gas_law": p_gas - rho * theta,
            "temperature": temperature,
        }
    raise ValueError(f"unknown system {system!r}")


def energy_parts(grid, state):
    """Kinetic, internal and potential energy integrals (constants set to one)."""
    rho = density(state)
    kinetic = grid.integrate(0.5 * rho * np.sum(state.v**2, axis=0))
    internal = grid.integrate(rho * state.theta)
    potential = grid.integrate(rho * grid.z)
    return {"kinetic": float(kinetic), "internal": float(internal), "potential": float(potential)}


def total_energy(grid, state):
    return sum(energy_parts(grid, state).values())


def energy_rate(grid, state, tend):
    """Time derivative of :func:`total_energy` along the given tendencies."""
    theta, v = state.theta, state.v
    bhat = thermo.Bhat(theta)
    rho = state.rho_bar[..., None] * bhat
    d_rho = bhat * tend.d_rho_bar[..., None] + state.rho_bar[..., None] * thermo.frechet_DBhat(theta, tend.d_theta)
    speed2 = np.sum(v**2, axis=0)
    integrand = (
        d_rho * (0.5 * speed2 + theta + grid.z)
        + rho * np.sum(v * tend.d_v, axis=0)
        + rho * tend.d_theta
    )
    return float(grid.integrate(integrand))


def pressure_work_identity(grid, state, w):
    """Residuals of ``p d_z w = d_z(p w) + rho w = (d_z theta + 1) rho w + theta d_z(rho w)``.

    Uses the gas-law pressure ``p = p_s exp(-A)`` so that the identity probes
    hydrostatic consistency. Returns ``(first, second)``: the differences
    between the left side and each of the two right-hand forms.
    """
    theta = state.theta
    rho = density(state)
    p = thermo.pressure(thermo.surface_pressure(state.rho_bar, theta), theta)
    lhs = p * g.dz(w)
    first = lhs - (g.dz(p * w) + rho * w)
    second = lhs - ((g.dz(theta) + 1.0) * rho * w + theta * g.dz(rho * w))
    return first, second


class DiagnosticsWriter:
    """Append-only CSV time series, one row per diagnostic step."""

    columns = (
        "time",
        "energy",
        "kinetic",
        "internal",
        "potential",
        "max_abs_w_top",
        "continuity_residual",
        "momentum_residual",
        "temperature_residual",
        "mass",
    )

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.columns)

    def write(self, row):
        self._writer.writerow([repr(float(row[c])) for c in self.columns])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def diagnostics_row(grid, state, tend, physics):
    """Energy, lid velocity, residual norms and mass for one state."""
    parts = energy_parts(grid, state)
    res = residual_full_system(grid, state, tend, physics)
    w = vertical_velocity(grid, state, tend.d_rho_bar, tend.d_theta)
    return {
        "time": state.time,
        "energy": sum(parts.values()),
        **parts,
        "max_abs_w_top": float(np.max(np.abs(w[..., -1]))),
        "continuity_residual": float(np.max(np.abs(res["continuity"]))),
        "momentum_residual": float(np.max(np.abs(res["momentum"]))),
        "temperature_residual": float(np.max(np.abs(res["temperature"]))),
        "mass": float(grid.integrate(state.rho_bar)),
    }


__all__ = [
    "Physics",
    "State",
    "Tendencies",
    "b_field",
    "vertical_velocity",
    "residual_full_system",
    "total_energy",
    "energy_rate",
    "pressure_work_identity",
    "replace",
]
