"""The system written along the characteristics of ``b``.

Unknowns are perturbations composed with the flow map:
``rho_bar_L = rho_bar o X - rho*``, ``v_L = v o X``, ``theta_L = theta o X - T*``.
Horizontal derivatives with respect to Eulerian coordinates become
``grad_x f = Z^T grad_y f`` and ``div_x F = grad_y F : Z^T``, where
``Z = (grad X)^{-1}``; time derivatives are taken along the characteristics.

Remainders ``(f1, f2, f3)`` are defined so that the linear operator of
:mod:`hcpe.linear` applied to the Lagrangian unknowns equals them exactly on
solutions:

    f = LHS_linear(u_L, d_t u_L) - E(u_L, d_t u_L),

where ``E`` is the transformed nonlinear left-hand side (continuity as is,
momentum and temperature divided by ``rho* Bhat*``). This definitional path is
what the solvers use. :func:`termwise_remainders` evaluates the long literal
term lists one by one and :func:`audit` compares the two.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import grid as g
from . import thermo
from .diagnostics import Physics
from .errors import TranscriptionAuditWarning
from .lagrange import Frame, compose, inverse_map
from .linear import LinearState, LinearSystem


@dataclass
class LagrangianState:
    rho_bar_L: np.ndarray
    v_L: np.ndarray
    theta_L: np.ndarray
    frame: Frame
    eq: thermo.Equilibrium

    def as_linear(self):
        return LinearState(self.rho_bar_L, self.v_L, self.theta_L)


@dataclass
class LagrangianTendencies:
    d_rho_bar_L: np.ndarray
    d_v_L: np.ndarray
    d_theta_L: np.ndarray

    def as_linear(self):
        return LinearState(self.d_rho_bar_L, self.d_v_L, self.d_theta_L)


# -- transformation ---------------------------------------------------------------


def transform_state(grid, state, frame, eq):
    """Compose an Eulerian state with the flow and subtract the equilibrium."""
    disp = frame.displacement
    return LagrangianState(
        compose(grid, state.rho_bar, disp) - eq.rho_bar_star,
        compose(grid, state.v, disp),
        compose(grid, state.theta, disp) - eq.theta_star,
        frame,
        eq,
    )


def untransform(grid, lag, time=0.0):
    """Pull back to Eulerian coordinates through the inverse map ``Y``."""
    from .diagnostics import State

    ydisp = inverse_map(grid, lag.frame.displacement)
    eq = lag.eq
    return State(
        compose(grid, lag.rho_bar_L, ydisp) + eq.rho_bar_star,
        compose(grid, lag.v_L, ydisp),
        compose(grid, lag.theta_L, ydisp) + eq.theta_star,
        time,
    )


# -- chain rule -------------------------------------------------------------------


def _zfield(Z, f):
    """Broadcast a (2, 2, nx, ny) matrix field against a 2D or 3D scalar."""
    return Z[..., None] if np.ndim(f) == 3 else Z


def grad_x(grid, f, Z):
    """``Z^T grad_y f``."""
    return np.einsum("kj...,k...->j...", _zfield(Z, f), grid.grad_h(f))


def div_x(grid, F, Z):
    """``sum_{i,k} dF_i/dy_k Z_{k,i}``."""
    return np.einsum("ik...,ki...->...", grid.jacobian_h(F), _zfield(Z, F[0]))


def laplacian_x(grid, f, Z):
    """Horizontal Laplacian in Eulerian coordinates, written in Lagrangian ones."""
    return div_x(grid, grad_x(grid, f, Z), Z)


def directional(Z, a, grad_field):
    """``(Z a) . grad`` for a vector ``a`` and a gradient field (leading axis 2)."""
    za = np.einsum("kj...,j...->k...", _zfield(Z, a[0]), a)
    return np.sum(za * grad_field, axis=0)


def double_dot(J, M):
    """``J : M = sum_{i,k} J_{ik} M_{ik}``."""
    return np.einsum("ik...,ik...->...", J, M)


# -- transformed diagnostics ------------------------------------------------------


def theta_total(lag):
    return lag.theta_L + lag.eq.theta_star


def b_L(grid, lag):
    """``int_0^1 (Bhat* + delta Bhat) v_L``."""
    return g.vertical_mean(thermo.Bhat(theta_total(lag)) * lag.v_L)


def div_b_L(grid, lag, chain_rule=False):
    """Divergence of ``b_L`` assembled from the derivative of ``Bhat``.

    ``chain_rule=False`` gives the divergence in Lagrangian coordinates, built
    as ``int [DBhat(grad theta_L) . v_L + Bhat div v_L]``. With
    ``chain_rule=True`` the Eulerian divergence ``(div_x b) o X`` is returned.
    """
    theta = theta_total(lag)
    if chain_rule:
        return div_x(grid, b_L(grid, lag), lag.frame.Z)
    dbhat = thermo.frechet_DBhat(theta, grid.grad_h(lag.theta_L))
    return g.vertical_mean(np.sum(dbhat * lag.v_L, axis=0) + thermo.Bhat(theta) * grid.div_h(lag.v_L))


def wL_integrand(grid, lag, d_theta_L):
    """Integrand of the transformed vertical mass flux (its exact first form).

    ``(rho Bhat w)^L = -int_0^z integrand``.
    """
    eq, Z = lag.eq, lag.frame.Z
    theta = theta_total(lag)
    bhat = thermo.Bhat(theta)
    rho_bar = lag.rho_bar_L + eq.rho_bar_star
    rel = lag.v_L - b_L(grid, lag)[..., None]
    grad_rho = np.einsum("kj...,k...->j...", Z, grid.grad_h(lag.rho_bar_L))[..., None]
    return (
        bhat * np.sum(rel * grad_rho, axis=0)
        + rho_bar[..., None] * (thermo.frechet_DBhat(theta, d_theta_L) + div_x(grid, bhat * rel, Z))
    )


def wL_and_J_split(grid, lag, d_theta_L):
    """``(J1, J2, wL_numerator)`` with ``wL_numerator = (rho Bhat w)^L``.

    ``wL_numerator`` comes from the exact first form of the transformed flux.
    ``J1`` is the literal first-order part; ``J2`` is the literal higher-order
    part, term by term (see :func:`_J2_literal`).
    """
    eq = lag.eq
    numerator = -g.cumulative_integral(wL_integrand(grid, lag, d_theta_L))
    J1 = _J1(grid, lag, d_theta_L)
    J2 = sum(_J2_literal(grid, lag, d_theta_L).values())
    return J1, J2, numerator


def _J1(grid, lag, d_theta_L):
    eq = lag.eq
    div = grid.div_h(lag.v_L)
    rs = eq.rho_bar_star
    inner = thermo.DBhat_equilibrium(eq, d_theta_L) + eq.Bhat_star * div
    return -rs * g.cumulative_integral(inner) + rs * g.cumulative_integral(eq.Bhat_star) * g.vertical_mean(
        eq.Bhat_star * div
    )[..., None]


def _common(grid, lag):
    eq, Z = lag.eq, lag.frame.Z
    theta = theta_total(lag)
    c = {
        "Z": Z,
        "ZmI": Z - np.eye(2)[:, :, None, None],
        "rL": lag.rho_bar_L[..., None],
        "rs": eq.rho_bar_star,
        "Bs": eq.Bhat_star,
        "dB": thermo.delta_Bhat(lag.theta_L, eq),
        "Ts": eq.theta_star,
        "TL": lag.theta_L,
        "theta": theta,
        "v": lag.v_L,
        "b": b_L(grid, lag),
    }
    c["rel"] = c["v"] - c["b"][..., None]
    c["ZT_grad_rho"] = np.einsum("kj...,k...->j...", Z, grid.grad_h(lag.rho_bar_L))[..., None]
    c["grad_theta"] = grid.grad_h(lag.theta_L)
    c["ZT_grad_theta"] = np.einsum("kj...,k...->j...", Z[..., None], c["grad_theta"])
    c["DB"] = lambda h: thermo.frechet_DBhat(theta, h)
    c["ZT_minus_I"] = np.swapaxes(c["ZmI"], 0, 1)
    return c


def _J2_literal(grid, lag, d_theta_L):
    """Higher-order part of the transformed flux, one entry per literal term."""
    c = _common(grid, lag)
    Bs, dB, rL, rs = c["Bs"], c["dB"], c["rL"], c["rs"]
    rel, Z = c["rel"], c["Z"]
    rho_bar = rL + rs
    jac_rel = grid.jacobian_h(rel)
    div_rel = grid.div_h(rel)
    div_v = grid.div_h(c["v"])
    DB = c["DB"]
    adv_theta = directional(Z, rel, c["grad_theta"])
    t = {}
    t["J2.density-gradient"] = (Bs + dB) * (
        np.sum(rel * c["ZT_grad_rho"], axis=0) + rho_bar * double_dot(jac_rel, c["ZT_minus_I"][..., None])
    )
    t["J2.div-rel"] = (Bs * rL + dB * rL + dB * rs) * div_rel
    # literal reading: Bhat* rho* (div v - DBhat(grad theta_L) . v + delta Bhat grad v); the last
    # factor is read as delta Bhat div v
    t["J2.flux-divergence"] = Bs * rs * (div_v - np.sum(DB(c["grad_theta"]) * c["v"], axis=0) + dB * div_v)
    t["J2.time-rhoL"] = rL * DB(d_theta_L + adv_theta)
    t["J2.advection-rhostar"] = rs * DB(adv_theta)
    return {k: -g.cumulative_integral(v) for k, v in t.items()}


def _J2_corrected(grid, lag, d_theta_L):
    """Higher-order part derived from the exact first form (for the audit)."""
    c = _common(grid, lag)
    eq = lag.eq
    Bs, dB, rL, rs = c["Bs"], c["dB"], c["rL"], c["rs"]
    rel, Z, theta = c["rel"], c["Z"], c["theta"]
    rho_bar = rL + rs
    bhat = Bs + dB
    jac_rel = grid.jacobian_h(rel)
    div_v = grid.div_h(c["v"])
    div_b = grid.div_h(c["b"])[..., None]
    i1 = g.vertical_mean(Bs * div_v)[..., None]
    DB = c["DB"]
    t = {}
    t["J2.density-gradient"] = bhat * np.sum(rel * c["ZT_grad_rho"], axis=0) + rho_bar * bhat * double_dot(
        jac_rel, c["ZT_minus_I"][..., None]
    )
    t["J2.div-rel"] = (Bs * rL + dB * rL + dB * rs) * (div_v - div_b)
    t["J2.flux-divergence"] = -Bs * rs * (div_b - i1)
    t["J2.time-rhoL"] = rho_bar * np.sum(rel * DB(c["ZT_grad_theta"]), axis=0) + (
        rho_bar * DB(d_theta_L) - rs * thermo.DBhat_equilibrium(eq, d_theta_L)
    )
    t["J2.advection-rhostar"] = np.zeros_like(theta)
    return {k: -g.cumulative_integral(v) for k, v in t.items()}


# -- definitional remainders ----------------------------------------------------


def transformed_lhs(grid, lag, tend, physics, heat_L=None):
    """``(E1, E2, E3)``: the transformed nonlinear left-hand sides.

    ``E2`` and ``E3`` are divided by ``rho* Bhat*``. Viscous heating follows
    ``physics.viscous_heating``; ``heat_L`` is an optional prescribed source
    already composed with the flow.
    """
    eq, Z = lag.eq, lag.frame.Z
    theta = theta_total(lag)
    v = lag.v_L
    bhat = thermo.Bhat(theta)
    rho_bar = lag.rho_bar_L + eq.rho_bar_star
    rho = rho_bar[..., None] * bhat
    p = rho * theta
    scale = eq.rho_bar_star * eq.Bhat_star
    b = b_L(grid, lag)
    rel = v - b[..., None]

    E1 = tend.d_rho_bar_L + rho_bar * div_x(grid, b, Z)

    integrand = wL_integrand(grid, lag, tend.d_theta_L)
    rho_w = -g.cumulative_integral(integrand)
    w = g.divide(rho_w, rho, "rho")

    adv_v = np.stack([directional(Z, rel, grid.grad_h(v[i])) for i in range(2)])
    dz_v = g.dz(v, neumann=True)
    lap_v = np.stack([laplacian_x(grid, v[i], Z) + g.dzz(v[i]) for i in range(2)])
    div_v = div_x(grid, v, Z)
    momentum = (
        rho * (tend.d_v_L + adv_v + w * dz_v)
        - physics.mu * lap_v
        - physics.mu_prime * grad_x(grid, div_v, Z)
        + grad_x(grid, p, Z)
    )

    dz_theta = g.dz(theta, neumann=True)
    adv_theta = directional(Z, rel, grid.grad_h(lag.theta_L))
    work = (dz_theta + 1.0) * rho_w - theta * integrand
    heat = lagrangian_heating(grid, v, Z, physics)
    if heat_L is not None:
        heat = heat + heat_L
    temperature = (
        rho * (tend.d_theta_L + adv_theta + w * dz_theta)
        + p * div_v
        + work
        - (laplacian_x(grid, lag.theta_L, Z) + g.dzz(lag.theta_L))
        - heat
    )
    return E1, momentum / scale, temperature / scale


def lagrangian_heating(grid, v, Z, physics):
    """Viscous heating with gradients taken in Eulerian coordinates."""
    if physics.viscous_heating == "none":
        return np.zeros(v.shape[1:])
    jac = np.einsum("ik...,kj...->ij...", grid.jacobian_h(v), Z[..., None])
    heat = physics.mu * np.sum(jac * jac, axis=(0, 1))
    if physics.viscous_heating == "full":
        heat = heat + physics.mu * (g.face_gradient_squared(v[0]) + g.face_gradient_squared(v[1]))
    div = jac[0, 0] + jac[1, 1]
    return heat + physics.mu_prime * div * div


def remainders(grid, lag, tend, physics=None, system=None, heat_L=None):
    """Definitional remainders ``(f1, f2, f3)``; ``f3`` is before ``Linv``."""
    physics = physics or Physics()
    system = system or LinearSystem(grid, lag.eq, physics.mu, physics.mu_prime)
    r1, r2, r3 = system.lhs(lag.as_linear(), tend.as_linear())
    E1, E2, E3 = transformed_lhs(grid, lag, tend, physics, heat_L)
    return r1 - E1, r2 - E2, r3 - E3


def residual_lagrangian_system(grid, lag, tend, physics=None, system=None, heat_L=None):
    """Linear left-hand sides minus remainders; equals ``(E1, E2, E3)``."""
    physics = physics or Physics()
    system = system or LinearSystem(grid, lag.eq, physics.mu, physics.mu_prime)
    r = system.lhs(lag.as_linear(), tend.as_linear())
    f = remainders(grid, lag, tend, physics, system, heat_L)
    return tuple(ri - fi for ri, fi in zip(r, f))


def remainder_norm(grid, f):
    """Combined L2 norm of ``(f1, f2, f3)``."""
    return float(np.sqrt(sum(grid.l2_norm(fi) ** 2 for fi in f)))


# -- literal term lists -----------------------------------------------------------


def _laplace_block(grid, f, Z):
    """The three literal sums for ``Delta_x f - Delta_y f``."""
    H = grid.hessian_h(f)
    zf = _zfield(Z, f)
    ZmI = zf - np.eye(2).reshape((2, 2) + (1,) * (zf.ndim - 2))
    grad = grid.grad_h(f)
    dZ = np.stack([np.stack([grid.grad_h(Z[k, j]) for j in range(2)]) for k in range(2)])  # dZ[k,j,l]
    if np.ndim(f) == 3:
        dZ = dZ[..., None]
    s1 = np.einsum("kl...,kj...,lj...->...", H, ZmI, zf)
    s2 = np.einsum("kl...,lk...->...", H, ZmI)
    s3 = np.einsum("lj...,k...,kjl...->...", zf, grad, dZ)
    return s1 + s2 + s3


def _mu_prime_block(grid, v, Z, i, literal):
    zf = Z[..., None]
    ZmI = zf - np.eye(2)[:, :, None, None, None]
    H = [grid.hessian_h(v[j]) for j in range(2)]  # H[j][k,l]
    J = grid.jacobian_h(v)  # J[j,k]
    dZ = np.stack([np.stack([grid.grad_h(Z[k, j]) for j in range(2)]) for k in range(2)])[..., None]
    s1 = sum(H[j][k, l] * ZmI[l, i] * zf[k, j] for j in range(2) for k in range(2) for l in range(2))
    if literal:
        s2 = sum(H[l][k, l] * ZmI[l, i] for k in range(2) for l in range(2))
    else:
        s2 = sum(H[j][k, i] * ZmI[k, j] for j in range(2) for k in range(2))
    s3 = sum(zf[l, i] * J[j, k] * dZ[k, j, l] for j in range(2) for k in range(2) for l in range(2))
    return s1 + s2 + s3


def termwise_remainders(grid, lag, tend, physics=None, literal=True):
    """Evaluate the literal remainder term lists, one labelled entry per term.

    ``literal=True`` transcribes the term lists literally. ``literal=False``
    substitutes the readings derived from the exact transformation for the
    terms that disagree; comparing the two localizes each discrepancy.
    Viscous heating is not part of the literal lists; with it active the
    corrected reading adds it as ``f3.heating``.
    """
    physics = physics or Physics()
    eq = lag.eq
    c = _common(grid, lag)
    Z, ZmI = c["Z"], c["ZmI"]
    Bs, dB, rL, rs, Ts, TL = c["Bs"], c["dB"], c["rL"], c["rs"], c["Ts"], c["TL"]
    v, rel, theta = c["v"], c["rel"], c["theta"]
    DB = c["DB"]
    scale = rs * Bs
    rho_bar = rL + rs
    rL2 = lag.rho_bar_L
    grad_rho = grid.grad_h(rL2)
    ZT = np.swapaxes(Z, 0, 1)
    grad_b = grid.jacobian_h(c["b"])
    div_v = grid.div_h(v)

    f1 = {}
    integral = g.vertical_mean(np.sum((DB(c["grad_theta"])) * v, axis=0) + dB * div_v)
    f1["f1.integral"] = -(integral if literal else rs * integral)
    f1["f1.rho-div-b"] = -rL2 * grid.div_h(c["b"])
    f1["f1.Z-correction"] = -(rL2 + rs) * double_dot(grad_b, c["ZT_minus_I"])

    J1 = _J1(grid, lag, tend.d_theta_L)
    J2_terms = (_J2_literal if literal else _J2_corrected)(grid, lag, tend.d_theta_L)
    J2 = sum(J2_terms.values())
    if literal:
        wnum = J1 + J2
    else:
        wnum = -g.cumulative_integral(wL_integrand(grid, lag, tend.d_theta_L))

    density_factor = rL * dB / scale + rL / rs + dB / Bs
    f2 = {}
    f2["f2.time"] = -density_factor * tend.d_v_L
    f2["f2.advection"] = -rho_bar * (Bs + dB) * np.stack(
        [directional(Z, rel, grid.grad_h(v[i])) for i in range(2)]
    ) / scale
    f2["f2.viscous.mu-block"] = physics.mu / scale * np.stack([_laplace_block(grid, v[i], Z) for i in range(2)])
    f2["f2.viscous.mu-prime-block"] = physics.mu_prime / scale * np.stack(
        [_mu_prime_block(grid, v, Z, i, literal) for i in range(2)]
    )
    zt_grad_rho = np.einsum("kj...,k...->j...", Z, grad_rho)[..., None]
    if literal:
        f2["f2.pressure.rho-gradient"] = -Ts * np.einsum("jk...,k...->j...", ZmI, grad_rho)[..., None] / rs
    else:
        f2["f2.pressure.rho-gradient"] = -Ts * (zt_grad_rho - grad_rho[..., None]) / rs
    f2["f2.pressure.rho-products"] = -(dB * TL / scale + dB * Ts / scale + TL / rs) * zt_grad_rho
    zt_gt = c["ZT_grad_theta"]
    gt = c["grad_theta"]
    if literal:
        f2["f2.pressure.DB-block"] = -DB(
            np.einsum("jk...,k...->j...", ZmI[..., None], gt)
            + rL * TL * zt_gt / scale
            + rL * Ts * zt_gt / scale
            + TL * zt_gt / Bs
        )
        f2["f2.pressure.theta-gradient"] = (
            -dB * gt
            - np.einsum("jk...,k...->j...", ZmI[..., None], gt)
            - rL * dB * zt_gt / scale
            - rL * zt_gt / rs
            - dB * zt_gt / Bs
        )
    else:
        ptheta = rho_bar * theta
        f2["f2.pressure.DB-block"] = -(ptheta * DB(zt_gt) - rs * Ts * thermo.DBhat_equilibrium(eq, gt)) / scale
        f2["f2.pressure.theta-gradient"] = -(zt_gt - gt) - (rL * dB / scale + rL / rs + dB / Bs) * zt_gt
    f2["f2.vertical-advection"] = -wnum * g.dz(v, neumann=True) / scale

    f3 = {}
    f3["f3.time"] = -density_factor * tend.d_theta_L
    f3["f3.advection"] = -rho_bar * (Bs + dB) * directional(Z, rel, gt) / scale
    f3["f3.conduction"] = _laplace_block(grid, TL, Z) / scale
    dzT = g.dz(TL, neumann=True)
    f3["f3.vertical-advection"] = -wnum * dzT / scale
    if literal:
        work = dzT * J1 + (dzT + Ts + 1.0) * J2 + Ts * g.dz(J2) + TL * g.dz(J1)
    else:
        # vertical derivatives come from the integrands, so the split is exact
        dz_total = -wL_integrand(grid, lag, tend.d_theta_L)
        dz_J1 = _dz_J1_exact(grid, lag, tend.d_theta_L)
        work = dzT * J1 + (dzT + 1.0) * J2 + Ts * (dz_total - dz_J1) + TL * dz_total
    f3["f3.pressure-work"] = -work / scale
    f3["f3.compression-Z"] = -Ts * double_dot(grid.jacobian_h(v), c["ZT_minus_I"][..., None])
    div_x_v = div_x(grid, v, Z)
    coeff = (
        rL * TL / rs
        + dB * rL * TL / scale
        + TL
        + (dB * Ts / rs if literal else dB * Ts / Bs)
        + dB * TL / Bs
        + dB * rL * Ts / scale
        + rL * Ts / rs
    )
    f3["f3.compression"] = -coeff * div_x_v
    if not literal and physics.viscous_heating != "none":
        f3["f3.heating"] = lagrangian_heating(grid, v, Z, physics) / scale
    return f1, f2, f3


def _dz_J1_exact(grid, lag, d_theta_L):
    """``d_z J1`` from its integrand (no finite difference)."""
    eq = lag.eq
    div = grid.div_h(lag.v_L)
    rs = eq.rho_bar_star
    return -rs * (thermo.DBhat_equilibrium(eq, d_theta_L) + eq.Bhat_star * div) + rs * eq.Bhat_star * g.vertical_mean(
        eq.Bhat_star * div
    )[..., None]


def audit(grid, lag, tend, physics=None, amplitude=None, grid_tol=None, warn=True):
    """Compare literal and derived term lists with the definitional remainders.

    Returns a JSON-ready dict: per-label norms of (literal - derived reading),
    and per-equation totals of the literal and the derived readings against
    the definitional values. The tolerance is
    ``10 * amplitude * ||f_def|| + grid_tol``; exceeding it with the literal
    reading issues :class:`TranscriptionAuditWarning`.
    """
    physics = physics or Physics()
    f_def = remainders(grid, lag, tend, physics)
    literal = termwise_remainders(grid, lag, tend, physics, literal=True)
    derived = termwise_remainders(grid, lag, tend, physics, literal=False)
    if amplitude is None:
        amplitude = max(
            float(np.max(np.abs(lag.rho_bar_L))), float(np.max(np.abs(lag.v_L))), float(np.max(np.abs(lag.theta_L)))
        )
    if grid_tol is None:
        grid_tol = 10.0 * amplitude / (grid.nz - 1) ** 2
    terms = {}
    totals = {}
    flagged = []
    for name, fd, pr, dr in zip(("f1", "f2", "f3"), f_def, literal, derived):
        labels = sorted(set(pr) | set(dr))
        for label in labels:
            a = pr.get(label, 0.0)
            b = dr.get(label, 0.0)
            terms[label] = grid.l2_norm(np.asarray(a) - np.asarray(b) + np.zeros_like(fd))
        tol = 10.0 * amplitude * grid.l2_norm(fd) + grid_tol
        p_err = grid.l2_norm(sum(pr.values()) - fd)
        d_err = grid.l2_norm(sum(dr.values()) - fd)
        totals[name] = {"definitional_norm": grid.l2_norm(fd), "literal_vs_definitional": p_err,
                        "derived_vs_definitional": d_err, "tolerance": tol}
        if p_err > tol:
            flagged.append(name)
    report = {"terms": terms, "totals": totals, "flagged": flagged, "amplitude": amplitude}
    if warn and flagged:
        worst = sorted(terms.items(), key=lambda kv: -kv[1])[:3]
        warnings.warn(
            f"literal remainder terms disagree with the definitional path in {flagged}; largest: {worst}",
            TranscriptionAuditWarning,
            stacklevel=2,
        )
    return report


def audit_json(report):
    return json.dumps(report, indent=2, sort_keys=True)


def nonlocal_time_identity(eq, h):
    """Both sides of the identity behind the operator ``L``; returns ``(lhs, rhs)``.

    ``lhs = -rho* (T* DBhat*[h] + int_0^z DBhat*[h])`` and
    ``rhs = rho* (Bhat* h - c int_0^1 h)`` with
    ``c = exp(-1/T*) / (T*^2 (1 - exp(-1/T*))^2)``.
    """
    ts = eq.theta_star
    d = thermo.DBhat_equilibrium(eq, h)
    lhs = -eq.rho_bar_star * (ts * d + g.cumulative_integral(d))
    c = np.exp(-1.0 / ts) / (ts * ts * np.expm1(-1.0 / ts) ** 2)
    rhs = eq.rho_bar_star * (eq.Bhat_star * h - c * g.vertical_mean(h)[..., None])
    return lhs, rhs
