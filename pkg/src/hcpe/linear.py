"""Linearization about the constant equilibrium and its discrete operators.

Unknowns are ``(xi, V, T)``: a 2D density perturbation, a horizontal velocity
and a temperature perturbation. The evolution is written as
``d_t u + A u = g`` with the temperature row already multiplied by
``Linv = (Id + P) / 2``, where ``P f = beta(z) int_0^1 f`` and
``L = 2 Id - P``.

The nonlocal operators use ``eq.beta_h`` (``beta`` rescaled to unit trapezoid
integral) so that ``P`` is a projection to rounding error on the discrete grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from . import grid as g
from . import thermo
from .errors import DegeneracyError


# -- vertical building blocks ------------------------------------------------


def apply_P(f, eq):
    return eq.beta_h * g.vertical_mean(f)[..., None]


def apply_L(f, eq):
    return 2.0 * f - apply_P(f, eq)


def apply_L_inverse(f, eq):
    return 0.5 * (f + apply_P(f, eq))


def L_inverse_matrix(eq, normalized=True):
    """Dense ``nz x nz`` matrix of ``Linv`` acting on one column.

    With ``normalized=False`` the closed-form ``beta`` is used instead of the
    quadrature-normalized one, so the spectrum is exact only as ``nz`` grows.
    """
    beta = eq.beta_h if normalized else eq.beta
    return 0.5 * (np.eye(eq.nz) + np.outer(beta, g.trapezoid_weights(eq.nz)))


def apply_Iz(V, eq):
    """``int_0^z Bhat* V`` (works for scalars and leading component axes)."""
    return g.cumulative_integral(eq.Bhat_star * V)


def apply_I1(V, eq):
    return g.vertical_mean(eq.Bhat_star * V)


def apply_Acal(T, eq, grid):
    """``(T* DBhat*/Bhat* + I) grad_H T``, a horizontal vector field."""
    grad = grid.grad_h(T)
    return eq.theta_star * thermo.DBhat_equilibrium(eq, grad) / eq.Bhat_star + grad


def lid_coefficient(eq):
    """``T* exp(z / T*)``, the weight of ``I1(div V)`` in the temperature row."""
    return eq.theta_star * np.exp(eq.z / eq.theta_star)


# -- state container ----------------------------------------------------------


@dataclass
class LinearState:
    xi: np.ndarray
    V: np.ndarray
    T: np.ndarray

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.shape2), np.zeros((2,) + grid.shape3), np.zeros(grid.shape3))

    def __add__(self, other):
        return LinearState(self.xi + other.xi, self.V + other.V, self.T + other.T)

    def __sub__(self, other):
        return LinearState(self.xi - other.xi, self.V - other.V, self.T - other.T)

    def __mul__(self, s):
        return LinearState(self.xi * s, self.V * s, self.T * s)

    __rmul__ = __mul__

    def flatten(self):
        return np.concatenate([self.xi.ravel(), self.V.ravel(), self.T.ravel()])

    @classmethod
    def unflatten(cls, vec, grid):
        n2 = grid.nx * grid.ny
        n3 = n2 * grid.nz
        return cls(
            vec[:n2].reshape(grid.shape2),
            vec[n2 : n2 + 2 * n3].reshape((2,) + grid.shape3),
            vec[n2 + 2 * n3 :].reshape(grid.shape3),
        )


def state_norm(u, grid, orders=(3, 2, 2)):
    """Ground-space proxy: ``H^3`` for ``xi`` and ``H^2`` for ``V`` and ``T``.

    The blocks are combined with unit weights; see the notes on norm weighting.
    """
    parts = (
        grid.sobolev_norm(u.xi, orders[0]),
        grid.sobolev_norm(u.V, orders[1]),
        grid.sobolev_norm(u.T, orders[2]),
    )
    return float(np.sqrt(sum(p * p for p in parts)))


# -- per-mode implicit diffusion ----------------------------------------------


class ImplicitDiffusion:
    """Cached solves of ``(I - dt K) x = r`` for the frozen diffusion ``K``.

    ``K`` acts on velocity as ``alpha (mu Delta + mu' grad div)`` and on
    temperature as ``Linv alpha Delta``. Both are diagonal in the horizontal
    wavenumber; each mode needs one dense ``nz x nz`` inverse, shared by all
    modes with the same ``|k|^2``. Velocity modes are split into components
    along and across ``k``.
    """

    def __init__(self, grid, eq, mu, mu_prime, dt):
        self.grid = grid
        kx, ky = grid._wavenumbers
        k2 = kx[:, None] ** 2 + ky[None, :] ** 2
        uniq, self._index = np.unique(np.round(k2, 9), return_inverse=True)
        self._index = self._index.reshape(k2.shape)
        kmag = np.sqrt(k2)
        safe = np.where(kmag > 0, kmag, 1.0)
        self._khat = np.stack([np.where(kmag > 0, kx[:, None] / safe, 1.0), np.where(kmag > 0, ky[None, :] / safe, 0.0)])
        nz = grid.nz
        eye = np.eye(nz)
        dzz = g.dzz_matrix(nz)
        alpha = eq.alpha[:, None]
        linv = L_inverse_matrix(eq)
        par, perp, temp = [], [], []
        for q in uniq:
            lap = dzz - q * eye
            perp.append(np.linalg.inv(eye - dt * alpha * (mu * lap)))
            par.append(np.linalg.inv(eye - dt * alpha * (mu * lap - mu_prime * q * eye)))
            temp.append(np.linalg.inv(eye - dt * linv @ (alpha * lap)))
        self._par = np.array(par)
        self._perp = np.array(perp)
        self._temp = np.array(temp)

    def _apply(self, mats, F):
        return np.einsum("abij,abj->abi", mats[self._index], F)

    def solve_scalar(self, r):
        F = sfft.rfftn(r, axes=(0, 1))
        return sfft.irfftn(self._apply(self._temp, F), s=self.grid.shape2, axes=(0, 1))

    def solve_vector(self, r):
        F = sfft.rfftn(r, axes=(1, 2))
        kh = self._khat[..., None]
        along = kh[0] * F[0] + kh[1] * F[1]
        across = -kh[1] * F[0] + kh[0] * F[1]
        along = self._apply(self._par, along)
        across = self._apply(self._perp, across)
        out = np.stack([kh[0] * along - kh[1] * across, kh[1] * along + kh[0] * across])
        return sfft.irfftn(out, s=self.grid.shape2, axes=(1, 2))


# -- the operator matrix --------------------------------------------------------


class LinearSystem:
    """Matrix-free action of ``A = A0 + B`` and an IMEX stepper.

    ``A0`` holds the transport of ``xi`` by ``div V`` and the two diffusion
    blocks; ``B`` holds the pressure-gradient coupling ``T* grad xi / rho*``,
    the operator ``Acal`` and the compression block ``Ccal``.
    """

    def __init__(self, grid, eq, mu=0.1, mu_prime=0.1):
        if not (mu > 0 and mu + mu_prime > 0):
            raise ValueError("viscosities must satisfy mu > 0 and mu + mu_prime > 0")
        self.grid, self.eq, self.mu, self.mu_prime = grid, eq, mu, mu_prime
        self._solvers = {}

    # blocks

    def xi_transport(self, V):
        return self.eq.rho_bar_star * apply_I1(self.grid.div_h(V), self.eq)

    def velocity_diffusion(self, V):
        grid, eq = self.grid, self.eq
        lap = np.stack([grid.laplacian3(V[0]), grid.laplacian3(V[1])])
        return -eq.alpha * (self.mu * lap + self.mu_prime * grid.grad_h_div_h(V))

    def temperature_diffusion(self, T):
        return -apply_L_inverse(self.eq.alpha * self.grid.laplacian3(T), self.eq)

    def pressure_coupling(self, xi):
        return self.eq.theta_star / self.eq.rho_bar_star * self.grid.grad_h(xi)[..., None] * np.ones(self.eq.nz)

    def compression(self, V):
        """``Ccal V = -Linv(rho* alpha Iz(div V) - T* e^{z/T*} I1(div V))``."""
        eq = self.eq
        div = self.grid.div_h(V)
        inner = eq.rho_bar_star * eq.alpha * apply_Iz(div, eq) - lid_coefficient(eq) * apply_I1(div, eq)[..., None]
        return -apply_L_inverse(inner, eq)

    def apply_A0(self, u):
        return LinearState(self.xi_transport(u.V), self.velocity_diffusion(u.V), self.temperature_diffusion(u.T))

    def apply_B(self, u):
        return LinearState(
            np.zeros_like(u.xi),
            self.pressure_coupling(u.xi) + apply_Acal(u.T, self.eq, self.grid),
            self.compression(u.V),
        )

    def apply_A(self, u):
        return self.apply_A0(u) + self.apply_B(u)

    def explicit_part(self, u):
        """Everything in ``A`` except the two diffusion blocks."""
        return LinearState(
            self.xi_transport(u.V),
            self.pressure_coupling(u.xi) + apply_Acal(u.T, self.eq, self.grid),
            self.compression(u.V),
        )

    def forcing(self, g1, g2, g3):
        """Abstract-form forcing: the temperature component gets ``Linv``."""
        return LinearState(g1, g2, apply_L_inverse(g3, self.eq))

    def lhs(self, u, du):
        """Left-hand sides of the linear system before ``Linv`` is applied.

        Returns ``(r1, r2, r3)`` with ``r3 = L[dT] - alpha Delta T - ...``.
        """
        eq, grid = self.eq, self.grid
        div = grid.div_h(u.V)
        r1 = du.xi + self.xi_transport(u.V)
        r2 = du.V + self.velocity_diffusion(u.V) + self.pressure_coupling(u.xi) + apply_Acal(u.T, eq, grid)
        r3 = (
            apply_L(du.T, eq)
            - eq.alpha * grid.laplacian3(u.T)
            - eq.rho_bar_star * eq.alpha * apply_Iz(div, eq)
            + lid_coefficient(eq) * apply_I1(div, eq)[..., None]
        )
        return r1, r2, r3

    def solver(self, dt):
        key = float(dt)
        if key not in self._solvers:
            self._solvers[key] = ImplicitDiffusion(self.grid, self.eq, self.mu, self.mu_prime, dt)
        return self._solvers[key]

    def step(self, u, g, dt):
        """One IMEX step: diffusion backward Euler, coupling forward Euler.

        ``g`` is a :class:`LinearState` in abstract form (see :meth:`forcing`)
        or ``None`` for zero forcing.
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        rhs = u - dt * self.explicit_part(u)
        if g is not None:
            rhs = rhs + dt * g
        solve = self.solver(dt)
        out = LinearState(rhs.xi, solve.solve_vector(rhs.V), solve.solve_scalar(rhs.T))
        if not (np.all(np.isfinite(out.V)) and np.all(np.isfinite(out.T))):
            raise DegeneracyError("implicit diffusion solve produced non-finite values")
        return out

    def dense(self, shift=0.0):
        """Dense matrix of ``A + shift`` assembled column by column (small grids only)."""
        n = LinearState.zeros(self.grid).flatten().size
        mat = np.empty((n, n))
        unit = np.zeros(n)
        for j in range(n):
            unit[j] = 1.0
            mat[:, j] = self.apply_A(LinearState.unflatten(unit, self.grid)).flatten()
            unit[j] = 0.0
        return mat + shift * np.eye(n)


def step_linear(system, u, g, dt):
    """Module-level alias of :meth:`LinearSystem.step`."""
    return system.step(u, g, dt)


# -- probes ---------------------------------------------------------------------


def spectrum_probe(eq, normalized=True):
    """Eigenvalues of the column operator ``Linv`` and their distance to ``{1/2, 1}``."""
    mat = L_inverse_matrix(eq, normalized=normalized)
    eig = np.sort(np.linalg.eigvals(mat).real)
    deviation = np.minimum(np.abs(eig - 0.5), np.abs(eig - 1.0))
    return {
        "eigenvalues": eig.tolist(),
        "max_deviation": float(deviation.max()),
        "count_one": int(np.sum(np.abs(eig - 1.0) < 1e-6)),
        "normalized": normalized,
    }


def _norm_weights(grid):
    w2 = np.full(grid.shape2, 1.0 / (grid.nx * grid.ny))
    w3 = w2[..., None] * grid.weights
    return np.concatenate([w2.ravel(), np.tile(w3.ravel(), 2), w3.ravel()])


def resolvent_probe(system, lambdas, omega=0.0):
    """Sample ``||lambda (lambda + A + omega)^{-1}||`` in the weighted L2 norm.

    Uses the dense matrix, so keep the grid tiny. Rows of the report are
    ``{lambda_re, lambda_im, norm}``; ``sup`` is their maximum.
    """
    a = system.dense(shift=omega)
    sw = np.sqrt(_norm_weights(system.grid))
    a_w = sw[:, None] * a / sw[None, :]
    eye = np.eye(a.shape[0])
    rows = []
    for lam in lambdas:
        lam = complex(lam)
        m = lam * eye + a_w
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > 1e14:
            raise DegeneracyError(f"lambda + A + omega is singular at lambda={lam}")
        res = np.linalg.solve(m, eye)
        rows.append({"lambda_re": lam.real, "lambda_im": lam.imag, "norm": float(abs(lam) * np.linalg.norm(res, 2))})
    return {"omega": omega, "rows": rows, "sup": max(r["norm"] for r in rows)}


def sector_rays(angles, radii):
    """Points ``r e^{i phi}`` for all combinations of the given angles and radii."""
    return [r * np.exp(1j * a) for a in angles for r in radii]
