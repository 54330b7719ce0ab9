"""Closed-form initial conditions and a manufactured solution.

Every vertical structure is a cosine series in ``pi z`` so that the Neumann
conditions hold exactly. The random seed only picks horizontal phases.
"""

from __future__ import annotations

import numpy as np

from . import grid as g
from . import thermo
from .diagnostics import Physics, State, Tendencies, residual_full_system
from .lagrange import Frame, compose, integrate_flow
from .lagrangian_system import LagrangianState, LagrangianTendencies, transform_state, transformed_lhs
from .solver import tendencies_eulerian


def _phase(rng):
    return 2.0 * np.pi * rng.random() if rng is not None else 0.0


def equilibrium(grid, eq, eps=0.0, rng=None):
    return State(
        np.full(grid.shape2, eq.rho_bar_star),
        np.zeros((2,) + grid.shape3),
        np.full(grid.shape3, eq.theta_star),
    )


def theta_bump(grid, eq, eps, rng=None):
    """One vertical cosine mode times one horizontal cosine in the temperature."""
    x, _, z = grid.mesh
    s = equilibrium(grid, eq)
    s.theta = s.theta + eps * eq.theta_star * np.cos(np.pi * z) * np.cos(2 * np.pi * x + _phase(rng))
    return s


def shear_v(grid, eq, eps, rng=None):
    """Vertically uniform horizontal shear ``v = (eps sin(2 pi y), 0)``."""
    _, y, _ = grid.mesh
    s = equilibrium(grid, eq)
    s.v[0] = eps * np.sin(2 * np.pi * y + _phase(rng))
    return s


class ManufacturedSolution:
    """Smooth time-periodic fields around the equilibrium.

    ``rho_bar = rho* + eps r(x, y) cos t``,
    ``v = eps (U(x, y) + W(x, y) cos(pi z)) cos t`` and
    ``theta = T* + eps T* S(x, y) cos(pi z) cos t``.
    :meth:`rate` is the exact time derivative.
    """

    def __init__(self, eq, eps, phase=0.0):
        self.eq, self.eps, self.phase = eq, eps, phase

    def _shapes(self, grid):
        x, y, z = grid.mesh
        x2, y2 = grid.mesh2
        a = self.phase
        r = np.cos(2 * np.pi * x2 + a) * np.sin(2 * np.pi * y2)
        c = np.cos(np.pi * z)
        v = np.stack(
            [
                np.sin(2 * np.pi * y + a) + 0.5 * np.cos(2 * np.pi * x) * c,
                np.cos(2 * np.pi * x) + 0.5 * np.sin(2 * np.pi * (x + y)) * c,
            ]
        )
        theta = np.sin(2 * np.pi * (x - y) + a) * c
        return r, v, theta

    def state(self, grid, t):
        r, v, th = self._shapes(grid)
        e = self.eps * np.cos(t)
        eq = self.eq
        return State(eq.rho_bar_star + e * r, e * v, eq.theta_star * (1.0 + e * th), t)

    def rate(self, grid, t):
        r, v, th = self._shapes(grid)
        e = -self.eps * np.sin(t)
        return Tendencies(e * r, e * v, self.eq.theta_star * e * th)

    def residual_source(self, grid, t, physics, form="averaged"):
        """Left-hand sides of the recast system at the exact solution.

        The default ``form`` builds ``w`` from the averaged continuity
        equation, the same substitution the transformed system makes; the
        flux form differs by ``Bhat`` times the continuity source.
        """
        return residual_full_system(grid, self.state(grid, t), self.rate(grid, t), physics, form=form)


    def discrete_source(self, grid, physics):
        """``source(t)`` making the exact solution solve the semi-discrete system."""
        def source(t):
            rate = self.rate(grid, t)
            tend = tendencies_eulerian(grid, self.state(grid, t), physics)
            return Tendencies(rate.d_rho_bar - tend.d_rho_bar, rate.d_v - tend.d_v, rate.d_theta - tend.d_theta)

        return source

    def flux(self, grid, t):
        """Column-averaged horizontal flux ``b`` of the exact solution."""
        s = self.state(grid, t)
        return g.vertical_mean(thermo.Bhat(s.theta) * s.v)


def lagrangian_consistency(grid, eq, solution, t, dt, physics=None, reference_nz=129, substeps=2):
    """Mismatch between the transformed left-hand sides and the composed Eulerian residual.

    The flow of ``b`` is integrated from 0 to ``t + dt`` on steps of ``dt``.
    Lagrangian time derivatives are central differences of the composed
    fields, so the mismatch is ``O(nz^-2 + dt^2)`` plus interpolation error.
    The Eulerian residual is evaluated on a finer nested vertical grid with
    exact time derivatives and restricted to ``grid``. Returns the three
    component mismatches in the quadrature ``L2`` norm.
    """
    physics = physics or Physics()
    if (reference_nz - 1) % (grid.nz - 1):
        raise g.GridMismatchError("reference_nz - 1 must be a multiple of nz - 1")
    n = int(round(t / dt))
    if n < 1 or not np.isclose(n * dt, t):
        raise ValueError("t must be a positive multiple of dt")
    times = np.arange(n + 2) * dt
    flow = integrate_flow(grid, np.array([solution.flux(grid, s) for s in times]), times, substeps)
    lag = [transform_state(grid, solution.state(grid, times[k]), flow.frame(k), eq) for k in (n - 1, n, n + 1)]
    tend = LagrangianTendencies(
        (lag[2].rho_bar_L - lag[0].rho_bar_L) / (2 * dt),
        (lag[2].v_L - lag[0].v_L) / (2 * dt),
        (lag[2].theta_L - lag[0].theta_L) / (2 * dt),
    )
    E = transformed_lhs(grid, lag[1], tend, physics)

    fine = g.Grid(grid.nx, grid.ny, reference_nz, grid.dealias, grid.vertical_scheme)
    stride = (reference_nz - 1) // (grid.nz - 1)
    ref = solution.residual_source(fine, t, physics)
    disp = flow.displacement[n]
    scale = eq.rho_bar_star * eq.Bhat_star
    targets = (
        compose(grid, ref["continuity"], disp),
        compose(grid, ref["momentum"][..., ::stride], disp) / scale,
        compose(grid, ref["temperature"][..., ::stride], disp) / scale,
    )
    return tuple(grid.l2_norm(e - s) for e, s in zip(E, targets))


def manufactured(grid, eq, eps, rng=None):
    return ManufacturedSolution(eq, eps, _phase(rng)).state(grid, 0.0)


def manufactured_solution(eq, eps, seed=0):
    """The solution whose initial state ``build("manufactured-1", ..., seed)`` returns."""
    return ManufacturedSolution(eq, eps, _phase(np.random.default_rng(seed)))


SCENARIOS = {
    "equilibrium": equilibrium,
    "theta-bump": theta_bump,
    "shear-v": shear_v,
    "manufactured-1": manufactured,
}


def build(name, grid, eq, eps, seed=0):
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[name](grid, eq, eps, np.random.default_rng(seed))


# -- Lagrangian perturbation family -------------------------------------------------

SHAPES = ("mixed", "density", "velocity", "temperature", "flow")


def perturbation(grid, eq, eps, shape="mixed"):
    """A Lagrangian state, its tendencies and a flow frame, all of size ``eps``.

    The five shapes weight density, velocity, temperature and displacement
    differently; each keeps every ingredient nonzero so the remainders see
    all couplings.
    """
    if shape not in SHAPES:
        raise KeyError(f"unknown shape {shape!r}")
    w = {
        "mixed": (1.0, 1.0, 1.0, 1.0),
        "density": (3.0, 0.5, 0.5, 0.5),
        "velocity": (0.5, 3.0, 0.5, 0.5),
        "temperature": (0.5, 0.5, 3.0, 0.5),
        "flow": (0.5, 0.5, 0.5, 3.0),
    }[shape]
    x, y, z = grid.mesh
    x2, y2 = grid.mesh2
    c = np.cos(np.pi * z)
    c2 = np.cos(2 * np.pi * z)
    rL = eps * w[0] * np.cos(2 * np.pi * x2) * np.sin(2 * np.pi * y2)
    v = eps * w[1] * np.stack([np.sin(2 * np.pi * y) * (1 + c), np.cos(2 * np.pi * (x + y)) * c + 0.3 * c2])
    T = eps * w[2] * eq.theta_star * (np.cos(2 * np.pi * x) * c + 0.5 * np.sin(2 * np.pi * y) * c2)
    disp = eps * w[3] * np.stack([np.sin(2 * np.pi * (x2 + y2)), 0.5 * np.cos(2 * np.pi * x2)])
    frame = Frame.from_displacement(grid, disp)
    tend = LagrangianTendencies(
        eps * w[0] * np.sin(2 * np.pi * x2),
        eps * w[1] * np.stack([c * np.cos(2 * np.pi * x), np.sin(2 * np.pi * y) + 0.2 * c2]),
        eps * w[2] * np.sin(2 * np.pi * y) * c,
    )
    return LagrangianState(rL, v, T, frame, eq), tend


def scaled_copy(grid, lag, tend, factor):
    """Same shape with the state, flow displacement and tendencies scaled together."""
    frame = Frame.from_displacement(grid, lag.frame.displacement * factor)
    return (
        LagrangianState(lag.rho_bar_L * factor, lag.v_L * factor, lag.theta_L * factor, frame, lag.eq),
        LagrangianTendencies(tend.d_rho_bar_L * factor, tend.d_v_L * factor, tend.d_theta_L * factor),
    )
