"""Time integration of the averaged-density system.

Two schemes share one set of diagnostics:

* ``eulerian-imex``: method of lines in Eulerian variables. Each step is
  ``u + dt (I - dt K)^{-1} F(u)`` where ``F`` is the full tendency and ``K`` the
  diffusion frozen at the equilibrium, solved per horizontal Fourier mode.
* ``picard-lagrangian``: fixed-point iteration in Lagrangian variables. Each
  sweep solves the linear system with the remainders of the previous sweep
  as forcing, then the result is pulled back to Eulerian coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import grid as g
from . import thermo
from .diagnostics import (
    Physics,
    State,
    Tendencies,
    diagnostics_row,
    heat_source,
    viscous_force,
    viscous_heating,
)
from .errors import NonContractionError, RegimeError
from .lagrange import compose, flow_from_lagrangian_flux, inverse_map, flow_regime_report
from .lagrangian_system import LagrangianState, LagrangianTendencies, b_L, remainders
from .linear import ImplicitDiffusion, LinearState, LinearSystem, state_norm

log = logging.getLogger(__name__)

SCHEMES = ("eulerian-imex", "picard-lagrangian")
PICARD_FLOWS = ("refreeze", "frozen")


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    t_end: float = 0.1
    scheme: str = "eulerian-imex"
    picard_tol: float = 1e-8
    picard_max_iters: int = 10
    physics: Physics = field(default_factory=Physics)
    output_every: int = 10
    picard_flow: str = "refreeze"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.picard_flow not in PICARD_FLOWS:
            raise ValueError(f"picard_flow must be one of {PICARD_FLOWS}")
        if self.picard_max_iters < 1 or self.output_every < 1:
            raise ValueError("picard_max_iters and output_every must be positive")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    picard: dict | None = None
    violation: dict | None = None

    def append(self, state):
        if self.times and state.time <= self.times[-1]:
            raise ValueError("trajectory times must increase")
        self.times.append(state.time)
        self.states.append(state)

    @property
    def final(self):
        return self.states[-1]


# -- Eulerian tendencies ----------------------------------------------------------


def tendencies_eulerian(grid, state, physics):
    """Time derivatives of ``(rho_bar, v, theta)`` for the recast system.

    ``d_t theta`` enters the vertical mass flux through ``d_t Bhat``, and the
    flux enters the temperature equation through the pressure work, so the
    temperature tendency ``h`` solves a linear system per column:

        M h = rhs,
        M = diag(rho) + diag(2 d_z theta + 1) K - diag(theta) rho_bar DBhat,

    where ``K h`` is the part of ``rho w`` produced by ``h``.
    """
    state.check(grid)
    theta, v, rb = state.theta, state.v, state.rho_bar
    bhat = thermo.Bhat(theta)
    rb3 = rb[..., None]
    rho = rb3 * bhat
    p = rho * theta
    b = g.vertical_mean(bhat * v)
    d_rb = -grid.div_h(rb * b)

    q0 = bhat * d_rb[..., None] + grid.div_h(rb3 * bhat * v)
    rho_w0 = -g.cumulative_integral(q0)
    dmat = thermo.frechet_matrix(theta)
    cmat = g.cumulative_matrix(grid.nz)
    K = -rb3[..., None] * (cmat @ dmat)
    dz_theta = g.dz(theta, neumann=True)
    lift = 2.0 * dz_theta + 1.0
    M = lift[..., :, None] * K - theta[..., :, None] * rb3[..., None] * dmat
    idx = np.arange(grid.nz)
    M[..., idx, idx] += rho

    grad_theta = grid.grad_h(theta)
    div_v = grid.div_h(v)
    forcing = heat_source(physics, state.time, theta.shape) + viscous_heating(grid, v, physics)
    rhs = (
        forcing
        + grid.laplacian3(theta)
        - rho * np.sum(v * grad_theta, axis=0)
        - p * div_v
        - lift * rho_w0
        + theta * q0
    )
    try:
        d_theta = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise g.DegeneracyError("per-column temperature tendency system is singular") from exc

    rho_w = rho_w0 + np.einsum("...ij,...j->...i", K, d_theta)
    w = g.divide(rho_w, rho, "rho")
    adv = np.stack(
        [np.sum(v * grid.grad_h(v[i]), axis=0) + w * g.dz(v[i], neumann=True) for i in range(2)]
    )
    d_v = -adv + (viscous_force(grid, v, physics) - grid.grad_h(p)) / rho
    return Tendencies(d_rb, d_v, d_theta, {"w": w, "rho_w": rho_w})


def check_brackets(eq, state):
    """Raise :class:`RegimeError` if temperature or density leave the brackets."""
    eq.check_regime(state.theta)
    rho = thermo.density(state.rho_bar, state.theta)
    ref = eq.density_profile()
    bad = (rho < 0.5 * ref) | (rho > 1.5 * ref)
    if np.any(bad):
        loc = tuple(int(i) for i in np.unravel_index(np.argmax(bad), rho.shape))
        raise RegimeError(f"density left its bracket at index {loc}", field="rho", location=loc)


class EulerianIntegrator:
    """Linearly implicit Euler with the diffusion frozen at the equilibrium.

    ``source(t)``, if given, returns a :class:`Tendencies` added to the
    computed tendencies (used for manufactured solutions).
    """

    def __init__(self, grid, eq, physics, dt, source=None):
        self.grid, self.eq, self.physics, self.dt = grid, eq, physics, dt
        self.source = source
        self._solve = ImplicitDiffusion(grid, eq, physics.mu, physics.mu_prime, dt)

    def step(self, state):
        tend = tendencies_eulerian(self.grid, state, self.physics)
        if self.source is not None:
            extra = self.source(state.time)
            tend = Tendencies(
                tend.d_rho_bar + extra.d_rho_bar, tend.d_v + extra.d_v, tend.d_theta + extra.d_theta, tend.extras
            )
        dt = self.dt
        new = State(
            state.rho_bar + dt * tend.d_rho_bar,
            state.v + dt * self._solve.solve_vector(tend.d_v),
            state.theta + dt * self._solve.solve_scalar(tend.d_theta),
            state.time + dt,
        )
        try:
            check_brackets(self.eq, new)
        except RegimeError as exc:
            exc.time = new.time
            raise
        return new, tend


def step(grid, eq, state, config):
    """One Eulerian IMEX step (convenience wrapper; builds the solver each call)."""
    return EulerianIntegrator(grid, eq, config.physics, config.dt).step(state)[0]


def run_eulerian(grid, eq, initial, config, on_output=None, source=None):
    """Integrate to ``config.t_end``; records states and diagnostics every ``output_every`` steps.

    ``on_output(state, row)`` is called at each output. On a regime violation
    the exception carries the partial trajectory as ``exc.trajectory``.
    """
    integ = EulerianIntegrator(grid, eq, config.physics, config.dt, source)
    traj = Trajectory()
    state = initial.copy()
    try:
        check_brackets(eq, state)
    except RegimeError as exc:
        exc.time = state.time
        exc.trajectory = traj
        raise
    n = config.n_steps
    for k in range(n + 1):
        last = k == n
        try:
            if k % config.output_every == 0 or last:
                tend = tendencies_eulerian(grid, state, config.physics)
                row = diagnostics_row(grid, state, tend, config.physics)
                traj.append(state)
                traj.diagnostics.append(row)
                if on_output:
                    on_output(state, row)
            if not last:
                state, _ = integ.step(state)
        except RegimeError as exc:
            traj.violation = {"time": exc.time, "field": exc.field, "location": exc.location, "message": str(exc)}
            exc.trajectory = traj
            raise
    return traj


# -- Picard iteration in Lagrangian variables ----------------------------------------


def _trajectory_norm(grid, traj, dt):
    return float(np.sqrt(dt * sum(state_norm(u, grid) ** 2 for u in traj)))


def _difference(grid, a, b, dt):
    return _trajectory_norm(grid, [x - y for x, y in zip(a, b)], dt)


def _flow_of(grid, eq, traj, times):
    bL = np.array([b_L(grid, LagrangianState(u.xi, u.V, u.T, None, eq)) for u in traj])
    return flow_from_lagrangian_flux(grid, times, bL)


def _forcing_series(grid, eq, system, physics, traj, times, flow=None):
    """Remainder forcing of a trajectory, along with the flow map used.

    The flow is generated by ``traj`` itself unless one is passed in.
    """
    if flow is None:
        flow = _flow_of(grid, eq, traj, times)
    report = flow_regime_report(flow)
    if not report["regime_ok"]:
        raise RegimeError(
            f"flow map left the invertible regime (|grad X - I| = {report['sup_gradX_minus_I']:.3g})",
            field="gradX",
        )
    stack = {k: np.array([getattr(u, k) for u in traj]) for k in ("xi", "V", "T")}
    rates = {k: np.gradient(s, times, axis=0) for k, s in stack.items()}
    out = []
    for n, u in enumerate(traj[:-1]):
        frame = flow.frame(n)
        eq.check_regime(u.T + eq.theta_star, "theta")
        lag = LagrangianState(u.xi, u.V, u.T, frame, eq)
        tend = LagrangianTendencies(rates["xi"][n], rates["V"][n], rates["T"][n])
        heat_L = None
        if physics.heat_source is not None:
            heat_L = compose(grid, heat_source(physics, times[n], grid.shape3), frame.displacement)
        f1, f2, f3 = remainders(grid, lag, tend, physics, system, heat_L)
        out.append(system.forcing(f1, f2, f3))
    return out, flow


def _linear_solve(system, u0, forcing, dt, n_steps):
    traj = [u0]
    for n in range(n_steps):
        traj.append(system.step(traj[-1], forcing[n] if forcing is not None else None, dt))
    return traj


def picard_solve(grid, eq, initial, config):
    """Fixed-point iteration of the linear solve with frozen remainders.

    Convergence is declared when the difference of successive iterates, in
    the ``L2``-in-time ground-space proxy, drops below
    ``picard_tol * max(1, norm)``. Three consecutive ratios ``>= 1`` raise
    :class:`NonContractionError`. Each sweep regenerates the flow from the
    previous iterate; ``picard_flow="frozen"`` keeps the flow of the first
    (linear) iterate instead. Returns the Eulerian :class:`Trajectory`
    pulled back at output times; ``traj.picard`` records the iteration.
    """
    physics = config.physics
    system = LinearSystem(grid, eq, physics.mu, physics.mu_prime)
    dt, n = config.dt, config.n_steps
    times = np.arange(n + 1) * dt
    u0 = LinearState(initial.rho_bar - eq.rho_bar_star, initial.v.copy(), initial.theta - eq.theta_star)
    current = _linear_solve(system, u0, None, dt, n)
    diffs, ratios = [], []
    converged = False
    flow = None
    for it in range(config.picard_max_iters):
        keep = flow if config.picard_flow == "frozen" else None
        forcing, flow = _forcing_series(grid, eq, system, physics, current, times, keep)
        nxt = _linear_solve(system, u0, forcing, dt, n)
        diff = _difference(grid, nxt, current, dt)
        size = _trajectory_norm(grid, nxt, dt)
        diffs.append(diff)
        if len(diffs) > 1:
            ratios.append(diff / diffs[-2] if diffs[-2] > 0 else 0.0)
            log.info("picard iteration %d: difference %.3e ratio %.3f", it + 1, diff, ratios[-1])
        current = nxt
        if diff <= config.picard_tol * max(1.0, size):
            converged = True
            break
        if len(ratios) >= 3 and all(r >= 1.0 for r in ratios[-3:]):
            raise NonContractionError(f"Picard iteration is not contracting (ratios {ratios[-3:]})", ratios)
    if config.picard_flow == "refreeze":
        flow = _flow_of(grid, eq, current, times)
    traj = Trajectory()
    traj.picard = {"iterations": len(diffs), "differences": diffs, "ratios": ratios, "converged": converged}
    for k in range(n + 1):
        if k % config.output_every and k != n:
            continue
        u = current[k]
        ydisp = inverse_map(grid, flow.displacement[k])
        state = State(
            compose(grid, u.xi, ydisp) + eq.rho_bar_star,
            compose(grid, u.V, ydisp),
            compose(grid, u.T, ydisp) + eq.theta_star,
            float(times[k]),
        )
        traj.append(state)
        tend = tendencies_eulerian(grid, state, physics)
        traj.diagnostics.append(diagnostics_row(grid, state, tend, physics))
    traj.lagrangian = current
    traj.flow = flow
    return traj


def solve(grid, eq, initial, config, on_output=None, source=None):
    if config.scheme == "eulerian-imex":
        return run_eulerian(grid, eq, initial, config, on_output, source)
    if source is not None:
        raise ValueError("sources are only supported by the eulerian-imex scheme")
    traj = picard_solve(grid, eq, initial, config)
    if on_output:
        for s, row in zip(traj.states, traj.diagnostics):
            on_output(s, row)
    return traj


# -- solution class report ---------------------------------------------------------


def check_solution_class(grid, eq, traj):
    """Discrete proxies of the solution-class norms and the pointwise brackets."""
    times = np.asarray(traj.times)
    dts = np.diff(times) if times.size > 1 else np.array([1.0])
    ref_rho = eq.density_profile()
    sup_rho = 0.0
    l2_v = l2_theta = 0.0
    h1_rho = h1_v = h1_theta = 0.0
    theta_lo, theta_hi = np.inf, -np.inf
    rho_lo, rho_hi = np.inf, -np.inf
    first_violation = None
    margin = np.inf
    for k, s in enumerate(traj.states):
        w = dts[min(k, dts.size - 1)] if times.size > 1 else 1.0
        sup_rho = max(sup_rho, grid.sobolev_norm(s.rho_bar - eq.rho_bar_star, 3))
        l2_v += w * grid.sobolev_norm(s.v, 4) ** 2
        l2_theta += w * grid.sobolev_norm(s.theta - eq.theta_star, 4) ** 2
        if k > 0:
            prev = traj.states[k - 1]
            h = dts[k - 1]
            h1_rho += h * grid.sobolev_norm((s.rho_bar - prev.rho_bar) / h, 2) ** 2
            h1_v += h * grid.sobolev_norm((s.v - prev.v) / h, 2) ** 2
            h1_theta += h * grid.sobolev_norm((s.theta - prev.theta) / h, 2) ** 2
        ratio_t = s.theta / eq.theta_star
        ratio_r = thermo.density(s.rho_bar, s.theta) / ref_rho
        theta_lo, theta_hi = min(theta_lo, ratio_t.min()), max(theta_hi, ratio_t.max())
        rho_lo, rho_hi = min(rho_lo, ratio_r.min()), max(rho_hi, ratio_r.max())
        margin = min(margin, float(np.min(np.minimum(s.theta - 0.5 * eq.theta_star, 1.5 * eq.theta_star - s.theta))))
        ok = ratio_t.min() >= 0.5 and ratio_t.max() <= 1.5 and ratio_r.min() >= 0.5 and ratio_r.max() <= 1.5
        if not ok and first_violation is None:
            first_violation = float(s.time)
    return {
        "sup_H3_rho_bar": sup_rho,
        "L2_H4_v": float(np.sqrt(l2_v)),
        "L2_H4_theta": float(np.sqrt(l2_theta)),
        "H1_H2_rho_bar": float(np.sqrt(h1_rho)),
        "H1_H2_v": float(np.sqrt(h1_v)),
        "H1_H2_theta": float(np.sqrt(h1_theta)),
        "theta_ratio_range": [float(theta_lo), float(theta_hi)],
        "rho_ratio_range": [float(rho_lo), float(rho_hi)],
        "theta_margin": float(margin),
        "brackets_ok": first_violation is None,
        "first_violation_time": first_violation,
    }
