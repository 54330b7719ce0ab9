"""Horizontal flow map following the column-averaged flux ``b``.

Maps are stored as displacements ``X - id`` so that wrapping across the
periodic seam never shows up in norms or derivatives. Jacobians use the layout
``G[i, k] = d X_i / d y_k`` with shape ``(2, 2, nx, ny)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from . import grid as g
from .errors import ConvergenceError, DegeneracyError

DET_THRESHOLD = 1e-12


def _identity(shape2):
    eye = np.zeros((2, 2) + shape2)
    eye[0, 0] = eye[1, 1] = 1.0
    return eye


def matmul(a, b):
    """Pointwise product of 2x2 matrix fields."""
    return np.einsum("ij...,jk...->ik...", a, b)


def inverse_jacobian(gradX):
    """Cofactor inverse of a 2x2 Jacobian field; refuses near-singular nodes."""
    gradX = np.asarray(gradX, dtype=float)
    det = gradX[0, 0] * gradX[1, 1] - gradX[0, 1] * gradX[1, 0]
    if np.min(det) < DET_THRESHOLD:
        raise DegeneracyError(f"det grad X fell to {np.min(det):.3g}; the flow map is no longer invertible")
    cof_t = np.stack([np.stack([gradX[1, 1], -gradX[0, 1]]), np.stack([-gradX[1, 0], gradX[0, 0]])])
    return cof_t / det


@dataclass(frozen=True)
class Frame:
    """The flow at one instant: displacement, Jacobian and its inverse."""

    displacement: np.ndarray
    gradX: np.ndarray
    Z: np.ndarray

    @classmethod
    def identity(cls, grid):
        eye = _identity(grid.shape2)
        return cls(np.zeros((2,) + grid.shape2), eye, eye.copy())

    @classmethod
    def from_displacement(cls, grid, displacement):
        """Frame whose Jacobian is the spectral derivative of the displacement."""
        grad = _identity(grid.shape2) + grid.jacobian_h(displacement)
        return cls(np.asarray(displacement, dtype=float), grad, inverse_jacobian(grad))

    def points(self, grid):
        xx, yy = grid.mesh2
        return xx + self.displacement[0], yy + self.displacement[1]


@dataclass(frozen=True)
class FlowMap:
    grid: g.Grid
    times: np.ndarray
    displacement: np.ndarray  # (nt, 2, nx, ny)
    gradX: np.ndarray  # (nt, 2, 2, nx, ny)
    Z: np.ndarray

    def frame(self, index):
        return Frame(self.displacement[index], self.gradX[index], self.Z[index])

    def index_of(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[i], t, rtol=0, atol=1e-12 * max(1.0, abs(t))):
            raise ValueError(f"time {t} is not a stored sample")
        return i


def _time_interpolant(times, samples):
    times = np.asarray(times, dtype=float)
    if times.size >= 4:
        spline = CubicSpline(times, samples, axis=0)
        return spline
    def linear(t):
        i = int(np.clip(np.searchsorted(times, t) - 1, 0, times.size - 2))
        s = (t - times[i]) / (times[i + 1] - times[i])
        return (1 - s) * samples[i] + s * samples[i + 1]
    return linear


def integrate_flow(grid, b_series, times, substeps=1):
    """RK4 integration of ``dX/dt = b(t, X)`` with the Jacobian co-integrated.

    ``b_series`` has shape ``(nt, 2, nx, ny)``; between samples ``b`` is a
    cubic spline in time (linear for fewer than four samples) and a
    trigonometric interpolant in space. The variational equation
    ``dG/dt = grad b(t, X) G`` is advanced with the same stages.
    """
    b_series = np.asarray(b_series, dtype=float)
    times = np.asarray(times, dtype=float)
    if b_series.shape[0] != times.size or b_series.shape[1:] != (2,) + grid.shape2:
        raise g.GridMismatchError("b_series must have shape (nt, 2, nx, ny) matching times")
    if not np.all(np.isfinite(b_series)):
        raise ValueError("b_series contains non-finite values")
    if times.size > 1 and np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    jac_series = np.stack([grid.jacobian_h(b) for b in b_series])
    b_of_t = _time_interpolant(times, b_series) if times.size > 1 else (lambda t: b_series[0])
    jb_of_t = _time_interpolant(times, jac_series) if times.size > 1 else (lambda t: jac_series[0])
    xx, yy = grid.mesh2

    def rhs(t, disp, grad):
        px, py = xx + disp[0], yy + disp[1]
        vel = grid.interpolate_h(b_of_t(t), px, py)
        jac = grid.interpolate_h(jb_of_t(t), px, py)
        return vel, matmul(jac, grad)

    disp = np.zeros((2,) + grid.shape2)
    grad = _identity(grid.shape2)
    out_d, out_g = [disp.copy()], [grad.copy()]
    for n in range(times.size - 1):
        h = (times[n + 1] - times[n]) / substeps
        t = times[n]
        for _ in range(substeps):
            k1 = rhs(t, disp, grad)
            k2 = rhs(t + h / 2, disp + h / 2 * k1[0], grad + h / 2 * k1[1])
            k3 = rhs(t + h / 2, disp + h / 2 * k2[0], grad + h / 2 * k2[1])
            k4 = rhs(t + h, disp + h * k3[0], grad + h * k3[1])
            disp = disp + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            grad = grad + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            t += h
        if not (np.all(np.isfinite(disp)) and np.all(np.isfinite(grad))):
            raise ValueError("flow integration produced non-finite values")
        out_d.append(disp.copy())
        out_g.append(grad.copy())
    grads = np.array(out_g)
    return FlowMap(grid, times, np.array(out_d), grads, np.array([inverse_jacobian(G) for G in grads]))


def flow_from_lagrangian_flux(grid, times, bL_series):
    """Flow map from ``b`` already sampled along the characteristics.

    Along the flow ``dX/dt (t, y) = b^L(t, y)`` and ``d grad X / dt = grad_y b^L``,
    so both follow from a trapezoid rule in time with no spatial interpolation.
    """
    bL_series = np.asarray(bL_series, dtype=float)
    disp = cumulative_trapezoid(bL_series, times, axis=0, initial=0.0)
    jac = np.stack([grid.jacobian_h(b) for b in bL_series])
    grads = _identity(grid.shape2) + cumulative_trapezoid(jac, times, axis=0, initial=0.0)
    return FlowMap(grid, np.asarray(times, float), disp, grads, np.array([inverse_jacobian(G) for G in grads]))


def _first_differences(grid, field):
    """Max of forward differences along x and y divided by the spacing (periodic)."""
    ddx = (np.roll(field, -1, axis=-2) - field) * grid.nx
    ddy = (np.roll(field, -1, axis=-1) - field) * grid.ny
    return max(float(np.max(np.abs(ddx))), float(np.max(np.abs(ddy))))


def flow_regime_report(flow, eps=None, tau=None, threshold=0.5):
    """Discrete proxies of the flow-map estimates.

    Matrix deviations are measured with the pointwise Frobenius norm (an upper
    bound for the operator norm). ``w1inf`` adds the largest first difference
    of the entries, the discrete stand-in for the ``W^{1,inf}`` seminorm.
    """
    grid = flow.grid
    eye = _identity(grid.shape2)
    sup_dev = sup_w1 = sup_z = sup_dz = 0.0
    det_min = np.inf
    identity_err = 0.0
    for G, Z in zip(flow.gradX, flow.Z):
        dev = G - eye
        sup_dev = max(sup_dev, float(np.max(np.sqrt(np.sum(dev**2, axis=(0, 1))))))
        sup_w1 = max(sup_w1, float(np.max(np.abs(dev))) + _first_differences(grid, dev))
        sup_z = max(sup_z, float(np.max(np.sqrt(np.sum((Z - eye) ** 2, axis=(0, 1))))))
        sup_dz = max(sup_dz, float(np.max(np.abs(np.stack([grid.grad_h(Z[i, j]) for i in range(2) for j in range(2)])))))
        det_min = min(det_min, float(np.min(G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0])))
        identity_err = max(identity_err, float(np.max(np.abs(matmul(Z, G) - eye))))
    report = {
        "sup_gradX_minus_I": sup_dev,
        "sup_gradX_minus_I_w1inf": sup_w1,
        "sup_Z_minus_I": sup_z,
        "max_dZ_dy": sup_dz,
        "min_det_gradX": det_min,
        "max_Z_gradX_minus_I": identity_err,
        "threshold": threshold,
        "regime_ok": bool(sup_dev <= threshold),
        "regime_ok_w1inf": bool(sup_w1 <= threshold),
    }
    if eps and tau:
        report["scaling_constant"] = sup_dev / (np.sqrt(tau) * eps)
    return report


def compose(grid, field, displacement):
    """``field(y + displacement(y))`` by trigonometric interpolation.

    3D fields are composed horizontally only; the vertical axis is untouched.
    """
    xx, yy = grid.mesh2
    return grid.interpolate_h(field, xx + displacement[0], yy + displacement[1])


def inverse_map(grid, displacement, tol=1e-10, max_iter=200, damping=1.0):
    """Displacement of ``Y = X^{-1}`` by the fixed point ``Y = x - D(Y)``.

    The iteration contracts with factor ``sup |grad D|``, which is below one
    half in the valid regime. Raises :class:`ConvergenceError` otherwise.
    """
    xx, yy = grid.mesh2
    ydisp = -np.asarray(displacement, dtype=float).copy()
    for _ in range(max_iter):
        d_at_y = grid.interpolate_h(displacement, xx + ydisp[0], yy + ydisp[1])
        update = -d_at_y - ydisp
        ydisp = ydisp + damping * update
        if np.max(np.abs(update)) < tol:
            return ydisp
    raise ConvergenceError("inverse flow map iteration did not converge; the flow left the regime")


def pullback(grid, field, frame_or_disp):
    """Lagrangian view ``f o X`` of an Eulerian field."""
    disp = frame_or_disp.displacement if isinstance(frame_or_disp, Frame) else frame_or_disp
    return compose(grid, field, disp)


def pushforward(grid, field, frame_or_disp, tol=1e-10):
    """Eulerian view ``f o Y`` of a Lagrangian field."""
    disp = frame_or_disp.displacement if isinstance(frame_or_disp, Frame) else frame_or_disp
    return compose(grid, field, inverse_map(grid, disp, tol=tol))
