"""Discretization of the periodic layer T^2 x (0, 1).

Array layout conventions used throughout the package:

* 2D scalar fields have shape ``(nx, ny)``.
* 3D scalar fields have shape ``(nx, ny, nz)``; the vertical axis is always last.
* Horizontal vector fields carry their two components in a leading axis,
  ``(2, nx, ny, nz)`` or ``(2, nx, ny)``; 2x2 matrix fields use ``(2, 2, ...)``.

Horizontal derivatives are Fourier-spectral. The Nyquist wavenumber is dropped
from first derivatives and, for consistency, from every derivative operator, so
``div_h(grad_h(f)) == laplacian_h(f)`` holds exactly in spectral space.

Vertical operators act on the last axis only and need nothing but the number of
nodes, so they are also available as module-level functions that work on bare
profiles of shape ``(nz,)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.integrate import cumulative_trapezoid

from .errors import DegeneracyError, GridMismatchError

GUARD = 1e-12


def divide(numerator, denominator, what="denominator"):
    """Pointwise quotient that refuses denominators within ``GUARD`` of zero."""
    den = np.asarray(denominator)
    if not np.all(np.isfinite(den)) or np.min(np.abs(den)) < GUARD:
        raise DegeneracyError(f"{what} is degenerate (|value| < {GUARD:g} or non-finite)")
    return numerator / den


# -- vertical operators -------------------------------------------------------


def _spacing(nz):
    if nz < 3:
        raise GridMismatchError(f"need at least 3 vertical nodes, got {nz}")
    return 1.0 / (nz - 1)


def trapezoid_weights(nz):
    """Quadrature weights of the trapezoid rule on ``nz`` uniform nodes of [0, 1]."""
    w = np.full(nz, _spacing(nz))
    w[0] = w[-1] = 0.5 * w[0]
    return w


def cumulative_integral(f):
    """``F(z_k) = int_0^{z_k} f`` by the trapezoid rule; ``F(0) == 0`` exactly."""
    f = np.asarray(f, dtype=float)
    return cumulative_trapezoid(f, dx=_spacing(f.shape[-1]), axis=-1, initial=0.0)


def vertical_mean(f):
    """Column integral over [0, 1] (the layer has unit depth, so this is the mean)."""
    f = np.asarray(f, dtype=float)
    return f @ trapezoid_weights(f.shape[-1])


def dz(f, neumann=False):
    """Second-order vertical derivative.

    Interior nodes use centered differences. Boundary nodes use one-sided
    second-order stencils, unless ``neumann`` is set, in which case the field
    is taken to satisfy a homogeneous Neumann condition and the boundary
    derivative is zero (the ghost-node reflection value).
    """
    f = np.asarray(f, dtype=float)
    out = np.gradient(f, _spacing(f.shape[-1]), axis=-1, edge_order=2)
    if neumann:
        out[..., 0] = 0.0
        out[..., -1] = 0.0
    return out


def dzz(f):
    """Second vertical derivative with ghost-node reflection (Neumann data)."""
    f = np.asarray(f, dtype=float)
    h2 = _spacing(f.shape[-1]) ** 2
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - 2.0 * f[..., 1:-1] + f[..., :-2]) / h2
    out[..., 0] = 2.0 * (f[..., 1] - f[..., 0]) / h2
    out[..., -1] = 2.0 * (f[..., -2] - f[..., -1]) / h2
    return out


def boundary_slope(f):
    """One-sided second-order ``d/dz`` at z=0 and z=1, used to monitor Neumann data."""
    f = np.asarray(f, dtype=float)
    h = _spacing(f.shape[-1])
    bottom = (-3.0 * f[..., 0] + 4.0 * f[..., 1] - f[..., 2]) / (2.0 * h)
    top = (3.0 * f[..., -1] - 4.0 * f[..., -2] + f[..., -3]) / (2.0 * h)
    return bottom, top


def face_gradient_squared(f):
    """Nodal average of squared face differences ``((f_{k+1}-f_k)/dz)^2``.

    Integrated with trapezoid weights this equals the sum of squared face
    differences times ``dz``, which is exactly ``-int f * dzz(f)``. Using it in
    the viscous heating keeps the discrete energy budget closed.
    """
    f = np.asarray(f, dtype=float)
    g2 = (np.diff(f, axis=-1) / _spacing(f.shape[-1])) ** 2
    out = np.empty_like(f)
    out[..., 0] = g2[..., 0]
    out[..., -1] = g2[..., -1]
    out[..., 1:-1] = 0.5 * (g2[..., 1:] + g2[..., :-1])
    return out


def cumulative_matrix(nz):
    """Matrix ``C`` with ``C @ f == cumulative_integral(f)`` for profiles."""
    h = _spacing(nz)
    c = np.zeros((nz, nz))
    for k in range(1, nz):
        c[k, :k + 1] = h
        c[k, 0] = c[k, k] = 0.5 * h
    return c


def dzz_matrix(nz):
    """Matrix form of :func:`dzz`."""
    h2 = _spacing(nz) ** 2
    m = np.zeros((nz, nz))
    idx = np.arange(1, nz - 1)
    m[idx, idx - 1] = 1.0 / h2
    m[idx, idx] = -2.0 / h2
    m[idx, idx + 1] = 1.0 / h2
    m[0, 0], m[0, 1] = -2.0 / h2, 2.0 / h2
    m[-1, -1], m[-1, -2] = -2.0 / h2, 2.0 / h2
    return m


# -- the grid -----------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid horizontally, uniform nodes with endpoints vertically.

    ``dealias`` switches on the 2/3-rule filter exposed by :meth:`dealias_filter`.
    """

    nx: int
    ny: int
    nz: int
    dealias: bool = False
    vertical_scheme: str = "uniform-trapezoid"

    def __post_init__(self):
        for name in ("nx", "ny"):
            n = getattr(self, name)
            if n < 4 or n % 2:
                raise GridMismatchError(f"{name} must be even and >= 4, got {n}")
        if self.nz < 3:
            raise GridMismatchError(f"nz must be >= 3, got {self.nz}")
        if self.vertical_scheme != "uniform-trapezoid":
            raise GridMismatchError(f"unknown vertical scheme {self.vertical_scheme!r}")

    # coordinates

    @property
    def spacing_z(self):
        return 1.0 / (self.nz - 1)

    @cached_property
    def x(self):
        return np.arange(self.nx) / self.nx

    @cached_property
    def y(self):
        return np.arange(self.ny) / self.ny

    @cached_property
    def z(self):
        return np.linspace(0.0, 1.0, self.nz)

    @cached_property
    def mesh(self):
        """Coordinate arrays ``(X, Y, Z)`` of shape ``(nx, ny, nz)``."""
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    @cached_property
    def mesh2(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def weights(self):
        return trapezoid_weights(self.nz)

    @property
    def shape2(self):
        return (self.nx, self.ny)

    @property
    def shape3(self):
        return (self.nx, self.ny, self.nz)

    # shape checks

    def _horizontal_axes(self, f):
        shp = np.shape(f)
        if shp[-3:] == self.shape3:
            return (-3, -2)
        if shp[-2:] == self.shape2:
            return (-2, -1)
        raise GridMismatchError(f"field of shape {shp} does not live on grid {self.shape3}")

    def _is_3d(self, f):
        return self._horizontal_axes(f) == (-3, -2)

    def check3(self, f, name="field"):
        if np.shape(f)[-3:] != self.shape3:
            raise GridMismatchError(f"{name}: expected trailing shape {self.shape3}, got {np.shape(f)}")
        return f

    def check2(self, f, name="field"):
        if np.shape(f)[-2:] != self.shape2:
            raise GridMismatchError(f"{name}: expected trailing shape {self.shape2}, got {np.shape(f)}")
        return f

    # spectral machinery

    @cached_property
    def _wavenumbers(self):
        kx = 2.0 * np.pi * sfft.fftfreq(self.nx, 1.0 / self.nx)
        ky = 2.0 * np.pi * sfft.rfftfreq(self.ny, 1.0 / self.ny)
        kx[self.nx // 2] = 0.0
        ky[-1] = 0.0
        return kx, ky

    def _k(self, axes):
        kx, ky = self._wavenumbers
        if axes == (-3, -2):
            return kx[:, None, None], ky[None, :, None]
        return kx[:, None], ky[None, :]

    def _fft(self, f, axes):
        return sfft.rfftn(f, axes=axes)

    def _ifft(self, F, axes):
        return sfft.irfftn(F, s=self.shape2, axes=axes)

    def dx(self, f):
        axes = self._horizontal_axes(f)
        kx, _ = self._k(axes)
        return self._ifft(1j * kx * self._fft(f, axes), axes)

    def dy(self, f):
        axes = self._horizontal_axes(f)
        _, ky = self._k(axes)
        return self._ifft(1j * ky * self._fft(f, axes), axes)

    def grad_h(self, f):
        """Horizontal gradient; the component axis is prepended."""
        axes = self._horizontal_axes(f)
        kx, ky = self._k(axes)
        F = self._fft(f, axes)
        return np.stack([self._ifft(1j * kx * F, axes), self._ifft(1j * ky * F, axes)])

    def div_h(self, v):
        """Horizontal divergence of a vector field whose first axis holds components."""
        if np.shape(v)[0] != 2:
            raise GridMismatchError("vector field must have 2 components on axis 0")
        axes = self._horizontal_axes(v[0])
        kx, ky = self._k(axes)
        return self._ifft(1j * kx * self._fft(v[0], axes) + 1j * ky * self._fft(v[1], axes), axes)

    def jacobian_h(self, v):
        """``J[i, k] = d v_i / d y_k`` for a horizontal vector field."""
        return np.stack([self.grad_h(v[0]), self.grad_h(v[1])])

    def hessian_h(self, f):
        """``H[k, l] = d^2 f / dy_k dy_l``."""
        axes = self._horizontal_axes(f)
        kx, ky = self._k(axes)
        F = self._fft(f, axes)
        fxx = self._ifft(-kx * kx * F, axes)
        fxy = self._ifft(-kx * ky * F, axes)
        fyy = self._ifft(-ky * ky * F, axes)
        return np.stack([np.stack([fxx, fxy]), np.stack([fxy, fyy])])

    def laplacian_h(self, f):
        axes = self._horizontal_axes(f)
        kx, ky = self._k(axes)
        return self._ifft(-(kx * kx + ky * ky) * self._fft(f, axes), axes)

    def grad_h_div_h(self, v):
        return self.grad_h(self.div_h(v))

    def laplacian3(self, f):
        """Full Laplacian ``Delta_H + d_zz`` with Neumann data in z."""
        self.check3(f)
        return self.laplacian_h(f) + dzz(f)

    def horizontal_mean(self, f):
        axes = self._horizontal_axes(f)
        return np.mean(f, axis=axes)

    def dealias_filter(self, f):
        """Zero the upper third of the horizontal spectrum (no-op if dealiasing is off)."""
        if not self.dealias:
            return f
        axes = self._horizontal_axes(f)
        mx = np.abs(sfft.fftfreq(self.nx, 1.0 / self.nx))
        my = sfft.rfftfreq(self.ny, 1.0 / self.ny)
        keep = (mx[:, None] < self.nx / 3.0) & (my[None, :] < self.ny / 3.0)
        if axes == (-3, -2):
            keep = keep[:, :, None]
        return self._ifft(self._fft(f, axes) * keep, axes)

    # vertical operators, with shape checks

    def cumulative_integral(self, f):
        self.check3(f)
        return cumulative_integral(f)

    def vertical_mean(self, f):
        self.check3(f)
        return vertical_mean(f)

    def dz(self, f, neumann=False):
        self.check3(f)
        return dz(f, neumann=neumann)

    def dzz(self, f):
        self.check3(f)
        return dzz(f)

    # integrals and norms

    def integrate(self, f):
        """Domain integral: spectral mean horizontally, trapezoid vertically."""
        if self._is_3d(f):
            return np.mean(vertical_mean(f), axis=(-2, -1))
        return np.mean(f, axis=(-2, -1))

    def l2_norm(self, f):
        f = np.asarray(f)
        return float(np.sqrt(np.sum(self.integrate(f * f))))

    def sobolev_norm(self, f, order):
        """Discrete H^order proxy: spectral horizontally, differences vertically.

        Sums ``|| (1 + |k|^2)^{(order - j)/2} d_z^j f ||_{L2}^2`` over
        ``j = 0..order`` (``j = 0`` only for 2D fields). Leading component axes
        are summed over.
        """
        f = np.asarray(f, dtype=float)
        axes = self._horizontal_axes(f)
        kx, ky = self._k(axes)
        weight = 1.0 + kx * kx + ky * ky
        three_d = axes == (-3, -2)
        total = 0.0
        g = f
        for j in range(order + 1 if three_d else 1):
            G = self._fft(g, axes) * weight ** ((order - j) / 2.0)
            total += self.l2_norm(self._ifft(G, axes)) ** 2
            if three_d:
                g = dz(g)
        return float(np.sqrt(total))

    # interpolation

    def _interp_basis(self, n, pts):
        m = sfft.fftfreq(n, 1.0 / n)
        e = np.exp(2j * np.pi * np.outer(pts, m))
        e[:, n // 2] = np.cos(np.pi * n * pts)
        return e

    def interpolate_h(self, f, px, py):
        """Trigonometric interpolation of ``f`` at horizontal points.

        ``px`` and ``py`` share one shape ``P``; the result has shape
        ``P + f.shape[-1:]`` for 3D fields and ``P`` for 2D fields. Points are
        wrapped into the unit cell, so the result is exactly periodic. Leading
        component axes of ``f`` are kept in front.
        """
        f = np.asarray(f, dtype=float)
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        if px.shape != py.shape:
            raise ValueError("px and py must have the same shape")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(px)) and np.all(np.isfinite(py))):
            raise ValueError("interpolate_h received non-finite input")
        axes = self._horizontal_axes(f)
        three_d = axes == (-3, -2)
        lead = f.shape[: f.ndim - (3 if three_d else 2)]
        nzs = f.shape[-1] if three_d else 1
        g = f.reshape(lead + self.shape2 + (nzs,))
        g = np.moveaxis(g.reshape((-1,) + self.shape2 + (nzs,)), 0, -1)  # (nx, ny, nz, L)
        G = sfft.fft2(g, axes=(0, 1)) / (self.nx * self.ny)
        flat_x = np.mod(px.ravel(), 1.0)
        flat_y = np.mod(py.ravel(), 1.0)
        ex = self._interp_basis(self.nx, flat_x)
        ey = self._interp_basis(self.ny, flat_y)
        npts = flat_x.size
        t = (ex @ G.reshape(self.nx, -1)).reshape(npts, self.ny, -1)
        vals = np.einsum("pb,pbr->pr", ey, t).real.reshape(npts, nzs, -1)
        vals = np.moveaxis(vals, -1, 0).reshape(lead + px.shape + ((nzs,) if three_d else ()))
        return vals


# -- binary field dumps -------------------------------------------------------


def write_field(path, values, name, time, grid):
    """Write one field: a JSON header line, then little-endian float64 data (C order)."""
    values = np.ascontiguousarray(values, dtype="<f8")
    header = {
        "nx": grid.nx,
        "ny": grid.ny,
        "nz": grid.nz,
        "name": name,
        "time": float(time),
        "shape": list(values.shape),
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        fh.write(values.tobytes(order="C"))


def read_field(path):
    """Inverse of :func:`write_field`; returns ``(header, values)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = fh.read()
    values = np.frombuffer(data, dtype="<f8").reshape(header["shape"]).copy()
    return header, values
