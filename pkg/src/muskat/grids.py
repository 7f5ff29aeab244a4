"""Lattices and discrete derivative operators shared by the solver modules.

Fields live on a tensor lattice: one or two lateral axes wrapping a torus
of period ``L`` and, for bulk fields, a vertical axis through the two
phase slabs ``[-1, 0]`` and ``[0, 1]`` that meet at the interface line
``z = 0``.  Lateral derivatives are spectral (fields are smooth and
periodic); vertical derivatives are 2nd-order finite differences with
one-sided closures at the slab ends, so a phase never reads across the
interface.

Layout conventions used everywhere: time is the leading axis, the
vertical axis is last.  Interface fields are ``(nt, *lat)``, bulk fields
``(nt, *lat, nz + 1)``.  Single-level variants drop the time axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline


# ---------------------------------------------------------------------------
# spectral derivatives on periodic axes


def spectral_deriv(values, period, axis, order=1):
    """Differentiate along a periodic axis by the Fourier multiplier (ik)^order.

    Odd orders zero the Nyquist mode (the sine interpolant of that mode
    vanishes on the lattice); even orders keep it.
    """
    values = np.asarray(values)
    n = values.shape[axis]
    if n < 2:
        raise ValueError("need at least two nodes along a periodic axis")
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=period / n)
    if order % 2 == 1 and n % 2 == 0:
        k = k.copy()
        k[n // 2] = 0.0
    mult = (1j * k) ** order
    shape = [1] * values.ndim
    shape[axis] = n
    out = np.fft.ifft(np.fft.fft(values, axis=axis) * mult.reshape(shape), axis=axis)
    if np.isrealobj(values):
        return np.ascontiguousarray(out.real)
    return out


@dataclass(frozen=True)
class LateralGrid:
    """Uniform lattice on the lateral torus (one or two axes, period L)."""

    shape: tuple
    period: float

    def __post_init__(self):
        if len(self.shape) not in (1, 2):
            raise ValueError("lateral grid supports 1 or 2 axes (N = 2 or 3)")
        if any(int(n) < 2 for n in self.shape):
            raise ValueError("need at least two lateral nodes per axis")
        if not self.period > 0:
            raise ValueError("lateral period must be positive")
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(self.period / n for n in self.shape)

    @property
    def cell(self):
        out = 1.0
        for h in self.spacing:
            out *= h
        return out

    def coords(self):
        return [np.arange(n) * (self.period / n) for n in self.shape]

    def mesh(self):
        return np.meshgrid(*self.coords(), indexing="ij")

    def wavenumbers(self):
        return [2.0 * np.pi * np.fft.fftfreq(n, d=self.period / n) for n in self.shape]

    @cached_property
    def k_mesh(self):
        return tuple(np.meshgrid(*self.wavenumbers(), indexing="ij"))

    @cached_property
    def k2(self):
        out = np.zeros(self.shape)
        for km in self.k_mesh:
            out = out + km ** 2
        return out

    @cached_property
    def kabs(self):
        return np.sqrt(self.k2)

    # axis bookkeeping: lateral axes sit immediately before `trailing`
    # non-lateral trailing axes (0 for interface fields, 1 for bulk fields).
    def axes(self, values, trailing=0):
        start = values.ndim - trailing - self.ndim
        if start < 0 or values.shape[start:values.ndim - trailing] != self.shape:
            raise ValueError("field does not match the lateral lattice")
        return tuple(range(start, values.ndim - trailing))

    def fft(self, values, trailing=0):
        return np.fft.fftn(values, axes=self.axes(values, trailing))

    def ifft(self, spec, trailing=0, real=True):
        start = spec.ndim - trailing - self.ndim
        out = np.fft.ifftn(spec, axes=tuple(range(start, spec.ndim - trailing)))
        return out.real if real else out

    def _mesh_for(self, values, trailing, mesh):
        shape = [1] * values.ndim
        ax = self.axes(values, trailing)
        for a, n in zip(ax, self.shape):
            shape[a] = n
        return mesh.reshape(shape)

    def deriv(self, values, i, order=1, trailing=0):
        ax = self.axes(values, trailing)[i]
        return spectral_deriv(values, self.period, ax, order)

    def grad(self, values, trailing=0):
        return [self.deriv(values, i, 1, trailing) for i in range(self.ndim)]

    def laplacian(self, values, trailing=0):
        spec = self.fft(values, trailing)
        out = np.fft.ifftn(spec * self._mesh_for(values, trailing, -self.k2),
                           axes=self.axes(values, trailing))
        return out.real if np.isrealobj(values) else out

    def integrate(self, values, trailing=0):
        return values.sum(axis=self.axes(values, trailing)) * self.cell

    def mean(self, values, trailing=0):
        return values.mean(axis=self.axes(values, trailing))


# ---------------------------------------------------------------------------
# vertical finite differences (last axis, non-periodic)


def dz1(values, h):
    """First derivative along the last axis, centered inside, one-sided
    2nd-order at both ends."""
    v = np.asarray(values)
    if v.shape[-1] < 3:
        raise ValueError("vertical derivative needs at least three nodes")
    out = np.empty_like(v, dtype=float)
    out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2.0 * h)
    out[..., 0] = (-3.0 * v[..., 0] + 4.0 * v[..., 1] - v[..., 2]) / (2.0 * h)
    out[..., -1] = (3.0 * v[..., -1] - 4.0 * v[..., -2] + v[..., -3]) / (2.0 * h)
    return out


def dz2(values, h):
    """Second derivative along the last axis, one-sided 2nd-order at ends."""
    v = np.asarray(values)
    if v.shape[-1] < 4:
        raise ValueError("vertical second derivative needs at least four nodes")
    out = np.empty_like(v, dtype=float)
    out[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]) / (h * h)
    out[..., 0] = (2.0 * v[..., 0] - 5.0 * v[..., 1] + 4.0 * v[..., 2] - v[..., 3]) / (h * h)
    out[..., -1] = (2.0 * v[..., -1] - 5.0 * v[..., -2] + 4.0 * v[..., -3] - v[..., -4]) / (h * h)
    return out


def end_derivative(values, h, end):
    """One-sided 2nd-order first derivative at one end of the last axis.

    ``end='lower'`` evaluates at index 0, ``end='upper'`` at index -1; the
    sign is the derivative along increasing coordinate in both cases.
    """
    v = np.asarray(values)
    if v.shape[-1] < 3:
        raise ValueError("end derivative needs at least three nodes")
    if end == "lower":
        return (-3.0 * v[..., 0] + 4.0 * v[..., 1] - v[..., 2]) / (2.0 * h)
    if end == "upper":
        return (3.0 * v[..., -1] - 4.0 * v[..., -2] + v[..., -3]) / (2.0 * h)
    raise ValueError("end must be 'lower' or 'upper'")


def trapz_z(values, h):
    """Trapezoid rule along the last axis."""
    v = np.asarray(values)
    return (v[..., 1:] + v[..., :-1]).sum(axis=-1) * (0.5 * h)


def fd_deriv(values, axis, h, order=1, periodic=False):
    """Finite-difference derivative along any axis, 2nd-order throughout.

    Periodic axes wrap; bounded axes use the one-sided closures of
    dz1/dz2 at the ends.
    """
    v = np.moveaxis(np.asarray(values), axis, -1)
    if periodic:
        if order == 1:
            out = (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2.0 * h)
        elif order == 2:
            out = (np.roll(v, -1, axis=-1) - 2.0 * v + np.roll(v, 1, axis=-1)) / (h * h)
        else:
            raise ValueError("order must be 1 or 2")
    elif order == 1:
        out = dz1(v, h)
    elif order == 2:
        out = dz2(v, h)
    else:
        raise ValueError("order must be 1 or 2")
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# strip lattice


@dataclass(frozen=True)
class StripGrid:
    """Lateral torus times the split vertical interval, plus time levels.

    ``nz`` counts vertical intervals per phase (each slab carries nz + 1
    nodes including interface and outer boundary), ``nt`` counts time
    levels including t = 0.
    """

    lat: LateralGrid
    nz: int
    nt: int
    horizon: float

    def __post_init__(self):
        if self.nz < 4:
            raise ValueError("need at least four vertical intervals per phase")
        if self.nt < 1:
            raise ValueError("need at least one time level")
        if self.nt > 1 and not self.horizon > 0:
            raise ValueError("time horizon must be positive")

    @property
    def hz(self):
        return 1.0 / self.nz

    @property
    def dt(self):
        return self.horizon / (self.nt - 1) if self.nt > 1 else 0.0

    @cached_property
    def times(self):
        return np.linspace(0.0, self.horizon, self.nt) if self.nt > 1 else np.zeros(1)

    @cached_property
    def z_plus(self):
        return np.linspace(0.0, 1.0, self.nz + 1)

    @cached_property
    def z_minus(self):
        return np.linspace(-1.0, 0.0, self.nz + 1)

    @cached_property
    def z_full(self):
        return np.concatenate([self.z_minus[:-1], self.z_plus])

    def bulk_shape(self, with_time=True):
        core = self.lat.shape + (self.nz + 1,)
        return (self.nt,) + core if with_time else core

    def interface_shape(self, with_time=True):
        return ((self.nt,) + self.lat.shape) if with_time else self.lat.shape


def make_grid(dim, n_lat, nz, nt, horizon, period=2.0 * np.pi):
    """Convenience constructor; ``dim`` is the full space dimension N."""
    if dim not in (2, 3):
        raise ValueError("supported space dimensions are N = 2 and N = 3")
    shape = (n_lat,) * (dim - 1) if np.isscalar(n_lat) else tuple(n_lat)
    return StripGrid(LateralGrid(shape, period), nz, nt, horizon)


# ---------------------------------------------------------------------------
# batched vertical cubic splines (per lateral column, shared abscissae)


class VerticalSpline:
    """Cubic interpolant of many vertical columns with column-wise query points.

    ``values`` has the vertical axis first, ``(nz, *cols)``; queries carry
    the same trailing column axes and arbitrary leading axes.  Evaluation
    gathers per-segment polynomial coefficients, so batches of shifted
    query points cost a few vectorized ops instead of per-column calls.
    """

    def __init__(self, z, values):
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or z.size < 4:
            raise ValueError("spline axis needs at least four nodes")
        self.z = z
        self.cols = np.asarray(values).shape[1:]
        self._c = CubicSpline(z, values, axis=0).c  # (4, nseg, *cols)

    def __call__(self, pts, deriv=0):
        pts = np.asarray(pts, dtype=float)
        if pts.shape[pts.ndim - len(self.cols):] != self.cols:
            raise ValueError("query points do not match the spline columns")
        lead = pts.shape[: pts.ndim - len(self.cols)]
        ncol = int(np.prod(self.cols)) if self.cols else 1
        nseg = self._c.shape[1]
        c = self._c.reshape(4, nseg, ncol)
        p = pts.reshape(-1, ncol)
        idx = np.clip(np.searchsorted(self.z, p, side="right") - 1, 0, nseg - 1)
        t = p - self.z[idx]
        col = np.arange(ncol)[None, :]
        c0, c1, c2, c3 = (c[m][idx, col] for m in range(4))
        if deriv == 0:
            out = ((c0 * t + c1) * t + c2) * t + c3
        elif deriv == 1:
            out = (3.0 * c0 * t + 2.0 * c1) * t + c2
        elif deriv == 2:
            out = 6.0 * c0 * t + 2.0 * c1
        else:
            raise ValueError("deriv must be 0, 1 or 2")
        return out.reshape(lead + self.cols)


# ---------------------------------------------------------------------------
# deterministic subsampling for the estimator module


def stride_slice(n, cap):
    """Slice selecting at most ``cap`` nodes with a deterministic stride."""
    if cap < 1:
        raise ValueError("cap must be at least one node")
    step = max(1, -(-n // cap))
    return slice(0, n, step)
