"""Collar cutoff, the interface-flattening map, and its differential machinery.

The moving interface is the graph x_N = rho(x', t) over a flat reference
line/plane.  Straightening it uses the shear

    y = x + e_N chi(x_N) rho(x', t),

supported in the collar |x_N| <= lambda0.  With |rho| <= lambda0/4 and
|chi'| <= 2/lambda0 the vertical slope 1 + chi' rho stays above 1/2, so
each vertical line maps monotonically and the shear is a bijection of
the strip.

Everything downstream needs three derived objects: the tilt vector
c = (chi grad' rho, chi' rho) whose rank-one shear I + e_N c^T is the
map's differential, the conjugated gradient rows J = ((dy/dx)^-1)^T,
and the pushed-forward Laplacian

    L_rho u = sum_k (J grad)_k (J grad u)_k,

expanded here into explicit coefficient fields so every u-derivative is
approximated by a single 2nd-order stencil (composing first-derivative
stencils twice along one axis would cost an order at the slab ends).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grids import LateralGrid, dz1, dz2, fd_deriv

# ramp carved from the C3 smoothstep: slope profile rises over the first
# third of the ramp, holds the plateau value, falls over the last third;
# this keeps max |chi'| at 1.875/lambda0 while making chi four times
# continuously differentiable (kinks in low-order chi derivatives would
# put O(h) errors into second-difference stencils near the junctions)
_RISE = 1.0 / 3.0


def _smoothstep7(x):
    # C3 at both ends: value/slope/curvature/jerk all match
    return (((-20.0 * x + 70.0) * x - 84.0) * x + 35.0) * x ** 4


def _smoothstep7_prime(x):
    return 140.0 * (x * (1.0 - x)) ** 3


def _smoothstep7_int(x):
    # integral of _smoothstep7 from 0, equals 1/2 at x = 1
    return (((-2.5 * x + 10.0) * x - 14.0) * x + 7.0) * x ** 5


def _ramp(s):
    """Unit ramp r: r(0)=1, r(1)=0, C4; returns (r, r', r'')."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    a = _RISE
    rise = s < a
    fall = s > 1.0 - a
    mid = ~(rise | fall)
    w = np.empty_like(s)
    wp = np.empty_like(s)
    cum = np.empty_like(s)
    x = np.clip(s / a, 0.0, 1.0)
    w[rise] = _smoothstep7(x[rise])
    wp[rise] = _smoothstep7_prime(x[rise]) / a
    cum[rise] = a * _smoothstep7_int(x[rise])
    w[mid] = 1.0
    wp[mid] = 0.0
    cum[mid] = 0.5 * a + (s[mid] - a)
    x = np.clip((1.0 - s) / a, 0.0, 1.0)
    w[fall] = _smoothstep7(x[fall])
    wp[fall] = -_smoothstep7_prime(x[fall]) / a
    cum[fall] = (1.0 - a) - a * _smoothstep7_int(x[fall])
    total = 1.0 - a
    return 1.0 - cum / total, -w / total, -wp / total


@dataclass(frozen=True)
class Cutoff:
    """Even collar cutoff: 1 on |lam| <= plateau*lambda0, 0 beyond lambda0."""

    lambda0: float
    plateau: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.lambda0 <= 0.5:
            raise ValueError("collar half-width must lie in (0, 1/2]")
        if not 0.0 < self.plateau < 1.0:
            raise ValueError("plateau fraction must lie in (0, 1)")
        lam = np.linspace(0.0, self.lambda0, 4001)
        slope = np.abs(self.profile(lam)[1]).max()
        if slope > 2.0 / self.lambda0 + 1e-12:
            raise ValueError("cutoff slope exceeds the 2/lambda0 bound")

    def profile(self, lam):
        """(chi, chi', chi'') at lam, vectorized, total on all reals."""
        arr = np.asarray(lam, dtype=float)
        scalar = arr.ndim == 0
        lam = np.atleast_1d(arr)
        p = self.plateau * self.lambda0
        width = self.lambda0 - p
        alam = np.abs(lam)
        s = np.clip((alam - p) / width, 0.0, 1.0)
        r, r1, r2 = _ramp(s)
        on_ramp = (alam > p) & (alam < self.lambda0)
        chi = np.where(alam <= p, 1.0, np.where(on_ramp, r, 0.0))
        chi1 = np.where(on_ramp, np.sign(lam) * r1 / width, 0.0)
        chi2 = np.where(on_ramp, r2 / width ** 2, 0.0)
        if scalar:
            return chi[0], chi1[0], chi2[0]
        return chi, chi1, chi2

    def value(self, lam):
        return self.profile(lam)[0]

    def deriv(self, lam):
        return self.profile(lam)[1]


@dataclass(frozen=True)
class DomainSpec:
    """Periodic strip: lateral torus of period L, vertical [-1, 1]."""

    dim: int
    period: float
    lambda0: float = 0.5
    plateau: float = 0.2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("space dimension must be 2 or 3")
        if not self.period > 0:
            raise ValueError("lateral period must be positive")

    @cached_property
    def cutoff(self):
        return Cutoff(self.lambda0, self.plateau)

    def lateral(self, n):
        shape = (n,) * (self.dim - 1) if np.isscalar(n) else tuple(n)
        return LateralGrid(shape, self.period)


def require_admissible(rho_values, lambda0, what="rho"):
    """The |rho| <= lambda0/4 smallness keeping the shear bijective."""
    sup = float(np.abs(rho_values).max()) if np.size(rho_values) else 0.0
    if sup > lambda0 / 4.0 + 1e-14:
        raise ValueError(
            f"sup|{what}| = {sup:.3e} exceeds lambda0/4 = {lambda0 / 4.0:.3e}")
    return sup


# ---------------------------------------------------------------------------
# the map and its inverse (vertical coordinate only; lateral is untouched)


def vertical_map(cutoff: Cutoff, z, rho, check=True):
    """y_N = z + chi(z) rho; inputs broadcast."""
    if check:
        require_admissible(rho, cutoff.lambda0)
    return z + cutoff.value(z) * rho


def vertical_map_inverse(cutoff: Cutoff, y, rho, check=True, tol=1e-13):
    """Solve z + chi(z) rho = y for z by the scalar Newton iteration.

    The vertical slope is bounded in [1/2, 3/2] for admissible rho, so
    the iteration contracts from the start z = y.
    """
    if check:
        require_admissible(rho, cutoff.lambda0)
    y = np.asarray(y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    shape = np.broadcast_shapes(y.shape, rho.shape)
    z = np.broadcast_to(y, shape).astype(float).copy()
    rho = np.broadcast_to(rho, shape)
    y = np.broadcast_to(y, shape)
    for _ in range(60):
        chi, chi1, _ = cutoff.profile(z)
        resid = z + chi * rho - y
        if np.abs(resid).max() <= tol:
            return z
        z -= resid / (1.0 + chi1 * rho)
    raise RuntimeError("vertical map inversion did not converge")


# ---------------------------------------------------------------------------
# tilt vector, conjugated Jacobian, determinant


def tilt_point(cutoff: Cutoff, rho_value, rho_grad, z):
    """Tilt c and slope gamma at one collar height from pointwise data.

    ``rho_grad`` is the tuple of lateral derivatives of rho at the point.
    """
    chi, chi1, _ = cutoff.profile(z)
    c = [chi * g for g in rho_grad] + [chi1 * rho_value]
    return c, 1.0 + c[-1]


def jacobian_matrix(c):
    """J = ((dy/dx)^-1)^T from the tilt components; shape (*c_shape, N, N).

    Only the last column deviates from the identity:
    J[k, N-1] = -c_k / (1 + c_N) for k < N-1 and J[N-1, N-1] = 1/(1+c_N).
    """
    c = [np.asarray(ck, dtype=float) for ck in c]
    n = len(c)
    gamma = 1.0 + c[-1]
    base = np.broadcast(*c)
    out = np.zeros(base.shape + (n, n))
    for k in range(n):
        out[..., k, k] = 1.0
    for k in range(n - 1):
        out[..., k, n - 1] = -c[k] / gamma
    out[..., n - 1, n - 1] = 1.0 / gamma
    return out


def forward_jacobian_det(cutoff: Cutoff, z, rho):
    """det(dy/dx) = 1 + chi'(z) rho."""
    return 1.0 + cutoff.deriv(z) * rho


# ---------------------------------------------------------------------------
# lateral derivative backends


class _Lateral:
    """Lateral derivatives for bulk fields (trailing vertical axis)."""

    def __init__(self, lat: LateralGrid, mode):
        if mode not in ("spectral", "fd"):
            raise ValueError("lateral mode must be 'spectral' or 'fd'")
        self.lat = lat
        self.mode = mode

    def bulk(self, values, i, order=1, wrap=True):
        if self.mode == "spectral":
            return self.lat.deriv(values, i, order=order, trailing=1)
        ax = self.lat.axes(values, 1)[i]
        return fd_deriv(values, ax, self.lat.spacing[i], order, periodic=wrap)

    def interface(self, values, i, order=1):
        # rho lives on the torus, so fd mode still wraps it
        if self.mode == "spectral":
            return self.lat.deriv(values, i, order=order, trailing=0)
        ax = self.lat.axes(values, 0)[i]
        return fd_deriv(values, ax, self.lat.spacing[i], order, periodic=True)


def laplace_flat(values, lat: LateralGrid, hz, mode="spectral", wrap=True):
    """Reference flat-strip Laplacian with the solver's stencils."""
    side = _Lateral(lat, mode)
    out = dz2(values, hz)
    for i in range(lat.ndim):
        out = out + side.bulk(values, i, order=2, wrap=wrap)
    return out


def transformed_laplacian(values, lat: LateralGrid, z, rho, cutoff: Cutoff,
                          mode="spectral", wrap=True, check=True):
    """Pushed-forward Laplacian L_rho applied to one time level.

    ``values`` is (*lat.shape, nz+1) over vertical nodes ``z`` (uniform),
    ``rho`` is (*lat.shape).  Expanded coefficient form:

        L u = sum_k d_k^2 u  -  2 sum_k (c_k/g) d_k D u
              + (1 + sum_k c_k^2) / g^2 * D^2 u  +  beta * D u

    with g = 1 + c_N, D the vertical derivative, and beta collecting the
    curvature of the shear (needs chi'').  ``mode='fd'`` switches the
    lateral stencils to finite differences; ``wrap=False`` then treats
    ``values`` as a bounded smooth patch (rho always wraps).
    """
    if check:
        require_admissible(rho, cutoff.lambda0)
    z = np.asarray(z, dtype=float)
    hz = z[1] - z[0]
    side = _Lateral(lat, mode)
    d = lat.ndim
    chi, chi1, chi2 = cutoff.profile(z)
    rho_c = rho[..., None]
    gamma = 1.0 + chi1 * rho_c
    dgamma = chi2 * rho_c

    du = dz1(values, hz)
    d2u = dz2(values, hz)
    out = (1.0 / gamma ** 2) * d2u
    beta = -dgamma / gamma ** 3

    for i in range(d):
        gi = side.interface(rho, i)[..., None]
        gii = side.interface(rho, i, order=2)[..., None]
        ci = chi * gi
        q = ci / gamma
        out = out + side.bulk(values, i, order=2, wrap=wrap)
        out = out - 2.0 * q * side.bulk(du, i, wrap=wrap)
        out = out + q * q * d2u
        # beta terms: -d_i(c_i/g) + (c_i/g) D(c_i/g)
        di_gamma = chi1 * gi
        di_ci = chi * gii
        beta = beta - (di_ci / gamma - ci * di_gamma / gamma ** 2)
        dz_ci = chi1 * gi
        beta = beta + q * (dz_ci / gamma - ci * dgamma / gamma ** 2)
    return out + beta * du


# ---------------------------------------------------------------------------
# interface coefficients of the conormal flux combination


def conormal_coefficients_from_grad(rho_grad):
    """Closed forms S = 1 + |grad rho|^2 and S_i = -d_i rho."""
    s = 1.0
    si = []
    for g in rho_grad:
        g = np.asarray(g, dtype=float)
        s = s + g * g
        si.append(-g)
    return s, si


def conormal_coefficients(lat: LateralGrid, rho, mode="spectral"):
    """S and S_i on the lateral lattice from one interface level."""
    side = _Lateral(lat, mode)
    grads = [side.interface(rho, i) for i in range(lat.ndim)]
    return conormal_coefficients_from_grad(grads)


def conormal_combo(u_lambda, u_omega, s, si):
    """S u_lambda + sum_i S_i u_omega_i; reduces to u_lambda when rho = 0.

    This combination times a/(m sqrt(S)) is the one-sided normal flux on
    the moving interface expressed in flattened coordinates.
    """
    out = s * u_lambda
    for w, coef in zip(u_omega, si):
        out = out + coef * w
    return out
