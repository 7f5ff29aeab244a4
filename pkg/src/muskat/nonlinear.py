"""Nonlinear free-boundary solve on the flattened strip.

The moving-interface problem is reduced to a fixed point in the correction
triple psi = (v+, v-, delta) around a frame built once per horizon: an
interface ramp sigma carrying the correct initial velocity and shutting
off smoothly before the final time, the stationary bulk fields extended
across the interface, and the shift coefficients b that trade vertical
recomposition for an algebraic term.  The frame is chosen so that the
extended fields composed with the sigma map reproduce the stationary
state on each slab exactly; composition therefore never enters the hot
path and the compatibility conditions at t = 0 hold to rounding.

Each outer step measures how far the reconstructed fields miss the
transformed equations, hands the defect groups to the linear conjugation
solver and replaces psi by the returned corrections.  Residual assembly
and the linear solver share one set of stencils, so the fixed point
satisfies the discrete transformed system to iteration tolerance rather
than to consistency order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .elliptic import PhaseField, solve_semilinear_stationary
from .geometry import (DomainSpec, conormal_coefficients_from_grad,
                       conormal_combo, laplace_flat, require_admissible,
                       transformed_laplacian, vertical_map_inverse)
from .grids import StripGrid, VerticalSpline, end_derivative
from .holder import GridFunction, e_norm, p_norm, psi_norm
from .linearized import (ContractionFailure, LinearProblemData,
                         solve_linear_problem)
from .model_kernel import _phi12, _time_derivative_uniform

__all__ = [
    "CollarBudgetError",
    "TwoPhaseProblem",
    "InitialFrame",
    "IterateState",
    "ResidualSet",
    "NonlinearSolution",
    "iterate_norm",
    "build_initial_frame",
    "compute_residuals",
    "nonlinear_step",
    "reconstruct",
    "solve_nonlinear",
    "verify_solution",
]

_SIDES = ("plus", "minus")


class CollarBudgetError(ValueError):
    """The interface ramp does not fit its share of the collar."""


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class TwoPhaseProblem:
    """Data of the two-phase problem with nonlinear bulk sources.

    ``f_plus/f_minus`` and their derivatives act pointwise on field
    values; both phases carry positive mobilities ``a`` and share the
    factor ``m`` scaling the interface velocity.  Wall data ``g`` may be
    scalars or arrays broadcastable to (nt, *lateral); the slice at
    t = 0 fixes the stationary initial state, so any time variation of
    g acts as wall forcing of the evolution.  ``eps`` is the interface
    regularization used during the solve and ``nu`` the ellipticity and
    nondegeneracy floor.
    """

    grid: StripGrid
    domain: DomainSpec
    a_plus: float
    a_minus: float
    f_plus: object
    f_minus: object
    fprime_plus: object
    fprime_minus: object
    g_plus: object = 0.0
    g_minus: object = 0.0
    m: float = 1.0
    eps: float = 0.02
    nu: float = 1e-8

    def __post_init__(self):
        if not (self.a_plus > 0 and self.a_minus > 0 and self.m > 0):
            raise ValueError("mobilities a and the factor m must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.grid.nt < 3:
            raise ValueError("the evolution needs at least three time levels")
        if self.domain.dim - 1 != self.grid.lat.ndim:
            raise ValueError(
                "domain dimension does not match the lateral grid")
        if abs(self.domain.period - self.grid.lat.period) \
                > 1e-12 * self.domain.period:
            raise ValueError("domain and grid lateral periods disagree")
        for name in ("f_plus", "f_minus", "fprime_plus", "fprime_minus"):
            if not callable(getattr(self, name)):
                raise ValueError(f"{name} must be callable on field values")

    @property
    def abar_plus(self):
        return self.a_plus / self.m

    @property
    def abar_minus(self):
        return self.a_minus / self.m

    def wall(self, side):
        """Outer Dirichlet data as an (nt, *lateral) view."""
        g = self.g_plus if side == "plus" else self.g_minus
        arr = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"g_{side} must be finite")
        shape = self.grid.interface_shape()
        try:
            return np.broadcast_to(arr, shape)
        except ValueError:
            raise ValueError(
                f"g_{side} is not broadcastable to {shape}") from None


# ---------------------------------------------------------------------------
# frame around which the outer iteration linearizes


@dataclass(frozen=True)
class InitialFrame:
    """Frozen data of one linearization frame.

    ``sigma`` is the prescribed interface ramp with sigma(., 0) = 0 and
    initial velocity ``rho1``; ``w_plus/w_minus`` hold the stationary
    fields continued across the interface on the full vertical axis.
    By construction the continued fields composed with the sigma map
    restrict to the stationary state on each slab, exactly and for
    every time level, so the frame contributes no composition error.
    ``b_num`` over (1 + chi' sigma) is the shift coefficient that pairs
    an interface correction with the bulk fields; ``A`` is the jump of
    its interface traces and ``h`` the frozen lateral drift.
    """

    problem: TwoPhaseProblem
    grid: StripGrid
    u0: PhaseField
    rho1: np.ndarray
    sigma: np.ndarray
    sigma_t: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    b_num_plus: np.ndarray
    b_num_minus: np.ndarray
    A: np.ndarray
    h_plus: tuple
    h_minus: tuple
    g_plus: np.ndarray
    g_minus: np.ndarray
    spline_plus: VerticalSpline
    spline_minus: VerticalSpline
    log: dict

    @property
    def cutoff(self):
        return self.problem.domain.cutoff

    @property
    def W_plus(self):
        """w_plus composed with the sigma map on the plus slab."""
        return self.u0.plus[0]

    @property
    def W_minus(self):
        return self.u0.minus[0]

    def W(self, side):
        return self.W_plus if side == "plus" else self.W_minus

    @cached_property
    def blin_plus(self):
        return np.asarray(self.problem.fprime_plus(self.W_plus), dtype=float)

    @cached_property
    def blin_minus(self):
        return np.asarray(self.problem.fprime_minus(self.W_minus),
                          dtype=float)

    @cached_property
    def _chi1(self):
        return {"plus": self.cutoff.profile(self.grid.z_plus)[1],
                "minus": self.cutoff.profile(self.grid.z_minus)[1]}

    def b_slab(self, side, sl=slice(None)):
        """Shift coefficient on the time levels ``sl``."""
        num = self.b_num_plus if side == "plus" else self.b_num_minus
        return num / (1.0 + self._chi1[side] * self.sigma[sl][..., None])

    def b_field(self, side):
        """Shift coefficient materialized on all levels."""
        return self.b_slab(side)

    def compose(self, side, rho_levels, sigma_levels, deriv=0):
        """The continued field composed with the rho map on one slab.

        Slab nodes are pushed forward with rho, pulled back with sigma
        and the extension spline is queried there; with rho = sigma
        this returns the slab restriction of the stationary state.
        """
        cut = self.cutoff
        grid = self.grid
        z = grid.z_plus if side == "plus" else grid.z_minus
        rho_levels = np.asarray(rho_levels, dtype=float)
        sig = np.asarray(sigma_levels, dtype=float)
        chi = cut.profile(z)[0]
        y = z + chi * rho_levels[..., None]
        mu = vertical_map_inverse(cut, y, sig[..., None], check=False)
        spline = self.spline_plus if side == "plus" else self.spline_minus
        vert = mu.ndim - 1 - grid.lat.ndim
        pts = np.moveaxis(mu, -1, vert)
        return np.moveaxis(spline(pts, deriv), vert, -1)

    def w_of_t(self, side, level):
        """The continued field at one time level on the full vertical axis."""
        mu = vertical_map_inverse(self.cutoff, self.grid.z_full,
                                  self.sigma[level][..., None], check=False)
        spline = self.spline_plus if side == "plus" else self.spline_minus
        return np.moveaxis(spline(np.moveaxis(mu, -1, 0)), 0, -1)


@dataclass(frozen=True)
class IterateState:
    """One outer iterate: bulk corrections and the interface correction."""

    v: PhaseField
    delta: np.ndarray
    norm: float

    @property
    def v_plus(self):
        return self.v.plus

    @property
    def v_minus(self):
        return self.v.minus

    @classmethod
    def zero(cls, grid):
        bulk = np.zeros(grid.bulk_shape())
        return cls(v=PhaseField(grid, bulk, bulk.copy(), role="v"),
                   delta=np.zeros(grid.interface_shape()), norm=0.0)


@dataclass(frozen=True)
class ResidualSet:
    """Defect groups of one iterate against the transformed system.

    Bulk defects enter the linear problem as -f1, kinematic defects as
    f3, the trace mismatch as f2 and the wall mismatch as f4.  The
    parts quadratic in psi are materialized only in split mode (the
    expansions terminate, so the split is exact, not asymptotic);
    linear parts are their complements.  Every group has its t = 0
    slice removed: the slice is iterate independent and measures the
    stationary state with stencils the stationary solver never imposed
    nodewise.  The removed sup norms are kept in ``static_defect``.
    """

    grid: StripGrid
    eps: float
    bulk_total_plus: np.ndarray
    bulk_total_minus: np.ndarray
    jump: np.ndarray
    kin_total_plus: np.ndarray
    kin_total_minus: np.ndarray
    wall_plus: np.ndarray
    wall_minus: np.ndarray
    bulk_quad_plus: np.ndarray = None
    bulk_quad_minus: np.ndarray = None
    kin_quad_plus: np.ndarray = None
    kin_quad_minus: np.ndarray = None
    static_defect: dict = None

    @staticmethod
    def _lin(total, quad):
        return None if quad is None else total - quad

    @property
    def bulk_linear_plus(self):
        return self._lin(self.bulk_total_plus, self.bulk_quad_plus)

    @property
    def bulk_linear_minus(self):
        return self._lin(self.bulk_total_minus, self.bulk_quad_minus)

    @property
    def kin_linear_plus(self):
        return self._lin(self.kin_total_plus, self.kin_quad_plus)

    @property
    def kin_linear_minus(self):
        return self._lin(self.kin_total_minus, self.kin_quad_minus)


@dataclass(frozen=True)
class NonlinearSolution:
    """Reconstructed solution with its frame, final iterate and report."""

    u: PhaseField
    rho: np.ndarray
    psi: IterateState
    frame: InitialFrame
    report: dict


# ---------------------------------------------------------------------------
# frame construction


def _quintic_drop(s):
    """C2 falloff from 1 at s <= 0 to 0 at s >= 1 with flat ends."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _quintic_drop_deriv(s):
    s = np.clip(s, 0.0, 1.0)
    return -30.0 * s * s * (1.0 - s) ** 2


def _ramp(times, horizon):
    """Ramp factor s(t) = t eta(t), its derivative and a sup bound.

    eta is one on [0, T/2] and drops to zero at T with two vanishing
    derivatives, so sigma starts with the exact initial velocity and
    shuts off inside the horizon.  The factor itself is the trapezoid
    integral of the analytic derivative: the interface march integrates
    its loads the same way, so the pair (sigma, sigma_t) is consistent
    at the scheme's own order and the prescribed ramp injects no
    interpolation defect into the kinematic balance.
    """
    half = 0.5 * horizon
    tau = (times - half) / half
    s_t = _quintic_drop(tau) + times * _quintic_drop_deriv(tau) / half
    s = np.concatenate([[0.0], np.cumsum(
        0.5 * (s_t[1:] + s_t[:-1]) * np.diff(times))])
    dense = np.linspace(0.0, horizon, 513)
    s_sup = max(float(np.max(dense * _quintic_drop((dense - half) / half))),
                float(np.abs(s).max()))
    return s, s_t, s_sup


def _ghost_flux(u0, problem):
    """One-sided interface slopes corrected by half a bulk equation.

    Shifting each one-sided difference by h/2 times the equation is
    exactly how the stationary solver's ghost elimination defines its
    flux balance, so a+ dn+ matches a- dn- at solver tolerance instead
    of stencil accuracy.
    """
    grid = u0.grid
    lat = grid.lat
    h = grid.hz
    up = u0.plus[0]
    um = u0.minus[0]
    fp = np.asarray(problem.f_plus(up[..., 0]), dtype=float)
    fm = np.asarray(problem.f_minus(um[..., -1]), dtype=float)
    dn_p = (up[..., 1] - up[..., 0]) / h \
        - 0.5 * h * (fp - lat.laplacian(up[..., 0]))
    dn_m = (um[..., -1] - um[..., -2]) / h \
        + 0.5 * h * (fm - lat.laplacian(um[..., -1]))
    return dn_p, dn_m


def iterate_norm(v_plus, v_minus, delta, grid, alpha=0.5):
    """Norm estimate of a correction triple on the strip lattice."""
    lat = grid.lat
    hb = lat.spacing + (grid.hz,)
    per = (True,) * lat.ndim + (False,)
    ev_p = e_norm(GridFunction(v_plus, h=hb, tau=grid.dt, periodic=per),
                  2, alpha)
    ev_m = e_norm(GridFunction(v_minus, h=hb, tau=grid.dt, periodic=per),
                  2, alpha)
    pd = p_norm(GridFunction(delta, h=lat.spacing, tau=grid.dt,
                             periodic=(True,) * lat.ndim), alpha, k=2)
    return float(psi_norm(ev_p, ev_m, pd))


def build_initial_frame(problem, u0=None, *, grid=None):
    """Stationary state, interface ramp and shift coefficients.

    Raises CollarBudgetError when the ramp cannot stay inside its half
    of the collar budget over the requested horizon, and ValueError
    when the initial state is degenerate (an interface slope or the
    slope jump under nu) or its one-sided interface velocities
    disagree.
    """
    grid = problem.grid if grid is None else grid
    lat = grid.lat
    nz = grid.nz
    cut = problem.domain.cutoff

    g_plus = problem.wall("plus")[:grid.nt]
    g_minus = problem.wall("minus")[:grid.nt]

    if u0 is None:
        u0 = solve_semilinear_stationary(
            grid, problem.a_plus, problem.a_minus, problem.f_plus,
            problem.f_minus, problem.fprime_plus, problem.fprime_minus,
            np.asarray(g_plus[0]), np.asarray(g_minus[0]), nu=problem.nu,
            nondegeneracy_policy="ignore")

    dn_p, dn_m = _ghost_flux(u0, problem)
    margins = {"slope_plus": float(dn_p.min()),
               "slope_minus": float(dn_m.min()),
               "slope_jump": float((dn_p - dn_m).min())}
    if min(margins.values()) < problem.nu:
        detail = ", ".join(f"{k}={v:.3e}" for k, v in margins.items())
        raise ValueError(
            "problem degenerate: an interface slope or the slope jump "
            f"falls under nu = {problem.nu:.3g} ({detail})")

    vel_p = -problem.abar_plus * dn_p
    vel_m = -problem.abar_minus * dn_m
    gap = float(np.abs(vel_p - vel_m).max())
    scale = 1.0 + float(np.abs(vel_p).max())
    if gap > 1e-8 * scale:
        raise ValueError(
            "one-sided interface velocities disagree "
            f"({gap:.3e} against the gate {1e-8 * scale:.3e}); the "
            "initial state does not balance its interface fluxes")
    rho1 = vel_p

    s, s_t, s_sup = _ramp(grid.times, grid.horizon)
    budget = problem.domain.lambda0 / 8.0
    used = float(np.abs(rho1).max()) * s_sup
    if used > budget + 1e-15:
        hint = grid.horizon * budget / used
        raise CollarBudgetError(
            f"interface ramp needs {used:.3e} of the collar but only "
            f"{budget:.3e} is reserved for it; shorten the horizon "
            f"(roughly T <= {hint:.3e})")
    tshape = (grid.nt,) + (1,) * lat.ndim
    sigma = rho1[None] * s.reshape(tshape)
    sigma_t = rho1[None] * s_t.reshape(tshape)

    # quadratic continuation of each phase across the interface, damped
    # by the collar profile so the continuation is constant beyond it
    h = grid.hz
    up = u0.plus[0]
    um = u0.minus[0]
    trace = up[..., 0]  # equals um[..., -1]: one shared trace unknown
    c2_p = (2.0 * up[..., 0] - 5.0 * up[..., 1] + 4.0 * up[..., 2]
            - up[..., 3]) / (h * h)
    c2_m = (2.0 * um[..., -1] - 5.0 * um[..., -2] + 4.0 * um[..., -3]
            - um[..., -4]) / (h * h)
    zf = grid.z_full
    chi_f = cut.profile(zf)[0]
    w_plus = np.empty(lat.shape + (zf.size,))
    w_plus[..., nz:] = up
    zneg = zf[:nz]
    w_plus[..., :nz] = trace[..., None] + chi_f[:nz] * (
        dn_p[..., None] * zneg + 0.5 * c2_p[..., None] * zneg * zneg)
    w_minus = np.empty(lat.shape + (zf.size,))
    w_minus[..., :nz + 1] = um
    zpos = zf[nz + 1:]
    w_minus[..., nz + 1:] = trace[..., None] + chi_f[nz + 1:] * (
        dn_m[..., None] * zpos + 0.5 * c2_m[..., None] * zpos * zpos)

    spline_plus = VerticalSpline(zf, np.moveaxis(w_plus, -1, 0))
    spline_minus = VerticalSpline(zf, np.moveaxis(w_minus, -1, 0))

    # b from the spline derivative, not the end stencil: b must be the
    # exact first-order coefficient of the recomposition it linearizes
    def slab_slope(spline, z):
        pts = np.broadcast_to(z.reshape((z.size,) + (1,) * lat.ndim),
                              (z.size,) + lat.shape)
        return np.moveaxis(spline(pts, deriv=1), 0, -1)

    b_num_plus = cut.profile(grid.z_plus)[0] \
        * slab_slope(spline_plus, grid.z_plus)
    b_num_minus = cut.profile(grid.z_minus)[0] \
        * slab_slope(spline_minus, grid.z_minus)
    A = b_num_plus[..., 0] - b_num_minus[..., -1]
    if float(A.min()) < problem.nu:
        raise ValueError(
            "problem degenerate: the interpolated slope jump "
            f"{float(A.min()):.3e} falls under nu = {problem.nu:.3g}")

    tgrad = [lat.deriv(trace, i) for i in range(lat.ndim)]
    h_plus = tuple(-problem.abar_plus * g for g in tgrad)
    h_minus = tuple(-problem.abar_minus * g for g in tgrad)

    log = {
        "rho1_gap": gap,
        "margins": margins,
        "collar": {"budget": budget, "used": used,
                   "sup_sigma": float(np.abs(sigma).max())},
        "A_min": float(A.min()),
        "stationary": dict(u0.log) if u0.log else None,
    }
    return InitialFrame(
        problem=problem, grid=grid, u0=u0, rho1=rho1, sigma=sigma,
        sigma_t=sigma_t, w_plus=w_plus, w_minus=w_minus,
        b_num_plus=b_num_plus, b_num_minus=b_num_minus, A=A,
        h_plus=h_plus, h_minus=h_minus, g_plus=g_plus, g_minus=g_minus,
        spline_plus=spline_plus, spline_minus=spline_minus, log=log)


# ---------------------------------------------------------------------------
# residual assembly


def compute_residuals(psi, frame, *, eps=None, split=True, chunk=8):
    """Defects of the reconstructed fields against the transformed system.

    The totals are always assembled directly from the reconstruction
    u = v + W + b delta, so the split parts can be cross-checked
    against them; ``chunk`` bounds how many time levels share one
    coefficient evaluation.
    """
    problem = frame.problem
    grid = frame.grid
    lat = grid.lat
    nt, hz = grid.nt, grid.hz
    cut = frame.cutoff
    eps = problem.eps if eps is None else float(eps)

    v = {"plus": psi.v.plus, "minus": psi.v.minus}
    delta = np.asarray(psi.delta, dtype=float)
    if v["plus"].shape != grid.bulk_shape() \
            or delta.shape != grid.interface_shape():
        raise ValueError("iterate does not live on the frame grid")
    for name, arr in (("v_plus", v["plus"]), ("v_minus", v["minus"]),
                      ("delta", delta)):
        scale = 1.0 + float(np.abs(arr).max())
        if float(np.abs(arr[0]).max()) > 1e-12 * scale:
            raise ValueError(f"{name} must vanish at t = 0 (dotted class)")

    rho = frame.sigma + delta
    require_admissible(rho, problem.domain.lambda0, "sigma + delta")

    W = {s: frame.W(s) for s in _SIDES}
    fprW = {"plus": frame.blin_plus, "minus": frame.blin_minus}
    ffun = {"plus": problem.f_plus, "minus": problem.f_minus}
    zax = {"plus": grid.z_plus, "minus": grid.z_minus}
    endsel = {"plus": "lower", "minus": "upper"}
    gsel = {"plus": 0, "minus": -1}
    abar = {"plus": problem.abar_plus, "minus": problem.abar_minus}
    hdrift = {"plus": frame.h_plus, "minus": frame.h_minus}

    tot = {s: np.empty(grid.bulk_shape()) for s in _SIDES}
    quad = {s: np.empty(grid.bulk_shape()) for s in _SIDES} if split \
        else {s: None for s in _SIDES}
    ulam = {s: np.empty(grid.interface_shape()) for s in _SIDES}
    utr = {s: np.empty(grid.interface_shape()) for s in _SIDES}
    l0v = {s: laplace_flat(v[s], lat, hz) for s in _SIDES}

    for j0 in range(0, nt, chunk):
        sl = slice(j0, min(nt, j0 + chunk))
        rho_sl = rho[sl]
        sig_sl = frame.sigma[sl]
        d_sl = delta[sl][..., None]
        for s in _SIDES:
            b_sl = frame.b_slab(s, sl)
            u_sl = v[s][sl] + W[s] + b_sl * d_sl
            lu = transformed_laplacian(u_sl, lat, zax[s], rho_sl, cut,
                                       check=False)
            tot[s][sl] = (l0v[s][sl] - lu
                          + np.asarray(ffun[s](u_sl), dtype=float)
                          - fprW[s] * v[s][sl])
            ulam[s][sl] = end_derivative(u_sl, hz, endsel[s])
            utr[s][sl] = u_sl[..., gsel[s]]
            if split:
                dq = frame.compose(s, rho_sl, sig_sl) - W[s] - b_sl * d_sl
                quad[s][sl] = (
                    transformed_laplacian(dq, lat, zax[s], rho_sl, cut,
                                          check=False)
                    - transformed_laplacian(v[s][sl], lat, zax[s], rho_sl,
                                            cut, check=False)
                    + transformed_laplacian(v[s][sl], lat, zax[s], sig_sl,
                                            cut, check=False))

    sgrad = lat.grad(frame.sigma)
    dgrad = lat.grad(delta)
    s_rho, si_rho = conormal_coefficients_from_grad(
        [a + b for a, b in zip(sgrad, dgrad)])
    lap_sigma = lat.laplacian(frame.sigma)

    kin = {}
    kinq = {}
    for s in _SIDES:
        uom = [lat.deriv(utr[s], i) for i in range(lat.ndim)]
        gfull = abar[s] * conormal_combo(ulam[s], uom, s_rho, si_rho)
        drift = 0.0
        for i in range(lat.ndim):
            drift = drift + hdrift[s][i] * dgrad[i]
        kin[s] = (-frame.sigma_t + eps * lap_sigma
                  + abar[s] * end_derivative(v[s], hz, endsel[s])
                  + drift - gfull)
        if split:
            # exact order split of the conormal combination: with the
            # frame part W removed from the linear slope/trace factors,
            # what is left is quadratic and cubic in psi, nothing else
            wlam = end_derivative(W[s], hz, endsel[s])
            wom = [lat.deriv(W[s][..., gsel[s]], i)
                   for i in range(lat.ndim)]
            pp = ulam[s] - wlam
            s1 = 0.0
            s2 = 0.0
            for a, b in zip(sgrad, dgrad):
                s1 = s1 + 2.0 * a * b
                s2 = s2 + b * b
            acc = s1 * pp + s2 * (wlam + pp)
            for b, uo, wo in zip(dgrad, uom, wom):
                acc = acc - b * (uo - wo)
            kinq[s] = -abar[s] * acc
        else:
            kinq[s] = None

    jump = np.broadcast_to(-(W["plus"][..., 0] - W["minus"][..., -1]),
                           grid.interface_shape()).copy()
    wall = {"plus": frame.g_plus - W["plus"][..., -1],
            "minus": frame.g_minus - W["minus"][..., 0]}

    static = {}

    def strip(name, arr):
        base = arr[0].copy()
        arr -= base[None]
        static[name] = float(np.abs(base).max())

    for s in _SIDES:
        strip(f"bulk_{s}", tot[s])
        strip(f"kin_{s}", kin[s])
        strip(f"wall_{s}", wall[s])
        if split:
            strip(f"bulk_quad_{s}", quad[s])
            strip(f"kin_quad_{s}", kinq[s])
    strip("jump", jump)

    return ResidualSet(
        grid=grid, eps=eps,
        bulk_total_plus=tot["plus"], bulk_total_minus=tot["minus"],
        jump=jump,
        kin_total_plus=kin["plus"], kin_total_minus=kin["minus"],
        wall_plus=wall["plus"], wall_minus=wall["minus"],
        bulk_quad_plus=quad["plus"], bulk_quad_minus=quad["minus"],
        kin_quad_plus=kinq["plus"], kin_quad_minus=kinq["minus"],
        static_defect=static)


# ---------------------------------------------------------------------------
# outer iteration


def nonlinear_step(psi, frame, *, eps=None, alpha=0.5, inner_tol=1e-10,
                   inner_max_iter=40, kappa_margin=0.9,
                   inner_max_halvings=6, chunk=8):
    """One application of the outer map: defects in, corrections out.

    Raises ContractionFailure when the inner linear solve does not
    contract on any admissible window; the caller decides whether to
    shorten the horizon.
    """
    problem = frame.problem
    eps = problem.eps if eps is None else float(eps)
    if float(frame.A.min()) < problem.nu:
        raise ValueError(
            "nondegeneracy lost: the interface coupling fell under nu")
    res = compute_residuals(psi, frame, eps=eps, split=False, chunk=chunk)
    data = LinearProblemData(
        frame.grid, problem.abar_plus, problem.abar_minus, eps,
        b_plus=frame.blin_plus, b_minus=frame.blin_minus, A=frame.A,
        h_plus=frame.h_plus, h_minus=frame.h_minus,
        f1_plus=np.negative(res.bulk_total_plus),
        f1_minus=np.negative(res.bulk_total_minus),
        f2=res.jump, f3_plus=res.kin_total_plus,
        f3_minus=res.kin_total_minus, f4_plus=res.wall_plus,
        f4_minus=res.wall_minus, nu=problem.nu)
    static = dict(res.static_defect)
    res = None
    v, delta, ledger = solve_linear_problem(
        data, alpha=alpha, tol=inner_tol, max_iter=inner_max_iter,
        kappa_margin=kappa_margin, max_halvings=inner_max_halvings)
    out = IterateState(v=v, delta=delta,
                       norm=iterate_norm(v.plus, v.minus, delta,
                                         frame.grid, alpha))
    return out, {"eps": eps, "norm": out.norm, "static_defect": static,
                 "inner": ledger.as_dict()}


def reconstruct(psi, frame, *, chunk=16):
    """Solution fields of an iterate: u = v + W + b delta, rho = sigma
    + delta."""
    grid = frame.grid
    out = {s: np.empty(grid.bulk_shape()) for s in _SIDES}
    vv = {"plus": psi.v.plus, "minus": psi.v.minus}
    for j0 in range(0, grid.nt, chunk):
        sl = slice(j0, min(grid.nt, j0 + chunk))
        d_sl = psi.delta[sl][..., None]
        for s in _SIDES:
            out[s][sl] = vv[s][sl] + frame.W(s) + frame.b_slab(s, sl) * d_sl
    u = PhaseField(grid, out["plus"], out["minus"], role="u")
    return u, frame.sigma + psi.delta


def _outer_stage(frame, start, *, eps, alpha, tol, max_outer, kappa_max,
                 inner_tol, inner_max_iter, inner_max_halvings, chunk):
    """Outer fixed-point iteration at one regularization level.

    Returns (psi, log); log["ok"] is False when the stage needs a
    shorter horizon (divergence, collar exhaustion or an inner
    failure).
    """
    grid = frame.grid
    lam4 = frame.problem.domain.lambda0 / 4.0
    psi = start
    diffs, ratios, steps, ball = [], [], [], []
    radius = None
    ok = True
    converged = False
    reason = None
    for n in range(max_outer):
        try:
            nxt, slog = nonlinear_step(
                psi, frame, eps=eps, alpha=alpha, inner_tol=inner_tol,
                inner_max_iter=inner_max_iter, kappa_margin=kappa_max,
                inner_max_halvings=inner_max_halvings, chunk=chunk)
        except ContractionFailure as exc:
            ok = False
            reason = f"inner solve: {exc}"
            break
        steps.append(slog)
        diff = iterate_norm(nxt.v.plus - psi.v.plus,
                            nxt.v.minus - psi.v.minus,
                            nxt.delta - psi.delta, grid, alpha)
        diffs.append(diff)
        if radius is None:
            radius = 2.0 * nxt.norm
        if nxt.norm > radius:
            ball.append(n)
        sup_rho = float(np.abs(frame.sigma + nxt.delta).max())
        psi = nxt
        scale = 1.0 + nxt.norm
        if sup_rho > lam4:
            ok = False
            reason = "collar exhausted by the interface correction"
            break
        if diff <= tol * scale:
            converged = True
            break
        if len(diffs) >= 2 and diffs[-2] > 0.0:
            ratio = diffs[-1] / diffs[-2]
            ratios.append(float(ratio))
            if ratio >= kappa_max and diff > 10.0 * tol * scale:
                ok = False
                reason = f"outer map does not contract (ratio {ratio:.3f})"
                break
    if not converged and ok:
        ok = False
        reason = reason or "outer iteration budget exhausted"
    log = {"eps": eps, "ok": ok, "converged": converged, "reason": reason,
           "radius": radius, "diffs": diffs, "ratios": ratios,
           "ball_exits": ball, "kappa": max(ratios) if ratios else None,
           "iterations": len(diffs), "steps": steps}
    return psi, log


def _halve(grid, attempts):
    nt = grid.nt
    if (nt - 1) % 2 or (nt - 1) // 2 + 1 < 5:
        raise ContractionFailure(
            "cannot halve the horizon further on this time lattice",
            {"attempts": attempts})
    return StripGrid(grid.lat, grid.nz, (nt - 1) // 2 + 1,
                     0.5 * grid.horizon)


def solve_nonlinear(problem, *, alpha=0.5, tol=1e-8, max_outer=20,
                    kappa_max=0.9, max_halvings=3, continue_to_zero=True,
                    verify=True, inner_tol=1e-10, inner_max_iter=40,
                    inner_max_halvings=6, chunk=8):
    """Fixed-point solve of the nonlinear problem with horizon control.

    The stationary state is solved once; each attempt builds the frame
    on the current horizon and iterates from rest.  When a stage fails
    the horizon is halved on the same time lattice (even interval
    counts permitting) and everything except the stationary state is
    rebuilt.  With ``continue_to_zero`` the converged regularized
    iterate seeds one more stage at eps = 0, so the reported solution
    satisfies the unregularized interface law; failure of that stage
    is a failure of the solve, not a fallback.
    """
    u0 = solve_semilinear_stationary(
        problem.grid, problem.a_plus, problem.a_minus, problem.f_plus,
        problem.f_minus, problem.fprime_plus, problem.fprime_minus,
        np.asarray(problem.wall("plus")[0]),
        np.asarray(problem.wall("minus")[0]),
        nu=problem.nu, nondegeneracy_policy="ignore")

    grid = problem.grid
    attempts = []
    frame = None
    psi = None
    stage = None
    for attempt in range(max_halvings + 1):
        entry = {"horizon": grid.horizon, "levels": grid.nt}
        try:
            frame = build_initial_frame(problem, u0=u0, grid=grid)
        except CollarBudgetError as exc:
            entry["frame_error"] = str(exc)
            attempts.append(entry)
            if attempt == max_halvings:
                raise ContractionFailure(
                    "no admissible frame at the horizon floor "
                    f"T/2^{max_halvings}", {"attempts": attempts})
            grid = _halve(grid, attempts)
            continue
        psi, stage = _outer_stage(
            frame, IterateState.zero(grid), eps=problem.eps, alpha=alpha,
            tol=tol, max_outer=max_outer, kappa_max=kappa_max,
            inner_tol=inner_tol, inner_max_iter=inner_max_iter,
            inner_max_halvings=inner_max_halvings, chunk=chunk)
        entry["stage"] = stage
        attempts.append(entry)
        if stage["ok"]:
            break
        if attempt == max_halvings:
            raise ContractionFailure(
                f"no contraction at the horizon floor T/2^{max_halvings}",
                {"attempts": attempts})
        grid = _halve(grid, attempts)

    eps_final = problem.eps
    continuation = None
    if continue_to_zero and problem.eps > 0.0:
        psi, continuation = _outer_stage(
            frame, psi, eps=0.0, alpha=alpha, tol=tol, max_outer=max_outer,
            kappa_max=kappa_max, inner_tol=inner_tol,
            inner_max_iter=inner_max_iter,
            inner_max_halvings=inner_max_halvings, chunk=chunk)
        if not continuation["ok"]:
            raise ContractionFailure(
                "continuation to eps = 0 failed: "
                f"{continuation['reason']}",
                {"attempts": attempts, "continuation": continuation})
        eps_final = 0.0

    u, rho = reconstruct(psi, frame)
    report = {
        "horizon": frame.grid.horizon,
        "levels": frame.grid.nt,
        "eps": problem.eps,
        "eps_final": eps_final,
        "frame": frame.log,
        "attempts": attempts,
        "radius": stage["radius"],
        "kappa": stage["kappa"],
        "iterations": stage["iterations"],
        "converged": stage["converged"],
        "continuation": continuation,
        "psi_norm": psi.norm,
    }
    if verify:
        report["verify"] = verify_solution(u, rho, frame, eps=eps_final,
                                           chunk=chunk)
    return NonlinearSolution(u=u, rho=rho, psi=psi, frame=frame,
                             report=report)


# ---------------------------------------------------------------------------
# verification


def _step_residual(rho, forcing, lat, eps, dt):
    """Per-step defect of the interface march, in derivative units.

    The march integrates mode-wise with exact exponential weights for
    piecewise-linear forcing; measuring a field against that step
    relation tests the interface law at the scheme's own order.  A
    centered time difference would instead be dominated by the
    interpolation defect of the prescribed ramp, which no time
    integrator was asked to resolve.
    """
    z = (-eps * lat.k2) * dt
    decay = np.exp(z)
    p1, p2 = _phi12(z)
    rh = lat.fft(rho)
    fh = lat.fft(forcing)
    step = decay * rh[:-1] + dt * (p1 * fh[:-1] + p2 * (fh[1:] - fh[:-1]))
    return lat.ifft((rh[1:] - step) / dt)


def verify_solution(u, rho, frame, *, eps=0.0, chunk=8):
    """Measured identities of a reconstructed solution, all in sup norm.

    The bulk equation is evaluated on interior vertical nodes (the
    interface and wall nodes carry their own identities).  The
    kinematic law is measured through the march's own step relation per
    phase; the centered-difference variant is reported alongside as a
    diagnostic (it carries the ramp interpolation defect on top).
    Nothing is gated here; the caller judges the numbers.
    """
    problem = frame.problem
    grid = frame.grid
    lat = grid.lat
    cut = frame.cutoff
    hz = grid.hz
    nt = grid.nt
    rho = np.asarray(rho, dtype=float)

    pde = {}
    fields = {"plus": (u.plus, grid.z_plus, problem.f_plus),
              "minus": (u.minus, grid.z_minus, problem.f_minus)}
    for s, (arr, z, f) in fields.items():
        worst = 0.0
        for j0 in range(0, nt, chunk):
            sl = slice(j0, min(nt, j0 + chunk))
            res = (transformed_laplacian(arr[sl], lat, z, rho[sl], cut,
                                         check=False)
                   - np.asarray(f(arr[sl]), dtype=float))
            worst = max(worst, float(np.abs(res[..., 1:-1]).max()))
        pde[s] = worst

    rho_t = _time_derivative_uniform(rho, grid.dt)
    s_rho, si_rho = conormal_coefficients_from_grad(lat.grad(rho))
    lap_rho = lat.laplacian(rho)
    abar = {"plus": problem.abar_plus, "minus": problem.abar_minus}
    kin = {}
    cen = {}
    combo = {}
    for s in _SIDES:
        arr = u.plus if s == "plus" else u.minus
        which = "lower" if s == "plus" else "upper"
        idx = 0 if s == "plus" else -1
        ul = end_derivative(arr, hz, which)
        uo = [lat.deriv(arr[..., idx], i) for i in range(lat.ndim)]
        combo[s] = abar[s] * conormal_combo(ul, uo, s_rho, si_rho)
        kin[s] = _step_residual(rho, -combo[s], lat, eps, grid.dt)
        cen[s] = rho_t - eps * lap_rho + combo[s]

    sqrt_mid = 0.5 * (np.sqrt(s_rho[1:]) + np.sqrt(s_rho[:-1]))
    return {
        "bulk_pde_plus": pde["plus"],
        "bulk_pde_minus": pde["minus"],
        "trace_continuity": float(np.abs(u.jump()).max()),
        "wall_plus": float(np.abs(u.plus[..., -1] - frame.g_plus).max()),
        "wall_minus": float(np.abs(u.minus[..., 0] - frame.g_minus).max()),
        "kinematic_plus": float(np.abs(kin["plus"]).max()),
        "kinematic_minus": float(np.abs(kin["minus"]).max()),
        "kinematic_centered_plus": float(np.abs(cen["plus"]).max()),
        "kinematic_centered_minus": float(np.abs(cen["minus"]).max()),
        "flux_balance": float(np.abs(combo["plus"] - combo["minus"]).max()),
        "normal_speed_plus": float(np.abs(kin["plus"] / sqrt_mid).max()),
        "normal_speed_minus": float(np.abs(kin["minus"] / sqrt_mid).max()),
        "start_rho": float(np.abs(rho[0]).max()),
        "start_plus": float(np.abs(u.plus[0] - frame.u0.plus[0]).max()),
        "start_minus": float(np.abs(u.minus[0] - frame.u0.minus[0]).max()),
        "rho_sup": float(np.abs(rho).max()),
        "collar_margin": float(problem.domain.lambda0 / 4.0
                               - np.abs(rho).max()),
        "eps": float(eps),
        "margins": dict(frame.log["margins"]),
    }
