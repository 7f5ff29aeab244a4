"""Linear interface problem with the regularizing surface term.

The unknown pair (u, rho) couples a transmission problem in the bulk to
a first-order interface law carrying an eps-weighted lateral Laplacian.
The solver follows the reduction that makes the problem tractable: the
plus-side law drives a parabolic update of rho (exact per-mode Duhamel
integration on the torus), the flux-jump condition absorbs the minus
law, and a Picard iteration alternates transmission solves with
parabolic updates.  The iteration map is affine with Lipschitz factor
shrinking as the horizon does, so when the measured contraction factor
is too close to one the horizon is halved and the solution is extended
window by window.

eps = 0 is a first-class citizen: the update degenerates to exact time
integration and the same machinery runs unchanged, which is what the
vanishing-regularization sweep in the tests exercises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import (
    TransmissionData,
    PhaseField,
    energy_identity,
    normal_derivative,
    solve_transmission,
)
from .grids import LateralGrid, StripGrid, dz2
from .holder import GridFunction, e_norm, p_norm
from .model_kernel import _duhamel_spectral, _time_derivative_uniform

__all__ = [
    "LinearProblemData",
    "IterationLedger",
    "ContractionFailure",
    "advance_rho_parabolic",
    "l_eps_apply",
    "solve_linear_problem",
    "measure_contraction",
    "linear_residuals",
    "linear_estimate_ratio",
    "energy_diagnostic",
]


def _interface_view(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    try:
        return np.broadcast_to(arr, shape)
    except ValueError:
        raise ValueError(f"{name} is not broadcastable to {shape}") from None


@dataclass(frozen=True)
class LinearProblemData:
    """Coefficients and right-hand sides of the linear interface problem.

    Bulk: -lap(u) + b u = f1; jump: u+ - u- + A rho = f2; interface laws:
    rho_t - eps lap'(rho) + a du/dn + sum_i h_i d(rho)/dw_i = f3 per sign;
    outer walls u = f4.  All right-hand sides must vanish at t = 0 (the
    dotted classes); coefficients need not.  h_plus/h_minus carry one
    entry per lateral axis.
    """

    grid: StripGrid
    a_plus: float
    a_minus: float
    eps: float
    b_plus: object = 1.0
    b_minus: object = 1.0
    A: object = 1.0
    h_plus: tuple = None
    h_minus: tuple = None
    f1_plus: object = 0.0
    f1_minus: object = 0.0
    f2: object = 0.0
    f3_plus: object = 0.0
    f3_minus: object = 0.0
    f4_plus: object = 0.0
    f4_minus: object = 0.0
    nu: float = 1e-10
    dotted_tol: float = 1e-8

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.grid.nt < 3:
            raise ValueError("the interface march needs at least three levels")
        side = self.grid.interface_shape()
        bulk = self.grid.bulk_shape()
        lat_nd = self.grid.lat.ndim
        for name in ("h_plus", "h_minus"):
            comps = getattr(self, name)
            if comps is None:
                comps = (0.0,) * lat_nd
            if len(comps) != lat_nd:
                raise ValueError(f"{name} needs one entry per lateral axis")
            object.__setattr__(self, name, tuple(
                _interface_view(c, side, name) for c in comps))
        for name, shape in (("f1_plus", bulk), ("f1_minus", bulk),
                            ("f2", side), ("f3_plus", side),
                            ("f3_minus", side), ("f4_plus", side),
                            ("f4_minus", side)):
            view = _interface_view(getattr(self, name), shape, name)
            object.__setattr__(self, name, view)
            scale = 1.0 + float(np.abs(view).max())
            if float(np.abs(view[0]).max()) > self.dotted_tol * scale:
                raise ValueError(
                    f"{name} must vanish at t = 0 (dotted class)")
        for name, shape in (("b_plus", bulk), ("b_minus", bulk),
                            ("A", side)):
            object.__setattr__(self, name, _interface_view(
                getattr(self, name), shape, name))

    def transmission(self, rho, sl=slice(None), wgrid=None):
        """Transmission data with ``rho`` frozen on the right-hand sides.

        ``sl`` restricts to a window of time levels (``wgrid`` then
        carries the window lattice); the flux-jump drift is h- minus h+.
        """
        grid = wgrid if wgrid is not None else self.grid
        hvec = tuple(np.asarray(hm[sl]) - np.asarray(hp[sl])
                     for hp, hm in zip(self.h_plus, self.h_minus))
        return TransmissionData(
            grid, self.a_plus, self.a_minus,
            b_plus=self.b_plus[sl], b_minus=self.b_minus[sl],
            A=self.A[sl], Hvec=hvec,
            f1_plus=self.f1_plus[sl], f1_minus=self.f1_minus[sl],
            f2=self.f2[sl], f3_plus=self.f3_plus[sl],
            f3_minus=self.f3_minus[sl], f4_plus=self.f4_plus[sl],
            f4_minus=self.f4_minus[sl], rho=rho, nu=self.nu)


# ---------------------------------------------------------------------------
# parabolic interface update


def advance_rho_parabolic(rhs, lat: LateralGrid, eps, dt, *, rho0=None,
                          dotted_tol=1e-8):
    """Integrate rho_t - eps lap'(rho) = rhs on the torus, exactly per mode.

    ``rhs`` is (nt, *lateral) on uniform steps ``dt``; each mode advances
    by the Duhamel formula for the piecewise-linear interpolant of its
    forcing, so eps = 0 degenerates to exact trapezoid time integration.
    Without ``rho0`` the march starts from zero and the forcing must be
    dotted; a window restart passes the inherited state as ``rho0``.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim != lat.ndim + 1 or rhs.shape[1:] != lat.shape:
        raise ValueError("forcing must be shaped (nt, *lateral)")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not dt > 0:
        raise ValueError("time step must be positive")
    nt = rhs.shape[0]
    scale = 1.0 + float(np.abs(rhs).max())
    if rho0 is None and nt > 0 \
            and float(np.abs(rhs[0]).max()) > dotted_tol * scale:
        raise ValueError("forcing must vanish at t = 0 (dotted class)")
    rate = -eps * lat.k2
    rho_h = _duhamel_spectral(lat.fft(rhs), rate, dt)
    if rho0 is not None:
        r0h = lat.fft(np.asarray(rho0, dtype=float))
        decay = np.exp(np.multiply.outer(dt * np.arange(nt), rate))
        rho_h = rho_h + decay * r0h[None]
    return lat.ifft(rho_h)


def _drift_term(h_comps, rho, lat):
    out = 0.0
    for i, comp in enumerate(h_comps):
        comp = np.asarray(comp)
        if float(np.abs(comp).max()) == 0.0:
            continue
        out = out + comp * lat.deriv(rho, i)
    return out


def _sweep(data: LinearProblemData, rho, rho0, sl, wgrid):
    """One application of the iteration map on a window: transmission
    solve with rho frozen, plus-side trace, parabolic update."""
    lat = data.grid.lat
    u = solve_transmission(data.transmission(rho, sl, wgrid), check=False)
    trace = normal_derivative(u, "plus")
    hp = tuple(c[sl] for c in data.h_plus)
    rhs = (data.f3_plus[sl] - data.a_plus * trace
           - _drift_term(hp, rho, lat))
    rho_new = advance_rho_parabolic(np.asarray(rhs), lat, data.eps,
                                    data.grid.dt, rho0=rho0)
    return rho_new, u


def l_eps_apply(rho_in, data: LinearProblemData):
    """The iteration map on the full horizon, started from rest."""
    rho_in = np.asarray(rho_in, dtype=float)
    if rho_in.shape != data.grid.interface_shape():
        raise ValueError("rho_in must be an interface field (nt, *lateral)")
    scale = 1.0 + float(np.abs(rho_in).max())
    if float(np.abs(rho_in[0]).max()) > data.dotted_tol * scale:
        raise ValueError("rho_in must vanish at t = 0 (dotted class)")
    rho0 = np.zeros(data.grid.lat.shape)
    rho_out, _ = _sweep(data, rho_in, rho0, slice(None), None)
    return rho_out


# ---------------------------------------------------------------------------
# Picard iteration with horizon control


@dataclass
class IterationLedger:
    """Bookkeeping of the fixed-point solve, JSON-ready via as_dict."""

    alpha: float
    tol: float
    horizons: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    contraction_factor: float = None
    estimate_ratio: dict = None
    residuals: dict = None
    converged: bool = False

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "tol": self.tol,
            "horizons": list(self.horizons),
            "windows": [dict(w) for w in self.windows],
            "contraction_factor": self.contraction_factor,
            "estimate_ratio": dict(self.estimate_ratio)
            if self.estimate_ratio else None,
            "residuals": dict(self.residuals) if self.residuals else None,
            "converged": self.converged,
        }


class ContractionFailure(RuntimeError):
    """Raised when no horizon down to the floor yields a contraction."""

    def __init__(self, message, ledger):
        super().__init__(message)
        self.ledger = ledger


def _p_estimate(values, grid, alpha):
    gf = GridFunction(values, h=grid.lat.spacing, tau=grid.dt,
                      periodic=(True,) * grid.lat.ndim)
    return p_norm(gf, alpha, k=2).p_norm


def _window_picard(data, j0, j1, rho0, alpha, tol, max_iter, kappa_margin):
    """Picard sweeps on levels [j0, j1]; returns (converged, rho, row)."""
    grid = data.grid
    lat = grid.lat
    wlen = j1 - j0 + 1
    sl = slice(j0, j1 + 1)
    wgrid = StripGrid(lat, grid.nz, wlen, (wlen - 1) * grid.dt)
    rho = np.broadcast_to(rho0, (wlen,) + lat.shape).copy()
    diffs, ratios = [], []
    converged = False
    for _ in range(max_iter):
        rho_new, _ = _sweep(data, rho, rho0, sl, wgrid)
        dnorm = _p_estimate(rho_new - rho, wgrid, alpha)
        diffs.append(dnorm)
        scale = 1.0 + float(np.abs(rho_new).max())
        rho = rho_new
        if dnorm <= tol * scale:
            converged = True
            break
        if len(diffs) >= 2 and diffs[-2] > 0.0:
            ratio = diffs[-1] / diffs[-2]
            ratios.append(ratio)
            if ratio >= kappa_margin and dnorm > 10.0 * tol * scale:
                break
    row = {"t0": j0 * grid.dt, "t1": j1 * grid.dt,
           "iterations": len(diffs), "diffs": diffs, "ratios": ratios,
           "converged": converged}
    return converged, rho, row


def solve_linear_problem(data: LinearProblemData, *, alpha=0.5, tol=1e-8,
                         max_iter=30, kappa_margin=0.9, max_halvings=6):
    """Fixed-point solve of the full linear problem.

    Runs Picard on the whole horizon; a measured contraction factor at or
    above ``kappa_margin`` halves the window and the solution is extended
    window by window (each restart inherits the interface state).  Fails
    with the ledger attached when the floor ``T / 2^max_halvings`` still
    shows no contraction.  Returns (u, rho, ledger).
    """
    grid = data.grid
    lat = grid.lat
    nt = grid.nt
    intervals = nt - 1
    ledger = IterationLedger(alpha=alpha, tol=tol)
    halving = 0
    rho = None
    while True:
        nwin = 2 ** halving
        if intervals % nwin or intervals // nwin < 2:
            raise ContractionFailure(
                "cannot halve the horizon further on this time lattice "
                f"({intervals} intervals, {nwin} windows)", ledger)
        ledger.horizons.append(grid.horizon / nwin)
        wint = intervals // nwin
        trial = np.zeros((nt,) + lat.shape)
        rho0 = np.zeros(lat.shape)
        rows = []
        failed = False
        for w in range(nwin):
            j0 = w * wint
            ok, wrho, row = _window_picard(
                data, j0, j0 + wint, rho0, alpha, tol, max_iter,
                kappa_margin)
            rows.append(row)
            if not ok:
                failed = True
                break
            trial[j0:j0 + wint + 1] = wrho
            rho0 = trial[j0 + wint]
        ledger.windows = rows
        if not failed:
            rho = trial
            break
        halving += 1
        if halving > max_halvings:
            raise ContractionFailure(
                "no contraction down to the horizon floor "
                f"T/2^{max_halvings}", ledger)
    ratios = [r for row in ledger.windows for r in row["ratios"]]
    ledger.contraction_factor = max(ratios) if ratios else None
    ledger.converged = True
    u = solve_transmission(data.transmission(rho), check=True)
    ledger.residuals = linear_residuals(u, rho, data)
    ledger.estimate_ratio = linear_estimate_ratio(u, rho, data, alpha)
    return u, rho, ledger


def measure_contraction(data: LinearProblemData, *, halvings=3, iters=5,
                        alpha=0.5):
    """Contraction factor of the iteration map at shrinking horizons.

    Runs a fixed number of Picard sweeps on the leading window at
    T, T/2, ..., T/2^halvings and reports the largest trustworthy
    successive-difference ratio for each; the factors should fall as the
    horizon does.
    """
    if iters < 3:
        raise ValueError("need at least three sweeps to measure a ratio")
    grid = data.grid
    intervals = grid.nt - 1
    out = []
    for j in range(halvings + 1):
        nwin = 2 ** j
        if intervals % nwin or intervals // nwin < 2:
            raise ValueError(
                f"time lattice does not support {halvings} halvings")
        wint = intervals // nwin
        _, _, row = _window_picard(
            data, 0, wint, np.zeros(grid.lat.shape), alpha, 0.0, iters,
            np.inf)
        floor = 1e3 * np.finfo(float).eps
        valid = [r for r, prev in zip(row["ratios"], row["diffs"])
                 if prev > floor]
        if not valid:
            raise RuntimeError("differences hit the floating floor before "
                               "a ratio could be measured")
        out.append({"horizon": wint * grid.dt, "kappa": max(valid)})
    return out


# ---------------------------------------------------------------------------
# audits


def linear_residuals(u: PhaseField, rho, data: LinearProblemData):
    """Sup residuals of every equation of the system, plus the start
    conditions.  The minus-side interface law is the reduction's
    consistency certificate: the solver never imposes it directly."""
    grid = data.grid
    lat = grid.lat
    hz = grid.hz
    rho = np.asarray(rho)
    out = {}
    out["jump"] = float(np.abs(u.jump() + data.A * rho - data.f2).max())
    out["wall_plus"] = float(np.abs(u.plus[..., -1] - data.f4_plus).max())
    out["wall_minus"] = float(np.abs(u.minus[..., 0] - data.f4_minus).max())
    rho_t = _time_derivative_uniform(rho, grid.dt)
    lap_rho = lat.laplacian(rho)
    for sign, a, h_comps in (("plus", data.a_plus, data.h_plus),
                             ("minus", data.a_minus, data.h_minus)):
        trace = normal_derivative(u, sign)
        f3 = data.f3_plus if sign == "plus" else data.f3_minus
        gap = (rho_t - data.eps * lap_rho + a * trace
               + _drift_term(h_comps, rho, lat) - f3)
        out[f"kinematic_{sign}"] = float(np.abs(gap).max())
    for sign, vals, b, f1 in (("plus", u.plus, data.b_plus, data.f1_plus),
                              ("minus", u.minus, data.b_minus,
                               data.f1_minus)):
        res = (-(lat.laplacian(vals, trailing=1) + dz2(vals, hz))
               + b * vals - f1)
        out[f"bulk_{sign}"] = float(np.abs(res[..., 1:-1]).max())
    out["start"] = max(float(np.abs(u.plus[0]).max()),
                       float(np.abs(u.minus[0]).max()),
                       float(np.abs(rho[0]).max()))
    return out


def _bulk_estimate(values, grid, k, alpha, space_cap, time_cap):
    gf = GridFunction(values, h=grid.lat.spacing + (grid.hz,), tau=grid.dt,
                      periodic=(True,) * grid.lat.ndim + (False,))
    return e_norm(gf, k, alpha, space_cap, time_cap).e_norm


def _side_estimate(values, grid, k, alpha, space_cap, time_cap):
    gf = GridFunction(values, h=grid.lat.spacing, tau=grid.dt,
                      periodic=(True,) * grid.lat.ndim)
    return e_norm(gf, k, alpha, space_cap, time_cap).e_norm


def linear_estimate_ratio(u: PhaseField, rho, data: LinearProblemData,
                          alpha, space_cap=None, time_cap=None):
    """Solution-to-data ratio in the parabolic Holder estimators.

    The left side carries both bulk fields at order 2, the interface
    field at order 2 and, weighted by eps, at order 3; the right side
    collects the data norms at their natural orders.  The uniform bound
    over an eps-sweep is what the regularization argument rests on.
    """
    grid = data.grid
    rho = np.asarray(rho)
    caps = dict(space_cap=space_cap, time_cap=time_cap)

    def side_p(vals, k):
        gf = GridFunction(vals, h=grid.lat.spacing, tau=grid.dt,
                          periodic=(True,) * grid.lat.ndim)
        return p_norm(gf, alpha, k=k, **caps).p_norm

    lhs = (_bulk_estimate(u.plus, grid, 2, alpha, **caps)
           + _bulk_estimate(u.minus, grid, 2, alpha, **caps)
           + side_p(rho, 2))
    if data.eps > 0:
        lhs += data.eps * side_p(rho, 3)
    rhs = (_bulk_estimate(np.asarray(data.f1_plus), grid, 0, alpha, **caps)
           + _bulk_estimate(np.asarray(data.f1_minus), grid, 0, alpha,
                            **caps)
           + _side_estimate(np.asarray(data.f2), grid, 2, alpha, **caps)
           + _side_estimate(np.asarray(data.f3_plus), grid, 1, alpha,
                            **caps)
           + _side_estimate(np.asarray(data.f3_minus), grid, 1, alpha,
                            **caps)
           + _side_estimate(np.asarray(data.f4_plus), grid, 2, alpha,
                            **caps)
           + _side_estimate(np.asarray(data.f4_minus), grid, 2, alpha,
                            **caps))
    ratio = lhs / rhs if rhs > 0 else np.inf if lhs > 0 else 0.0
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


def energy_diagnostic(u: PhaseField, data: LinearProblemData, rho=None):
    """Discrete energy balance of a computed solution; the quadratic
    terms are individually nonnegative whenever b stays above its floor."""
    if rho is None:
        rho = np.zeros(data.grid.interface_shape())
    return energy_identity(u, data.transmission(rho))
