"""Reference line dynamics for laterally constant data.

When nothing varies along the interface the whole evolution collapses
to one vertical line: two semilinear two-point problems share a trace
at the moving point s(t), their fluxes balance there, and the point
moves with the plus-side flux.  This module integrates that reduced
system on its own physical mesh with dense resolution, so it serves as
an oracle for the strip solver without sharing a single stencil with
it: different unknowns (physical profiles against flattened
corrections), different meshes (one that moves with s against a fixed
slab) and a different time integrator (classical Runge-Kutta against
exponential steps).

The lateral regularization of the interface law acts through lateral
derivatives only, so laterally constant motion is independent of it
and the oracle needs no regularization parameter at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

__all__ = [
    "LineData",
    "conjugate_state",
    "interface_velocity",
    "oracle_trajectory",
    "self_converged_trajectory",
]


def _as_fn(g):
    if callable(g):
        return g
    val = float(g)
    return lambda t: val


@dataclass(frozen=True)
class LineData:
    """Two-phase line problem on [-1, 1] with the interface at s(t).

    ``g_plus/g_minus`` are the wall values at +1 and -1, scalars or
    scalar functions of time; sources act pointwise as in the strip
    problem.  The minus phase occupies [-1, s], the plus phase [s, 1].
    """

    a_plus: float
    a_minus: float
    f_plus: object
    f_minus: object
    fprime_plus: object
    fprime_minus: object
    g_plus: object
    g_minus: object
    m: float = 1.0

    def __post_init__(self):
        if not (self.a_plus > 0 and self.a_minus > 0 and self.m > 0):
            raise ValueError("mobilities a and the factor m must be positive")
        for name in ("f_plus", "f_minus", "fprime_plus", "fprime_minus"):
            if not callable(getattr(self, name)):
                raise ValueError(f"{name} must be callable on field values")

    def wall(self, side):
        return _as_fn(self.g_plus if side == "plus" else self.g_minus)


def _assemble(data, s, t, n, u):
    """Residual and tridiagonal Jacobian of the conjugate system.

    Unknowns run from the node next to the lower wall through the
    shared trace to the node next to the upper wall; the trace row is
    the flux balance with both one-sided differences shifted by half a
    bulk equation, which keeps the row tridiagonal at second order.
    """
    hm = (s + 1.0) / n
    hp = (1.0 - s) / n
    gm = data.wall("minus")(t)
    gp = data.wall("plus")(t)
    um = np.concatenate(([gm], u[:n]))      # nodes -1 .. s
    up = np.concatenate((u[n - 1:], [gp]))  # nodes  s .. 1

    res = np.empty(2 * n - 1)
    res[:n - 1] = (um[:-2] - 2.0 * um[1:-1] + um[2:]) / (hm * hm) \
        - np.asarray(data.f_minus(um[1:-1]), dtype=float)
    res[n:] = (up[:-2] - 2.0 * up[1:-1] + up[2:]) / (hp * hp) \
        - np.asarray(data.f_plus(up[1:-1]), dtype=float)
    theta = u[n - 1]
    fp0 = float(np.asarray(data.f_plus(theta), dtype=float))
    fm0 = float(np.asarray(data.f_minus(theta), dtype=float))
    flux_p = (up[1] - theta) / hp - 0.5 * hp * fp0
    flux_m = (theta - um[-2]) / hm + 0.5 * hm * fm0
    res[n - 1] = data.a_plus * flux_p - data.a_minus * flux_m

    band = np.zeros((3, 2 * n - 1))
    band[0, 1:n] = 1.0 / (hm * hm)
    band[0, n:] = 1.0 / (hp * hp)
    band[0, n] = data.a_plus / hp
    band[2, :n - 1] = 1.0 / (hm * hm)
    band[2, n - 1:-1] = 1.0 / (hp * hp)
    band[2, n - 2] = data.a_minus / hm
    band[1, :n - 1] = -2.0 / (hm * hm) \
        - np.asarray(data.fprime_minus(um[1:-1]), dtype=float)
    band[1, n:] = -2.0 / (hp * hp) \
        - np.asarray(data.fprime_plus(up[1:-1]), dtype=float)
    band[1, n - 1] = (-data.a_plus / hp - data.a_minus / hm
                      - 0.5 * hp * data.a_plus
                      * float(np.asarray(data.fprime_plus(theta)))
                      - 0.5 * hm * data.a_minus
                      * float(np.asarray(data.fprime_minus(theta))))
    return res, band, flux_p, flux_m


def conjugate_state(data, s, t, *, n=1024, tol=1e-11, max_iter=30,
                    guess=None):
    """Profiles, trace and fluxes of the frozen-interface system.

    Returns a dict with the trace ``theta``, the one-sided fluxes, the
    unknown vector ``u`` (reusable as a warm start) and both physical
    node sets.  Convergence is judged by the Newton step in solution
    units; the residual itself carries a 1/h^2 amplification that would
    bury the rounding floor.  Newton stalls raise RuntimeError.
    """
    if not -1.0 < s < 1.0:
        raise ValueError(f"interface position {s} leaves the strip")
    if n < 4:
        raise ValueError("each phase needs at least four intervals")
    gm = data.wall("minus")(t)
    gp = data.wall("plus")(t)
    if guess is None:
        # source-free exact trace: harmonic weighting by a over length
        wp = data.a_plus / (1.0 - s)
        wm = data.a_minus / (s + 1.0)
        theta0 = (wp * gp + wm * gm) / (wp + wm)
        xi = np.arange(1, n + 1) / n
        u = np.concatenate((gm + (theta0 - gm) * xi,
                            theta0 + (gp - theta0) * xi[:-1]))
    else:
        u = np.array(guess, dtype=float)
        if u.shape != (2 * n - 1,):
            raise ValueError("warm start has the wrong size")
    for _ in range(max_iter):
        res, band, _, _ = _assemble(data, s, t, n, u)
        du = solve_banded((1, 1), band, res)
        u = u - du
        if float(np.abs(du).max()) <= tol * (1.0 + float(np.abs(u).max())):
            _, _, flux_p, flux_m = _assemble(data, s, t, n, u)
            return {"theta": float(u[n - 1]), "flux_plus": float(flux_p),
                    "flux_minus": float(flux_m), "u": u,
                    "z_minus": np.linspace(-1.0, s, n + 1),
                    "z_plus": np.linspace(s, 1.0, n + 1)}
    raise RuntimeError(
        f"conjugate line solve stalled at s = {s:.3e}, t = {t:.3e}")


def interface_velocity(data, s, t, *, n=1024, tol=1e-12, guess=None):
    """ds/dt = -(a+/m) d u+/dz at the interface, with the state dict."""
    state = conjugate_state(data, s, t, n=n, tol=tol, guess=guess)
    return -data.a_plus / data.m * state["flux_plus"], state


def oracle_trajectory(data, times, *, n=1024, substeps=4, tol=1e-12):
    """Interface path s on the given time lattice, s(times[0]) = 0.

    Classical fourth-order Runge-Kutta with ``substeps`` stages per
    lattice interval; every velocity evaluation is a fresh conjugate
    solve warm-started from the previous one.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("need at least two time levels")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("time levels must increase")
    if substeps < 1:
        raise ValueError("substeps must be positive")

    out = np.empty(times.size)
    out[0] = 0.0
    s = 0.0
    guess = None
    for j in range(times.size - 1):
        dt = (times[j + 1] - times[j]) / substeps
        t = times[j]
        for _ in range(substeps):
            k1, state = interface_velocity(data, s, t, n=n, tol=tol,
                                           guess=guess)
            guess = state["u"]
            k2, state = interface_velocity(data, s + 0.5 * dt * k1,
                                           t + 0.5 * dt, n=n, tol=tol,
                                           guess=guess)
            k3, state = interface_velocity(data, s + 0.5 * dt * k2,
                                           t + 0.5 * dt, n=n, tol=tol,
                                           guess=state["u"])
            k4, state = interface_velocity(data, s + dt * k3, t + dt,
                                           n=n, tol=tol, guess=state["u"])
            s = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += dt
        out[j + 1] = s
    return out


def self_converged_trajectory(data, times, *, n=1024, substeps=4,
                              tol=1e-12):
    """Trajectory at doubled resolution with its self-convergence gap.

    Runs the integrator at (n, substeps) and (2n, 2 substeps) and
    returns the finer path together with the largest pointwise gap
    relative to the sup of the path; the caller decides what gap is
    acceptable.
    """
    coarse = oracle_trajectory(data, times, n=n, substeps=substeps, tol=tol)
    fine = oracle_trajectory(data, times, n=2 * n, substeps=2 * substeps,
                             tol=tol)
    scale = max(float(np.abs(fine).max()), 1e-300)
    return fine, float(np.abs(fine - coarse).max()) / scale
