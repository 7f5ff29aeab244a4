"""Estimator checks against brute-force pair enumeration on tiny lattices."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muskat.holder import (GridFunction, HolderEstimate, e_norm,
                           mixed_seminorm, p_norm, time_derivative)

FULL = dict(space_cap=10_000, time_cap=10_000)


def gf(values, h, tau, periodic=False):
    return GridFunction(np.asarray(values, dtype=float), h, tau, periodic)


def brute_space_holder(values, h, alpha, periodic):
    """Reference sup_t sup_{x!=y} quotient, quadruple loop, 1D space."""
    nt, nx = values.shape
    period = nx * h
    best = 0.0
    for t in range(nt):
        for i in range(nx):
            for j in range(nx):
                if i == j:
                    continue
                d = abs(i - j) * h
                if periodic:
                    d = min(d, period - d)
                best = max(best, abs(values[t, i] - values[t, j]) / d ** alpha)
    return best


def brute_mixed(values, h, tau, alpha, beta, periodic):
    nt, nx = values.shape
    period = nx * h
    best = 0.0
    for t in range(nt):
        for s in range(t + 1, nt):
            for i in range(nx):
                for j in range(nx):
                    if i == j:
                        continue
                    d = abs(i - j) * h
                    if periodic:
                        d = min(d, period - d)
                    num = abs(values[t, i] - values[s, i]
                              - values[t, j] + values[s, j])
                    best = max(best, num / (d ** alpha * ((s - t) * tau) ** beta))
    return best


# ---------------------------------------------------------------------------
# frozen point values


def test_mixed_bilinear_unit_square():
    # u = x*t on [0,1]^2: second difference is |x-y||t-s|, the quotient
    # sqrt(|x-y||t-s|) peaks at the opposite corners.
    x = np.linspace(0.0, 1.0, 5)
    t = np.linspace(0.0, 1.0, 5)
    u = gf(np.outer(t, x), h=0.25, tau=0.25)
    assert mixed_seminorm(u, 0.5, 0.5, **FULL) == pytest.approx(1.0, abs=1e-12)


def test_mixed_constant_and_separable():
    x = np.linspace(0.0, 1.0, 6)
    t = np.linspace(0.0, 1.0, 4)
    const = gf(np.full((4, 6), 7.0), h=0.2, tau=1.0 / 3.0)
    assert mixed_seminorm(const, 0.5, 0.5, **FULL) == 0.0
    sep = gf(t[:, None] + x[None, :], h=0.2, tau=1.0 / 3.0)
    assert mixed_seminorm(sep, 0.5, 0.5, **FULL) == pytest.approx(0.0, abs=1e-12)


def test_e_norm_constant_is_sup_only():
    u = gf(np.full((3, 8), -2.5), h=0.1, tau=0.1)
    est = e_norm(u, 1, 0.5, **FULL)
    assert est.e_norm == pytest.approx(2.5, abs=1e-14)
    assert est.sup == 2.5
    assert all(s == 0.0 for s in est.space_seminorms)
    assert est.time_seminorm == 0.0 and est.mixed == 0.0


def test_e_norm_linear_space_seminorm():
    # u = x on [0,1], k=0, alpha=1/2: the quotient |x-y|^{1/2} peaks at 1.
    x = np.linspace(0.0, 1.0, 9)
    u = gf(np.tile(x, (3, 1)), h=0.125, tau=0.5)
    est = e_norm(u, 0, 0.5, **FULL)
    assert est.space_seminorms[0] == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# cross-checks against the brute-force loops


@settings(max_examples=30, deadline=None, derandomize=True)
@given(st.integers(0, 10_000), st.booleans())
def test_matches_brute_force(seed, periodic):
    rng = np.random.default_rng(seed)
    nt, nx = int(rng.integers(2, 5)), int(rng.integers(3, 7))
    vals = rng.standard_normal((nt, nx))
    u = gf(vals, h=0.3, tau=0.2, periodic=periodic)
    alpha, beta = 0.4, 0.6
    got = mixed_seminorm(u, alpha, beta, **FULL)
    want = brute_mixed(vals, 0.3, 0.2, alpha, beta, periodic)
    assert got == pytest.approx(want, rel=1e-12)
    est = e_norm(u, 0, alpha, **FULL)
    assert est.space_seminorms[0] == pytest.approx(
        brute_space_holder(vals, 0.3, alpha, periodic), rel=1e-12)


# ---------------------------------------------------------------------------
# invariants


@settings(max_examples=25, deadline=None, derandomize=True)
@given(st.integers(0, 10_000),
       st.floats(-8.0, 8.0, allow_nan=False).filter(lambda c: abs(c) > 1e-3))
def test_homogeneity(seed, c):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((3, 6))
    u = gf(vals, h=0.25, tau=0.3)
    cu = gf(c * vals, h=0.25, tau=0.3)
    a, b = e_norm(u, 1, 0.5, **FULL), e_norm(cu, 1, 0.5, **FULL)
    assert b.e_norm == pytest.approx(abs(c) * a.e_norm, rel=1e-10)


@settings(max_examples=20, deadline=None, derandomize=True)
@given(st.integers(0, 10_000))
def test_window_monotone(seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((6, 5))
    u = gf(vals, h=0.25, tau=0.3)
    vals_e = [e_norm(u.window(nt), 1, 0.5, **FULL).e_norm for nt in (2, 4, 6)]
    assert vals_e[0] <= vals_e[1] * (1 + 1e-12)
    assert vals_e[1] <= vals_e[2] * (1 + 1e-12)


def test_refinement_convergence():
    # analytic field: estimates at h and h/2 differ by O(h)
    def build(nx, nt):
        x = np.arange(nx) * (1.0 / nx)
        t = np.linspace(0.0, 1.0, nt)
        vals = np.sin(2 * np.pi * x)[None, :] * np.cos(t)[:, None]
        return gf(vals, h=1.0 / nx, tau=t[1] - t[0], periodic=True)

    e16 = e_norm(build(16, 9), 1, 0.5, **FULL).e_norm
    e32 = e_norm(build(32, 17), 1, 0.5, **FULL).e_norm
    e64 = e_norm(build(64, 33), 1, 0.5, **FULL).e_norm
    assert abs(e32 - e16) <= 1.5
    assert abs(e64 - e32) <= 0.75 * abs(e32 - e16) + 0.05


def test_equiv_diagnostic_matches_reduced():
    # the gap-by-gap reassembly reproduces the mixed pair sup exactly on
    # the lattice; the ratio to the full norm stays in a stable bracket
    rng = np.random.default_rng(7)
    vals = rng.standard_normal((5, 8))
    u = gf(vals, h=0.2, tau=0.25)
    est = e_norm(u, 1, 0.5, **FULL)
    assert est.equiv == pytest.approx(est.reduced, rel=1e-12)
    assert est.e_norm >= est.reduced > 0
    ratios = []
    for nx in (8, 16):
        x = np.arange(nx) * (1.0 / nx)
        t = np.linspace(0.0, 0.5, 6)
        smooth = gf(np.cos(2 * np.pi * x)[None, :] * (1 + t)[:, None],
                    h=1.0 / nx, tau=0.1, periodic=True)
        es = e_norm(smooth, 1, 0.5, **FULL)
        ratios.append(es.e_norm / es.equiv)
    assert 1.0 <= min(ratios) and max(ratios) <= 10.0
    assert abs(ratios[1] - ratios[0]) <= 0.2 * ratios[0]


# ---------------------------------------------------------------------------
# interface-class estimates


def test_p_norm_linear_in_time():
    # rho = t*phi: the centered time derivative is exactly phi, so the
    # p component splits into the two e-norms
    nx = 16
    x = np.arange(nx) * (2 * np.pi / nx)
    phi = np.sin(x) + 0.3 * np.cos(2 * x)
    t = np.linspace(0.0, 1.0, 7)
    rho = gf(t[:, None] * phi[None, :], h=2 * np.pi / nx, tau=t[1] - t[0],
             periodic=True)
    phi_t = gf(np.tile(phi, (7, 1)), h=2 * np.pi / nx, tau=t[1] - t[0],
               periodic=True)
    est = p_norm(rho, 0.5, k=2, **FULL)
    base = e_norm(rho, 2, 0.5, **FULL)
    dphi = e_norm(phi_t, 1, 0.5, **FULL)
    assert est.p_norm == pytest.approx(base.e_norm + dphi.e_norm, rel=1e-10)


def test_p_norm_zero():
    rho = gf(np.zeros((5, 8)), h=0.5, tau=0.1, periodic=True)
    assert p_norm(rho, 0.5, k=2, **FULL).p_norm == 0.0


def test_dotted_window_scaling_ledger():
    # rho = t^2 phi vanishes at t=0 with its time derivative; the lower
    # exponent norm over [0,T] tracks T^{(a-a')/2} times the higher one
    # within a stable constant across window halvings
    nx, nt = 16, 17
    x = np.arange(nx) * (2 * np.pi / nx)
    phi = np.sin(x)
    t = np.linspace(0.0, 1.0, nt)
    rho = gf((t ** 2)[:, None] * phi[None, :], h=2 * np.pi / nx,
             tau=t[1] - t[0], periodic=True)
    a, ap = 0.5, 0.25
    qs = []
    for keep in (17, 9, 5):
        win = rho.window(keep)
        T = (keep - 1) * rho.tau
        hi = p_norm(win, a, k=2, **FULL).p_norm
        lo = p_norm(win, ap, k=2, **FULL).p_norm
        qs.append(lo / (T ** ((a - ap) / 2.0) * hi))
    assert max(qs) / min(qs) <= 4.0


# ---------------------------------------------------------------------------
# contracts


def test_error_paths():
    u = gf(np.zeros((3, 8)), h=0.1, tau=0.1)
    with pytest.raises(ValueError):
        e_norm(u, 4, 0.5)
    with pytest.raises(ValueError):
        e_norm(u, 1, 1.5)
    with pytest.raises(ValueError):
        mixed_seminorm(gf(np.zeros((1, 8)), 0.1, 0.1), 0.5, 0.5)
    with pytest.raises(ValueError):
        p_norm(gf(np.zeros((2, 8)), 0.1, 0.1), 0.5, k=2)
    with pytest.raises(ValueError):
        p_norm(gf(np.zeros((5, 8)), 0.1, 0.1), 0.5, k=1)
    with pytest.raises(ValueError):
        gf(np.full((2, 4), np.nan), 0.1, 0.1)
    with pytest.raises(ValueError):
        gf(np.zeros((2, 4)), -0.1, 0.1)


def test_json_keys_stable():
    u = gf(np.ones((3, 8)), h=0.1, tau=0.1)
    d = e_norm(u, 1, 0.5, **FULL).as_dict()
    assert list(d) == ["sup", "sx0", "sx1", "sx2", "sx3", "st", "mixed", "e", "p"]
    assert d["sx2"] is None and d["p"] is None


def test_deterministic_with_caps():
    rng = np.random.default_rng(3)
    vals = rng.standard_normal((20, 40))
    u = gf(vals, h=0.05, tau=0.01, periodic=True)
    a = e_norm(u, 2, 0.5, space_cap=9, time_cap=6)
    b = e_norm(u, 2, 0.5, space_cap=9, time_cap=6)
    assert a == b


def test_time_derivative_quadratic_exact_interior():
    t = np.linspace(0.0, 1.0, 6)
    u = gf((t ** 2)[:, None] * np.ones((1, 5)), h=0.2, tau=0.2)
    du = time_derivative(u)
    assert np.allclose(du.values[:, 0], 2 * t, atol=1e-13)
