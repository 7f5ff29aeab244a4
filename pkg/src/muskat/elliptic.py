"""Stationary solvers on the flat strip: transmission and semilinear.

Both phases are discretized on their own vertical sub-grid meeting at the
interface line.  The jump condition eliminates the minus-side trace, and
the flux condition is imposed through ghost values that also enforce the
bulk equation at the interface, which keeps second-order accuracy without
one-sided interface stencils.  The resulting unknowns form a single chain
per lateral mode:

    [u-_1 ... u-_(nz-1), u_G, u+_1 ... u+_(nz-1)]

with u_G the plus trace (the minus trace is u_G minus the prescribed
jump).  The chain matrix is tridiagonal and strictly diagonally dominant,
so a batched Thomas sweep solves all lateral modes at once whenever the
reaction coefficients are laterally constant.  Laterally varying b goes
through BiCGStab on the identical real-space operator, preconditioned by
the mode solver built from lateral means.

The semilinear builder runs Newton on the same discrete system with
b = f'(u), so the converged iterate satisfies the solver's own interface
conditions to machine precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, bicgstab

from .grids import StripGrid, end_derivative

__all__ = [
    "PhaseField",
    "TransmissionData",
    "solve_transmission",
    "solve_semilinear_stationary",
    "normal_derivative",
    "energy_identity",
]


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class PhaseField:
    """Two-phase bulk field on the strip; time is the leading axis.

    ``plus`` lives on x_N in [0, 1] (interface at index 0), ``minus`` on
    [-1, 0] (interface at the last index).  ``role`` is a free-form tag
    (u, v, w, u0) and ``log`` carries solver diagnostics when the field
    came out of a solve.
    """

    grid: StripGrid
    plus: np.ndarray
    minus: np.ndarray
    role: str = "u"
    log: dict = None

    def __post_init__(self):
        want = self.grid.bulk_shape()
        for name in ("plus", "minus"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != want:
                raise ValueError(f"{name} must have shape {want}")
            object.__setattr__(self, name, arr)

    @property
    def interface_plus(self):
        return self.plus[..., 0]

    @property
    def interface_minus(self):
        return self.minus[..., -1]

    def jump(self):
        return self.interface_plus - self.interface_minus


def _bulk_view(value, shape, name):
    arr = np.asarray(value, dtype=float)
    try:
        view = np.broadcast_to(arr, shape)
    except ValueError:
        raise ValueError(f"{name} is not broadcastable to {shape}") from None
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return view


def _is_laterally_constant(raw, lat_ndim, trailing):
    """True when the raw (pre-broadcast) array cannot vary laterally."""
    arr = np.asarray(raw)
    if arr.ndim <= trailing:
        return True
    lateral = arr.shape[max(0, arr.ndim - trailing - lat_ndim):arr.ndim - trailing]
    if all(n == 1 for n in lateral):
        return True
    axes = tuple(range(arr.ndim - trailing - len(lateral), arr.ndim - trailing))
    spread = np.ptp(arr, axis=axes)
    return float(np.max(spread)) <= 1e-13 * (1.0 + float(np.abs(arr).max()))


@dataclass(frozen=True)
class TransmissionData:
    """Data of the linear two-phase conjugation problem.

    Bulk: -lap(u) + b u = f1 per phase; interface: u+ - u- = -A rho + f2
    and a+ du+/dn - a- du-/dn = f3+ - f3- + Hvec . grad'(rho); outer walls
    carry Dirichlet values f4.  Scalars broadcast; omitted sources are
    zero.  ``nu`` is the ellipticity floor: b >= nu and A >= nu.
    """

    grid: StripGrid
    a_plus: float
    a_minus: float
    b_plus: object = 1.0
    b_minus: object = 1.0
    A: object = 1.0
    Hvec: tuple = None
    f1_plus: object = 0.0
    f1_minus: object = 0.0
    f2: object = 0.0
    f3_plus: object = 0.0
    f3_minus: object = 0.0
    f4_plus: object = 0.0
    f4_minus: object = 0.0
    rho: object = 0.0
    nu: float = 1e-10

    def __post_init__(self):
        if not (self.a_plus > 0 and self.a_minus > 0):
            raise ValueError("flux weights a must be positive")
        if not self.nu > 0:
            raise ValueError("ellipticity floor nu must be positive")
        bulk = self.grid.bulk_shape()
        side = self.grid.interface_shape()
        lat_nd = self.grid.lat.ndim
        flags = {}
        for name, shape in (("b_plus", bulk), ("b_minus", bulk),
                            ("A", side), ("f1_plus", bulk),
                            ("f1_minus", bulk), ("f2", side),
                            ("f3_plus", side), ("f3_minus", side),
                            ("f4_plus", side), ("f4_minus", side),
                            ("rho", side)):
            raw = getattr(self, name)
            if name in ("b_plus", "b_minus"):
                flags[name] = _is_laterally_constant(raw, lat_nd, 1)
            object.__setattr__(self, name, _bulk_view(raw, shape, name))
        hvec = self.Hvec
        if hvec is None:
            hvec = (0.0,) * lat_nd
        if len(hvec) != lat_nd:
            raise ValueError("Hvec needs one component per lateral axis")
        object.__setattr__(self, "Hvec",
                           tuple(_bulk_view(c, side, "Hvec") for c in hvec))
        for name in ("b_plus", "b_minus"):
            if float(getattr(self, name).min()) < self.nu:
                raise ValueError(f"{name} drops below the floor nu={self.nu}")
        if float(self.A.min()) < self.nu:
            raise ValueError(f"A drops below the floor nu={self.nu}")
        object.__setattr__(self, "_b_lateral_constant",
                           flags["b_plus"] and flags["b_minus"])

    def jump_rhs(self):
        """r2 = -A rho + f2 on the interface."""
        return -self.A * self.rho + self.f2

    def flux_rhs(self):
        """r3 = f3+ - f3- + Hvec . grad'(rho) on the interface."""
        lat = self.grid.lat
        out = self.f3_plus - self.f3_minus
        rho = None
        for i, comp in enumerate(self.Hvec):
            comp = np.asarray(comp)
            if float(np.abs(comp).max()) == 0.0:
                continue
            if rho is None:
                rho = np.ascontiguousarray(self.rho)
            out = out + comp * lat.deriv(rho, i)
        return out


# ---------------------------------------------------------------------------
# chain assembly (shared by the mode solver, the operator, and Newton)


def _thomas(sub, diag, sup, rhs):
    """Batched tridiagonal solve along the last axis (no pivoting;
    the chain rows are strictly diagonally dominant)."""
    n = diag.shape[-1]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    cp[..., 0] = sup[..., 0] / diag[..., 0]
    dp[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        den = diag[..., i] - sub[..., i] * cp[..., i - 1]
        cp[..., i] = sup[..., i] / den
        dp[..., i] = (rhs[..., i] - sub[..., i] * dp[..., i - 1]) / den
    x = np.empty_like(dp)
    x[..., -1] = dp[..., -1]
    for i in range(n - 2, -1, -1):
        x[..., i] = dp[..., i] - cp[..., i] * x[..., i + 1]
    return x


def _mode_tridiag(k2_flat, bbar_minus, bbar_plus, a_plus, a_minus, hz):
    """Chain matrices for every lateral mode; b profiles vary in z only."""
    nz = bbar_plus.shape[-1] - 1
    lc = 2 * nz - 1
    nm = k2_flat.size
    ih2 = 1.0 / (hz * hz)
    sub = np.zeros((nm, lc))
    diag = np.empty((nm, lc))
    sup = np.zeros((nm, lc))
    k2c = k2_flat[:, None]
    diag[:, :nz - 1] = 2.0 * ih2 + k2c + bbar_minus[1:nz][None, :]
    diag[:, nz:] = 2.0 * ih2 + k2c + bbar_plus[1:nz][None, :]
    sub[:, :nz - 1] = -ih2
    sub[:, nz:] = -ih2
    sup[:, :nz - 1] = -ih2
    sup[:, nz:] = -ih2
    cg_p = k2_flat + bbar_plus[0]
    cg_m = k2_flat + bbar_minus[nz]
    h2 = hz * hz
    diag[:, nz - 1] = -(a_plus * (2.0 + h2 * cg_p)
                        + a_minus * (2.0 + h2 * cg_m))
    sub[:, nz - 1] = 2.0 * a_minus
    sup[:, nz - 1] = 2.0 * a_plus
    return sub, diag, sup


def _chain_apply(X, lap, b_minus, b_plus, a_plus, a_minus, hz):
    """Real-space chain operator; ``lap`` is the lateral Laplacian of X.

    X has shape (lc, *lateral); b arrays hold full bulk coefficients of
    one time level, shape (*lateral, nz+1).
    """
    nz = b_plus.shape[-1] - 1
    ih2 = 1.0 / (hz * hz)
    h2 = hz * hz
    out = np.empty_like(X)
    pad = np.zeros_like(X[0])
    upper = np.concatenate([X[1:], pad[None]], axis=0)
    lower = np.concatenate([pad[None], X[:-1]], axis=0)
    vert = (2.0 * X - upper - lower) * ih2

    bm = np.moveaxis(b_minus, -1, 0)  # (nz+1, *lat)
    bp = np.moveaxis(b_plus, -1, 0)
    out[:nz - 1] = vert[:nz - 1] - lap[:nz - 1] + bm[1:nz] * X[:nz - 1]
    out[nz:] = vert[nz:] - lap[nz:] + bp[1:nz] * X[nz:]

    xg = X[nz - 1]
    lg = lap[nz - 1]
    out[nz - 1] = (2.0 * a_minus * X[nz - 2]
                   - a_plus * (2.0 * xg + h2 * (-lg + bp[0] * xg))
                   - a_minus * (2.0 * xg + h2 * (-lg + bm[nz] * xg))
                   + 2.0 * a_plus * X[nz])
    return out


def _chain_rhs_level(d: TransmissionData, t, r2, r3, lap_r2):
    """Real-space chain right-hand side for one time level."""
    grid = d.grid
    nz = grid.nz
    hz = grid.hz
    h2 = hz * hz
    lat_shape = grid.lat.shape
    rhs = np.empty((2 * nz - 1,) + lat_shape)
    f1m = np.moveaxis(d.f1_minus[t], -1, 0)
    f1p = np.moveaxis(d.f1_plus[t], -1, 0)
    rhs[:nz - 1] = f1m[1:nz]
    rhs[0] += d.f4_minus[t] / h2
    rhs[nz - 2] -= r2 / h2
    rhs[nz:] = f1p[1:nz]
    rhs[-1] += d.f4_plus[t] / h2
    bm_g = d.b_minus[t][..., nz]
    rhs[nz - 1] = (2.0 * hz * r3
                   - d.a_plus * h2 * f1p[0]
                   - d.a_minus * h2 * f1m[nz]
                   - d.a_minus * (2.0 * r2 + h2 * (-lap_r2 + bm_g * r2)))
    return rhs


def _split_chain(chain, r2, f4_plus, f4_minus):
    """Chain fields back to the two phases, shapes (*lat trailing)->(nz+1)."""
    lc = chain.shape[0]
    nz = (lc + 1) // 2
    lat_shape = chain.shape[1:]
    minus = np.empty(lat_shape + (nz + 1,))
    plus = np.empty(lat_shape + (nz + 1,))
    minus[..., 0] = f4_minus
    minus[..., 1:nz] = np.moveaxis(chain[:nz - 1], 0, -1)
    minus[..., nz] = chain[nz - 1] - r2
    plus[..., 0] = chain[nz - 1]
    plus[..., 1:nz] = np.moveaxis(chain[nz:], 0, -1)
    plus[..., nz] = f4_plus
    return plus, minus


def _solve_level_direct(d, t, r2, r3, lap_r2):
    grid = d.grid
    lat = grid.lat
    nz = grid.nz
    bbar_m = lat.mean(d.b_minus[t], trailing=1)
    bbar_p = lat.mean(d.b_plus[t], trailing=1)
    sub, diag, sup = _mode_tridiag(lat.k2.reshape(-1), bbar_m, bbar_p,
                                   d.a_plus, d.a_minus, grid.hz)
    rhs = _chain_rhs_level(d, t, r2, r3, lap_r2)
    rhs_h = np.fft.fftn(rhs, axes=tuple(range(1, 1 + lat.ndim)))
    rhs_modes = np.moveaxis(rhs_h, 0, -1).reshape(-1, 2 * nz - 1)
    x_modes = _thomas(sub.astype(complex), diag.astype(complex),
                      sup.astype(complex), rhs_modes)
    x_h = np.moveaxis(x_modes.reshape(lat.shape + (2 * nz - 1,)), -1, 0)
    chain = np.fft.ifftn(x_h, axes=tuple(range(1, 1 + lat.ndim))).real
    return chain


def _solve_level_krylov(d, t, r2, r3, lap_r2, tol, maxiter):
    grid = d.grid
    lat = grid.lat
    nz = grid.nz
    lc = 2 * nz - 1
    shape = (lc,) + lat.shape
    size = int(np.prod(shape))
    b_m = d.b_minus[t]
    b_p = d.b_plus[t]

    def matvec(xflat):
        X = xflat.reshape(shape)
        lap = lat.laplacian(X)
        return _chain_apply(X, lap, b_m, b_p, d.a_plus, d.a_minus,
                            grid.hz).reshape(-1)

    bbar_m = lat.mean(b_m, trailing=1)
    bbar_p = lat.mean(b_p, trailing=1)
    sub, diag, sup = _mode_tridiag(lat.k2.reshape(-1), bbar_m, bbar_p,
                                   d.a_plus, d.a_minus, grid.hz)
    subc, diagc, supc = sub.astype(complex), diag.astype(complex), \
        sup.astype(complex)
    ax = tuple(range(1, 1 + lat.ndim))

    def precond(vflat):
        V = vflat.reshape(shape)
        vh = np.moveaxis(np.fft.fftn(V, axes=ax), 0, -1).reshape(-1, lc)
        xh = _thomas(subc, diagc, supc, vh)
        xh = np.moveaxis(xh.reshape(lat.shape + (lc,)), -1, 0)
        return np.fft.ifftn(xh, axes=ax).real.reshape(-1)

    rhs = _chain_rhs_level(d, t, r2, r3, lap_r2).reshape(-1)
    A = LinearOperator((size, size), matvec=matvec, dtype=float)
    M = LinearOperator((size, size), matvec=precond, dtype=float)
    iters = [0]

    def count(_):
        iters[0] += 1

    x, info = bicgstab(A, rhs, x0=precond(rhs), rtol=tol, atol=0.0,
                       maxiter=maxiter, M=M, callback=count)
    bnorm = float(np.linalg.norm(rhs)) or 1.0
    res = float(np.linalg.norm(matvec(x) - rhs)) / bnorm
    if info != 0:
        raise RuntimeError(
            f"transmission solve did not converge: info={info} after "
            f"{iters[0]} iterations, relative residual {res:.3e}")
    return x.reshape(shape), iters[0], res


def solve_transmission(d: TransmissionData, *, tol=1e-10, maxiter=400,
                       method="auto", check=True):
    """Solve the conjugation problem level by level.

    ``method='auto'`` factorizes per lateral mode when both reaction
    coefficients are laterally constant and falls back to preconditioned
    BiCGStab otherwise; 'direct' and 'krylov' force the choice ('direct'
    refuses laterally varying b).  ``check=False`` skips the discrete
    residual audit of direct solves (they are exact eliminations; inner
    iteration loops can avoid paying for the extra operator application).
    """
    if method not in ("auto", "direct", "krylov"):
        raise ValueError("method must be 'auto', 'direct' or 'krylov'")
    constant = d._b_lateral_constant
    if method == "direct" and not constant:
        raise ValueError("direct mode solve requires laterally constant b")
    use_direct = constant if method == "auto" else method == "direct"
    grid = d.grid
    lat = grid.lat
    nt = grid.nt
    r2_all = d.jump_rhs()
    r3_all = d.flux_rhs()
    lap_r2_all = lat.laplacian(np.asarray(r2_all))
    plus = np.empty(grid.bulk_shape())
    minus = np.empty(grid.bulk_shape())
    level_logs = []
    worst = 0.0
    for t in range(nt):
        r2, r3, lap_r2 = r2_all[t], r3_all[t], lap_r2_all[t]
        if use_direct:
            chain = _solve_level_direct(d, t, r2, r3, lap_r2)
            its, res = 0, 0.0
            if check:
                lap = lat.laplacian(chain)
                rhs = _chain_rhs_level(d, t, r2, r3, lap_r2)
                gap = _chain_apply(chain, lap, d.b_minus[t], d.b_plus[t],
                                   d.a_plus, d.a_minus, grid.hz) - rhs
                scale = float(np.abs(rhs).max()) or 1.0
                res = float(np.abs(gap).max()) / scale
        else:
            chain, its, res = _solve_level_krylov(d, t, r2, r3, lap_r2,
                                                  tol, maxiter)
        worst = max(worst, res)
        level_logs.append({"iterations": its, "residual": res})
        p, m = _split_chain(chain, r2, d.f4_plus[t], d.f4_minus[t])
        plus[t] = p
        minus[t] = m
    log = {"method": "direct" if use_direct else "krylov",
           "max_residual": worst, "levels": level_logs}
    return PhaseField(grid, plus, minus, role="u", log=log)


# ---------------------------------------------------------------------------
# traces


def normal_derivative(u: PhaseField, side):
    """One-sided second-order du/dx_N at the interface; the normal points
    into the plus phase from both sides."""
    if u.grid.nz + 1 < 3:
        raise ValueError("normal derivative needs at least three layers")
    if side == "plus":
        return end_derivative(u.plus, u.grid.hz, "lower")
    if side == "minus":
        return end_derivative(u.minus, u.grid.hz, "upper")
    raise ValueError("side must be 'plus' or 'minus'")


# ---------------------------------------------------------------------------
# energy bookkeeping


def _grad_sq(values, lat, hz):
    out = np.zeros_like(values)
    for i in range(lat.ndim):
        out += lat.deriv(values, i, trailing=1) ** 2
    dz = np.gradient(values, hz, axis=-1, edge_order=2)
    return out + dz ** 2


def energy_identity(u: PhaseField, d: TransmissionData):
    """Discrete energy balance of the computed solution.

    a+ int |grad u+|^2 + a- int |grad u-|^2 + reaction terms against the
    source and boundary pairings; the gap is O(h^2) quadrature error, a
    diagnostic of consistency rather than a solver tolerance.
    """
    grid = u.grid
    lat = grid.lat
    hz = grid.hz

    def strip_integral(f):
        return lat.integrate(np.trapezoid(f, dx=hz, axis=-1))

    elastic = (d.a_plus * strip_integral(_grad_sq(u.plus, lat, hz))
               + d.a_minus * strip_integral(_grad_sq(u.minus, lat, hz)))
    reaction = (d.a_plus * strip_integral(d.b_plus * u.plus ** 2)
                + d.a_minus * strip_integral(d.b_minus * u.minus ** 2))
    source = (d.a_plus * strip_integral(d.f1_plus * u.plus)
              + d.a_minus * strip_integral(d.f1_minus * u.minus))
    dn_p = normal_derivative(u, "plus")
    dn_m = normal_derivative(u, "minus")
    top = end_derivative(u.plus, hz, "upper")
    bottom = end_derivative(u.minus, hz, "lower")
    boundary = lat.integrate(
        d.a_plus * u.plus[..., -1] * top
        - d.a_minus * u.minus[..., 0] * bottom
        - d.a_plus * u.interface_plus * dn_p
        + d.a_minus * u.interface_minus * dn_m)
    lhs = elastic + reaction
    rhs = source + boundary
    gap = np.abs(lhs - rhs) / (1.0 + np.abs(lhs) + np.abs(rhs))
    return {"elastic": elastic, "reaction": reaction, "source": source,
            "boundary": boundary, "gap": float(np.max(gap))}


# ---------------------------------------------------------------------------
# semilinear stationary problem


def _stationary_data(level, a_plus, a_minus, b_plus, b_minus, f1_plus,
                     f1_minus, g_plus, g_minus, nu):
    lat_shape = level.lat.shape
    return TransmissionData(
        level, a_plus, a_minus,
        b_plus=b_plus[None], b_minus=b_minus[None],
        f1_plus=f1_plus[None], f1_minus=f1_minus[None],
        f4_plus=np.broadcast_to(np.asarray(g_plus, dtype=float),
                                lat_shape)[None],
        f4_minus=np.broadcast_to(np.asarray(g_minus, dtype=float),
                                 lat_shape)[None],
        nu=nu)


def _semilinear_residual(plus, minus, lat, hz, a_plus, a_minus,
                         f_plus, f_minus):
    """Nonlinear chain residual F(X); layout matches the linear rows."""
    nz = plus.shape[-1] - 1
    h2 = hz * hz
    lc = 2 * nz - 1
    lap_p = lat.laplacian(plus, trailing=1)
    lap_m = lat.laplacian(minus, trailing=1)
    fp = f_plus(plus)
    fm = f_minus(minus)
    res = np.empty((lc,) + plus.shape[:-1])

    def interior(vals, lap, fv):
        vert = (2.0 * vals[..., 1:nz] - vals[..., 2:nz + 1]
                - vals[..., 0:nz - 1]) / h2
        return np.moveaxis(vert - lap[..., 1:nz] + fv[..., 1:nz], -1, 0)

    res[:nz - 1] = interior(minus, lap_m, fm)
    res[nz:] = interior(plus, lap_p, fp)
    xg = plus[..., 0]
    res[nz - 1] = (2.0 * a_plus * (plus[..., 1] - xg)
                   - a_plus * h2 * (-lap_p[..., 0] + fp[..., 0])
                   + 2.0 * a_minus * (minus[..., nz - 1] - xg)
                   - a_minus * h2 * (-lap_m[..., nz] + fm[..., nz]))
    return res


def solve_semilinear_stationary(grid, a_plus, a_minus, f_plus, f_minus,
                                fprime_plus, fprime_minus, g_plus, g_minus,
                                *, nu=1e-8, tol=1e-11, maxiter=25,
                                nondegeneracy_policy="warn",
                                krylov_tol=1e-12):
    """Build stationary two-phase data: lap(u) = f(u) with matched traces.

    The interface carries continuity and the weighted flux match; the
    outer walls carry Dirichlet values g.  Newton runs on the discrete
    system itself, so the converged field satisfies the solver's interface
    coupling exactly.  f' must stay above ``nu`` (monotonicity hypothesis);
    a computed field violating the interface nondegeneracy (positive
    one-sided slopes, positive slope jump) triggers the chosen policy.

    Returns a single-level PhaseField; its grid shares the lateral lattice
    and vertical resolution of ``grid`` but has one time level.
    """
    if nondegeneracy_policy not in ("error", "warn", "ignore"):
        raise ValueError("nondegeneracy_policy must be error, warn or ignore")
    level = StripGrid(grid.lat, grid.nz, 1, 0.0)
    lat = level.lat
    hz = level.hz

    zero_bulk = np.zeros(level.bulk_shape(with_time=False))
    fp0 = float(np.asarray(f_plus(np.zeros(1)))[0])
    fm0 = float(np.asarray(f_minus(np.zeros(1)))[0])
    b_p = np.asarray(fprime_plus(zero_bulk), dtype=float)
    b_m = np.asarray(fprime_minus(zero_bulk), dtype=float)
    if min(float(b_p.min()), float(b_m.min())) < nu:
        raise ValueError(
            f"monotonicity hypothesis violated: f'(0) drops below nu={nu}")
    seed = solve_transmission(_stationary_data(
        level, a_plus, a_minus, b_p, b_m, np.full_like(zero_bulk, -fp0),
        np.full_like(zero_bulk, -fm0), g_plus, g_minus, nu),
        tol=krylov_tol)
    plus = seed.plus[0]
    minus = seed.minus[0]

    history = []
    for _ in range(maxiter):
        res = _semilinear_residual(plus, minus, lat, hz, a_plus, a_minus,
                                   f_plus, f_minus)
        sup = float(np.abs(res).max())
        history.append(sup)
        scale = 1.0 + max(float(np.abs(plus).max()),
                          float(np.abs(minus).max()))
        if sup <= tol * scale:
            break
        bp = np.asarray(fprime_plus(plus), dtype=float)
        bm = np.asarray(fprime_minus(minus), dtype=float)
        if min(float(bp.min()), float(bm.min())) < nu:
            raise ValueError(
                "monotonicity hypothesis violated: f' drops below "
                f"nu={nu} along the Newton path")
        step_data = _stationary_data(level, a_plus, a_minus, bp, bm,
                                     zero_bulk, zero_bulk, 0.0, 0.0, nu)
        delta = _solve_newton_step(step_data, -res, krylov_tol)
        plus = plus + delta[0]
        minus = minus + delta[1]
    else:
        raise RuntimeError(
            "Newton stagnation in the stationary solve; residual history: "
            + ", ".join(f"{r:.3e}" for r in history))

    out = PhaseField(level, plus[None], minus[None], role="u0",
                     log={"newton_residuals": history})
    _check_nondegenerate(out, nondegeneracy_policy)
    return out


def _solve_newton_step(d: TransmissionData, rhs, tol):
    """Solve the Newton correction: chain matrix of ``d`` against an
    already assembled chain right-hand side (homogeneous boundary data)."""
    grid = d.grid
    lat = grid.lat
    nz = grid.nz
    if d._b_lateral_constant:
        bbar_m = lat.mean(d.b_minus[0], trailing=1)
        bbar_p = lat.mean(d.b_plus[0], trailing=1)
        sub, diag, sup = _mode_tridiag(lat.k2.reshape(-1), bbar_m, bbar_p,
                                       d.a_plus, d.a_minus, grid.hz)
        ax = tuple(range(1, 1 + lat.ndim))
        rh = np.moveaxis(np.fft.fftn(rhs, axes=ax), 0, -1).reshape(
            -1, 2 * nz - 1)
        xh = _thomas(sub.astype(complex), diag.astype(complex),
                     sup.astype(complex), rh)
        xh = np.moveaxis(xh.reshape(lat.shape + (2 * nz - 1,)), -1, 0)
        chain = np.fft.ifftn(xh, axes=ax).real
    else:
        lc = 2 * nz - 1
        shape = (lc,) + lat.shape
        size = int(np.prod(shape))
        b_m, b_p = d.b_minus[0], d.b_plus[0]

        def matvec(xflat):
            X = xflat.reshape(shape)
            return _chain_apply(X, lat.laplacian(X), b_m, b_p, d.a_plus,
                                d.a_minus, grid.hz).reshape(-1)

        bbar_m = lat.mean(b_m, trailing=1)
        bbar_p = lat.mean(b_p, trailing=1)
        sub, diag, sup = _mode_tridiag(lat.k2.reshape(-1), bbar_m, bbar_p,
                                       d.a_plus, d.a_minus, grid.hz)
        subc, diagc, supc = (sub.astype(complex), diag.astype(complex),
                             sup.astype(complex))
        ax = tuple(range(1, 1 + lat.ndim))

        def precond(vflat):
            V = vflat.reshape(shape)
            vh = np.moveaxis(np.fft.fftn(V, axes=ax), 0, -1).reshape(-1, lc)
            sol = _thomas(subc, diagc, supc, vh)
            sol = np.moveaxis(sol.reshape(lat.shape + (lc,)), -1, 0)
            return np.fft.ifftn(sol, axes=ax).real.reshape(-1)

        A = LinearOperator((size, size), matvec=matvec, dtype=float)
        M = LinearOperator((size, size), matvec=precond, dtype=float)
        flat = rhs.reshape(-1)
        x, info = bicgstab(A, flat, x0=precond(flat), rtol=tol, atol=0.0,
                           maxiter=400, M=M)
        if info != 0:
            raise RuntimeError(f"Newton step solve failed: info={info}")
        chain = x.reshape(shape)
    p, m = _split_chain(chain, np.zeros(lat.shape), np.zeros(lat.shape),
                        np.zeros(lat.shape))
    return p, m


def _check_nondegenerate(u0: PhaseField, policy):
    dn_p = normal_derivative(u0, "plus")
    dn_m = normal_derivative(u0, "minus")
    margins = {"slope_plus": float(dn_p.min()),
               "slope_minus": float(dn_m.min()),
               "slope_jump": float((dn_p - dn_m).min())}
    ok = all(v > 0.0 for v in margins.values())
    u0.log["nondegenerate"] = ok
    u0.log["nondegeneracy_margins"] = margins
    if ok or policy == "ignore":
        return
    msg = ("computed initial data violates interface nondegeneracy: "
           + ", ".join(f"{k}={v:.3e}" for k, v in margins.items()))
    if policy == "error":
        raise ValueError(msg)
    warnings.warn(msg, stacklevel=2)
