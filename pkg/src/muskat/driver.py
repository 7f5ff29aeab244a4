"""Configuration-driven runs with deterministic reports.

A run is described by a line-oriented config file (INI sections, key =
value), resolved against documented defaults, validated against the
preconditions of the modules it will touch, then dispatched to one of
six modes.  Every mode writes ``report.json`` (checks with pass/fail,
ledgers, residuals, a hash of the resolved configuration and version
identifiers) plus ``ledger.csv`` and mode-specific CSV snapshots into
the output directory.  The same configuration and seed reproduce the
same bytes.

Exit codes: 0 all checks pass, 1 a check fails, 2 configuration or data
validation error, 3 solver failure.
"""

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import DomainSpec
from .grids import LateralGrid, make_grid
from .holder import GridFunction, e_norm, p_norm
from .linearized import (ContractionFailure, LinearProblemData,
                         linear_residuals, solve_linear_problem)
from .model_kernel import (ModelParams, ModelRHS, _require_resolved,
                           apriori_norm_ratio, kernel_K_eps,
                           kernel_bound_check, kernel_moments,
                           model_residuals, model_solve_full)
from .nonlinear import TwoPhaseProblem, solve_nonlinear
from .oracle1d import LineData, self_converged_trajectory
from .reporting import config_hash, version_stamp, write_csv, write_report

__all__ = ["ConfigError", "RunConfig", "load_config", "run", "MODES"]


class ConfigError(ValueError):
    """A configuration key is missing, unknown, or out of range."""


# Keys without defaults; checked in this order so an empty file names
# run.mode first.
REQUIRED = ("run.mode", "run.out", "run.seed")

DEFAULTS = {
    "domain.dim": "2",
    "domain.period": "6.283185307179586",
    "domain.lambda0": "0.5",
    "domain.plateau": "0.2",
    "grid.lateral": "16",
    "grid.vertical": "16",
    "grid.levels": "17",
    "grid.horizon": "0.08",
    # the kernel sweep reaches eps*t = 2.5e-3, which needs a finer lattice
    # than the solver runs; kernels are pure FFT work, so this stays cheap
    "kernel.lateral": "128",
    # reduced-symbol decay constant B = A a+ a- / (m (a+ + a-)) = 1; the
    # envelope constant of the eps = 0 kernel scales like 1/B^d, so a small
    # B spreads the fitted constants apart for real, not by mismeasurement
    "kernel.a_plus": "2.0",
    "kernel.a_minus": "2.0",
    "kernel.coupling": "1.0",
    "model.a_plus": "0.8",
    "model.a_minus": "1.6",
    "model.m": "1.0",
    "model.eps": "0.02",
    "model.nu": "1e-8",
    "model.coupling": "1.0",
    "model.b_plus": "1.0",
    "model.b_minus": "1.0",
    "model.drift_plus": "0.0",
    "model.drift_minus": "0.0",
    "model.source_plus": "softsin:0.5,0.2",
    "model.source_minus": "linear:0.8",
    "model.wall_plus": "pump:0.6,0.04,1",
    "model.wall_minus": "const:-0.5",
    "solve.alpha": "0.5",
    "solve.tol": "1e-8",
    "solve.inner_tol": "1e-10",
    "solve.max_outer": "25",
    "solve.max_inner": "40",
    "solve.max_halvings": "3",
    "solve.kappa_max": "0.9",
    "solve.continue_to_zero": "true",
    "sweep.eps_values": "1,0.1,0.01",
    "sweep.times": "0.25,1",
    "sweep.dims": "2,3",
    "sweep.bound_eps": "1,0.1,0.01,0.001",
    "oracle.points": "1024",
    "oracle.substeps": "4",
    "gates.moment": "1e-6",
    "gates.agreement": "1e-6",
    "gates.bound_spread": "2.0",
    "gates.ratio_spread": "3.0",
    "gates.exact": "1e-8",
    "gates.residual": "5e-2",
    "gates.deviation": "1e-3",
    "gates.oracle": "1e-5",
}

# Mode-dependent defaults; a config file always wins over these.  The
# oracle comparison needs laterally constant walls, and its mean
# interface mode contracts slower than laterally modulated forcing, so
# it gets a larger iteration budget.
MODE_DEFAULTS = {
    # the model bulk residual probes the lattice laplacian of analytic
    # mode profiles, an O(hz^2) floor: about 9e-3 at the default nz = 16
    "model-solve": {"gates.residual": "3e-2"},
    "linear-solve": {"gates.residual": "2e-2"},
    "oracle-compare": {"model.wall_plus": "pulse:0.6,0.04",
                       "solve.max_outer": "30",
                       # the trajectory gap against the dense line oracle
                       # is O(hz^2): 5.8e-3 at nz = 16, 1.1e-4 at nz = 32
                       "grid.vertical": "32"},
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved, validated parameters of one run.

    ``resolved`` keeps the full effective key/value mapping (defaults
    merged under the file and command-line overrides) as sorted pairs;
    the report hash is taken over it.
    """

    mode: str
    out: str
    seed: int
    dim: int
    period: float
    lambda0: float
    plateau: float
    lateral: int
    vertical: int
    levels: int
    horizon: float
    kernel_lateral: int
    kernel_a_plus: float
    kernel_a_minus: float
    kernel_coupling: float
    a_plus: float
    a_minus: float
    m: float
    eps: float
    nu: float
    coupling: float
    b_plus: float
    b_minus: float
    drift_plus: float
    drift_minus: float
    source_plus: str
    source_minus: str
    wall_plus: str
    wall_minus: str
    alpha: float
    tol: float
    inner_tol: float
    max_outer: int
    max_inner: int
    max_halvings: int
    kappa_max: float
    continue_to_zero: bool
    eps_values: tuple
    times: tuple
    dims: tuple
    bound_eps: tuple
    oracle_points: int
    oracle_substeps: int
    moment_gate: float
    agreement_gate: float
    bound_spread_gate: float
    ratio_spread_gate: float
    exact_gate: float
    residual_gate: float
    deviation_gate: float
    oracle_gate: float
    resolved: tuple


# ---------------------------------------------------------------------------
# typed value parsing


def _get_float(raw, key, *, lo=None, hi=None, strict_lo=False):
    try:
        val = float(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw[key]!r}") \
            from None
    if not np.isfinite(val):
        raise ConfigError(f"{key} must be finite, got {raw[key]!r}")
    if lo is not None and (val <= lo if strict_lo else val < lo):
        op = ">" if strict_lo else ">="
        raise ConfigError(f"{key} must be {op} {lo:g}, got {val:g}")
    if hi is not None and val > hi:
        raise ConfigError(f"{key} must be <= {hi:g}, got {val:g}")
    return val


def _get_int(raw, key, *, lo=None):
    try:
        val = int(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw[key]!r}") \
            from None
    if lo is not None and val < lo:
        raise ConfigError(f"{key} must be >= {lo}, got {val}")
    return val


def _get_bool(raw, key):
    text = raw[key].strip().lower()
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {raw[key]!r}")


def _get_floats(raw, key, *, lo=None, strict_lo=False):
    parts = [p.strip() for p in raw[key].split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"{key} must list at least one number")
    out = []
    for part in parts:
        out.append(_get_float({key: part}, key, lo=lo, strict_lo=strict_lo))
    return tuple(out)


def _get_dims(raw, key):
    parts = [p.strip() for p in raw[key].split(",") if p.strip()]
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{key} must list integers, got {raw[key]!r}") \
            from None
    if not dims or any(d not in (2, 3) for d in dims):
        raise ConfigError(f"{key} entries must be 2 or 3, got {raw[key]!r}")
    return dims


# ---------------------------------------------------------------------------
# data presets


@dataclass(frozen=True)
class SourcePreset:
    """Pointwise bulk source u -> f(u) with a positive derivative floor."""

    text: str
    f: object
    fprime: object
    floor: float


def parse_source(text, key):
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    args = [p.strip() for p in rest.split(",")] if rest.strip() else []
    try:
        vals = [float(a) for a in args]
    except ValueError:
        raise ConfigError(f"{key}: arguments must be numbers in {text!r}") \
            from None
    if kind == "linear":
        if len(vals) != 1:
            raise ConfigError(f"{key}: linear takes one coefficient")
        c = vals[0]
        floor = c
        f = lambda u, c=c: c * u                          # noqa: E731
        fp = lambda u, c=c: c + 0.0 * u                   # noqa: E731
    elif kind == "softsin":
        if len(vals) != 2:
            raise ConfigError(f"{key}: softsin takes two coefficients")
        c, d = vals
        floor = c - abs(d)
        f = lambda u, c=c, d=d: c * u + d * np.sin(u)     # noqa: E731
        fp = lambda u, c=c, d=d: c + d * np.cos(u)        # noqa: E731
    else:
        raise ConfigError(
            f"{key}: unknown source preset {kind!r} "
            "(use linear:c or softsin:c,d)")
    if not floor > 0:
        raise ConfigError(
            f"{key}: the source derivative must be bounded below by a "
            f"positive constant; {text!r} has floor {floor:g}")
    return SourcePreset(text, f, fp, floor)


@dataclass(frozen=True)
class WallPreset:
    """Outer Dirichlet datum; laterally constant presets also provide a
    plain function of time for the line oracle."""

    text: str
    kind: str
    vals: tuple

    @property
    def lateral_constant(self):
        return self.kind in ("const", "pulse")

    def sample(self, grid):
        times = grid.times
        lat = grid.lat
        if self.kind == "const":
            return np.full((grid.nt,) + lat.shape, self.vals[0])
        ramp = np.sin(np.pi * times / grid.horizon) ** 2
        if self.kind == "pulse":
            flat = self.vals[0] + self.vals[1] * ramp
            return np.broadcast_to(
                flat.reshape((grid.nt,) + (1,) * lat.ndim),
                (grid.nt,) + lat.shape).copy()
        mesh = np.meshgrid(*lat.coords(), indexing="ij")
        wave = np.cos(self.vals[2] * (2.0 * np.pi / lat.period) * mesh[0])
        return self.vals[0] + self.vals[1] * ramp.reshape(
            (grid.nt,) + (1,) * lat.ndim) * wave

    def line(self, horizon):
        if self.kind == "const":
            return lambda t, v=self.vals[0]: v
        if self.kind == "pulse":
            v0, amp = self.vals[:2]
            return lambda t, v0=v0, amp=amp, T=horizon: \
                v0 + amp * np.sin(np.pi * t / T) ** 2
        raise ConfigError(
            f"wall preset {self.text!r} is laterally varying; the line "
            "oracle needs laterally constant data")


def parse_wall(text, key):
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    args = [p.strip() for p in rest.split(",")] if rest.strip() else []
    want = {"const": 1, "pulse": 2, "pump": 3}
    if kind not in want:
        raise ConfigError(
            f"{key}: unknown wall preset {kind!r} "
            "(use const:v, pulse:v0,amp or pump:v0,amp,k)")
    try:
        vals = tuple(float(a) for a in args)
    except ValueError:
        raise ConfigError(f"{key}: arguments must be numbers in {text!r}") \
            from None
    if len(vals) != want[kind]:
        raise ConfigError(
            f"{key}: {kind} takes {want[kind]} argument(s), got {len(vals)}")
    if kind == "pump" and vals[2] != int(vals[2]):
        raise ConfigError(
            f"{key}: the pump mode number must be an integer, got {vals[2]:g}")
    return WallPreset(text, kind, vals)


# ---------------------------------------------------------------------------
# loading


def load_config(path, *, mode=None, out=None):
    """Parse, resolve and validate a config file into a RunConfig.

    ``mode`` and ``out`` are command-line overrides applied before the
    required-key check, so either may live in the file or on the
    command line.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    raw = {f"{sec}.{key}": val
           for sec in parser.sections()
           for key, val in parser.items(sec)}
    if mode is not None:
        raw["run.mode"] = mode
    if out is not None:
        raw["run.out"] = out
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key: {key}")
    unknown = sorted(k for k in raw if k not in DEFAULTS and k not in REQUIRED)
    if unknown:
        raise ConfigError(f"unknown configuration key: {unknown[0]}")
    run_mode = raw["run.mode"].strip()
    if run_mode not in MODES:
        raise ConfigError(
            f"run.mode must be one of {', '.join(sorted(MODES))}; "
            f"got {run_mode!r}")

    resolved = dict(DEFAULTS)
    resolved.update(MODE_DEFAULTS.get(run_mode, {}))
    resolved.update(raw)
    r = resolved

    dim = _get_int(r, "domain.dim")
    if dim not in (2, 3):
        raise ConfigError(f"domain.dim must be 2 or 3, got {dim}")
    cfg = RunConfig(
        mode=run_mode,
        out=r["run.out"],
        seed=_get_int(r, "run.seed", lo=0),
        dim=dim,
        period=_get_float(r, "domain.period", lo=0.0, strict_lo=True),
        lambda0=_get_float(r, "domain.lambda0", lo=0.0, strict_lo=True),
        plateau=_get_float(r, "domain.plateau", lo=0.0, strict_lo=True),
        lateral=_get_int(r, "grid.lateral", lo=4),
        vertical=_get_int(r, "grid.vertical", lo=4),
        levels=_get_int(r, "grid.levels", lo=3),
        horizon=_get_float(r, "grid.horizon", lo=0.0, strict_lo=True),
        kernel_lateral=_get_int(r, "kernel.lateral", lo=8),
        kernel_a_plus=_get_float(r, "kernel.a_plus", lo=0.0, strict_lo=True),
        kernel_a_minus=_get_float(r, "kernel.a_minus", lo=0.0,
                                  strict_lo=True),
        kernel_coupling=_get_float(r, "kernel.coupling", lo=0.0,
                                   strict_lo=True),
        a_plus=_get_float(r, "model.a_plus", lo=0.0, strict_lo=True),
        a_minus=_get_float(r, "model.a_minus", lo=0.0, strict_lo=True),
        m=_get_float(r, "model.m", lo=0.0, strict_lo=True),
        eps=_get_float(r, "model.eps", lo=0.0),
        nu=_get_float(r, "model.nu", lo=0.0, strict_lo=True),
        coupling=_get_float(r, "model.coupling", lo=0.0, strict_lo=True),
        b_plus=_get_float(r, "model.b_plus", lo=0.0, strict_lo=True),
        b_minus=_get_float(r, "model.b_minus", lo=0.0, strict_lo=True),
        drift_plus=_get_float(r, "model.drift_plus"),
        drift_minus=_get_float(r, "model.drift_minus"),
        source_plus=r["model.source_plus"],
        source_minus=r["model.source_minus"],
        wall_plus=r["model.wall_plus"],
        wall_minus=r["model.wall_minus"],
        alpha=_get_float(r, "solve.alpha", lo=0.0, hi=1.0, strict_lo=True),
        tol=_get_float(r, "solve.tol", lo=0.0, strict_lo=True),
        inner_tol=_get_float(r, "solve.inner_tol", lo=0.0, strict_lo=True),
        max_outer=_get_int(r, "solve.max_outer", lo=1),
        max_inner=_get_int(r, "solve.max_inner", lo=3),
        max_halvings=_get_int(r, "solve.max_halvings", lo=0),
        kappa_max=_get_float(r, "solve.kappa_max", lo=0.0, hi=1.0,
                             strict_lo=True),
        continue_to_zero=_get_bool(r, "solve.continue_to_zero"),
        eps_values=_get_floats(r, "sweep.eps_values", lo=0.0, strict_lo=True),
        times=_get_floats(r, "sweep.times", lo=0.0, strict_lo=True),
        dims=_get_dims(r, "sweep.dims"),
        bound_eps=_get_floats(r, "sweep.bound_eps", lo=0.0, strict_lo=True),
        oracle_points=_get_int(r, "oracle.points", lo=4),
        oracle_substeps=_get_int(r, "oracle.substeps", lo=1),
        moment_gate=_get_float(r, "gates.moment", lo=0.0, strict_lo=True),
        agreement_gate=_get_float(r, "gates.agreement", lo=0.0,
                                  strict_lo=True),
        bound_spread_gate=_get_float(r, "gates.bound_spread", lo=1.0),
        ratio_spread_gate=_get_float(r, "gates.ratio_spread", lo=1.0),
        exact_gate=_get_float(r, "gates.exact", lo=0.0, strict_lo=True),
        residual_gate=_get_float(r, "gates.residual", lo=0.0, strict_lo=True),
        deviation_gate=_get_float(r, "gates.deviation", lo=0.0,
                                  strict_lo=True),
        oracle_gate=_get_float(r, "gates.oracle", lo=0.0, strict_lo=True),
        resolved=tuple(sorted(resolved.items())),
    )
    _precheck(cfg)
    return cfg


def _precheck(cfg):
    """Validate derived objects against module preconditions up front."""
    try:
        DomainSpec(cfg.dim, cfg.period, cfg.lambda0, cfg.plateau)
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from None
    parse_source(cfg.source_plus, "model.source_plus")
    parse_source(cfg.source_minus, "model.source_minus")
    parse_wall(cfg.wall_plus, "model.wall_plus")
    parse_wall(cfg.wall_minus, "model.wall_minus")
    if cfg.mode in ("kernel-check", "model-solve"):
        bad = [e for e in cfg.eps_values + cfg.bound_eps if e > 1.0]
        if bad:
            raise ConfigError(
                f"sweep eps values must lie in (0, 1], got {bad[0]:g}")
    if cfg.mode == "kernel-check":
        # the moment sweep evaluates kernels directly on this lattice;
        # mirror the aliasing guard so a hopeless lattice fails at load
        for dim in cfg.dims:
            lat = LateralGrid((cfg.kernel_lateral,) * (dim - 1), cfg.period)
            for eps in cfg.eps_values:
                pars = _model_params(cfg, dim, eps, kernel=True)
                for t in cfg.times:
                    try:
                        _require_resolved(lat, t, pars, 1e-4)
                    except ValueError as exc:
                        raise ConfigError(f"kernel.lateral: {exc}") from None
    if cfg.mode == "oracle-compare":
        for key, text in (("model.wall_plus", cfg.wall_plus),
                          ("model.wall_minus", cfg.wall_minus)):
            if not parse_wall(text, key).lateral_constant:
                raise ConfigError(
                    f"{key}: oracle comparison needs laterally constant "
                    f"wall data, got {text!r}")


# ---------------------------------------------------------------------------
# synthetic smooth fields (seeded, laterally mean-free)


def _trig_lateral(lat, rng, kmax=2):
    """Random low-mode trigonometric polynomial with zero lateral mean.

    Integer modes below the Nyquist limit sum to zero exactly on the
    lattice, so mean-free holds to rounding, which the model reduction
    requires of its data.
    """
    mesh = np.meshgrid(*lat.coords(), indexing="ij")
    base = 2.0 * np.pi / lat.period
    out = np.zeros(lat.shape)
    if lat.ndim == 1:
        modes = [(k,) for k in range(1, kmax + 1)]
    else:
        modes = [(k1, k2) for k1 in range(kmax + 1)
                 for k2 in range(-kmax, kmax + 1)
                 if (k1, k2) > (0, 0) or (k1 == 0 and k2 > 0)]
    for mode in modes:
        phase = sum(base * k * x for k, x in zip(mode, mesh))
        out = out + rng.normal() * np.cos(phase + rng.uniform(0, 2 * np.pi))
    return out / len(modes)


def _ramp(grid):
    t = grid.times / grid.horizon
    return (t * t).reshape((grid.nt,) + (1,) * grid.lat.ndim)


def _random_interface_field(grid, rng, amp=1.0):
    return amp * _ramp(grid) * _trig_lateral(grid.lat, rng)


def _random_bulk_field(grid, rng, side, amp=1.0):
    z = grid.z_plus if side == "plus" else grid.z_minus
    profile = np.cos(0.5 * np.pi * z) + 0.3 * np.sin(np.pi * z)
    lateral = _trig_lateral(grid.lat, rng)
    return amp * _ramp(grid)[..., None] * lateral[None, ..., None] \
        * profile.reshape((1,) * (1 + grid.lat.ndim) + (-1,))


# ---------------------------------------------------------------------------
# modes


def _model_params(cfg, dim, eps, *, kernel=False):
    drift_p = (cfg.drift_plus,) * (dim - 1)
    drift_m = (cfg.drift_minus,) * (dim - 1)
    if kernel:
        a_p, a_m, coupling = (cfg.kernel_a_plus, cfg.kernel_a_minus,
                              cfg.kernel_coupling)
    else:
        a_p, a_m, coupling = cfg.a_plus, cfg.a_minus, cfg.coupling
    try:
        return ModelParams(a_p, a_m, coupling, float(eps),
                           m=cfg.m, h_plus=drift_p, h_minus=drift_m)
    except ValueError as exc:
        raise ConfigError(f"model parameters: {exc}") from None


def _mode_kernel_check(cfg, rng, out):
    checks = []
    moment_rows = []
    agree_rows = []
    worst_mass = 0.0
    worst_first = 0.0
    worst_agree = 0.0
    for dim in cfg.dims:
        lat = LateralGrid((cfg.kernel_lateral,) * (dim - 1), cfg.period)
        for eps in cfg.eps_values:
            pars = _model_params(cfg, dim, eps, kernel=True)
            for t in cfg.times:
                built = {}
                for method in ("fourier", "convolution"):
                    mom = kernel_moments(lat, t, pars, method=method)
                    mass_err = abs(mom["zeroth"] - 1.0)
                    first_err = max(abs(v) for v in mom["first"])
                    worst_mass = max(worst_mass, mass_err)
                    worst_first = max(worst_first, first_err)
                    moment_rows.append((dim, eps, t, method, mom["zeroth"],
                                        mass_err, first_err))
                    built[method] = kernel_K_eps(lat, t, pars, method=method)
                gap = np.abs(built["fourier"] - built["convolution"]).max()
                rel = float(gap / np.abs(built["fourier"]).max())
                worst_agree = max(worst_agree, rel)
                agree_rows.append((dim, eps, t, rel))
    checks.append({"name": "kernel_mass", "worst": worst_mass,
                   "gate": cfg.moment_gate,
                   "passed": worst_mass <= cfg.moment_gate})
    checks.append({"name": "kernel_derivative_mass", "worst": worst_first,
                   "gate": cfg.moment_gate,
                   "passed": worst_first <= cfg.moment_gate})
    checks.append({"name": "kernel_cross_agreement", "worst": worst_agree,
                   "gate": cfg.agreement_gate,
                   "passed": worst_agree <= cfg.agreement_gate})

    bound_rows = []
    worst_spread = 0.0
    fits = {}
    for dim in cfg.dims:
        lat = LateralGrid((cfg.kernel_lateral,) * (dim - 1), cfg.period)
        res = kernel_bound_check(lat,
                                 _model_params(cfg, dim, cfg.bound_eps[0],
                                               kernel=True),
                                 cfg.bound_eps)
        for rec in res["records"]:
            bound_rows.append((dim, rec["eps"],
                               " ".join(str(c) for c in rec["r"]), rec["C"]))
        for order, ratio in res["ratios"].items():
            fits[f"dim{dim}:" + ",".join(str(c) for c in order)] = ratio
            worst_spread = max(worst_spread, ratio)
    checks.append({"name": "kernel_bound_uniformity", "worst": worst_spread,
                   "gate": cfg.bound_spread_gate, "spreads": fits,
                   "passed": worst_spread <= cfg.bound_spread_gate})

    tables = {
        "kernel_moments.csv": (("dim", "eps", "t", "method", "mass",
                                "mass_error", "derivative_mass"),
                               moment_rows),
        "kernel_agreement.csv": (("dim", "eps", "t", "relative_gap"),
                                 agree_rows),
        "ledger.csv": (("dim", "eps", "order", "fitted_constant"),
                       bound_rows),
    }
    return checks, tables, {}


def _mode_model_solve(cfg, rng, out):
    grid = make_grid(cfg.dim, cfg.lateral, cfg.vertical, cfg.levels,
                     cfg.horizon, cfg.period)
    rhs = ModelRHS(grid,
                   _random_bulk_field(grid, rng, "plus"),
                   _random_bulk_field(grid, rng, "minus"),
                   _random_interface_field(grid, rng),
                   _random_interface_field(grid, rng),
                   _random_interface_field(grid, rng))
    rows = []
    ratios = []
    worst_res = 0.0
    sweep = []
    for eps in cfg.eps_values:
        pars = _model_params(cfg, cfg.dim, eps)
        sol = model_solve_full(rhs, pars)
        res = model_residuals(sol, rhs, pars)
        ratio = apriori_norm_ratio(sol, rhs, cfg.alpha)
        law_worst = max(res.values())
        worst_res = max(worst_res, law_worst)
        ratios.append(ratio["ratio"])
        rows.append((eps, ratio["ratio"], law_worst))
        sweep.append({"eps": eps, "ratio": ratio, "residuals": res})
    spread = max(ratios) / min(ratios)
    checks = [
        {"name": "model_residuals", "worst": worst_res,
         "gate": cfg.residual_gate, "passed": worst_res <= cfg.residual_gate},
        {"name": "apriori_uniformity", "spread": spread,
         "gate": cfg.ratio_spread_gate, "ratios": list(ratios),
         "passed": spread <= cfg.ratio_spread_gate},
    ]
    tables = {"ledger.csv": (("eps", "norm_ratio", "worst_residual"), rows)}
    return checks, tables, {"sweep": sweep}


def _mode_linear_solve(cfg, rng, out):
    grid = make_grid(cfg.dim, cfg.lateral, cfg.vertical, cfg.levels,
                     cfg.horizon, cfg.period)
    dim = cfg.dim
    data = LinearProblemData(
        grid, cfg.a_plus / cfg.m, cfg.a_minus / cfg.m, cfg.eps,
        b_plus=cfg.b_plus, b_minus=cfg.b_minus, A=cfg.coupling,
        h_plus=(cfg.drift_plus,) * (dim - 1),
        h_minus=(cfg.drift_minus,) * (dim - 1),
        f1_plus=_random_bulk_field(grid, rng, "plus"),
        f1_minus=_random_bulk_field(grid, rng, "minus"),
        f2=_random_interface_field(grid, rng),
        f3_plus=_random_interface_field(grid, rng),
        f3_minus=_random_interface_field(grid, rng),
        f4_plus=_random_interface_field(grid, rng, amp=0.5),
        f4_minus=_random_interface_field(grid, rng, amp=0.5),
        nu=cfg.nu)
    u, rho, ledger = solve_linear_problem(
        data, alpha=cfg.alpha, tol=cfg.inner_tol, max_iter=cfg.max_inner,
        kappa_margin=cfg.kappa_max, max_halvings=cfg.max_halvings)
    res = linear_residuals(u, rho, data)
    exact_worst = max(res["jump"], res["wall_plus"], res["wall_minus"],
                      res["start"])
    law_worst = max(res["kinematic_plus"], res["kinematic_minus"],
                    res["bulk_plus"], res["bulk_minus"])
    kappa = ledger.contraction_factor
    checks = [
        {"name": "converged", "passed": bool(ledger.converged)},
        {"name": "contraction", "kappa": kappa, "gate": cfg.kappa_max,
         "passed": kappa is None or kappa < cfg.kappa_max},
        {"name": "exact_identities", "worst": exact_worst,
         "gate": cfg.exact_gate, "passed": exact_worst <= cfg.exact_gate},
        {"name": "equation_residuals", "worst": law_worst,
         "gate": cfg.residual_gate, "passed": law_worst <= cfg.residual_gate},
    ]
    rows = []
    for w, row in enumerate(ledger.windows):
        for i, diff in enumerate(row["diffs"]):
            rows.append((w, row["t0"], row["t1"], i, diff))
    tables = {"ledger.csv": (("window", "t0", "t1", "iteration",
                              "difference"), rows)}
    return checks, tables, {"ledger": ledger.as_dict()}


def _build_problem(cfg):
    grid = make_grid(cfg.dim, cfg.lateral, cfg.vertical, cfg.levels,
                     cfg.horizon, cfg.period)
    domain = DomainSpec(cfg.dim, cfg.period, cfg.lambda0, cfg.plateau)
    src_p = parse_source(cfg.source_plus, "model.source_plus")
    src_m = parse_source(cfg.source_minus, "model.source_minus")
    wall_p = parse_wall(cfg.wall_plus, "model.wall_plus")
    wall_m = parse_wall(cfg.wall_minus, "model.wall_minus")
    problem = TwoPhaseProblem(
        grid, domain, cfg.a_plus, cfg.a_minus,
        f_plus=src_p.f, f_minus=src_m.f,
        fprime_plus=src_p.fprime, fprime_minus=src_m.fprime,
        g_plus=wall_p.sample(grid), g_minus=wall_m.sample(grid),
        m=cfg.m, eps=cfg.eps, nu=cfg.nu)
    return problem, (src_p, src_m, wall_p, wall_m)


def _solve_tables(grid, rho, report):
    rows = []
    stages = [("regularized", report["attempts"][-1].get("stage"))]
    if report.get("continuation"):
        stages.append(("continuation", report["continuation"]))
    for label, stage in stages:
        if stage is None:
            continue
        for i, diff in enumerate(stage["diffs"]):
            rows.append((label, i, diff))
    tables = {"ledger.csv": (("stage", "iteration", "difference"), rows)}

    flat = rho[-1].reshape(-1)
    mesh = np.meshgrid(*grid.lat.coords(), indexing="ij")
    if grid.lat.ndim == 1:
        final = (("x", "rho"),
                 list(zip(mesh[0].reshape(-1), flat)))
    else:
        final = (("x", "y", "rho"),
                 list(zip(mesh[0].reshape(-1), mesh[1].reshape(-1), flat)))
    tables["interface_final.csv"] = final

    axes = tuple(range(1, rho.ndim))
    tables["interface_path.csv"] = (
        ("t", "rho_min", "rho_mean", "rho_max"),
        list(zip(grid.times, rho.min(axis=axes), rho.mean(axis=axes),
                 rho.max(axis=axes))))
    return tables


def _solve_checks(cfg, report):
    verify = report["verify"]
    exact_worst = max(verify["trace_continuity"], verify["wall_plus"],
                      verify["wall_minus"], verify["start_rho"],
                      verify["start_plus"], verify["start_minus"])
    law_worst = max(verify["kinematic_plus"], verify["kinematic_minus"],
                    verify["flux_balance"])
    bulk_worst = max(verify["bulk_pde_plus"], verify["bulk_pde_minus"])
    kappa = report["kappa"]
    converged = report["converged"]
    if report.get("continuation"):
        converged = converged and report["continuation"]["converged"]
    return [
        {"name": "converged", "iterations": report["iterations"],
         "passed": bool(converged)},
        {"name": "contraction", "kappa": kappa, "gate": cfg.kappa_max,
         "passed": kappa is None or kappa < cfg.kappa_max},
        {"name": "exact_identities", "worst": exact_worst,
         "gate": cfg.exact_gate, "passed": exact_worst <= cfg.exact_gate},
        {"name": "interface_laws", "worst": law_worst,
         "gate": cfg.residual_gate, "passed": law_worst <= cfg.residual_gate},
        {"name": "bulk_equations", "worst": bulk_worst,
         "gate": cfg.residual_gate,
         "passed": bulk_worst <= cfg.residual_gate},
        {"name": "admissible", "margin": verify["collar_margin"],
         "passed": verify["collar_margin"] > 0.0},
    ]


def _mode_nonlinear_solve(cfg, rng, out):
    problem, _ = _build_problem(cfg)
    sol = solve_nonlinear(
        problem, alpha=cfg.alpha, tol=cfg.tol, max_outer=cfg.max_outer,
        kappa_max=cfg.kappa_max, max_halvings=cfg.max_halvings,
        continue_to_zero=cfg.continue_to_zero, verify=True,
        inner_tol=cfg.inner_tol, inner_max_iter=cfg.max_inner)
    checks = _solve_checks(cfg, sol.report)
    tables = _solve_tables(sol.frame.grid, sol.rho, sol.report)
    return checks, tables, {"solve": sol.report}


def _mode_oracle_compare(cfg, rng, out):
    problem, (src_p, src_m, wall_p, wall_m) = _build_problem(cfg)
    sol = solve_nonlinear(
        problem, alpha=cfg.alpha, tol=cfg.tol, max_outer=cfg.max_outer,
        kappa_max=cfg.kappa_max, max_halvings=cfg.max_halvings,
        continue_to_zero=cfg.continue_to_zero, verify=True,
        inner_tol=cfg.inner_tol, inner_max_iter=cfg.max_inner)
    grid = sol.frame.grid
    rho = sol.rho
    axes = tuple(range(1, rho.ndim))
    spread = float((rho.max(axis=axes) - rho.min(axis=axes)).max())
    path = rho.reshape(grid.nt, -1)[:, 0]

    line = LineData(cfg.a_plus, cfg.a_minus,
                    f_plus=src_p.f, f_minus=src_m.f,
                    fprime_plus=src_p.fprime, fprime_minus=src_m.fprime,
                    g_plus=wall_p.line(grid.horizon),
                    g_minus=wall_m.line(grid.horizon), m=cfg.m)
    fine, self_gap = self_converged_trajectory(
        line, grid.times, n=cfg.oracle_points, substeps=cfg.oracle_substeps)
    scale = max(float(np.abs(fine).max()), float(np.abs(path).max()), 1e-12)
    deviation = float(np.abs(path - fine).max()) / scale

    checks = _solve_checks(cfg, sol.report)
    checks += [
        {"name": "laterally_constant", "spread": spread, "gate": 1e-8,
         "passed": spread <= 1e-8},
        {"name": "oracle_self_convergence", "gap": self_gap,
         "gate": cfg.oracle_gate, "passed": self_gap <= cfg.oracle_gate},
        {"name": "trajectory_agreement", "deviation": deviation,
         "gate": cfg.deviation_gate,
         "passed": deviation <= cfg.deviation_gate},
    ]
    tables = _solve_tables(grid, rho, sol.report)
    tables["interface_compare.csv"] = (
        ("t", "strip", "oracle", "difference"),
        list(zip(grid.times, path, fine, path - fine)))
    extra = {"solve": sol.report,
             "oracle": {"points": cfg.oracle_points,
                        "substeps": cfg.oracle_substeps,
                        "self_convergence": self_gap,
                        "deviation": deviation, "scale": scale}}
    return checks, tables, extra


def _mode_holder_check(cfg, rng, out):
    grid = make_grid(cfg.dim, cfg.lateral, cfg.vertical, cfg.levels,
                     cfg.horizon, cfg.period)
    per = (True,) * grid.lat.ndim
    u = GridFunction(_random_interface_field(grid, rng), grid.lat.spacing,
                     grid.dt, per)
    v = GridFunction(_random_interface_field(grid, rng), grid.lat.spacing,
                     grid.dt, per)
    static = GridFunction(
        np.broadcast_to(_trig_lateral(grid.lat, rng),
                        (grid.nt,) + grid.lat.shape).copy(),
        grid.lat.spacing, grid.dt, per)
    alpha = cfg.alpha
    scale = 3.0

    eu = e_norm(u, 2, alpha).e_norm
    ev = e_norm(v, 2, alpha).e_norm
    esum = e_norm(u.map_values(lambda w: w + v.values), 2, alpha).e_norm
    escaled = e_norm(u.map_values(lambda w: scale * w), 2, alpha).e_norm
    pu = p_norm(u, alpha).p_norm
    pscaled = p_norm(u.map_values(lambda w: scale * w), alpha).p_norm
    orders = [e_norm(u, k, alpha).e_norm for k in range(3)]
    est = e_norm(static, 2, alpha)
    zero = GridFunction(np.zeros((grid.nt,) + grid.lat.shape),
                        grid.lat.spacing, grid.dt, per)
    ezero = e_norm(zero, 2, alpha).e_norm

    tiny = 1e-12
    checks = [
        {"name": "homogeneity_bulk",
         "error": abs(escaled - scale * eu) / (scale * eu),
         "passed": abs(escaled - scale * eu) <= tiny * scale * eu},
        {"name": "homogeneity_interface",
         "error": abs(pscaled - scale * pu) / (scale * pu),
         "passed": abs(pscaled - scale * pu) <= tiny * scale * pu},
        {"name": "triangle_inequality", "lhs": esum, "rhs": eu + ev,
         "passed": esum <= (eu + ev) * (1.0 + tiny)},
        {"name": "order_monotonicity", "values": orders,
         "passed": orders[0] <= orders[1] * (1 + tiny)
         and orders[1] <= orders[2] * (1 + tiny)},
        {"name": "static_time_parts", "time": est.time_seminorm,
         "mixed": est.mixed,
         "passed": est.time_seminorm == 0.0 and est.mixed == 0.0},
        {"name": "zero_field", "value": ezero, "passed": ezero == 0.0},
    ]
    rows = [(c["name"], 1.0 if c["passed"] else 0.0) for c in checks]
    tables = {"ledger.csv": (("check", "passed"), rows)}
    return checks, tables, {}


MODES = {
    "kernel-check": _mode_kernel_check,
    "model-solve": _mode_model_solve,
    "linear-solve": _mode_linear_solve,
    "nonlinear-solve": _mode_nonlinear_solve,
    "oracle-compare": _mode_oracle_compare,
    "holder-check": _mode_holder_check,
}


def run(cfg):
    """Execute one configured run; returns the process exit code.

    The report is written even when the run fails, with the failure
    recorded under ``error``; only an unusable configuration path can
    prevent that.  No timestamps enter the report: identical
    configuration and seed must give identical bytes.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    checks, tables, extra = [], {}, {}
    error = None
    code = 0
    try:
        checks, tables, extra = MODES[cfg.mode](cfg, rng, out)
    except (ConfigError, ValueError) as exc:
        error = {"kind": "config", "message": str(exc)}
        code = 2
    except ContractionFailure as exc:
        ledger = exc.ledger
        error = {"kind": "solver", "message": str(exc),
                 "ledger": ledger.as_dict() if hasattr(ledger, "as_dict")
                 else ledger}
        code = 3
    except RuntimeError as exc:
        error = {"kind": "solver", "message": str(exc)}
        code = 3
    passed = error is None and all(bool(c["passed"]) for c in checks)
    report = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": dict(cfg.resolved),
        "config_hash": config_hash(dict(cfg.resolved)),
        "versions": version_stamp(),
        "checks": checks,
        "passed": passed,
        "error": error,
    }
    report.update(extra)
    write_report(out / "report.json", report)
    for name, (header, rows) in tables.items():
        write_csv(out / name, header, rows)
    if code:
        return code
    return 0 if passed else 1
