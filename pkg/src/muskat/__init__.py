"""Two-phase elliptic free-boundary solver on a periodic strip.

Subpackages cover, bottom up: lattice and derivative helpers (grids),
parabolic Holder-norm estimators (holder), the interface-flattening
coordinate map (geometry), the half-space kernel model problem
(model_kernel), two-phase transmission solves and the stationary state
(elliptic), the regularized linear interface problem (linearized), the
nonlinear fixed-point driver (nonlinear), a one-dimensional moving
boundary oracle (oracle1d), and the experiment driver with its report
formats (driver, reporting, cli).
"""

__version__ = "0.1.0"
