import numpy as np

from muskat.geometry import DomainSpec
from muskat.grids import make_grid
from muskat.nonlinear import (IterateState, TwoPhaseProblem,
                              build_initial_frame, compute_residuals,
                              nonlinear_step, reconstruct, solve_nonlinear,
                              verify_solution)


def make_problem(n_lat=16, nz=16, nt=17, T=0.08, eps=0.02, amp=0.05):
    grid = make_grid(2, n_lat, nz, nt, T)
    dom = DomainSpec(2, grid.lat.period)
    x = grid.lat.coords()[0]
    t = grid.times
    gp = 0.6 + amp * (np.sin(np.pi * t / T) ** 2)[:, None] * np.cos(x)[None]
    return TwoPhaseProblem(
        grid=grid, domain=dom, a_plus=0.8, a_minus=1.6,
        f_plus=lambda u: 0.5 * u + 0.2 * np.sin(u),
        f_minus=lambda u: 0.8 * u,
        fprime_plus=lambda u: 0.5 + 0.2 * np.cos(u),
        fprime_minus=lambda u: 0.8 * np.ones_like(np.asarray(u, dtype=float)),
        g_plus=gp, g_minus=-0.5, eps=eps)


p = make_problem()
frame = build_initial_frame(p)
print("rho1 range", frame.rho1.min(), frame.rho1.max())
print("frame log", {k: v for k, v in frame.log.items() if k != "stationary"})

psi0 = IterateState.zero(frame.grid)
res = compute_residuals(psi0, frame, split=True)
print("static defects:")
for k, v in sorted(res.static_defect.items()):
    print(f"  {k:16s} {v:.3e}")
print("sup tot_p", np.abs(res.bulk_total_plus).max(),
      "sup kin_p", np.abs(res.kin_total_plus).max(),
      "sup wall_p", np.abs(res.wall_plus).max())
print("quad at psi=0 (should be ~0):",
      np.abs(res.bulk_quad_plus).max(), np.abs(res.kin_quad_plus).max())
print("jump sup (should be 0):", np.abs(res.jump).max())

psi1, log1 = nonlinear_step(psi0, frame)
print("step1 norm", psi1.norm, "inner kappa",
      log1["inner"]["contraction_factor"])

psi2, log2 = nonlinear_step(psi1, frame)
d1 = psi1.norm
print("step2 norm", psi2.norm)

sol = solve_nonlinear(p, max_outer=12)
r = sol.report
print("converged", r["converged"], "iters", r["iterations"],
      "kappa", r["kappa"], "eps_final", r["eps_final"])
print("diffs", ["%.3e" % d for d in r["attempts"][-1]["stage"]["diffs"]])
ver = r["verify"]
for k in ("bulk_pde_plus", "bulk_pde_minus", "trace_continuity",
          "wall_plus", "wall_minus", "kinematic_plus", "kinematic_minus",
          "flux_balance", "start_rho", "start_plus", "rho_sup"):
    print(f"  {k:18s} {ver[k]:.3e}")
