# The nine-mode shear flow model: its symmetries, what they buy in SDP size,
# and bounds on mean dissipation at a few Reynolds numbers.
import time

import numpy as np

from sosupo.dynamics import IntegratorControl, make_system, time_average
from sosupo.moehlis import energy_cubic_coefficients, generate
from sosupo.sos import VAnsatz, compile_bound_problem, solve_bound

coeffs = generate()
print("largest cubic coefficient of dE/dt:", max(abs(v) for v in energy_cubic_coefficients(coeffs).values()))

s = make_system("moehlis9", Re=100)
print("group:", [g.name or g.signs for g in s.symmetry_group])
D = s.observable("D")

# Averaging V over the group leaves the optimum unchanged but splits the Gram
# matrix into blocks, one per character of the group.
for mode, group in (("full", None), ("invariant", s.symmetry_group)):
    prob = compile_bound_problem(s.f, D, VAnsatz(4, mode, group))
    t = time.perf_counter()
    cert = solve_bound(s.f, D, VAnsatz(4, mode, group), sense="min")
    print(f"{mode:9s}: {prob.size_summary()}  lambda = {cert.lam:.12f}  ({time.perf_counter() - t:.2f} s)")

# The laminar state has D = lambda_1 / Re, and at these Reynolds numbers long
# simulations relax to it, so the upper bound meets the simulated mean.
ctl = IntegratorControl("dop853", rtol=1e-9, atol=1e-11)
for Re in (85, 95, 105):
    s = make_system("moehlis9", Re=Re)
    D = s.observable("D")
    a0 = s.known_equilibria[0] + 0.1 * np.random.default_rng(Re).standard_normal(9)
    Dbar = time_average(s, D, a0, 1e4, 0.0, ctl)
    for d in (2, 4):
        ans = VAnsatz(d, "invariant", s.symmetry_group)
        lo = solve_bound(s.f, D, ans, sense="min").lam
        hi = solve_bound(s.f, D, ans, sense="max").lam
        print(f"Re = {Re:3d}, d = {d}: {lo:.6f} <= {Dbar:.6f} <= {hi:.6f}")
