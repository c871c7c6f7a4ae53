# Van der Pol in Lienard form: a bound on the largest average of x^2,
# the points where the certificate is nearly tight, and the cycle they sit on.
import numpy as np

from sosupo.dynamics import make_system
from sosupo.localize import SamplerConfig, build_indicator_poly, harvest
from sosupo.sos import VAnsatz, solve_bound
from sosupo.upo import close_orbit, floquet_multipliers, fraction_in_sublevel, orbit_average, recurrence_guesses

vdp = make_system("vanderpol", mu=1.0)
x2 = vdp.observable("x2")
print(vdp.name, "f =", [str(fi) for fi in vdp.f])

# The system commutes with a -> -a, so V can be restricted to even polynomials.
# Raising the degree can only lower the bound.
for d in (2, 4, 6, 8):
    cert = solve_bound(vdp.f, x2, VAnsatz(d, "invariant", vdp.symmetry_group))
    print(f"degree {d}: average of x^2 <= {cert.lam:.8f}")

# P = lambda - f.grad V - x^2 is nonnegative, and its time average along the
# extremal trajectory is lambda minus that trajectory's average, i.e. tiny.
# So the extremal trajectory spends most of its time where P is small.
P = build_indicator_poly(cert)
g = np.linspace(-3, 3, 200)
X, Y = np.meshgrid(g, g)
print("min of P on a grid:", P.values(np.column_stack([X.ravel(), Y.ravel()])).min())

# Minimise P from random starts and keep every iterate below epsilon.
cloud = harvest(P, SamplerConfig(((-3, 3), (-3, 3)), n_starts=50, rng_seed=0), epsilon=0.01)
print(f"{len(cloud)} points with P <= 0.01 from {cloud.stats['runs_with_points']} runs")

# Any of them is a good initial guess: integrate until it comes back, then shoot.
guess = recurrence_guesses(vdp, cloud, horizon=30, near_tol=0.05, max_starts=5)[0]
print(f"recurrence guess: T = {guess.T:.4f}, miss {guess.score:.2e}")
orbit = close_orbit(vdp, guess)
avg = orbit_average(orbit, x2)
print(f"closed orbit: T = {orbit.T:.10f}, closure residual {orbit.closure_residual:.1e}")
print("Floquet multipliers:", np.round(floquet_multipliers(orbit), 8))
print(f"cycle average of x^2 = {avg:.8f}; bound exceeds it by {100 * (cert.lam - avg) / avg:.3f}%")

# With delta = lambda - average, the cycle spends at least 1 - delta/eps of its
# period inside {P <= eps}.
delta = cert.lam - avg
for k in (2, 5, 10):
    print(f"eps = {k} delta: fraction of period inside = {fraction_in_sublevel(orbit, P, k * delta):.4f}")
