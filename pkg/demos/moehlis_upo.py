# An unstable periodic orbit of the nine-mode model at Re = 95, closed by
# shooting from a stored guess, and its images under the symmetry group.
import json
import os

import numpy as np

from sosupo.dynamics import make_system
from sosupo.sos import SemialgebraicSet, VAnsatz, solve_bound
from sosupo.upo import OrbitGuess, ShootingSettings, close_orbit, orbit_average, symmetry_images

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, os.pardir, "tests", "data", "moehlis9_re95_upo.json")) as fh:
    stored = json.load(fh)

s = make_system("moehlis9", Re=95)
orbit = close_orbit(s, OrbitGuess(np.array(stored["a0"]), stored["T"], {"source": "stored"}),
                    ShootingSettings(refine_period=False))
print(f"T = {orbit.T:.8f}, closure residual {orbit.closure_residual:.1e}")
print("|multipliers|:", np.round(np.abs(orbit.floquet), 6))

# Sign symmetries map orbits to orbits; some images coincide with the original.
images = symmetry_images(orbit, s.symmetry_group, s)
print(f"{len(images)} distinct images, residuals", [f"{o.closure_residual:.1e}" for o in images])

# A degree-4 upper bound on mean perturbation energy holds for every
# trajectory in the unit ball, this orbit included.
E = s.observable("E")
cert = solve_bound(s.f, E, VAnsatz(4, "invariant", s.symmetry_group), SemialgebraicSet.ball(9, 1.0), weighted=True)
avg = orbit_average(orbit, E)
print(f"orbit average of E = {avg:.6f}, bound {cert.lam:.6f}")
