"""Sum-of-squares bounds on time averages of polynomial ODEs, and the periodic orbits that nearly attain them."""

from .dynamics import OdeSystem, integrate, make_system, monodromy, time_average
from .localize import build_indicator_poly, harvest, SamplerConfig
from .polyalg import Polynomial, SymmetryGroup, LinearSymmetry, parse_polynomial
from .sdp import SdpProblem, solve_sdp
from .sos import BoundCertificate, SemialgebraicSet, VAnsatz, compile_bound_problem, solve_bound
from .upo import OrbitGuess, close_orbit, orbit_average

__all__ = [
    "BoundCertificate",
    "LinearSymmetry",
    "OdeSystem",
    "OrbitGuess",
    "Polynomial",
    "SamplerConfig",
    "SdpProblem",
    "SemialgebraicSet",
    "SymmetryGroup",
    "VAnsatz",
    "build_indicator_poly",
    "close_orbit",
    "compile_bound_problem",
    "harvest",
    "integrate",
    "make_system",
    "monodromy",
    "orbit_average",
    "parse_polynomial",
    "solve_bound",
    "solve_sdp",
    "time_average",
]
