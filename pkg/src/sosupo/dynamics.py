"""Polynomial ODE systems, integration, time averages and variational equations."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import moehlis
from .polyalg import (
    LinearSymmetry,
    PolyMap,
    Polynomial,
    SymmetryGroup,
    compose_linear,
    format_polynomial,
    parse_polynomial,
)

log = logging.getLogger(__name__)

__all__ = [
    "OdeSystem",
    "Trajectory",
    "IntegratorControl",
    "BlowUpError",
    "make_system",
    "list_systems",
    "integrate",
    "flow",
    "time_average",
    "monodromy",
]

EQUILIBRIUM_TOL = 1e-10


class BlowUpError(RuntimeError):
    def __init__(self, t: float, state: np.ndarray, threshold: float):
        self.t = t
        self.state = np.asarray(state)
        super().__init__(f"trajectory left the ball |a| <= {threshold:g} at t = {t:.6g} "
                         f"(|a| = {np.linalg.norm(state):.3e})")


@dataclass
class OdeSystem:
    """``da/dt = f(a)`` with optional symmetry group, named observables and known equilibria."""

    name: str
    f: tuple[Polynomial, ...]
    symmetry_group: SymmetryGroup | None = None
    observables: dict[str, Polynomial] = field(default_factory=dict)
    known_equilibria: list[np.ndarray] = field(default_factory=list)
    parameters: dict[str, float] = field(default_factory=dict)
    coefficients: object = None

    def __post_init__(self):
        self.f = tuple(self.f)
        if not self.f:
            raise ValueError("empty vector field")
        if any(p.n != len(self.f) for p in self.f):
            raise ValueError("vector field components must all have dimension len(f)")
        self.known_equilibria = [np.asarray(e, dtype=float) for e in self.known_equilibria]
        self._map = PolyMap(self.f)

    @property
    def n(self) -> int:
        return len(self.f)

    def rhs(self, t, a):
        return self._map(a)

    def __call__(self, a) -> np.ndarray:
        return self._map(a)

    def jacobian(self, a) -> np.ndarray:
        return self._map.jacobian(a)

    def observable(self, name_or_poly) -> Polynomial:
        if isinstance(name_or_poly, Polynomial):
            return name_or_poly
        if name_or_poly in self.observables:
            return self.observables[name_or_poly]
        try:
            return parse_polynomial(name_or_poly, self.n)
        except ValueError:
            raise KeyError(f"unknown observable {name_or_poly!r} for system {self.name} "
                           f"(known: {sorted(self.observables)})") from None

    def equivariance_residual(self, T: LinearSymmetry, points: int = 100, seed: int = 0) -> float:
        """max |f(Ta) - T f(a)| over random points."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for a in rng.standard_normal((points, self.n)):
            worst = max(worst, float(np.max(np.abs(self(T.apply(a)) - T.apply(self(a))))))
        return worst

    def check(self) -> None:
        for e in self.known_equilibria:
            r = float(np.linalg.norm(self(e)))
            if r > EQUILIBRIUM_TOL:
                raise ValueError(f"{self.name}: listed equilibrium {e} has |f| = {r:.3e}")
        if self.symmetry_group is not None:
            for T in self.symmetry_group.generators:
                r = self.equivariance_residual(T)
                if r > EQUILIBRIUM_TOL:
                    raise ValueError(f"{self.name}: not equivariant under {T.name or T.perm} (residual {r:.3e})")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "parameters": dict(self.parameters),
            "f": [format_polynomial(p) for p in self.f],
            "observables": {k: format_polynomial(v) for k, v in self.observables.items()},
            "symmetry": [T.name for T in self.symmetry_group.generators] if self.symmetry_group else [],
        }


# ---------------------------------------------------------------------------
# registry


def _vanderpol(mu: float = 1.0) -> OdeSystem:
    # Lienard coordinates: y = x - x^3/3 - x'/mu, same x as the usual form
    if not mu > 0:
        raise ValueError("mu must be positive")
    x, y = Polynomial.variables(2)
    f = ((x - x**3 / 3 - y) * mu, x / mu)
    G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip([-1, -1], "minus_identity")])
    return OdeSystem("vanderpol", f, G, {"x2": x**2, "y2": y**2}, [np.zeros(2)], {"mu": mu})


def _lorenz(sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> OdeSystem:
    x, y, z = Polynomial.variables(3)
    f = ((y - x) * sigma, x * (rho - z) - y, x * y - z * beta)
    eq = [np.zeros(3)]
    if rho > 1:
        s = math.sqrt(beta * (rho - 1))
        eq += [np.array([s, s, rho - 1]), np.array([-s, -s, rho - 1])]
    G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip([-1, -1, 1], "xy_flip")])
    obs = {"x2": x**2, "z": z, "energy": (x**2 + y**2 + z**2) / 2}
    return OdeSystem("lorenz", f, G, obs, eq, {"sigma": sigma, "rho": rho, "beta": beta})


def _moehlis9(Re: float = 100.0, Lx: float = 4 * math.pi, Lz: float = 2 * math.pi) -> OdeSystem:
    if not Re > 0:
        raise ValueError("Re must be positive")
    c = moehlis.generate(Lx, Lz)
    moehlis.check_invariants(c)
    a = Polynomial.variables(9)
    lam = c.lambda_decay
    f = []
    for i in range(9):
        terms: dict = {}
        if i == 0:
            terms[(0,) * 9] = lam[0] / Re
        e = [0] * 9
        e[i] = 1
        terms[tuple(e)] = -lam[i] / Re
        for j, k in zip(*np.nonzero(c.N[i])):
            e = [0] * 9
            e[j] += 1
            e[k] += 1
            terms[tuple(e)] = terms.get(tuple(e), 0.0) + float(c.N[i, j, k])
        f.append(Polynomial(9, terms))
    D = Polynomial(9, {tuple(2 if q == i else 0 for q in range(9)): lam[i] / Re for i in range(9)})
    E = (1 - a[0]) ** 2
    for i in range(1, 9):
        E = E + a[i] ** 2
    G = SymmetryGroup.generated_by([
        LinearSymmetry.sign_flip(moehlis.T1_SIGNS, "T1"),
        LinearSymmetry.sign_flip(moehlis.T2_SIGNS, "T2"),
    ])
    lam_state = np.zeros(9)
    lam_state[0] = 1.0
    return OdeSystem(
        "moehlis9",
        tuple(f),
        G,
        {"dissipation": D, "D": D, "perturbation_energy": E, "E": E, "energy": sum((x**2 for x in a[1:]), a[0] ** 2)},
        [lam_state],
        {"Re": Re, "Lx": Lx, "Lz": Lz},
        coefficients=c,
    )


def _harmonic(omega: float = 1.0) -> OdeSystem:
    x, y = Polynomial.variables(2)
    G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip([-1, -1], "minus_identity")])
    return OdeSystem("harmonic", (y * omega, x * -omega), G, {"x2": x**2}, [np.zeros(2)], {"omega": omega})


def _decay(rate: float = 1.0) -> OdeSystem:
    (x,) = Polynomial.variables(1)
    G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip([-1], "minus_identity")])
    return OdeSystem("decay", (x * -rate,), G, {"x2": x**2}, [np.zeros(1)], {"rate": rate})


def _bistable() -> OdeSystem:
    (x,) = Polynomial.variables(1)
    G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip([-1], "minus_identity")])
    eq = [np.zeros(1), np.ones(1), -np.ones(1)]
    return OdeSystem("bistable", (x - x**3,), G, {"x2": x**2}, eq, {})


def _custom(f: Sequence[str | Polynomial], name: str = "custom", observables: Mapping | None = None,
            equilibria: Sequence | None = None, **params) -> OdeSystem:
    n = len(f)
    polys = tuple(p if isinstance(p, Polynomial) else parse_polynomial(p, n) for p in f)
    obs = {k: (v if isinstance(v, Polynomial) else parse_polynomial(v, n)) for k, v in (observables or {}).items()}
    return OdeSystem(name, polys, None, obs, list(equilibria or []), {k: float(v) for k, v in params.items()})


_REGISTRY: dict[str, tuple[Callable[..., OdeSystem], str]] = {
    "vanderpol": (_vanderpol, "van der Pol oscillator, Lienard form (mu)"),
    "lorenz": (_lorenz, "Lorenz 1963 (sigma, rho, beta)"),
    "moehlis9": (_moehlis9, "nine-mode sinusoidal shear flow (Re, Lx, Lz)"),
    "harmonic": (_harmonic, "harmonic oscillator (omega)"),
    "decay": (_decay, "linear decay x' = -rate x (rate)"),
    "bistable": (_bistable, "x' = x - x^3"),
    "custom": (_custom, "user-supplied polynomial field (f = list of polynomial strings)"),
}


def list_systems() -> dict[str, str]:
    return {k: v[1] for k, v in _REGISTRY.items()}


def make_system(spec: str | Mapping, **params) -> OdeSystem:
    """Build a registered system: ``make_system("moehlis9", Re=95)`` or ``make_system({"name": ..., ...})``."""
    if isinstance(spec, Mapping):
        params = {**{k: v for k, v in spec.items() if k != "name"}, **params}
        spec = spec["name"]
    if spec not in _REGISTRY:
        raise KeyError(f"unknown system {spec!r}; known: {sorted(_REGISTRY)}")
    for k, v in params.items():
        if isinstance(v, (int, float)) and not math.isfinite(v):
            raise ValueError(f"parameter {k} must be finite")
    system = _REGISTRY[spec][0](**params)
    system.check()
    return system


# ---------------------------------------------------------------------------
# integration


@dataclass
class IntegratorControl:
    method: str = "rk45"
    rtol: float = 1e-9
    atol: float = 1e-11
    dt: float = 1e-3
    max_step: float = math.inf
    blowup: float = 1e6

    def __post_init__(self):
        if self.method not in ("rk45", "dop853", "rk4"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not (self.rtol > 0 and self.atol > 0 and self.dt > 0):
            raise ValueError("tolerances and dt must be positive")


SHOOTING_CONTROL = IntegratorControl("dop853", rtol=1e-12, atol=1e-13)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    stats: dict = field(default_factory=dict)
    dense: Callable | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or len(self.times) != len(self.states):
            raise ValueError("times and states must have matching length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite states")

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t):
        if self.dense is None:
            raise ValueError("trajectory has no dense output")
        return self.dense(t).T if np.ndim(t) else self.dense(t)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"a{i + 1}" for i in range(n)])
            for t, a in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in a])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:])


def _rk4(fun, t0, y0, t_end, dt, blowup):
    nsteps = max(1, int(math.ceil((t_end - t0) / dt - 1e-12)))
    h = (t_end - t0) / nsteps
    ts = t0 + h * np.arange(nsteps + 1)
    ys = np.empty((nsteps + 1, len(y0)))
    y = np.array(y0, dtype=float)
    ys[0] = y
    for k in range(nsteps):
        t = ts[k]
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[k + 1] = y
        if not np.all(np.isfinite(y)) or np.linalg.norm(y[:len(y0)]) > blowup:
            raise BlowUpError(float(ts[k + 1]), y, blowup)
    return ts, ys, {"nfev": 4 * nsteps, "nsteps": nsteps, "method": "rk4"}


def _solve(fun, y0, t0, t_end, control: IntegratorControl, n_state: int, dense=False, t_eval=None):
    if not t_end > t0:
        raise ValueError("t_end must exceed the start time")
    y0 = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise ValueError("initial state must be finite")
    if control.method == "rk4":
        ts, ys, stats = _rk4(fun, t0, y0, t_end, control.dt, control.blowup)
        if t_eval is not None:
            ys = np.array([np.interp(t_eval, ts, ys[:, j]) for j in range(ys.shape[1])]).T
            ts = np.asarray(t_eval, dtype=float)
        return ts, ys, stats, None

    def blow(t, y):
        return control.blowup - np.linalg.norm(y[:n_state])

    blow.terminal = True
    sol = solve_ivp(
        fun,
        (t0, t_end),
        y0,
        method="RK45" if control.method == "rk45" else "DOP853",
        rtol=control.rtol,
        atol=control.atol,
        max_step=control.max_step,
        events=blow,
        dense_output=dense,
        t_eval=t_eval,
    )
    if sol.status == 1:
        raise BlowUpError(float(sol.t_events[0][0]), sol.y_events[0][0], control.blowup)
    if sol.status < 0:
        raise RuntimeError(f"integration failed: {sol.message}")
    stats = {"nfev": int(sol.nfev), "nsteps": len(sol.t) - 1, "method": control.method}
    return sol.t, sol.y.T, stats, sol.sol


def integrate(system: OdeSystem, a0, t_end: float, control: IntegratorControl | None = None,
              t_eval=None, dense: bool = False) -> Trajectory:
    """Integrate from ``a0`` over ``[0, t_end]``; states at accepted steps unless ``t_eval`` is given."""
    control = control or IntegratorControl()
    ts, ys, stats, sol = _solve(system.rhs, a0, 0.0, t_end, control, system.n, dense, t_eval)
    return Trajectory(ts, ys, stats, sol)


def flow(system: OdeSystem, a0, T: float, control: IntegratorControl | None = None) -> np.ndarray:
    """End state ``phi_T(a0)``."""
    control = control or IntegratorControl()
    _, ys, _, _ = _solve(system.rhs, a0, 0.0, T, control, system.n, t_eval=None)
    return ys[-1]


def time_average(system: OdeSystem, phi, a0, T: float, transient: float | None = None,
                 control: IntegratorControl | None = None) -> float:
    """``(1/(T - transient)) * integral of phi over [transient, T]``.

    The integral is accumulated as an extra ODE state, so it inherits the
    integrator's error control.
    """
    control = control or IntegratorControl()
    if transient is None:
        transient = 0.2 * T
    if not T > transient >= 0:
        raise ValueError("need T > transient >= 0")
    phi = system.observable(phi)
    pm = PolyMap([phi])
    a = np.asarray(a0, dtype=float)
    if transient > 0:
        a = flow(system, a, transient, control)
    n = system.n

    def aug(t, y):
        out = np.empty(n + 1)
        out[:n] = system.rhs(t, y[:n])
        out[n] = pm(y[:n])[0]
        return out

    _, ys, _, _ = _solve(aug, np.append(a, 0.0), transient, T, control, n)
    return float(ys[-1, n] / (T - transient))


def monodromy(system: OdeSystem, a0, T: float, control: IntegratorControl | None = None):
    """``(phi_T(a0), M)`` with ``dM/dt = J_f(a(t)) M``, ``M(0) = I``."""
    control = control or IntegratorControl()
    n = system.n

    def aug(t, y):
        a = y[:n]
        M = y[n:].reshape(n, n)
        out = np.empty_like(y)
        out[:n] = system.rhs(t, a)
        out[n:] = (system.jacobian(a) @ M).ravel()
        return out

    y0 = np.concatenate([np.asarray(a0, dtype=float), np.eye(n).ravel()])
    _, ys, _, _ = _solve(aug, y0, 0.0, T, control, n)
    return ys[-1, :n], ys[-1, n:].reshape(n, n)
