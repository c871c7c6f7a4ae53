"""Periodic orbits seeded from harvested points.

Recurrences of short trajectories started on cloud points give period
guesses.  Single-shooting Newton then closes the orbit, with a phase anchor
through the guess orthogonal to the flow.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import argrelmin

from .dynamics import SHOOTING_CONTROL, IntegratorControl, OdeSystem, flow, integrate, monodromy
from .polyalg import PolyMap, Polynomial, SymmetryGroup

log = logging.getLogger(__name__)

__all__ = [
    "OrbitGuess",
    "PeriodicOrbit",
    "ShootingSettings",
    "NoConvergence",
    "ConvergedToEquilibrium",
    "recurrence_guesses",
    "close_orbit",
    "orbit_average",
    "floquet_multipliers",
    "symmetry_images",
    "fraction_in_sublevel",
    "ORBIT_SCHEMA",
]

ORBIT_SCHEMA = "sosupo-orbit/1"
EQUILIBRIUM_TOL = 1e-8


@dataclass
class OrbitGuess:
    a0: np.ndarray
    T: float
    provenance: dict = field(default_factory=dict)
    score: float = np.inf

    def __post_init__(self):
        self.a0 = np.asarray(self.a0, dtype=float)
        if not np.all(np.isfinite(self.a0)):
            raise ValueError("guess state must be finite")
        if not self.T > 0:
            raise ValueError("period guess must be positive")


@dataclass
class ShootingSettings:
    tol: float = 1e-9
    max_iter: int = 50
    max_halvings: int = 10
    refine_period: bool = True
    refine_window: float = 0.1
    control: IntegratorControl = SHOOTING_CONTROL
    n_samples: int = 1024


class NoConvergence(RuntimeError):
    """Newton did not reach the tolerance; carries the best iterate seen."""

    def __init__(self, message: str, a0: np.ndarray, T: float, residual: float, history: list[float]):
        super().__init__(message)
        self.a0 = a0
        self.T = T
        self.residual = residual
        self.history = history


class ConvergedToEquilibrium(RuntimeError):
    def __init__(self, a0: np.ndarray, speed: float):
        super().__init__(f"state is an equilibrium (|f| = {speed:.2e}), not a periodic orbit")
        self.a0 = a0
        self.speed = speed


@dataclass
class PeriodicOrbit:
    a0: np.ndarray
    T: float
    times: np.ndarray
    samples: np.ndarray
    closure_residual: float
    monodromy: np.ndarray
    floquet: np.ndarray
    system_name: str = ""
    parameters: dict = field(default_factory=dict)
    averages: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    dense: object = None

    @property
    def n(self) -> int:
        return len(self.a0)

    def __call__(self, t) -> np.ndarray:
        """State at phase ``t`` (taken modulo the period)."""
        if self.dense is None:
            raise ValueError("orbit has no dense output; rebuild it with attach_dense")
        t = np.mod(t, self.T)
        return self.dense(t).T if np.ndim(t) else self.dense(t)

    def attach_dense(self, system: OdeSystem, control: IntegratorControl = SHOOTING_CONTROL) -> "PeriodicOrbit":
        self.dense = integrate(system, self.a0, self.T, control, dense=True).dense
        return self

    def uniform(self, N: int) -> np.ndarray:
        return self(np.arange(N) * (self.T / N))

    def summary(self) -> dict:
        return {
            "T": self.T,
            "closure_residual": self.closure_residual,
            "max_multiplier": float(np.abs(self.floquet).max()),
            "averages": dict(self.averages),
        }

    def to_dict(self) -> dict:
        return {
            "schema": ORBIT_SCHEMA,
            "system": self.system_name,
            "parameters": self.parameters,
            "a0": self.a0.tolist(),
            "T": self.T,
            "closure_residual": self.closure_residual,
            "floquet": [[float(z.real), float(z.imag)] for z in self.floquet],
            "monodromy": self.monodromy.tolist(),
            "averages": self.averages,
            "history": self.history,
            "provenance": self.provenance,
        }

    def save(self, json_path, csv_path=None) -> None:
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, default=_jsonable)
        if csv_path is not None:
            with open(csv_path, "w") as fh:
                fh.write("# " + ORBIT_SCHEMA + "\n")
                fh.write("t," + ",".join(f"a{i + 1}" for i in range(self.n)) + "\n")
                for t, a in zip(self.times, self.samples):
                    fh.write(repr(float(t)) + "," + ",".join(repr(float(x)) for x in a) + "\n")

    @classmethod
    def load(cls, json_path, system: OdeSystem | None = None) -> "PeriodicOrbit":
        with open(json_path) as fh:
            d = json.load(fh)
        if d.get("schema") != ORBIT_SCHEMA:
            raise ValueError(f"unsupported orbit schema {d.get('schema')!r}")
        M = np.array(d["monodromy"], dtype=float)
        fl = np.array([complex(re, im) for re, im in d["floquet"]])
        orb = cls(np.array(d["a0"]), float(d["T"]), np.zeros(0), np.zeros((0, len(d["a0"]))),
                  float(d["closure_residual"]), M, fl, d.get("system", ""), d.get("parameters", {}),
                  d.get("averages", {}), d.get("history", []), d.get("provenance", {}))
        if system is not None:
            orb.attach_dense(system)
            orb.times = np.linspace(0, orb.T, 257)
            orb.samples = orb(orb.times[:-1])
            orb.samples = np.vstack([orb.samples, orb.a0])
        return orb


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def recurrence_guesses(system: OdeSystem, cloud, horizon: float, near_tol: float, max_starts: int = 20,
                       samples_per_unit: int = 200, control: IntegratorControl | None = None) -> list[OrbitGuess]:
    """Scan short trajectories from cloud points for near-returns.

    ``cloud`` is a PointCloud or an ``(N, n)`` array.  Points are tried in
    order of increasing P when values are available.  After the trajectory
    first leaves the ``near_tol`` ball around its start, the earliest local
    minimum of ``|a(t) - a(0)|`` below ``near_tol`` becomes a guess.  Guesses
    are ranked by that distance.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    control = control or IntegratorControl("dop853", rtol=1e-10, atol=1e-12)
    if hasattr(cloud, "points"):
        pts = np.asarray(cloud.points)
        order = np.argsort(cloud.values, kind="stable")
        ids = order[:max_starts]
    else:
        pts = np.atleast_2d(np.asarray(cloud, dtype=float))
        ids = np.arange(min(max_starts, len(pts)))
    out = []
    for idx in ids:
        a0 = pts[idx]
        if np.linalg.norm(system(a0)) < EQUILIBRIUM_TOL:
            continue
        traj = integrate(system, a0, horizon, control, dense=True)
        ts = np.linspace(0, horizon, int(samples_per_unit * horizon) + 1)
        d = np.linalg.norm(traj(ts) - a0, axis=1)
        away = np.nonzero(d > near_tol)[0]
        if not len(away):
            continue
        start = away[0]
        mins = [m for m in argrelmin(d)[0] if m > start and d[m] < near_tol]
        if not mins:
            continue
        m = mins[0]
        res = minimize_scalar(lambda t: np.linalg.norm(traj(t) - a0), bounds=(ts[m - 1], ts[m + 1]),
                              method="bounded", options={"xatol": 1e-10})
        out.append(OrbitGuess(a0.copy(), float(res.x), {"cloud_index": int(idx)}, float(res.fun)))
    out.sort(key=lambda g: g.score)
    return out


def _refine_period(system, a0, T, window, control):
    traj = integrate(system, a0, T * (1 + window), control, dense=True)
    res = minimize_scalar(lambda t: np.linalg.norm(traj(t) - a0), bounds=(T * (1 - window), T * (1 + window)),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x)


def close_orbit(system: OdeSystem, guess: OrbitGuess, settings: ShootingSettings | None = None) -> PeriodicOrbit:
    """Single-shooting Newton on ``(a0, T)``.

    Unknowns satisfy ``phi_T(a0) - a0 = 0`` together with the anchor
    ``f(a_g) . (a0 - a_g) = 0``.  Steps are halved (up to ``max_halvings``
    times) until the residual decreases.
    """
    s = settings or ShootingSettings()
    ctl = s.control
    ag = guess.a0.copy()
    fg = system(ag)
    speed = float(np.linalg.norm(fg))
    if speed < EQUILIBRIUM_TOL:
        raise ConvergedToEquilibrium(ag, speed)
    T = guess.T
    if s.refine_period:
        T = _refine_period(system, ag, T, s.refine_window, ctl)
    n = system.n
    a = ag.copy()

    def residual(a, T):
        end, M = monodromy(system, a, T, ctl)
        F = np.append(end - a, fg @ (a - ag))
        return F, end, M

    F, end, M = residual(a, T)
    history = [float(np.linalg.norm(F[:n]))]
    best = (history[0], a.copy(), T)
    for _ in range(s.max_iter):
        if history[-1] <= s.tol:
            break
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = M - np.eye(n)
        J[:n, n] = system(end)
        J[n, :n] = fg
        # truncated SVD: orbit families (centres) make M - I nearly singular
        step = np.linalg.lstsq(J, -F, rcond=1e-9)[0]
        fnorm = np.linalg.norm(F)
        lam = 1.0
        for _h in range(s.max_halvings + 1):
            a_new, T_new = a + lam * step[:n], T + lam * step[n]
            if T_new > 0:
                try:
                    F_new, end_new, M_new = residual(a_new, T_new)
                except Exception:  # blow-up or integration failure counts as a bad step
                    F_new = None
                if F_new is not None and np.linalg.norm(F_new) < fnorm:
                    break
            lam *= 0.5
        else:
            log.info("shooting: no decrease after %d halvings", s.max_halvings)
            break
        a, T, F, end, M = a_new, T_new, F_new, end_new, M_new
        history.append(float(np.linalg.norm(F[:n])))
        if history[-1] < best[0]:
            best = (history[-1], a.copy(), T)
    if np.linalg.norm(system(a)) < EQUILIBRIUM_TOL:
        raise ConvergedToEquilibrium(a, float(np.linalg.norm(system(a))))
    if history[-1] > s.tol:
        raise NoConvergence(f"shooting stalled at residual {best[0]:.3e}", best[1], best[2], best[0], history)
    traj = integrate(system, a, T, ctl, dense=True)
    times = np.linspace(0, T, s.n_samples + 1)
    samples = traj(times)
    fl = np.linalg.eigvals(M)
    fl = fl[np.argsort(-np.abs(fl), kind="stable")]
    return PeriodicOrbit(a, float(T), times, samples, history[-1], M, fl, system.name, dict(system.parameters),
                         history=history, provenance=dict(guess.provenance), dense=traj.dense)


def orbit_average(orbit: PeriodicOrbit, phi: Polynomial, rtol: float = 1e-9, n0: int = 64,
                  n_max: int = 1 << 18) -> float:
    """``(1/T) * closed integral of phi``, periodic trapezoid rule with doubling.

    The rule converges spectrally for smooth periodic integrands; sampling
    doubles until successive estimates agree to ``rtol``.
    """
    pm = PolyMap([phi])
    N = n0
    prev = float(np.mean(pm.batch(orbit.uniform(N))[:, 0]))
    while N < n_max:
        N *= 2
        cur = float(np.mean(pm.batch(orbit.uniform(N))[:, 0]))
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300) or abs(cur - prev) < 1e-15:
            return cur
        prev = cur
    log.warning("orbit average not converged to %g after %d samples", rtol, N)
    return cur


def floquet_multipliers(orbit: PeriodicOrbit, system: OdeSystem | None = None) -> np.ndarray:
    """Eigenvalues of the monodromy matrix, largest modulus first."""
    M = orbit.monodromy
    if system is not None:
        _, M = monodromy(system, orbit.a0, orbit.T, SHOOTING_CONTROL)
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigenvalue computation failed: {exc}") from exc
    return ev[np.argsort(-np.abs(ev), kind="stable")]


def _phase_distance(orb: PeriodicOrbit, other_samples: np.ndarray, other_a0: np.ndarray) -> float:
    """Sup distance between ``other`` (given by uniform samples from ``other_a0``) and ``orb`` up to phase."""
    N = len(other_samples)
    coarse = orb.uniform(N)
    k = int(np.argmin(np.linalg.norm(coarse - other_a0, axis=1)))
    dt = orb.T / N
    res = minimize_scalar(lambda t: np.linalg.norm(orb(t) - other_a0), bounds=(k * dt - dt, k * dt + dt),
                          method="bounded", options={"xatol": 1e-12})
    shift = res.x
    aligned = orb(shift + np.arange(N) * dt)
    return float(np.max(np.linalg.norm(aligned - other_samples, axis=1)))


def symmetry_images(orbit: PeriodicOrbit, G: SymmetryGroup, system: OdeSystem | None = None,
                    tol: float = 1e-6, n_compare: int = 512) -> list[PeriodicOrbit]:
    """Distinct orbits among ``{g(orbit) : g in G}``, the original first.

    Images are deduplicated up to phase.  With ``system`` given, each image's
    closure residual is recomputed by integration from its transformed start.
    """
    if orbit.dense is None:
        if system is None:
            raise ValueError("need a system to rebuild the orbit's dense output")
        orbit.attach_dense(system)
    base = orbit.uniform(n_compare)
    kept: list[PeriodicOrbit] = [orbit]
    for g in G:
        if g.is_identity():
            continue
        ga0 = g.apply(orbit.a0)
        gs = g.apply(base)
        if any(_phase_distance(k, gs, ga0) < tol for k in kept):
            continue
        M = g.matrix
        dense = (lambda t, _d=orbit.dense, _M=M: _M @ _d(t))
        resid = orbit.closure_residual
        if system is not None:
            resid = float(np.linalg.norm(flow(system, ga0, orbit.T, SHOOTING_CONTROL) - ga0))
        img = PeriodicOrbit(ga0, orbit.T, orbit.times.copy(), g.apply(orbit.samples), resid,
                            M @ orbit.monodromy @ M.T, orbit.floquet.copy(), orbit.system_name,
                            dict(orbit.parameters), dict(orbit.averages), [],
                            dict(orbit.provenance, image_of=g.name or str(g.signs)), dense)
        kept.append(img)
    return kept


def fraction_in_sublevel(orbit: PeriodicOrbit, P, epsilon: float, N: int = 20000) -> float:
    """Fraction of the period spent where ``P <= epsilon`` (uniform phase sampling)."""
    vals = P.values(orbit.uniform(N)) if hasattr(P, "values") else PolyMap([P]).batch(orbit.uniform(N))[:, 0]
    return float(np.mean(vals <= epsilon))
