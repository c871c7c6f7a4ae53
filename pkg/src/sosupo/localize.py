"""Indicator polynomials and sampling of their small sublevel sets.

Given a bound certificate ``(lambda, V)``, the polynomial

    P(a) = lambda - f(a) . grad V(a) - Phi(a)

is nonnegative, and its average along a trajectory equals ``lambda`` minus
the trajectory's average of ``Phi``.  Near-extremal trajectories therefore
spend most of their time where ``P`` is small.  This module finds such points
by running quasi-Newton minimisation of ``P`` from random starts and keeping
iterates with ``P <= epsilon``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import line_search

from .polyalg import PolyMap, Polynomial, format_polynomial, lie_derivative, parse_polynomial

log = logging.getLogger(__name__)

__all__ = [
    "IndicatorPoly",
    "SamplerConfig",
    "PointCloud",
    "BfgsResult",
    "EmptyCloudWarning",
    "build_indicator_poly",
    "bfgs_minimize",
    "harvest",
    "screen_starts",
    "choose_epsilon",
]

DEGENERATE_TOL = 1e-12


class EmptyCloudWarning(UserWarning):
    pass


@dataclass
class IndicatorPoly:
    P: Polynomial
    lam: float
    epsilon_list: tuple[float, ...] = ()
    negated: bool = False

    def __post_init__(self):
        self._map = PolyMap([self.P])

    @property
    def n(self) -> int:
        return self.P.n

    @property
    def degenerate(self) -> bool:
        """True when P vanishes identically (up to round-off)."""
        return self.P.is_zero or self.P.max_abs_coeff() < DEGENERATE_TOL

    def value(self, a) -> float:
        return float(self._map(a)[0])

    def gradient(self, a) -> np.ndarray:
        return self._map.jacobian(a)[0]

    def values(self, points) -> np.ndarray:
        return self._map.batch(points)[:, 0]


def build_indicator_poly(cert, f: Sequence[Polynomial] | None = None, phi: Polynomial | None = None,
                         epsilons: Sequence[float] = ()) -> IndicatorPoly:
    """``P = lambda - f . grad V - Phi`` in the certificate's own sense.

    For a lower-bound certificate (``sense='min'``) Phi is negated, so P is
    again nonnegative.
    """
    f = tuple(f) if f is not None else cert.f
    phi = phi if phi is not None else cert.phi
    negated = cert.sense == "min"
    phi_eff = -phi if negated else phi
    P = Polynomial.constant(cert.lambda_eff, len(f)) - lie_derivative(f, cert.V) - phi_eff
    out = IndicatorPoly(P, cert.lambda_eff, tuple(float(e) for e in epsilons), negated)
    if out.degenerate:
        log.warning("indicator polynomial vanishes identically; every point lies in every sublevel set")
    return out


def choose_epsilon(lam: float, reference_average: float | None = None, user: float | None = None) -> float:
    """User value if given, else ``max(1e-6, 10 * |lambda - reference|)``."""
    if user is not None:
        if not user > 0:
            raise ValueError("epsilon must be positive")
        return float(user)
    if reference_average is None:
        raise ValueError("no epsilon given and no reference average to derive one from")
    return max(1e-6, 10.0 * abs(lam - reference_average))


@dataclass
class SamplerConfig:
    start_box: tuple[tuple[float, float], ...]
    n_starts: int = 100
    rng_seed: int = 0
    step_tol: float = 1e-6
    grad_tol: float = 1e-6
    max_iters: int = 500
    beta: float | None = None
    keep: str = "full_trails"
    grad_tol_ladder: tuple[float, ...] | None = None
    escape_factor: float = 10.0

    def __post_init__(self):
        self.start_box = tuple((float(lo), float(hi)) for lo, hi in self.start_box)
        if not self.start_box or any(not hi > lo for lo, hi in self.start_box):
            raise ValueError("start box must be nonempty with lo < hi in every coordinate")
        if not (self.step_tol > 0 and self.grad_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.keep not in ("final_points", "full_trails"):
            raise ValueError("keep must be 'final_points' or 'full_trails'")
        if not self.escape_factor > 1:
            raise ValueError("escape_factor must exceed 1")
        if self.n_starts < 1 or self.max_iters < 1:
            raise ValueError("n_starts and max_iters must be positive")
        if self.grad_tol_ladder is not None:
            self.grad_tol_ladder = tuple(float(g) for g in self.grad_tol_ladder)
            if any(not g > 0 for g in self.grad_tol_ladder):
                raise ValueError("ladder tolerances must be positive")

    @classmethod
    def from_ball(cls, center, radius: float, **kw) -> "SamplerConfig":
        c = np.asarray(center, dtype=float)
        return cls(tuple((x - radius, x + radius) for x in c), **kw)

    def escaped(self, x) -> bool:
        """True once ``x`` is far outside the start box (P may be unbounded below off Omega)."""
        lo, hi = np.array(self.start_box).T
        c, h = (lo + hi) / 2, (hi - lo) / 2
        return bool(np.max(np.abs(x - c) / h) > self.escape_factor)

    def start(self, run: int) -> np.ndarray:
        """Uniform start for run ``run``; independent of every other run."""
        rng = np.random.default_rng(np.random.SeedSequence([self.rng_seed, run]))
        lo, hi = np.array(self.start_box).T
        return lo + (hi - lo) * rng.random(len(lo))


@dataclass
class BfgsResult:
    trail: np.ndarray
    values: np.ndarray
    grad_norms: np.ndarray
    status: str

    @property
    def x(self) -> np.ndarray:
        return self.trail[-1]


def bfgs_minimize(P: IndicatorPoly, x0, cfg: SamplerConfig, grad_tol: float | None = None) -> BfgsResult:
    """BFGS with strong-Wolfe line search (c1 = 1e-4, c2 = 0.9), recording every iterate.

    Stops on relative step below ``step_tol``, sup-norm gradient below
    ``grad_tol`` or ``max_iters``; also when the iterate escapes far beyond
    the start box.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _bfgs(P, x0, cfg, grad_tol)


def _bfgs(P, x0, cfg, grad_tol):
    gtol = cfg.grad_tol if grad_tol is None else grad_tol
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("starting point must be finite")
    fval = P.value(x)
    g = P.gradient(x)
    n = len(x)
    H = np.eye(n)
    trail, vals, gn = [x.copy()], [fval], [float(np.max(np.abs(g)))]
    status = "max_iters"
    if not (np.isfinite(fval) and np.all(np.isfinite(g))):
        return BfgsResult(np.array(trail), np.array(vals), np.array(gn), "nonfinite")
    first = True
    for _ in range(cfg.max_iters):
        if gn[-1] < gtol:
            status = "grad_tol"
            break
        p = -H @ g
        if p @ g >= 0:
            H = np.eye(n)
            p = -g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, _, _, fnew, _, gnew = line_search(P.value, P.gradient, x, p, gfk=g, old_fval=fval,
                                                     c1=1e-4, c2=0.9, maxiter=30)
        if alpha is None:
            # backtracking Armijo fallback
            alpha = 1.0
            while alpha > 1e-12:
                fnew = P.value(x + alpha * p)
                if fnew <= fval + 1e-4 * alpha * (g @ p):
                    break
                alpha *= 0.5
            else:
                status = "line_search"
                break
            gnew = None
        s = alpha * p
        xnew = x + s
        if gnew is None:
            gnew = P.gradient(xnew)
        if not (np.isfinite(fnew) and np.all(np.isfinite(gnew))):
            status = "nonfinite"
            break
        yv = gnew - g
        x, fval, g = xnew, float(fnew), np.asarray(gnew, dtype=float)
        trail.append(x.copy())
        vals.append(fval)
        gn.append(float(np.max(np.abs(g))))
        sy = s @ yv
        if sy > 1e-300:
            if first:
                H = np.eye(n) * (sy / (yv @ yv))
                first = False
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * (yv @ Hy) + rho) * np.outer(s, s)
        if cfg.escaped(x):
            status = "escaped"
            break
        if np.linalg.norm(s) < cfg.step_tol * max(1.0, np.linalg.norm(x)):
            status = "step_tol"
            break
    else:
        status = "max_iters"
    if status == "max_iters" and gn[-1] < gtol:
        status = "grad_tol"
    return BfgsResult(np.array(trail), np.array(vals), np.array(gn), status)


@dataclass
class PointCloud:
    """Points of ``{P <= epsilon}`` with provenance (run index, iterate index, ladder rung)."""

    points: np.ndarray
    values: np.ndarray
    run: np.ndarray
    iteration: np.ndarray
    epsilon: float
    stats: dict = field(default_factory=dict)
    rung: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            self.points = self.points.reshape(len(self.values), -1)
        self.values = np.asarray(self.values, dtype=float)
        self.run = np.asarray(self.run, dtype=np.int64)
        self.iteration = np.asarray(self.iteration, dtype=np.int64)
        if self.rung is None:
            self.rung = np.zeros(len(self.values), dtype=np.int64)
        self.rung = np.asarray(self.rung, dtype=np.int64)
        if np.any(self.values > self.epsilon):
            raise ValueError("cloud contains points with P above epsilon")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def to_csv(self, path) -> None:
        header = "run,iter,P," + ",".join(f"a{i + 1}" for i in range(self.points.shape[1]))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for r, it, v, p in zip(self.run, self.iteration, self.values, self.points):
                fh.write(f"{r},{it},{float(v)!r}," + ",".join(repr(float(x)) for x in p) + "\n")

    @classmethod
    def from_csv(cls, path, epsilon: float) -> "PointCloud":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        n = len(header) - 3
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).reshape(-1, n + 3)
        return cls(data[:, 3:], data[:, 2], data[:, 0].astype(int), data[:, 1].astype(int), epsilon)

    def to_dict(self) -> dict:
        return {
            "format": "sosupo-cloud",
            "version": 1,
            "epsilon": self.epsilon,
            "stats": self.stats,
            "points": self.points.tolist(),
            "P": self.values.tolist(),
            "run": self.run.tolist(),
            "iter": self.iteration.tolist(),
            "rung": self.rung.tolist(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, path) -> "PointCloud":
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format") != "sosupo-cloud":
            raise ValueError("not a point-cloud record")
        n = len(d["points"][0]) if d["points"] else 0
        return cls(np.array(d["points"], dtype=float).reshape(len(d["P"]), n), d["P"], d["run"], d["iter"],
                   float(d["epsilon"]), d.get("stats", {}), np.array(d.get("rung", [0] * len(d["P"]))))

    def distance_to(self, curve: np.ndarray) -> np.ndarray:
        """Euclidean distance of each point to the nearest of the ``curve`` samples."""
        from scipy.spatial import cKDTree

        return cKDTree(np.asarray(curve)).query(self.points)[0]

    def inside(self, omega) -> np.ndarray:
        return omega.contains(self.points)


def harvest(P: IndicatorPoly, cfg: SamplerConfig, epsilon: float, warn_empty: bool = True) -> PointCloud:
    """Minimise P from ``cfg.n_starts`` uniform starts and keep iterates with ``P <= epsilon``.

    With ``cfg.grad_tol_ladder`` every start is rerun once per tolerance
    (loosest first); ``cfg.keep`` selects final points or whole trails.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if len(cfg.start_box) != P.n:
        raise ValueError(f"start box has {len(cfg.start_box)} coordinates, P has {P.n}")
    ladder = cfg.grad_tol_ladder or (cfg.grad_tol,)
    pts, vals, runs, its, rungs = [], [], [], [], []
    finals = []
    statuses: dict[str, int] = {}
    for k in range(cfg.n_starts):
        x0 = cfg.start(k)
        for r, gtol in enumerate(ladder):
            res = bfgs_minimize(P, x0, cfg, grad_tol=gtol)
            statuses[res.status] = statuses.get(res.status, 0) + 1
            finals.append(float(res.values[-1]))
            idx = range(len(res.trail)) if cfg.keep == "full_trails" else [len(res.trail) - 1]
            for i in idx:
                # re-evaluate independently of the optimiser's bookkeeping
                if cfg.escaped(res.trail[i]):
                    continue
                v = P.value(res.trail[i])
                if v <= epsilon:
                    pts.append(res.trail[i])
                    vals.append(v)
                    runs.append(k)
                    its.append(i)
                    rungs.append(r)
    finals = np.array(finals)
    stats = {
        "n_starts": cfg.n_starts,
        "ladder": list(ladder),
        "keep": cfg.keep,
        "accepted": len(vals),
        "runs_with_points": len(set(runs)),
        "min_final_P": float(finals.min()),
        "median_final_P": float(np.median(finals)),
        "statuses": statuses,
        # only possible off Omega for weighted certificates
        "negative_P": int(np.sum(np.array(vals) < -1e-6)),
        "degenerate": P.degenerate,
        "seed": cfg.rng_seed,
    }
    n = P.n
    cloud = PointCloud(np.array(pts).reshape(len(pts), n), np.array(vals), np.array(runs, dtype=np.int64),
                       np.array(its, dtype=np.int64), float(epsilon), stats, np.array(rungs, dtype=np.int64))
    if not len(cloud) and warn_empty:
        warnings.warn(f"no point with P <= {epsilon:g}: smallest final P was {stats['min_final_P']:.3e} "
                      f"(median {stats['median_final_P']:.3e}); try a larger epsilon or a better certificate",
                      EmptyCloudWarning, stacklevel=2)
    return cloud


@dataclass
class ScreenResult:
    candidates: np.ndarray
    weights: np.ndarray
    P: np.ndarray

    def passed(self, threshold: float) -> np.ndarray:
        return self.weights >= threshold

    def resample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        w = self.weights / self.weights.sum()
        return self.candidates[rng.choice(len(w), size=k, p=w)]


def screen_starts(P: IndicatorPoly, candidates, beta: float) -> ScreenResult:
    """Boltzmann weights ``exp(-beta * P(a))``; ``beta = 0`` disables screening."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    vals = P.values(C)
    w = np.ones(len(C)) if beta == 0 else np.exp(-beta * vals)
    return ScreenResult(C, w, vals)
