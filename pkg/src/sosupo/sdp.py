"""Standard-form semidefinite programs and a primal-dual interior-point solver.

Problem form (minimisation)::

    min   c_free . x  +  c_nonneg . s  +  sum_j <C_j, X_j>
    s.t.  A_free x + A_nonneg s + sum_j A_j(X_j) = b
          X_j PSD,  s >= 0,  x free

with dual ``max b.y`` s.t. ``A_free^T y = c_free``, ``C_j - A_j^*(y) = Z_j`` PSD,
``c_nonneg - A_nonneg^T y = z >= 0``.

Constraint matrices are stored as upper-triangle triplets, the same
convention the SDPA sparse format uses.
"""

from __future__ import annotations

import io
import logging
import time
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

__all__ = [
    "SdpProblem",
    "SdpSolution",
    "SolverSettings",
    "ResidualReport",
    "solve_sdp",
    "check_residuals",
    "export_sdpa",
    "read_sdpa",
    "sdpa_text",
]

STATUSES = (
    "optimal",
    "near_optimal",
    "primal_infeasible",
    "dual_infeasible",
    "iteration_limit",
    "numerical_failure",
)


def _canon_triplets(rows, ii, jj, vals):
    """Swap to upper triangle, sum duplicates, drop zeros, sort."""
    rows = np.asarray(rows, dtype=np.int64)
    ii = np.asarray(ii, dtype=np.int64)
    jj = np.asarray(jj, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
    if len(vals) == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy(), e.copy(), np.zeros(0)
    order = np.lexsort((hi, lo, rows))
    rows, lo, hi, vals = rows[order], lo[order], hi[order], vals[order]
    key = np.stack([rows, lo, hi], axis=1)
    new = np.ones(len(vals), dtype=bool)
    new[1:] = np.any(key[1:] != key[:-1], axis=1)
    idx = np.cumsum(new) - 1
    summed = np.zeros(idx[-1] + 1)
    np.add.at(summed, idx, vals)
    rows, lo, hi = rows[new], lo[new], hi[new]
    keep = summed != 0.0
    return rows[keep], lo[keep], hi[keep], summed[keep]


@dataclass
class SdpProblem:
    """Block SDP with free and nonnegative scalar variables.

    ``A_psd[j]`` and ``C_psd[j]`` hold upper-triangle triplets
    ``(rows, i, j, vals)`` / ``(i, j, vals)``; an off-diagonal triplet stands
    for both symmetric entries.
    """

    block_sizes: tuple[int, ...]
    b: np.ndarray
    A_psd: list
    C_psd: list
    A_free: sp.csr_matrix
    c_free: np.ndarray
    A_nonneg: sp.csr_matrix | None = None
    c_nonneg: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.block_sizes = tuple(int(s) for s in self.block_sizes)
        self.b = np.asarray(self.b, dtype=float).ravel()
        m = len(self.b)
        if len(self.A_psd) != len(self.block_sizes) or len(self.C_psd) != len(self.block_sizes):
            raise ValueError("one constraint and one objective triplet set per block is required")
        self.A_psd = [_canon_triplets(*t) for t in self.A_psd]
        self.C_psd = [_canon_triplets(np.zeros(len(t[2]), dtype=np.int64), *t)[1:] for t in self.C_psd]
        for k, (n, (r, i, j, _)) in enumerate(zip(self.block_sizes, self.A_psd)):
            if len(r) and (r.max() >= m or r.min() < 0):
                raise ValueError(f"block {k}: constraint row index out of range")
            if len(i) and (j.max() >= n or i.min() < 0):
                raise ValueError(f"block {k}: entry index out of range for size {n}")
        self.A_free = sp.csr_matrix(self.A_free if self.A_free is not None else (m, 0))
        self.c_free = np.asarray(self.c_free, dtype=float).ravel()
        if self.A_nonneg is None:
            self.A_nonneg = sp.csr_matrix((m, 0))
            self.c_nonneg = np.zeros(0)
        self.A_nonneg = sp.csr_matrix(self.A_nonneg)
        self.c_nonneg = np.asarray(self.c_nonneg, dtype=float).ravel()
        for name, A, c in (("free", self.A_free, self.c_free), ("nonneg", self.A_nonneg, self.c_nonneg)):
            if A.shape[0] != m or A.shape[1] != len(c):
                raise ValueError(f"{name} constraint block has shape {A.shape}, expected ({m}, {len(c)})")
        self.A_free.eliminate_zeros()
        self.A_nonneg.eliminate_zeros()

    @property
    def n_rows(self) -> int:
        return len(self.b)

    @property
    def n_free(self) -> int:
        return len(self.c_free)

    @property
    def n_nonneg(self) -> int:
        return len(self.c_nonneg)

    def dense_C(self, k: int) -> np.ndarray:
        n = self.block_sizes[k]
        i, j, v = self.C_psd[k]
        C = np.zeros((n, n))
        C[i, j] = v
        C[j, i] = v
        return C

    def block_operator(self, k: int) -> sp.csr_matrix:
        """``A_k`` as an ``(m, n*n)`` sparse matrix acting on row-major ``vec(X)``."""
        n = self.block_sizes[k]
        r, i, j, v = self.A_psd[k]
        off = i != j
        rows = np.concatenate([r, r[off]])
        cols = np.concatenate([i * n + j, j[off] * n + i[off]])
        vals = np.concatenate([v, v[off]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_rows, n * n))

    def apply(self, blocks: Sequence[np.ndarray], x_free=None, s_nonneg=None) -> np.ndarray:
        """``A_free x + A_nonneg s + sum_j A_j(X_j)``."""
        out = np.zeros(self.n_rows)
        for k, X in enumerate(blocks):
            out += self.block_operator(k) @ np.asarray(X).ravel()
        if x_free is not None and self.n_free:
            out += self.A_free @ x_free
        if s_nonneg is not None and self.n_nonneg:
            out += self.A_nonneg @ s_nonneg
        return out

    def adjoint(self, y) -> list[np.ndarray]:
        n = self.block_sizes
        return [(self.block_operator(k).T @ y).reshape(n[k], n[k]) for k in range(len(n))]

    def objective(self, blocks, x_free=None, s_nonneg=None) -> float:
        val = sum(float(np.sum(self.dense_C(k) * X)) for k, X in enumerate(blocks))
        if x_free is not None and self.n_free:
            val += float(self.c_free @ x_free)
        if s_nonneg is not None and self.n_nonneg:
            val += float(self.c_nonneg @ s_nonneg)
        return val

    def size_summary(self) -> dict:
        return {
            "rows": self.n_rows,
            "blocks": list(self.block_sizes),
            "largest_block": max(self.block_sizes, default=0),
            "free": self.n_free,
            "nonneg": self.n_nonneg,
        }


@dataclass
class SolverSettings:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iterations: int = 200
    step_fraction: float = 0.99
    reg_floor: float = 1e-14
    rank_tol: float = 1e-10
    verbose: bool = False

    def __post_init__(self):
        for name in ("gap_tol", "feas_tol", "step_fraction", "reg_floor", "rank_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.step_fraction < 1:
            raise ValueError("step_fraction must be below 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class SdpSolution:
    primal_blocks: list[np.ndarray]
    free_values: np.ndarray
    nonneg_values: np.ndarray
    dual_vector: np.ndarray
    dual_blocks: list[np.ndarray]
    dual_nonneg: np.ndarray
    status: str
    gap: float
    pinf: float
    dinf: float
    iterations: int
    primal_objective: float
    dual_objective: float
    solve_time: float = 0.0
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near_optimal")


# ---------------------------------------------------------------------------
# presolve: eliminate free variables and dependent rows


class _Reduced:
    """Free-variable-free, full-row-rank restatement of an SdpProblem."""

    def __init__(self, prob: SdpProblem, rank_tol: float):
        self.prob = prob
        m = prob.n_rows
        ops = [prob.block_operator(k) for k in range(len(prob.block_sizes))]
        if prob.n_nonneg:
            ops.append(prob.A_nonneg)
        A = sp.hstack(ops, format="csc") if ops else sp.csc_matrix((m, 0))
        self.sizes = prob.block_sizes
        self.n_lp = prob.n_nonneg
        c = [prob.dense_C(k).ravel() for k in range(len(self.sizes))]
        if self.n_lp:
            c.append(prob.c_nonneg)
        c = np.concatenate(c) if c else np.zeros(0)
        b = prob.b.copy()
        self.infeasible = None

        # free variables: y = y0 + U_perp w
        if prob.n_free:
            Af = prob.A_free.toarray()
            U, s, Vt = sla.svd(Af, full_matrices=True)
            r = int(np.sum(s > rank_tol * max(s[0] if len(s) else 0.0, 1e-300))) if len(s) else 0
            self.f_U, self.f_s, self.f_Vt, self.f_r = U[:, :r], s[:r], Vt[:r], r
            resid = prob.c_free - Vt[:r].T @ (Vt[:r] @ prob.c_free)
            if np.linalg.norm(resid) > 1e-8 * max(1.0, np.linalg.norm(prob.c_free)):
                self.infeasible = "dual_infeasible"
            y0 = U[:, :r] @ ((Vt[:r] @ prob.c_free) / s[:r])
            Uperp = U[:, r:]
            Abar = np.asarray((A.T @ Uperp).T) if A.shape[1] else np.zeros((Uperp.shape[1], 0))
            bbar = Uperp.T @ b
            c = c - (A.T @ y0 if A.shape[1] else 0.0)
            self.const = float(b @ y0)
        else:
            y0 = np.zeros(m)
            Uperp = None
            Abar = A.toarray()
            bbar = b
            self.const = 0.0
        self.y0, self.Uperp = y0, Uperp

        # dependent rows
        if Abar.shape[0] and Abar.shape[1]:
            W, sig, Zt = sla.svd(Abar, full_matrices=False)
            r = int(np.sum(sig > rank_tol * sig[0])) if len(sig) and sig[0] > 0 else 0
        else:
            W = np.eye(Abar.shape[0])
            sig = np.zeros(0)
            Zt = np.zeros((0, Abar.shape[1]))
            r = 0
        proj = W[:, :r].T @ bbar
        leftover = bbar - W[:, :r] @ proj
        if np.linalg.norm(leftover) > 1e-7 * max(1.0, np.linalg.norm(bbar)):
            self.infeasible = self.infeasible or "primal_infeasible"
        self.W, self.sig = W[:, :r], sig[:r]
        self.A = Zt[:r]  # orthonormal rows
        self.b = proj / sig[:r] if r else np.zeros(0)
        self.c = c
        self.m = r

    def split(self, v):
        out, pos = [], 0
        for n in self.sizes:
            out.append(v[pos : pos + n * n].reshape(n, n))
            pos += n * n
        return out, v[pos : pos + self.n_lp]

    def recover(self, Xs, xl, yhat, Zs, zl):
        prob = self.prob
        y = self.y0.copy()
        if self.m:
            w = self.W @ (yhat / self.sig)
            y += self.Uperp @ w if self.Uperp is not None else w
        if prob.n_free:
            resid = prob.b - prob.apply(Xs, None, xl)
            x_free = self.f_Vt.T @ ((self.f_U.T @ resid) / self.f_s)
        else:
            x_free = np.zeros(0)
        return y, x_free


# ---------------------------------------------------------------------------
# interior-point method


def _max_step(X, dX, L=None):
    """Largest alpha with X + alpha dX PSD (inf if unbounded)."""
    if X.shape[0] == 0:
        return np.inf
    if L is None:
        try:
            L = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return 0.0
    Li = sla.solve_triangular(L, np.eye(len(X)), lower=True)
    W = Li @ dX @ Li.T
    lam = sla.eigvalsh((W + W.T) / 2).min()
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_lp(x, dx):
    neg = dx < 0
    if not neg.any():
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


def _sym(B):
    return (B + B.T) / 2


def _schur_solver(M, reg):
    """Factor the Schur complement; regularise minimally, fall back to pivoted LU.

    The returned solver applies two steps of iterative refinement against the
    unregularised matrix.
    """
    m = len(M)
    if m == 0:
        return lambda h: np.zeros(0)
    fac = None
    for _ in range(5):
        try:
            c = sla.cho_factor(M + reg * np.eye(m), lower=True)
            fac = lambda h, c=c: sla.cho_solve(c, h)
            break
        except (np.linalg.LinAlgError, ValueError):
            reg *= 10
    if fac is None:
        try:
            lu = sla.lu_factor(M + reg * np.eye(m))
        except (np.linalg.LinAlgError, ValueError):
            return None
        fac = lambda h: sla.lu_solve(lu, h)

    def solve(h):
        x = fac(h)
        for _ in range(2):
            x = x + fac(h - M @ x)
        return x

    return solve


def solve_sdp(problem: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve with an infeasible-start HKM primal-dual method and Mehrotra predictor-corrector."""
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    red = _Reduced(problem, settings.rank_tol)
    sizes, nl, m = red.sizes, red.n_lp, red.m
    Astack = []
    pos = 0
    for n in sizes:
        Astack.append(red.A[:, pos : pos + n * n].reshape(m, n, n))
        pos += n * n
    Al = red.A[:, pos : pos + nl]
    Aflat = [a.reshape(m, n * n) for a, n in zip(Astack, sizes)]
    Cs, cl = red.split(red.c)
    b = red.b

    normb = max(1.0, np.linalg.norm(b))
    normC = max(1.0, np.linalg.norm(red.c))
    b = b / normb
    Cs = [C / normC for C in Cs]
    cl = cl / normC
    normc_s = np.linalg.norm(red.c) / normC

    nu = sum(sizes) + nl

    def Aop(Xs, xl):
        out = np.zeros(m)
        for Af, X in zip(Aflat, Xs):
            out += Af @ X.ravel()
        if nl:
            out += Al @ xl
        return out

    def Aadj(y):
        return [(Af.T @ y).reshape(X.shape) for Af, X in zip(Aflat, Cs)], (Al.T @ y if nl else np.zeros(0))

    # starting point
    Xs, Zs = [], []
    for n, Af, C in zip(sizes, Astack, Cs):
        normsA = np.linalg.norm(Af.reshape(m, n * n), axis=1) if m else np.zeros(1)
        xi = max(10.0, np.sqrt(n), np.sqrt(n) * float(np.max((1 + np.abs(b)) / (1 + normsA))) if m else 10.0)
        eta = max(10.0, np.sqrt(n), float(normsA.max()) if m else 0.0, np.linalg.norm(C))
        Xs.append(xi * np.eye(n))
        Zs.append(eta * np.eye(n))
    xl = 10.0 * np.ones(nl)
    zl = 10.0 * np.ones(nl)
    y = np.zeros(m)

    status = "iteration_limit"
    history = []
    it = 0
    gamma = 0.9
    best = None
    pinf = dinf = gap = np.inf
    if nu == 0:
        status = "optimal"
        pinf = dinf = gap = 0.0
    for it in range(1, settings.max_iterations + 1) if nu else ():
        rp = b - Aop(Xs, xl)
        AtY, Atl = Aadj(y)
        Rd = [C - Z - a for C, Z, a in zip(Cs, Zs, AtY)]
        rdl = cl - zl - Atl
        mu = (sum(float(np.sum(X * Z)) for X, Z in zip(Xs, Zs)) + float(xl @ zl)) / nu
        pobj = sum(float(np.sum(C * X)) for C, X in zip(Cs, Xs)) + float(cl @ xl)
        dobj = float(b @ y)
        pinf = np.linalg.norm(rp) / (1 + np.linalg.norm(b))
        dinf = np.sqrt(sum(np.sum(R * R) for R in Rd) + float(rdl @ rdl)) / (1 + normc_s)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        history.append((it, pobj * normb * normC, dobj * normb * normC, gap, pinf, dinf, mu))
        merit = max(gap, pinf, dinf)
        if best is None or merit < 0.9 * best[0] or (merit < best[0] and it - best[1] < 2):
            best = (merit, it, [X.copy() for X in Xs], xl.copy(), y.copy(), [Z.copy() for Z in Zs], zl.copy(),
                    gap, pinf, dinf)
        if settings.verbose:
            log.info("it %3d pobj %+.10e dobj %+.10e gap %.2e pinf %.2e dinf %.2e", it, pobj, dobj, gap, pinf, dinf)
        if gap <= settings.gap_tol and pinf <= settings.feas_tol and dinf <= settings.feas_tol:
            status = "optimal"
            break
        if dobj > 1e10 and dinf < 1e-6:
            status = "primal_infeasible"
            break
        if pobj < -1e10 and pinf < 1e-6:
            status = "dual_infeasible"
            break

        # Schur complement
        Zinvs = []
        for Z in Zs:
            Lz = np.linalg.cholesky(Z)
            Li = sla.solve_triangular(Lz, np.eye(len(Z)), lower=True)
            Zinvs.append(Li.T @ Li)
        M = np.zeros((m, m))
        for Af, Ast, X, Zi in zip(Aflat, Astack, Xs, Zinvs):
            G = np.matmul(np.matmul(X[None], Ast), Zi[None])
            M += Af @ G.reshape(m, X.size).T
        if nl:
            M += (Al * (xl / zl)) @ Al.T
        M = (M + M.T) / 2
        reg = settings.reg_floor * max(1.0, float(np.max(np.abs(np.diag(M)))) if m else 1.0)
        solve_M = _schur_solver(M, reg)
        if solve_M is None:
            status = "numerical_failure"
            break

        def direction(Rs, rl):
            h = rp.copy()
            for Af, R, X, RdK, Zi in zip(Aflat, Rs, Xs, Rd, Zinvs):
                h += Af @ (X @ RdK @ Zi - R).ravel()
            if nl:
                h += Al @ (xl / zl * rdl - rl)
            dy = solve_M(h)
            AtdY, Atdl = Aadj(dy)
            dZ = [RdK - a for RdK, a in zip(Rd, AtdY)]
            dX = [R - _sym(X @ D @ Zi) for R, X, D, Zi in zip(Rs, Xs, dZ, Zinvs)]
            dzl = rdl - Atdl
            dxl = rl - xl / zl * dzl
            return dX, dy, dZ, dxl, dzl

        def steps(dX, dZ, dxl, dzl):
            ap = min([_max_step(X, D) for X, D in zip(Xs, dX)] + [_max_step_lp(xl, dxl)])
            ad = min([_max_step(Z, D) for Z, D in zip(Zs, dZ)] + [_max_step_lp(zl, dzl)])
            return ap, ad

        # predictor
        dX, dy, dZ, dxl, dzl = direction([-X for X in Xs], -xl)
        ap, ad = steps(dX, dZ, dxl, dzl)
        ap_a, ad_a = min(1.0, ap), min(1.0, ad)
        mu_aff = (
            sum(float(np.sum((X + ap_a * DX) * (Z + ad_a * DZ))) for X, DX, Z, DZ in zip(Xs, dX, Zs, dZ))
            + float((xl + ap_a * dxl) @ (zl + ad_a * dzl))
        ) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        # corrector
        Rs = [sigma * mu * Zi - X - _sym(DX @ DZ @ Zi) for Zi, X, DX, DZ in zip(Zinvs, Xs, dX, dZ)]
        rl = sigma * mu / zl - xl - dxl * dzl / zl if nl else np.zeros(0)
        dX, dy, dZ, dxl, dzl = direction(Rs, rl)
        ap, ad = steps(dX, dZ, dxl, dzl)
        gamma = max(0.9, min(settings.step_fraction, 0.9 + 0.09 * min(ap_a, ad_a)))
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        if settings.verbose:
            log.info("    ap %.3e ad %.3e sigma %.3e mu %.3e reg %.1e", ap, ad, sigma, mu, reg)
        Xs = [_sym(X + ap * D) for X, D in zip(Xs, dX)]
        xl = xl + ap * dxl
        y = y + ad * dy
        Zs = [_sym(Z + ad * D) for Z, D in zip(Zs, dZ)]
        zl = zl + ad * dzl
        if not all(np.all(np.isfinite(X)) for X in Xs + Zs) or not np.all(np.isfinite(y)):
            status = "numerical_failure"
            break
        if it - best[1] >= 6:
            # no progress: keep the best iterate seen
            break

    if status not in ("optimal", "primal_infeasible", "dual_infeasible") and best is not None:
        _, _, Xs, xl, y, Zs, zl, gap, pinf, dinf = best
        if gap < 1e-4 and pinf < 1e-6 and dinf < 1e-6:
            status = "near_optimal"
        elif status == "iteration_limit" and it < settings.max_iterations:
            status = "numerical_failure"

    if red.infeasible and status not in ("optimal", "near_optimal"):
        status = red.infeasible

    # undo scaling and reduction
    Xs = [X * normb for X in Xs]
    xl = xl * normb
    yhat = y * normC
    Zs = [Z * normC for Z in Zs]
    zl = zl * normC
    y_orig, x_free = red.recover(Xs, xl, yhat, Zs, zl)
    sol = SdpSolution(
        primal_blocks=Xs,
        free_values=x_free,
        nonneg_values=xl,
        dual_vector=y_orig,
        dual_blocks=Zs,
        dual_nonneg=zl,
        status=status,
        gap=float(gap),
        pinf=float(pinf),
        dinf=float(dinf),
        iterations=it,
        primal_objective=problem.objective(Xs, x_free, xl),
        dual_objective=float(problem.b @ y_orig),
        solve_time=time.perf_counter() - t0,
        history=history,
    )
    log.debug("solve_sdp: %s after %d iterations, obj %.12g", status, it, sol.primal_objective)
    return sol


# ---------------------------------------------------------------------------
# independent verification


@dataclass
class ResidualReport:
    pinf: float
    dinf: float
    gap: float
    primal_min_eig: float
    dual_min_eig: float
    flags: list[str]

    @property
    def ok(self) -> bool:
        return not self.flags


def check_residuals(problem: SdpProblem, solution: SdpSolution, settings: SolverSettings | None = None) -> ResidualReport:
    """Recompute infeasibilities and gap from the problem data alone."""
    settings = settings or SolverSettings()
    Xs = solution.primal_blocks
    y = solution.dual_vector
    xf = solution.free_values
    xl = solution.nonneg_values
    rp = problem.b - problem.apply(Xs, xf, xl)
    pinf = float(np.linalg.norm(rp) / (1 + np.linalg.norm(problem.b)))
    normC = np.sqrt(sum(np.sum(problem.dense_C(k) ** 2) for k in range(len(problem.block_sizes)))
                    + problem.c_free @ problem.c_free + problem.c_nonneg @ problem.c_nonneg)
    d2 = 0.0
    for k, (Aty, Z) in enumerate(zip(problem.adjoint(y), solution.dual_blocks)):
        R = problem.dense_C(k) - Z - Aty
        d2 += float(np.sum(R * R))
    if problem.n_free:
        r = problem.c_free - problem.A_free.T @ y
        d2 += float(r @ r)
    if problem.n_nonneg:
        r = problem.c_nonneg - solution.dual_nonneg - problem.A_nonneg.T @ y
        d2 += float(r @ r)
    dinf = float(np.sqrt(d2) / (1 + normC))
    pobj = problem.objective(Xs, xf, xl)
    dobj = float(problem.b @ y)
    gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
    pe = min([float(np.linalg.eigvalsh(X).min()) for X in Xs if X.size] + [float(xl.min()) if len(xl) else np.inf])
    de = min([float(np.linalg.eigvalsh(Z).min()) for Z in solution.dual_blocks if Z.size]
             + [float(solution.dual_nonneg.min()) if len(solution.dual_nonneg) else np.inf])
    flags = []
    for name, val, reported, tol in (
        ("pinf", pinf, solution.pinf, settings.feas_tol),
        ("dinf", dinf, solution.dinf, settings.feas_tol),
        ("gap", gap, solution.gap, settings.gap_tol),
    ):
        if val > 10 * tol and val > 10 * max(reported, 0.0):
            flags.append(name)
    if pe < -settings.feas_tol:
        flags.append("primal_psd")
    if de < -settings.feas_tol:
        flags.append("dual_psd")
    return ResidualReport(pinf, dinf, gap, pe, de, flags)


# ---------------------------------------------------------------------------
# SDPA sparse format
#
# The problem maps onto SDPA's dual side (max <F0, Y>, <Fi, Y> = ci, Y PSD):
# one SDPA constraint per equality row, F0 = -C, and free variables split as
# x = x+ - x- inside a trailing LP block.

_FREE_TAG = "* free variables:"


def _fmt(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def sdpa_text(problem: SdpProblem) -> str:
    m = problem.n_rows
    nf, nl = problem.n_free, problem.n_nonneg
    lp = nl + 2 * nf
    sizes = list(problem.block_sizes)
    struct = [str(s) for s in sizes] + ([str(-lp)] if lp else [])
    lines = []
    if nf:
        lines.append(f"{_FREE_TAG} {nf} (last {2 * nf} entries of LP block {len(sizes) + 1}, x = x+ - x-)")
    lines.append(str(m))
    lines.append(str(len(struct)))
    lines.append(" ".join(struct))
    lines.append(" ".join(_fmt(v) for v in problem.b))
    entries = []  # (matno, blk, i, j, val)
    for k, (i, j, v) in enumerate(problem.C_psd):
        for a, c, val in zip(i, j, v):
            entries.append((0, k + 1, int(a) + 1, int(c) + 1, -val))
    for k, (r, i, j, v) in enumerate(problem.A_psd):
        for row, a, c, val in zip(r, i, j, v):
            entries.append((int(row) + 1, k + 1, int(a) + 1, int(c) + 1, val))
    if lp:
        blk = len(sizes) + 1
        for p, val in enumerate(problem.c_nonneg):
            if val:
                entries.append((0, blk, p + 1, p + 1, -val))
        for p, val in enumerate(problem.c_free):
            if val:
                entries.append((0, blk, nl + p + 1, nl + p + 1, -val))
                entries.append((0, blk, nl + nf + p + 1, nl + nf + p + 1, val))
        Al = problem.A_nonneg.tocoo()
        for row, p, val in zip(Al.row, Al.col, Al.data):
            entries.append((int(row) + 1, blk, int(p) + 1, int(p) + 1, val))
        Af = problem.A_free.tocoo()
        for row, p, val in zip(Af.row, Af.col, Af.data):
            entries.append((int(row) + 1, blk, nl + int(p) + 1, nl + int(p) + 1, val))
            entries.append((int(row) + 1, blk, nl + nf + int(p) + 1, nl + nf + int(p) + 1, -val))
    entries.sort(key=lambda e: e[:4])
    for e in entries:
        if e[4] != 0:
            lines.append(f"{e[0]} {e[1]} {e[2]} {e[3]} {_fmt(e[4])}")
    return "\n".join(lines) + "\n"


def export_sdpa(problem: SdpProblem, destination: IO[str] | str) -> None:
    """Write ``problem`` in SDPA sparse format to a path or text stream."""
    text = sdpa_text(problem)
    if isinstance(destination, (str, bytes)) or hasattr(destination, "__fspath__"):
        with open(destination, "w") as fh:
            fh.write(text)
    else:
        destination.write(text)


def read_sdpa(source: IO[str] | str) -> SdpProblem:
    """Parse an SDPA sparse file written by :func:`export_sdpa` (or any plain .dat-s file)."""
    if isinstance(source, str) and "\n" not in source:
        with open(source) as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    nfree = 0
    body = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith(_FREE_TAG):
            nfree = int(s[len(_FREE_TAG):].split()[0])
            continue
        if s[0] in '"*':
            continue
        body.append(s.translate(str.maketrans({c: " " for c in ",{}()"})))
    tokens = iter(body)
    m = int(next(tokens).split()[0])
    nblock = int(next(tokens).split()[0])
    struct = [int(float(t)) for t in next(tokens).split()][:nblock]
    cvec = []
    while len(cvec) < m:
        cvec.extend(float(t) for t in next(tokens).split())
    b = np.array(cvec[:m])
    psd_ids = [k for k, s in enumerate(struct) if s > 0]
    lp_ids = [k for k, s in enumerate(struct) if s < 0]
    if len(lp_ids) > 1:
        raise ValueError("at most one LP block is supported")
    A = {k: ([], [], [], []) for k in psd_ids}
    C = {k: ([], [], []) for k in psd_ids}
    lp_size = -struct[lp_ids[0]] if lp_ids else 0
    lp_obj = np.zeros(lp_size)
    lp_rows, lp_cols, lp_vals = [], [], []
    for line in tokens:
        parts = line.split()
        mat, blk, i, j = (int(p) for p in parts[:4])
        val = float(parts[4])
        k = blk - 1
        if struct[k] > 0:
            if mat == 0:
                C[k][0].append(i - 1)
                C[k][1].append(j - 1)
                C[k][2].append(-val)
            else:
                t = A[k]
                t[0].append(mat - 1)
                t[1].append(i - 1)
                t[2].append(j - 1)
                t[3].append(val)
        else:
            if i != j:
                raise ValueError("LP block entries must be diagonal")
            if mat == 0:
                lp_obj[i - 1] += -val
            else:
                lp_rows.append(mat - 1)
                lp_cols.append(i - 1)
                lp_vals.append(val)
    Alp = sp.csr_matrix((lp_vals, (lp_rows, lp_cols)), shape=(m, lp_size))
    nl = lp_size - 2 * nfree
    if nl < 0:
        raise ValueError("free-variable tag exceeds LP block size")
    A_free = Alp[:, nl : nl + nfree]
    c_free = lp_obj[nl : nl + nfree]
    if nfree:
        neg = Alp[:, nl + nfree :]
        if abs(neg + A_free).max() > 0 or np.any(lp_obj[nl + nfree :] != -c_free):
            raise ValueError("free-variable split columns are not exact negations")
    return SdpProblem(
        block_sizes=tuple(struct[k] for k in psd_ids),
        b=b,
        A_psd=[tuple(np.array(x) for x in A[k]) for k in psd_ids],
        C_psd=[tuple(np.array(x) for x in C[k]) for k in psd_ids],
        A_free=A_free,
        c_free=c_free,
        A_nonneg=Alp[:, :nl],
        c_nonneg=lp_obj[:nl],
    )
