"""Compile auxiliary-function bound problems into SDPs and verify certificates.

For an ODE ``da/dt = f(a)`` and observable ``Phi``, every ``lambda`` for which
some polynomial ``V`` makes

    lambda - Phi - f . grad V                                   (*)

nonnegative bounds the long-time average of ``Phi`` from above.  Requiring
(*) to be a sum of squares (or a weighted sum ``s0 + sum_i s_i g_i`` on a
semialgebraic set) turns the search for the smallest such ``lambda`` into an
SDP.  The compiled :class:`~sosupo.sdp.SdpProblem` carries enough metadata to
rebuild ``V`` and the multipliers from a solver answer.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .polyalg import (
    LinearSymmetry,
    Polynomial,
    SymmetryGroup,
    compose_linear,
    format_polynomial,
    grlex_key,
    lie_derivative,
    monomials_up_to,
    parse_polynomial,
    symmetrize,
)
from .sdp import SdpProblem, SdpSolution, SolverSettings, check_residuals, solve_sdp

log = logging.getLogger(__name__)

__all__ = [
    "SemialgebraicSet",
    "VAnsatz",
    "GramForm",
    "BoundCertificate",
    "AbsorbingResult",
    "CompileError",
    "SymmetryError",
    "CertificateError",
    "SizeGuardError",
    "degree_r",
    "compile_bound_problem",
    "compile_absorbing_check",
    "symmetry_reduce",
    "extract_certificate",
    "check_equivariance",
    "solve_bound",
    "check_absorbing",
    "size_guard",
]

CERT_TOL = 1e-6
SYMMETRY_TOL = 1e-10
MAX_BLOCK = 400
MAX_ROWS = 20000


class CompileError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


class CertificateError(RuntimeError):
    pass


class SizeGuardError(RuntimeError):
    pass


def degree_r(deg_phi: int, deg_f: int, d: int) -> int:
    """Degree of ``lambda - Phi - f . grad V`` for ``deg V = d``."""
    if min(deg_phi, deg_f, d) < 0:
        raise ValueError("degrees must be nonnegative")
    return max(deg_phi, deg_f + d - 1)


@dataclass(frozen=True)
class SemialgebraicSet:
    """``{a : g_i(a) >= 0 for all i}``."""

    constraints: tuple[Polynomial, ...]

    def __post_init__(self):
        g = tuple(self.constraints)
        if not g:
            raise ValueError("a semialgebraic set needs at least one constraint")
        if len({p.n for p in g}) != 1:
            raise ValueError("constraints have different dimensions")
        object.__setattr__(self, "constraints", g)

    @property
    def n(self) -> int:
        return self.constraints[0].n

    @property
    def max_constraint_degree(self) -> int:
        return max(int(max(g.degree, 0)) for g in self.constraints)

    @classmethod
    def ball(cls, n: int, radius_sq: float, center=None) -> "SemialgebraicSet":
        return cls((ball_polynomial(n, radius_sq, center),))

    def with_ball(self, radius_sq: float) -> "SemialgebraicSet":
        """Append ``L - |a|^2 >= 0``."""
        return SemialgebraicSet(self.constraints + (ball_polynomial(self.n, radius_sq),))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        ok = np.ones(len(pts), dtype=bool)
        for g in self.constraints:
            ok &= g.evaluate(pts) >= -tol
        return ok


def ball_polynomial(n: int, radius_sq: float, center=None) -> Polynomial:
    xs = Polynomial.variables(n)
    c = np.zeros(n) if center is None else np.asarray(center, float)
    out = Polynomial.constant(radius_sq, n)
    for x, ci in zip(xs, c):
        out = out - (x - ci) ** 2
    return out


@dataclass(frozen=True)
class VAnsatz:
    """Shape of the auxiliary function.

    ``mode`` is ``"full"`` (all monomials of degree 1..d), ``"invariant"``
    (group-averaged monomials, requires ``symmetry_group``) or ``"custom"``
    (``custom_basis`` polynomials).  ``fixed_tail`` is added to V with unit
    coefficient, or with a free scalar multiplier when ``tail_free``.
    """

    degree: int
    mode: str = "full"
    symmetry_group: SymmetryGroup | None = None
    fixed_tail: Polynomial | None = None
    tail_free: bool = False
    custom_basis: tuple[Polynomial, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("full", "invariant", "custom"):
            raise ValueError(f"unknown ansatz mode {self.mode!r}")
        if self.degree < 1:
            raise ValueError("ansatz degree must be positive")
        if self.mode == "invariant" and self.symmetry_group is None:
            raise ValueError("invariant mode needs a symmetry group")
        if self.mode == "full" and self.symmetry_group is not None:
            raise ValueError("a symmetry group requires mode='invariant' (or 'custom')")
        if self.mode == "custom" and not self.custom_basis:
            raise ValueError("custom mode needs custom_basis")

    def basis(self, n: int) -> list[Polynomial]:
        """Polynomials spanning V (constant excluded)."""
        if self.mode == "custom":
            polys = list(self.custom_basis)
            if self.symmetry_group is not None:
                polys = [symmetrize(p, self.symmetry_group) for p in polys]
            return _dedupe([p - Polynomial.constant(p.coeff((0,) * n), n) for p in polys])
        monos = monomials_up_to(n, self.degree, min_degree=1)
        if self.mode == "full":
            return [Polynomial.monomial(m) for m in monos]
        return _dedupe([symmetrize(Polynomial.monomial(m), self.symmetry_group) for m in monos])

    @property
    def effective_degree(self) -> int:
        d = self.degree
        if self.fixed_tail is not None and not self.fixed_tail.is_zero:
            d = max(d, int(self.fixed_tail.degree))
        return d


def _dedupe(polys: Sequence[Polynomial]) -> list[Polynomial]:
    """Drop zero and proportional duplicates, normalising the leading coefficient to 1."""
    seen, out = set(), []
    for p in polys:
        if p.is_zero or p.max_abs_coeff() < 1e-14:
            continue
        lead = max(p.terms, key=grlex_key)
        q = p / p.coeff(lead)
        key = tuple(sorted((m, round(c, 12)) for m, c in q.terms.items()))
        if key not in seen:
            seen.add(key)
            out.append(q)
    return out


@dataclass
class GramForm:
    """Gram basis of one SOS multiplier, possibly split into parity blocks."""

    basis: list[tuple[int, ...]]
    block_labels: list[tuple[int, ...]] | None = None

    @property
    def gram_dimension(self) -> int:
        return len(self.basis)

    def blocks(self) -> list[tuple[tuple[int, ...], list[tuple[int, ...]]]]:
        if self.block_labels is None:
            return [((), list(self.basis))]
        groups: dict = {}
        for m, lab in zip(self.basis, self.block_labels):
            groups.setdefault(lab, []).append(m)
        keys = sorted(groups, key=lambda s: tuple(-x for x in s))
        return [(k, groups[k]) for k in keys]


# ---------------------------------------------------------------------------
# symmetry checks


def check_equivariance(f: Sequence[Polynomial], G: SymmetryGroup, invariants: Sequence[tuple[str, Polynomial]] = (),
                       tol: float = SYMMETRY_TOL) -> None:
    """Raise :class:`SymmetryError` unless ``f(Ta) = T f(a)`` and the named polynomials are invariant."""
    n = len(f)
    for T in G.generators:
        if T.n != n:
            raise SymmetryError(f"generator {T.name or T} acts on dimension {T.n}, system has {n}")
        worst = 0.0
        for i in range(n):
            lhs = compose_linear(f[i], T)
            rhs = f[T.perm[i]] * float(T.signs[i])
            diff = lhs - rhs
            worst = max(worst, diff.max_abs_coeff() if not diff.is_zero else 0.0)
        if worst > tol:
            raise SymmetryError(f"vector field is not equivariant under generator {T.name or T.perm}: "
                                f"coefficient residual {worst:.3e}")
        for name, p in invariants:
            diff = compose_linear(p, T) - p
            r = diff.max_abs_coeff() if not diff.is_zero else 0.0
            if r > tol:
                raise SymmetryError(f"{name} is not invariant under generator {T.name or T.perm}: "
                                    f"coefficient residual {r:.3e}")


# ---------------------------------------------------------------------------
# compiled-problem bookkeeping


@dataclass
class BoundSource:
    """Inputs needed to recompile (used by symmetry_reduce and certificates)."""

    f: tuple[Polynomial, ...]
    phi: Polynomial
    ansatz: VAnsatz
    omega: SemialgebraicSet | None
    weighted: bool
    prune: bool


@dataclass
class Compiled:
    kind: str  # "bound" or "absorbing"
    n: int
    free_names: list[str]
    v_basis: list[Polynomial]
    tail: Polynomial | None
    tail_free: bool
    weights: list[Polynomial]  # g_0 = 1, g_1..g_m (unscaled)
    blocks: list[tuple[int, tuple, list[tuple[int, ...]]]]  # (owner, label, basis)
    scale_phi: float
    scale_f: float
    scale_g: list[float]
    row_monomials: list[tuple[int, ...]]
    source: BoundSource | None
    pruned: list[tuple[int, int, tuple[int, ...]]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def _scale_of(polys: Sequence[Polynomial]) -> float:
    m = max((p.max_abs_coeff() for p in polys if not p.is_zero), default=0.0)
    return 1.0 / m if m > 0 else 1.0


def _gram_bases(n, r, weights, s_global, group, diagonal):
    """Per-multiplier Gram bases: sigma_0 of half-degree r//2, sigma_i of (r - s)//2."""
    forms = []
    for k, g in enumerate(weights):
        top = r if k == 0 else r - s_global
        if top < 0:
            raise CompileError(f"degree bookkeeping inconsistent: r - s = {top} < 0")
        basis = monomials_up_to(n, top // 2)
        labels = [group.signature(m) for m in basis] if diagonal else None
        forms.append(GramForm(basis, labels))
    return forms


def _assemble(n, forms, weights_scaled, free_cols, rhs, prune, kind):
    """Coefficient-matching rows.

    ``free_cols`` maps column index -> {monomial: coeff}; ``rhs`` maps
    monomial -> value.  Gram contributions enter with their own coefficient.
    """
    blocks = []
    for k, form in enumerate(forms):
        for label, basis in form.blocks():
            blocks.append([k, label, list(basis)])

    pruned = []
    while True:
        gram = defaultdict(list)  # monomial -> [(block, a, b, coeff)]
        for bi, (k, _, basis) in enumerate(blocks):
            gw = weights_scaled[k].terms
            for a in range(len(basis)):
                ma = basis[a]
                for b in range(a, len(basis)):
                    mab = tuple(x + y for x, y in zip(ma, basis[b]))
                    for e, c in gw.items():
                        gram[tuple(x + y for x, y in zip(mab, e))].append((bi, a, b, c))
        if not prune:
            break
        free_rows = set()
        for col in free_cols:
            free_rows.update(m for m, c in col.items() if c != 0)
        drop = defaultdict(set)
        for mono, ents in gram.items():
            if mono in free_rows or rhs.get(mono, 0.0) != 0.0:
                continue
            if any(a != b for _, a, b, _ in ents):
                continue
            signs = {np.sign(c) for *_, c in ents}
            if len(signs) == 1:
                for bi, a, _, _ in ents:
                    drop[bi].add(a)
        if not drop:
            break
        for bi, idx in drop.items():
            k, label, basis = blocks[bi]
            pruned.extend((k, label, basis[a]) for a in sorted(idx))
            blocks[bi][2] = [m for a, m in enumerate(basis) if a not in idx]
        blocks = [blk for blk in blocks if blk[2]]

    monos = set(gram) | set(rhs)
    for col in free_cols:
        monos.update(col)
    rows = sorted(monos, key=grlex_key)
    row_of = {m: i for i, m in enumerate(rows)}

    A_psd = []
    for bi in range(len(blocks)):
        A_psd.append(([], [], [], []))
    for mono, ents in gram.items():
        r = row_of[mono]
        for bi, a, b, c in ents:
            t = A_psd[bi]
            t[0].append(r)
            t[1].append(a)
            t[2].append(b)
            t[3].append(c)
    fr, fc, fv = [], [], []
    for j, col in enumerate(free_cols):
        for m, c in col.items():
            if c != 0:
                fr.append(row_of[m])
                fc.append(j)
                fv.append(c)
    A_free = sp.csr_matrix((fv, (fr, fc)), shape=(len(rows), len(free_cols)))
    b = np.array([rhs.get(m, 0.0) for m in rows])

    # drop rows that are identically 0 = 0
    used = np.zeros(len(rows), dtype=bool)
    for t in A_psd:
        used[np.asarray(t[0], dtype=np.int64)] = True
    used[fr] = True
    used |= b != 0
    if not used.all():
        keep = np.flatnonzero(used)
        remap = -np.ones(len(rows), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        A_psd = [(remap[np.asarray(t[0], dtype=np.int64)], t[1], t[2], t[3]) for t in A_psd]
        A_free = A_free[keep]
        b = b[keep]
        rows = [rows[i] for i in keep]
    sizes = tuple(len(blk[2]) for blk in blocks)
    C = [((), (), ()) for _ in blocks]
    return sizes, A_psd, C, A_free, b, rows, [(k, lab, basis) for k, lab, basis in blocks], pruned


def compile_bound_problem(
    f: Sequence[Polynomial],
    phi: Polynomial,
    ansatz: VAnsatz,
    omega: SemialgebraicSet | None = None,
    weighted: bool = False,
    prune: bool = True,
) -> SdpProblem:
    """SDP for ``min lambda`` s.t. ``lambda - phi - f.grad V = s0 + sum_i s_i g_i`` with SOS ``s_i``.

    With ``weighted=False`` only ``s0`` is present.  Data are scaled to unit
    maximal coefficient; :func:`extract_certificate` undoes the scaling.
    """
    f = tuple(f)
    n = len(f)
    if any(p.n != n for p in f) or phi.n != n:
        raise CompileError("f and phi must all have dimension len(f)")
    if weighted and omega is None:
        raise CompileError("weighted formulation needs a semialgebraic set omega")
    if omega is not None and omega.n != n:
        raise CompileError("omega dimension differs from the system")
    group = ansatz.symmetry_group
    gs = list(omega.constraints) if (weighted and omega is not None) else []
    if group is not None:
        inv = [("phi", phi)] + [(f"g{i + 1}", g) for i, g in enumerate(gs)]
        if ansatz.fixed_tail is not None:
            inv.append(("fixed_tail", ansatz.fixed_tail))
        check_equivariance(f, group, inv)
    diagonal = group is not None and group.is_diagonal

    s_phi = _scale_of([phi])
    s_f = _scale_of(f)
    f_s = tuple(p * s_f for p in f)
    phi_s = phi * s_phi
    s_g = [_scale_of([g]) for g in gs]
    weights = [Polynomial.constant(1.0, n)] + gs
    weights_s = [weights[0]] + [g * u for g, u in zip(gs, s_g)]

    v_basis = ansatz.basis(n)
    deg_f = int(max(p.degree for p in f)) if any(not p.is_zero for p in f) else 0
    deg_phi = int(max(phi.degree, 0))
    r = degree_r(deg_phi, deg_f, ansatz.effective_degree)
    s_glob = omega.max_constraint_degree if weighted else 0
    forms = _gram_bases(n, r, weights, s_glob, group, diagonal)

    # free columns: lambda, V coefficients, optional tail multiplier
    names = ["lambda"]
    cols = [{(0,) * n: -1.0}]
    for v in v_basis:
        names.append(f"V[{format_polynomial(v)}]")
        cols.append(dict(lie_derivative(f_s, v).terms))
    rhs = {m: -c for m, c in phi_s.terms.items()}
    tail = ansatz.fixed_tail
    if tail is not None and not tail.is_zero:
        lt = lie_derivative(f_s, tail)
        if ansatz.tail_free:
            names.append("tau")
            cols.append(dict(lt.terms))
        else:
            # V contains tail with unit coefficient, i.e. s_phi/s_f in scaled units
            for m, c in lt.terms.items():
                rhs[m] = rhs.get(m, 0.0) - c * s_phi / s_f
    if diagonal:
        # rows of non-invariant monomials must vanish identically
        def trivial(m):
            return all(x == 1 for x in group.signature(m))

        worst = max([abs(c) for m, c in rhs.items() if not trivial(m)]
                    + [abs(c) for col in cols for m, c in col.items() if not trivial(m)], default=0.0)
        if worst > SYMMETRY_TOL:
            raise SymmetryError(f"non-invariant residual coefficient {worst:.3e} under a diagonal group")
        rhs = {m: c for m, c in rhs.items() if trivial(m)}
        cols = [{m: c for m, c in col.items() if trivial(m)} for col in cols]

    sizes, A_psd, C, A_free, b, rows, blocks, pruned = _assemble(n, forms, weights_s, cols, rhs, prune, "bound")
    c_free = np.zeros(len(cols))
    c_free[0] = 1.0
    comp = Compiled(
        kind="bound",
        n=n,
        free_names=names,
        v_basis=v_basis,
        tail=tail if (tail is not None and not tail.is_zero) else None,
        tail_free=ansatz.tail_free,
        weights=weights,
        blocks=blocks,
        scale_phi=s_phi,
        scale_f=s_f,
        scale_g=[1.0] + s_g,
        row_monomials=rows,
        source=BoundSource(f, phi, ansatz, omega, weighted, prune),
        pruned=pruned,
        extra={"r": r, "gram_half_degrees": [form.basis and max(sum(m) for m in form.basis) for form in forms]},
    )
    log.debug("compiled bound problem: %d rows, blocks %s, %d free", len(rows), sizes, len(cols))
    return SdpProblem(sizes, b, A_psd, C, A_free, c_free, metadata={"compiled": comp})


def symmetry_reduce(problem: SdpProblem, G: SymmetryGroup) -> SdpProblem:
    """Recompile a bound problem with V restricted to G-invariants and Gram matrices split by parity."""
    comp = _compiled(problem)
    if comp.kind == "absorbing":
        src = comp.extra["source"]
        return compile_absorbing_check(*src[:4], group=G, prune=src[4])
    src = comp.source
    a = src.ansatz
    if a.mode == "custom":
        ans = replace(a, symmetry_group=G)
    else:
        ans = VAnsatz(a.degree, "invariant", G, a.fixed_tail, a.tail_free)
    return compile_bound_problem(src.f, src.phi, ans, src.omega, src.weighted, src.prune)


def _compiled(problem: SdpProblem) -> Compiled:
    comp = problem.metadata.get("compiled") if problem.metadata else None
    if not isinstance(comp, Compiled):
        raise ValueError("problem was not produced by the sos compiler")
    return comp


# ---------------------------------------------------------------------------
# absorbing-set checks


def compile_absorbing_check(
    f: Sequence[Polynomial],
    W: Polynomial,
    lambda_rate: float,
    C: float,
    group: SymmetryGroup | None = None,
    prune: bool = True,
) -> SdpProblem:
    """Feasibility of ``C - W - rate * f.grad W`` being SOS, posed as ``max t``.

    The SOS target is ``p - t * sum_{m in basis} m^2``; the check succeeds when
    the optimal ``t`` is nonnegative (up to tolerance).  With a group, W is
    replaced by its group average and Gram matrices are split by parity.
    """
    if not lambda_rate > 0:
        raise ValueError("lambda_rate must be positive")
    f = tuple(f)
    n = len(f)
    if W.n != n:
        raise CompileError("W dimension differs from the system")
    if group is not None:
        W = symmetrize(W, group)
        check_equivariance(f, group)
    diagonal = group is not None and group.is_diagonal
    p = Polynomial.constant(C, n) - W - lie_derivative(f, W) * lambda_rate
    scale = _scale_of([p])
    ps = p * scale
    deg = int(max(ps.degree, 0))
    forms = _gram_bases(n, deg, [Polynomial.constant(1.0, n)], 0, group, diagonal)
    col = defaultdict(float)
    for m in forms[0].basis:
        col[tuple(2 * x for x in m)] += 1.0
    rhs = dict(ps.terms)
    cols = [dict(col)]
    if diagonal:
        rhs = {m: c for m, c in rhs.items() if all(x == 1 for x in group.signature(m))}
    sizes, A_psd, Cc, A_free, b, rows, blocks, pruned = _assemble(n, forms, [Polynomial.constant(1.0, n)], cols, rhs,
                                                                  prune, "absorbing")
    comp = Compiled(
        kind="absorbing",
        n=n,
        free_names=["t"],
        v_basis=[],
        tail=None,
        tail_free=False,
        weights=[Polynomial.constant(1.0, n)],
        blocks=blocks,
        scale_phi=scale,
        scale_f=1.0,
        scale_g=[1.0],
        row_monomials=rows,
        source=None,
        pruned=pruned,
        extra={"p": p, "W": W, "rate": lambda_rate, "C": C, "source": (f, W, lambda_rate, C, prune)},
    )
    return SdpProblem(sizes, b, A_psd, Cc, A_free, np.array([-1.0]), metadata={"compiled": comp})


@dataclass
class AbsorbingResult:
    feasible: bool
    margin: float
    W: Polynomial
    lambda_rate: float
    C: float
    status: str

    def summary(self) -> str:
        verdict = "certified" if self.feasible else "not certified"
        return (f"{{W <= {self.C:g}}} {verdict} (rate {self.lambda_rate:g}, margin {self.margin:.3e}, "
                f"solver {self.status})")


def check_absorbing(f, W, lambda_rate, C, group=None, settings: SolverSettings | None = None,
                    tol: float = 1e-7) -> AbsorbingResult:
    prob = compile_absorbing_check(f, W, lambda_rate, C, group)
    comp = _compiled(prob)
    sol = solve_sdp(prob, settings)
    margin = float(sol.free_values[0]) / comp.scale_phi if sol.ok else -np.inf
    feasible = sol.ok and margin >= -tol
    return AbsorbingResult(bool(feasible), margin, comp.extra["W"], lambda_rate, C, sol.status)


# ---------------------------------------------------------------------------
# certificates


@dataclass
class Multiplier:
    weight: Polynomial
    basis: list[tuple[int, ...]]
    gram: np.ndarray

    def polynomial(self) -> Polynomial:
        n = self.weight.n
        terms: dict = defaultdict(float)
        for a, ma in enumerate(self.basis):
            for b, mb in enumerate(self.basis):
                terms[tuple(x + y for x, y in zip(ma, mb))] += self.gram[a, b]
        return Polynomial(n, terms)


@dataclass
class BoundCertificate:
    """``lam`` bounds the long-time average of ``phi`` (above for ``sense='max'``, below for ``'min'``)."""

    lam: float
    V: Polynomial
    f: tuple[Polynomial, ...]
    phi: Polynomial
    multipliers: list[Multiplier]
    identity_residual: float
    gram_min_eig: float
    sense: str = "max"
    degree: int = 0
    status: str = "optimal"
    info: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.V.n

    @property
    def phi_eff(self) -> Polynomial:
        return self.phi if self.sense == "max" else -self.phi

    @property
    def lambda_eff(self) -> float:
        return self.lam if self.sense == "max" else -self.lam

    @property
    def sense_label(self) -> str:
        return "upper_bound_of_max" if self.sense == "max" else "lower_bound_of_min"

    def residual_polynomial(self) -> Polynomial:
        res = Polynomial.constant(self.lambda_eff, self.n) - self.phi_eff - lie_derivative(self.f, self.V)
        for mult in self.multipliers:
            res = res - mult.polynomial() * mult.weight
        return res

    def verify(self, tol: float = CERT_TOL) -> tuple[float, float]:
        """Recompute (identity residual, min Gram eigenvalue) from scratch and raise on failure."""
        scale = _scale_of([self.phi])
        res = self.residual_polynomial()
        r = (res.max_abs_coeff() if not res.is_zero else 0.0) * scale
        e = min((float(np.linalg.eigvalsh(m.gram).min()) * scale for m in self.multipliers if m.gram.size),
                default=0.0)
        if r > tol or e < -tol:
            raise CertificateError(f"certificate fails verification: identity residual {r:.3e}, "
                                   f"min Gram eigenvalue {e:.3e} (tolerance {tol:g})")
        return r, e

    def summary(self) -> str:
        word = "upper bound on max" if self.sense == "max" else "lower bound on min"
        return (f"lambda = {self.lam:.10g} ({word} of time average), degree {self.degree}, "
                f"identity residual {self.identity_residual:.2e}, min Gram eig {self.gram_min_eig:.2e}")

    def to_dict(self) -> dict:
        return {
            "format": "sosupo-certificate",
            "version": 1,
            "n": self.n,
            "sense": self.sense,
            "lambda": self.lam,
            "degree": self.degree,
            "status": self.status,
            "phi": format_polynomial(self.phi),
            "f": [format_polynomial(p) for p in self.f],
            "V": format_polynomial(self.V),
            "multipliers": [
                {"weight": format_polynomial(m.weight), "basis": [list(b) for b in m.basis], "gram": m.gram.tolist()}
                for m in self.multipliers
            ],
            "identity_residual": self.identity_residual,
            "gram_min_eig": self.gram_min_eig,
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundCertificate":
        if d.get("format") != "sosupo-certificate":
            raise ValueError("not a certificate record")
        n = int(d["n"])
        mults = [
            Multiplier(parse_polynomial(m["weight"], n), [tuple(b) for b in m["basis"]],
                       np.array(m["gram"], dtype=float).reshape(len(m["basis"]), len(m["basis"])))
            for m in d["multipliers"]
        ]
        return cls(
            lam=float(d["lambda"]),
            V=parse_polynomial(d["V"], n),
            f=tuple(parse_polynomial(s, n) for s in d["f"]),
            phi=parse_polynomial(d["phi"], n),
            multipliers=mults,
            identity_residual=float(d["identity_residual"]),
            gram_min_eig=float(d["gram_min_eig"]),
            sense=d["sense"],
            degree=int(d.get("degree", 0)),
            status=d.get("status", "optimal"),
            info=d.get("info", {}),
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path: str) -> "BoundCertificate":
        if text_or_path.lstrip().startswith("{"):
            return cls.from_dict(json.loads(text_or_path))
        with open(text_or_path) as fh:
            return cls.from_dict(json.load(fh))


def extract_certificate(problem: SdpProblem, solution: SdpSolution, tol: float = CERT_TOL,
                        sense: str = "max") -> BoundCertificate:
    """Rebuild ``(lambda, V, sigma_i)`` from a solver answer and verify the polynomial identity.

    ``sense='min'`` means the problem was compiled with ``-Phi``; the returned
    certificate then stores the original ``Phi`` and ``lam = -lambda``.
    """
    comp = _compiled(problem)
    if comp.kind != "bound":
        raise ValueError("extract_certificate needs a bound problem")
    if not solution.ok:
        raise CertificateError(f"solver status {solution.status!r}; no certificate (gap {solution.gap:.2e}, "
                               f"pinf {solution.pinf:.2e}, dinf {solution.dinf:.2e})")
    s, t = comp.scale_phi, comp.scale_f
    x = solution.free_values
    lam_eff = float(x[0]) / s
    V = Polynomial.zero(comp.n)
    for c, v in zip(x[1 : 1 + len(comp.v_basis)], comp.v_basis):
        V = V + v * (float(c) * t / s)
    if comp.tail is not None:
        coef = float(x[-1]) * t / s if comp.tail_free else 1.0
        V = V + comp.tail * coef
    # gather Gram blocks per multiplier (block-diagonal in the parity basis)
    per_owner = defaultdict(list)
    for (owner, label, basis), X in zip(comp.blocks, solution.primal_blocks):
        per_owner[owner].append((basis, X))
    mults = []
    for owner, g in enumerate(comp.weights):
        parts = per_owner.get(owner, [])
        basis = [m for bas, _ in parts for m in bas]
        G = np.zeros((len(basis), len(basis)))
        pos = 0
        for bas, X in parts:
            k = len(bas)
            G[pos : pos + k, pos : pos + k] = X * comp.scale_g[owner] / s
            pos += k
        mults.append(Multiplier(g, basis, G))
    src = comp.source
    phi = src.phi if sense == "max" else -src.phi
    cert = BoundCertificate(
        lam=lam_eff if sense == "max" else -lam_eff,
        V=V,
        f=src.f,
        phi=phi,
        multipliers=mults,
        identity_residual=np.inf,
        gram_min_eig=min((float(np.linalg.eigvalsh(X).min()) for X in solution.primal_blocks if X.size), default=0.0),
        sense=sense,
        degree=src.ansatz.degree,
        status=solution.status,
        info={
            "rows": problem.n_rows,
            "blocks": list(problem.block_sizes),
            "free": problem.n_free,
            "iterations": solution.iterations,
            "gap": solution.gap,
            "pinf": solution.pinf,
            "dinf": solution.dinf,
            "solve_time": solution.solve_time,
            "symmetry": src.ansatz.symmetry_group is not None,
            "weighted": src.weighted,
            "pruned_monomials": len(comp.pruned),
        },
    )
    res = cert.residual_polynomial()
    cert.identity_residual = (res.max_abs_coeff() if not res.is_zero else 0.0) * _scale_of([cert.phi])
    if cert.identity_residual > tol or cert.gram_min_eig < -tol:
        raise CertificateError(f"certificate rejected: identity residual {cert.identity_residual:.3e}, "
                               f"min Gram eigenvalue {cert.gram_min_eig:.3e} (tolerance {tol:g})")
    return cert


def size_guard(problem: SdpProblem, max_block: int = MAX_BLOCK, max_rows: int = MAX_ROWS) -> None:
    big = max(problem.block_sizes, default=0)
    if big > max_block or problem.n_rows > max_rows:
        raise SizeGuardError(
            f"problem too large for the bundled solver (largest block {big}, {problem.n_rows} rows; "
            f"limits {max_block}/{max_rows}); write it with export-sdpa and solve externally")


def solve_bound(
    f: Sequence[Polynomial],
    phi: Polynomial,
    ansatz: VAnsatz,
    omega: SemialgebraicSet | None = None,
    weighted: bool = False,
    sense: str = "max",
    settings: SolverSettings | None = None,
    guard: bool = True,
    tol: float = CERT_TOL,
) -> BoundCertificate:
    """Compile, solve and verify in one call."""
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    target = phi if sense == "max" else -phi
    prob = compile_bound_problem(f, target, ansatz, omega, weighted)
    if guard:
        size_guard(prob)
    sol = solve_sdp(prob, settings)
    report = check_residuals(prob, sol, settings)
    cert = extract_certificate(prob, sol, tol, sense=sense)
    cert.info["residual_flags"] = report.flags
    return cert
