"""Sparse multivariate polynomials with real coefficients.

A :class:`Polynomial` maps exponent tuples to float coefficients. Values are
immutable; every operation returns a new polynomial. Monomials are ordered
graded-lexicographically (``1, a1, a2, ..., a1^2, a1*a2, ...``) everywhere a
deterministic order is needed.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Polynomial",
    "LinearSymmetry",
    "SymmetryGroup",
    "grlex_key",
    "monomials_up_to",
    "lie_derivative",
    "grad",
    "compose_linear",
    "symmetrize",
    "eval_batch",
    "parse_polynomial",
    "format_polynomial",
    "PolyMap",
]

# coefficients below this magnitude are dropped
PRUNE = 1e-300


def grlex_key(mono: Sequence[int]):
    """Sort key for graded lexicographic order (a1 > a2 > ... within a degree)."""
    return (sum(mono), tuple(-e for e in mono))


def monomials_up_to(n: int, degree: int, min_degree: int = 0) -> list[tuple[int, ...]]:
    """All exponent tuples in ``n`` variables with ``min_degree <= deg <= degree``, grlex order."""
    out = []
    for d in range(min_degree, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    out.sort(key=grlex_key)
    return out


def _add_exp(a, b):
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Polynomial in ``n`` variables ``a1..an``.

    Build from a term map ``{exponents: coeff}`` or with the helpers
    :meth:`variable`, :meth:`constant` and :meth:`monomial`.
    """

    __slots__ = ("_n", "_terms", "_compiled", "_hash")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        if n < 1:
            raise ValueError("polynomial dimension must be positive")
        clean: dict[tuple[int, ...], float] = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != n:
                raise ValueError(f"monomial {mono} has length {len(mono)}, expected {n}")
            if any(e < 0 for e in mono):
                raise ValueError(f"negative exponent in {mono}")
            c = float(c) + clean.get(mono, 0.0)
            clean[mono] = c
        self._n = n
        # canonical (grlex) order makes every derived computation independent of construction history
        self._terms = {m: clean[m] for m in sorted(clean, key=grlex_key) if abs(clean[m]) >= PRUNE}
        self._compiled = None
        self._hash = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c: float, n: int) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    @classmethod
    def variable(cls, i: int, n: int) -> "Polynomial":
        """The coordinate ``a_{i+1}`` (``i`` is zero-based)."""
        e = [0] * n
        e[i] = 1
        return cls(n, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, exponents: Sequence[int], coeff: float = 1.0) -> "Polynomial":
        return cls(len(exponents), {tuple(exponents): coeff})

    @classmethod
    def variables(cls, n: int) -> tuple["Polynomial", ...]:
        return tuple(cls.variable(i, n) for i in range(n))

    # -- basic protocol ---------------------------------------------------
    @property
    def n(self) -> int:
        return self._n

    @property
    def terms(self) -> dict[tuple[int, ...], float]:
        return dict(self._terms)

    def items(self):
        """Terms in grlex order."""
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]))

    def coeff(self, mono: Sequence[int]) -> float:
        return self._terms.get(tuple(mono), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> float:
        """Total degree; ``-inf`` for the zero polynomial."""
        if not self._terms:
            return -math.inf
        return max(sum(m) for m in self._terms)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other, self._n)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._n, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        return (self - other).max_abs_coeff() <= atol

    def __repr__(self):
        return f"Polynomial({self._n}, {format_polynomial(self)!r})"

    def __str__(self):
        return format_polynomial(self)

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other._n != self._n:
                raise ValueError(f"dimension mismatch: {self._n} vs {other._n}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self._n)
        raise TypeError(f"cannot combine Polynomial with {type(other).__name__}")

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(self._n, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self._n, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        out: dict[tuple[int, ...], float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = _add_exp(m1, m2)
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial(self._n, out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float, np.floating, np.integer)):
            return NotImplemented
        return self.scale(1.0 / float(other))

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(1.0, self._n)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, s: float) -> "Polynomial":
        return Polynomial(self._n, {m: c * s for m, c in self._terms.items()})

    # -- calculus and transforms -----------------------------------------
    def diff(self, i: int) -> "Polynomial":
        out = {}
        for m, c in self._terms.items():
            if m[i]:
                e = list(m)
                e[i] -= 1
                out[tuple(e)] = c * m[i]
        return Polynomial(self._n, out)

    def grad(self) -> tuple["Polynomial", ...]:
        return tuple(self.diff(i) for i in range(self._n))

    def compose_linear(self, T: "LinearSymmetry") -> "Polynomial":
        return compose_linear(self, T)

    def symmetrize(self, G: "SymmetryGroup") -> "Polynomial":
        return symmetrize(self, G)

    def truncate(self, max_degree: int) -> "Polynomial":
        return Polynomial(self._n, {m: c for m, c in self._terms.items() if sum(m) <= max_degree})

    # -- evaluation -------------------------------------------------------
    def _compile(self):
        if self._compiled is None:
            items = self.items()
            E = np.array([m for m, _ in items], dtype=np.int64).reshape(len(items), self._n)
            c = np.array([v for _, v in items], dtype=float)
            self._compiled = (E, c)
        return self._compiled

    def __call__(self, point) -> float:
        x = np.asarray(point, dtype=float)
        if x.shape != (self._n,):
            raise ValueError(f"point has shape {x.shape}, expected ({self._n},)")
        E, c = self._compile()
        if not len(c):
            return 0.0
        return float(c @ np.prod(x[None, :] ** E, axis=1))

    def evaluate(self, points) -> np.ndarray:
        """Vectorised values at an ``(N, n)`` array of points."""
        return eval_batch(self, points)


def _check_dims(*polys: Polynomial):
    ns = {p.n for p in polys}
    if len(ns) > 1:
        raise ValueError(f"dimension mismatch among polynomials: {sorted(ns)}")


def grad(p: Polynomial) -> tuple[Polynomial, ...]:
    return p.grad()


def lie_derivative(f: Sequence[Polynomial], V: Polynomial) -> Polynomial:
    """``sum_i f_i dV/da_i``, the rate of change of V along the flow of ``f``."""
    if len(f) != V.n:
        raise ValueError(f"vector field has {len(f)} components, V has dimension {V.n}")
    _check_dims(V, *f)
    out: dict[tuple[int, ...], float] = {}
    for i, fi in enumerate(f):
        dV = V.diff(i)
        for m1, c1 in fi._terms.items():
            for m2, c2 in dV._terms.items():
                m = _add_exp(m1, m2)
                out[m] = out.get(m, 0.0) + c1 * c2
    return Polynomial(V.n, out)


# ---------------------------------------------------------------------------
# symmetries


@dataclass(frozen=True)
class LinearSymmetry:
    """Signed permutation ``a -> T a``.

    Stored as ``perm`` and ``signs`` with ``(T a)_i = signs[i] * a[perm[i]]``.
    """

    perm: tuple[int, ...]
    signs: tuple[int, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        n = len(self.perm)
        if sorted(self.perm) != list(range(n)):
            raise ValueError(f"{self.perm} is not a permutation")
        if len(self.signs) != n or any(s not in (1, -1) for s in self.signs):
            raise ValueError("signs must be +-1, one per coordinate")

    @classmethod
    def from_matrix(cls, M, name: str = "") -> "LinearSymmetry":
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        if M.shape != (n, n):
            raise ValueError("symmetry matrix must be square")
        perm, signs = [], []
        for i in range(n):
            nz = np.flatnonzero(M[i])
            if len(nz) != 1 or abs(abs(M[i, nz[0]]) - 1) > 0:
                raise ValueError("only signed permutation matrices are supported")
            perm.append(int(nz[0]))
            signs.append(int(np.sign(M[i, nz[0]])))
        return cls(tuple(perm), tuple(signs), name)

    @classmethod
    def sign_flip(cls, signs: Sequence[int], name: str = "") -> "LinearSymmetry":
        return cls(tuple(range(len(signs))), tuple(int(s) for s in signs), name)

    @classmethod
    def identity(cls, n: int) -> "LinearSymmetry":
        return cls(tuple(range(n)), (1,) * n, "I")

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def matrix(self) -> np.ndarray:
        M = np.zeros((self.n, self.n))
        for i, (j, s) in enumerate(zip(self.perm, self.signs)):
            M[i, j] = s
        return M

    @property
    def is_diagonal(self) -> bool:
        return self.perm == tuple(range(self.n))

    def apply(self, x) -> np.ndarray:
        """Apply to a vector or to the rows of an ``(N, n)`` array."""
        x = np.asarray(x, dtype=float)
        return np.asarray(self.signs) * x[..., list(self.perm)]

    def __matmul__(self, other: "LinearSymmetry") -> "LinearSymmetry":
        # (S T a)_i = s_i (T a)_{p_i} = s_i t_{p_i} a_{q_{p_i}}
        perm = tuple(other.perm[p] for p in self.perm)
        signs = tuple(s * other.signs[p] for s, p in zip(self.signs, self.perm))
        return LinearSymmetry(perm, signs)

    def is_identity(self) -> bool:
        return self.perm == tuple(range(self.n)) and all(s == 1 for s in self.signs)

    def order(self) -> int:
        k, P = 1, self
        while not P.is_identity():
            P = P @ self
            k += 1
        return k

    def monomial_sign(self, mono: Sequence[int]) -> int:
        """Sign picked up by a monomial under a diagonal symmetry."""
        if not self.is_diagonal:
            raise ValueError("monomial signatures are defined only for diagonal symmetries")
        s = 1
        for e, si in zip(mono, self.signs):
            if si < 0 and e % 2:
                s = -s
        return s


class SymmetryGroup:
    """Finite group of signed permutations, closed under composition.

    Construct from generators with :meth:`generated_by`; the full element
    list is enumerated and closure is verified.
    """

    def __init__(self, elements: Sequence[LinearSymmetry], generators: Sequence[LinearSymmetry] | None = None):
        elements = list(elements)
        if not elements:
            raise ValueError("a group needs at least the identity")
        n = elements[0].n
        if any(T.n != n for T in elements):
            raise ValueError("group elements act on different dimensions")
        keys = {(T.perm, T.signs) for T in elements}
        if (tuple(range(n)), (1,) * n) not in keys:
            raise ValueError("group does not contain the identity")
        for S in elements:
            for T in elements:
                P = S @ T
                if (P.perm, P.signs) not in keys:
                    raise ValueError("element list is not closed under composition")
        self.elements = elements
        self.generators = list(generators) if generators is not None else elements
        self.n = n

    @classmethod
    def generated_by(cls, generators: Sequence[LinearSymmetry]) -> "SymmetryGroup":
        generators = list(generators)
        if not generators:
            raise ValueError("need at least one generator")
        n = generators[0].n
        ident = LinearSymmetry.identity(n)
        seen = {(ident.perm, ident.signs): ident}
        frontier = [ident]
        while frontier:
            new = []
            for S in frontier:
                for g in generators:
                    P = g @ S
                    key = (P.perm, P.signs)
                    if key not in seen:
                        seen[key] = P
                        new.append(P)
            frontier = new
        elements = sorted(seen.values(), key=lambda T: (not T.is_identity(), T.perm, tuple(-s for s in T.signs)))
        return cls(elements, generators)

    @classmethod
    def trivial(cls, n: int) -> "SymmetryGroup":
        return cls([LinearSymmetry.identity(n)])

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def is_diagonal(self) -> bool:
        return all(T.is_diagonal for T in self.elements)

    def signature(self, mono: Sequence[int]) -> tuple[int, ...]:
        """Sign of a monomial under each generator (diagonal groups only)."""
        return tuple(g.monomial_sign(mono) for g in self.generators)


def compose_linear(p: Polynomial, T: LinearSymmetry) -> Polynomial:
    """The polynomial ``a -> p(T a)``; exact for signed permutations."""
    if T.n != p.n:
        raise ValueError(f"dimension mismatch: polynomial {p.n}, symmetry {T.n}")
    out: dict[tuple[int, ...], float] = {}
    for mono, c in p._terms.items():
        # prod_i (s_i a_{perm_i})^{e_i}
        e = [0] * p.n
        sign = 1
        for i, k in enumerate(mono):
            if k:
                e[T.perm[i]] += k
                if T.signs[i] < 0 and k % 2:
                    sign = -sign
        key = tuple(e)
        out[key] = out.get(key, 0.0) + sign * c
    return Polynomial(p.n, out)


def symmetrize(p: Polynomial, G: SymmetryGroup) -> Polynomial:
    """Group average ``(1/|G|) sum_T p(T a)``; an idempotent projection onto invariants."""
    if G.n != p.n:
        raise ValueError(f"dimension mismatch: polynomial {p.n}, group {G.n}")
    acc: dict[tuple[int, ...], float] = {}
    for T in G:
        for m, c in compose_linear(p, T)._terms.items():
            acc[m] = acc.get(m, 0.0) + c
    K = len(G)
    return Polynomial(p.n, {m: c / K for m, c in acc.items()})


# ---------------------------------------------------------------------------
# evaluation


def eval_batch(p: Polynomial, points, with_gradient: bool = False):
    """Evaluate ``p`` (and optionally its gradient) at each row of ``points``.

    Returns an ``(N,)`` array of values, or ``(values, gradients)`` with
    gradients of shape ``(N, n)``.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p.n:
        raise ValueError(f"points must have shape (N, {p.n}), got {np.shape(points)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite coordinates in evaluation points")
    E, c = p._compile()
    N = X.shape[0]
    if not len(c):
        vals = np.zeros(N)
        return (vals, np.zeros((N, p.n))) if with_gradient else vals
    maxdeg = int(E.max()) if E.size else 0
    # powers[k, :, j] = X[:, j]**k
    powers = np.ones((maxdeg + 1, N, p.n))
    for k in range(1, maxdeg + 1):
        powers[k] = powers[k - 1] * X
    cols = np.arange(p.n)
    # factors[t, :, j] = X[:, j]**E[t, j]
    factors = powers[E, :, cols[None, :]]  # (T, n, N)
    mono = np.prod(factors, axis=1)  # (T, N)
    vals = c @ mono
    if not with_gradient:
        return vals
    G = np.empty((N, p.n))
    for j in range(p.n):
        ej = E[:, j]
        mask = ej > 0
        if not mask.any():
            G[:, j] = 0.0
            continue
        f = factors[mask].copy()
        f[:, j, :] = powers[ej[mask] - 1, :, j]
        G[:, j] = (c[mask] * ej[mask]) @ np.prod(f, axis=1)
    return vals, G


# ---------------------------------------------------------------------------
# text format:  "3.5*a1^2*a2 - 0.25*a3 + 1"

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<var>a(?P<idx>\d+)(?:\^(?P<exp>\d+))?)|(?P<op>[-+*]))"
)


def _fmt_coeff(c: float) -> str:
    return repr(float(c))


def format_polynomial(p: Polynomial) -> str:
    """Render in the config-file text format; :func:`parse_polynomial` inverts it exactly."""
    if p.is_zero:
        return "0"
    parts = []
    for mono, c in p.items():
        factors = [f"a{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(mono) if e]
        mag = _fmt_coeff(abs(c))
        body = "*".join([mag] + factors)
        sign = "-" if c < 0 else "+"
        parts.append((sign, body))
    first_sign, first = parts[0]
    out = ("-" if first_sign == "-" else "") + first
    for sign, body in parts[1:]:
        out += f" {sign} {body}"
    return out


def parse_polynomial(text: str, n: int) -> Polynomial:
    """Parse a sum of terms like ``2*a1^2*a3 - a2 + 0.5`` in ``n`` variables."""
    pos = 0
    text = text.strip()
    terms: dict[tuple[int, ...], float] = {}
    sign = 1.0
    coeff = 1.0
    exps = [0] * n
    have_factor = False
    expect_factor = True
    if text == "":
        raise ValueError("empty polynomial text")

    def flush():
        nonlocal sign, coeff, exps, have_factor
        if not have_factor:
            raise ValueError(f"dangling operator in {text!r}")
        key = tuple(exps)
        terms[key] = terms.get(key, 0.0) + sign * coeff
        sign, coeff, exps, have_factor = 1.0, 1.0, [0] * n, False

    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ValueError(f"cannot parse polynomial near {text[pos:]!r}")
        pos = m.end()
        if m.group("num") is not None:
            if not expect_factor:
                raise ValueError(f"missing operator before {m.group('num')!r}")
            coeff *= float(m.group("num"))
            have_factor, expect_factor = True, False
        elif m.group("var") is not None:
            if not expect_factor:
                raise ValueError(f"missing operator before {m.group('var')!r}")
            idx = int(m.group("idx"))
            if not 1 <= idx <= n:
                raise ValueError(f"variable a{idx} out of range for n={n}")
            exps[idx - 1] += int(m.group("exp") or 1)
            have_factor, expect_factor = True, False
        else:
            op = m.group("op")
            if op == "*":
                if expect_factor:
                    raise ValueError(f"unexpected '*' in {text!r}")
                expect_factor = True
            elif expect_factor and not have_factor:
                # unary sign
                sign *= -1.0 if op == "-" else 1.0
            else:
                if expect_factor:
                    raise ValueError(f"unexpected {op!r} in {text!r}")
                flush()
                sign = -1.0 if op == "-" else 1.0
                expect_factor = True
    if expect_factor:
        if text.strip() == "0":
            return Polynomial.zero(n)
        raise ValueError(f"polynomial text ends with an operator: {text!r}")
    flush()
    return Polynomial(n, terms)


def as_poly_tuple(polys: Iterable[Polynomial]) -> tuple[Polynomial, ...]:
    polys = tuple(polys)
    _check_dims(*polys)
    return polys


class PolyMap:
    """Compiled evaluator for a tuple of polynomials sharing one monomial table.

    Used for vector fields, where the same point is evaluated many times by
    an integrator.  ``jacobian`` returns the exact derivative matrix.
    """

    def __init__(self, polys: Sequence[Polynomial]):
        polys = as_poly_tuple(polys)
        if not polys:
            raise ValueError("PolyMap needs at least one polynomial")
        self.n = polys[0].n
        self.m = len(polys)
        monos = sorted({mono for p in polys for mono in p.terms}, key=grlex_key)
        self._E = np.array(monos, dtype=np.int64).reshape(len(monos), self.n)
        self._C = np.zeros((self.m, len(monos)))
        index = {mono: k for k, mono in enumerate(monos)}
        for i, p in enumerate(polys):
            for mono, c in p.terms.items():
                self._C[i, index[mono]] = c
        self._maxdeg = int(self._E.max()) if self._E.size else 0
        self._cols = np.arange(self.n)
        self._jac = None
        self._jac_polys = [p.diff(j) for p in polys for j in range(self.n)]
        self.polys = polys

    def _monomials(self, a):
        pw = np.ones((self._maxdeg + 1, self.n))
        for k in range(1, self._maxdeg + 1):
            pw[k] = pw[k - 1] * a
        return np.prod(pw[self._E, self._cols], axis=1)

    def __call__(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if not self._E.size:
            return np.zeros(self.m)
        return self._C @ self._monomials(a)

    def jacobian(self, a) -> np.ndarray:
        if self._jac is None:
            self._jac = PolyMap(self._jac_polys)
        return self._jac(a).reshape(self.m, self.n)

    def batch(self, points) -> np.ndarray:
        """Evaluate at each row of ``points``; returns shape ``(N, m)``."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        pw = np.ones((self._maxdeg + 1,) + X.shape)
        for k in range(1, self._maxdeg + 1):
            pw[k] = pw[k - 1] * X
        mono = np.prod(pw[self._E, :, self._cols[None, :]], axis=1)  # (K, N)
        return (self._C @ mono).T
