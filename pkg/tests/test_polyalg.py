import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_eval
from sosupo.dynamics import make_system
from sosupo.moehlis import T1_SIGNS
from sosupo.polyalg import (LinearSymmetry, Polynomial, PolyMap, SymmetryGroup, compose_linear, eval_batch,
                            format_polynomial, grad, lie_derivative, monomials_up_to, parse_polynomial,
                            symmetrize)

x, y = Polynomial.variables(2)


def poly_strategy(n=2, max_deg=3, max_terms=5):
    # small integer coefficients keep float arithmetic exact
    mono = st.tuples(*[st.integers(0, max_deg)] * n)
    return st.dictionaries(mono, st.integers(-5, 5), max_size=max_terms).map(lambda d: Polynomial(n, d))


def signed_perm_strategy(n=3):
    return st.tuples(st.permutations(range(n)), st.tuples(*[st.sampled_from([-1, 1])] * n)).map(
        lambda ps: LinearSymmetry(tuple(ps[0]), ps[1]))


class TestArithmetic:
    def test_cancellation(self):
        assert (x + y) + (x - y) == 2 * x

    def test_monomial_product(self):
        assert x * x == Polynomial.monomial((2, 0))

    def test_scale_by_zero_is_empty(self):
        p = (x**2 + 1).scale(0)
        assert p.is_zero and len(p.terms) == 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            _ = x + Polynomial.variable(0, 3)

    def test_zero_degree_sentinel(self):
        assert Polynomial.zero(2).degree == -math.inf

    @given(poly_strategy(), poly_strategy(), poly_strategy())
    @settings(max_examples=60, deadline=None)
    def test_ring_axioms(self, p, q, r):
        assert (p + q) + r == p + (q + r)
        assert (p * q) * r == p * (q * r)
        assert p * (q + r) == p * q + p * r
        assert p + q == q + p


class TestCalculus:
    def test_grad_examples(self):
        assert grad(x**2 + y**2) == (2 * x, 2 * y)
        assert grad(Polynomial.constant(3.0, 2)) == (Polynomial.zero(2), Polynomial.zero(2))
        assert grad(x**2 * y) == (2 * x * y, x**2)

    def test_lie_derivative_examples(self):
        assert lie_derivative((y, -x), x**2 + y**2).is_zero
        (z1,) = Polynomial.variables(1)
        assert lie_derivative((-z1,), z1**2) == -2 * z1**2
        lor = make_system("lorenz")
        a, b, c = Polynomial.variables(3)
        assert lie_derivative(lor.f, c).allclose(a * b - (8.0 / 3.0) * c, 1e-15)

    def test_lie_derivative_pointwise(self, rng):
        f = (x * y - y**3 + 1, x**2 - 2 * y)
        V = x**4 + 3 * x * y**2 - y
        L = lie_derivative(f, V)
        pts = rng.standard_normal((100, 2))
        lhs = eval_batch(L, pts)
        fv = np.column_stack([eval_batch(fi, pts) for fi in f])
        _, gV = eval_batch(V, pts, with_gradient=True)
        rhs = np.sum(fv * gV, axis=1)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_lie_derivative_degree(self):
        f = (x**2, y**2)
        V = x**3 * y
        assert lie_derivative(f, V).degree <= 2 + 4 - 1


class TestSymmetry:
    def test_compose_examples(self):
        minus = LinearSymmetry.sign_flip((-1,))
        (z1,) = Polynomial.variables(1)
        assert compose_linear(z1, minus) == -z1
        T1 = LinearSymmetry.sign_flip(T1_SIGNS)
        a4 = Polynomial.variable(3, 9)
        assert compose_linear(a4**2, T1) == a4**2
        swap = LinearSymmetry((1, 0), (1, 1))
        assert compose_linear(x + y, swap) == x + y

    def test_symmetrize_examples(self):
        G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip((-1,))])
        (z1,) = Polynomial.variables(1)
        assert symmetrize(z1, G).is_zero
        assert symmetrize(z1**2, G) == z1**2
        assert symmetrize(z1**3 + z1**2, G) == z1**2

    @given(poly_strategy(3, 3, 6), signed_perm_strategy(3))
    @settings(max_examples=60, deadline=None)
    def test_order_returns_identity(self, p, T):
        q = p
        for _ in range(T.order()):
            q = compose_linear(q, T)
        assert q == p

    @given(poly_strategy(3, 3, 6), signed_perm_strategy(3))
    @settings(max_examples=40, deadline=None)
    def test_symmetrize_invariant_and_idempotent(self, p, T):
        G = SymmetryGroup.generated_by([T])
        q = symmetrize(p, G)
        for g in G:
            assert compose_linear(q, g).allclose(q, 1e-14)
        assert symmetrize(q, G).allclose(q, 1e-14)

    def test_group_validation(self):
        with pytest.raises(ValueError):
            SymmetryGroup([LinearSymmetry.sign_flip((-1, 1))])  # no identity
        G = SymmetryGroup.generated_by([LinearSymmetry.sign_flip((-1, 1)), LinearSymmetry.sign_flip((1, -1))])
        assert len(G) == 4

    def test_from_matrix_rejects_general(self):
        with pytest.raises(ValueError):
            LinearSymmetry.from_matrix(np.array([[0.6, 0.8], [-0.8, 0.6]]))


class TestEvaluation:
    def test_examples(self):
        v, g = eval_batch(x**2 + y**2, [[3.0, 4.0]], with_gradient=True)
        assert v[0] == 25 and np.array_equal(g[0], [6.0, 8.0])
        assert eval_batch(Polynomial.zero(2), [[1.0, 2.0]])[0] == 0

    def test_against_naive_oracle(self, rng):
        monos = monomials_up_to(3, 6)
        terms = {m: rng.standard_normal() for m in monos if rng.random() < 0.5}
        p = Polynomial(3, terms)
        for _ in range(20):
            pt = rng.uniform(-1.5, 1.5, 3)
            ref = naive_eval(terms, pt)
            assert abs(eval_batch(p, pt)[0] - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_gradient_matches_grad(self, rng):
        p = 2 * x**3 * y - y**4 + x
        pts = rng.standard_normal((50, 2))
        _, G = eval_batch(p, pts, with_gradient=True)
        for j, gj in enumerate(grad(p)):
            assert np.allclose(G[:, j], eval_batch(gj, pts), rtol=1e-13)

    def test_errors(self):
        with pytest.raises(ValueError):
            eval_batch(x, [[1.0, 2.0, 3.0]])
        with pytest.raises(ValueError):
            eval_batch(x, [[np.nan, 0.0]])

    def test_polymap_matches(self, rng):
        f = (x * y - y**3 + 1, x**2 - 2 * y)
        pm = PolyMap(f)
        a = rng.standard_normal(2)
        assert np.allclose(pm(a), [eval_batch(fi, a)[0] for fi in f])
        J = pm.jacobian(a)
        assert np.allclose(J, [[eval_batch(fi.diff(j), a)[0] for j in range(2)] for fi in f])


class TestText:
    def test_round_trip(self):
        p = 3.5 * x**2 * y - 0.25 * y + 1
        assert parse_polynomial(format_polynomial(p), 2) == p

    @given(poly_strategy(3, 4, 6))
    @settings(max_examples=50, deadline=None)
    def test_round_trip_random(self, p):
        assert parse_polynomial(format_polynomial(p), 3) == p

    def test_whitespace_insensitive(self):
        assert parse_polynomial("2*a1^2*a2-a2+0.5", 2) == parse_polynomial(" 2 * a1^2 * a2 - a2 + 0.5 ", 2)

    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            parse_polynomial("a3", 2)
