import json

import pytest

from sosupo.dynamics import make_system
from sosupo.polyalg import LinearSymmetry, Polynomial, SymmetryGroup
from sosupo.sdp import solve_sdp
from sosupo.sos import (BoundCertificate, CertificateError, SemialgebraicSet, SizeGuardError, SymmetryError,
                        VAnsatz, check_absorbing, check_equivariance, compile_bound_problem, degree_r,
                        extract_certificate, size_guard, solve_bound, symmetry_reduce)

(x1,) = Polynomial.variables(1)
x, y = Polynomial.variables(2)
MINUS = SymmetryGroup.generated_by([LinearSymmetry.sign_flip([-1])])


def test_degree_r_examples():
    assert degree_r(2, 2, 10) == 11
    assert degree_r(2, 2, 2) == 3
    assert degree_r(8, 2, 2) == 8


class TestCompile:
    def test_counting_example(self):
        P = compile_bound_problem((y, -x), x**2, VAnsatz(2), prune=False)
        assert P.block_sizes == (3,)
        assert P.n_rows == 6
        basis = P.metadata["compiled"].blocks[0][2]
        assert sorted(basis) == sorted([(0, 0), (1, 0), (0, 1)])

    def test_weighted_needs_omega(self):
        from sosupo.sos import CompileError

        with pytest.raises(CompileError):
            compile_bound_problem((-x1,), x1**2, VAnsatz(2), weighted=True)

    def test_weighted_adds_multiplier_block(self):
        omega = SemialgebraicSet.ball(1, 4.0)
        P = compile_bound_problem((x1 - x1**3,), x1**2, VAnsatz(4), omega, weighted=True, prune=False)
        owners = [b[0] for b in P.metadata["compiled"].blocks]
        assert len(set(owners)) == 2

    def test_full_mode_with_group_rejected(self):
        with pytest.raises(ValueError):
            VAnsatz(4, "full", MINUS)

    def test_invariant_basis_is_fixed(self):
        s = make_system("moehlis9", Re=100)
        from sosupo.polyalg import compose_linear

        basis = VAnsatz(4, "invariant", s.symmetry_group).basis(9)
        for b in basis:
            for g in s.symmetry_group:
                assert compose_linear(b, g).allclose(b, 1e-14)


class TestBounds:
    def test_decay(self):
        cert = solve_bound((-x1,), x1**2, VAnsatz(2))
        assert abs(cert.lam) <= 1e-6
        assert cert.identity_residual <= 1e-8
        # lambda - x^2 + 2 c x^2 is SOS iff c >= 1/2; every such V is optimal
        assert cert.V.coeff((2,)) >= 0.5 - 1e-6

    @pytest.mark.parametrize("d", [4, 6])
    def test_bistable(self, d):
        cert = solve_bound((x1 - x1**3,), x1**2, VAnsatz(d))
        assert 1 - 1e-3 <= cert.lam <= 1 + 1e-6

    def test_lower_bound_sense(self):
        cert = solve_bound((x1 - x1**3,), x1**2, VAnsatz(4), sense="min")
        # x = 0 is an equilibrium, so the minimal average is 0
        assert cert.lam <= 1e-6 and cert.lam >= -1e-3
        assert cert.sense_label == "lower_bound_of_min"

    def test_monotone_in_degree(self, vdp):
        lams = [solve_bound(vdp.f, vdp.observable("x2"), VAnsatz(d, "invariant", vdp.symmetry_group)).lam
                for d in (2, 4, 6)]
        assert all(b <= a + 1e-6 for a, b in zip(lams, lams[1:]))

    def test_bound_against_orbit_average(self, vdp_cert):
        from conftest import VDP_CYCLE_X2

        assert VDP_CYCLE_X2 <= vdp_cert.lam + 1e-4

    def test_reconstruction_identity(self, vdp_cert):
        r, e = vdp_cert.verify()
        assert r <= 1e-6 and e >= -1e-6

    def test_weighted_harmonic_on_ball(self):
        # any circle of radius^2 <= 4 is invariant; the largest has average x^2 = 2
        omega = SemialgebraicSet.ball(2, 4.0)
        cert = solve_bound((y, -x), x**2, VAnsatz(2), omega, weighted=True)
        assert abs(cert.lam - 2.0) <= 1e-6


class TestSymmetry:
    def test_parity_split_1d(self):
        P = compile_bound_problem((x1 - x1**3,), x1**2, VAnsatz(2), prune=False)
        R = symmetry_reduce(P, MINUS)
        assert sorted(R.block_sizes) == [1, 2]
        blocks = {tuple(sorted(b[2])) for b in R.metadata["compiled"].blocks}
        assert blocks == {((0,), (2,)), ((1,),)}

    def test_reduced_equals_full_small(self):
        s = make_system("moehlis9", Re=100)
        D = s.observable("D")
        full = solve_bound(s.f, D, VAnsatz(2), sense="min").lam
        red = solve_bound(s.f, D, VAnsatz(2, "invariant", s.symmetry_group), sense="min").lam
        assert abs(full - red) <= 1e-6

    def test_non_equivariant_detected(self):
        lor = make_system("lorenz")
        f = (lor.f[0] + 0.1,) + lor.f[1:]
        with pytest.raises(SymmetryError) as exc:
            check_equivariance(f, lor.symmetry_group)
        assert "xy_flip" in str(exc.value)


class TestAbsorbing:
    def test_decay_feasible(self):
        assert check_absorbing((-x1,), x1**2, 0.5, 1.0).feasible

    def test_conservative_needs_positive_c(self):
        # C = 0: -(x^2 + y^2) is not nonnegative
        assert not check_absorbing((y, -x), x**2 + y**2, 1.0, 0.0).feasible

    def test_rate_must_be_positive(self):
        with pytest.raises(ValueError):
            check_absorbing((-x1,), x1**2, 0.0, 1.0)

    def test_moehlis_ball(self):
        s = make_system("moehlis9", Re=50)
        a = Polynomial.variables(9)
        W = sum((ai**2 for ai in a), Polynomial.zero(9))
        assert check_absorbing(s.f, W, 20.0, 2.0, group=s.symmetry_group).feasible
        # the laminar state has W = 1, so no smaller sublevel set can absorb
        assert not check_absorbing(s.f, W, 20.0, 0.5, group=s.symmetry_group).feasible


class TestCertificates:
    def test_rejects_failed_solution(self):
        P = compile_bound_problem((-x1,), x1**2, VAnsatz(2))
        sol = solve_sdp(P)
        sol.status = "primal_infeasible"
        with pytest.raises(CertificateError):
            extract_certificate(P, sol)

    def test_rejects_corrupted_solution(self):
        P = compile_bound_problem((x1 - x1**3,), x1**2, VAnsatz(4))
        sol = solve_sdp(P)
        sol.primal_blocks[0][0, 0] += 0.1
        with pytest.raises(CertificateError):
            extract_certificate(P, sol)

    def test_json_round_trip(self, vdp_cert, tmp_path):
        path = tmp_path / "c.json"
        vdp_cert.to_json(str(path))
        back = BoundCertificate.from_json(str(path))
        assert back.lam == vdp_cert.lam
        assert back.V.allclose(vdp_cert.V, 0.0)
        back.verify()
        assert json.loads(path.read_text())["format"] == "sosupo-certificate"

    def test_tampered_certificate_fails_verification(self, vdp_cert):
        d = vdp_cert.to_dict()
        d["lambda"] = vdp_cert.lam - 0.01
        with pytest.raises(CertificateError):
            BoundCertificate.from_dict(d).verify()


def test_size_guard():
    s = make_system("moehlis9", Re=100)
    P = compile_bound_problem(s.f, s.observable("D"), VAnsatz(4, "invariant", s.symmetry_group))
    size_guard(P)
    with pytest.raises(SizeGuardError):
        size_guard(P, max_block=10)
