import math

import numpy as np
import pytest

from conftest import VDP_CYCLE_X2, VDP_PERIOD
from oracles import fd_flow_jacobian
from sosupo.dynamics import (BlowUpError, IntegratorControl, SHOOTING_CONTROL, Trajectory, flow, integrate,
                             make_system, monodromy, time_average)
from sosupo.moehlis import T1_SIGNS, T2_SIGNS, check_invariants, energy_cubic_coefficients, generate
from sosupo.polyalg import LinearSymmetry, Polynomial, monomials_up_to


class TestModel:
    def test_energy_conservation(self):
        c = generate()
        assert max(abs(v) for v in energy_cubic_coefficients(c).values()) <= 1e-12

    def test_decay_rates(self):
        lam = generate().lambda_decay
        assert np.all(lam > 0) and np.all(lam >= lam[0]) and np.all(lam <= lam[8])

    def test_laminar_fixed_point(self):
        s = make_system("moehlis9", Re=100)
        assert np.max(np.abs(s(s.known_equilibria[0]))) <= 1e-12
        assert generate().N[0, 0, 0] == 0

    @pytest.mark.parametrize("signs", [T1_SIGNS, T2_SIGNS])
    def test_equivariance(self, signs):
        s = make_system("moehlis9", Re=100)
        assert s.equivariance_residual(LinearSymmetry.sign_flip(signs), points=100) <= 1e-10

    def test_check_catches_transcription_slip(self):
        c = generate()
        N = c.N.copy()
        N[1, 3, 5] *= 1.001
        bad = type(c)(c.lambda_decay, N, c.alpha, c.beta, c.gamma)
        with pytest.raises(ValueError):
            check_invariants(bad)

    def test_integration_equivariance(self, rng):
        s = make_system("moehlis9", Re=100)
        a0 = np.zeros(9)
        a0[0] = 1
        a0 += 0.2 * rng.standard_normal(9)
        ts = np.linspace(1, 50, 10)
        ctl = IntegratorControl("dop853", rtol=1e-11, atol=1e-13)
        base = integrate(s, a0, 50, ctl, t_eval=ts).states
        T = LinearSymmetry.sign_flip(T1_SIGNS)
        img = integrate(s, T.apply(a0), 50, ctl, t_eval=ts).states
        assert np.max(np.abs(img - T.apply(base))) <= 1e-6


class TestRegistry:
    def test_lorenz_equilibria(self):
        s = make_system("lorenz", sigma=10, rho=28, beta=8 / 3)
        r = math.sqrt(72)
        for eq in ([r, r, 27], [-r, -r, 27]):
            assert np.linalg.norm(s(np.array(eq))) <= 1e-10

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            make_system("moehlis9", Re=-1)
        with pytest.raises(KeyError):
            make_system("nonexistent")

    def test_custom_and_mapping_spec(self):
        s = make_system({"name": "custom", "f": ["a2", "-a1"], "observables": {"r2": "a1^2 + a2^2"}})
        assert s.n == 2 and "r2" in s.observables

    def test_observables(self):
        s = make_system("moehlis9", Re=100)
        a_l = s.known_equilibria[0]
        assert s.observable("E")(a_l) == 0
        assert abs(s.observable("D")(a_l) - s.coefficients.lambda_decay[0] / 100) <= 1e-15


class TestIntegrate:
    def test_harmonic_return(self):
        tr = integrate(make_system("harmonic"), [1.0, 0.0], 2 * math.pi)
        assert np.linalg.norm(tr.end - [1.0, 0.0]) <= 1e-8

    def test_decay_closed_form(self):
        assert abs(flow(make_system("decay"), [1.0], 1.0)[0] - math.exp(-1)) <= 1e-9

    def test_rk4(self):
        tr = integrate(make_system("decay"), [1.0], 1.0, IntegratorControl("rk4", dt=1e-3))
        assert abs(tr.end[0] - math.exp(-1)) <= 1e-12

    def test_blow_up(self):
        s = make_system("custom", f=["a1^2"])
        with pytest.raises(BlowUpError) as exc:
            integrate(s, [1.0], 2.0)
        assert exc.value.t < 1.0 + 1e-3

    def test_bad_input(self):
        s = make_system("decay")
        with pytest.raises(ValueError):
            integrate(s, [np.nan], 1.0)
        with pytest.raises(ValueError):
            integrate(s, [1.0], -1.0)

    def test_moehlis_enters_unit_ball(self, rng):
        s = make_system("moehlis9", Re=50)
        a0 = np.zeros(9)
        a0[0] = 1
        a0 += 0.3 * rng.standard_normal(9)
        tr = integrate(s, a0, 1000, IntegratorControl("dop853"))
        late = tr.states[tr.times >= 900]
        assert np.all(np.linalg.norm(late, axis=1) <= 1 + 1e-9)

    def test_csv_round_trip(self, tmp_path):
        tr = integrate(make_system("harmonic"), [1.0, 0.0], 1.0)
        tr.to_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t,a1,a2"
        back = Trajectory.from_csv(tmp_path / "t.csv")
        assert np.array_equal(back.states, tr.states) and np.array_equal(back.times, tr.times)

    def test_trajectory_invariants(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.0], [[1.0], [2.0]])


class TestAverages:
    def test_decay_average(self):
        assert abs(time_average(make_system("decay"), "x2", [1.0], 100, 50)) <= 1e-8

    def test_fixed_point_average(self):
        s = make_system("moehlis9", Re=100)
        avg = time_average(s, "D", s.known_equilibria[0], 10, 0)
        assert avg == pytest.approx(s.coefficients.lambda_decay[0] / 100, rel=1e-12)

    def test_vdp_whole_periods_match_cycle(self, vdp):
        # a window of an integer number of periods removes the end-phase error
        a0 = flow(vdp, [2.0, 0.0], 100, SHOOTING_CONTROL)
        avg = time_average(vdp, "x2", a0, 20 * VDP_PERIOD, 0.0, SHOOTING_CONTROL)
        assert abs(avg - VDP_CYCLE_X2) <= 1e-8

    def test_vdp_finite_window(self, vdp):
        # T = 2000 with transient 200 ends mid-period; the error is bounded by
        # max(x^2) * period / window
        avg = time_average(vdp, "x2", [2.0, 0.0], 2000, 200, IntegratorControl("dop853", rtol=1e-10, atol=1e-12))
        assert abs(avg - VDP_CYCLE_X2) <= 4.1 * VDP_PERIOD / 1800

    def test_bad_window(self):
        with pytest.raises(ValueError):
            time_average(make_system("decay"), "x2", [1.0], 10, 10)


class TestMonodromy:
    def test_decay(self):
        _, M = monodromy(make_system("decay"), [1.0], 1.0)
        assert abs(M[0, 0] - math.exp(-1)) <= 1e-9

    def test_harmonic(self):
        _, M = monodromy(make_system("harmonic"), [1.0, 0.0], 2 * math.pi)
        assert np.max(np.abs(M - np.eye(2))) <= 1e-7

    def test_against_finite_differences(self, rng):
        for _ in range(3):
            monos = monomials_up_to(3, 2)
            f = [Polynomial(3, {m: 0.5 * rng.standard_normal() for m in monos}) for _ in range(3)]
            s = make_system("custom", f=f)
            a0 = 0.5 * rng.standard_normal(3)
            _, M = monodromy(s, a0, 0.5, SHOOTING_CONTROL)
            J = fd_flow_jacobian(s.rhs, a0, 0.5)
            assert np.max(np.abs(M - J)) <= 1e-5
