import math
import warnings

import numpy as np
import pytest

from conftest import VDP_PERIOD
from sosupo.dynamics import SHOOTING_CONTROL, flow, integrate
from sosupo.localize import (EmptyCloudWarning, IndicatorPoly, PointCloud, SamplerConfig, bfgs_minimize,
                             build_indicator_poly, choose_epsilon, harvest, screen_starts)
from sosupo.polyalg import Polynomial
from sosupo.sos import BoundCertificate

(x1,) = Polynomial.variables(1)
x, y = Polynomial.variables(2)


def decay_cert(V):
    return BoundCertificate(0.0, V, (-x1,), x1**2, [], 0.0, 0.0)


class TestIndicator:
    def test_hand_example(self):
        P = build_indicator_poly(decay_cert(x1**2))
        assert P.P == x1**2 and not P.degenerate

    def test_flat_case_flagged(self):
        assert build_indicator_poly(decay_cert(0.5 * x1**2)).degenerate

    def test_min_sense_is_negated(self):
        # a lower bound 0 on the average of x^2 with V = 0 gives P = x^2
        cert = BoundCertificate(0.0, Polynomial.zero(1), (-x1,), x1**2, [], 0.0, 0.0, sense="min")
        P = build_indicator_poly(cert)
        assert P.negated and P.P == x1**2

    def test_nonnegative_on_grid(self, vdp_P):
        g = np.linspace(-3, 3, 400)
        X, Y = np.meshgrid(g, g)
        vals = vdp_P.values(np.column_stack([X.ravel(), Y.ravel()]))
        assert vals.min() >= -1e-6

    def test_gradient_matches_central_differences(self, vdp_P, rng):
        h = 1e-6
        for a in rng.uniform(-2, 2, (5, 2)):
            fd = [(vdp_P.value(a + h * e) - vdp_P.value(a - h * e)) / (2 * h) for e in np.eye(2)]
            assert np.allclose(vdp_P.gradient(a), fd, rtol=1e-6, atol=1e-6)

    def test_choose_epsilon(self):
        assert choose_epsilon(2.0, 1.9) == pytest.approx(1.0)
        assert choose_epsilon(1.0, 1.0) == 1e-6
        assert choose_epsilon(1.0, user=0.3) == 0.3
        with pytest.raises(ValueError):
            choose_epsilon(1.0)


CFG1 = SamplerConfig(((-1.0, 1.0),))
CFG2 = SamplerConfig(((-2.0, 2.0), (-2.0, 2.0)), max_iters=2000, grad_tol=1e-10, step_tol=1e-14)


class TestBfgs:
    def test_shifted_quadratic(self):
        res = bfgs_minimize(IndicatorPoly((x1 - 1) ** 2, 0.0), [0.0], CFG1)
        assert abs(res.x[0] - 1) <= 1e-6

    def test_rosenbrock(self):
        P = IndicatorPoly((1 - x) ** 2 + 100 * (y - x**2) ** 2, 0.0)
        res = bfgs_minimize(P, [-1.2, 1.0], CFG2)
        assert np.max(np.abs(res.x - 1)) <= 1e-4

    def test_descent_trail(self):
        res = bfgs_minimize(IndicatorPoly(x1**2, 0.0), [2.0], CFG1)
        assert np.all(np.diff(res.values) <= 0)
        assert np.all(np.abs(res.trail) <= 2)
        assert len(res.trail) == len(res.values) == len(res.grad_norms)

    def test_escape_stops_run(self):
        # unbounded below: the iterate runs off to infinity
        res = bfgs_minimize(IndicatorPoly(-(x1**2), 0.0), [0.5], CFG1)
        assert res.status == "escaped"


class TestHarvest:
    def test_1d_sublevel(self):
        cloud = harvest(IndicatorPoly(x1**2, 0.0), CFG1, 0.01)
        assert len(cloud) > 0
        assert np.all(np.abs(cloud.points) <= 0.1)
        assert np.all(cloud.values <= 0.01)

    def test_degenerate_accepts_all(self):
        cfg = SamplerConfig(((-1.0, 1.0),), n_starts=10, keep="final_points")
        cloud = harvest(IndicatorPoly(Polynomial.zero(1), 0.0), cfg, 0.01)
        assert len(cloud) == 10 and cloud.stats["degenerate"]

    def test_vdp_cloud_near_cycle(self, vdp, vdp_cloud):
        a0 = flow(vdp, [2.0, 0.0], 100, SHOOTING_CONTROL)
        curve = integrate(vdp, a0, VDP_PERIOD, SHOOTING_CONTROL, t_eval=np.linspace(0, VDP_PERIOD, 4000)).states
        d = vdp_cloud.distance_to(curve)
        assert len(d) > 0 and np.mean(d <= 0.1) >= 0.9

    def test_reproducible(self):
        P = IndicatorPoly((x**2 + y**2 - 1) ** 2, 0.0)
        cfg = SamplerConfig(((-2, 2), (-2, 2)), n_starts=8, rng_seed=7)
        a, b = harvest(P, cfg, 0.01), harvest(P, cfg, 0.01)
        assert np.array_equal(a.points, b.points) and np.array_equal(a.run, b.run)

    def test_runs_are_independent(self):
        cfg = SamplerConfig(((-1, 1),), n_starts=5, rng_seed=3)
        assert cfg.start(4)[0] == SamplerConfig(((-1, 1),), n_starts=50, rng_seed=3).start(4)[0]

    def test_ladder_tags_rungs(self):
        cfg = SamplerConfig(((-1, 1),), n_starts=3, grad_tol_ladder=(1e-3, 1e-8))
        cloud = harvest(IndicatorPoly(x1**2, 0.0), cfg, 0.01)
        assert set(cloud.rung.tolist()) <= {0, 1} and cloud.stats["ladder"] == [1e-3, 1e-8]

    def test_empty_warns(self):
        with pytest.warns(EmptyCloudWarning, match="smallest final P"):
            cloud = harvest(IndicatorPoly(x1**2 + 1, 0.0), CFG1, 0.01)
        assert len(cloud) == 0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            harvest(IndicatorPoly(x1**2, 0.0), CFG1, 0.0)
        with pytest.raises(ValueError):
            SamplerConfig(((1.0, -1.0),))

    def test_round_trips(self, vdp_cloud, tmp_path):
        vdp_cloud.to_csv(tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines()[0] == "run,iter,P,a1,a2"
        back = PointCloud.from_csv(tmp_path / "c.csv", vdp_cloud.epsilon)
        assert np.array_equal(back.points, vdp_cloud.points) and np.array_equal(back.values, vdp_cloud.values)
        vdp_cloud.to_json(tmp_path / "c.json")
        back = PointCloud.from_json(tmp_path / "c.json")
        assert np.array_equal(back.points, vdp_cloud.points) and back.stats == vdp_cloud.stats

    def test_rejects_values_above_epsilon(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((1, 1)), [0.5], [0], [0], 0.1)


class TestScreen:
    def test_weights_example(self):
        r = screen_starts(IndicatorPoly(x1**2, 0.0), [[0.0], [1.0]], 100.0)
        assert r.weights[0] == 1.0 and r.weights[1] == pytest.approx(math.exp(-100), rel=1e-12)

    def test_beta_zero_disables(self):
        r = screen_starts(IndicatorPoly(x1**2, 0.0), [[0.0], [1.0], [3.0]], 0.0)
        assert np.all(r.weights == 1)

    def test_five_percent_pass(self, vdp_P, rng):
        C = rng.uniform(-3, 3, (1000, 2))
        r = screen_starts(vdp_P, C, 1.0)
        ok = r.passed(np.quantile(r.weights, 0.95))
        assert 0.04 <= ok.mean() <= 0.06
        assert r.P[ok].mean() < r.P[~ok].mean()
        assert len(r.resample(20, rng)) == 20
