import itertools

import numpy as np
import pytest
from scipy.special import betaincinv

from optcert.algorithms import AlgoState, HbfAlgo, hbf_params
from optcert.problems import QuadraticInstance
from optcert.sublevel import (
    BetaPosterior,
    SublevelSpec,
    beta_quantile,
    estimate_probability,
    estimate_sublevel_probability,
    sublevel_indicator,
    sublevel_threshold,
)


class TestSpecValidation:
    def test_rejects_bad_band(self):
        with pytest.raises(ValueError):
            SublevelSpec(p_l=0.9, p_u=0.8)

    def test_rejects_bad_quantiles(self):
        with pytest.raises(ValueError):
            SublevelSpec(q_l=0.9, q_u=0.1)

    def test_defaults(self):
        s = SublevelSpec()
        assert (s.p_l, s.p_u, s.q_l, s.q_u) == (0.95, 1.0, 0.01, 0.99)
        assert s.width_tol == 0.075 and s.max_draws == 10000


class TestThreshold:
    def test_constant_exponent(self):
        assert sublevel_threshold(SublevelSpec(g_scale=2.0, g_exponent=0.0), 17.0) == 2.0

    def test_square_root(self):
        assert sublevel_threshold(SublevelSpec(g_scale=1.0, g_exponent=0.5), 4.0) == 2.0


class _ScalarAlgo:
    """1-D test algorithm multiplying the iterate by a fixed factor."""

    def __init__(self, factor):
        self.factor = factor

    def init_state(self, x0):
        return AlgoState(x_curr=np.asarray(x0, float), x_prev=np.asarray(x0, float))

    def step(self, state, inst):
        x = self.factor * state.x_curr
        return AlgoState(x_curr=x, x_prev=state.x_curr)

    def loss(self, x, inst):
        return float(x @ x)


class TestIndicator:
    def test_identity_inside(self):
        spec = SublevelSpec(g_scale=1.0, g_exponent=1.0)
        assert sublevel_indicator(_ScalarAlgo(1.0), None, np.array([2.0]), 10, spec)

    def test_doubling_diverges(self):
        spec = SublevelSpec(g_scale=1.0, g_exponent=1.0)
        assert not sublevel_indicator(_ScalarAlgo(2.0), None, np.array([1.0]), 5, spec)

    def test_overflow_is_failure_not_warning(self):
        spec = SublevelSpec()
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            out = sublevel_indicator(_ScalarAlgo(10.0), None, np.array([1.0]), 400, spec)
        assert out is False

    def test_matches_direct_trajectory(self):
        inst = QuadraticInstance(diag=np.array([1.0, 4.0]), rhs=np.array([1.0, 0.0]))
        algo = HbfAlgo(hbf_params(1.0, 4.0))
        spec = SublevelSpec(g_scale=1.0, g_exponent=1.0)
        x0 = np.array([3.0, -2.0])
        st = algo.init_state(x0)
        for _ in range(20):
            st = algo.step(st, inst)
        expected = algo.loss(st.x_curr, inst) <= algo.loss(x0, inst)
        assert sublevel_indicator(algo, inst, x0, 20, spec) == expected


class TestBetaQuantile:
    def test_uniform(self):
        post = BetaPosterior()
        for q in (0.1, 0.5, 0.9):
            assert beta_quantile(post, q) == pytest.approx(q, abs=1e-12)

    def test_beta_2_1(self):
        # CDF of Beta(2,1) is x^2, so the 0.25 quantile is 0.5
        assert beta_quantile(BetaPosterior(2.0, 1.0), 0.25) == pytest.approx(0.5, abs=1e-9)

    def test_beta_1_2(self):
        # CDF of Beta(1,2) is 1-(1-x)^2, so the 0.75 quantile is 0.5
        assert beta_quantile(BetaPosterior(1.0, 2.0), 0.75) == pytest.approx(0.5, abs=1e-9)


class TestEstimateProbability:
    def test_all_ones_stops_at_58(self):
        spec = SublevelSpec(q_l=0.01, q_u=0.99, width_tol=0.075)
        res = estimate_probability(itertools.repeat(1), spec)
        assert res.conclusive
        assert res.draws_used == 58
        assert res.posterior.count_a == 59 and res.posterior.count_b == 1
        assert res.point_estimate == pytest.approx(59.0 / 60.0)

    def test_counts_sum(self):
        spec = SublevelSpec(width_tol=0.2)
        rng = np.random.default_rng(0)
        res = estimate_probability((int(rng.random() < 0.7) for _ in itertools.count()), spec)
        assert res.posterior.count_a + res.posterior.count_b == res.draws_used + 2

    def test_loose_tolerance_needs_no_draws(self):
        # the prior interval [q_l, q_u] already has width 0.98 < 0.99
        spec = SublevelSpec(width_tol=0.99)
        res = estimate_probability(itertools.repeat(1), spec)
        assert res.conclusive and res.draws_used == 0
        assert res.point_estimate == pytest.approx(0.5)

    def test_max_draws_inconclusive(self):
        spec = SublevelSpec(width_tol=1e-9, max_draws=100)
        res = estimate_probability(itertools.repeat(1), spec)
        assert not res.conclusive and res.draws_used == 100

    def test_calibration_near_true_p(self):
        spec = SublevelSpec()
        rng = np.random.default_rng(3)
        ests = [
            estimate_probability(
                (int(rng.random() < 0.8) for _ in itertools.count()), spec
            ).point_estimate
            for _ in range(50)
        ]
        assert abs(np.mean(ests) - 0.8) < 0.05
        assert all(abs(e - 0.8) < 0.15 for e in ests)


class TestEstimateSublevel:
    def test_on_mixed_pool(self):
        # half the pool converges under the indicator, half diverges; the
        # estimate should land near 0.5
        spec = SublevelSpec(g_scale=1.0, g_exponent=1.0, width_tol=0.15)

        class PoolAlgo(_ScalarAlgo):
            def step(self, state, inst):
                f = 0.5 if inst else 2.0
                return AlgoState(x_curr=f * state.x_curr, x_prev=state.x_curr)

        instances = [True] * 10 + [False] * 10
        rng = np.random.default_rng(1)
        res = estimate_sublevel_probability(PoolAlgo(1.0), instances, np.array([1.0]), 3, spec, rng)
        assert res.conclusive
        assert abs(res.point_estimate - 0.5) < 0.2

    def test_degenerate_pool(self):
        spec = SublevelSpec(width_tol=0.075)
        rng = np.random.default_rng(2)
        res = estimate_sublevel_probability(
            _ScalarAlgo(0.5), [None], np.array([1.0]), 2, spec, rng
        )
        assert res.conclusive and res.point_estimate == pytest.approx(59.0 / 60.0)


def test_quantile_matches_scipy_reference():
    post = BetaPosterior(7.0, 3.0)
    assert beta_quantile(post, 0.42) == pytest.approx(float(betaincinv(7.0, 3.0, 0.42)))
