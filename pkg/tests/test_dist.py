import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stopsum import (
    DivergenceError,
    Exponential,
    HazardDistribution,
    LatticeDistribution,
    LogNormal,
    Pareto,
    ShiftedDistribution,
    ValidationError,
    Weibull,
    discretize,
    make_stream,
    parse_spec,
)

FAMILIES = [Pareto(2.0, 1.0), Pareto(2.5, 1.0), Weibull(0.5), Weibull(0.7),
            Exponential(1.0), LogNormal(0.0, 1.0)]


class TestTail:
    def test_pareto_closed_form(self):
        assert np.isclose(Pareto(2, 1).tail(10.0), 0.01)
        assert Pareto(2, 1).tail(0.5) == 1.0

    def test_weibull_closed_form(self):
        assert np.isclose(Weibull(0.5).tail(4.0), math.exp(-2.0))

    def test_tail_is_one_below_support(self):
        for d in FAMILIES:
            assert d.tail(d.support_start - 1.0) == 1.0

    def test_tail_nonincreasing(self):
        xs = np.linspace(0.1, 50, 200)
        for d in FAMILIES:
            t = d.tail(xs)
            assert np.all(np.diff(t) <= 1e-15)


class TestMean:
    def test_pareto(self):
        assert np.isclose(Pareto(2, 1).mean(), 2.0)

    def test_pareto_divergent(self):
        with pytest.raises(DivergenceError):
            Pareto(1.0, 1.0).mean()

    def test_lattice_finite_sum(self):
        lat = LatticeDistribution.from_dict({1: 0.5, 3: 0.5})
        assert lat.mean() == 2.0

    def test_weibull_gamma(self):
        assert np.isclose(Weibull(0.5).mean(), math.gamma(3.0))

    def test_lognormal(self):
        assert np.isclose(LogNormal(0.0, 1.0).mean(), math.exp(0.5))

    def test_shift_exact(self):
        base = Pareto(2, 1)
        assert ShiftedDistribution(base, -3.0).mean() == base.mean() - 3.0


class TestIntegratedTail:
    def test_exponential_total(self):
        assert np.isclose(Exponential(1.0).integrated_tail(0, math.inf), 1.0)

    def test_empty_interval(self):
        for d in FAMILIES:
            assert d.integrated_tail(3.0, 3.0) == 0.0

    def test_pareto_antiderivative(self):
        assert np.isclose(Pareto(2, 1).integrated_tail(1.0, 2.0), 0.5)

    def test_matches_quadrature(self):
        from scipy.integrate import quad
        for d in FAMILIES:
            a, b = d.support_start + 0.5, d.support_start + 7.0
            ref, _ = quad(lambda y: float(d.tail(y)), a, b, limit=200)
            assert np.isclose(d.integrated_tail(a, b), ref, rtol=1e-8)

    @given(st.floats(0.0, 10.0), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
    @settings(max_examples=60, deadline=None)
    def test_additivity(self, u, v, w):
        a, b, c = sorted((u, v, w))
        for d in (Pareto(2.5, 1.0), Weibull(0.5), Exponential(0.7)):
            whole = d.integrated_tail(a, c)
            parts = d.integrated_tail(a, b) + d.integrated_tail(b, c)
            assert np.isclose(whole, parts, rtol=1e-12, atol=1e-300)


class TestHazardDistribution:
    def make(self):
        return HazardDistribution([0.0, 1.0, 5.0], [0.0, 1.0, 2.0], final_slope=0.5)

    def test_validation(self):
        with pytest.raises(ValidationError):
            HazardDistribution([0.0, 1.0], [0.5, 1.0], 1.0)  # R(x0) != 0
        with pytest.raises(ValidationError):
            HazardDistribution([0.0, 1.0], [0.0, -1.0], 1.0)  # decreasing

    def test_log_tail_piecewise_linear_at_midpoints(self):
        d = self.make()
        for lo, hi, slope in [(0.0, 1.0, 1.0), (1.0, 5.0, 0.25), (5.0, 9.0, 0.5)]:
            mid = (lo + hi) / 2
            eps = 1e-4
            deriv = (d.log_tail(mid + eps) - d.log_tail(mid - eps)) / (2 * eps)
            assert np.isclose(-deriv, slope, rtol=1e-6)
            assert d.hazard_rate(mid) == slope

    def test_tail_at_support_start(self):
        assert self.make().tail(0.0) == 1.0

    def test_mean_against_quadrature(self):
        from scipy.integrate import quad
        d = self.make()
        ref, _ = quad(lambda y: float(d.tail(y)), 0.0, 200.0, limit=400)
        assert np.isclose(d.mean(), ref, rtol=1e-6)

    def test_zero_final_slope_diverges(self):
        d = HazardDistribution([0.0, 1.0], [0.0, 1.0], final_slope=0.0)
        with pytest.raises(DivergenceError):
            d.mean()

    def test_hazard_rate_left_limit(self):
        d = self.make()
        assert d.hazard_rate(1.0) == 1.0  # segment (0, 1] owns its endpoint
        assert d.hazard_rate(1.0 + 1e-12) == 0.25


class TestSampling:
    def test_lattice_mean_clt_band(self):
        lat = LatticeDistribution.from_dict({1: 0.5, 3: 0.5})
        x = lat.sample(make_stream(7), 10**6)
        assert abs(x.mean() - 2.0) < 0.003  # 3 sigma / sqrt(n), sigma = 1

    def test_weibull_tail_frequency(self):
        w = Weibull(0.5)
        x = w.sample(make_stream(11), 10**6)
        p_hat = float((x > 4.0).mean())
        assert abs(p_hat - math.exp(-2.0)) < 0.0011  # binomial 3-SE band

    @pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.spec_string().split()[0]
                             + d.spec_string().split()[1])
    def test_ks_against_exact_cdf(self, d):
        x = d.sample(make_stream(123), 10**5)
        res = stats.kstest(x, lambda v: 1.0 - np.exp(d.log_tail(np.asarray(v))))
        assert res.statistic < 1.628 / math.sqrt(10**5)  # 1% critical value

    def test_hazard_inverse_transform(self):
        d = HazardDistribution([0.0, 1.0, 5.0], [0.0, 1.0, 2.0], final_slope=0.5)
        x = d.sample(make_stream(3), 10**5)
        res = stats.kstest(x, lambda v: 1.0 - np.exp(d.log_tail(np.asarray(v))))
        assert res.statistic < 1.628 / math.sqrt(10**5)

    def test_stream_determinism(self):
        d = Pareto(2, 1)
        assert np.array_equal(d.sample(make_stream(9), 100),
                              d.sample(make_stream(9), 100))
        assert not np.array_equal(d.sample(make_stream(9, 0), 100),
                                  d.sample(make_stream(9, 1), 100))


class TestDiscretize:
    def test_exponential_geometric_cells(self):
        lat = discretize(Exponential(1.0), math.log(2.0), 30.0)
        probs = np.exp(lat.log_mass[:4])
        assert np.allclose(probs, [0.5, 0.25, 0.125, 0.0625], rtol=1e-12)

    def test_refinement_converges(self):
        # off-grid points: on-grid the convention makes the tails coincide
        d = Pareto(2, 1)
        xs = np.array([2.31, 5.77, 9.13])
        errs = []
        for step in (0.5, 0.05, 0.005):
            lat = discretize(d, step, 50.0)
            errs.append(np.max(np.abs(lat.tail(xs) - d.tail(xs))))
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-2

    def test_pareto_bias_window(self):
        lat = discretize(Pareto(2, 1), 0.01, 1000.0)
        t = float(lat.tail(10.0))
        assert 0.01 <= t * (1 + 1e-12) <= 0.01 * (1 + 0.002)

    def test_tail_dominates_everywhere(self):
        d = ShiftedDistribution(Pareto(2.5, 1), -2.0)
        lat = discretize(d, 0.05, 60.0)
        xs = np.linspace(-1.9, 55.0, 400)
        assert np.all(lat.tail(xs) >= d.tail(xs) - 1e-13)
        # bias bounded by step * sup density on the cell (density <= alpha/xm)
        assert np.max(lat.tail(xs) - d.tail(xs)) <= 0.05 * 2.5 + 1e-12

    def test_mass_sums_to_one(self):
        lat = discretize(Weibull(0.7), 0.05, 200.0)
        total = np.logaddexp(np.logaddexp.reduce(lat.log_mass), lat.log_overflow)
        assert abs(math.expm1(total)) < 1e-12

    def test_aliasing_guard(self):
        d = HazardDistribution([0.0, 0.5, 5.0], [0.0, 0.5, 2.0], 0.3)
        with pytest.raises(ValidationError):
            discretize(d, 1.0, 30.0)

    def test_overflow_flagged(self):
        lat = discretize(Pareto(2, 1), 0.05, 50.0)
        assert np.isclose(math.exp(lat.log_overflow), Pareto(2, 1).tail(50.0),
                          rtol=1e-9)


class TestLattice:
    def test_tail_queries(self):
        lat = LatticeDistribution.from_dict({1: 0.5, 3: 0.5})
        assert lat.tail(0.5) == 1.0
        assert np.isclose(lat.tail(1.0), 0.5)
        assert np.isclose(lat.tail(2.7), 0.5)
        assert lat.tail(3.0) == 0.0

    def test_integrated_tail_step_function(self):
        lat = LatticeDistribution.from_dict({1: 0.5, 3: 0.5})
        # tail is 1 on [0,1), 0.5 on [1,3), 0 beyond
        assert np.isclose(lat.integrated_tail(0.0, 4.0), 1.0 + 0.5 * 2)
        assert np.isclose(lat.mean(), lat.support_start
                          + lat.integrated_tail(lat.support_start, 10.0))

    def test_conditional_on_positive(self):
        lat = LatticeDistribution.from_dict({-1: 0.25, 1: 0.25, 3: 0.5})
        pos = lat.conditional_on_positive()
        assert pos.support_start == 1.0
        assert np.isclose(np.exp(pos.log_mass).sum(), 1.0)
        assert np.isclose(pos.tail(1.0), 2 / 3)

    def test_bad_mass_rejected(self):
        with pytest.raises(ValidationError):
            LatticeDistribution.from_probs(0, 1.0, [0.5, 0.4])


class TestSpecStrings:
    @pytest.mark.parametrize("spec", [
        "pareto alpha=2 xm=1",
        "weibull beta=0.5 scale=1",
        "lognormal mu=0 sigma=1",
        "exponential lam=2",
        "hazard knots=[0,1,5] values=[0,1,2] final_slope=0.5",
        "shift base=(pareto alpha=2 xm=1) by=-3",
        "lattice step=1 offset=1 mass=[0.5,0,0.5]",
    ])
    def test_round_trip(self, spec):
        d = parse_spec(spec)
        d2 = parse_spec(d.spec_string())
        xs = np.linspace(d.support_start - 1, d.support_start + 20, 50)
        assert np.allclose(d.tail(xs), d2.tail(xs), rtol=1e-12)

    def test_nested_shift(self):
        d = parse_spec("shift base=(shift base=(pareto alpha=2 xm=1) by=-1) by=-2")
        assert np.isclose(d.mean(), 2.0 - 3.0)

    @pytest.mark.parametrize("bad", [
        "pareto alpha=-2 xm=1",
        "pareto alpha=2",
        "weibull beta=0 scale=1",
        "frechet a=1",
        "shift base=pareto by=1",
        "lattice step=1 offset=0 mass=[0.5,0.4]",
    ])
    def test_validation_errors(self, bad):
        with pytest.raises(ValidationError):
            parse_spec(bad)
