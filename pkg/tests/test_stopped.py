import math

import numpy as np
import pytest
from scipy import special

from stopsum import (
    DivergenceError,
    InapplicableError,
    LatticeDistribution,
    Pareto,
    ResourceBudgetError,
    ShiftedDistribution,
    ValidationError,
    Weibull,
    discretize,
)
from stopsum.stopped import (
    CountingDistribution,
    TailModel,
    condition_eq1_check,
    condition_series_check,
    gw_generation_tail,
    liminf_floor_check,
    power_offspring,
    predictor_comparable_tau,
    predictor_light_tau,
    stopped_max_tail_exact,
    stopped_sum_tail_exact,
    stopped_tail_grid,
    weibull_matched_counting,
)
from stopsum.tailcalc import conv_power_tail

TWO_POINT = LatticeDistribution.from_dict({1: 0.5, 3: 0.5})
NEG_PARETO = ShiftedDistribution(Pareto(2, 1), -3.0)


class TestCountingDistribution:
    def test_geometric(self):
        geo = CountingDistribution.geometric(0.5)
        assert geo.mean() == pytest.approx(2.0)
        assert geo.tail(3) == pytest.approx(0.125)
        assert math.exp(geo.log_pmf(4)) == pytest.approx(0.0625)

    def test_deterministic(self):
        d = CountingDistribution.deterministic(3)
        assert d.mean() == 3.0
        assert d.tail(2.5) == 1.0 and d.tail(3) == 0.0

    def test_power_tail_mean_is_zeta(self):
        tau = CountingDistribution.power_tail(1.8)
        assert tau.mean() == pytest.approx(1.0 + float(special.zeta(1.8, 1)), rel=1e-9)
        assert tau.tail(100) == pytest.approx(100.0 ** -1.8)
        assert tau.tail(10_000) == pytest.approx(10_000.0 ** -1.8)  # model range

    def test_power_tail_needs_finite_mean(self):
        with pytest.raises(DivergenceError):
            CountingDistribution.power_tail(0.9)

    def test_pmf_continuous_across_cap(self):
        tau = CountingDistribution.power_tail(1.8, n_cap=64)
        inside = math.exp(tau.log_pmf(64))
        beyond = math.exp(tau.log_pmf(65))
        assert 0 < beyond < inside

    def test_mass_validation(self):
        with pytest.raises(ValidationError):
            CountingDistribution(np.log([0.5, 0.4]))

    def test_matched_counting_tail_form(self):
        tau = weibull_matched_counting(0.7, scale=1.3)
        for n in (5, 50, 500):
            y = 1.3 * n
            assert tau.tail(n) == pytest.approx(math.exp(-(y ** 0.7)) / y, rel=1e-9)


class TestSeries:
    def test_degenerate_tau_one(self):
        st = stopped_sum_tail_exact(TWO_POINT, CountingDistribution.deterministic(1),
                                    2.0)
        assert st.value == pytest.approx(float(TWO_POINT.tail(2.0)))
        assert st.remainder_bound == 0.0

    def test_degenerate_tau_two_enumeration(self):
        st = stopped_sum_tail_exact(TWO_POINT, CountingDistribution.deterministic(2),
                                    3.0)
        assert st.value == pytest.approx(0.75)

    def test_degenerate_tau_matches_conv_power(self):
        lat = discretize(Pareto(2.5, 1), 0.1, 120.0)
        grid = conv_power_tail(lat, 4, x_hi=110.0)
        xs = [5.0, 20.0, 80.0]
        vals, rems, _ = stopped_tail_grid(lat, CountingDistribution.deterministic(4),
                                          xs)
        assert np.allclose(vals, grid.tail_at(np.asarray(xs)), rtol=1e-12)
        assert np.all(rems == 0.0)

    def test_tau_zero_contributes_below_zero(self):
        mix = CountingDistribution(np.log([0.25, 0.75]))
        vals, _, _ = stopped_tail_grid(TWO_POINT, mix, [-0.5, 0.5])
        assert vals[0] == pytest.approx(0.25 + 0.75 * 1.0)
        assert vals[1] == pytest.approx(0.75 * float(TWO_POINT.tail(0.5)))

    def test_geometric_ratio_settles_negative_mean(self):
        lat = discretize(NEG_PARETO, 0.05, 700.0)
        geo = CountingDistribution.geometric(0.5)
        xs = np.array([60.0, 200.0, 600.0])
        vals, rems, _ = stopped_tail_grid(lat, geo, xs)
        ratios = vals / np.array([predictor_light_tau(lat, geo, x) for x in xs])
        assert np.all(np.abs(ratios - 1) < 0.1)
        assert abs(ratios[-1] - 1) < abs(ratios[0] - 1)

    def test_certificate_is_sound(self):
        lat = discretize(NEG_PARETO, 0.1, 200.0)
        geo = CountingDistribution.geometric(0.5)
        loose = stopped_sum_tail_exact(lat, geo, 100.0, rel_budget=1e-2)
        tight = stopped_sum_tail_exact(lat, geo, 100.0, rel_budget=1e-6)
        assert loose.value <= tight.value <= loose.value + loose.remainder_bound
        assert tight.certified

    def test_support_cutoff_gives_exact_remainder(self):
        lat = discretize(Pareto(2.2, 1), 0.1, 60.0)
        tau = CountingDistribution.power_tail(1.8)
        st = stopped_sum_tail_exact(lat, tau, 50.0)
        assert st.remainder_bound == 0.0  # increments >= 1 close the series
        assert st.terms_used <= 51

    def test_finite_support_count_always_certifies(self):
        lm = np.full(4, np.log(0.25))
        tau = CountingDistribution(lm)
        lat = discretize(NEG_PARETO, 0.1, 100.0)
        vals, rems, _ = stopped_tail_grid(lat, tau, [50.0])
        assert rems[0] == 0.0

    def test_uncertifiable_budget_raises(self):
        # a barely-integrable count tail cannot reach the certificate level
        heavy = CountingDistribution.power_tail(1.05, n_cap=64)
        lat = discretize(NEG_PARETO, 0.1, 100.0)
        with pytest.raises(ResourceBudgetError):
            stopped_tail_grid(lat, heavy, [50.0], rel_budget=1e-6)

    def test_max_dominates_sum(self):
        lat = discretize(NEG_PARETO, 0.1, 300.0)
        geo = CountingDistribution.geometric(0.5)
        xs = [20.0, 100.0]
        s_vals, _, _ = stopped_tail_grid(lat, geo, xs, "sum")
        m_vals, _, _ = stopped_tail_grid(lat, geo, xs, "max")
        assert np.all(m_vals >= s_vals)

    def test_max_equals_sum_for_nonnegative(self):
        geo = CountingDistribution.geometric(0.5)
        s = stopped_sum_tail_exact(TWO_POINT, geo, 7.0)
        m = stopped_max_tail_exact(TWO_POINT, geo, 7.0)
        assert m.value == pytest.approx(s.value, rel=1e-12)

    def test_stochastically_larger_tau_larger_tail(self):
        lat = discretize(Pareto(2.5, 1), 0.1, 150.0)
        small = CountingDistribution.geometric(0.5)
        large = CountingDistribution.geometric(0.3)  # pointwise larger tail
        xs = [20.0, 60.0, 120.0]
        v_small, _, _ = stopped_tail_grid(lat, small, xs)
        v_large, _, _ = stopped_tail_grid(lat, large, xs)
        assert np.all(v_large > v_small)


class TestPredictors:
    def test_light_predictor_product(self):
        tau = CountingDistribution.geometric(0.5)
        d = Pareto(2, 1)
        assert predictor_light_tau(d, tau, 10.0) == pytest.approx(2 * 0.01)

    def test_comparable_reduces_to_light_for_bounded_tau(self):
        tau = CountingDistribution.deterministic(2)
        lat = discretize(Pareto(2.5, 1), 0.1, 100.0)
        x = 50.0
        assert predictor_comparable_tau(lat, tau, x) == pytest.approx(
            predictor_light_tau(lat, tau, x))

    def test_comparable_requires_positive_mean(self):
        lat = discretize(NEG_PARETO, 0.1, 50.0)
        with pytest.raises(InapplicableError):
            predictor_comparable_tau(lat, CountingDistribution.geometric(0.5), 10.0)

    def test_second_term_dominates_for_heavier_tau(self):
        lat = discretize(Pareto(2.5, 1), 0.1, 100.0)
        tau = CountingDistribution.power_tail(1.5)
        mu, m_tau = lat.mean(), tau.mean()
        term_ratio = [tau.tail(x / mu) / (m_tau * float(lat.tail(x)))
                      for x in (20.0, 50.0, 90.0)]
        assert term_ratio[0] < term_ratio[1] < term_ratio[2]
        assert term_ratio[2] > 10


class TestConditions:
    def test_eq1_geometric_vs_pareto_vanishes(self):
        tau = CountingDistribution.geometric(0.5)
        diag = condition_eq1_check(tau, Pareto(2, 1), 2.0, np.geomspace(10, 300, 8))
        assert diag.verdict.kind == "converging_to" and diag.target == 0.0

    def test_eq1_heavier_tau_fails(self):
        tau = CountingDistribution.power_tail(1.5)
        diag = condition_eq1_check(tau, Pareto(2.5, 1), 2.0,
                                   np.geomspace(10, 2000, 8))
        assert diag.verdict.kind == "diverging"

    def test_eq1_matched_tau_knife_edge(self):
        # holds at the drift scale itself, fails at any larger scale
        w = Weibull(0.7)
        c = w.mean()
        tau = weibull_matched_counting(0.7, c)
        xs = np.geomspace(50, 2000, 8)
        at_c = condition_eq1_check(tau, w, c, xs)
        assert at_c.verdict.kind == "converging_to"
        above = condition_eq1_check(tau, w, 1.25 * c, xs)
        assert above.ratios()[-1] > 10 and above.verdict.kind == "diverging"

    def test_series_check_geometric_pareto_converges(self):
        tau = CountingDistribution.geometric(0.5)
        partial, verdict = condition_series_check(tau, Pareto(2.5, 1), 2.0, 60)
        assert verdict.kind == "converging_to" and math.isfinite(partial)

    def test_series_check_pareto_tau_weibull_diverges(self):
        tau = CountingDistribution.power_tail(2.5)
        partial, verdict = condition_series_check(tau, Weibull(0.5), 2.5, 60)
        assert verdict.kind == "diverging"

    def test_series_check_bounded_tau_trivial(self):
        tau = CountingDistribution.deterministic(4)
        partial, _ = condition_series_check(tau, Pareto(2.5, 1), 2.0, 10)
        assert math.isfinite(partial)


class TestLiminfFloor:
    def test_tau_one_identity(self):
        lat = discretize(Pareto(2.5, 1), 0.1, 150.0)
        diag = liminf_floor_check(lat, CountingDistribution.deterministic(1),
                                  np.geomspace(10, 100, 6))
        assert np.allclose(diag.ratios(), 1.0, rtol=1e-12)

    def test_tau_two_subexponential(self):
        lat = discretize(Pareto(2.5, 1), 0.05, 500.0)
        diag = liminf_floor_check(lat, CountingDistribution.deterministic(2),
                                  np.geomspace(30, 400, 8))
        far = diag.ratios()[4:]
        assert np.all(far >= 2.0 * 0.98)

    def test_requires_nonnegative_support(self):
        lat = discretize(NEG_PARETO, 0.1, 50.0)
        with pytest.raises(InapplicableError):
            liminf_floor_check(lat, CountingDistribution.deterministic(2), [10.0])


class TestBranching:
    def test_generation_one_is_offspring_tail(self):
        off = power_offspring(2.5, 1.0)
        assert gw_generation_tail(off, 1, 10.0) == pytest.approx(float(off.tail(10.0)))

    def test_deterministic_single_child(self):
        off = LatticeDistribution.from_dict({1: 1.0})
        for gen in (1, 2, 3):
            assert gw_generation_tail(off, gen, 0.5) == 1.0
            assert gw_generation_tail(off, gen, 1.0) == 0.0

    def test_gen2_equals_stopped_series(self):
        off = power_offspring(2.5, 1.0, n_cap=512)
        tau = CountingDistribution(off.log_mass)
        x = 30.0
        series = stopped_sum_tail_exact(off, tau, x, rel_budget=1e-6)
        g2 = gw_generation_tail(off, 2, x)
        assert abs(g2 - series.value) <= series.remainder_bound + 1e-12

    def test_critical_ratio_near_two(self):
        off = power_offspring(2.5, 1.0)
        x = 71.0  # offspring tail about 1e-5 here
        ratio = gw_generation_tail(off, 2, x) / (2 * float(off.tail(x)))
        assert 0.9 < ratio < 1.1

    def test_generation_cap(self):
        off = power_offspring(2.5, 1.0)
        with pytest.raises(ResourceBudgetError):
            gw_generation_tail(off, 5, 10.0)

    def test_offspring_must_be_integer_lattice(self):
        lat = discretize(Pareto(2.5, 1), 0.5, 40.0)
        with pytest.raises(ValidationError):
            gw_generation_tail(lat, 2, 10.0)

    def test_power_offspring_mean(self):
        for mean in (1.0, 1.5):
            off = power_offspring(2.5, mean)
            assert off.mean() == pytest.approx(mean, abs=2e-4)


class TestTailModel:
    def test_power_sum(self):
        m = TailModel("power", alpha=2.0, amp=1.0)
        assert m.tail_sum_from(10) == pytest.approx(float(special.zeta(2.0, 10)))

    def test_weibull_sum_finite(self):
        m = TailModel("weibull", amp=1.0, gamma=1.0, rate=1.0, beta=0.5)
        s = m.tail_sum_from(1)
        assert 0 < s < 10
