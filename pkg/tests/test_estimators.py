import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rbergomi_mc.black_scholes import bs_price
from rbergomi_mc.engine import ModelParams, PathFunctionals, simulate_functionals
from rbergomi_mc.estimators import (
    EstimatorKind,
    ImpliedVolEstimate,
    alpha_hat,
    base_payoff,
    conditional_x,
    control_y,
    estimate_implied_vol,
    estimator_samples,
    q_hat,
    timer_expectation,
)
from rbergomi_mc.hybrid import TimeGrid

KS = np.array([-0.1787, 0.0, 0.1041])


@pytest.fixture(scope="module")
def paths():
    grid = TimeGrid(64, 0.25)
    return {
        rho: simulate_functionals(ModelParams(rho=rho), grid, 4000, seed=21, with_w2=True)
        for rho in (-0.9, 0.0)
    }


def test_kind_properties():
    assert not EstimatorKind.BASE.antithetic
    assert all(k.antithetic for k in EstimatorKind if k is not EstimatorKind.BASE)
    assert not EstimatorKind.MIXED.needs_w2 and not EstimatorKind.CONDITIONAL.needs_w2
    assert EstimatorKind.parse(" Mixed ") is EstimatorKind.MIXED
    with pytest.raises(ValueError):
        EstimatorKind.parse("quasi")


def test_base_payoff_is_otm():
    pf = PathFunctionals(np.ones(2), np.zeros(2), np.array([0.8, 1.2]))
    np.testing.assert_allclose(base_payoff(pf, [-0.1, 0.1]), [[np.exp(-0.1) - 0.8, 0.0], [0.0, 1.2 - np.exp(0.1)]])
    with pytest.raises(ValueError):
        base_payoff(PathFunctionals(np.ones(2), np.zeros(2)), [0.0])


def test_conditional_x_and_control_against_bs():
    pf = PathFunctionals(np.array([0.9, 1.1]), np.array([0.01, 0.03]), np.array([1.0, 1.05]))
    rho, q = -0.6, 0.05
    x = conditional_x(pf, KS, rho)
    np.testing.assert_allclose(x[1], bs_price((1 - rho**2) * 0.03, 1.1, KS))
    y = control_y(pf, KS, rho, q, "mixed")
    np.testing.assert_allclose(y[0], bs_price(rho**2 * 0.04, 0.9, KS))
    yc = control_y(pf, KS, rho, q, "controlled")
    np.testing.assert_allclose(yc[1], bs_price(0.02, 1.05, KS))
    with pytest.raises(ValueError):
        control_y(pf, KS, rho, 0.02, "mixed")
    with pytest.raises(ValueError):
        control_y(pf, KS, rho, q, "base")


def test_timer_expectation():
    np.testing.assert_allclose(timer_expectation(-0.5, 0.08, KS, "mixed"), bs_price(0.02, 1.0, KS))
    np.testing.assert_allclose(timer_expectation(-0.5, 0.08, KS, "controlled"), bs_price(0.08, 1.0, KS))


def test_q_hat():
    assert q_hat([0.1, 0.3, 0.2]) == 0.3
    with pytest.raises(ValueError):
        q_hat([])


@settings(max_examples=60, deadline=None)
@given(
    x=arrays(float, 30, elements=st.floats(-5, 5)),
    y=arrays(float, 30, elements=st.floats(-5, 5)),
)
def test_alpha_hat_is_negative_ols_slope(x, y):
    a = alpha_hat(x, y)
    if np.var(y, ddof=1) < 1e-6:
        return
    slope = np.polyfit(y, x, 1)[0]
    assert a == pytest.approx(-slope, rel=1e-7, abs=1e-9)


def test_alpha_hat_minimises_sample_variance():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(500)
    x = 2.0 - 0.7 * y + 0.1 * rng.standard_normal(500)
    a = alpha_hat(x, y)
    base = np.var(x + a * y)
    for eps in (-1e-3, 1e-3):
        assert np.var(x + (a + eps) * y) > base


def test_alpha_hat_degenerate_control_is_zero():
    x = np.arange(10.0)[:, None] * np.ones((1, 2))
    y = np.ones((10, 2))
    np.testing.assert_array_equal(alpha_hat(x, y), [0.0, 0.0])


def test_antithetic_kinds_require_antithetic_paths():
    pf = PathFunctionals(np.ones(4), np.ones(4) * 0.01, np.ones(4), antithetic=False)
    with pytest.raises(ValueError):
        estimator_samples("mixed", pf, KS, -0.9)


def test_mixed_equals_conditional_at_zero_correlation(paths):
    pf = paths[0.0]
    mixed = estimate_implied_vol("mixed", pf, KS, 0.25, 0.0)
    cond = estimate_implied_vol("conditional", pf, KS, 0.25, 0.0)
    np.testing.assert_array_equal(mixed.alpha_hat, 0.0)
    np.testing.assert_allclose(mixed.sigma, cond.sigma, rtol=0, atol=1e-12)


def test_estimator_smile_is_sensible(paths):
    for rho, pf in paths.items():
        for kind in EstimatorKind:
            sub = pf if kind.antithetic else PathFunctionals(pf.s1_t, pf.iv, pf.s_t, antithetic=False)
            est = estimate_implied_vol(kind, sub, KS, 0.25, rho)
            assert np.all(est.valid)
            assert np.all((est.sigma > 0.1) & (est.sigma < 0.4))
            assert est.n == 4000


def test_flags_for_degenerate_prices():
    # all calls expire worthless -> price 0, flag 1
    pf = PathFunctionals(np.ones(2), np.full(2, 0.01), np.array([0.5, 0.6]))
    est = estimate_implied_vol("base", pf, [0.1], 0.25, 0.0)
    assert est.flag[0] == ImpliedVolEstimate.NONPOSITIVE and est.sigma[0] == 0.0
    # call price above the forward -> flag 2
    pf = PathFunctionals(np.ones(2), np.full(2, 0.01), np.array([10.0, 10.0]))
    est = estimate_implied_vol("base", pf, [0.1], 0.25, 0.0)
    assert est.flag[0] == ImpliedVolEstimate.ARBITRAGE and np.isnan(est.sigma[0])
    assert not est.valid[0]
