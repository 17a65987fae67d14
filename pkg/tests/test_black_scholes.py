import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from rbergomi_mc.black_scholes import (
    bs_price,
    bs_vega,
    forward_delta,
    implied_total_variance,
    implied_total_variance_from_log_price,
    implied_vol,
    log_bs_price,
    logstrike_from_forward_delta,
    logstrike_from_spot_delta,
    otm_sign,
    price_bounds,
)

# (v, k, w, price) at s = 1, from mpmath at 40 digits
MPMATH_PRICES = [
    (0.04, 0.0, -1, 0.079655674554057964),
    (0.04, 0.0, 1, 0.079655674554057964),
    (0.25 * 0.2417**2, -0.1475, -1, 0.0060299575493118645),
    (0.01, 0.5, 1, 6.8565824558387285e-9),
    (1e-4, -0.3, -1, 1.404620659062695e-201),
    (2.0, 0.2, 1, 0.47227054588998671),
]


@pytest.mark.parametrize("v,k,w,ref", MPMATH_PRICES)
def test_price_against_high_precision(v, k, w, ref):
    assert bs_price(v, 1.0, k, w) == pytest.approx(ref, rel=1e-12)


def test_otm_sign_convention():
    np.testing.assert_array_equal(otm_sign([-0.1, 0.0, 0.1]), [-1, -1, 1])


def test_zero_variance_is_intrinsic():
    assert bs_price(0.0, 1.2, 0.0, 1) == pytest.approx(0.2)
    assert bs_price(0.0, 1.0, 0.1, 1) == 0.0
    assert bs_price(0.0, 0.9, 0.0, -1) == pytest.approx(0.1)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        bs_price(-0.1, 1.0, 0.0)
    with pytest.raises(ValueError):
        bs_price(0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        implied_total_variance(1.5, 0.1)
    with pytest.raises(ValueError):
        implied_total_variance(-1e-3, 0.1)


def test_log_price_finite_where_price_underflows():
    lp = log_bs_price(1e-6, 1.0, 0.5, 1)
    assert np.isfinite(lp) and lp < -700


@pytest.mark.parametrize("s", [0.7, 1.0, 1.3])
def test_put_call_parity(s):
    v = np.linspace(1e-4, 2, 25)[:, None]
    k = np.linspace(-0.5, 0.5, 21)[None, :]
    call = bs_price(v, s, k, 1)
    put = bs_price(v, s, k, -1)
    np.testing.assert_allclose(call - put, np.broadcast_to(s - np.exp(k), call.shape), atol=1e-14, rtol=0)


def test_vega_matches_finite_difference():
    v, k, h = 0.05, 0.1, 1e-7
    fd = (bs_price(v + h, 1.0, k, 1) - bs_price(v - h, 1.0, k, 1)) / (2 * h)
    assert bs_vega(v, 1.0, k) == pytest.approx(fd, rel=1e-6)


def _bisect_total_variance(p, k, w):
    # independent oracle: plain bracketing on the price itself
    return optimize.brentq(lambda v: float(bs_price(v, 1.0, k, w)) - p, 1e-12, 50.0, xtol=1e-15, rtol=1e-15)


@pytest.mark.parametrize("v,k", [(0.01, -0.2), (0.0146, -0.1475), (0.2, 0.3), (1.5, 0.0), (3.9, 0.5)])
def test_inversion_against_bracketing_oracle(v, k):
    w = otm_sign(k)
    p = float(bs_price(v, 1.0, k, w))
    assert implied_total_variance(p, k) == pytest.approx(_bisect_total_variance(p, k, w), rel=1e-9)


def test_round_trip_grid():
    v = np.geomspace(1e-6, 4.0, 60)[:, None]
    k = np.linspace(-0.5, 0.5, 41)[None, :]
    v, k = np.broadcast_arrays(v, k)
    p = bs_price(v, 1.0, k)
    # subnormal prices keep too few digits to pin down v
    ok = p >= np.finfo(float).tiny
    back = implied_total_variance(p[ok], k[ok])
    np.testing.assert_allclose(back, v[ok], rtol=1e-8, atol=0)
    back_log = implied_total_variance_from_log_price(log_bs_price(v, 1.0, k), k)
    np.testing.assert_allclose(back_log, v, rtol=1e-8, atol=0)


def test_inversion_at_lower_bound_is_zero():
    lower, _ = price_bounds(np.array([-0.1, 0.1]))
    np.testing.assert_array_equal(implied_total_variance(lower, [-0.1, 0.1]), [0.0, 0.0])


def test_implied_vol_scales_by_maturity():
    p = bs_price(0.04, 1.0, 0.0)
    assert implied_vol(p, 0.0, 0.25) == pytest.approx(0.4, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(v=st.floats(1e-6, 4.0), k=st.floats(-0.5, 0.5))
def test_round_trip_property(v, k):
    p = bs_price(v, 1.0, k)
    assert implied_total_variance_from_log_price(log_bs_price(v, 1.0, k), k) == pytest.approx(v, rel=1e-8)
    if p >= np.finfo(float).tiny:
        assert implied_total_variance(p, k) == pytest.approx(v, rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(v1=st.floats(1e-4, 3.0), v2=st.floats(1e-4, 3.0), k=st.floats(-0.5, 0.5))
def test_price_increasing_in_variance(v1, v2, k):
    lo, hi = sorted((v1, v2))
    assert bs_price(lo, 1.0, k) <= bs_price(hi, 1.0, k)


@settings(max_examples=100, deadline=None)
@given(v=st.floats(1e-4, 3.0), k=st.floats(-0.5, 0.5))
def test_price_within_no_arbitrage_bounds(v, k):
    lower, upper = price_bounds(k)
    p = bs_price(v, 1.0, k)
    assert lower <= p < upper


def test_ten_delta_put_strike_flat_smile():
    # mpmath: sigma sqrt(t) N^-1(0.1) + sigma^2 t / 2 = -0.14757314544606497
    k = logstrike_from_spot_delta(0.10, 0.2417, 0.25)
    assert k == pytest.approx(-0.14757314544606497, abs=1e-12)


def test_spot_delta_with_smile_solves_the_delta():
    from scipy.special import ndtr

    smile = lambda k: 0.2 - 0.3 * k  # noqa: E731
    for d in (0.05, 0.5, 0.9):
        k = logstrike_from_spot_delta(d, smile, 0.25)
        sv = smile(k) * 0.5
        assert ndtr(k / sv - 0.5 * sv) == pytest.approx(d, abs=1e-10)


def test_spot_delta_rejects_bad_delta():
    with pytest.raises(ValueError):
        logstrike_from_spot_delta(1.0, 0.2, 0.25)


@settings(max_examples=50, deadline=None)
@given(d=st.floats(0.01, 0.99), sigma=st.floats(0.05, 0.8), t=st.floats(0.01, 2.0))
def test_forward_delta_inverse(d, sigma, t):
    k = logstrike_from_forward_delta(d, sigma, t)
    assert forward_delta(k, sigma, t) == pytest.approx(d, abs=1e-10)


def test_forward_delta_increasing_in_strike():
    k = np.linspace(-1, 1, 50)
    assert np.all(np.diff(forward_delta(k, 0.2, 0.5)) > 0)
