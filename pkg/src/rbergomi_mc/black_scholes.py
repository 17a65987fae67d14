"""Black-Scholes pricing in total-variance units, implied variance inversion and
delta/strike conversions.

Conventions: ``k`` is the log of the strike (not log-moneyness), ``v = sigma^2 t``
is total variance, and ``w = -1`` (put) for ``k <= 0``, ``w = +1`` (call) for
``k > 0``, so that the priced option is out of the money at ``s = 1``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy import optimize
from scipy.special import erfcx, ndtr, ndtri

__all__ = [
    "norm_cdf",
    "otm_sign",
    "bs_price",
    "log_bs_price",
    "bs_vega",
    "implied_total_variance",
    "implied_total_variance_from_log_price",
    "implied_vol",
    "price_bounds",
    "logstrike_from_spot_delta",
    "forward_delta",
    "logstrike_from_forward_delta",
]

norm_cdf = ndtr

_SQRT2 = np.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
V_MAX = 16.0


def otm_sign(k):
    """``-1`` for ``k <= 0``, ``+1`` for ``k > 0``."""
    return np.where(np.asarray(k) > 0, 1.0, -1.0)


def _d_plus_minus(v, s, k):
    sv = np.sqrt(v)
    x = np.log(s) - k
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = x / sv + 0.5 * sv
    return dp, dp - sv


def _log_price_positive_v(v, s, k, w):
    """log BS for ``v > 0`` (arrays, broadcast). Far out of the money both
    Gaussian tails are factored out through erfcx, so the result stays finite
    where the price itself underflows."""
    dp, dm = _d_plus_minus(v, s, k)
    otm_call = (w > 0) & (dp < 0)
    otm_put = (w < 0) & (dm > 0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        standard = np.log(np.maximum(w * (s * ndtr(w * dp) - np.exp(k) * ndtr(w * dm)), 0.0))
        call_tail = (
            np.log(0.5 * s)
            - 0.5 * dp * dp
            + np.log(np.maximum(erfcx(-dp / _SQRT2) - erfcx(-dm / _SQRT2), 0.0))
        )
        put_tail = (
            np.log(0.5) + k
            - 0.5 * dm * dm
            + np.log(np.maximum(erfcx(dm / _SQRT2) - erfcx(dp / _SQRT2), 0.0))
        )
    return np.where(otm_call, call_tail, np.where(otm_put, put_tail, standard))


def log_bs_price(v, s, k, w=None):
    """Natural log of :func:`bs_price`; ``-inf`` where the price is zero."""
    v, s, k = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (v, s, k)))
    w = otm_sign(k) if w is None else np.broadcast_to(np.asarray(w, dtype=float), k.shape)
    pos = v > 0
    with np.errstate(divide="ignore"):
        intrinsic = np.log(np.maximum(w * (s - np.exp(k)), 0.0))
    out = np.where(pos, _log_price_positive_v(np.where(pos, v, 1.0), s, k, w), intrinsic)
    return out[()] if out.ndim == 0 else out


def bs_price(v, s, k, w=None):
    """Black-Scholes value ``w (s N(w d+) - e^k N(w d-))`` with
    ``d+- = (log s - k) / sqrt(v) +- sqrt(v) / 2``.

    ``w`` defaults to :func:`otm_sign` of ``k``. At ``v = 0`` the intrinsic value
    ``max(w (s - e^k), 0)`` is returned.
    """
    v_arr = np.asarray(v, dtype=float)
    if np.any(v_arr < 0):
        raise ValueError("total variance must be non-negative")
    if np.any(np.asarray(s) <= 0):
        raise ValueError("spot must be positive")
    return np.exp(log_bs_price(v, s, k, w))


def bs_vega(v, s, k):
    """Derivative of the price with respect to total variance, ``s phi(d+) / (2 sqrt v)``."""
    dp, _ = _d_plus_minus(v, s, k)
    return s * np.exp(-0.5 * dp * dp - _LOG_SQRT_2PI) / (2.0 * np.sqrt(v))


def price_bounds(k, w=None):
    """No-arbitrage interval ``[lower, upper)`` for prices at ``s = 1``."""
    k = np.asarray(k, dtype=float)
    w = otm_sign(k) if w is None else np.broadcast_to(np.asarray(w, dtype=float), k.shape)
    lower = np.maximum(w * (1.0 - np.exp(k)), 0.0)
    upper = np.where(w > 0, 1.0, np.exp(k))
    return lower, upper


def implied_total_variance(price, k, w=None, tol: float = 1e-15, max_iter: int = 200):
    """Total variance ``v`` with ``bs_price(v, 1, k, w) == price``.

    Safeguarded Newton on ``log BS(v) - log price``, whose derivative is
    ``vega / price``; steps leaving the current bracket fall back to bisection.
    The bracket starts at ``[0, 16]`` and is widened if needed.

    Raises
    ------
    ValueError
        If a price lies outside the no-arbitrage interval.
    """
    price = np.asarray(price, dtype=float)
    k = np.asarray(k, dtype=float)
    price, k = np.broadcast_arrays(price, k)
    w = otm_sign(k) if w is None else np.broadcast_to(np.asarray(w, dtype=float), k.shape)
    lower, upper = price_bounds(k, w)
    if np.any(~np.isfinite(price)) or np.any(price < lower) or np.any(price >= upper):
        bad = np.flatnonzero(~((price >= lower) & (price < upper)))[:3]
        raise ValueError(f"price outside no-arbitrage bounds at indices {bad.tolist()}")

    shape = price.shape
    p, k, w, lower = (np.ravel(a).copy() for a in (price, k, w, lower))
    v = np.zeros_like(p)
    active = np.flatnonzero(p > lower)
    if active.size:
        v[active] = _solve_log_price(p[active], k[active], w[active], tol, max_iter)
    out = v.reshape(shape)
    return out[()] if out.ndim == 0 else out


def implied_total_variance_from_log_price(log_price, k, w=None, tol: float = 1e-15, max_iter: int = 200):
    """As :func:`implied_total_variance`, but from ``log(price)``.

    Far out of the money the price itself underflows while its logarithm
    (see :func:`log_bs_price`) does not, so this inverts over the full range.
    """
    log_price = np.asarray(log_price, dtype=float)
    k = np.asarray(k, dtype=float)
    log_price, k = np.broadcast_arrays(log_price, k)
    w = otm_sign(k) if w is None else np.broadcast_to(np.asarray(w, dtype=float), k.shape)
    lower, upper = price_bounds(k, w)
    with np.errstate(divide="ignore"):
        log_lower = np.log(lower)
    if np.any(np.isnan(log_price)) or np.any(log_price < log_lower) or np.any(log_price >= np.log(upper)):
        raise ValueError("log price outside no-arbitrage bounds")
    shape = log_price.shape
    lp, k, w, log_lower = (np.ravel(a).copy() for a in (log_price, k, w, log_lower))
    v = np.zeros_like(lp)
    active = np.flatnonzero(lp > log_lower)
    if active.size:
        v[active] = _solve_log_price(lp[active], k[active], w[active], tol, max_iter, is_log=True)
    out = v.reshape(shape)
    return out[()] if out.ndim == 0 else out


def _solve_log_price(pa, ka, wa, tol, max_iter, is_log=False):
    target = pa if is_log else np.log(pa)
    pa = np.exp(target)
    lo = np.zeros_like(pa)
    hi = np.full_like(pa, V_MAX)
    while True:
        short = log_bs_price(hi, 1.0, ka, wa) < target
        if not np.any(short):
            break
        lo = np.where(short, hi, lo)
        hi = np.where(short, 2.0 * hi, hi)
    # Start at the variance where the ATM-forward approximation would put the price.
    x = np.clip(2.0 * np.pi * (pa / np.sqrt(np.exp(ka))) ** 2, 1e-6, V_MAX)
    x = np.where((x > lo) & (x < hi), x, 0.5 * (lo + hi))

    todo = np.ones(pa.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(todo)
        if idx.size == 0:
            break
        xi, ki, wi = x[idx], ka[idx], wa[idx]
        logp = log_bs_price(xi, 1.0, ki, wi)
        f = logp - target[idx]
        hit = np.abs(f) <= 1e-14
        below = f < 0
        lo[idx] = np.where(below, xi, lo[idx])
        hi[idx] = np.where(below | hit, hi[idx], xi)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dp, _ = _d_plus_minus(xi, 1.0, ki)
            slope = np.exp(-0.5 * dp * dp - _LOG_SQRT_2PI - logp) / (2.0 * np.sqrt(xi))
            new = xi - f / slope
        ok = np.isfinite(new) & (new > lo[idx]) & (new < hi[idx])
        new = np.where(hit, xi, np.where(ok, new, 0.5 * (lo[idx] + hi[idx])))
        x[idx] = new
        scale = tol * np.maximum(new, 1e-12)
        done = hit | (np.abs(new - xi) <= scale) | (hi[idx] - lo[idx] <= scale)
        todo[idx[done]] = False
    return x


def implied_vol(price, k, t: float, w=None):
    """Black-Scholes implied volatility ``sqrt(v / t)`` at ``s = 1``."""
    return np.sqrt(implied_total_variance(price, k, w) / t)


def forward_delta(k, sigma, t: float):
    """Forward delta ``N(-d-)`` at ``s = 1``; increasing in ``k``."""
    sv = np.asarray(sigma, dtype=float) * np.sqrt(t)
    return ndtr(np.asarray(k, dtype=float) / sv + 0.5 * sv)


def _smile_callable(smile) -> Callable[[float], float]:
    if callable(smile):
        return smile
    sigma = float(smile)
    return lambda k: sigma


def logstrike_from_spot_delta(
    delta_put: float,
    smile,
    t: float,
    k0: float | None = None,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Log-strike where the spot put delta ``N(-d+)`` equals ``delta_put``.

    ``smile`` is either a constant volatility or a callable ``k -> sigma``.
    For a fixed ``sigma`` the strike is explicit,
    ``k = sigma sqrt(t) N^-1(delta) + sigma^2 t / 2``; with a smile this is
    iterated as a damped fixed point, with a bracketing root search as fallback.

    Raises
    ------
    RuntimeError
        If no strike meeting ``tol`` is found.
    """
    if not 0.0 < delta_put < 1.0:
        raise ValueError(f"delta_put must lie in (0, 1), got {delta_put}")
    sig = _smile_callable(smile)
    q = float(ndtri(delta_put))
    sq = np.sqrt(t)

    def explicit(k: float) -> float:
        sv = float(sig(k)) * sq
        return sv * q + 0.5 * sv * sv

    def residual(k: float) -> float:
        sv = float(sig(k)) * sq
        return float(ndtr(k / sv - 0.5 * sv)) - delta_put

    k = explicit(0.0) if k0 is None else float(k0)
    damping = 1.0
    prev = abs(residual(k))
    for _ in range(max_iter):
        if prev <= tol:
            return k
        cand = (1.0 - damping) * k + damping * explicit(k)
        res = abs(residual(cand))
        if res < prev:
            k, prev = cand, res
        else:
            damping *= 0.5
            if damping < 1e-6:
                break
    if prev <= tol:
        return k

    lo, hi = k - 0.1, k + 0.1
    for _ in range(60):
        if residual(lo) < 0 < residual(hi):
            break
        lo, hi = lo - (hi - lo), hi + (hi - lo)
    else:
        raise RuntimeError(f"could not bracket the strike for delta {delta_put}")
    k = optimize.brentq(residual, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    if abs(residual(k)) > tol:
        raise RuntimeError(
            f"delta solve did not converge for delta {delta_put}: residual {residual(k):.3e}"
        )
    return float(k)


def logstrike_from_forward_delta(delta: float, smile, t: float, tol: float = 1e-12) -> float:
    """Inverse of :func:`forward_delta` along a smile ``k -> sigma``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    sig = _smile_callable(smile)
    q = float(ndtri(delta))
    sq = np.sqrt(t)

    def residual(k: float) -> float:
        return float(forward_delta(k, sig(k), t)) - delta

    s0 = float(sig(0.0)) * sq
    guess = s0 * q - 0.5 * s0 * s0
    lo, hi = guess - 0.1, guess + 0.1
    for _ in range(60):
        if residual(lo) < 0 < residual(hi):
            break
        lo, hi = lo - (hi - lo), hi + (hi - lo)
    else:
        raise RuntimeError(f"could not bracket the strike for forward delta {delta}")
    return float(optimize.brentq(residual, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))
