"""Monte Carlo price and implied volatility estimators.

Every estimator has the form

    P_n = mean(X + a_n Y) - a_n E[Y]

with the per-path pairs (X, Y) below, evaluated on terminal path functionals.
All functions vectorise over an array of log-strikes: per-path inputs have
shape ``(n,)`` and outputs ``(n, m)`` for ``m`` strikes.

=============  ===========================================  ====================================
kind           X                                            Y
=============  ===========================================  ====================================
base           (S_t - e^k)^+                                0
antithetic     (S_t - e^k)^+ on antithetic pairs            0
conditional    BS((1 - rho^2) IV; S1_t, k)                  0
controlled     (S_t - e^k)^+                                BS(Q - IV; S_t, k)
mixed          BS((1 - rho^2) IV; S1_t, k)                  BS(rho^2 (Q - IV); S1_t, k)
=============  ===========================================  ====================================

``IV`` is the integrated variance, ``Q`` the largest sampled ``IV`` and
``(x)^+`` is the out-of-the-money payoff ``max(w x, 0)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .black_scholes import bs_price, otm_sign, implied_total_variance, price_bounds
from .engine import PathFunctionals

__all__ = [
    "EstimatorKind",
    "ImpliedVolEstimate",
    "base_payoff",
    "conditional_x",
    "q_hat",
    "control_y",
    "alpha_hat",
    "timer_expectation",
    "estimator_samples",
    "estimate_implied_vol",
    "DEGENERATE_VARIANCE",
]

# Sample variance of Y below which the control is treated as absent.
DEGENERATE_VARIANCE = 1e-18


class EstimatorKind(str, enum.Enum):
    BASE = "base"
    ANTITHETIC = "antithetic"
    CONDITIONAL = "conditional"
    CONTROLLED = "controlled"
    MIXED = "mixed"

    @property
    def antithetic(self) -> bool:
        return self is not EstimatorKind.BASE

    @property
    def needs_w2(self) -> bool:
        return self in (EstimatorKind.BASE, EstimatorKind.ANTITHETIC, EstimatorKind.CONTROLLED)

    @property
    def has_control(self) -> bool:
        return self in (EstimatorKind.CONTROLLED, EstimatorKind.MIXED)

    @classmethod
    def parse(cls, value: "str | EstimatorKind") -> "EstimatorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown estimator {value!r}; expected one of {names}") from None


def _strikes(k) -> tuple[np.ndarray, np.ndarray]:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    return k, otm_sign(k)


def base_payoff(pf: PathFunctionals, k) -> np.ndarray:
    """OTM payoff ``max(w (S_t - e^k), 0)`` per path and strike."""
    if pf.s_t is None:
        raise ValueError("base payoff needs S_t; simulate with W2")
    k, w = _strikes(k)
    return np.maximum(w * (pf.s_t[:, None] - np.exp(k)), 0.0)


def conditional_x(pf: PathFunctionals, k, rho: float) -> np.ndarray:
    """Black-Scholes price given the ``W1`` path: spot ``S1_t`` and total
    variance ``(1 - rho^2) IV``. Needs no ``W2`` draws."""
    k, w = _strikes(k)
    v = (1.0 - rho * rho) * pf.iv[:, None]
    return bs_price(v, pf.s1_t[:, None], k, w)


def q_hat(iv) -> float:
    iv = np.asarray(iv)
    if iv.size == 0:
        raise ValueError("q_hat needs at least one integrated variance sample")
    return float(iv.max())


def control_y(pf: PathFunctionals, k, rho: float, q: float, kind=EstimatorKind.MIXED) -> np.ndarray:
    """Timer-option control with remaining variance budget ``q - IV``.

    For ``mixed``: ``BS(rho^2 (q - IV); S1_t, k)``. For ``controlled``:
    ``BS(q - IV; S_t, k)``.
    """
    kind = EstimatorKind.parse(kind)
    if q < pf.iv.max():
        raise ValueError(f"variance budget {q} is below the largest sampled IV {pf.iv.max()}")
    k, w = _strikes(k)
    remaining = (q - pf.iv)[:, None]
    if kind is EstimatorKind.MIXED:
        return bs_price(rho * rho * remaining, pf.s1_t[:, None], k, w)
    if kind is EstimatorKind.CONTROLLED:
        if pf.s_t is None:
            raise ValueError("controlled estimator needs S_t; simulate with W2")
        return bs_price(remaining, pf.s_t[:, None], k, w)
    raise ValueError(f"{kind.value} estimator has no control variate")


def alpha_hat(x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
    """Negative least-squares slope of ``x`` on ``y`` along axis 0.

    Columns where the sample variance of ``y`` is below
    :data:`DEGENERATE_VARIANCE` get coefficient 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.shape[0] == 0:
        raise ValueError("alpha_hat needs samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    syy = np.sum(yc * yc, axis=0)
    sxy = np.sum(xc * yc, axis=0)
    degenerate = syy / max(y.shape[0] - 1, 1) < DEGENERATE_VARIANCE
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(degenerate, 0.0, -sxy / np.where(degenerate, 1.0, syy))
    return a[()] if np.ndim(a) == 0 else a


def timer_expectation(rho: float, q: float, k, kind=EstimatorKind.MIXED) -> np.ndarray:
    """Known mean of the control: ``BS(rho^2 q; 1, k)`` for ``mixed``,
    ``BS(q; 1, k)`` for ``controlled``."""
    kind = EstimatorKind.parse(kind)
    if q < 0:
        raise ValueError("variance budget must be non-negative")
    k, w = _strikes(k)
    budget = rho * rho * q if kind is EstimatorKind.MIXED else q
    return bs_price(np.full_like(k, budget), 1.0, k, w)


@dataclass
class ImpliedVolEstimate:
    """Estimator output per strike.

    ``flag`` is ``0`` for a valid estimate, ``1`` when the price estimate was
    non-positive (volatility clamped to 0) and ``2`` when it broke the upper
    arbitrage bound (volatility NaN).
    """

    kind: EstimatorKind
    k: np.ndarray
    t: float
    sigma: np.ndarray
    price: np.ndarray
    alpha_hat: np.ndarray
    q_hat: float
    ey: np.ndarray
    flag: np.ndarray
    n: int

    OK = 0
    NONPOSITIVE = 1
    ARBITRAGE = 2

    @property
    def valid(self) -> np.ndarray:
        return self.flag == self.OK


def estimator_samples(kind, pf: PathFunctionals, k, rho: float):
    """Per-path ``(X, Y)``, ``alpha_hat``, ``q_hat`` and ``E[Y]``.

    ``Y`` is ``None`` for estimators without a control; then ``alpha_hat``
    and ``E[Y]`` are zero.
    """
    kind = EstimatorKind.parse(kind)
    k, _ = _strikes(k)
    if kind.antithetic and not pf.antithetic:
        raise ValueError(f"{kind.value} estimator expects antithetic paths")
    if kind in (EstimatorKind.BASE, EstimatorKind.ANTITHETIC, EstimatorKind.CONTROLLED):
        x = base_payoff(pf, k)
    else:
        x = conditional_x(pf, k, rho)
    if not kind.has_control:
        zeros = np.zeros_like(k)
        return x, None, zeros, 0.0, zeros
    q = q_hat(pf.iv)
    y = control_y(pf, k, rho, q, kind)
    return x, y, alpha_hat(x, y), q, timer_expectation(rho, q, k, kind)


def estimate_implied_vol(kind, pf: PathFunctionals, k, t: float, rho: float) -> ImpliedVolEstimate:
    """Price estimate and Black-Scholes implied volatility per strike.

    Non-positive prices give volatility 0 with flag 1; prices at or above the
    upper no-arbitrage bound give NaN with flag 2. Neither raises, so a
    calibration can carry on past a bad point.
    """
    kind = EstimatorKind.parse(kind)
    k, w = _strikes(k)
    x, y, a, q, ey = estimator_samples(kind, pf, k, rho)
    if y is None:
        price = x.mean(axis=0)
    else:
        price = (x + a * y).mean(axis=0) - a * ey

    lower, upper = price_bounds(k, w)
    flag = np.zeros(k.shape, dtype=int)
    flag[price <= lower] = ImpliedVolEstimate.NONPOSITIVE
    flag[~(price < upper)] = ImpliedVolEstimate.ARBITRAGE
    sigma = np.full(k.shape, np.nan)
    sigma[flag == ImpliedVolEstimate.NONPOSITIVE] = 0.0
    ok = flag == ImpliedVolEstimate.OK
    if np.any(ok):
        sigma[ok] = np.sqrt(implied_total_variance(price[ok], k[ok], w[ok]) / t)
    return ImpliedVolEstimate(
        kind=kind, k=k, t=t, sigma=sigma, price=price, alpha_hat=np.asarray(a, dtype=float),
        q_hat=q, ey=np.asarray(ey, dtype=float), flag=flag, n=len(pf),
    )
