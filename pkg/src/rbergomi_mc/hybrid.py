"""Hybrid-scheme simulation of the Riemann-Liouville process.

The process is

    W^a_t = sqrt(2a + 1) * int_0^t (t - u)^a dW_u,   -1/2 < a <= 0,

a centred Gaussian process with variance t^(2a + 1). On a uniform grid the
first-order hybrid scheme treats the most recent kernel interval exactly,
sampling the stochastic integral jointly with the Brownian increment, and
replaces the kernel on every earlier interval by its value at the optimal
abscissa ``b_k``. The history sum is a discrete convolution, evaluated by FFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from ._rng import SeedLike, generator

__all__ = [
    "TimeGrid",
    "VolterraPaths",
    "check_alpha",
    "bstar_weights",
    "kernel_pair_covariance",
    "hybrid_weights",
    "fft_convolve",
    "direct_convolution_reference",
    "simulate_volterra",
    "MAX_ELEMENTS",
]

# Largest paths * steps block simulated in one call (about 1.6 GB of float64
# working memory); larger requests must be batched by the caller.
MAX_ELEMENTS = 40_000_000


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid with ``n_steps`` intervals on ``[0, maturity]``."""

    n_steps: int
    maturity: float

    def __post_init__(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not (self.maturity > 0 and np.isfinite(self.maturity)):
            raise ValueError(f"maturity must be positive, got {self.maturity}")

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.maturity
        return t


@dataclass
class VolterraPaths:
    """Brownian increments ``dw1`` (paths x n_steps) and the Volterra skeleton
    ``walpha`` (paths x n_steps+1). With ``antithetic`` set, row ``2j + 1`` is
    the exact negation of row ``2j``."""

    dw1: np.ndarray
    walpha: np.ndarray
    antithetic: bool

    @property
    def n_paths(self) -> int:
        return self.dw1.shape[0]


def check_alpha(alpha: float, allow_zero: bool = True) -> float:
    alpha = float(alpha)
    upper_ok = alpha <= 0.0 if allow_zero else alpha < 0.0
    if not (-0.5 < alpha and upper_ok):
        bound = "(-0.5, 0]" if allow_zero else "(-0.5, 0)"
        raise ValueError(f"alpha must lie in {bound}, got {alpha}")
    return alpha


def bstar_weights(alpha: float, count: int) -> np.ndarray:
    """Optimal evaluation points b_2, ..., b_count of the power kernel.

    ``b_k`` is the point in ``[k-1, k]`` where ``u**alpha`` equals its mean
    over that interval, so ``k - 1 < b_k < k``.

    Raises
    ------
    ValueError
        If ``alpha`` is not in ``(-0.5, 0)`` (at zero the exponent ``1/alpha``
        is singular; use the Brownian branch instead) or ``count < 2``.
    """
    alpha = check_alpha(alpha, allow_zero=False)
    if int(count) != count or count < 2:
        raise ValueError(f"count must be an integer >= 2, got {count}")
    k = np.arange(2, int(count) + 1, dtype=float)
    a1 = alpha + 1.0
    mean_kernel = (k**a1 - (k - 1.0) ** a1) / a1
    return mean_kernel ** (1.0 / alpha)


def kernel_pair_covariance(alpha: float, dt: float) -> np.ndarray:
    """Covariance of (dW over one step, int_0^dt (dt - s)^alpha dW_s)."""
    alpha = check_alpha(alpha, allow_zero=False)
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    c12 = dt ** (alpha + 1.0) / (alpha + 1.0)
    c22 = dt ** (2.0 * alpha + 1.0) / (2.0 * alpha + 1.0)
    return np.array([[dt, c12], [c12, c22]])


def hybrid_weights(alpha: float, grid: TimeGrid) -> np.ndarray:
    """Convolution weights indexed by lag: zero at lags 0 and 1, ``(b_k dt)^alpha``
    at lag ``k >= 2``. Length ``n_steps + 1``."""
    g = np.zeros(grid.n_steps + 1)
    if grid.n_steps >= 2:
        g[2:] = (bstar_weights(alpha, grid.n_steps) * grid.dt) ** alpha
    return g


def fft_convolve(dw: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Causal convolution ``out[:, i] = sum_j weights[j] * dw[:, i - j]`` for
    ``i = 0..n`` where ``n = dw.shape[-1]``, computed row-wise by FFT."""
    dw = np.atleast_2d(dw)
    n = dw.shape[-1]
    m = len(weights)
    nfft = sfft.next_fast_len(n + m - 1, real=True)
    spec = sfft.rfft(dw, n=nfft, axis=-1) * sfft.rfft(weights, n=nfft)
    return sfft.irfft(spec, n=nfft, axis=-1)[..., : n + 1]


def direct_convolution_reference(dw1: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """O(n^2) version of :func:`fft_convolve` for a single path. Test oracle."""
    dw1 = np.asarray(dw1, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n = len(dw1)
    out = np.zeros(n + 1)
    for i in range(n + 1):
        acc = 0.0
        for j in range(len(weights)):
            if 0 <= i - j < n:
                acc += weights[j] * dw1[i - j]
        out[i] = acc
    return out


def simulate_volterra(
    alpha: float,
    grid: TimeGrid,
    n_paths: int,
    seed: SeedLike | np.random.Generator,
    antithetic: bool = True,
) -> VolterraPaths:
    """Simulate skeletons of W^alpha on ``grid`` with the hybrid scheme.

    Parameters
    ----------
    alpha : float
        Kernel exponent in ``(-0.5, 0]``. ``alpha == 0`` returns Brownian
        motion (cumulative sums of the increments).
    grid : TimeGrid
    n_paths : int
        Number of rows. Must be even when ``antithetic``.
    seed : int, SeedSequence or Generator
    antithetic : bool
        Draw ``n_paths // 2`` Gaussian pairs and append their negations,
        interleaved so that row ``2j + 1 = -row 2j``.
    """
    alpha = check_alpha(alpha)
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if antithetic and n_paths % 2:
        raise ValueError(f"n_paths must be even for antithetic sampling, got {n_paths}")
    if n_paths * (grid.n_steps + 1) > MAX_ELEMENTS:
        raise ValueError(
            f"n_paths * n_steps = {n_paths * grid.n_steps} exceeds {MAX_ELEMENTS}; "
            "reduce batch_size"
        )
    rng = generator(seed)
    n_base = n_paths // 2 if antithetic else n_paths
    n = grid.n_steps

    if alpha == 0.0:
        dw1 = rng.standard_normal((n_base, n)) * np.sqrt(grid.dt)
        walpha = np.zeros((n_base, n + 1))
        np.cumsum(dw1, axis=1, out=walpha[:, 1:])
    else:
        cov = kernel_pair_covariance(alpha, grid.dt)
        l11 = np.sqrt(cov[0, 0])
        l21 = cov[1, 0] / l11
        l22 = np.sqrt(cov[1, 1] - l21 * l21)
        z = rng.standard_normal((2, n_base, n))
        dw1 = l11 * z[0]
        exact = l21 * z[0] + l22 * z[1]
        walpha = fft_convolve(dw1, hybrid_weights(alpha, grid))
        walpha[:, 0] = 0.0
        walpha[:, 1:] += exact
        walpha *= np.sqrt(2.0 * alpha + 1.0)

    if antithetic:
        dw1 = _interleave_negated(dw1)
        walpha = _interleave_negated(walpha)
    return VolterraPaths(dw1=dw1, walpha=walpha, antithetic=antithetic)


def _interleave_negated(a: np.ndarray) -> np.ndarray:
    out = np.empty((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
    out[0::2] = a
    np.negative(a, out=out[1::2])
    return out
