"""Rough Bergomi variance and price functionals on simulated Volterra paths.

Prices are forward-normalised (``S_0 = 1``, no rates). Only terminal quantities
are kept: the full price ``S_t``, its parallel component ``S1_t`` driven by
``W1`` alone, and the integrated variance ``int_0^t V_u du``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import SeedLike, generator, substream
from .hybrid import TimeGrid, VolterraPaths, check_alpha, simulate_volterra

__all__ = [
    "ForwardVariance",
    "ModelParams",
    "PathFunctionals",
    "variance_paths",
    "integrated_variance",
    "price_functionals",
    "simulate_functionals",
    "resolve_workers",
    "DEFAULT_BATCH_SIZE",
]

DEFAULT_BATCH_SIZE = 20_000


class ForwardVariance:
    """Piecewise-constant, right-continuous forward variance curve.

    ``values[0]`` applies on ``[0, breakpoints[0])``, ``values[i]`` on
    ``[breakpoints[i-1], breakpoints[i])`` and the last value beyond the final
    breakpoint.
    """

    def __init__(self, values: float | Sequence[float], breakpoints: Sequence[float] = ()) -> None:
        values = np.atleast_1d(np.asarray(values, dtype=float))
        breakpoints = np.asarray(breakpoints, dtype=float)
        if len(values) != len(breakpoints) + 1:
            raise ValueError("need exactly one more value than breakpoints")
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ValueError("forward variance must be positive and finite")
        if np.any(np.diff(breakpoints) <= 0) or np.any(breakpoints <= 0):
            raise ValueError("breakpoints must be positive and strictly increasing")
        self.values = values
        self.breakpoints = breakpoints

    @classmethod
    def flat(cls, xi: float) -> "ForwardVariance":
        return cls([xi])

    @property
    def is_flat(self) -> bool:
        return len(self.values) == 1

    def __call__(self, t: np.ndarray | float) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, np.asarray(t, dtype=float), side="right")
        return self.values[idx]

    def integral(self, t: float) -> float:
        """Exact ``int_0^t xi0(u) du``."""
        edges = np.concatenate([[0.0], self.breakpoints, [np.inf]])
        lo = np.minimum(edges[:-1], t)
        hi = np.minimum(edges[1:], t)
        return float(np.sum(self.values * (hi - lo)))

    def __repr__(self) -> str:
        if self.is_flat:
            return f"ForwardVariance.flat({self.values[0]!r})"
        return f"ForwardVariance({self.values.tolist()!r}, {self.breakpoints.tolist()!r})"


@dataclass
class ModelParams:
    """rBergomi parameters: forward variance ``xi0``, vol-of-vol ``eta``,
    correlation ``rho`` and roughness ``alpha`` (Hurst index ``alpha + 1/2``)."""

    xi0: ForwardVariance | float = 0.235**2
    eta: float = 1.9
    rho: float = -0.9
    alpha: float = -0.43

    def __post_init__(self) -> None:
        if not isinstance(self.xi0, ForwardVariance):
            self.xi0 = ForwardVariance.flat(float(self.xi0))
        if not (self.eta > 0 and np.isfinite(self.eta)):
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        self.alpha = check_alpha(self.alpha)

    def replace(self, **changes) -> "ModelParams":
        kw = dict(xi0=self.xi0, eta=self.eta, rho=self.rho, alpha=self.alpha)
        kw.update(changes)
        return ModelParams(**kw)


@dataclass
class PathFunctionals:
    """Terminal per-path quantities. ``s_t`` is ``None`` when ``W2`` was not
    simulated (conditional estimators never need it)."""

    s1_t: np.ndarray
    iv: np.ndarray
    s_t: Optional[np.ndarray] = None
    antithetic: bool = field(default=False)

    def __len__(self) -> int:
        return len(self.iv)

    @classmethod
    def concat(cls, parts: Sequence["PathFunctionals"]) -> "PathFunctionals":
        s_t = None
        if all(p.s_t is not None for p in parts):
            s_t = np.concatenate([p.s_t for p in parts])
        return cls(
            s1_t=np.concatenate([p.s1_t for p in parts]),
            iv=np.concatenate([p.iv for p in parts]),
            s_t=s_t,
            antithetic=all(p.antithetic for p in parts),
        )

    def subset(self, idx) -> "PathFunctionals":
        return PathFunctionals(
            s1_t=self.s1_t[idx],
            iv=self.iv[idx],
            s_t=None if self.s_t is None else self.s_t[idx],
            antithetic=self.antithetic,
        )


def variance_paths(vp: VolterraPaths, params: ModelParams, grid: TimeGrid) -> np.ndarray:
    """``V = xi0(t) exp(eta W^alpha_t - eta^2/2 t^(2 alpha + 1))`` on the grid."""
    if vp.walpha.shape[1] != grid.n_steps + 1:
        raise ValueError("walpha columns do not match the grid")
    t = grid.times
    xi = params.xi0(t)
    drift = 0.5 * params.eta**2 * t ** (2.0 * params.alpha + 1.0)
    with np.errstate(over="ignore"):
        v = np.exp(params.eta * vp.walpha - drift)
    v *= xi
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("variance overflow; eta or the grid is too extreme")
    return v


def integrated_variance(v: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Left-point rectangle rule for ``int_0^t V_u du``."""
    return v[:, :-1].sum(axis=1) * grid.dt


def price_functionals(
    vp: VolterraPaths,
    v: np.ndarray,
    params: ModelParams,
    grid: TimeGrid,
    seed2: SeedLike | np.random.Generator | None = None,
) -> PathFunctionals:
    """Terminal ``S1_t``, ``int V`` and, when ``seed2`` is given, ``S_t``.

    Both prices follow the left-point log-Euler scheme, e.g.
    ``log S1 += rho sqrt(V_j) dW1_j - rho^2 V_j dt / 2``. ``W2`` increments come
    from ``seed2`` only; antithetic rows reuse the negated ``W2`` draw of their
    partner, as for ``W1``.
    """
    rho = params.rho
    dt = grid.dt
    v_left = v[:, :-1]
    sqrt_v = np.sqrt(v_left)
    iv = v_left.sum(axis=1) * dt
    stoch1 = np.einsum("ij,ij->i", sqrt_v, vp.dw1)

    log_s1 = rho * stoch1 - 0.5 * rho * rho * iv
    s1_t = np.exp(log_s1)

    s_t = None
    if seed2 is not None:
        rng = generator(seed2)
        n_base = vp.n_paths // 2 if vp.antithetic else vp.n_paths
        dw2 = rng.standard_normal((n_base, grid.n_steps)) * np.sqrt(dt)
        if vp.antithetic:
            full = np.empty_like(vp.dw1)
            full[0::2] = dw2
            np.negative(dw2, out=full[1::2])
            dw2 = full
        stoch2 = np.einsum("ij,ij->i", sqrt_v, dw2)
        log_s = rho * stoch1 + np.sqrt(1.0 - rho * rho) * stoch2 - 0.5 * iv
        s_t = np.exp(log_s)
        if not np.all(np.isfinite(s_t)):
            raise FloatingPointError("non-finite price accumulated along a path")
    if not (np.all(np.isfinite(s1_t)) and np.all(np.isfinite(iv))):
        raise FloatingPointError("non-finite price accumulated along a path")
    return PathFunctionals(s1_t=s1_t, iv=iv, s_t=s_t, antithetic=vp.antithetic)


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit value, else ``RVT_THREADS`` (0 = auto), else 1."""
    if workers is None:
        env = os.environ.get("RVT_THREADS")
        workers = int(env) if env not in (None, "") else 1
    if workers <= 0:
        workers = os.cpu_count() or 1
    return int(workers)


def simulate_functionals(
    params: ModelParams,
    grid: TimeGrid,
    n_paths: int,
    seed: SeedLike,
    antithetic: bool = True,
    with_w2: bool = False,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int | None = None,
) -> PathFunctionals:
    """Simulate ``n_paths`` terminal functionals in independent batches.

    Batch ``b`` draws ``W1`` from substream ``(b, 0)`` of ``seed`` and ``W2``
    from ``(b, 1)``. Output depends on ``batch_size`` but not on ``workers``.
    """
    n_paths = int(n_paths)
    if antithetic and n_paths % 2:
        raise ValueError(f"n_paths must be even for antithetic sampling, got {n_paths}")
    batch_size = max(2, int(batch_size) - int(batch_size) % 2)
    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)

    def run(b: int) -> PathFunctionals:
        vp = simulate_volterra(params.alpha, grid, sizes[b], substream(seed, b, 0), antithetic)
        v = variance_paths(vp, params, grid)
        seed2 = substream(seed, b, 1) if with_w2 else None
        return price_functionals(vp, v, params, grid, seed2)

    n_workers = min(resolve_workers(workers), len(sizes))
    if n_workers <= 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    return PathFunctionals.concat(parts) if len(parts) > 1 else parts[0]
