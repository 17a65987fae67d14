"""Experiments: repeated estimation with runtime-adjusted error measures,
delta-parameterised smiles, forward-variance extraction and (rho, eta)
calibration by simulation."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import interpolate, optimize

from ._rng import SeedLike, substream
from .black_scholes import forward_delta, logstrike_from_spot_delta
from .engine import (
    DEFAULT_BATCH_SIZE,
    ModelParams,
    PathFunctionals,
    price_functionals,
    resolve_workers,
    simulate_functionals,
    variance_paths,
)
from .estimators import EstimatorKind, ImpliedVolEstimate, estimate_implied_vol
from .hybrid import TimeGrid, simulate_volterra

__all__ = [
    "Strike",
    "REFERENCE_SMILE",
    "DEFAULT_MATURITIES",
    "DEFAULT_DELTAS",
    "BenchmarkRecord",
    "BenchmarkResult",
    "repeated_estimation",
    "error_measures",
    "paths_to_match",
    "SmilePoint",
    "SmileSurface",
    "generate_smile",
    "DeltaPoint",
    "to_delta_space",
    "extract_forward_variance",
    "CalibrationResult",
    "minimize_rmse",
    "calibrate_rho_eta",
]


@dataclass(frozen=True)
class Strike:
    label: str
    k: float
    target: float = float("nan")


# Reference 3M smile points (10-delta put, ATM, 10-delta call) for
# xi0 = 0.235^2, eta = 1.9, alpha = -0.43, keyed by rho.
REFERENCE_SMILE = {
    -0.9: (Strike("10P", -0.1787, 0.2961), Strike("ATM", 0.0, 0.2061), Strike("10C", 0.1041, 0.1576)),
    0.0: (Strike("10P", -0.1475, 0.2417), Strike("ATM", 0.0, 0.2173), Strike("10C", 0.1656, 0.2466)),
}

DEFAULT_MATURITIES = (1 / 365, 1 / 52, 2 / 52, 1 / 12, 2 / 12, 0.25, 0.5, 1.0)
DEFAULT_DELTAS = tuple(np.round(np.arange(1, 20) * 0.05, 2))


# --------------------------------------------------------------------------
# repeated estimation


def error_measures(samples, targets, tau_ms: float) -> tuple[float, float]:
    """Mean squared error across strikes and its runtime-adjusted version.

    ``samples`` has shape ``(N, m)``; NaN entries (flagged estimates) are
    skipped. Each strike's squared error is normalised by ``N - 1``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    targets = np.asarray(targets, dtype=float)
    counts = np.sum(np.isfinite(samples), axis=0)
    if np.any(counts < 2):
        raise ValueError("need at least two valid samples per strike")
    sq = np.nansum((samples - targets) ** 2, axis=0) / (counts - 1)
    phi2 = float(np.mean(sq))
    return phi2, tau_ms * phi2


@dataclass
class BenchmarkRecord:
    estimator: str
    rho: float
    label: str
    log_strike: float
    target_vol: float
    bias: float
    std: float
    tau_ms: float
    phi2: float
    psi2: float

    COLUMNS = ("estimator", "rho", "label", "log_strike", "target_vol", "bias", "std", "tau_ms", "phi2", "psi2")

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in self.COLUMNS)


@dataclass
class BenchmarkResult:
    """``N`` implied volatility estimates per strike for one estimator."""

    kind: EstimatorKind
    model: ModelParams
    strikes: tuple[Strike, ...]
    n_paths: int
    samples: np.ndarray
    prices: np.ndarray
    tau_ms: float
    n_flagged: np.ndarray

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.target for s in self.strikes])

    @property
    def mean(self) -> np.ndarray:
        return np.nanmean(self.samples, axis=0)

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.targets

    @property
    def std(self) -> np.ndarray:
        return np.nanstd(self.samples, axis=0, ddof=1)

    def measures(self) -> tuple[float, float]:
        return error_measures(self.samples, self.targets, self.tau_ms)

    @property
    def phi2(self) -> float:
        return self.measures()[0]

    @property
    def psi2(self) -> float:
        return self.measures()[1]

    def records(self) -> list[BenchmarkRecord]:
        phi2, psi2 = self.measures()
        return [
            BenchmarkRecord(self.kind.value, self.model.rho, s.label, s.k, s.target, float(b), float(sd), self.tau_ms, phi2, psi2)
            for s, b, sd in zip(self.strikes, self.bias, self.std)
        ]


def repeated_estimation(
    kind,
    model: ModelParams,
    strikes: Sequence[Strike],
    t: float = 0.25,
    n_paths: int = 1000,
    n_reps: int = 1000,
    n_steps: int = 312,
    seed: SeedLike = 0,
    workers: int | None = 1,
) -> BenchmarkResult:
    """Draw ``n_reps`` independent estimates of the smile at ``strikes``.

    Replication ``i`` uses substream ``i`` of ``seed``. ``tau_ms`` is the
    wall-clock time for the whole sample divided by ``n_reps``; it covers
    simulation, estimation and inversion for all strikes. Flagged estimates
    are stored as NaN and counted in ``n_flagged``.
    """
    kind = EstimatorKind.parse(kind)
    if n_paths < 2 or n_reps < 2:
        raise ValueError("n_paths and n_reps must both be at least 2")
    strikes = tuple(strikes)
    ks = np.array([s.k for s in strikes])
    grid = TimeGrid(n_steps, t)

    def one(i: int) -> ImpliedVolEstimate:
        pf = simulate_functionals(
            model, grid, n_paths, substream(seed, i), antithetic=kind.antithetic,
            with_w2=kind.needs_w2, batch_size=n_paths, workers=1,
        )
        return estimate_implied_vol(kind, pf, ks, t, model.rho)

    n_workers = resolve_workers(workers)
    start = time.perf_counter()
    if n_workers <= 1:
        estimates = [one(i) for i in range(n_reps)]
    else:
        with ThreadPoolExecutor(n_workers) as pool:
            estimates = list(pool.map(one, range(n_reps)))
    tau_ms = (time.perf_counter() - start) * 1e3 / n_reps

    samples = np.array([np.where(e.valid, e.sigma, np.nan) for e in estimates])
    prices = np.array([e.price for e in estimates])
    flagged = np.sum([~e.valid for e in estimates], axis=0)
    return BenchmarkResult(kind, model, strikes, n_paths, samples, prices, tau_ms, flagged)


def paths_to_match(phi2_slow: float, phi2_fast: float, n_paths: int) -> float:
    """Paths the slower estimator needs to reach the faster one's error,
    using the 1/n scaling of the mean squared error."""
    return n_paths * phi2_slow / phi2_fast


# --------------------------------------------------------------------------
# smiles


@dataclass
class SmilePoint:
    maturity: float
    delta_put: float
    log_strike: float
    implied_vol: float
    std_err: float
    flag: str = ""

    COLUMNS = ("maturity", "delta_put", "log_strike", "implied_vol", "std_err")

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in self.COLUMNS)


@dataclass
class SmileSurface:
    points: list[SmilePoint] = field(default_factory=list)

    @property
    def maturities(self) -> list[float]:
        return sorted({p.maturity for p in self.points})

    def slice(self, t: float) -> list[SmilePoint]:
        pts = [p for p in self.points if np.isclose(p.maturity, t, rtol=1e-12, atol=0)]
        return sorted(pts, key=lambda p: p.delta_put)

    def arrays(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(delta_put, log_strike, implied_vol)`` at maturity ``t``, valid points only."""
        pts = [p for p in self.slice(t) if not p.flag]
        return (
            np.array([p.delta_put for p in pts]),
            np.array([p.log_strike for p in pts]),
            np.array([p.implied_vol for p in pts]),
        )


def _batch_std_err(kind, pf: PathFunctionals, ks, t, rho, n_batches: int) -> np.ndarray:
    n = len(pf)
    size = n // n_batches
    size -= size % 2
    if n_batches < 2 or size < 2:
        return np.full(len(ks), np.nan)
    sig = np.array([
        estimate_implied_vol(kind, pf.subset(slice(b * size, (b + 1) * size)), ks, t, rho).sigma
        for b in range(n_batches)
    ])
    return np.nanstd(sig, axis=0, ddof=1) / np.sqrt(np.sum(np.isfinite(sig), axis=0))


def generate_smile(
    model: ModelParams,
    maturities: Sequence[float] = DEFAULT_MATURITIES,
    delta_puts: Sequence[float] = DEFAULT_DELTAS,
    n_paths: int = 400_000,
    kind=EstimatorKind.MIXED,
    n_steps: int = 312,
    seed: SeedLike = 0,
    n_batches: int = 20,
    batch_size: int = DEFAULT_BATCH_SIZE,
    workers: int | None = None,
) -> SmileSurface:
    """Implied volatilities at spot-delta strikes for each maturity.

    Each maturity has its own ``n_steps`` grid and its own paths. Strikes
    depend on the unknown smile, so each maturity is done in two passes on
    the same paths: first a provisional smile at strikes implied by the flat
    ATM-forward volatility, then the delta strikes solved against that
    provisional smile and re-estimated. Standard errors come from
    ``n_batches`` batch means.
    """
    kind = EstimatorKind.parse(kind)
    surface = SmileSurface()
    for j, t in enumerate(maturities):
        grid = TimeGrid(n_steps, float(t))
        pf = simulate_functionals(
            model, grid, n_paths, substream(seed, j), antithetic=kind.antithetic,
            with_w2=kind.needs_w2, batch_size=batch_size, workers=workers,
        )
        # pass 1: wide coarse strikes at the flat level, stretched for the wings
        sigma0 = np.sqrt(model.xi0.integral(t) / t)
        coarse_deltas = np.linspace(0.002, 0.998, 41)
        coarse = np.array([logstrike_from_spot_delta(d, 1.6 * sigma0, t) for d in coarse_deltas])
        pre = estimate_implied_vol(kind, pf, coarse, t, model.rho)
        good = pre.valid & (pre.sigma > 0)
        if good.sum() < 2:
            for d in delta_puts:
                surface.points.append(SmilePoint(float(t), float(d), np.nan, np.nan, np.nan, "provisional smile failed"))
            continue
        kc, sc = coarse[good], pre.sigma[good]

        def provisional(k, kc=kc, sc=sc):
            return float(np.interp(k, kc, sc))

        # pass 2: delta strikes against the provisional smile
        ks, notes = [], []
        for d in delta_puts:
            try:
                ks.append(logstrike_from_spot_delta(float(d), provisional, t))
                notes.append("")
            except RuntimeError as exc:
                ks.append(np.nan)
                notes.append(f"delta solve failed: {exc}")
        ks = np.array(ks)
        solved = np.isfinite(ks)
        sigma = np.full(len(ks), np.nan)
        std_err = np.full(len(ks), np.nan)
        if solved.any():
            est = estimate_implied_vol(kind, pf, ks[solved], t, model.rho)
            sigma[solved] = np.where(est.valid, est.sigma, np.nan)
            std_err[solved] = _batch_std_err(kind, pf, ks[solved], t, model.rho, n_batches)
            for i, f in zip(np.flatnonzero(solved), est.flag):
                if f:
                    notes[i] = "flagged estimate"
        for d, k, s, e, note in zip(delta_puts, ks, sigma, std_err, notes):
            surface.points.append(SmilePoint(float(t), float(d), float(k), float(s), float(e), note))
    return surface


@dataclass
class DeltaPoint:
    maturity: float
    forward_delta: float
    log_strike: float
    implied_vol: float


def to_delta_space(surface: SmileSurface) -> dict[float, list[DeltaPoint]]:
    """Re-key each maturity slice by forward delta ``N(-d-)``, ascending."""
    out: dict[float, list[DeltaPoint]] = {}
    for t in surface.maturities:
        _, ks, sig = surface.arrays(t)
        deltas = forward_delta(ks, sig, t)
        pts = [DeltaPoint(t, float(d), float(k), float(s)) for d, k, s in zip(deltas, ks, sig)]
        out[t] = sorted(pts, key=lambda p: p.forward_delta)
    return out


def extract_forward_variance(forward_deltas, vols, t: float) -> float:
    """``int_0^t xi0(u) du`` from a smile in forward-delta space.

    Total implied variance ``sigma^2 t`` integrated over forward delta on
    ``[0, 1]``: natural cubic spline of ``sigma^2`` through the observed
    points, held constant beyond the first and last, integrated exactly.
    """
    d = np.asarray(forward_deltas, dtype=float)
    s2 = np.asarray(vols, dtype=float) ** 2
    if d.size < 5:
        raise ValueError("need at least 5 smile points")
    if np.any((d <= 0) | (d >= 1)):
        raise ValueError("forward deltas must lie in (0, 1)")
    order = np.argsort(d)
    d, s2 = d[order], s2[order]
    if np.any(np.diff(d) <= 0):
        raise ValueError("forward deltas must be distinct")
    spline = interpolate.CubicSpline(d, s2, bc_type="natural")
    area = float(spline.integrate(d[0], d[-1])) + s2[0] * d[0] + s2[-1] * (1.0 - d[-1])
    return area * t


# --------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationResult:
    rho_hat: float
    eta_hat: float
    rmse: float
    iterations: int
    converged: bool
    n_evals: int = 0
    method: str = "L-BFGS-B"
    message: str = ""

    COLUMNS = ("rho_hat", "eta_hat", "rmse", "converged")


class _BudgetExhausted(Exception):
    pass


def minimize_rmse(
    model_vols: Callable[[float, float], np.ndarray],
    target_vols,
    x0: tuple[float, float],
    bounds=((-0.99, 0.99), (1.0, 3.0)),
    budget_ms: float | None = 700.0,
    maxiter: int = 50,
) -> CalibrationResult:
    """Bounded L-BFGS-B minimisation of the implied volatility RMSE over
    ``(rho, eta)`` with finite-difference gradients.

    ``model_vols(rho, eta)`` returns volatilities aligned with
    ``target_vols``; non-finite output makes the objective ``+inf``. The best
    point evaluated is returned, so stopping on the wall-clock budget still
    yields a usable answer.
    """
    target = np.asarray(target_vols, dtype=float)
    best = {"f": np.inf, "x": np.clip(np.asarray(x0, dtype=float), [b[0] for b in bounds], [b[1] for b in bounds])}
    n_evals = 0
    start = time.perf_counter()

    def objective(x: np.ndarray) -> float:
        nonlocal n_evals
        if budget_ms is not None and n_evals > 0 and (time.perf_counter() - start) * 1e3 > budget_ms:
            raise _BudgetExhausted
        n_evals += 1
        vols = np.asarray(model_vols(float(x[0]), float(x[1])), dtype=float)
        f = float(np.sqrt(np.mean((vols - target) ** 2))) if np.all(np.isfinite(vols)) else np.inf
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(x, dtype=float)
        return f

    x_start = best["x"].copy()
    f0 = objective(x_start)
    if f0 == 0.0:
        return CalibrationResult(float(x_start[0]), float(x_start[1]), 0.0, 0, True, n_evals, message="exact fit at start")
    try:
        # inf - inf in finite differences near infeasible points
        with np.errstate(invalid="ignore"):
            res = optimize.minimize(objective, x_start, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        iterations, converged, message = int(res.nit), bool(res.success), str(res.message)
    except _BudgetExhausted:
        iterations, converged, message = -1, False, "wall-clock budget exhausted"
    return CalibrationResult(
        float(best["x"][0]), float(best["x"][1]), float(best["f"]), iterations, converged, n_evals, message=message,
    )


def calibrate_rho_eta(
    target_k,
    target_vols,
    t: float,
    model: ModelParams,
    kind=EstimatorKind.MIXED,
    n_paths: int = 1000,
    n_steps: int = 312,
    seed: SeedLike = 0,
    x0: tuple[float, float] | None = None,
    bounds=((-0.99, 0.99), (1.0, 3.0)),
    budget_ms: float | None = 700.0,
    maxiter: int = 50,
) -> CalibrationResult:
    """Calibrate ``(rho, eta)`` to a smile with ``alpha`` and ``xi0`` fixed.

    The Volterra paths do not depend on ``(rho, eta)``, so they are simulated
    once per call; ``W2`` is redrawn from the same substream at every
    evaluation. The objective is therefore a deterministic function of
    ``(rho, eta)`` (common random numbers). ``x0`` defaults to the model's
    ``(rho, eta)``.
    """
    kind = EstimatorKind.parse(kind)
    ks = np.asarray(target_k, dtype=float)
    grid = TimeGrid(n_steps, t)
    vp = simulate_volterra(model.alpha, grid, n_paths, substream(seed, 0, 0), kind.antithetic)
    seed2 = substream(seed, 0, 1) if kind.needs_w2 else None

    def model_vols(rho: float, eta: float) -> np.ndarray:
        m = model.replace(rho=rho, eta=eta)
        try:
            v = variance_paths(vp, m, grid)
            pf = price_functionals(vp, v, m, grid, seed2)
        except FloatingPointError:
            return np.full(ks.shape, np.nan)
        est = estimate_implied_vol(kind, pf, ks, t, rho)
        return np.where(est.flag == ImpliedVolEstimate.ARBITRAGE, np.nan, est.sigma)

    if x0 is None:
        x0 = (model.rho, model.eta)
    return minimize_rmse(model_vols, target_vols, x0, bounds, budget_ms, maxiter)
