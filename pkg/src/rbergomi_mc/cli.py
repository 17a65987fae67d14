"""Command-line entry point.

    rbergomi-mc <command> [--config FILE] [--key=value ...] --out PATH

Commands: volterra-check, smile, benchmark, calibrate, extract-xi. Output is
CSV with the resolved configuration as ``#`` comment lines on top. Exit codes:
0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from ._rng import substream
from .config import COMMANDS, ConfigError, RunConfig, parse_config, parse_overrides
from .engine import ForwardVariance, ModelParams
from .hybrid import TimeGrid, simulate_volterra
from .lab import (
    REFERENCE_SMILE,
    SmilePoint,
    SmileSurface,
    Strike,
    calibrate_rho_eta,
    extract_forward_variance,
    generate_smile,
    repeated_estimation,
    to_delta_space,
)

log = logging.getLogger("rbergomi_mc")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

SMILE_COLUMNS = SmilePoint.COLUMNS
BENCHMARK_COLUMNS = ("estimator", "rho", "label", "log_strike", "target_vol", "bias", "std", "tau_ms", "phi2", "psi2")
CALIBRATE_COLUMNS = ("run", "rho_hat", "eta_hat", "rmse", "converged")
VOLTERRA_COLUMNS = ("alpha", "maturity", "n_steps", "n_paths", "sample_mean", "sample_var", "target_var", "rel_err")
XI_COLUMNS = ("maturity", "integrated_xi", "mean_xi", "n_points")


class NumericalFailure(RuntimeError):
    pass


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return format(value, ".10g")
    return str(value)


def emit_csv(records: Iterable[Sequence], columns: Sequence[str], path, header: Sequence[str] = ()) -> None:
    """Write ``records`` as UTF-8 CSV with ``#`` comment lines first.

    Floats use 10 significant digits; the bytes depend only on the inputs.
    """
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([_fmt(v) for v in rec])
    data = buf.getvalue().encode("utf-8")
    if str(path) == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def read_smile_csv(path) -> SmileSurface:
    """Read a file written by the ``smile`` command."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    surface = SmileSurface()
    for row in csv.DictReader(lines):
        pt = SmilePoint(*(float(row[c]) for c in SMILE_COLUMNS))
        if not (math.isfinite(pt.log_strike) and math.isfinite(pt.implied_vol)):
            pt.flag = "missing"
        surface.points.append(pt)
    return surface


def model_from_config(cfg: RunConfig) -> ModelParams:
    xi = cfg.xi0 if isinstance(cfg.xi0, list) else [cfg.xi0]
    return ModelParams(ForwardVariance(xi, cfg.xi0_breakpoints), cfg.eta, cfg.rho, cfg.alpha)


def _header(cfg: RunConfig) -> list[str]:
    return [f"rbergomi-mc {__version__} {cfg.command}", f"seed {cfg.seed}", f"config {cfg.to_json()}"]


def run_volterra_check(cfg: RunConfig):
    n_paths = cfg.resolved_paths()
    n_paths -= n_paths % 2
    rows = []
    for j, t in enumerate(cfg.maturities):
        grid = TimeGrid(cfg.n_steps, t)
        terminal = []
        for b, start in enumerate(range(0, n_paths, cfg.batch_size)):
            size = min(cfg.batch_size, n_paths - start)
            size -= size % 2
            if size:
                vp = simulate_volterra(cfg.alpha, grid, size, substream(cfg.seed, j, b), antithetic=True)
                terminal.append(vp.walpha[:, -1])
        x = np.concatenate(terminal)
        target = t ** (2 * cfg.alpha + 1)
        var = float(np.mean(x * x) - np.mean(x) ** 2)
        rows.append((cfg.alpha, t, cfg.n_steps, len(x), float(np.mean(x)), var, target, var / target - 1.0))
    return rows, VOLTERRA_COLUMNS


def _smile(cfg: RunConfig, maturities, n_paths, seed) -> SmileSurface:
    return generate_smile(
        model_from_config(cfg), maturities, cfg.deltas, n_paths, cfg.resolved_estimators()[0],
        cfg.n_steps, seed, cfg.n_batches, cfg.batch_size, cfg.threads,
    )


def run_smile(cfg: RunConfig):
    surface = _smile(cfg, cfg.maturities, cfg.resolved_paths(), cfg.seed)
    if all(p.flag for p in surface.points):
        raise NumericalFailure("every smile point failed")
    return [p.row() for p in surface.points], SMILE_COLUMNS


def run_benchmark(cfg: RunConfig):
    if cfg.strikes:
        labels = cfg.labels or [f"k{i}" for i in range(len(cfg.strikes))]
        targets = cfg.targets or [float("nan")] * len(cfg.strikes)
        strikes = [Strike(lb, k, tg) for lb, k, tg in zip(labels, cfg.strikes, targets)]
    else:
        strikes = list(REFERENCE_SMILE[cfg.rho])
    model = model_from_config(cfg)
    rows, total, flagged = [], 0, 0
    for kind in cfg.resolved_estimators():
        res = repeated_estimation(
            kind, model, strikes, cfg.maturity, cfg.resolved_paths(), cfg.n_reps, cfg.n_steps,
            cfg.seed, workers=cfg.threads if cfg.threads is not None else 1,
        )
        total += res.samples.size
        flagged += int(res.n_flagged.sum())
        if np.any(res.n_flagged >= cfg.n_reps - 1):
            log.warning("%s: fewer than two valid estimates at some strike; skipped", kind.value)
            continue
        log.info("%s: tau %.2f ms, std %s", kind.value, res.tau_ms, np.round(res.std, 5))
        if not any(math.isnan(s.target) for s in strikes):
            rows.extend(r.row() for r in res.records())
        else:
            rows.extend(
                (kind.value, model.rho, s.label, s.k, s.target, float("nan"), float(sd), res.tau_ms, float("nan"), float("nan"))
                for s, sd in zip(strikes, res.std)
            )
    if flagged == total:
        raise NumericalFailure("every estimate was flagged")
    return rows, BENCHMARK_COLUMNS


def _target_smile(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.input:
        surface = read_smile_csv(cfg.input)
        t = min(surface.maturities, key=lambda m: abs(m - cfg.maturity)) if surface.points else cfg.maturity
    else:
        surface = generate_smile(
            model_from_config(cfg), [cfg.maturity], cfg.deltas, cfg.target_n_paths, "mixed",
            cfg.n_steps, substream(cfg.seed, 1), cfg.n_batches, cfg.batch_size, cfg.threads,
        )
        t = cfg.maturity
    _, k, sig = surface.arrays(t)
    if len(k) == 0:
        raise NumericalFailure("no valid target smile points")
    return k, sig


def run_calibrate(cfg: RunConfig):
    k, sig = _target_smile(cfg)
    model = model_from_config(cfg)
    kind = cfg.resolved_estimators()[0]
    rows = []
    for r in range(cfg.restarts):
        res = calibrate_rho_eta(
            k, sig, cfg.maturity, model, kind, cfg.resolved_paths(), cfg.n_steps,
            substream(cfg.seed, 2, r), budget_ms=cfg.budget_ms, maxiter=cfg.maxiter,
        )
        rows.append((r, res.rho_hat, res.eta_hat, res.rmse, res.converged))
    if all(not math.isfinite(row[3]) for row in rows):
        raise NumericalFailure("every calibration failed")
    return rows, CALIBRATE_COLUMNS


def run_extract_xi(cfg: RunConfig):
    if cfg.input:
        surface = read_smile_csv(cfg.input)
    else:
        surface = _smile(cfg, cfg.maturities, cfg.resolved_paths(), cfg.seed)
    rows = []
    for t, pts in to_delta_space(surface).items():
        if len(pts) < 5:
            continue
        total = extract_forward_variance([p.forward_delta for p in pts], [p.implied_vol for p in pts], t)
        rows.append((t, total, total / t, len(pts)))
    if not rows:
        raise NumericalFailure("no maturity had 5 valid smile points")
    return rows, XI_COLUMNS


RUNNERS = {
    "volterra-check": run_volterra_check,
    "smile": run_smile,
    "benchmark": run_benchmark,
    "calibrate": run_calibrate,
    "extract-xi": run_extract_xi,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rbergomi-mc", description=__doc__.split("\n\n")[0], allow_abbrev=False)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat JSON configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        cfg = parse_config(args.command, args.config, parse_overrides(rest))
        if not cfg.out:
            raise ConfigError("out", "an output path is required (--out PATH, '-' for stdout)")
        out = cfg.out
        if out != "-" and not Path(out).parent.exists():
            print(f"error: cannot write {out}: directory does not exist", file=sys.stderr)
            return EXIT_IO
        rows, columns = RUNNERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # size limits and similar surfaced by the simulation layer
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        emit_csv(rows, columns, out, _header(cfg))
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
