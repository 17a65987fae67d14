"""Run configuration: flat JSON file plus ``--key=value`` overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .estimators import EstimatorKind
from .lab import DEFAULT_DELTAS, DEFAULT_MATURITIES

COMMANDS = ("volterra-check", "smile", "benchmark", "calibrate", "extract-xi")

# n_paths when not configured, per command
DEFAULT_PATHS = {
    "volterra-check": 100_000,
    "smile": 400_000,
    "benchmark": 1_000,
    "calibrate": 1_000,
    "extract-xi": 400_000,
}


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    command: str
    xi0: Any = 0.235**2
    xi0_breakpoints: list = field(default_factory=list)
    eta: float = 1.9
    rho: float = -0.9
    alpha: float = -0.43
    n_steps: int = 312
    n_paths: Optional[int] = None
    n_reps: int = 1000
    estimators: Optional[list] = None
    maturity: float = 0.25
    maturities: list = field(default_factory=lambda: list(DEFAULT_MATURITIES))
    deltas: list = field(default_factory=lambda: list(DEFAULT_DELTAS))
    strikes: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    target_n_paths: int = 400_000
    restarts: int = 100
    budget_ms: Optional[float] = 700.0
    maxiter: int = 50
    seed: int = 1
    batch_size: int = 20_000
    n_batches: int = 20
    threads: Optional[int] = None
    input: Optional[str] = None
    out: Optional[str] = None

    def resolved_paths(self) -> int:
        return self.n_paths if self.n_paths is not None else DEFAULT_PATHS[self.command]

    def resolved_estimators(self) -> list[EstimatorKind]:
        if self.estimators is None:
            if self.command == "benchmark":
                return list(EstimatorKind)
            return [EstimatorKind.MIXED]
        return [EstimatorKind.parse(e) for e in self.estimators]

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["n_paths"] = self.resolved_paths()
        d["estimators"] = [k.value for k in self.resolved_estimators()]
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT = {"n_steps", "n_paths", "n_reps", "target_n_paths", "restarts", "maxiter", "seed", "batch_size", "n_batches", "threads"}
_FLOAT = {"eta", "rho", "alpha", "maturity", "budget_ms"}
_FLOAT_LIST = {"xi0_breakpoints", "maturities", "deltas", "strikes", "targets"}
_STR = {"command", "input", "out"}


def _coerce(name: str, value: Any) -> Any:
    if value is None:
        if name in ("n_paths", "budget_ms", "threads", "input", "out", "estimators"):
            return None
        raise ConfigError(name, "may not be null")
    try:
        if name in _INT:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if name in _FLOAT:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if name == "xi0":
            if isinstance(value, (list, tuple)):
                return [float(x) for x in value]
            return float(value)
        if name in _FLOAT_LIST:
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = [value]
            return [float(x) for x in value]
        if name in ("estimators", "labels"):
            if isinstance(value, str):
                value = [s for s in value.split(",") if s.strip()]
            return [str(s).strip() for s in value]
        if name in _STR:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"invalid value {value!r}") from None
    raise ConfigError(name, "unknown key")


def _parse_flag_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def validate(cfg: RunConfig) -> RunConfig:
    def need(cond: bool, name: str, msg: str) -> None:
        if not cond:
            raise ConfigError(name, msg)

    need(cfg.command in COMMANDS, "command", f"must be one of {', '.join(COMMANDS)}")
    xi = cfg.xi0 if isinstance(cfg.xi0, list) else [cfg.xi0]
    need(all(x > 0 for x in xi), "xi0", "forward variance must be positive")
    need(len(xi) == len(cfg.xi0_breakpoints) + 1, "xi0_breakpoints", "need one fewer breakpoint than xi0 values")
    need(cfg.eta > 0, "eta", "must be positive")
    need(-1.0 <= cfg.rho <= 1.0, "rho", "must lie in [-1, 1]")
    need(-0.5 < cfg.alpha <= 0.0, "alpha", "must lie in (-0.5, 0]")
    need(cfg.n_steps >= 1, "n_steps", "must be positive")
    if cfg.n_paths is not None:
        need(cfg.n_paths >= 2, "n_paths", "must be at least 2")
    need(cfg.n_reps >= 2, "n_reps", "must be at least 2")
    need(cfg.target_n_paths >= 2 and cfg.target_n_paths % 2 == 0, "target_n_paths", "must be even and at least 2")
    need(cfg.maturity > 0, "maturity", "must be positive")
    need(len(cfg.maturities) > 0 and all(t > 0 for t in cfg.maturities), "maturities", "must be positive")
    need(len(cfg.deltas) > 0 and all(0 < d < 1 for d in cfg.deltas), "deltas", "must lie in (0, 1)")
    need(cfg.restarts >= 1, "restarts", "must be positive")
    need(cfg.budget_ms is None or cfg.budget_ms > 0, "budget_ms", "must be positive or null")
    need(cfg.maxiter >= 1, "maxiter", "must be positive")
    need(0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    need(cfg.batch_size >= 2, "batch_size", "must be at least 2")
    need(cfg.n_batches >= 1, "n_batches", "must be positive")
    need(cfg.threads is None or cfg.threads >= 0, "threads", "must be non-negative")
    if cfg.estimators is not None:
        need(len(cfg.estimators) > 0, "estimators", "need at least one estimator")
        for e in cfg.estimators:
            try:
                EstimatorKind.parse(e)
            except ValueError as exc:
                raise ConfigError("estimators", str(exc)) from None
        if cfg.command in ("smile", "calibrate", "extract-xi"):
            need(len(cfg.estimators) == 1, "estimators", f"{cfg.command} takes a single estimator")
    if cfg.strikes:
        need(not cfg.labels or len(cfg.labels) == len(cfg.strikes), "labels", "must match strikes in length")
        need(not cfg.targets or len(cfg.targets) == len(cfg.strikes), "targets", "must match strikes in length")
    elif cfg.command == "benchmark":
        need(cfg.rho in (-0.9, 0.0), "strikes", "required unless rho is -0.9 or 0 (reference strikes)")
    return cfg


def parse_config(command: str, config_file: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Build a validated :class:`RunConfig`. Overrides win over the file.

    Raises
    ------
    ConfigError
        For malformed JSON, unknown keys or out-of-range values.
    """
    values: dict[str, Any] = {}
    if config_file is not None:
        try:
            text = Path(config_file).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("config", f"cannot read {config_file}: {exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"malformed JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        values.update(data)
    values.update(overrides or {})
    values["command"] = command
    kw = {}
    for name, value in values.items():
        key = name.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(name, "unknown key")
        kw[key] = _coerce(key, value)
    return validate(RunConfig(**kw))


def parse_overrides(tokens: list[str]) -> dict[str, Any]:
    """``['--eta=2', '--rho', '0']`` -> ``{'eta': 2, 'rho': 0}``."""
    out: dict[str, Any] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(tok, "expected --key=value")
        body = tok[2:]
        if "=" in body:
            key, raw = body.split("=", 1)
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(body, "missing value")
            key, raw = body, tokens[i + 1]
            i += 1
        out[key.replace("-", "_")] = _parse_flag_value(raw)
        i += 1
    return out
