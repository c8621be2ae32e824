"""Flat ``key = value`` experiment configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
List values (box bounds, polynomial coefficients, sweep axes) are
comma-separated.  Every key is listed in ``FIELDS``; anything else is
rejected together with its line number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .certificates import InitialLaw
from .exceptions import CBOError, ConfigError
from .noise import NoiseScheme, SchemeKind, generic_scheme, make_scheme
from .objectives import BUILTIN_NAMES, Objective, builtin, polynomial
from .stability import check_stability, stability_boundary_modelA

__all__ = ["ExperimentConfig", "FIELDS", "TASKS", "parse_config", "parse_text", "render"]

TASKS = ("run", "stability", "moments", "laplace", "certify", "sweep")
SWEEP_AXES = ("beta", "h", "lambda", "sigma", "N")


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise ValueError("must lie in [0, 2**64)")
    return v


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


# key -> (attribute, converter)
FIELDS: Dict[str, Tuple[str, object]] = {
    "task": ("task", str),
    "objective": ("objective", str),
    "dim": ("dim", int),
    "a": ("a", float),
    "m": ("m", float),
    "coefficients": ("coefficients", _floats),
    "law": ("law", str),
    "lower": ("lower", _floats),
    "upper": ("upper", _floats),
    "center": ("center", _floats),
    "radius": ("radius", float),
    "model": ("model", str),
    "lambda": ("lam", float),
    "sigma": ("sigma", float),
    "h": ("h", float),
    "gamma": ("gamma", _optional_float),
    "zeta": ("zeta", _optional_float),
    "beta": ("beta", float),
    "betas": ("betas", _floats),
    "N": ("n_particles", int),
    "replicas": ("replicas", int),
    "max_steps": ("max_steps", int),
    "consensus_tol": ("consensus_tol", float),
    "seed": ("seed", _u64),
    "out": ("out", str),
    "record_noise": ("record_noise", _bool),
    "workers": ("workers", int),
    "steps": ("steps", int),
    "samples": ("samples", int),
    "epsilon": ("epsilon", float),
    "delta": ("delta", _optional_float),
    "variant": ("variant", str),
    "empirical": ("empirical", _bool),
    "grid_points": ("grid_points", int),
    "lambda_min": ("lambda_min", float),
    "lambda_max": ("lambda_max", float),
    "h_min": ("h_min", float),
    "h_max": ("h_max", float),
    "sweep_task": ("sweep_task", str),
    "sweep_beta": ("sweep_beta", _floats),
    "sweep_h": ("sweep_h", _floats),
    "sweep_lambda": ("sweep_lambda", _floats),
    "sweep_sigma": ("sweep_sigma", _floats),
    "sweep_N": ("sweep_N", _floats),
}
_KEY_OF = {attr: key for key, (attr, _) in FIELDS.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "run"
    objective: str = "sphere_plus_one"
    dim: int = 1
    a: float = 2.0
    m: float = 0.5
    coefficients: Tuple[float, ...] = ()
    law: str = "uniform_box"
    lower: Tuple[float, ...] = (-1.0,)
    upper: Tuple[float, ...] = (1.0,)
    center: Tuple[float, ...] = (0.0,)
    radius: float = 1.0
    model: str = "ModelC"
    lam: float = 1.0
    sigma: float = 1.0
    h: float = 0.1
    gamma: Optional[float] = None
    zeta: Optional[float] = None
    beta: float = 50.0
    betas: Tuple[float, ...] = ()
    n_particles: int = 50
    replicas: int = 1
    max_steps: int = 10_000
    consensus_tol: float = 1e-8
    seed: int = 0
    out: str = "out"
    record_noise: bool = False
    workers: int = 1
    steps: int = 30
    samples: int = 100_000
    epsilon: float = 0.5
    delta: Optional[float] = None
    variant: str = "sampled"
    empirical: bool = False
    grid_points: int = 50
    lambda_min: float = 0.5
    lambda_max: float = 2.0
    h_min: float = 0.02
    h_max: float = 3.0
    sweep_task: str = "run"
    sweep_beta: Tuple[float, ...] = ()
    sweep_h: Tuple[float, ...] = ()
    sweep_lambda: Tuple[float, ...] = ()
    sweep_sigma: Tuple[float, ...] = ()
    sweep_N: Tuple[float, ...] = ()
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    # -- derived objects ---------------------------------------------------

    def build_objective(self) -> Objective:
        if self.objective == "polynomial":
            return polynomial(self.coefficients, self.dim)
        return builtin(self.objective, self.dim, a=self.a, m=self.m)

    def build_scheme(self) -> NoiseScheme:
        kind = SchemeKind.parse(self.model)
        if kind is SchemeKind.GENERIC:
            return generic_scheme(self.gamma, self.zeta)
        return make_scheme(kind, self.lam, self.sigma, self.h)

    def build_law(self) -> InitialLaw:
        if self.law == "uniform_box":
            return InitialLaw.box(self.lower, self.upper, dim=self.dim)
        center = self.center * self.dim if len(self.center) == 1 else self.center
        return InitialLaw.ball(center, self.radius)

    def sweep_points(self) -> List[Dict[str, float]]:
        axes = [(name, getattr(self, "sweep_" + name)) for name in SWEEP_AXES]
        axes = [(n, v) for n, v in axes if v]
        points: List[Dict[str, float]] = [{}]
        for name, values in axes:
            points = [dict(p, **{name: v}) for p in points for v in values]
        return points

    def with_values(self, values: Dict[str, object]) -> "ExperimentConfig":
        """Copy with config-key overrides, re-validated."""
        raw = {k: _format(v) for k, v in values.items()}
        return _build(raw, base=self)

    def as_items(self) -> List[Tuple[str, str]]:
        return [(_KEY_OF[f.name], _format(getattr(self, f.name)))
                for f in fields(self) if f.name in _KEY_OF]


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_format(float(x)) for x in v)
    return str(v)


# Execution settings that cannot change any result; left out of rendered configs
# so artifacts match across output locations and thread counts.
_EXECUTION_KEYS = ("out", "workers")


def render(config: ExperimentConfig) -> str:
    """Config file text that parses back to ``config`` (up to ``out``/``workers``)."""
    return "".join(f"{k} = {v}\n" for k, v in config.as_items() if k not in _EXECUTION_KEYS)


def _convert(key: str, text: str, line: Optional[int]):
    if key not in FIELDS:
        raise ConfigError(f"unknown key {key!r}", field=key, line=line)
    attr, conv = FIELDS[key]
    try:
        return attr, conv(text.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text.strip()!r} ({exc})", field=key,
                          line=line) from None


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    def bad(key, message):
        raise ConfigError(f"{key}: {message}", field=key)

    if cfg.task not in TASKS:
        bad("task", f"must be one of {', '.join(TASKS)}")
    if cfg.dim < 1:
        bad("dim", "must be a positive integer")
    if cfg.objective != "polynomial" and cfg.objective not in BUILTIN_NAMES:
        bad("objective", f"must be polynomial or one of {', '.join(BUILTIN_NAMES)}")
    if cfg.objective == "polynomial" and not cfg.coefficients:
        bad("coefficients", "polynomial objectives need coefficients")
    if cfg.law not in ("uniform_box", "uniform_ball"):
        bad("law", "must be uniform_box or uniform_ball")
    for key, v in (("beta", cfg.beta),):
        if not (math.isfinite(v) and v > 0):
            bad(key, "must be positive")
    if any(not (math.isfinite(b) and b > 0) for b in cfg.betas):
        bad("betas", "every beta must be positive")
    for key, v, low in (("N", cfg.n_particles, 1), ("replicas", cfg.replicas, 1),
                        ("max_steps", cfg.max_steps, 1), ("workers", cfg.workers, 1),
                        ("steps", cfg.steps, 1), ("samples", cfg.samples, 2),
                        ("grid_points", cfg.grid_points, 2)):
        if v < low:
            bad(key, f"must be at least {low}")
    if not cfg.consensus_tol > 0:
        bad("consensus_tol", "must be positive")
    if not 0 < cfg.epsilon < 1:
        bad("epsilon", "must lie in (0, 1)")
    if cfg.delta is not None and not cfg.delta > 0:
        bad("delta", "must be positive")
    if cfg.variant not in ("sampled", "rectangle"):
        bad("variant", "must be sampled or rectangle")
    if cfg.sweep_task not in TASKS or cfg.sweep_task == "sweep":
        bad("sweep_task", "must name a non-sweep task")
    if not 0 < cfg.lambda_min < cfg.lambda_max:
        bad("lambda_min", "need 0 < lambda_min < lambda_max")
    if not 0 < cfg.h_min < cfg.h_max:
        bad("h_min", "need 0 < h_min < h_max")
    if any(n < 1 or n != int(n) for n in cfg.sweep_N):
        bad("sweep_N", "particle counts must be positive integers")
    if cfg.task == "sweep" and not cfg.sweep_points()[0]:
        bad("sweep_beta", "a sweep needs at least one sweep_* axis")

    # Semantic checks delegate to the modules that consume the values.
    try:
        kind = SchemeKind.parse(cfg.model)
    except CBOError as exc:
        bad("model", str(exc))
    if kind is SchemeKind.GENERIC and (cfg.gamma is None or cfg.zeta is None):
        bad("gamma", "GenericGaussian needs gamma and zeta")
    for key, build in (("objective", cfg.build_objective), ("law", cfg.build_law)):
        try:
            build()
        except CBOError as exc:
            bad(key, str(exc))
    try:
        scheme = cfg.build_scheme()
    except CBOError as exc:
        text = str(exc)
        key = next((k for k in ("h", "lambda", "sigma", "gamma", "zeta") if text.startswith(k)),
                   "model")
        raise ConfigError(text, field=key) from None
    if cfg.build_law().dim != cfg.dim:
        bad("law", f"support dimension {cfg.build_law().dim} does not match dim={cfg.dim}")

    notes = []
    report = check_stability(scheme)
    if not report.l2_consensus:
        msg = f"scheme is not L2-stable: (1-gamma)^2 + zeta^2 = {1.0 - report.rate!r} >= 1"
        if kind is SchemeKind.MODEL_A:
            msg += f" (Model A needs h < {stability_boundary_modelA(cfg.lam, cfg.sigma)!r})"
        notes.append(msg)
    return replace(cfg, warnings=tuple(notes))


def _build(raw: Dict[str, str], base: Optional[ExperimentConfig] = None,
           lines: Optional[Dict[str, int]] = None) -> ExperimentConfig:
    lines = lines or {}
    values = {}
    for key, text in raw.items():
        attr, v = _convert(key, text, lines.get(key))
        values[attr] = v
    cfg = replace(base or ExperimentConfig(), **values)
    try:
        return _validate(cfg)
    except ConfigError as exc:
        if exc.line is None and exc.field in lines:
            exc.line = lines[exc.field]
        raise


def parse_text(text: str, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    """Parse config text; ``overrides`` (e.g. from command-line flags) win over file values."""
    raw: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {body!r}", line=lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", field=key, line=lineno)
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", field=key, line=lineno)
        raw[key] = value
        lines[key] = lineno
    for key, value in (overrides or {}).items():
        raw[key] = value
        lines.pop(key, None)
    return _build(raw, lines=lines)


def parse_config(path: Optional[str] = None,
                 overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    if path is None:
        return parse_text("", overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}", field="config")
    return parse_text(p.read_text(encoding="utf-8"), overrides)
