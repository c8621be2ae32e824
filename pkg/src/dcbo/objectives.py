"""Benchmark objectives carrying the metadata the error estimates need.

Every builtin is shifted so that its global minimum value is exactly 1,
which keeps ``min_value > 0`` as the error theorems require.  Objectives
are vectorized: they accept an array of shape ``(..., d)`` and return an
array of shape ``(...)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .exceptions import MetadataError, ParameterError

__all__ = [
    "AssumptionFlags",
    "Objective",
    "MetadataReport",
    "BUILTIN_NAMES",
    "builtin",
    "polynomial",
    "constant",
    "fd_hessian",
    "validate_metadata",
]


@dataclass(frozen=True)
class AssumptionFlags:
    c2: bool
    unique_min: bool
    positive_min: bool


@dataclass(frozen=True, eq=False)
class Objective:
    """Vectorized objective ``R^d -> R`` with optional metadata.

    ``hessian_box`` records where ``hessian_bound`` is valid; ``None`` means
    the bound holds on all of ``R^d``.  ``spec`` is a plain dict that is
    enough to rebuild the objective (used by the CLI for persistence).
    """

    name: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    minimizer: Optional[np.ndarray] = None
    min_value: Optional[float] = None
    hessian_bound: Optional[float] = None
    flags: AssumptionFlags = AssumptionFlags(False, False, False)
    hessian_box: Optional[tuple] = None
    spec: dict = field(default_factory=dict)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise ValueError(
                f"{self.name}: expected trailing dimension {self.dim}, got shape {x.shape}"
            )
        out = self.func(x)
        if x.ndim == 1:
            return float(out)
        return out

    @property
    def has_error_metadata(self) -> bool:
        return self.min_value is not None and self.hessian_bound is not None


# -- builtins ---------------------------------------------------------------

def _sphere(x):
    return np.sum(x * x, axis=-1) + 1.0


def _rastrigin(x):
    d = x.shape[-1]
    return 10.0 * d + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x), axis=-1) + 1.0


def _ackley(x):
    r = np.sqrt(np.mean(x * x, axis=-1))
    c = np.mean(np.cos(2.0 * np.pi * x), axis=-1)
    return -20.0 * np.exp(-0.2 * r) - np.exp(c) + 20.0 + math.e + 1.0


def _quadratic_well(a, m):
    def f(x):
        y = x - m
        return a * np.sum(y * y, axis=-1) + 1.0
    return f


BUILTIN_NAMES = ("sphere_plus_one", "rastrigin_shifted", "ackley_shifted", "quadratic_well")

# Documented search box of the multimodal builtins.
RASTRIGIN_BOX = (-5.12, 5.12)
ACKLEY_BOX = (-32.768, 32.768)


def builtin(name: str, dim: int, a: float = 2.0, m: float = 0.5) -> Objective:
    """Return builtin objective ``name`` in dimension ``dim``.

    ``a`` and ``m`` only affect ``quadratic_well`` (curvature and centre).
    """
    if int(dim) != dim or dim < 1:
        raise ParameterError(f"dim must be a positive integer, got {dim!r}")
    dim = int(dim)
    zero = np.zeros(dim)
    ok = AssumptionFlags(c2=True, unique_min=True, positive_min=True)
    spec = {"objective": name, "dim": dim}
    if name == "sphere_plus_one":
        return Objective(name, dim, _sphere, zero, 1.0, 2.0, ok, None, spec)
    if name == "quadratic_well":
        if a <= 0:
            raise ParameterError("quadratic_well curvature a must be positive")
        spec.update(a=float(a), m=float(m))
        return Objective(name, dim, _quadratic_well(float(a), float(m)),
                         np.full(dim, float(m)), 1.0, 2.0 * a, ok, None, spec)
    if name == "rastrigin_shifted":
        # Hessian is diagonal with entries 2 + 40 pi^2 cos(2 pi x_l).
        return Objective(name, dim, _rastrigin, zero, 1.0, 2.0 + 40.0 * np.pi ** 2, ok,
                         (RASTRIGIN_BOX[0], RASTRIGIN_BOX[1]), spec)
    if name == "ackley_shifted":
        # Not C^2 at the minimizer; the Hessian blows up like 1/|x| there.
        flags = AssumptionFlags(c2=False, unique_min=True, positive_min=True)
        return Objective(name, dim, _ackley, zero, 1.0, None, flags,
                         (ACKLEY_BOX[0], ACKLEY_BOX[1]), spec)
    raise ParameterError(
        f"unknown objective {name!r}; expected one of {', '.join(BUILTIN_NAMES)}"
    )


def constant(value: float, dim: int) -> Objective:
    """Objective identically equal to ``value`` (every point is a minimizer)."""
    def f(x):
        return np.full(x.shape[:-1], float(value))
    flags = AssumptionFlags(c2=True, unique_min=False, positive_min=value > 0)
    return Objective("constant", dim, f, None, float(value), 0.0, flags, None,
                     {"objective": "constant", "dim": dim, "value": float(value)})


def polynomial(coefficients: Sequence[float], dim: int) -> Objective:
    """Separable polynomial ``L(x) = sum_l p(x_l)``.

    ``coefficients`` are in ascending order of powers.  Metadata is derived
    exactly from ``p``: the minimizer from the real critical points, and the
    Hessian bound ``2|c_2|`` when ``deg p <= 2`` (unbounded otherwise).
    """
    coef = np.trim_zeros(np.asarray(coefficients, dtype=float), "b")
    if coef.size == 0:
        coef = np.zeros(1)
    if not np.all(np.isfinite(coef)):
        raise ParameterError("polynomial coefficients must be finite")
    if int(dim) != dim or dim < 1:
        raise ParameterError(f"dim must be a positive integer, got {dim!r}")
    dim = int(dim)
    p = Polynomial(coef)

    def f(x):
        return np.sum(p(x), axis=-1)

    deg = coef.size - 1
    spec = {"objective": "polynomial", "dim": dim, "coefficients": [float(c) for c in coef]}
    minimizer = min_value = None
    unique = False
    if deg >= 2 and deg % 2 == 0 and coef[-1] > 0:
        crit = p.deriv().roots()
        crit = np.sort(crit[np.abs(crit.imag) < 1e-9].real)
        vals = p(crit)
        best = np.argmin(vals)
        ties = np.abs(vals - vals[best]) <= 1e-12 * max(1.0, abs(vals[best]))
        unique = int(np.count_nonzero(ties)) == 1
        minimizer = np.full(dim, crit[best])
        min_value = float(dim * vals[best])
    hess = 2.0 * abs(coef[2]) if deg == 2 else (0.0 if deg < 2 else None)
    flags = AssumptionFlags(c2=True, unique_min=unique,
                            positive_min=min_value is not None and min_value > 0)
    return Objective("polynomial", dim, f, minimizer, min_value, hess, flags, None, spec)


def from_spec(spec: dict) -> Objective:
    """Rebuild an objective from its ``spec`` dict."""
    kind = spec["objective"]
    if kind == "polynomial":
        return polynomial(spec["coefficients"], spec["dim"])
    if kind == "constant":
        return constant(spec["value"], spec["dim"])
    extra = {k: spec[k] for k in ("a", "m") if k in spec}
    return builtin(kind, spec["dim"], **extra)


# -- metadata validation ----------------------------------------------------

def fd_hessian(objective: Objective, points, step: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessians at ``points`` of shape ``(M, d)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    m, d = pts.shape
    eye = np.eye(d) * step
    f0 = objective(pts)
    hess = np.empty((m, d, d))
    for i in range(d):
        fp = objective(pts + eye[i])
        fm = objective(pts - eye[i])
        hess[:, i, i] = (fp - 2.0 * f0 + fm) / step ** 2
        for j in range(i + 1, d):
            fpp = objective(pts + eye[i] + eye[j])
            fpm = objective(pts + eye[i] - eye[j])
            fmp = objective(pts - eye[i] + eye[j])
            fmm = objective(pts - eye[i] - eye[j])
            hess[:, i, j] = hess[:, j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step ** 2)
    return hess


def spectral_norms(hessians: np.ndarray) -> np.ndarray:
    return np.max(np.abs(np.linalg.eigvalsh(hessians)), axis=-1)


@dataclass(frozen=True)
class MetadataReport:
    trials: int
    min_found: float
    argmin_found: np.ndarray
    max_hessian_norm: Optional[float]
    hessian_points: int


def validate_metadata(objective: Objective, trials: int, box, seed: int = 0,
                      hessian_points: int = 256) -> MetadataReport:
    """Random-search check of ``min_value`` and of ``hessian_bound``.

    Raises :class:`MetadataError` naming the offending point when a sample
    beats ``min_value - 1e-9`` or a finite-difference Hessian exceeds
    ``hessian_bound * (1 + 1e-3)``.
    """
    if objective.min_value is None:
        raise MetadataError(f"{objective.name}: no min_value to validate")
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (objective.dim,)) for b in box)
    if objective.minimizer is not None:
        at_min = objective(objective.minimizer)
        if abs(at_min - objective.min_value) > 1e-10:
            raise MetadataError(
                f"{objective.name}: L(minimizer) = {at_min!r} != min_value {objective.min_value!r}",
                point=objective.minimizer,
            )
    rng = np.random.default_rng(seed)
    pts = lo + (hi - lo) * rng.random((trials, objective.dim))
    vals = objective(pts)
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise MetadataError(f"{objective.name}: non-finite value at {pts[bad]}", point=pts[bad])
    k = int(np.argmin(vals))
    if vals[k] < objective.min_value - 1e-9:
        raise MetadataError(
            f"{objective.name}: L({pts[k].tolist()}) = {vals[k]!r} < min_value {objective.min_value!r}",
            point=pts[k],
        )
    max_norm = None
    n_h = 0
    if objective.hessian_bound is not None:
        sub = pts[: min(trials, hessian_points)]
        norms = spectral_norms(fd_hessian(objective, sub))
        n_h = len(sub)
        j = int(np.argmax(norms))
        max_norm = float(norms[j])
        if max_norm > objective.hessian_bound * (1.0 + 1e-3):
            raise MetadataError(
                f"{objective.name}: Hessian norm {max_norm!r} at {sub[j].tolist()} "
                f"exceeds bound {objective.hessian_bound!r}",
                point=sub[j],
            )
    return MetadataReport(trials, float(vals[k]), pts[k], max_norm, n_h)
