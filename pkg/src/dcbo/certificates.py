"""Laplace-principle estimates and error-bound certificates.

Both error theorems share one sufficient condition on the initial data,

    (1 - eps) E[exp(-beta L(X_in))]
        >= K beta exp(-beta L_m) * sum_l E[max_i (x_0^{i,l} - xbar_0^l)^2],

    K = 2 C_L sqrt((1 + rho)(gamma^2 + zeta^2)) / (1 - exp(-(1 - rho))),
    rho = (1 - gamma)^2 + zeta^2.

Expectations are estimated by Monte Carlo.  Because ``L >= L_m``, every
exponential is evaluated as ``exp(-beta (L - L_m))``; the raw sides of the
inequality are recovered by multiplying with ``exp(-beta L_m)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate

from .dynamics import RunConfig, run_batch
from .exceptions import ParameterError, PreconditionError, UsageError
from .noise import DOMAIN_INITIAL, DOMAIN_SAMPLES, NoiseScheme, NoiseStream, SchemeKind, l2_factor
from .objectives import Objective

__all__ = [
    "InitialLaw",
    "Estimate",
    "LaplaceEstimate",
    "CertificateResult",
    "SupEstimate",
    "EmpiricalError",
    "sample_initial",
    "well_preparedness",
    "laplace_estimate",
    "laplace_quadrature",
    "rhs_constant",
    "rhs_constant_model",
    "support_sup",
    "check_theorem_3_2",
    "check_theorem_A1",
    "empirical_error",
]


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Uniform law on a box ``[lower, upper]`` or on a closed ball."""

    kind: str
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None

    @classmethod
    def box(cls, lower, upper, dim: Optional[int] = None) -> "InitialLaw":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if dim is not None:
            lo, hi = np.broadcast_to(lo, (dim,)).copy(), np.broadcast_to(hi, (dim,)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("box bounds must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi > lo)):
            raise ParameterError("box bounds must be finite with upper > lower")
        return cls("uniform_box", lower=lo, upper=hi)

    @classmethod
    def ball(cls, center, radius: float) -> "InitialLaw":
        c = np.atleast_1d(np.asarray(center, dtype=float))
        if not (math.isfinite(radius) and radius > 0):
            raise ParameterError("ball radius must be positive")
        return cls("uniform_ball", center=c, radius=float(radius))

    @property
    def dim(self) -> int:
        return len(self.lower if self.kind == "uniform_box" else self.center)

    def bounding_box(self):
        if self.kind == "uniform_box":
            return self.lower, self.upper
        return self.center - self.radius, self.center + self.radius

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform_box":
            return bool(np.all(x >= self.lower) and np.all(x <= self.upper))
        return bool(np.linalg.norm(x - self.center) <= self.radius)

    def density_at(self, x) -> float:
        if not self.contains(x):
            return 0.0
        if self.kind == "uniform_box":
            return float(1.0 / np.prod(self.upper - self.lower))
        d = self.dim
        volume = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius ** d
        return 1.0 / volume

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform_box":
            return self.lower + (self.upper - self.lower) * rng.random((size, self.dim))
        d = self.dim
        g = rng.standard_normal((size, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = self.radius * rng.random(size) ** (1.0 / d)
        return self.center + g * r[:, None]

    def describe(self) -> dict:
        if self.kind == "uniform_box":
            return {"kind": self.kind, "lower": self.lower.tolist(), "upper": self.upper.tolist()}
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


def sample_initial(law: InitialLaw, n_particles: int, seed: int, replica: int) -> np.ndarray:
    """I.i.d. initial ensemble ``(N, d)`` for ``replica``; same draws as the run engine uses."""
    return law.sample(NoiseStream(seed, replica).generator(DOMAIN_INITIAL), n_particles)


def _initial_stack(law, n_particles, replicas, seed):
    return np.stack([sample_initial(law, n_particles, seed, r) for r in range(replicas)])


def _spread_max(x):
    dev = x - x.mean(axis=-2, keepdims=True)
    return np.sum(np.max(dev * dev, axis=-2), axis=-1)


def well_preparedness(law: InitialLaw, n_particles: int, replicas: int, seed: int = 0) -> Estimate:
    """Monte-Carlo estimate of ``sum_l E[max_i (x_0^{i,l} - xbar_0^l)^2]``."""
    if replicas < 2:
        raise ParameterError("well_preparedness needs at least 2 replicas")
    stats = _spread_max(_initial_stack(law, n_particles, replicas, seed))
    return Estimate(float(stats.mean()), float(stats.std(ddof=1) / math.sqrt(replicas)))


@dataclass(frozen=True)
class LaplaceEstimate:
    value: float
    stderr: float
    ess: float

    @property
    def concentrated(self) -> bool:
        return self.ess < 10.0


def _law_samples(law, samples, seed):
    return law.sample(NoiseStream(seed, 0).generator(DOMAIN_SAMPLES), samples)


def log_mean_exp_neg(values, beta: float):
    """``log mean exp(-beta v)`` with max-shift; also returns the normalized weights."""
    shift = values.min()
    w = np.exp(-beta * (values - shift))
    return -beta * shift + math.log(w.mean()), w


def laplace_estimate(objective: Objective, law: InitialLaw, beta: float, samples: int,
                     seed: int = 0) -> LaplaceEstimate:
    """Monte-Carlo value of ``-(1/beta) log E exp(-beta L(X_in))``.

    Warns when the effective sample size of the Gibbs weights drops below 10.
    """
    if not (math.isfinite(beta) and beta > 0):
        raise ParameterError(f"beta must be positive, got {beta!r}")
    values = objective(_law_samples(law, samples, seed))
    log_mean, w = log_mean_exp_neg(values, beta)
    mean_w = w.mean()
    ess = float(w.sum() ** 2 / np.dot(w, w))
    se = float(w.std(ddof=1) / math.sqrt(samples) / mean_w / beta)
    if ess < 10.0:
        warnings.warn(f"Gibbs weights concentrated on {ess:.1f} effective samples",
                      RuntimeWarning, stacklevel=2)
    return LaplaceEstimate(-log_mean / beta, se, ess)


def laplace_quadrature(objective: Objective, law: InitialLaw, beta: float) -> float:
    """Adaptive-quadrature value of ``-(1/beta) log E exp(-beta L(X_in))`` (d = 1, box laws)."""
    if objective.dim != 1 or law.kind != "uniform_box":
        raise UsageError("quadrature oracle supports one-dimensional box laws only")
    a, b = float(law.lower[0]), float(law.upper[0])
    xs = np.linspace(a, b, 2001)
    shift = float(np.min(objective(xs[:, None])))
    points = []
    if objective.minimizer is not None and a < objective.minimizer[0] < b:
        points = [float(objective.minimizer[0])]
        shift = min(shift, float(objective(objective.minimizer)))

    def integrand(x):
        return math.exp(-beta * (objective(np.array([x])) - shift))

    val, _ = integrate.quad(integrand, a, b, points=points or None, epsabs=0.0,
                            epsrel=1e-13, limit=500)
    return shift - math.log(val / (b - a)) / beta


def rhs_constant(scheme: NoiseScheme, hessian_bound: float) -> float:
    """``2 C_L sqrt((1 + rho)(gamma^2 + zeta^2)) / (1 - exp(-(1 - rho)))``."""
    rho = l2_factor(scheme)
    g, z = scheme.gamma, scheme.zeta
    return (2.0 * hessian_bound * math.sqrt((1.0 + rho) * (g * g + z * z))
            / -math.expm1(-(1.0 - rho)))


def rhs_constant_model(scheme: NoiseScheme, hessian_bound: float) -> float:
    """The same constant written directly in ``(lambda, sigma, h)`` for Models A/B/C."""
    p = scheme.params
    if p is None:
        raise UsageError("model rewrite needs a Model A/B/C scheme")
    lam, s2, h = p.lam, p.sigma ** 2, p.h
    if scheme.kind is SchemeKind.MODEL_A:
        root = math.sqrt(h * (s2 + lam * lam * h) * (2.0 + h * (s2 + lam * lam * h - 2.0 * lam)))
        rate = h * (2.0 * lam - lam * lam * h - s2)
    elif scheme.kind is SchemeKind.MODEL_B:
        e = math.exp(-lam * h)
        root = math.sqrt((1.0 + e * (-2.0 + e * (1.0 + s2 * h))) * (1.0 + e * e * (1.0 + s2 * h)))
        rate = 1.0 - (1.0 + s2 * h) * e * e
    else:
        e = math.exp(-lam * h)
        root = math.sqrt((1.0 + math.exp(h * (s2 - 2.0 * lam)))
                         * (1.0 + e * (e * math.exp(s2 * h) - 2.0)))
        rate = -math.expm1((s2 - 2.0 * lam) * h)
    return 2.0 * hessian_bound * root / -math.expm1(-rate)


@dataclass(frozen=True)
class CertificateResult:
    """Outcome of a sufficient-condition check.

    ``lhs``/``rhs`` are the raw sides (they underflow for ``beta L_m``
    beyond ~700); ``lhs_scaled``/``rhs_scaled`` are the same sides times
    ``exp(beta L_m)`` and decide ``holds``.
    """

    holds: bool
    lhs: float
    rhs: float
    epsilon: float
    bound_value: float
    lhs_scaled: float
    rhs_scaled: float
    well_preparedness: float
    well_preparedness_stderr: float
    sup_gap: Optional[float] = None
    sup_condition: Optional[bool] = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _require_metadata(objective: Objective):
    if objective.min_value is None or objective.hessian_bound is None:
        raise UsageError(f"{objective.name}: min_value and hessian_bound metadata are required")


def _require_stable(scheme: NoiseScheme):
    if not l2_factor(scheme) < 1.0:
        raise PreconditionError("(1 - gamma)^2 + zeta^2 < 1 is required")


def _check_epsilon(epsilon):
    if not 0.0 < epsilon < 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon!r}")


def _scaled_expectation(objective, law, beta, samples, seed):
    values = objective(_law_samples(law, samples, seed))
    return float(np.mean(np.exp(-beta * (values - objective.min_value))))


def check_theorem_3_2(objective: Objective, law: InitialLaw, scheme: NoiseScheme, beta: float,
                      epsilon: float, n_particles: int, replicas: int = 1000, seed: int = 0,
                      samples: int = 100_000) -> CertificateResult:
    """Evaluate the sufficient condition of the Laplace-based error bound.

    ``bound_value`` is the explicit part ``(d/2) log(beta) / beta`` of the
    guaranteed error; the O(1/beta) remainder is not materialized.
    """
    _require_metadata(objective)
    _require_stable(scheme)
    _check_epsilon(epsilon)
    wp = well_preparedness(law, n_particles, replicas, seed)
    expect = _scaled_expectation(objective, law, beta, samples, seed)
    lhs_s = (1.0 - epsilon) * expect
    rhs_s = rhs_constant(scheme, objective.hessian_bound) * beta * wp.value
    scale = math.exp(-beta * objective.min_value)
    return CertificateResult(
        holds=lhs_s >= rhs_s,
        lhs=lhs_s * scale,
        rhs=rhs_s * scale,
        epsilon=epsilon,
        bound_value=objective.dim / 2.0 * math.log(beta) / beta,
        lhs_scaled=lhs_s,
        rhs_scaled=rhs_s,
        well_preparedness=wp.value,
        well_preparedness_stderr=wp.stderr,
    )


@dataclass(frozen=True)
class SupEstimate:
    grid_max: float
    upper: float
    points: int
    rigorous: bool


def _fd_gradient(objective, pts, step):
    d = pts.shape[1]
    grad = np.empty_like(pts)
    for l in range(d):
        e = np.zeros(d)
        e[l] = step
        grad[:, l] = (objective(pts + e) - objective(pts - e)) / (2.0 * step)
    return grad


def support_sup(objective: Objective, law: InitialLaw, tol: float = 1e-9,
                max_points: int = 2_000_000) -> SupEstimate:
    """Upper bound on ``sup`` of the objective over the support of ``law``.

    The bounding box is gridded and refined until the Taylor padding
    ``|grad L(g)| r + C_L r^2 / 2`` (``r`` = half cell diagonal) drops to
    ``tol`` or the grid hits ``max_points``.
    """
    lo, hi = law.bounding_box()
    d = law.dim
    k = 9
    best = None
    while True:
        axes = [np.linspace(lo[l], hi[l], k) for l in range(d)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        r = 0.5 * float(np.linalg.norm((hi - lo) / (k - 1)))
        if law.kind == "uniform_ball":
            pts = pts[np.linalg.norm(pts - law.center, axis=1) <= law.radius + r]
        vals = objective(pts)
        grid_max = float(vals.max())
        if objective.hessian_bound is None:
            upper = grid_max
        else:
            step = 1e-6 * max(1.0, float(np.max(np.abs(hi - lo))))
            grad = np.linalg.norm(_fd_gradient(objective, pts, step), axis=1)
            upper = float(np.max(vals + grad * r + 0.5 * objective.hessian_bound * r * r))
        best = SupEstimate(grid_max, upper, len(pts), objective.hessian_bound is not None)
        if upper - grid_max <= tol or (2 * k - 1) ** d > max_points:
            return best
        k = 2 * k - 1


def check_theorem_A1(objective: Objective, law: InitialLaw, scheme: NoiseScheme, beta: float,
                     epsilon: float, delta: float, n_particles: int, replicas: int = 1000,
                     seed: int = 0, samples: int = 100_000,
                     variant: str = "sampled") -> CertificateResult:
    """Evaluate the hypotheses of the Laplace-free error bound.

    ``variant="sampled"`` uses the estimated well-preparedness statistic;
    ``variant="rectangle"`` replaces it by the squared diameter of the smallest
    box containing the support and uses ``sup L`` in place of the
    expectation (a condition that needs no sampling).
    ``bound_value = delta + |log eps| / beta``.
    """
    _require_metadata(objective)
    _require_stable(scheme)
    _check_epsilon(epsilon)
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta!r}")
    if objective.minimizer is None or not law.contains(objective.minimizer):
        raise PreconditionError("the support of the initial law must contain the minimizer")
    sup = support_sup(objective, law)
    gap = sup.upper - objective.min_value
    sup_ok = gap < delta
    const = rhs_constant(scheme, objective.hessian_bound)
    if variant == "sampled":
        wp = well_preparedness(law, n_particles, replicas, seed)
        lhs_s = (1.0 - epsilon) * _scaled_expectation(objective, law, beta, samples, seed)
        rhs_s = const * beta * wp.value
        wp_value, wp_se = wp.value, wp.stderr
    elif variant == "rectangle":
        lo, hi = law.bounding_box()
        diam2 = float(np.sum((hi - lo) ** 2))
        lhs_s = 1.0 - epsilon
        rhs_s = const * beta * math.exp(beta * gap) * diam2
        wp_value, wp_se = diam2, 0.0
    else:
        raise ParameterError(f"unknown variant {variant!r}")
    scale = math.exp(-beta * objective.min_value)
    return CertificateResult(
        holds=bool(sup_ok and lhs_s >= rhs_s),
        lhs=lhs_s * scale,
        rhs=rhs_s * scale,
        epsilon=epsilon,
        bound_value=delta + abs(math.log(epsilon)) / beta,
        lhs_scaled=lhs_s,
        rhs_scaled=rhs_s,
        well_preparedness=wp_value,
        well_preparedness_stderr=wp_se,
        sup_gap=gap,
        sup_condition=sup_ok,
    )


@dataclass(eq=False)
class EmpiricalError:
    min_L_at_limit: float
    bound_3_2: float
    bound_A1: Optional[float]
    failures: int
    replicas: int
    limit_values: np.ndarray

    @property
    def reliable(self) -> bool:
        return self.failures <= 0.1 * self.replicas

    def as_dict(self) -> dict:
        return {
            "min_L_at_limit": self.min_L_at_limit,
            "bound_3_2": self.bound_3_2,
            "bound_A1": self.bound_A1,
            "failures": self.failures,
            "replicas": self.replicas,
            "reliable": self.reliable,
        }


def empirical_error(objective: Objective, law: InitialLaw, scheme: NoiseScheme, beta: float,
                    n_particles: int, replicas: int, max_steps: int = 10_000,
                    consensus_tol: float = 1e-8, seed: int = 0,
                    epsilon: Optional[float] = None, delta: Optional[float] = None,
                    workers: int = 1) -> EmpiricalError:
    """Run ``replicas`` independent CBO runs and compare the best limit to the bounds.

    ``min_L_at_limit`` (minimum over replicas of ``L(limit_point)``) stands in
    for the essential infimum of ``L(X_inf)``.
    """
    _require_stable(scheme)
    if objective.min_value is None:
        raise UsageError(f"{objective.name}: min_value metadata is required")
    config = RunConfig(beta, scheme, max_steps, consensus_tol, False, seed)
    init = _initial_stack(law, n_particles, replicas, seed)
    results = run_batch(init, objective, config, workers=workers, keep_trace=False)
    limits = np.stack([r.limit_point for r in results])
    values = objective(limits)
    failures = sum(not r.consensus_reached for r in results)
    l_star = objective(objective.minimizer) if objective.minimizer is not None else objective.min_value
    bound_a1 = None
    if epsilon is not None and delta is not None:
        bound_a1 = objective.min_value + delta + abs(math.log(epsilon)) / beta
    return EmpiricalError(
        min_L_at_limit=float(values.min()),
        bound_3_2=float(l_star + objective.dim / 2.0 * math.log(beta) / beta),
        bound_A1=bound_a1,
        failures=int(failures),
        replicas=replicas,
        limit_values=values,
    )
