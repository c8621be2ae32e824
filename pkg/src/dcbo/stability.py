"""Consensus conditions, per-model stability regions and Monte-Carlo checks.

The closed-form part evaluates, for a scheme ``(gamma, zeta)``,

* consensus in mean:  ``|1 - gamma| < 1``
* L2 / a.s. consensus: ``(1 - gamma)^2 + zeta^2 < 1``, equivalently
  ``2 gamma - gamma^2 - zeta^2 > 0``

plus the model-specific rewrites for Models A, B and C.  The Monte-Carlo
part measures the same quantities on simulated two-particle ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import simulate_paths
from .noise import (DOMAIN_INITIAL, NoiseScheme, NoiseStream, SchemeKind, decay_rate,
                    eta_block, l2_factor, make_scheme)
from .objectives import builtin

__all__ = [
    "ModelCondition",
    "StabilityReport",
    "check_stability",
    "stability_boundary_modelA",
    "check_modelB_unconditional",
    "MomentTable",
    "moment_table",
    "FactorEstimate",
    "contraction_factor",
    "boundary_crossing",
    "modelA_factor_sweep",
    "SllnResult",
    "slln_statistic",
]

_EPS = 4.0 * np.finfo(float).eps


@dataclass(frozen=True)
class ModelCondition:
    text: str
    holds: bool
    lhs: float
    rhs: float


@dataclass(frozen=True)
class StabilityReport:
    mean_consensus: bool
    l2_consensus: bool
    rate: float
    on_boundary: bool
    model_condition: Optional[ModelCondition] = None


def stability_boundary_modelA(lam: float, sigma: float) -> float:
    """Largest admissible step ``(2 lambda - sigma^2) / lambda^2`` for Model A (0 if empty)."""
    if lam <= sigma * sigma / 2.0:
        return 0.0
    return (2.0 * lam - sigma * sigma) / (lam * lam)


def check_modelB_unconditional(lam: float, sigma: float) -> bool:
    """Sufficient condition ``lambda >= sigma^2 / 2`` for Model B stability at every h > 0."""
    return lam >= sigma * sigma / 2.0


def _model_condition(scheme: NoiseScheme) -> Optional[ModelCondition]:
    p = scheme.params
    if scheme.kind is SchemeKind.MODEL_A:
        h_max = stability_boundary_modelA(p.lam, p.sigma)
        holds = p.lam > p.sigma ** 2 / 2.0 and p.h < h_max
        return ModelCondition("lambda > sigma^2/2 and h < (2 lambda - sigma^2)/lambda^2",
                              holds, p.h, h_max)
    if scheme.kind is SchemeKind.MODEL_B:
        lhs = (1.0 + p.sigma ** 2 * p.h) * math.exp(-2.0 * p.lam * p.h)
        return ModelCondition("(1 + sigma^2 h) exp(-2 lambda h) < 1", lhs < 1.0, lhs, 1.0)
    if scheme.kind is SchemeKind.MODEL_C:
        rhs = p.sigma ** 2 / 2.0
        return ModelCondition("lambda > sigma^2/2 (any h > 0)", p.lam > rhs, p.lam, rhs)
    return None


def check_stability(scheme: NoiseScheme) -> StabilityReport:
    """Evaluate the consensus conditions for ``scheme``.

    Conditions are strict; a rate within a few ulps of 0 is reported as
    ``on_boundary`` and not stable.
    """
    rate = decay_rate(scheme)
    on_boundary = abs(rate) <= _EPS
    return StabilityReport(
        mean_consensus=abs(1.0 - scheme.gamma) < 1.0,
        l2_consensus=rate > _EPS,
        rate=rate,
        on_boundary=on_boundary,
        model_condition=_model_condition(scheme),
    )


# -- Monte Carlo ------------------------------------------------------------

def _pair_paths(scheme, replicas, steps, seed, beta, boxes):
    """Two-particle, one-dimensional runs; returns positions ``(R, steps+1, 2)``."""
    objective = builtin("sphere_plus_one", 1)
    lo = np.array([b[0] for b in boxes], dtype=float)
    hi = np.array([b[1] for b in boxes], dtype=float)
    init = np.empty((replicas, 2, 1))
    for r in range(replicas):
        u = NoiseStream(seed, r).generator(DOMAIN_INITIAL).random(2)
        init[r, :, 0] = lo + (hi - lo) * u
    return simulate_paths(init, objective, beta, scheme, steps, seed)[..., 0]


def _resolved(paths, rel_floor):
    """Mask of replicas/steps whose particle difference is above rounding noise."""
    diff = paths[..., 0] - paths[..., 1]
    scale = np.maximum(np.abs(paths).max(axis=-1), np.finfo(float).tiny)
    return diff, np.abs(diff) > rel_floor * scale


def _chained_ratios(diff, ok, min_samples):
    """Per-step mean and standard error of ``diff_{m+1}^2 / diff_m^2``.

    The ratio at step m equals ``(1 - gamma - eta_m)^2`` and is independent
    of ``diff_m``, so dropping replicas whose ``diff_m`` has collapsed to
    rounding level does not bias it.
    """
    steps = diff.shape[1] - 1
    mean = np.full(steps, np.nan)
    se = np.full(steps, np.nan)
    count = np.zeros(steps, dtype=int)
    for m in range(steps):
        sel = ok[:, m]
        count[m] = int(sel.sum())
        if count[m] < min_samples:
            continue
        ratio = (diff[sel, m + 1] / diff[sel, m]) ** 2
        mean[m] = ratio.mean()
        se[m] = ratio.std(ddof=1) / math.sqrt(count[m])
    return mean, se, count


@dataclass(eq=False)
class MomentTable:
    """Moments of the pair difference ``x^1_n - x^2_n`` against their theory values.

    ``mean_diff2`` is the plain replica average; ``chained_diff2`` is the
    product of per-step ratio averages, which stays accurate when the plain
    average is dominated by a handful of replicas (heavy-tailed products).
    """

    n: np.ndarray
    mean_diff: np.ndarray
    se_mean_diff: np.ndarray
    theory_mean_diff: np.ndarray
    mean_diff2: np.ndarray
    se_mean_diff2: np.ndarray
    chained_diff2: np.ndarray
    se_chained_diff2: np.ndarray
    theory_diff2: np.ndarray

    def zscores(self):
        z1 = (self.mean_diff - self.theory_mean_diff) / self.se_mean_diff
        z2 = (self.chained_diff2 - self.theory_diff2) / self.se_chained_diff2
        return z1, z2

    def columns(self) -> dict:
        return {
            "n": self.n,
            "empirical_E_diff": self.mean_diff,
            "stderr_E_diff": self.se_mean_diff,
            "theory_E_diff": self.theory_mean_diff,
            "empirical_E_diff2": self.mean_diff2,
            "stderr_E_diff2": self.se_mean_diff2,
            "chained_E_diff2": self.chained_diff2,
            "stderr_chained_E_diff2": self.se_chained_diff2,
            "theory_E_diff2": self.theory_diff2,
        }


def moment_table(scheme: NoiseScheme, replicas: int, steps: int = 30, seed: int = 0,
                 beta: float = 1.0, boxes=((0.0, 1.0), (1.0, 2.0)),
                 rel_floor: float = 1e-11) -> MomentTable:
    """First and second moments of the pair difference for ``n = 0..steps``.

    Particle ``k`` starts uniform on ``boxes[k]`` independently per replica,
    so the initial moments are known exactly.
    """
    paths = _pair_paths(scheme, replicas, steps, seed, beta, boxes)
    diff, ok = _resolved(paths, rel_floor)
    n = np.arange(steps + 1)
    sq = diff ** 2
    root = math.sqrt(replicas)
    (a1, b1), (a2, b2) = boxes
    m0 = (a1 + b1) / 2.0 - (a2 + b2) / 2.0
    m2 = (b1 - a1) ** 2 / 12.0 + (b2 - a2) ** 2 / 12.0 + m0 ** 2

    mean, se, _ = _chained_ratios(diff, ok, min_samples=2)
    log_chain = np.concatenate([[0.0], np.cumsum(np.log(mean))])
    rel_var = np.concatenate([[0.0], np.cumsum((se / mean) ** 2)])
    base = sq[:, 0].mean()
    base_rel_var = (sq[:, 0].std(ddof=1) / root / base) ** 2
    chained = base * np.exp(log_chain)
    chained_se = chained * np.sqrt(base_rel_var + rel_var)

    return MomentTable(
        n=n,
        mean_diff=diff.mean(axis=0),
        se_mean_diff=diff.std(axis=0, ddof=1) / root,
        theory_mean_diff=(1.0 - scheme.gamma) ** n * m0,
        mean_diff2=sq.mean(axis=0),
        se_mean_diff2=sq.std(axis=0, ddof=1) / root,
        chained_diff2=chained,
        se_chained_diff2=chained_se,
        theory_diff2=l2_factor(scheme) ** n * m2,
    )


@dataclass(frozen=True)
class FactorEstimate:
    value: float
    stderr: float
    first_step: int
    last_step: int


def contraction_factor(scheme: NoiseScheme, replicas: int = 2000, window=(5, 30),
                       seed: int = 0, beta: float = 1.0, rel_floor: float = 1e-11,
                       min_samples: int = 50) -> FactorEstimate:
    """Empirical one-step L2 contraction factor of the pair difference.

    The log second moment ``log E|x^1_n - x^2_n|^2`` is estimated for
    ``n`` in ``window`` by chaining per-step ratio averages, and the factor
    is ``exp(slope)`` of its least-squares line.  Steps after which too few
    replicas remain resolvable shorten the window; if nothing is left in it
    (very fast contraction) the earliest resolvable steps are used.
    """
    lo, hi = window
    paths = _pair_paths(scheme, replicas, hi, seed, beta, ((0.0, 1.0), (1.0, 2.0)))
    diff, ok = _resolved(paths, rel_floor)
    mean, se, count = _chained_ratios(diff, ok, min_samples)
    usable = np.isfinite(mean)
    last = hi
    bad = np.flatnonzero(~usable[lo:hi])
    if bad.size:
        last = lo + int(bad[0])
    first = lo
    if last - first < 2:
        bad = np.flatnonzero(~usable)
        first, last = 0, (int(bad[0]) if bad.size else hi)
    if last - first < 1:
        raise ValueError("no resolvable steps to estimate the contraction factor from")
    logs = np.log(mean[first:last])
    rel_se = se[first:last] / mean[first:last]
    # Points n = first..last of the chained log moment; slope weights on each ratio.
    n = np.arange(first, last + 1, dtype=float)
    c = (n - n.mean()) / np.sum((n - n.mean()) ** 2)
    a = np.cumsum(c[::-1])[::-1][1:]
    slope = float(np.dot(a, logs))
    slope_se = float(math.sqrt(np.dot(a * a, rel_se * rel_se)))
    value = math.exp(slope)
    return FactorEstimate(value, value * slope_se, first, last)


def boundary_crossing(h_values: Sequence[float], factors: Sequence[float]) -> float:
    """Linear interpolation of the first ``h`` where ``factor - 1`` changes sign."""
    h = np.asarray(h_values, dtype=float)
    f = np.asarray(factors, dtype=float) - 1.0
    for k in range(len(h) - 1):
        if f[k] == 0.0:
            return float(h[k])
        if f[k] * f[k + 1] < 0:
            return float(h[k] - f[k] * (h[k + 1] - h[k]) / (f[k + 1] - f[k]))
    return float("nan")


def modelA_factor_sweep(lam, sigma, h_values, replicas=2000, seed=0):
    return [contraction_factor(make_scheme("ModelA", lam, sigma, h), replicas, seed=seed)
            for h in h_values]


@dataclass(eq=False)
class SllnResult:
    y: np.ndarray
    stderr: np.ndarray
    target: float

    def fraction_within(self, k: float = 3.0) -> float:
        return float(np.mean(np.abs(self.y - self.target) <= k * self.stderr))


def slln_statistic(scheme: NoiseScheme, paths: int, n: int, seed: int = 0,
                   dim_index: int = 0) -> SllnResult:
    """Path averages ``Y_n = (1/n) sum_{m<n} (gamma + eta_m)(2 - gamma - eta_m)``.

    Path ``p`` reads the noise of replica ``p`` in coordinate ``dim_index``.
    """
    g = scheme.gamma
    y = np.empty(paths)
    se = np.empty(paths)
    for p in range(paths):
        eta = eta_block(scheme, NoiseStream(seed, p), 0, n, dim_index + 1)[:, dim_index]
        term = (g + eta) * (2.0 - g - eta)
        y[p] = term.mean()
        se[p] = term.std(ddof=1) / math.sqrt(n)
    return SllnResult(y, se, decay_rate(scheme))
