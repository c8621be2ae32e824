"""Particle ensembles and the Gibbs-weighted consensus point."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ObjectiveEvaluationError, ParameterError

__all__ = [
    "Ensemble",
    "ConsensusPoint",
    "EnsembleStats",
    "gibbs_weights",
    "gibbs_consensus",
    "ensemble_stats",
    "diameters",
    "spreads",
]


@dataclass(frozen=True, eq=False)
class Ensemble:
    """``N x d`` particle positions (one row per particle) at step ``step``."""

    positions: np.ndarray
    step: int = 0

    def __post_init__(self):
        x = np.array(self.positions, dtype=float, order="C")
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ParameterError(f"positions must be an N x d matrix, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("positions must be finite")
        if int(self.step) != self.step or self.step < 0:
            raise ParameterError(f"step must be a non-negative integer, got {self.step!r}")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "step", int(self.step))

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True, eq=False)
class ConsensusPoint:
    point: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    mean: np.ndarray
    diameter: float
    spread: float


def _check_values(values, replica=None):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        particle = int(idx[-1])
        rep = int(idx[0]) if values.ndim > 1 else replica
        raise ObjectiveEvaluationError(
            f"non-finite objective value {values[tuple(idx)]!r} at particle {particle}"
            + (f" of replica {rep}" if rep is not None else ""),
            particle=particle,
            replica=rep,
        )
    return values


def gibbs_weights(values, beta: float) -> np.ndarray:
    """Normalized weights ``exp(-beta L_j) / sum_k exp(-beta L_k)``.

    ``values`` holds objective values along the last axis.  The minimum is
    subtracted inside the exponent, so the largest unnormalized weight is
    exactly 1 and the sum never underflows.
    """
    if not (np.isfinite(beta) and beta > 0):
        raise ParameterError(f"beta must be positive and finite, got {beta!r}")
    values = _check_values(values)
    w = np.exp(-beta * (values - values.min(axis=-1, keepdims=True)))
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        raise ObjectiveEvaluationError("degenerate Gibbs weights")
    return w / total


def consensus_from_values(positions, values, beta: float):
    """Consensus points for stacked ensembles ``(..., N, d)`` with values ``(..., N)``.

    Returns ``(points, weights)`` with shapes ``(..., d)`` and ``(..., N)``.
    """
    positions = np.asarray(positions, dtype=float)
    w = gibbs_weights(values, beta)
    point = np.einsum("...n,...nd->...d", w, positions)
    # Rounding can push the average a hair outside the coordinate hull.
    point = np.clip(point, positions.min(axis=-2), positions.max(axis=-2))
    return point, w


def gibbs_consensus(ensemble: Ensemble, objective, beta: float) -> ConsensusPoint:
    """Gibbs-weighted average of the particles of ``ensemble``."""
    x = ensemble.positions
    point, w = consensus_from_values(x, objective(x), beta)
    return ConsensusPoint(point, w)


def diameters(positions) -> np.ndarray:
    """Maximum pairwise Euclidean distance for stacked ensembles ``(..., N, d)``."""
    x = np.asarray(positions, dtype=float)
    diff = x[..., :, None, :] - x[..., None, :, :]
    # Scale before squaring so tiny nonzero gaps do not underflow to 0.
    scale = np.max(np.abs(diff), axis=(-3, -2, -1))
    safe = np.where(scale > 0, scale, 1.0)
    diff = diff / safe[..., None, None, None]
    return safe * np.sqrt(np.max(np.einsum("...ijd,...ijd->...ij", diff, diff), axis=(-2, -1))) \
        * (scale > 0)


def spreads(positions) -> np.ndarray:
    """``(1/N) sum_i |x_i - xbar|^2`` for stacked ensembles, via pairwise differences.

    The pairwise form ``(1/2N^2) sum_ij |x_i - x_j|^2`` is exactly zero for
    identical particles, where subtracting a rounded mean need not be.
    """
    x = np.asarray(positions, dtype=float)
    diff = x[..., :, None, :] - x[..., None, :, :]
    n = x.shape[-2]
    return np.einsum("...ijd,...ijd->...", diff, diff) / (2.0 * n * n)


def ensemble_stats(ensemble: Ensemble) -> EnsembleStats:
    x = ensemble.positions
    return EnsembleStats(x.mean(axis=0), float(diameters(x)), float(spreads(x)))
