"""Synchronous consensus-based optimization update and run loop.

One step moves every particle toward the Gibbs consensus point of the
pre-update ensemble,

    x^{i,l}_{n+1} = x^{i,l}_n - (gamma + eta_n^l) (x^{i,l}_n - xbar^{*,l}_n),

where the noise ``eta_n^l`` is shared by all particles.  That sharing is
what makes pairwise differences evolve by the scalar factor
``1 - gamma - eta_n^l`` independently of the objective.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .ensemble import Ensemble, consensus_from_values, diameters, spreads
from .exceptions import CBOError, ObjectiveEvaluationError, ParameterError, UsageError
from .noise import NoiseScheme, NoiseStream, eta_block

__all__ = [
    "RunConfig",
    "RunTrace",
    "RunResult",
    "apply_update",
    "step",
    "run",
    "run_batch",
    "simulate_paths",
    "replay",
    "replay_check",
]

# Replicas are advanced in fixed-size groups so the floating-point work done
# for a replica never depends on how many workers share the batch.
CHUNK = 32
_NOISE_BLOCK = 256


@dataclass(frozen=True)
class RunConfig:
    beta: float
    scheme: NoiseScheme
    max_steps: int = 10_000
    consensus_tol: float = 1e-8
    record_noise: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ParameterError(f"beta must be positive and finite, got {self.beta!r}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ParameterError(f"max_steps must be a positive integer, got {self.max_steps!r}")
        if not (self.consensus_tol > 0):
            raise ParameterError(f"consensus_tol must be positive, got {self.consensus_tol!r}")


@dataclass(eq=False)
class RunTrace:
    """Per-step diagnostics; row ``k`` describes the ensemble at step ``k``.

    ``noise[k]`` holds the draws ``eta_k`` used to go from step ``k`` to
    ``k + 1`` (so it has one row fewer than the other arrays).
    """

    consensus: np.ndarray
    mean: np.ndarray
    diameter: np.ndarray
    spread: np.ndarray
    noise: Optional[np.ndarray] = None

    @property
    def steps(self) -> np.ndarray:
        return np.arange(len(self.diameter))


@dataclass(eq=False)
class RunResult:
    final: Ensemble
    consensus_reached: bool
    steps_taken: int
    limit_point: np.ndarray
    trace: Optional[RunTrace]
    replica: int = 0


def apply_update(positions, consensus, gamma: float, eta) -> np.ndarray:
    """Deterministic part of a step: ``X - (gamma + eta) (X - consensus)``.

    Shapes: ``positions (..., N, d)``, ``consensus (..., d)``, ``eta (..., d)``.
    """
    positions = np.asarray(positions, dtype=float)
    factor = gamma + np.asarray(eta, dtype=float)
    return positions - factor[..., None, :] * (positions - np.asarray(consensus)[..., None, :])


def _consensus(positions, objective, beta):
    # Overflow surfaces as an ObjectiveEvaluationError, not a numpy warning.
    with np.errstate(over="ignore", invalid="ignore"):
        values = objective(positions)
    return consensus_from_values(positions, values, beta)[0]


def step(ensemble: Ensemble, objective, config: RunConfig, stream: NoiseStream,
         eta=None) -> Ensemble:
    """Advance ``ensemble`` by one synchronous step.

    The noise for step ``ensemble.step`` is drawn from ``stream`` unless an
    explicit vector ``eta`` of length ``d`` is supplied.
    """
    x = ensemble.positions
    if eta is None:
        eta = eta_block(config.scheme, stream, ensemble.step, 1, ensemble.dim)[0]
    center = _consensus(x, objective, config.beta)
    return Ensemble(apply_update(x, center, config.scheme.gamma, eta), ensemble.step + 1)


class _Buffer:
    """Growable ``(steps, R, ...)`` array filled with NaN for stopped replicas."""

    def __init__(self, tail):
        self.tail = tail
        self.data = np.full((64,) + tail, np.nan)

    def put(self, n, idx, values):
        if n >= self.data.shape[0]:
            grown = np.full((2 * self.data.shape[0],) + self.tail, np.nan)
            grown[: self.data.shape[0]] = self.data
            self.data = grown
        self.data[n, idx] = values


def _run_group(initial, objective, config: RunConfig, replicas, keep_trace):
    r, n_part, d = initial.shape
    gamma = config.scheme.gamma
    x = np.array(initial, dtype=float)
    streams = [NoiseStream(config.seed, rep) for rep in replicas]
    steps_taken = np.zeros(r, dtype=np.int64)
    reached = np.zeros(r, dtype=bool)
    active = np.ones(r, dtype=bool)
    noise_buf = np.zeros((r, _NOISE_BLOCK, d))
    need_noise = config.scheme.zeta != 0.0
    record_noise = keep_trace and config.record_noise
    if keep_trace:
        bufs = {k: _Buffer((r, d)) for k in ("consensus", "mean")}
        bufs.update({k: _Buffer((r,)) for k in ("diameter", "spread")})
        if record_noise:
            bufs["noise"] = _Buffer((r, d))

    n = 0
    while True:
        idx = np.flatnonzero(active)
        xa = x[idx]
        try:
            center = _consensus(xa, objective, config.beta)
        except ObjectiveEvaluationError as exc:
            rep = None if exc.replica is None else replicas[idx[exc.replica]]
            raise ObjectiveEvaluationError(
                f"step {n}: non-finite objective value at particle {exc.particle}"
                + (f" of replica {rep}" if rep is not None else ""),
                particle=exc.particle, replica=rep, step=n,
            ) from exc
        diam = diameters(xa)
        if keep_trace:
            bufs["consensus"].put(n, idx, center)
            bufs["mean"].put(n, idx, xa.mean(axis=-2))
            bufs["diameter"].put(n, idx, diam)
            bufs["spread"].put(n, idx, spreads(xa))
        done = diam <= config.consensus_tol
        reached[idx[done]] = True
        if n >= config.max_steps:
            done[:] = True
        steps_taken[idx[done]] = n
        active[idx[done]] = False
        keep = ~done
        if not np.any(keep):
            break
        idx, xa, center = idx[keep], xa[keep], center[keep]
        slot = n % _NOISE_BLOCK
        if need_noise and slot == 0:
            for k in idx:
                noise_buf[k] = eta_block(config.scheme, streams[k], n, _NOISE_BLOCK, d)
        eta = noise_buf[idx, slot]
        if record_noise:
            bufs["noise"].put(n, idx, eta)
        x[idx] = apply_update(xa, center, gamma, eta)
        n += 1

    results = []
    for k, rep in enumerate(replicas):
        t = int(steps_taken[k])
        trace = None
        if keep_trace:
            trace = RunTrace(
                consensus=bufs["consensus"].data[: t + 1, k].copy(),
                mean=bufs["mean"].data[: t + 1, k].copy(),
                diameter=bufs["diameter"].data[: t + 1, k].copy(),
                spread=bufs["spread"].data[: t + 1, k].copy(),
                noise=bufs["noise"].data[:t, k].copy() if record_noise else None,
            )
        final = Ensemble(x[k], t)
        results.append(RunResult(final, bool(reached[k]), t, x[k].mean(axis=0), trace, int(rep)))
    return results


def run_batch(initial, objective, config: RunConfig, replicas: Optional[Sequence[int]] = None,
              workers: int = 1, keep_trace: bool = True) -> List[RunResult]:
    """Run independent replicas from stacked initial ensembles ``(R, N, d)``.

    Replica ``k`` uses the noise stream ``(config.seed, replicas[k])``.  The
    output is bitwise identical for every value of ``workers``.
    """
    initial = np.asarray(initial, dtype=float)
    if initial.ndim != 3:
        raise ParameterError(f"initial must have shape (R, N, d), got {initial.shape}")
    if not np.all(np.isfinite(initial)):
        raise ParameterError("initial positions must be finite")
    if replicas is None:
        replicas = range(initial.shape[0])
    replicas = [int(r) for r in replicas]
    if len(replicas) != initial.shape[0]:
        raise ParameterError("one replica index per initial ensemble is required")
    chunks = [(initial[s:s + CHUNK], replicas[s:s + CHUNK])
              for s in range(0, len(replicas), CHUNK)]

    def work(chunk):
        return _run_group(chunk[0], objective, config, chunk[1], keep_trace)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return [res for part in parts for res in part]


def run(initial: Ensemble, objective, config: RunConfig, replica: int = 0) -> RunResult:
    """Iterate :func:`step` until the diameter drops to ``consensus_tol``
    or ``max_steps`` steps have been taken."""
    if not isinstance(initial, Ensemble):
        initial = Ensemble(initial)
    if initial.step != 0:
        raise UsageError("run() starts from step 0; pass an ensemble with step == 0")
    return run_batch(initial.positions[None], objective, config, [replica])[0]


def simulate_paths(initial, objective, beta: float, scheme: NoiseScheme, steps: int,
                   seed: int, replicas: Optional[Sequence[int]] = None) -> np.ndarray:
    """Fixed-horizon batch simulation without stopping.

    Returns all positions, shape ``(R, steps + 1, N, d)``.
    """
    x = np.array(initial, dtype=float)
    r, _, d = x.shape
    if replicas is None:
        replicas = range(r)
    eta = np.stack([eta_block(scheme, NoiseStream(seed, rep), 0, steps, d) for rep in replicas])
    out = np.empty((r, steps + 1) + x.shape[1:])
    out[:, 0] = x
    for n in range(steps):
        center = _consensus(x, objective, beta)
        x = apply_update(x, center, scheme.gamma, eta[:, n])
        out[:, n + 1] = x
    return out


def replay(initial: Ensemble, objective, config: RunConfig, noise) -> np.ndarray:
    """Re-run a trajectory from recorded noise; returns positions ``(T + 1, N, d)``."""
    noise = np.asarray(noise, dtype=float)
    x = np.array(initial.positions)[None]
    out = np.empty((noise.shape[0] + 1,) + initial.positions.shape)
    out[0] = x[0]
    for n in range(noise.shape[0]):
        center = _consensus(x, objective, config.beta)
        x = apply_update(x, center, config.scheme.gamma, noise[n][None])
        out[n + 1] = x[0]
    return out


def replay_check(trace: RunTrace, initial: Ensemble, objective, config: RunConfig) -> float:
    """Largest deviation between replayed pairwise differences and the product form

        x^{i,l}_n - x^{j,l}_n = (x^{i,l}_0 - x^{j,l}_0) prod_{m<n} (1 - gamma - eta_m^l).
    """
    if trace.noise is None:
        raise UsageError("replay_check needs a trace recorded with record_noise=True")
    if initial.n_particles < 2:
        return 0.0
    path = replay(initial, objective, config, trace.noise)
    sim = path[:, :, None, :] - path[:, None, :, :]
    factors = np.ones((len(path), initial.dim))
    factors[1:] = np.cumprod(1.0 - config.scheme.gamma - trace.noise, axis=0)
    closed = sim[0][None] * factors[:, None, None, :]
    return float(np.max(np.abs(sim - closed)))


def check_finite_run(result: RunResult):
    if not np.all(np.isfinite(result.final.positions)):
        raise CBOError(f"replica {result.replica} diverged to non-finite positions")
