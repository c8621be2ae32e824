"""Noise schemes ``(gamma, zeta)`` and a counter-based noise stream.

The generalized update multiplies each coordinate deviation from the
consensus point by ``gamma + eta``, where ``eta`` is i.i.d. over
(step, dimension) with mean 0 and variance ``zeta**2``.  Models A, B and C
are particular ``(lambda, sigma, h)`` parameterizations of that family.

Draws are a pure function of ``(seed, replica, step, dimension)``: the
stream uses the Philox-4x64 block cipher keyed by ``(seed, replica)`` with
block counter ``(step // 4, dimension, 0, 0)`` and takes word
``step % 4`` of the block.  Runs are therefore reproducible regardless of
the order or thread in which draws are requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .exceptions import ParameterError

__all__ = [
    "SchemeKind",
    "ModelParams",
    "NoiseScheme",
    "NoiseStream",
    "make_scheme",
    "generic_scheme",
    "sample_eta",
    "eta_block",
    "decay_rate",
    "l2_factor",
]

_U64 = 1 << 64
_TWO_M53 = 2.0 ** -53

# Word 3 of the Philox counter separates the noise stream (0) from the
# auxiliary generators below.
DOMAIN_INITIAL = 1
DOMAIN_SAMPLES = 2


class SchemeKind(str, Enum):
    GENERIC = "GenericGaussian"
    MODEL_A = "ModelA"
    MODEL_B = "ModelB"
    MODEL_C = "ModelC"

    @classmethod
    def parse(cls, value) -> "SchemeKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if str(value).lower() in (kind.value.lower(), kind.name.lower()):
                return kind
        raise ParameterError(
            f"unknown scheme kind {value!r}; expected one of {[k.value for k in cls]}"
        )


@dataclass(frozen=True)
class ModelParams:
    lam: float
    sigma: float
    h: float


@dataclass(frozen=True)
class NoiseScheme:
    gamma: float
    zeta: float
    kind: SchemeKind = SchemeKind.GENERIC
    params: Optional[ModelParams] = None

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ParameterError(f"gamma must be finite, got {self.gamma!r}")
        if not (math.isfinite(self.zeta) and self.zeta >= 0):
            raise ParameterError(f"zeta must be finite and nonnegative, got {self.zeta!r}")
        if self.kind is not SchemeKind.GENERIC and self.params is None:
            raise ParameterError(f"{self.kind.value} requires (lambda, sigma, h)")

    def describe(self) -> dict:
        out = {"kind": self.kind.value, "gamma": self.gamma, "zeta": self.zeta}
        if self.params is not None:
            out.update(lambda_=self.params.lam, sigma=self.params.sigma, h=self.params.h)
        return out


def generic_scheme(gamma: float, zeta: float) -> NoiseScheme:
    """Gaussian noise scheme given directly by ``(gamma, zeta)``."""
    return NoiseScheme(float(gamma), float(zeta), SchemeKind.GENERIC, None)


def make_scheme(kind, lam: float, sigma: float, h: float) -> NoiseScheme:
    """Map the model parameters ``(lambda, sigma, h)`` to ``(gamma, zeta)``.

    ========  ===================  ====================================
    kind      gamma                zeta
    ========  ===================  ====================================
    ModelA    lambda h             sigma sqrt(h)
    ModelB    1 - exp(-lambda h)   exp(-lambda h) sigma sqrt(h)
    ModelC    1 - exp(-lambda h)   exp(-lambda h) sqrt(exp(sigma^2 h) - 1)
    ========  ===================  ====================================
    """
    kind = SchemeKind.parse(kind)
    lam, sigma, h = float(lam), float(sigma), float(h)
    if not (math.isfinite(h) and h > 0):
        raise ParameterError(f"h must be positive, got {h!r}")
    if not (math.isfinite(lam) and lam > 0):
        raise ParameterError(f"lambda must be positive, got {lam!r}")
    if not (math.isfinite(sigma) and sigma >= 0):
        raise ParameterError(f"sigma must be nonnegative, got {sigma!r}")
    params = ModelParams(lam, sigma, h)
    if kind is SchemeKind.MODEL_A:
        return NoiseScheme(lam * h, sigma * math.sqrt(h), kind, params)
    if kind is SchemeKind.MODEL_B:
        decay = math.exp(-lam * h)
        return NoiseScheme(-math.expm1(-lam * h), decay * sigma * math.sqrt(h), kind, params)
    if kind is SchemeKind.MODEL_C:
        decay = math.exp(-lam * h)
        return NoiseScheme(-math.expm1(-lam * h),
                           decay * math.sqrt(math.expm1(sigma * sigma * h)), kind, params)
    raise ParameterError("GenericGaussian schemes are built with generic_scheme(gamma, zeta)")


def l2_factor(scheme: NoiseScheme) -> float:
    """One-step second-moment multiplier ``(1 - gamma)^2 + zeta^2``."""
    return (1.0 - scheme.gamma) ** 2 + scheme.zeta ** 2


def decay_rate(scheme: NoiseScheme) -> float:
    """Almost-sure contraction exponent ``2 gamma - gamma^2 - zeta^2``."""
    g, z = scheme.gamma, scheme.zeta
    return 2.0 * g - g * g - z * z


# -- counter-based stream ---------------------------------------------------

@dataclass(frozen=True)
class NoiseStream:
    seed: int
    replica: int = 0

    def __post_init__(self):
        for name in ("seed", "replica"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < _U64:
                raise ParameterError(f"{name} must be an integer in [0, 2**64), got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def _key(self) -> int:
        return self.seed + (self.replica << 64)

    def raw(self, n0: int, count: int, dim: int) -> np.ndarray:
        """Raw 64-bit words for steps ``n0 .. n0+count-1``, shape ``(count, dim)``."""
        out = np.empty((count, dim), dtype=np.uint64)
        if count == 0:
            return out
        block, skip = divmod(int(n0), 4)
        for l in range(dim):
            # numpy's Philox increments the counter before producing a block.
            start = (block + (l << 64) - 1) % (1 << 256)
            bitgen = Philox(key=self._key, counter=start)
            out[:, l] = bitgen.random_raw(skip + count)[skip:]
        return out

    def normals(self, n0: int, count: int, dim: int) -> np.ndarray:
        """Standard normal draws ``Z[n, l]`` via the inverse normal CDF."""
        u = ((self.raw(n0, count, dim) >> np.uint64(11)).astype(float) + 0.5) * _TWO_M53
        return ndtri(u)

    def generator(self, domain: int) -> Generator:
        """Auxiliary generator (initial data, Monte Carlo samples) disjoint from the noise."""
        return Generator(Philox(key=self._key, counter=(int(domain) << 192) - 1))


def eta_from_normals(scheme: NoiseScheme, z: np.ndarray) -> np.ndarray:
    """Map standard normals to the scheme's noise ``eta``."""
    z = np.asarray(z, dtype=float)
    if scheme.zeta == 0.0:
        return np.zeros_like(z)
    if scheme.kind is SchemeKind.MODEL_C:
        p = scheme.params
        decay = math.exp(-p.lam * p.h)
        return decay * np.expm1(-0.5 * p.sigma ** 2 * p.h + p.sigma * math.sqrt(p.h) * z)
    return scheme.zeta * z


def eta_block(scheme: NoiseScheme, stream: NoiseStream, n0: int, count: int,
              dim: int) -> np.ndarray:
    """Noise ``eta[n, l]`` for steps ``n0 .. n0+count-1``, shape ``(count, dim)``."""
    if scheme.zeta == 0.0:
        return np.zeros((count, dim))
    return eta_from_normals(scheme, stream.normals(n0, count, dim))


def sample_eta(scheme: NoiseScheme, stream: NoiseStream, n: int, l: int) -> float:
    """Single draw ``eta_n^l``; identical to the matching entry of :func:`eta_block`."""
    if scheme.zeta == 0.0:
        return 0.0
    block, word = divmod(int(n), 4)
    start = (block + (int(l) << 64) - 1) % (1 << 256)
    raw = Philox(key=stream._key, counter=start).random_raw(word + 1)[word:]
    z = ndtri(((raw >> np.uint64(11)).astype(float) + 0.5) * _TWO_M53)
    return float(eta_from_normals(scheme, z)[0])
