"""Boundary diffusion coefficients as functions of arclength.

Three kinds are supported: a constant, the smooth oscillatory field
``1 / (2 + cos(2 pi s / eps))`` and piecewise constants on a uniform cell
partition (the random field is a piecewise constant whose values come from
a splitmix64 stream).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

CONSTANT = "constant"
SMOOTH = "smooth"
PIECEWISE = "random-piecewise"

RANDOM_LOW = 0.1
RANDOM_HIGH = 1.0

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# 3-point Gauss-Legendre on [0, 1]
_GAUSS3_X = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS3_W = np.array([5.0, 8.0, 5.0]) / 18.0
SMOOTH_SUBINTERVALS_PER_PERIOD = 40


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Coefficient:
    kind: str
    lower_bound: float
    upper_bound: float
    epsilon: Optional[float] = None
    value: Optional[float] = None
    values: Optional[np.ndarray] = None
    seed: Optional[int] = None
    total_length: Optional[float] = None
    periodic: bool = True

    def __call__(self, s):
        return eval_coefficient(self, s)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == CONSTANT:
            d["value"] = self.value
        else:
            d["epsilon"] = self.epsilon
        if self.seed is not None:
            d["seed"] = self.seed
            d["total_length"] = self.total_length
            d["periodic"] = self.periodic
        return d


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of splitmix64 seeded with ``seed``."""
    state = np.uint64(seed % 2**64)
    k = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = state + k * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform01(seed: int, count: int) -> np.ndarray:
    """Map splitmix64 outputs to [0, 1) using the top 53 bits."""
    return (splitmix64(seed, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def make_constant_coefficient(value: float) -> Coefficient:
    if value <= 0:
        raise CoefficientError("coefficient must be positive")
    return Coefficient(kind=CONSTANT, lower_bound=float(value), upper_bound=float(value),
                       value=float(value))


def make_smooth_coefficient(epsilon: float) -> Coefficient:
    if not epsilon > 0:
        raise CoefficientError("epsilon must be positive")
    return Coefficient(kind=SMOOTH, lower_bound=1.0 / 3.0, upper_bound=1.0,
                       epsilon=float(epsilon))


def _cell_count(epsilon: float, total_length: float) -> int:
    if not epsilon > 0:
        raise CoefficientError("epsilon must be positive")
    ratio = total_length / epsilon
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-12 * max(1.0, ratio):
        raise CoefficientError(f"epsilon={epsilon} does not divide length {total_length}")
    return n


def make_piecewise_coefficient(values, cell_length: float, periodic: bool = True,
                               seed: Optional[int] = None) -> Coefficient:
    values = np.array(values, dtype=float)
    if values.ndim != 1 or values.size == 0 or np.any(values <= 0):
        raise CoefficientError("piecewise values must be a non-empty positive vector")
    values.setflags(write=False)
    return Coefficient(kind=PIECEWISE, lower_bound=float(values.min()),
                       upper_bound=float(values.max()), epsilon=float(cell_length),
                       values=values, seed=seed, total_length=float(cell_length * values.size),
                       periodic=periodic)


def make_random_coefficient(epsilon: float, seed: int, total_length: float,
                            periodic: bool = True) -> Coefficient:
    """Piecewise constant with values in [0.1, 1) on cells of length ``epsilon``."""
    n = _cell_count(epsilon, total_length)
    values = RANDOM_LOW + (RANDOM_HIGH - RANDOM_LOW) * uniform01(seed, n)
    c = make_piecewise_coefficient(values, epsilon, periodic=periodic, seed=int(seed))
    return c


def coefficient_from_dict(d: dict) -> Coefficient:
    kind = d["kind"]
    if kind == CONSTANT:
        return make_constant_coefficient(d["value"])
    if kind == SMOOTH:
        return make_smooth_coefficient(d["epsilon"])
    if kind in (PIECEWISE, "random"):
        return make_random_coefficient(d["epsilon"], d["seed"], d["total_length"],
                                       d.get("periodic", True))
    raise CoefficientError(f"unknown coefficient kind {kind!r}")


def _wrap(c: Coefficient, s: np.ndarray) -> np.ndarray:
    L = c.total_length
    if c.periodic:
        return np.mod(s, L)
    if np.any(s < 0) or np.any(s > L):
        raise CoefficientError(f"arclength outside [0, {L}] for non-periodic coefficient")
    return s


def eval_coefficient(c: Coefficient, s):
    s = np.asarray(s, dtype=float)
    if c.kind == CONSTANT:
        return np.full_like(s, c.value)
    if c.kind == SMOOTH:
        return 1.0 / (2.0 + np.cos(2.0 * np.pi * np.mod(s, c.epsilon) / c.epsilon))
    t = _wrap(c, s)
    k = np.minimum(np.floor(t / c.epsilon).astype(int), c.values.size - 1)
    return c.values[k]


def _piecewise_integral(c: Coefficient, s0: np.ndarray, s1: np.ndarray,
                        weights: np.ndarray) -> np.ndarray:
    """``int_{s0}^{s1} w`` for the piecewise constant ``w`` on the cells of ``c``.

    Partial end cells plus a pairwise sum over the whole cells in between,
    so short intervals far from the origin keep full relative accuracy.
    """
    n, eps = weights.size, c.epsilon
    if not c.periodic:
        _wrap(c, s0), _wrap(c, s1)
    k0 = np.floor(s0 / eps).astype(np.int64)
    k1 = np.floor(s1 / eps).astype(np.int64)
    out = (s1 - s0) * weights[np.mod(k0, n)]
    multi = k1 > k0
    a, b = k0[multi], k1[multi]
    out[multi] = (((a + 1) * eps - s0[multi]) * weights[np.mod(a, n)]
                  + (s1[multi] - b * eps) * weights[np.mod(b, n)])
    whole = np.flatnonzero(k1 - k0 > 1)
    if whole.size:
        w2 = np.concatenate([weights, weights])
        total = weights.sum()
        for i in whole:
            q, rem = divmod(int(k1[i] - k0[i] - 1), n)
            start = int((k0[i] + 1) % n)
            out[i] += eps * (q * total + w2[start:start + rem].sum())
    return out


def _gauss_integrate(fn, s0: np.ndarray, s1: np.ndarray, max_sub: float) -> np.ndarray:
    length = s1 - s0
    nsub = np.maximum(np.ceil(length.max() / max_sub - 1e-9).astype(int), 1)
    # same subdivision count for every interval keeps this vectorized
    a = s0[:, None] + length[:, None] * (np.arange(nsub) / nsub)[None, :]
    hsub = (length / nsub)[:, None, None]
    pts = a[:, :, None] + hsub * _GAUSS3_X[None, None, :]
    return np.sum(fn(pts) * _GAUSS3_W[None, None, :] * hsub, axis=(1, 2))


def integrate_coefficient(c: Coefficient, s0, s1, reciprocal: bool = False) -> np.ndarray:
    """``int_{s0}^{s1} a ds`` (or of ``1/a``) for arrays of intervals.

    Exact for constant and piecewise fields; composite 3-point Gauss on
    sub-intervals no longer than ``eps/40`` for the smooth field (about
    eleven correct digits).
    """
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    s1 = np.atleast_1d(np.asarray(s1, dtype=float))
    if c.kind == CONSTANT:
        v = 1.0 / c.value if reciprocal else c.value
        return v * (s1 - s0)
    if c.kind == SMOOTH:
        if reciprocal:
            fn = lambda s: 2.0 + np.cos(2.0 * np.pi * np.mod(s, c.epsilon) / c.epsilon)  # noqa: E731
        else:
            fn = lambda s: eval_coefficient(c, s)  # noqa: E731
        return _gauss_integrate(fn, s0, s1, c.epsilon / SMOOTH_SUBINTERVALS_PER_PERIOD)
    w = 1.0 / c.values if reciprocal else c.values
    return _piecewise_integral(c, s0, s1, w)


def harmonic_element_averages(c: Coefficient, bm) -> np.ndarray:
    s0, s1 = bm.segment_bounds()
    return (s1 - s0) / integrate_coefficient(c, s0, s1, reciprocal=True)


def arithmetic_element_averages(c: Coefficient, bm) -> np.ndarray:
    s0, s1 = bm.segment_bounds()
    return integrate_coefficient(c, s0, s1) / (s1 - s0)
