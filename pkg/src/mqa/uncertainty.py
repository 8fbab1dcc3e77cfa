"""Moments of predicted-pair costs and CLT comparisons of uncertain values.

A predicted worker or task sits uniformly inside an axis-aligned kernel box.
Only the squared distance between two such boxes has tractable moments, so
costs are carried as (mean, variance, bounds) derived from E[Z^2] and
Var[Z^2] of the squared distance Z^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import special

from .core import MOMENTS, SAMPLED, Location, UncertainScalar

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class UniformBox:
    """Axis-aligned support of a uniform kernel, ``[lo, hi]`` per dimension."""

    lo: Tuple[float, float]
    hi: Tuple[float, float]

    def __post_init__(self):
        if not (self.lo[0] <= self.hi[0] and self.lo[1] <= self.hi[1]):
            raise ValueError(f"degenerate box {self.lo} .. {self.hi}")

    @classmethod
    def around(cls, center: Location, half_width=(0.0, 0.0), clip: bool = True) -> "UniformBox":
        hx, hy = half_width
        if hx < 0 or hy < 0:
            raise ValueError("half widths must be nonnegative")
        lo = [center.x - hx, center.y - hy]
        hi = [center.x + hx, center.y + hy]
        if clip:
            lo = [min(max(v, 0.0), 1.0) for v in lo]
            hi = [min(max(v, 0.0), 1.0) for v in hi]
        return cls((lo[0], lo[1]), (hi[0], hi[1]))

    @classmethod
    def of(cls, entity) -> "UniformBox":
        return cls.around(entity.loc, entity.half_width)

    @property
    def center(self) -> Location:
        return Location((self.lo[0] + self.hi[0]) / 2.0, (self.lo[1] + self.hi[1]) / 2.0)

    @property
    def half_width(self) -> Tuple[float, float]:
        return ((self.hi[0] - self.lo[0]) / 2.0, (self.hi[1] - self.lo[1]) / 2.0)


def std_normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


def uniform_raw_moment(lb: float, ub: float, k: int) -> float:
    """E[X^k] for X ~ U[lb, ub]; a point mass when lb == ub."""
    if k not in (1, 2, 3, 4):
        raise ValueError("k must be in 1..4")
    if lb > ub:
        raise ValueError("lb > ub")
    # (ub^(k+1) - lb^(k+1)) / ((k+1)(ub-lb)) without the cancelling division
    return sum(ub ** i * lb ** (k - i) for i in range(k + 1)) / (k + 1)


def _per_dim_terms(ca, ha, cb, hb):
    # Z_r = mu + D with D = (A - ca) - (B - cb) symmetric and zero-mean.
    mu = ca - cb
    s2 = (ha * ha + hb * hb) / 3.0
    ez2 = mu * mu + s2
    # Var(Z_r^2) = 4 mu^2 s2 + E[D^4] - s2^2, expanded so every term is >= 0
    ha2, hb2 = ha * ha, hb * hb
    var_z2 = 4.0 * mu * mu * s2 + (4.0 / 45.0) * (ha2 * ha2 + hb2 * hb2) + (4.0 / 9.0) * ha2 * hb2
    return ez2, var_z2


def squared_distance_moments(a: UniformBox, b: UniformBox) -> Tuple[float, float]:
    """Mean and variance of the squared Euclidean distance between independent
    uniform points in boxes ``a`` and ``b``."""
    mean = 0.0
    var = 0.0
    for r in range(2):
        ca, cb = (a.lo[r] + a.hi[r]) / 2.0, (b.lo[r] + b.hi[r]) / 2.0
        ha, hb = (a.hi[r] - a.lo[r]) / 2.0, (b.hi[r] - b.lo[r]) / 2.0
        ez2, vz2 = _per_dim_terms(ca, ha, cb, hb)
        mean += ez2
        var += vz2
    return mean, var


def squared_distance_moments_raw(a: UniformBox, b: UniformBox) -> Tuple[float, float]:
    """Same quantity through the raw-moment binomial expansion of E[Z_r^4].

    Kept as a second route; it loses digits to cancellation for small boxes.
    """
    ez2 = []
    ez4 = []
    for r in range(2):
        ea = [uniform_raw_moment(a.lo[r], a.hi[r], k) for k in (1, 2, 3, 4)]
        eb = [uniform_raw_moment(b.lo[r], b.hi[r], k) for k in (1, 2, 3, 4)]
        var_zr = (ea[1] - ea[0] ** 2) + (eb[1] - eb[0] ** 2)
        ez2.append(var_zr + (ea[0] - eb[0]) ** 2)
        ez4.append(ea[3] - 4 * ea[2] * eb[0] + 6 * ea[1] * eb[1] - 4 * ea[0] * eb[2] + eb[3])
    mean = ez2[0] + ez2[1]
    var = ez4[0] + 2 * ez2[0] * ez2[1] + ez4[1] - mean ** 2
    return mean, var


def _box_distance_bounds(a: UniformBox, b: UniformBox) -> Tuple[float, float]:
    gaps = [max(0.0, a.lo[r] - b.hi[r], b.lo[r] - a.hi[r]) for r in range(2)]
    spans = [max(abs(a.hi[r] - b.lo[r]), abs(b.hi[r] - a.lo[r])) for r in range(2)]
    return math.hypot(*gaps), math.hypot(*spans)


def cost_scalar_for_pair(a: UniformBox, b: UniformBox, C: float) -> UncertainScalar:
    """Travel cost C * dist between two boxes as a moments scalar.

    The mean is C * sqrt(E[Z^2]) and the variance comes from the delta
    method, C^2 Var[Z^2] / (4 E[Z^2]).
    """
    m2, v2 = squared_distance_moments(a, b)
    dmin, dmax = _box_distance_bounds(a, b)
    lb, ub = C * dmin, C * dmax
    if m2 <= 0.0:
        return UncertainScalar(MOMENTS, 0.0, 0.0, 0.0, ub)
    mean = min(max(C * math.sqrt(m2), lb), ub)
    var = C * C * v2 / (4.0 * m2)
    return UncertainScalar(MOMENTS, mean, var, lb, ub)


def cost_moments_arrays(alo, ahi, blo, bhi, C: float):
    """Vectorized :func:`cost_scalar_for_pair`.

    ``alo``/``ahi``/``blo``/``bhi`` broadcast to (..., 2) arrays of box corners.
    Returns (mean, var, lb, ub) arrays.
    """
    alo, ahi, blo, bhi = (np.asarray(v, dtype=float) for v in (alo, ahi, blo, bhi))
    ca, ha = (alo + ahi) / 2.0, (ahi - alo) / 2.0
    cb, hb = (blo + bhi) / 2.0, (bhi - blo) / 2.0
    ez2, vz2 = _per_dim_terms(ca, ha, cb, hb)
    m2 = ez2.sum(axis=-1)
    v2 = vz2.sum(axis=-1)
    gaps = np.maximum(0.0, np.maximum(alo - bhi, blo - ahi))
    spans = np.maximum(np.abs(ahi - blo), np.abs(bhi - alo))
    lb = C * np.hypot(gaps[..., 0], gaps[..., 1])
    ub = C * np.hypot(spans[..., 0], spans[..., 1])
    safe = np.where(m2 > 0, m2, 1.0)
    mean = np.where(m2 > 0, np.clip(C * np.sqrt(safe), lb, ub), 0.0)
    var = np.where(m2 > 0, C * C * v2 / (4.0 * safe), 0.0)
    return mean, var, lb, ub


def sampled_scalar(samples: Sequence[Tuple[float, float]]) -> UncertainScalar:
    """Weighted empirical distribution of ``(value, weight)`` samples."""
    if not samples:
        raise ValueError("no samples")
    vals = np.array([float(v) for v, _ in samples])
    wts = np.array([float(w) for _, w in samples])
    if np.any(wts <= 0):
        raise ValueError("sample weights must be positive")
    if abs(wts.sum() - 1.0) > 1e-9:
        raise ValueError(f"sample weights sum to {wts.sum()}, not 1")
    mean = float(np.dot(wts, vals))
    var = float(np.dot(wts, (vals - mean) ** 2))
    lb, ub = float(vals.min()), float(vals.max())
    mean = min(max(mean, lb), ub)
    return UncertainScalar(SAMPLED, mean, var, lb, ub,
                           tuple((float(v), float(w)) for v, w in samples))


def uniform_sampled_scalar(values: Sequence[float]) -> UncertainScalar:
    n = len(values)
    if n == 0:
        raise ValueError("no samples")
    return sampled_scalar([(v, 1.0 / n) for v in values])


def prob_quality_greater(x: UncertainScalar, y: UncertainScalar) -> float:
    """Pr{x > y} under the normal approximation of x - y."""
    d = x.mean - y.mean
    v = x.variance + y.variance
    if v == 0:
        return 1.0 if d > 0 else (0.0 if d < 0 else 0.5)
    return 1.0 - std_normal_cdf(-d / math.sqrt(v))


def prob_cost_less_equal(x: UncertainScalar, y: UncertainScalar) -> float:
    """Pr{x <= y} under the normal approximation of x - y."""
    d = x.mean - y.mean
    v = x.variance + y.variance
    if v == 0:
        return 1.0 if d <= 0 else 0.0
    return std_normal_cdf(-d / math.sqrt(v))


def prob_budget_feasible(committed_lb: float, candidate_cost: UncertainScalar, B_max: float) -> float:
    """Pr{committed_lb + cost <= B_max}."""
    if committed_lb < 0:
        raise ValueError("committed cost must be nonnegative")
    slack = B_max - committed_lb - candidate_cost.mean
    if candidate_cost.variance == 0:
        return 1.0 if slack >= 0 else 0.0
    return std_normal_cdf(slack / math.sqrt(candidate_cost.variance))


# Vectorized forms used by the solvers.  They must agree with the scalar
# functions above, including the degenerate zero-variance cases.

def budget_feasible_array(committed_lb: float, mean, var, B_max: float):
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    slack = B_max - committed_lb - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        p = special.ndtr(slack / np.sqrt(var))
    return np.where(var > 0, p, (slack >= 0).astype(float))


def log_prob_greater_matrix(mean, var):
    """``L[i, j] = log Pr{x_i > x_j}``; the diagonal is zero."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    d = mean[:, None] - mean[None, :]
    v = var[:, None] + var[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        cont = special.log_ndtr(d / np.sqrt(v))
        crisp = np.where(d > 0, 0.0, np.where(d < 0, -np.inf, math.log(0.5)))
    out = np.where(v > 0, cont, crisp)
    np.fill_diagonal(out, 0.0)
    return out


def log_prob_greater_scores(mean, var):
    """Row sums of :func:`log_prob_greater_matrix` without the full matrix.

    Candidates sharing a (mean, variance) share every comparison, so the
    sums are taken over distinct distributions weighted by multiplicity.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    if mean.size == 0:
        return mean.copy()
    keys, inverse, counts = np.unique(np.column_stack([mean, var]), axis=0,
                                      return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    L = log_prob_greater_matrix(keys[:, 0], keys[:, 1])
    # restore the within-group ties the zeroed diagonal dropped
    np.fill_diagonal(L, math.log(0.5))
    with np.errstate(invalid="ignore"):
        # -inf * count stays -inf; count is always >= 1
        group = (L * counts[None, :]).sum(axis=1) - math.log(0.5)
    return group[inverse]
