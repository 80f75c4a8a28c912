"""
Ensemble statistics with order-independent, exactly mergeable moments.

Sums of values and of squares are kept as exact dyadic rationals (Python
integers times a power of two), so merging partial results in any order or
grouping gives bit-identical means and variances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats as _st

from .errors import DomainError

QUANTILE_LEVELS = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)
RESERVOIR_CAP = 100_000


@dataclass(frozen=True)
class ExactSum:
    """``total * 2**exp`` held exactly."""

    total: int = 0
    exp: int = 0

    @classmethod
    def of(cls, values):
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return cls()
        if not np.all(np.isfinite(v)):
            raise DomainError("non-finite value in exact sum")
        mant, e = np.frexp(v)
        m = (mant * 2.0**53).astype(np.int64)
        e = e.astype(np.int64) - 53
        emin = int(e.min())
        total = sum(int(mi) << int(ei - emin) for mi, ei in zip(m.tolist(), e.tolist()))
        return cls(total, emin)

    @classmethod
    def of_squares(cls, values):
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return cls()
        mant, e = np.frexp(v)
        m = (mant * 2.0**53).astype(np.int64)
        e = 2 * (e.astype(np.int64) - 53)
        emin = int(e.min())
        total = sum((int(mi) * int(mi)) << int(ei - emin) for mi, ei in zip(m.tolist(), e.tolist()))
        return cls(total, emin)

    def __add__(self, other):
        if self.total == 0:
            return other
        if other.total == 0:
            return self
        e = min(self.exp, other.exp)
        return ExactSum((self.total << (self.exp - e)) + (other.total << (other.exp - e)), e)

    def fraction(self):
        if self.exp >= 0:
            return Fraction(self.total << self.exp)
        return Fraction(self.total, 1 << -self.exp)


@dataclass
class _Column:
    count: int = 0
    s1: ExactSum = field(default_factory=ExactSum)
    s2: ExactSum = field(default_factory=ExactSum)
    retained: np.ndarray = field(default_factory=lambda: np.empty(0))
    approximate: bool = False


def _systematic(sorted_vals, cap):
    # deterministic thinning of a sorted sample: evenly spaced order statistics
    idx = np.floor((np.arange(cap) + 0.5) * sorted_vals.size / cap).astype(np.int64)
    return sorted_vals[idx]


class EnsembleStats:
    """Per-time-point count, mean, variance, standard error and quantiles.

    Parameters
    ----------
    t_grid : array_like
        Time points (column labels).
    samples : array_like (R, len(t_grid)), optional
        Initial sample matrix.
    """

    def __init__(self, t_grid, samples=None):
        self.t_grid = np.asarray(t_grid, dtype=float)
        self._cols = [_Column() for _ in self.t_grid]
        if samples is not None:
            self.add(samples)

    def add(self, samples):
        s = np.asarray(samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None] if self.t_grid.size == 1 else s[None, :]
        if s.shape[1] != self.t_grid.size:
            raise DomainError("sample matrix does not match the time grid")
        for j, col in enumerate(self._cols):
            v = s[:, j]
            col.count += v.size
            col.s1 = col.s1 + ExactSum.of(v)
            col.s2 = col.s2 + ExactSum.of_squares(v)
            col.retained, col.approximate = _retain(col.retained, v, col.approximate)
        return self

    def merge(self, other):
        if not np.array_equal(self.t_grid, other.t_grid):
            raise DomainError("cannot merge stats on different grids")
        out = EnsembleStats(self.t_grid)
        for c, a, b in zip(out._cols, self._cols, other._cols):
            c.count = a.count + b.count
            c.s1 = a.s1 + b.s1
            c.s2 = a.s2 + b.s2
            c.retained, c.approximate = _retain(a.retained, b.retained, a.approximate or b.approximate)
        return out

    @property
    def count(self):
        return np.array([c.count for c in self._cols])

    @property
    def mean(self):
        return np.array([float(c.s1.fraction() / c.count) if c.count else math.nan for c in self._cols])

    @property
    def variance(self):
        """Unbiased sample variance; NaN when fewer than two samples."""
        out = []
        for c in self._cols:
            if c.count < 2:
                out.append(math.nan)
                continue
            s1 = c.s1.fraction()
            ss = c.s2.fraction() - s1 * s1 / c.count
            out.append(float(ss / (c.count - 1)))
        return np.array(out)

    @property
    def variance_defined(self):
        return bool(np.all(self.count >= 2))

    @property
    def se(self):
        return np.sqrt(self.variance / self.count)

    @property
    def approximate_quantiles(self):
        return any(c.approximate for c in self._cols)

    def quantiles(self, levels=QUANTILE_LEVELS):
        """``{level: array over t}`` from the retained samples."""
        out = {}
        for q in levels:
            out[q] = np.array([np.quantile(c.retained, q) if c.retained.size else math.nan for c in self._cols])
        return out

    def summary_rows(self):
        qs = self.quantiles()
        rows = []
        for j, t in enumerate(self.t_grid):
            row = {"t": float(t), "count": int(self.count[j]), "mean": float(self.mean[j]),
                   "variance": float(self.variance[j]), "se": float(self.se[j])}
            for q in QUANTILE_LEVELS:
                row[f"q{int(round(q * 100)):02d}"] = float(qs[q][j])
            rows.append(row)
        return rows


def _retain(existing, new, approximate):
    allv = np.sort(np.concatenate((existing, np.asarray(new, dtype=float))))
    if allv.size > RESERVOIR_CAP:
        return _systematic(allv, RESERVOIR_CAP), True
    return allv, approximate


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov


def ks_statistic(samples, cdf):
    """One-sample ``sup_x |F_R(x) - F(x)|`` for a continuous target ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    R = x.size
    if R < 2:
        raise DomainError("need at least two samples")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, R + 1)
    return float(max(np.max(i / R - f), np.max(f - (i - 1) / R), 0.0))


def ks_2samp_statistic(a, b):
    """Two-sample ``sup_x |F_a(x) - F_b(x)|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size < 2 or b.size < 2:
        raise DomainError("need at least two samples in each group")
    pts = np.concatenate((a, b))
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(R, alpha=0.01):
    """Asymptotic one-sample critical value ``c(alpha)/sqrt(R)``."""
    return float(_st.kstwobign.isf(alpha) / math.sqrt(R))


def poisson_normal_distance(n):
    """Exact ``sup_x |P(N <= x) - Phi((x - n)/sqrt(n))|`` for ``N ~ Poisson(n)``.

    The supremum is attained at lattice points (either side of a jump).
    """
    lo = max(0, int(n - 12 * math.sqrt(n) - 10))
    k = np.arange(lo, int(n + 12 * math.sqrt(n) + 10))
    right = _st.poisson.cdf(k, n)
    left = right - _st.poisson.pmf(k, n)
    phi = _st.norm.cdf((k - n) / math.sqrt(n))
    return float(max(np.max(np.abs(right - phi)), np.max(np.abs(left - phi))))
