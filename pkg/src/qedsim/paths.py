"""
Exact algebra on càdlàg paths.

Three path types cover everything the simulator produces:

``StepPath``
    piecewise-constant, right-continuous; jump epochs plus values.  Queue
    contents and counting processes live here.
``PiecewiseLinearPath``
    càdlàg and piecewise linear.  Compensators (continuous) and compensated
    counting processes (jumps plus linear drift) live here.
``GridPath``
    values on a time grid, for numerically integrated continuous paths.

All paths are immutable; their arrays are flagged read-only.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

_TOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_times(t, horizon, lower=0.0):
    t_arr = np.asarray(t, dtype=float)
    slack = _TOL * max(1.0, abs(horizon))
    if np.any(t_arr < lower - slack) or np.any(t_arr > horizon + slack) or np.any(np.isnan(t_arr)):
        raise DomainError(f"time outside [{lower}, {horizon}]")
    return t_arr


class StepPath:
    """Right-continuous piecewise-constant path on ``[0, horizon]``.

    Parameters
    ----------
    epochs : array_like
        Strictly increasing jump epochs in ``(0, horizon]``.
    values : array_like
        Value held from each epoch until the next one.
    initial : float
        Value on ``[0, epochs[0])``.
    horizon : float
        Right end ``T`` of the time domain.
    """

    __slots__ = ("epochs", "values", "initial", "horizon", "levels")

    def __init__(self, epochs, values, initial, horizon, *, check=True):
        epochs = _readonly(np.ravel(epochs))
        values = _readonly(np.ravel(values))
        horizon = float(horizon)
        if check:
            if epochs.shape != values.shape:
                raise ContractError("epochs and values differ in length")
            if horizon < 0:
                raise DomainError("negative horizon")
            if epochs.size:
                if np.any(np.diff(epochs) <= 0):
                    raise ContractError("epochs must be strictly increasing")
                if epochs[0] <= 0 or epochs[-1] > horizon * (1 + _TOL) + _TOL:
                    raise ContractError("epochs must lie in (0, T]")
        self.epochs = epochs
        self.values = values
        self.initial = float(initial)
        self.horizon = horizon
        self.levels = _readonly(np.concatenate(([self.initial], values)))

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, value, horizon):
        return cls([], [], value, horizon)

    @classmethod
    def from_increments(cls, times, increments, initial, horizon):
        """Aggregate (possibly tied, unsorted) increments into a path."""
        times = np.asarray(times, dtype=float)
        increments = np.asarray(increments, dtype=float)
        if times.size == 0:
            return cls.constant(initial, horizon)
        uniq, inv = np.unique(times, return_inverse=True)
        net = np.zeros(uniq.size)
        np.add.at(net, inv, increments)
        return cls(uniq, initial + np.cumsum(net), initial, horizon)

    @classmethod
    def counting(cls, times, horizon):
        """Counting path with a unit jump at each of ``times``."""
        return cls.from_increments(times, np.ones(np.size(times)), 0.0, horizon)

    # evaluation -----------------------------------------------------------
    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        t_arr = _check_times(t, self.horizon)
        out = self.levels[np.searchsorted(self.epochs, t_arr, side="right")]
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, t):
        t_arr = _check_times(t, self.horizon)
        out = self.levels[np.searchsorted(self.epochs, t_arr, side="left")]
        return float(out) if np.ndim(out) == 0 else out

    def jumps(self):
        """Return ``(epochs, sizes)`` of all recorded epochs."""
        return self.epochs, np.diff(self.levels)

    def final(self):
        return float(self.levels[-1])

    def knots(self):
        return np.concatenate(([0.0], self.epochs))

    # transformations --------------------------------------------------------
    def map(self, func):
        """Apply ``func`` pointwise to the values (vectorised)."""
        lv = np.asarray(func(self.levels), dtype=float)
        return StepPath(self.epochs, lv[1:], lv[0], self.horizon, check=False)

    def to_linear(self):
        k = self.knots()
        return PiecewiseLinearPath(k, self.levels, np.zeros(k.size), self.horizon, check=False)

    def _binary(self, other, op):
        if isinstance(other, (PiecewiseLinearPath, GridPath)):
            return NotImplemented
        if isinstance(other, StepPath):
            ep = np.union1d(self.epochs, other.epochs)
            ep = ep[ep <= min(self.horizon, other.horizon)]
            return StepPath(
                ep,
                op(self.eval(ep), other.eval(ep)),
                op(self.initial, other.initial),
                min(self.horizon, other.horizon),
                check=False,
            )
        c = float(other)
        return StepPath(self.epochs, op(self.values, c), op(self.initial, c), self.horizon, check=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return (-self)._binary(other, np.add)

    def __mul__(self, c):
        if isinstance(c, (StepPath, PiecewiseLinearPath, GridPath)):
            return NotImplemented
        return self.map(lambda v: v * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self.map(lambda v: v / float(c))

    def __neg__(self):
        return self.map(np.negative)

    def __repr__(self):
        return f"StepPath(n_epochs={self.epochs.size}, initial={self.initial}, T={self.horizon})"


class PiecewiseLinearPath:
    """Càdlàg piecewise-linear path.

    On ``[knots[i], knots[i+1])`` the path equals
    ``values[i] + slopes[i] * (t - knots[i])``; ``knots[0] == 0``.
    Jumps can occur only at knots.
    """

    __slots__ = ("knots", "values", "slopes", "horizon")

    def __init__(self, knots, values, slopes, horizon, *, check=True):
        knots = _readonly(np.ravel(knots))
        values = _readonly(np.ravel(values))
        slopes = _readonly(np.ravel(slopes))
        if check:
            if not (knots.shape == values.shape == slopes.shape) or knots.size == 0:
                raise ContractError("knots, values, slopes must be equal-length and non-empty")
            if knots[0] != 0.0:
                raise ContractError("first knot must be 0")
            if np.any(np.diff(knots) <= 0):
                raise ContractError("knots must be strictly increasing")
            if knots[-1] > horizon * (1 + _TOL) + _TOL:
                raise ContractError("knots beyond horizon")
        self.knots = knots
        self.values = values
        self.slopes = slopes
        self.horizon = float(horizon)

    @classmethod
    def linear(cls, slope, horizon, intercept=0.0):
        """The path ``t -> intercept + slope * t`` (e.g. the identity ``e``)."""
        return cls([0.0], [intercept], [slope], horizon)

    @classmethod
    def continuous(cls, knots, values, horizon):
        """Continuous interpolant through ``(knots, values)``.

        The last knot may equal ``horizon``; its value then fixes the slope of
        the final segment.
        """
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        slopes = np.zeros(knots.size)
        if knots.size > 1:
            slopes[:-1] = np.diff(values) / np.diff(knots)
            slopes[-1] = slopes[-2] if knots[-1] < horizon else 0.0
        return cls(knots, values, slopes, horizon)

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        t_arr = _check_times(t, self.horizon)
        i = np.searchsorted(self.knots, t_arr, side="right") - 1
        out = self.values[i] + self.slopes[i] * (t_arr - self.knots[i])
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, t):
        t_arr = _check_times(t, self.horizon)
        i = np.maximum(np.searchsorted(self.knots, t_arr, side="left") - 1, 0)
        out = self.values[i] + self.slopes[i] * (t_arr - self.knots[i])
        out = np.where(t_arr <= 0.0, self.values[0], out)
        return float(out) if np.ndim(out) == 0 else out

    def _left_at_knots(self):
        if self.knots.size == 1:
            return np.empty(0)
        return self.values[:-1] + self.slopes[:-1] * np.diff(self.knots)

    def jumps(self):
        """Return ``(epochs, sizes)`` at knots after 0 (sizes may be 0)."""
        return self.knots[1:], self.values[1:] - self._left_at_knots()

    def final(self):
        return float(self.values[-1] + self.slopes[-1] * (self.horizon - self.knots[-1]))

    def is_continuous(self, tol=_TOL):
        return bool(np.all(np.abs(self.jumps()[1]) <= tol * (1 + np.abs(self.values[1:]))))

    def is_nondecreasing(self, tol=0.0):
        return bool(np.all(self.slopes >= -tol) and np.all(self.jumps()[1] >= -tol))

    def extremes(self):
        """All candidate extreme values: right values, left limits and ``p(T)``."""
        return np.concatenate((self.values, self._left_at_knots(), [self.final()]))

    def sup_abs(self):
        return float(np.max(np.abs(self.extremes())))

    def map_affine(self, scale, shift=0.0):
        return PiecewiseLinearPath(
            self.knots, self.values * scale + shift, self.slopes * scale, self.horizon, check=False
        )

    def _binary(self, other, sign):
        if isinstance(other, StepPath):
            other = other.to_linear()
        if isinstance(other, PiecewiseLinearPath):
            T = min(self.horizon, other.horizon)
            k = np.union1d(self.knots, other.knots)
            k = k[k <= T]
            i = np.searchsorted(self.knots, k, side="right") - 1
            j = np.searchsorted(other.knots, k, side="right") - 1
            return PiecewiseLinearPath(
                k,
                self.eval(k) + sign * other.eval(k),
                self.slopes[i] + sign * other.slopes[j],
                T,
                check=False,
            )
        if isinstance(other, GridPath):
            return NotImplemented
        return self.map_affine(1.0, sign * float(other))

    def __add__(self, other):
        return self._binary(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, -1.0)

    def __rsub__(self, other):
        return (-self)._binary(other, 1.0)

    def __mul__(self, c):
        if isinstance(c, (StepPath, PiecewiseLinearPath, GridPath)):
            return NotImplemented
        return self.map_affine(float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self.map_affine(1.0 / float(c))

    def __neg__(self):
        return self.map_affine(-1.0)

    def __repr__(self):
        return f"PiecewiseLinearPath(n_knots={self.knots.size}, T={self.horizon})"


class GridPath:
    """Path sampled on a nondecreasing grid, linear between grid points.

    A repeated grid time encodes a jump: the later entry is the right value.
    """

    __slots__ = ("t", "x")

    def __init__(self, t, x):
        t = _readonly(np.ravel(t))
        x = _readonly(np.ravel(x))
        if t.shape != x.shape or t.size == 0:
            raise ContractError("grid and values must have equal non-zero length")
        if t[0] != 0.0 or np.any(np.diff(t) < 0):
            raise ContractError("grid must start at 0 and be nondecreasing")
        self.t = t
        self.x = x

    @property
    def horizon(self):
        return float(self.t[-1])

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t):
        t_arr = _check_times(t, self.horizon)
        i = np.searchsorted(self.t, t_arr, side="right") - 1
        i = np.clip(i, 0, self.t.size - 1)
        nxt = np.minimum(i + 1, self.t.size - 1)
        dt = self.t[nxt] - self.t[i]
        frac = np.where(dt > 0, (t_arr - self.t[i]) / np.where(dt > 0, dt, 1.0), 0.0)
        out = self.x[i] + frac * (self.x[nxt] - self.x[i])
        return float(out) if np.ndim(out) == 0 else out

    def sup_abs(self):
        return float(np.max(np.abs(self.x)))

    def __sub__(self, other):
        if isinstance(other, GridPath):
            if other.t.shape == self.t.shape and np.array_equal(other.t, self.t):
                return GridPath(self.t, self.x - other.x)
            return GridPath(self.t, self.x - other.eval(self.t))
        return GridPath(self.t, self.x - float(other))

    def __add__(self, other):
        if isinstance(other, GridPath):
            if other.t.shape == self.t.shape and np.array_equal(other.t, self.t):
                return GridPath(self.t, self.x + other.x)
            return GridPath(self.t, self.x + other.eval(self.t))
        return GridPath(self.t, self.x + float(other))

    def __repr__(self):
        return f"GridPath(n={self.t.size}, T={self.horizon})"


@dataclass(frozen=True)
class Regulated:
    """Content/regulator pair produced by the upper reflection map."""

    content: object
    regulator: object
    kappa: float


# ---------------------------------------------------------------------------
# operations


def evaluate(p, t):
    """Right-continuous value ``p(t)``."""
    return p.eval(t)


def left_limit(p, t):
    """Left limit ``p(t-)``, with ``p(0-) = p(0)``."""
    return p.left_limit(t)


def cumulative_integral(p):
    """``t -> int_0^t p(s) ds`` for a step path, as a continuous piecewise-linear path."""
    if isinstance(p, StepPath):
        k = p.knots()
        cum = np.concatenate(([0.0], np.cumsum(p.levels[:-1] * np.diff(k))))
        return PiecewiseLinearPath(k, cum, p.levels, p.horizon, check=False)
    raise TypeError("cumulative_integral expects a StepPath")


def time_integral(p, a, b):
    """Exact Lebesgue integral of a step path over ``[a, b]``."""
    if a > b:
        raise DomainError("a > b")
    _check_times([a, b], p.horizon)
    if a == b:
        return 0.0
    lo = np.searchsorted(p.epochs, a, side="right")
    hi = np.searchsorted(p.epochs, b, side="right")
    cuts = np.concatenate(([a], p.epochs[lo:hi], [b]))
    return float(np.sum(p.levels[lo : hi + 1] * np.diff(cuts)))


def stieltjes_integral(f_left, g):
    """``t -> sum_{s <= t} f(s-) * dg(s)`` for a counting-type integrator ``g``.

    ``f_left`` may be a path (its left limits are used) or a callable returning
    the predictable integrand at the jump epochs.
    """
    ep, dg = g.jumps()
    if np.any(dg < 0):
        raise ContractError("integrator must be nondecreasing")
    keep = dg != 0
    ep, dg = ep[keep], dg[keep]
    if callable(getattr(f_left, "left_limit", None)):
        fv = np.asarray(f_left.left_limit(ep), dtype=float)
    else:
        fv = np.asarray(f_left(ep), dtype=float)
    return StepPath(ep, np.cumsum(fv * dg), 0.0, g.horizon, check=False)


def max_jump(p, T=None):
    """``sup_{0 < t <= T} |p(t) - p(t-)|``."""
    ep, dj = p.jumps()
    if T is not None:
        dj = dj[ep <= T]
    return float(np.max(np.abs(dj))) if dj.size else 0.0


def optional_qv(p, q):
    """Optional covariation ``[p, q]`` of two finite-variation paths.

    Only the jump parts contribute; the result is the step path
    ``t -> sum_{s <= t} dp(s) dq(s)``.
    """
    ep, dp = p.jumps()
    eq, dq = q.jumps()
    common, ip, iq = np.intersect1d(ep, eq, assume_unique=True, return_indices=True)
    prod = dp[ip] * dq[iq]
    keep = prod != 0
    T = min(p.horizon, q.horizon)
    return StepPath(common[keep], np.cumsum(prod[keep]), 0.0, T, check=False)


def reflect_upper(y, kappa):
    """One-sided reflection of ``y`` at the upper barrier ``kappa``.

    Returns the content ``x = y - u`` and regulator
    ``u(t) = sup_{s <= t} (y(s) - kappa)^+``.  If ``y(0) > kappa`` the
    regulator starts with mass ``y(0) - kappa``.
    """
    kappa = float(kappa)
    if kappa < 0 or np.isnan(kappa):
        raise DomainError("kappa must be >= 0")
    if isinstance(y, StepPath):
        u = np.maximum.accumulate(np.maximum(y.levels - kappa, 0.0))
        reg = StepPath(y.epochs, u[1:], u[0], y.horizon, check=False)
        content = StepPath(y.epochs, y.levels[1:] - u[1:], y.levels[0] - u[0], y.horizon, check=False)
        return Regulated(content, reg, kappa)
    if isinstance(y, GridPath):
        u = np.maximum.accumulate(np.maximum(y.x - kappa, 0.0))
        return Regulated(GridPath(y.t, y.x - u), GridPath(y.t, u), kappa)
    if isinstance(y, PiecewiseLinearPath):
        return _reflect_linear(y, kappa)
    raise TypeError(f"cannot reflect {type(y).__name__}")


def _reflect_linear(y, kappa):
    knots = list()
    u_vals = list()
    u_slopes = list()
    u = 0.0
    k = y.knots
    ends = np.append(k[1:], y.horizon)
    for a, b, v, s in zip(k, ends, y.values, y.slopes):
        u = max(u, v - kappa, 0.0)
        end_val = v + s * (b - a)
        if s > 0 and end_val - kappa > u:
            c = max(a, a + (u + kappa - v) / s)
            if c > a:
                knots += [a, c]
                u_vals += [u, u]
                u_slopes += [0.0, s]
            else:
                knots.append(a)
                u_vals.append(u)
                u_slopes.append(s)
            u = end_val - kappa
        else:
            knots.append(a)
            u_vals.append(u)
            u_slopes.append(0.0)
    reg = PiecewiseLinearPath(knots, u_vals, u_slopes, y.horizon)
    return Regulated(y - reg, reg, kappa)


def complementarity_residual(reg, tol=_TOL):
    """Total regulator increase accrued while the content is below the barrier.

    Zero (up to ``tol`` in the barrier test) for a correctly regulated pair.
    """
    x, u, kappa = reg.content, reg.regulator, reg.kappa
    below = kappa - tol
    if isinstance(u, GridPath):
        du = np.diff(u.x)
        return float(np.sum(du[x.x[1:] < below]))
    if isinstance(u, StepPath):
        ep, du = u.jumps()
        return float(np.sum(du[x.eval(ep) < below]))
    if isinstance(u, PiecewiseLinearPath):
        ep, du = u.jumps()
        total = float(np.sum(du[x.eval(ep) < below]))
        ends = np.append(u.knots[1:], u.horizon)
        for a, b, s in zip(u.knots, ends, u.slopes):
            if s > 0 and b > a:
                mid = 0.5 * (a + b)
                if x.eval(mid) < below:
                    total += s * (b - a)
        return total
    raise TypeError(type(u).__name__)


# ---------------------------------------------------------------------------
# serialization


def _rows(p):
    if isinstance(p, StepPath):
        rows = [(0.0, p.initial)] + list(zip(p.epochs.tolist(), p.values.tolist()))
        if not p.epochs.size or p.epochs[-1] < p.horizon:
            rows.append((p.horizon, p.final()))
        return rows
    if isinstance(p, PiecewiseLinearPath):
        rows = [(0.0, float(p.values[0]))]
        ep, dj = p.jumps()
        left = p._left_at_knots()
        for t, lv, v, d in zip(ep, left, p.values[1:], dj):
            if d != 0:
                rows.append((float(t), float(lv)))
            rows.append((float(t), float(v)))
        if p.knots[-1] < p.horizon:
            rows.append((p.horizon, p.final()))
        return rows
    if isinstance(p, GridPath):
        return list(zip(p.t.tolist(), p.x.tolist()))
    raise TypeError(type(p).__name__)


def write_csv(p, fh):
    """Write ``t,value`` rows (plot-ready; a step path round-trips via ``read_csv``)."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "value"])
    for t, v in _rows(p):
        w.writerow([repr(float(t)), repr(float(v))])


def write_jsonl(p, fh):
    for t, v in _rows(p):
        fh.write(json.dumps({"t": float(t), "v": float(v)}) + "\n")


def read_csv(fh):
    """Read a step path written by ``write_csv``."""
    r = csv.reader(fh)
    header = next(r)
    if header != ["t", "value"]:
        raise ContractError("expected header t,value")
    rows = [(float(a), float(b)) for a, b in r]
    t = np.array([a for a, _ in rows])
    v = np.array([b for _, b in rows])
    horizon = t[-1]
    ep, vals = t[1:], v[1:]
    # a trailing row without a jump only marks the horizon
    if ep.size and vals[-1] == v[-2]:
        ep, vals = ep[:-1], vals[:-1]
    return StepPath(ep, vals, v[0], horizon)
