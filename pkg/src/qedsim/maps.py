"""
Deterministic path maps: the integral representation, its reflected form,
composition with a random time change, and the Gronwall certificate.

The integral representation maps ``(b, y)`` to the solution of
``x(t) = b + y(t) + int_0^t h(x(s)) ds``; the reflected one to the pair
``(x, u)`` with ``x = w - u``, ``u`` the running supremum of ``(w - kappa)^+``
and ``w = b + y + int h(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ContractError, DomainError
from .paths import GridPath, PiecewiseLinearPath, Regulated, StepPath


@dataclass(frozen=True)
class DriftFn:
    """Lipschitz drift ``h`` with known modulus.

    ``piecewise(mu, theta)`` is ``h(s) = -mu (s ^ 0) - theta s^+``;
    ``linear(mu)`` is ``-mu s``; ``custom(func, c)`` any callable with
    Lipschitz modulus ``c``.
    """

    kind: str
    mu: float = 0.0
    theta: float = 0.0
    func: object = None
    modulus: float = 0.0

    @classmethod
    def linear(cls, mu):
        return cls("linear", mu=float(mu), theta=float(mu), modulus=abs(float(mu)))

    @classmethod
    def piecewise(cls, mu, theta):
        return cls("piecewise", mu=float(mu), theta=float(theta), modulus=max(abs(mu), abs(theta)))

    @classmethod
    def zero(cls):
        return cls.linear(0.0)

    @classmethod
    def custom(cls, func, modulus):
        if modulus < 0:
            raise DomainError("Lipschitz modulus must be nonnegative")
        return cls("custom", func=func, modulus=float(modulus))

    def __call__(self, s):
        if self.kind == "custom":
            return np.asarray(self.func(s), dtype=float)
        s = np.asarray(s, dtype=float)
        return -self.mu * np.minimum(s, 0.0) - self.theta * np.maximum(s, 0.0)


@njit(cache=True)
def _euler_piecewise(t, y, b, mu, theta, kappa):
    m = t.size
    x = np.empty(m)
    u = np.empty(m)
    w0 = b + y[0]
    u_run = w0 - kappa if w0 > kappa else 0.0
    x[0] = w0 - u_run
    u[0] = u_run
    integral = 0.0
    for k in range(m - 1):
        xk = x[k]
        hk = -mu * min(xk, 0.0) - theta * max(xk, 0.0)
        integral = integral + hk * (t[k + 1] - t[k])
        w = b + y[k + 1] + integral
        if w - kappa > u_run:
            u_run = w - kappa
        x[k + 1] = w - u_run
        u[k + 1] = u_run
    return x, u


def _euler_custom(t, y, b, h, kappa):
    x = np.empty(t.size)
    u = np.empty(t.size)
    w0 = b + y[0]
    u_run = max(w0 - kappa, 0.0)
    x[0] = w0 - u_run
    u[0] = u_run
    integral = 0.0
    for k in range(t.size - 1):
        integral = integral + float(h(x[k])) * (t[k + 1] - t[k])
        w = b + y[k + 1] + integral
        u_run = max(u_run, w - kappa)
        x[k + 1] = w - u_run
        u[k + 1] = u_run
    return x, u


def solver_grid(y, dt, T=None):
    """Uniform grid of step ``dt`` on ``[0, T]`` with the jump epochs of ``y`` inserted."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    T = y.horizon if T is None else float(T)
    k = int(math.ceil(T / dt - 1e-9))
    grid = np.linspace(0.0, T, k + 1)
    if isinstance(y, StepPath):
        extra = y.epochs
    elif isinstance(y, PiecewiseLinearPath):
        ep, dj = y.jumps()
        extra = ep[dj != 0]
    else:
        extra = np.empty(0)
    extra = extra[(extra > 0) & (extra < T)]
    return np.union1d(grid, extra)


def _sample(y, t):
    if callable(getattr(y, "eval", None)):
        return np.asarray(y.eval(t), dtype=float)
    return np.asarray(y(t), dtype=float)


def _run(b, y, h, kappa, dt, T):
    t = solver_grid(y, dt, T)
    yv = _sample(y, t)
    if h.kind == "custom":
        return t, *_euler_custom(t, yv, float(b), h, float(kappa))
    return t, *_euler_piecewise(t, yv, float(b), h.mu, h.theta, float(kappa))


def solve_integral_rep(b, y, h, dt, T=None):
    """Euler solution of ``x = b + y + int h(x)`` on the jump-refined grid.

    The drift integral uses left-point sums, so ``h = 0`` reproduces
    ``b + y`` exactly and the scheme converges with order 1 in ``dt``.

    Returns
    -------
    GridPath
    """
    t, x, _ = _run(b, y, h, math.inf, dt, T)
    return GridPath(t, x)


def solve_reflected_rep(b, y, h, kappa, dt, T=None):
    """Reflected integral representation with upper barrier ``kappa``.

    At each grid step ``w`` is advanced with the drift evaluated at the
    reflected state and the regulator is the running maximum of
    ``(w - kappa)^+``.  The discretized map is causal, so this forward
    substitution is its exact fixed point.

    Returns
    -------
    Regulated
        ``content`` ``x <= kappa`` and nondecreasing ``regulator`` on the grid.
    """
    if b > kappa:
        raise DomainError("b must not exceed kappa")
    t, x, u = _run(b, y, h, kappa, dt, T)
    return Regulated(GridPath(t, x), GridPath(t, u), float(kappa))


def _first_hit(tau, levels):
    """``inf{t : tau(t) >= level}`` for a continuous nondecreasing PL path."""
    ends = np.append(tau.knots[1:], tau.horizon)
    v = np.append(tau.values, tau.final())
    j = np.searchsorted(v, levels, side="left")
    out = np.empty(levels.size)
    for i, (lev, jj) in enumerate(zip(levels, j)):
        if jj == 0:
            out[i] = 0.0
        elif jj >= v.size:
            out[i] = np.inf
        else:
            a = tau.knots[jj - 1]
            s = tau.slopes[jj - 1]
            out[i] = min(a + (lev - v[jj - 1]) / s, ends[jj - 1]) if s > 0 else a
    return out


def _check_tau(x, tau):
    if isinstance(tau, StepPath):
        lo, hi = tau.levels.min(), tau.levels.max()
        if np.any(np.diff(tau.levels) < 0):
            raise ContractError("time change must be nondecreasing")
    elif isinstance(tau, PiecewiseLinearPath):
        ex = tau.extremes()
        lo, hi = float(ex.min()), float(ex.max())
        # roundoff in knot slopes and left limits is not a decrease
        if not tau.is_nondecreasing(tol=1e-12 * (1.0 + max(abs(lo), abs(hi)))):
            raise ContractError("time change must be nondecreasing")
    else:
        if np.any(np.diff(tau.x) < 0):
            raise ContractError("time change must be nondecreasing")
        lo, hi = tau.x.min(), tau.x.max()
    if lo < 0 or hi > x.horizon * (1 + 1e-12):
        raise DomainError("time change leaves the domain of x")


def compose(x, tau, grid=None):
    """``t -> x(tau(t))`` for nondecreasing ``tau``.

    Exact for a step ``x`` with a step or continuous piecewise-linear
    ``tau`` (result StepPath) and for continuous PL ``x`` and ``tau``
    (result PL).  Otherwise the composition is sampled on ``grid`` (or on
    the grid of ``tau``).
    """
    _check_tau(x, tau)
    T = tau.horizon
    if isinstance(tau, StepPath):
        if isinstance(x, (StepPath, PiecewiseLinearPath)) and grid is None:
            lv = np.asarray(x.eval(np.minimum(tau.levels, x.horizon)), dtype=float)
            return StepPath(tau.epochs, lv[1:], lv[0], T, check=False)
    if isinstance(tau, PiecewiseLinearPath) and tau.is_continuous() and grid is None:
        t0, t1 = tau.eval(0.0), tau.final()
        if isinstance(x, StepPath):
            e = x.epochs[(x.epochs > t0) & (x.epochs <= t1)]
            init = x.eval(t0)
            if e.size == 0:
                return StepPath.constant(init, T)
            hits = _first_hit(tau, e)
            # several epochs may share a hitting time; the last value wins
            uniq = np.unique(hits)
            last = np.searchsorted(hits, uniq, side="right") - 1
            return StepPath(uniq, x.eval(e)[last], init, T, check=False)
        if isinstance(x, PiecewiseLinearPath) and x.is_continuous():
            inner = x.knots[(x.knots > t0) & (x.knots < t1)]
            knots = np.union1d(tau.knots, _first_hit(tau, inner))
            knots = knots[knots < T]
            vals = np.asarray(x.eval(np.minimum(tau.eval(knots), x.horizon)), dtype=float)
            if knots[-1] < T:
                knots = np.append(knots, T)
                vals = np.append(vals, x.eval(min(tau.final(), x.horizon)))
            return PiecewiseLinearPath.continuous(knots, vals, T)
    if grid is None:
        grid = tau.t if isinstance(tau, GridPath) else np.linspace(0.0, T, 2001)
    grid = np.asarray(grid, dtype=float)
    inner = np.minimum(np.asarray(tau.eval(grid), dtype=float), x.horizon)
    return GridPath(grid, np.asarray(x.eval(inner), dtype=float))


def gronwall_bound(eps, c, T):
    """``eps * exp(c T)``: bound on ``|x1 - x2|`` on ``[0, T]`` given input gap ``eps``."""
    if eps < 0 or c < 0 or T < 0:
        raise DomainError("eps, c and T must be nonnegative")
    return eps * math.exp(c * T)


def grid_error_estimate(b, y, h, dt, T=None, kappa=math.inf):
    """Solution at ``dt`` and the sup gap to the ``dt/2`` solution on shared points.

    For a first-order scheme the gap approximates the grid error of the
    ``dt`` solution.
    """
    t1, x1, _ = _run(b, y, h, kappa, dt, T)
    t2, x2, _ = _run(b, y, h, kappa, dt / 2, T)
    idx = np.searchsorted(t2, t1)
    idx = np.minimum(idx, t2.size - 1)
    shared = np.isclose(t2[idx], t1, rtol=0, atol=1e-12)
    gap = float(np.max(np.abs(x1[shared] - x2[idx[shared]])))
    return GridPath(t1, x1), gap
