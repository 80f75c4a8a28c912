"""
Limit diffusions of the scaled queue processes and their marginal laws.

* Ornstein-Uhlenbeck ``dX = -mu (X + beta) dt + sqrt(sigma2) dB``, sampled
  with its exact Gaussian transition.
* Piecewise-linear drift ``dX = (-beta mu + h(X)) dt + sqrt(sigma2) dB``
  with ``h(x) = -mu (x ^ 0) - theta x^+`` (Euler-Maruyama).
* The same with an upper reflecting barrier ``kappa`` (projected Euler).
* The four-term Gaussian-plus-empirical representation of the
  infinite-server limit with general initial fill ``q0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate, stats

from .errors import DomainError, UnsupportedConstructionError
from .rng import substream

_CHUNK = 512


class StabilityWarning(UserWarning):
    """Euler step large relative to the drift rates."""


class ApproximationWarning(UserWarning):
    """Finite-sample approximation of a limit object is coarse."""


@dataclass(frozen=True)
class DiffusionSpec:
    """Parameters of a one-dimensional limit diffusion.

    Parameters
    ----------
    mu : float
        Service rate; drift slope below zero.
    theta : float or None
        Drift slope above zero; None means ``theta = mu`` (OU).
    beta : float
        Constant drift ``-beta * mu``.
    kappa : float
        Upper barrier, ``inf`` for none.
    sigma2 : float or None
        Infinitesimal variance; default ``2 mu``.
    x0 : float
        Initial point.
    x0_var : float
        Variance of a normal initial law centred at ``x0`` (0 for a point).
    dt, T : float
        Step and horizon.
    """

    mu: float
    theta: float | None = None
    beta: float = 0.0
    kappa: float = math.inf
    sigma2: float | None = None
    x0: float = 0.0
    x0_var: float = 0.0
    dt: float = 0.01
    T: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise DomainError("mu must be positive")
        if self.theta is None:
            object.__setattr__(self, "theta", float(self.mu))
        if self.theta < 0:
            raise DomainError("theta must be nonnegative")
        if self.sigma2 is None:
            object.__setattr__(self, "sigma2", 2.0 * self.mu)
        if self.sigma2 < 0 or self.x0_var < 0:
            raise DomainError("variances must be nonnegative")
        if self.kappa < 0:
            raise DomainError("kappa must be nonnegative")
        if self.x0 > self.kappa:
            raise DomainError("x0 must not exceed kappa")
        if not (self.dt > 0 and self.T > 0):
            raise DomainError("dt and T must be positive")

    @property
    def steps(self):
        return max(1, int(round(self.T / self.dt)))

    @property
    def step(self):
        return self.T / self.steps

    @property
    def is_ou(self):
        return self.theta == self.mu and math.isinf(self.kappa)


@dataclass(frozen=True)
class DiffusionEnsemble:
    """Sampled paths: ``X[r, j]`` at time ``t[j]``; ``U`` the regulator when reflected."""

    t: np.ndarray
    X: np.ndarray
    U: np.ndarray | None = None
    complementarity: np.ndarray | None = None
    pinned_fraction: np.ndarray | None = None

    def at(self, t):
        j = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"time {t} is not on the record grid")
        return self.X[:, j]


def _record_index(spec, t_record):
    steps = spec.steps
    if t_record is None:
        return np.arange(steps + 1)
    t_record = np.asarray(t_record, dtype=float)
    k = np.rint(t_record / spec.step).astype(np.int64)
    if np.any(np.abs(k * spec.step - t_record) > 1e-9 * max(1.0, spec.T)) or np.any(k < 0) or np.any(k > steps):
        raise DomainError("record times must be multiples of the step within [0, T]")
    return k


@njit(cache=True)
def _ou_kernel(x0, z, a, sd, shift, rec):
    R, steps = z.shape
    out = np.empty((R, rec.size))
    for r in range(R):
        x = x0[r]
        j = 0
        if rec[0] == 0:
            out[r, 0] = x
            j = 1
        for k in range(steps):
            x = shift + (x - shift) * a + sd * z[r, k]
            while j < rec.size and rec[j] == k + 1:
                out[r, j] = x
                j += 1
    return out


@njit(cache=True)
def _euler_kernel(x0, z, dt, mu, theta, beta, sig, kappa, rec):
    R, steps = z.shape
    out = np.empty((R, rec.size))
    reg = np.empty((R, rec.size))
    comp = np.zeros(R)
    pinned = np.zeros(R)
    sq = sig * math.sqrt(dt)
    for r in range(R):
        x = x0[r]
        u = 0.0
        j = 0
        if rec[0] == 0:
            out[r, 0] = x
            reg[r, 0] = 0.0
            j = 1
        npin = 0
        for k in range(steps):
            h = -mu * min(x, 0.0) - theta * max(x, 0.0)
            x = x + (-beta * mu + h) * dt + sq * z[r, k]
            u_prev = u
            if x > kappa:
                u = u + (x - kappa)
                x = kappa
                npin += 1
            if u > u_prev and x < kappa - 1e-12:
                comp[r] += u - u_prev
            while j < rec.size and rec[j] == k + 1:
                out[r, j] = x
                reg[r, j] = u
                j += 1
        pinned[r] = npin / steps
    return out, reg, comp, pinned


def _initial_points(spec, rng):
    if spec.x0_var > 0:
        return spec.x0 + math.sqrt(spec.x0_var) * rng.standard_normal()
    return spec.x0


def _simulate(spec, seed, R, t_record, kernel, offset=0):
    if R < 1:
        raise DomainError("R must be positive")
    rec = _record_index(spec, t_record)
    if np.any(np.diff(rec) < 0):
        raise DomainError("record times must be increasing")
    steps = spec.steps
    outs, regs, comps, pins = [], [], [], []
    for start in range(0, R, _CHUNK):
        reps = range(start, min(R, start + _CHUNK))
        z = np.empty((len(reps), steps))
        x0 = np.empty(len(reps))
        for i, rep in enumerate(reps):
            g = substream(seed, rep + offset, "diffusion")
            x0[i] = _initial_points(spec, g)
            z[i] = g.standard_normal(steps)
        res = kernel(x0, z, rec)
        if isinstance(res, tuple):
            outs.append(res[0])
            regs.append(res[1])
            comps.append(res[2])
            pins.append(res[3])
        else:
            outs.append(res)
    t = rec * spec.step
    if regs:
        return DiffusionEnsemble(t, np.vstack(outs), np.vstack(regs), np.concatenate(comps),
                                 np.concatenate(pins))
    return DiffusionEnsemble(t, np.vstack(outs))


def ou_exact(spec, seed, R, t_record=None, first=0):
    """OU ensemble via the exact transition ``X' = -beta + (X + beta) e^{-mu dt} + N(0, v(1 - e^{-2 mu dt}))``.

    ``v = sigma2 / (2 mu)`` is the stationary variance (1 for the queue limit).
    """
    if not spec.is_ou:
        raise UnsupportedConstructionError("exact OU sampling needs theta = mu and no barrier")
    a = math.exp(-spec.mu * spec.step)
    sd = math.sqrt(spec.sigma2 / (2 * spec.mu) * -math.expm1(-2 * spec.mu * spec.step))

    def kernel(x0, z, rec):
        return _ou_kernel(x0, z, a, sd, -spec.beta, rec)

    return _simulate(spec, seed, R, t_record, kernel, first)


def _check_stability(spec):
    if spec.step * max(spec.mu, spec.theta) > 0.5:
        warnings.warn(f"dt * max(mu, theta) = {spec.step * max(spec.mu, spec.theta):.3g} > 0.5",
                      StabilityWarning)


def erlang_a_limit(spec, seed, R, t_record=None, first=0):
    """Euler-Maruyama ensemble of the piecewise-linear drift diffusion (no barrier)."""
    if not math.isinf(spec.kappa):
        raise DomainError("use reflected_limit for a finite barrier")
    _check_stability(spec)

    def kernel(x0, z, rec):
        return _euler_kernel(x0, z, spec.step, spec.mu, spec.theta, spec.beta,
                             math.sqrt(spec.sigma2), math.inf, rec)[0]

    return _simulate(spec, seed, R, t_record, kernel, first)


def reflected_limit(spec, seed, R, t_record=None, first=0):
    """Projected-Euler ensemble reflected at ``kappa``.

    After each Euler step any excess over ``kappa`` is added to the
    regulator and the state is set to ``kappa``.  The ensemble carries the
    regulator paths, the per-path fraction of steps ending on the barrier
    and the complementarity residual (regulator growth on steps ending
    below the barrier).
    """
    if math.isinf(spec.kappa):
        raise DomainError("reflected_limit needs a finite kappa")
    _check_stability(spec)

    def kernel(x0, z, rec):
        return _euler_kernel(x0, z, spec.step, spec.mu, spec.theta, spec.beta,
                             math.sqrt(spec.sigma2), spec.kappa, rec)

    return _simulate(spec, seed, R, t_record, kernel, first)


def reflected_complementarity(ens, kappa, tol=1e-12):
    """Per-path regulator growth between recorded points that end below ``kappa - tol``.

    With every step recorded this is the exact grid-level complementarity
    residual.
    """
    du = np.diff(ens.U, axis=1)
    below = ens.X[:, 1:] < kappa - tol
    return np.sum(np.where(below, du, 0.0), axis=1)


# ---------------------------------------------------------------------------
# four-term representation with initial fill q0


def _bridge_at(u, z, z_end):
    """Brownian bridge at increasing points ``u`` in [0, 1] from normals."""
    du = np.diff(np.concatenate(([0.0], u)))
    w = np.cumsum(np.sqrt(du) * z)
    w1 = w[-1] + math.sqrt(max(1.0 - u[-1], 0.0)) * z_end
    return w - u * w1


def _empirical_term(t, n_emp, mu, zeta):
    """``-(1/sqrt n) [#{s_i + x_i <= t} - sum_{s_i <= t} F(t - s_i)]``, ``s_i = i/(n mu)``, ``F(x) = 1 - e^{-mu x}``."""
    N = zeta.size
    s = np.arange(1, N + 1) / (n_emp * mu)
    x = -np.log1p(-zeta) / mu
    done = np.sort(s + x)
    count_done = np.searchsorted(done, t, side="right")
    m = np.searchsorted(s, t, side="right")
    cum = np.concatenate(([0.0], np.cumsum(np.exp(mu * s))))
    expected = m - np.exp(-mu * t) * cum[m]
    return -(count_done - expected) / math.sqrt(n_emp)


def fourth_rep_path(q0, mu, n_emp, seed, rep, t, x0=0.0):
    """One path of the four-term representation on the uniform grid ``t`` (``t[0] = 0``)."""
    steps = t.size - 1
    h = t[1] - t[0]
    a = math.exp(-mu * h)
    # sqrt(mu) int e^{-mu(t-s)} dB has transition variance (1 - e^{-2 mu h}) / 2
    sd3 = math.sqrt(-math.expm1(-2 * mu * h) / 2.0)
    gb = substream(seed, rep, "bridge")
    z2 = gb.standard_normal(steps)
    z2_end = gb.standard_normal()
    z3 = substream(seed, rep, "diffusion").standard_normal(steps)
    zeta = substream(seed, rep, "kiefer").random(int(math.floor(n_emp * mu * t[-1])))
    z1 = np.exp(-mu * t) * x0
    if q0 > 0:
        bridge = np.concatenate(([0.0], _bridge_at(-np.expm1(-mu * t[1:]), z2, z2_end)))
    else:
        bridge = np.zeros(steps + 1)
    z3p = np.empty(steps + 1)
    z3p[0] = 0.0
    acc = 0.0
    for k in range(steps):
        acc = acc * a + sd3 * z3[k]
        z3p[k + 1] = acc
    return z1 + math.sqrt(q0) * bridge + z3p + _empirical_term(t, n_emp, mu, zeta)


def fourth_rep_limit(q0, mu, n_emp, seed, R, dt, T, x0=0.0, first=0):
    """Ensemble of ``e^{-mu t} X0 + sqrt(q0) W0(1 - e^{-mu t}) + sqrt(mu) int e^{-mu(t-s)} dB + Z4``.

    ``W0`` is a Brownian bridge sampled exactly at the needed points, the
    stochastic integral is sampled with its exact transition and ``Z4``
    uses the sequential empirical process of ``n_emp`` uniforms in place
    of its Kiefer-process limit.

    Returns
    -------
    DiffusionEnsemble
        ``X`` on the uniform grid of step ``dt`` (``t[0] = 0``).
    """
    if not 0 <= q0 <= 1:
        raise DomainError("q0 must lie in [0, 1]")
    if not mu > 0:
        raise DomainError("mu must be positive")
    if n_emp < 1000:
        warnings.warn("n_emp below 1000: the empirical term is a coarse approximation",
                      ApproximationWarning)
    steps = max(1, int(round(T / dt)))
    t = np.arange(steps + 1) * (T / steps)
    out = np.empty((R, steps + 1))
    for i in range(R):
        out[i] = fourth_rep_path(q0, mu, n_emp, seed, first + i, t, x0)
    return DiffusionEnsemble(t, out)


def bhat_paths(ens, mu):
    """``B(t) = X(t) - X(0) + mu int_0^t X(s) ds`` by the trapezoid rule on the ensemble grid."""
    X = ens.X
    dt = np.diff(ens.t)
    trap = np.concatenate((np.zeros((X.shape[0], 1)), np.cumsum(0.5 * (X[:, 1:] + X[:, :-1]) * dt, axis=1)), axis=1)
    return X - X[:, :1] + mu * trap


# ---------------------------------------------------------------------------
# marginal laws


@dataclass(frozen=True)
class Moments:
    mean: float
    var: float
    approximate: bool = False


def _normal_partials(m, v):
    s = math.sqrt(max(v, 0.0))
    if s == 0.0:
        neg = min(m, 0.0)
        pos = max(m, 0.0)
        return neg, pos, m * neg, m * pos
    r = m / s
    Phi_p, Phi_n = stats.norm.cdf(r), stats.norm.cdf(-r)
    phi = stats.norm.pdf(r)
    e_neg = m * Phi_n - s * phi
    e_pos = m * Phi_p + s * phi
    e2_neg = (m * m + v) * Phi_n - m * s * phi
    e2_pos = (m * m + v) * Phi_p + m * s * phi
    return e_neg, e_pos, e2_neg, e2_pos


def marginal_moments(spec, t):
    """Mean and variance of ``X(t)`` from a point start.

    Closed form for OU.  For ``theta != mu`` the Gaussian-closure moment
    equations are integrated and the result is flagged approximate.
    """
    if not math.isinf(spec.kappa):
        raise UnsupportedConstructionError("moments of the reflected diffusion are not available")
    t = float(t)
    if t < 0:
        raise DomainError("t must be nonnegative")
    mu, beta = spec.mu, spec.beta
    v_inf = spec.sigma2 / (2 * mu)
    if spec.theta == mu:
        e = math.exp(-mu * t)
        return Moments(-beta + (spec.x0 + beta) * e,
                       spec.x0_var * e * e + v_inf * -math.expm1(-2 * mu * t))
    if t == 0:
        return Moments(spec.x0, spec.x0_var, True)

    def rhs(_, y):
        m, v = y
        e_neg, e_pos, e2_neg, e2_pos = _normal_partials(m, v)
        eh = -mu * e_neg - spec.theta * e_pos
        exh = -mu * e2_neg - spec.theta * e2_pos
        return [-beta * mu + eh, 2.0 * (exh - m * eh) + spec.sigma2]

    sol = integrate.solve_ivp(rhs, (0.0, t), [spec.x0, spec.x0_var], rtol=1e-10, atol=1e-12)
    return Moments(float(sol.y[0, -1]), float(sol.y[1, -1]), True)


def ou_cdf(spec, t):
    """Callable cdf of the OU marginal at ``t``."""
    mom = marginal_moments(spec, t)
    sd = math.sqrt(mom.var)
    return lambda x: stats.norm.cdf(x, loc=mom.mean, scale=sd)
