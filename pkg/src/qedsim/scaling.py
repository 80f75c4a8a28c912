"""QED-regime parameters and the fluid / diffusion scalings of queue paths."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .paths import PiecewiseLinearPath, StepPath, cumulative_integral


def qed_params(n, mu, beta):
    """Arrival rate ``n*mu - beta*mu*sqrt(n)`` of the QED sequence."""
    if n <= 0 or mu <= 0:
        raise DomainError("n and mu must be positive")
    lam = n * mu - beta * mu * math.sqrt(n)
    if lam <= 0:
        raise DomainError(f"arrival rate {lam} is not positive (beta too large for n)")
    return lam


def room_size(n, kappa):
    """Waiting-room size ``round(kappa * sqrt(n))``; infinite kappa gives inf."""
    if kappa < 0:
        raise DomainError("kappa must be nonnegative")
    if math.isinf(kappa):
        return math.inf
    return int(round(kappa * math.sqrt(n)))


@dataclass(frozen=True)
class QedSequence:
    """A family of models indexed by ``n`` with fixed slack and scaled room."""

    beta: float
    mu: float
    theta: float = 0.0
    kappa: float = math.inf
    n_list: tuple = field(default=(100, 400, 1600))

    def __post_init__(self):
        for n in self.n_list:
            qed_params(n, self.mu, self.beta)
        if self.kappa < 0:
            raise DomainError("kappa must be nonnegative")

    def lambda_n(self, n):
        return qed_params(n, self.mu, self.beta)

    def m_n(self, n):
        return room_size(n, self.kappa)


def _centering_values(centering, t):
    if centering is None:
        return np.ones_like(t)
    if callable(centering):
        return np.asarray([centering(float(s)) for s in t], dtype=float)
    return np.full_like(t, float(centering))


def clt_scale(Q, n, centering=None):
    """``(Q(t) - n q(t)) / sqrt(n)``.

    With ``centering`` None (q = 1) this is ``(Q - n)/sqrt(n)`` and the
    result is a StepPath.  For a time-varying ``q`` the result is exact at
    the jump epochs of Q and evaluated on the union with ``grid`` points
    when ``centering`` is given as a callable; in that case a GridPath-like
    StepPath is not meaningful, so a callable returns a function of t.
    """
    if n <= 0:
        raise DomainError("n must be positive")
    rn = math.sqrt(n)
    if centering is None or not callable(centering):
        c = 1.0 if centering is None else float(centering)
        return (Q - n * c) / rn

    def scaled(t):
        t = np.asarray(t, dtype=float)
        q = _centering_values(centering, np.atleast_1d(t)).reshape(t.shape)
        return (Q.eval(t) - n * q) / rn

    return scaled


def fluid_scale(Q, n):
    """``Q / n``."""
    if n <= 0:
        raise DomainError("n must be positive")
    return Q / n


def truncate_initial(q0, n):
    """Initial content capped at ``2n``."""
    return min(int(q0), 2 * int(n))


def random_time_change_paths(r):
    """Scaled cumulative intensities ``(lambda t/n, mu/n int(Q^n), theta/n int(Q-n)^+)``."""
    from .models import Family

    spec = r.spec
    n = spec.n
    T = r.Q.horizon
    phi_a = PiecewiseLinearPath.linear(spec.lambda_n / n, T)
    if spec.family == Family.INFINITE_SERVER:
        busy = r.Q
    else:
        busy = r.Q.map(lambda q: np.minimum(q, n))
    phi_s = cumulative_integral(busy) * (spec.mu / n)
    if spec.family == Family.INFINITE_SERVER or spec.theta == 0:
        phi_r = PiecewiseLinearPath.linear(0.0, T)
    else:
        phi_r = cumulative_integral(r.Q.map(lambda q: np.maximum(q - n, 0))) * (spec.theta / n)
    return {"Phi_A": phi_a, "Phi_S": phi_s, "Phi_R": phi_r}


def sup_deviation(p, target_slope, intercept=0.0):
    """``sup_t |p(t) - (intercept + target_slope t)|`` for a StepPath or PL path."""
    if isinstance(p, StepPath):
        # extremes of a step minus a line sit at the left/right ends of sojourns
        ep = np.concatenate(([0.0], p.epochs, [p.horizon]))
        right = p.eval(ep) - (intercept + target_slope * ep)
        left = np.concatenate(([p.initial], p.levels)) - (intercept + target_slope * ep)
        return float(max(np.abs(right).max(), np.abs(left).max()))
    diff = p - PiecewiseLinearPath.linear(target_slope, p.horizon, intercept)
    return diff.sup_abs()
