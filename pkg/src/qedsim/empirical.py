"""
Sequential empirical processes and the service-time decomposition of the
infinite-server content.

For i.i.d. service times ``eta_i`` with cdf ``F`` and ``zeta_i = F(eta_i)``:

    K_n(t, x) = (1/n) sum_{i <= floor(nt)} 1(eta_i <= x)
    U_n(t, x) = (1/sqrt n) sum_{i <= floor(nt)} (1(zeta_i <= x) - x)
    V_n(t, x) = U_n(A_n(t)/n, F(x))
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError, UnsupportedConstructionError
from .laws import Law
from .models import Construction, Family


def _prefix(n, t, size):
    m = np.floor(np.asarray(t, dtype=float) * n + 1e-9).astype(np.int64)
    if np.any(m < 0):
        raise DomainError("t must be nonnegative")
    if np.any(m > size):
        raise DomainError(f"floor(n t) = {int(np.max(m))} exceeds the {size} available samples")
    return m


def _prefix_counts(values, m, x):
    """``#{i < m : values[i] <= x}`` for every (m, x) pair on a grid."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = np.atleast_1d(m)
    ind = values[None, :] <= x[:, None]
    cum = np.concatenate((np.zeros((x.size, 1), np.int64), np.cumsum(ind, axis=1)), axis=1)
    return cum[:, m].T  # (len m, len x)


@dataclass(frozen=True)
class SeqEmpirical:
    """Sequential empirical process of ``samples`` at scale ``n``.

    ``law`` is the common distribution of the samples; None means they are
    uniforms on [0, 1] already.
    """

    n: int
    samples: np.ndarray
    law: Law | None = None

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    @property
    def uniforms(self):
        if self.law is None:
            return self.samples
        return np.asarray(self.law.cdf(self.samples), dtype=float)

    def k(self, t, x):
        """``K_n`` on the grid ``t x x`` (shape ``(len t, len x)``)."""
        m = _prefix(self.n, np.atleast_1d(t), self.samples.size)
        x = np.where(np.isinf(np.atleast_1d(np.asarray(x, dtype=float))), np.inf, x)
        return _prefix_counts(self.samples, m, x) / self.n

    def u(self, t, x):
        """``U_n`` on the grid ``t x x`` with ``x`` in [0, 1]."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((x < 0) | (x > 1)):
            raise DomainError("U_n is indexed by x in [0, 1]")
        m = _prefix(self.n, np.atleast_1d(t), self.samples.size)
        counts = _prefix_counts(self.uniforms, m, x)
        return (counts - m[:, None] * x[None, :]) / math.sqrt(self.n)

    def v(self, arrivals, x):
        """``V_n(t, x)`` given the arrival counts ``A_n(t)`` (array) and service levels ``x``."""
        if self.law is None:
            raise DomainError("V_n needs the service law")
        arrivals = np.atleast_1d(np.asarray(arrivals, dtype=np.int64))
        fx = np.atleast_1d(np.asarray(self.law.cdf(x), dtype=float))
        if np.any(arrivals > self.samples.size):
            raise DomainError("more arrivals than samples")
        counts = _prefix_counts(self.uniforms, arrivals, fx)
        return (counts - arrivals[:, None] * fx[None, :]) / math.sqrt(self.n)


def k_field(samples, n, t, x):
    """``K_n(t, x) = (1/n) #{i <= floor(n t) : samples[i] <= x}`` at one point."""
    if t < 0 or x < 0:
        raise DomainError("t and x must be nonnegative")
    samples = np.asarray(samples, dtype=float)
    m = int(_prefix(n, t, samples.size))
    return float(np.count_nonzero(samples[:m] <= x)) / n


def write_field_csv(t, x, values, fh):
    """CSV rows ``t,x,value`` for a field sampled on ``t x x``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "x", "value"])
    for i, ti in enumerate(np.atleast_1d(t)):
        for j, xj in enumerate(np.atleast_1d(x)):
            w.writerow([repr(float(ti)), repr(float(xj)), repr(float(values[i, j]))])


# ---------------------------------------------------------------------------
# fluid centering and the decomposition of Q


def fwlln_center(q0, F, F0, t, rate=None):
    """``q(t) = q0 F0^c(t) + int_0^t F^c(t - s) da(s)`` with ``a(s) = rate * s``.

    ``rate`` defaults to ``1 / mean(F)`` (critical loading).
    """
    t = float(t)
    if t < 0:
        raise DomainError("t must be nonnegative")
    rate = 1.0 / F.mean if rate is None else float(rate)
    return q0 * float(F0.sf(t)) + rate * F.integrated_sf(t)


def _integrated_sf_grid(F, t):
    """``int_0^t F^c`` on an increasing grid (closed form where available)."""
    if F.kind in ("exponential", "deterministic"):
        return np.array([F.integrated_sf(s) for s in t])
    # cumulative quadrature between consecutive grid points
    out = np.zeros(t.size)
    prev, acc = 0.0, 0.0
    for i, s in enumerate(t):
        if s > prev:
            acc += integrate.quad(lambda u: float(F.sf(u)), prev, s, limit=200)[0]
            prev = s
        out[i] = acc
    return out


@dataclass(frozen=True)
class FourthDecomposition:
    """Pieces of ``Q(t)`` on a time grid.

    ``Q = initial_noise + initial_mean + fluid + sqrt(n) (M1 - M2)`` where

    * ``initial_noise = sum_{i <= Q0} (1(eta0_i > t) - F0^c(t))``
    * ``initial_mean = Q0 F0^c(t)``
    * ``fluid = lambda int_0^t F^c(u) du``
    * ``M1 = (1/sqrt n) (sum_{tau_i <= t} F^c(t - tau_i) - lambda int_0^t F^c)``
    * ``M2 = (1/sqrt n) sum_{tau_i <= t} (1(tau_i + eta_i <= t) - F(t - tau_i))``
    """

    n: int
    t: np.ndarray
    Q: np.ndarray
    initial_noise: np.ndarray
    initial_mean: np.ndarray
    fluid: np.ndarray
    M1: np.ndarray
    M2: np.ndarray

    def reconstruct(self):
        return self.initial_noise + self.initial_mean + self.fluid + math.sqrt(self.n) * (self.M1 - self.M2)

    def residual(self):
        return float(np.max(np.abs(self.Q - self.reconstruct())))

    def scaled(self, q0=None):
        """``X_n = (Q - n q)/sqrt(n)`` with the fluid centering at initial fill ``Q0/n``."""
        q0 = self.initial_mean[0] / self.n if q0 is None else q0
        return (self.Q - self.initial_mean - self.fluid) / math.sqrt(self.n), q0


def fourth_decomposition(r, n=None, t_grid=None):
    """Decompose an infinite-server service-times path into its five pieces.

    Evaluated at ``t_grid`` (default: 0, every event epoch and T).
    """
    if r.construction != Construction.SERVICE_TIMES or r.spec.family != Family.INFINITE_SERVER:
        raise UnsupportedConstructionError("needs an infinite-server service-times realization")
    spec = r.spec
    n = spec.n if n is None else int(n)
    if t_grid is None:
        t_grid = np.unique(np.concatenate(([0.0], r.events[0], [r.horizon])))
    t = np.asarray(t_grid, dtype=float)
    d = r.service_data
    F, F0 = spec.service, spec.initial_service
    tau, eta, eta0 = d["tau"], d["eta"], d["eta0"]
    q0 = eta0.size
    f0c = np.asarray(F0.sf(t), dtype=float)
    init_alive = np.count_nonzero(eta0[None, :] > t[:, None], axis=1) if q0 else np.zeros(t.size)
    initial_noise = init_alive - q0 * f0c
    initial_mean = q0 * f0c
    lam = spec.lambda_n
    fluid = lam * _integrated_sf_grid(F, t)
    sum_sf = np.zeros(t.size)
    sum_done_minus_cdf = np.zeros(t.size)
    chunk = max(1, 2_000_000 // max(tau.size, 1))
    for a in range(0, t.size, chunk):
        tt = t[a : a + chunk, None]
        arrived = tau[None, :] <= tt
        lag = np.where(arrived, tt - tau[None, :], 0.0)
        sf = np.where(arrived, F.sf(lag), 0.0)
        done = arrived & (tau[None, :] + eta[None, :] <= tt)
        sum_sf[a : a + chunk] = sf.sum(axis=1)
        sum_done_minus_cdf[a : a + chunk] = (done.astype(float) - np.where(arrived, 1.0 - sf, 0.0)).sum(axis=1)
    rn = math.sqrt(n)
    return FourthDecomposition(
        n=n,
        t=t,
        Q=np.asarray(r.Q.eval(t), dtype=float),
        initial_noise=initial_noise.astype(float),
        initial_mean=initial_mean,
        fluid=fluid,
        M1=(sum_sf - fluid) / rn,
        M2=sum_done_minus_cdf / rn,
    )
