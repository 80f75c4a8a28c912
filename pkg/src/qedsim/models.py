"""
Many-server queue models and three exact sample-path constructions.

Families: ``InfiniteServer`` (M/M/inf, G/GI/inf), ``ErlangA`` (M/M/n+M),
``FiniteRoom`` (M/M/n/m+M) and ``GeneralArrival`` (G/M/n/m+M, renewal
arrivals).  Constructions:

``time_change``
    Unit-rate Poisson streams composed with the cumulative service and
    abandonment intensities.
``thinning``
    One rate-``mu`` stream per occupancy level, kept only while the level
    is busy.
``service_times``
    Explicit service requirements of every customer (infinite servers only).
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, UnsupportedConstructionError
from .laws import InitialLaw, Law
from .paths import PiecewiseLinearPath, StepPath, cumulative_integral
from .rng import substream
from .scaling import qed_params, room_size

EVENT_NAMES = ("arrival", "departure", "abandonment", "blocked")


class Family(str, enum.Enum):
    INFINITE_SERVER = "InfiniteServer"
    ERLANG_A = "ErlangA"
    FINITE_ROOM = "FiniteRoom"
    GENERAL_ARRIVAL = "GeneralArrival"


class Construction(str, enum.Enum):
    TIME_CHANGE = "time_change"
    THINNING = "thinning"
    SERVICE_TIMES = "service_times"


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of one queue in a many-server sequence.

    Parameters
    ----------
    family : Family
    n : int
        Number of servers; for ``InfiniteServer`` only the scale index.
    mu, theta : float
        Service and abandonment rates (``theta`` ignored with infinite servers).
    lambda_n : float
        Arrival rate.
    m_n : float
        Waiting-room size, ``math.inf`` for an unlimited room.
    arrival : Law or None
        Interarrival law for renewal arrivals; None means Poisson(lambda_n).
    service, initial_service : Law or None
        Service law of new and of initially present customers; default
        exponential(mu), and the initial law defaults to the service law.
    initial : InitialLaw or None
        Law of ``Q(0)``; default the point mass at ``n``.
    """

    family: Family
    n: int
    mu: float
    lambda_n: float
    theta: float = 0.0
    m_n: float = math.inf
    arrival: Law | None = None
    service: Law | None = None
    initial_service: Law | None = None
    initial: InitialLaw | None = None

    def __post_init__(self):
        try:
            fam = Family(self.family)
        except ValueError:
            raise ConfigError("family", f"unknown family {self.family!r}") from None
        object.__setattr__(self, "family", fam)
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        if not self.mu > 0:
            raise DomainError("mu must be positive")
        if self.theta < 0:
            raise DomainError("theta must be nonnegative")
        if self.lambda_n < 0:
            raise DomainError("lambda_n must be nonnegative")
        if self.m_n < 0:
            raise DomainError("m_n must be nonnegative")
        if fam == Family.INFINITE_SERVER:
            if not math.isinf(self.m_n):
                raise DomainError("InfiniteServer requires m_n = inf")
            object.__setattr__(self, "theta", 0.0)
        if fam == Family.ERLANG_A and not math.isinf(self.m_n):
            raise DomainError("ErlangA has an unlimited waiting room; use FiniteRoom")
        if fam == Family.GENERAL_ARRIVAL and self.arrival is None:
            raise DomainError("GeneralArrival requires a renewal interarrival law")
        if self.arrival is not None and not self.lambda_n > 0:
            raise DomainError("renewal arrivals need lambda_n > 0")
        if self.arrival is not None and abs(self.arrival.mean * self.lambda_n - 1.0) > 1e-9:
            raise DomainError("interarrival mean must equal 1/lambda_n")
        if self.service is None:
            object.__setattr__(self, "service", Law.exponential(self.mu))
        if self.initial_service is None:
            object.__setattr__(self, "initial_service", self.service)
        if self.initial is None:
            object.__setattr__(self, "initial", InitialLaw("point", float(self.n)))
        if not math.isinf(self.m_n):
            object.__setattr__(self, "m_n", int(self.m_n))
            if self.initial.kind == "point" and self.initial.value > self.capacity:
                raise DomainError("initial content exceeds n + m_n")

    # derived quantities -------------------------------------------------------
    @property
    def servers(self):
        return math.inf if self.family == Family.INFINITE_SERVER else self.n

    @property
    def capacity(self):
        return math.inf if math.isinf(self.m_n) else self.n + self.m_n

    @property
    def is_markovian(self):
        return self.service.is_exponential and self.service.rate == self.mu and (
            self.initial_service.is_exponential and self.initial_service.rate == self.mu
        )

    @property
    def poisson_arrivals(self):
        return self.arrival is None

    def with_(self, **changes):
        return replace(self, **changes)

    # config round trip --------------------------------------------------------
    @classmethod
    def from_config(cls, cfg):
        """Build from a JSON-style dict.

        Recognised keys: ``family, n, mu, theta, m_n | kappa,
        beta | lambda_n, arrival, service, initial_service, initial``.
        Other keys (horizon, replications, seed) are ignored here.
        """
        if "family" not in cfg:
            raise ConfigError("family", "missing")
        for key in ("n", "mu"):
            if key not in cfg:
                raise ConfigError(key, "missing")
        n = cfg["n"]
        mu = float(cfg["mu"])
        try:
            fam = Family(cfg["family"])
        except ValueError:
            raise ConfigError("family", f"unknown family {cfg['family']!r}") from None
        if "lambda_n" in cfg:
            lam = float(cfg["lambda_n"])
        else:
            try:
                lam = qed_params(n, mu, float(cfg.get("beta", 0.0)))
            except DomainError as e:
                raise ConfigError("beta", str(e)) from None
        if "m_n" in cfg and cfg["m_n"] is not None:
            m = math.inf if cfg["m_n"] in ("inf", math.inf) else int(cfg["m_n"])
        elif "kappa" in cfg and cfg["kappa"] is not None:
            m = room_size(n, float(cfg["kappa"]))
        else:
            m = math.inf
        arrival = None
        arr = cfg.get("arrival")
        if arr not in (None, "Poisson", "poisson"):
            arr = dict(arr)
            kind = arr.pop("kind", None) or arr.pop("dist", None)
            if kind is None:
                raise ConfigError("arrival.kind", "missing")
            if kind.lower() != "poisson":
                arrival = Law.with_mean(kind, 1.0 / lam, **arr)
        service = _law_field(cfg, "service")
        init_service = _law_field(cfg, "initial_service")
        initial = InitialLaw.from_dict(cfg["initial"]) if "initial" in cfg else None
        try:
            return cls(
                family=fam,
                n=n,
                mu=mu,
                lambda_n=lam,
                theta=float(cfg.get("theta", 0.0)),
                m_n=m,
                arrival=arrival,
                service=service,
                initial_service=init_service,
                initial=initial,
            )
        except DomainError as e:
            raise ConfigError("model", str(e)) from None

    def to_config(self):
        out = {
            "family": self.family.value,
            "n": self.n,
            "mu": self.mu,
            "theta": self.theta,
            "lambda_n": self.lambda_n,
            "m_n": "inf" if math.isinf(self.m_n) else self.m_n,
            "service": self.service.to_dict(),
            "initial_service": self.initial_service.to_dict(),
            "initial": self.initial.to_dict(),
        }
        out["arrival"] = "Poisson" if self.arrival is None else self.arrival.to_dict()
        return out


def _law_field(cfg, key):
    v = cfg.get(key)
    if v is None:
        return None
    if isinstance(v, str):
        v = {"kind": v}
    v = dict(v)
    if "mean" in v and v.get("kind") not in ("lognormal",):
        kind = v.pop("kind")
        mean = v.pop("mean")
        return Law.with_mean(kind, mean, **v)
    return Law.from_dict(v)


@dataclass(frozen=True)
class QueueRealization:
    """One sample path of a queue and its event streams.

    ``Q`` is the content, ``A, D, L, U`` count arrivals (admitted or not),
    departures, abandonments and blocked arrivals.  ``events`` holds the
    chronological log ``(t, type, Q_after)``; ``clocks`` the time-change
    data and ``service_data`` the customer-level draws, when available.
    """

    spec: ModelSpec
    Q: StepPath
    A: StepPath
    D: StepPath
    L: StepPath
    U: StepPath
    construction: Construction
    seed: int
    replication: int
    events: tuple
    clocks: dict = field(default_factory=dict)
    service_data: dict | None = None

    @property
    def horizon(self):
        return self.Q.horizon

    @property
    def q0(self):
        return int(self.Q.initial)


@dataclass(frozen=True)
class TwoParamSnapshot:
    """Counts ``Q(t, y)`` of customers present at ``t`` with elapsed service >= ``y``."""

    t: float
    y: np.ndarray
    counts: np.ndarray


# ---------------------------------------------------------------------------
# random inputs


def _unit_epochs(rng, bound, chunk=1024):
    """Epochs of a unit-rate Poisson process up to and one past ``bound``."""
    parts = []
    total = 0.0
    size = max(chunk, int(bound + 4 * math.sqrt(bound + 1) + 16))
    while True:
        e = total + np.cumsum(rng.standard_exponential(size))
        parts.append(e)
        total = e[-1]
        if total > bound:
            break
        size = max(chunk, int(bound - total + 4 * math.sqrt(bound - total + 1) + 16))
    out = np.concatenate(parts)
    stop = np.searchsorted(out, bound, side="right")
    return out[: stop + 1]


def poisson_arrivals(rate, rng, T):
    """Arrival epochs of a rate-``rate`` Poisson process on ``(0, T]``.

    Built as ``A(rate t)`` from a unit-rate stream; the unit epochs are
    returned too so the stream can be reconstructed.
    """
    unit = _unit_epochs(rng, rate * T)
    unit = unit[unit <= rate * T]
    return unit / rate, unit


def renewal_epochs(law, rng, T):
    """Epochs in ``(0, T]`` of an ordinary renewal process with interarrival ``law``."""
    mean = law.mean
    if not mean > 0:
        raise DomainError("interarrival mean must be positive")
    if law.kind == "deterministic":
        # exact lattice, avoids drift of cumulated floating sums
        k = np.arange(1, int(math.floor(T / mean * (1 + 1e-15))) + 2)
        e = k * mean
        return e[e <= T]
    parts = []
    total = 0.0
    size = int(T / mean * 1.1) + 32
    while total <= T:
        e = total + np.cumsum(law.sample(rng, size))
        parts.append(e)
        total = e[-1]
        size = int((T - total) / mean * 1.1) + 32 if total <= T else size
    e = np.concatenate(parts)
    return e[e <= T]


def renewal_arrivals(law, lambda_n, seed, T, replication=0):
    """Counting path of renewal arrivals with interarrival ``law`` rescaled to mean ``1/lambda_n``."""
    if not lambda_n > 0:
        raise DomainError("lambda_n must be positive")
    if law.mean <= 0:
        raise DomainError("interarrival mean must be positive")
    if abs(law.mean * lambda_n - 1.0) > 1e-12:
        shape = {"k": law.params["k"]} if law.kind == "erlang" else {}
        if law.kind in ("gamma", "lognormal"):
            shape = {"scv": law.scv}
        law = Law.with_mean(law.kind, 1.0 / lambda_n, **shape)
    rng = substream(seed, replication, "arrivals")
    return StepPath.counting(renewal_epochs(law, rng, T), T)


def _arrival_times(spec, rng, T):
    if spec.arrival is None:
        return poisson_arrivals(spec.lambda_n, rng, T)
    return renewal_epochs(spec.arrival, rng, T), None


def _initial_content(spec, seed, replication):
    q0 = spec.initial.sample(substream(seed, replication, "initial"))
    if not math.isinf(spec.capacity):
        q0 = min(q0, spec.capacity)
    return int(q0)


def _count_limits(spec):
    servers = _kernels.INF_COUNT if math.isinf(spec.servers) else np.int64(spec.servers)
    capacity = _kernels.INF_COUNT if math.isinf(spec.capacity) else np.int64(spec.capacity)
    return servers, capacity


def _require_markovian(spec, what):
    if not spec.is_markovian:
        raise UnsupportedConstructionError(f"{what} needs exponential(mu) service laws")


# ---------------------------------------------------------------------------
# constructions


def _assemble(spec, q0, times, types, q_after, T, construction, seed, replication, clocks=None,
              service_data=None):
    types = np.asarray(types)
    admitted = types != 3
    Q = StepPath.from_increments(
        times[admitted], np.diff(np.concatenate(([q0], q_after[admitted]))), q0, T
    )
    arrivals = times[(types == 0) | (types == 3)]
    return QueueRealization(
        spec=spec,
        Q=Q,
        A=StepPath.counting(arrivals, T),
        D=StepPath.counting(times[types == 1], T),
        L=StepPath.counting(times[types == 2], T),
        U=StepPath.counting(times[types == 3], T),
        construction=construction,
        seed=seed,
        replication=replication,
        events=(times, types.astype(np.int8), q_after),
        clocks=clocks or {},
        service_data=service_data,
    )


def construct_time_change(spec, seed, T, replication=0):
    """Queue path from unit-rate streams run on the intensity clocks.

    ``D(t) = S(mu int (Q ^ n))`` and ``L(t) = R(theta int (Q - n)^+)`` with
    independent unit-rate Poisson processes ``S, R``.  Arrivals are
    ``A(lambda t)`` for Poisson input, or a renewal path.

    Returns
    -------
    QueueRealization
        ``clocks`` carries the final clock values ``I_S(T), I_R(T)`` and the
        unit epochs consumed from each stream.
    """
    _require_markovian(spec, "time-change construction")
    if T <= 0:
        raise DomainError("horizon must be positive")
    q0 = _initial_content(spec, seed, replication)
    arr, a_unit = _arrival_times(spec, substream(seed, replication, "arrivals"), T)
    servers, capacity = _count_limits(spec)
    # pathwise bound I_S(T) <= mu T (Q(0) + A(T)), likewise for I_R
    crude = q0 + arr.size
    s_epochs = _unit_epochs(substream(seed, replication, "service"), spec.mu * T * crude)
    theta = spec.theta if spec.family != Family.INFINITE_SERVER else 0.0
    r_epochs = _unit_epochs(substream(seed, replication, "abandon"), theta * T * crude)
    times, types, q_after, clock_s, clock_r, js, jr, exhausted = _kernels.time_change_loop(
        np.int64(q0), servers, capacity, float(spec.mu), float(theta), arr, s_epochs, r_epochs, float(T)
    )
    if exhausted:  # pragma: no cover - excluded by the crude bound
        raise RuntimeError("unit stream supply exhausted")
    clocks = {
        "I_S": float(clock_s),
        "I_R": float(clock_r),
        "S_epochs": s_epochs[s_epochs <= clock_s],
        "R_epochs": r_epochs[r_epochs <= clock_r],
        "A_epochs": a_unit,
    }
    return _assemble(spec, q0, times, types, q_after, T, Construction.TIME_CHANGE, seed, replication, clocks)


def construct_thinning(spec, seed, T, replication=0):
    """Queue path where each occupancy level owns a rate-``mu`` Poisson stream.

    ``D(t) = sum_k int 1{Q(s-) ^ n >= k} dS_k(s)``; abandonments use one
    rate-``theta`` stream per waiting position.
    """
    _require_markovian(spec, "thinning construction")
    if T <= 0:
        raise DomainError("horizon must be positive")
    q0 = _initial_content(spec, seed, replication)
    arr, _ = _arrival_times(spec, substream(seed, replication, "arrivals"), T)
    servers, capacity = _count_limits(spec)
    theta = spec.theta if spec.family != Family.INFINITE_SERVER else 0.0
    max_level = q0 + arr.size
    g_s = substream(seed, replication, "thinning")
    g_r = substream(seed, replication, "abandon")
    base = int(2 * spec.mu * T * max_level + 64)
    s_gaps = g_s.standard_exponential(base)
    r_gaps = g_r.standard_exponential(int(2 * theta * T * max_level + 64))
    while True:
        times, types, q_after, ok = _kernels.thinning_loop(
            np.int64(q0), servers, capacity, float(spec.mu), float(theta), arr, s_gaps, r_gaps,
            np.int64(max_level), float(T),
        )
        if ok:
            break
        # extend both supplies; prefixes are unchanged so the path is too
        s_gaps = np.concatenate((s_gaps, g_s.standard_exponential(s_gaps.size)))
        r_gaps = np.concatenate((r_gaps, g_r.standard_exponential(r_gaps.size)))
    return _assemble(spec, q0, times, types, q_after, T, Construction.THINNING, seed, replication)


def construct_service_times(spec, seed, T, replication=0):
    """Infinite-server path from explicit service requirements.

    ``Q(t) = sum_{i <= Q(0)} 1(eta0_i > t) + sum_{i <= A(t)} 1(tau_i + eta_i > t)``
    with ``eta0`` drawn from the initial-service law and ``eta`` from the
    service law.  Works for any service laws and renewal arrivals.
    """
    if spec.family != Family.INFINITE_SERVER:
        raise UnsupportedConstructionError("service-times construction needs infinite servers")
    if T <= 0:
        raise DomainError("horizon must be positive")
    q0 = _initial_content(spec, seed, replication)
    tau, _ = _arrival_times(spec, substream(seed, replication, "arrivals"), T)
    eta = spec.service.sample(substream(seed, replication, "service"), tau.size)
    eta0 = spec.initial_service.sample(substream(seed, replication, "initial_service"), q0)
    dep = np.concatenate((eta0, tau + eta))
    dep_in = dep[dep <= T]
    # chronological log; arrivals before departures at equal times
    times = np.concatenate((tau, dep_in))
    types = np.concatenate((np.zeros(tau.size, np.int8), np.ones(dep_in.size, np.int8)))
    order = np.lexsort((types, times))
    times, types = times[order], types[order]
    q_after = q0 + np.cumsum(np.where(types == 0, 1, -1)).astype(np.int64)
    data = {"tau": tau, "eta": eta, "eta0": eta0}
    return _assemble(spec, q0, times, types, q_after, T, Construction.SERVICE_TIMES, seed, replication,
                     service_data=data)


def service_count(eta0, tau, eta, t):
    """``sum_i 1(eta0_i > t) + sum_{tau_i <= t} 1(tau_i + eta_i > t)`` by direct count."""
    eta0, tau, eta = (np.asarray(a, dtype=float) for a in (eta0, tau, eta))
    arrived = tau <= t
    return int(np.count_nonzero(eta0 > t) + np.count_nonzero(tau[arrived] + eta[arrived] > t))


_BUILDERS = {
    Construction.TIME_CHANGE: construct_time_change,
    Construction.THINNING: construct_thinning,
    Construction.SERVICE_TIMES: construct_service_times,
}


def simulate(spec, T, seed, replication=0, construction="time_change"):
    """Dispatch to one of the three constructions by name."""
    try:
        c = Construction(construction)
    except ValueError:
        raise ConfigError("construction", f"unknown construction {construction!r}") from None
    return _BUILDERS[c](spec, seed, T, replication)


# ---------------------------------------------------------------------------
# derived objects


def two_param_counts(r, t, y_grid):
    """``Q(t, y)`` for each ``y`` in ``y_grid``."""
    if r.construction != Construction.SERVICE_TIMES:
        raise UnsupportedConstructionError("two-parameter counts need the service-times construction")
    if not 0 <= t <= r.horizon:
        raise DomainError("t outside [0, T]")
    y = np.asarray(y_grid, dtype=float)
    if np.any(y < 0):
        raise DomainError("thresholds must be nonnegative")
    d = r.service_data
    # initial customers have elapsed service t >= y whenever y <= t
    init_alive = int(np.count_nonzero(d["eta0"] > t))
    tau = d["tau"]
    alive = tau[(tau <= t) & (tau + d["eta"] > t)]
    elapsed = np.sort(t - alive)
    n_ge = elapsed.size - np.searchsorted(elapsed, y, side="left")
    counts = np.where(y <= t, init_alive + n_ge, 0)
    return TwoParamSnapshot(float(t), y, counts.astype(np.int64))


def compensators(r):
    """Compensators ``lambda t``, ``mu int (Q ^ n)``, ``theta int (Q - n)^+``.

    ``comp_A`` is None for renewal arrivals (not a Poisson compensator).
    """
    if r.construction == Construction.SERVICE_TIMES:
        raise UnsupportedConstructionError("compensators need a Markovian construction")
    spec = r.spec
    T = r.horizon
    comp_a = PiecewiseLinearPath.linear(spec.lambda_n, T) if spec.poisson_arrivals else None
    if spec.family == Family.INFINITE_SERVER:
        busy = r.Q
        excess = None
    else:
        busy = r.Q.map(lambda q: np.minimum(q, spec.n))
        excess = r.Q.map(lambda q: np.maximum(q - spec.n, 0.0))
    comp_d = cumulative_integral(busy) * spec.mu
    if excess is None or spec.theta == 0:
        comp_l = PiecewiseLinearPath.linear(0.0, T)
    else:
        comp_l = cumulative_integral(excess) * spec.theta
    return {"comp_A": comp_a, "comp_D": comp_d, "comp_L": comp_l}


def audit(r):
    """Check the structural invariants of a realization.

    Returns
    -------
    dict
        ``flow_residual`` (max |Q - (Q0 + A - D - L - U)| over epochs) and a
        list of ``violations`` (empty when all invariants hold).
    """
    spec = r.spec
    viol = []
    ep = np.unique(np.concatenate((r.Q.epochs, r.A.epochs, r.D.epochs, r.L.epochs, r.U.epochs)))
    ep = np.concatenate(([0.0], ep))
    flow = r.Q.initial + r.A.eval(ep) - r.D.eval(ep) - r.L.eval(ep) - r.U.eval(ep)
    resid = float(np.max(np.abs(r.Q.eval(ep) - flow)))
    if resid != 0:
        viol.append("flow conservation")
    for name in "ADLU":
        p = getattr(r, name)
        dj = np.diff(p.levels)
        if np.any(dj != 1):
            viol.append(f"{name} is not a unit-jump counting path")
    if np.any(r.Q.levels < 0):
        viol.append("negative content")
    if not math.isinf(spec.capacity) and np.any(r.Q.levels > spec.capacity):
        viol.append("content above capacity")
    times, types, q_after = r.events
    q_before = np.concatenate(([r.q0], q_after[:-1]))
    if np.any(q_before[types == 1] < 1):
        viol.append("departure from an empty system")
    if not math.isinf(spec.servers) and np.any(q_before[types == 2] <= spec.servers):
        viol.append("abandonment with no one waiting")
    if np.any(q_before[types == 3] < spec.capacity):
        viol.append("blocking below capacity")
    if np.any(r.Q.eval(ep) > r.Q.initial + r.A.eval(ep)):
        viol.append("crude bound Q <= Q(0) + A")
    return {"flow_residual": resid, "violations": viol}


def write_event_log(r, fh):
    """CSV rows ``t,event_type,Q_after`` in chronological order."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "event_type", "Q_after"])
    times, types, q_after = r.events
    for t, k, q in zip(times.tolist(), types.tolist(), q_after.tolist()):
        w.writerow([repr(t), EVENT_NAMES[k], q])
