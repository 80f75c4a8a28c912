import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from qedsim import _kernels
from qedsim.errors import ConfigError, DomainError, UnsupportedConstructionError
from qedsim.laws import InitialLaw, Law
from qedsim.models import (Construction, Family, ModelSpec, audit, compensators, renewal_arrivals,
                           service_count, simulate, two_param_counts, write_event_log)
from qedsim.scaling import qed_params, room_size
from qedsim.stats import ks_2samp_statistic


def mm_inf(n=50, lam=None, **kw):
    return ModelSpec(Family.INFINITE_SERVER, n, 1.0, float(n) if lam is None else lam, **kw)


def erlang_a(n=50, beta=1.0, theta=0.5):
    return ModelSpec(Family.ERLANG_A, n, 1.0, qed_params(n, 1.0, beta), theta=theta)


def finite_room(n=50, beta=0.0, theta=0.5, kappa=1.0):
    return ModelSpec(Family.FINITE_ROOM, n, 1.0, qed_params(n, 1.0, beta), theta=theta,
                     m_n=room_size(n, kappa))


def general(n=50):
    lam = qed_params(n, 1.0, 1.0)
    return ModelSpec(Family.GENERAL_ARRIVAL, n, 1.0, lam, theta=0.5,
                     arrival=Law.with_mean("erlang", 1 / lam, k=2))


ALL_SPECS = [mm_inf(), erlang_a(), finite_room(), general()]


# ModelSpec ---------------------------------------------------------------------


def test_spec_invariants():
    with pytest.raises(DomainError):
        ModelSpec(Family.ERLANG_A, 0, 1.0, 1.0)
    with pytest.raises(DomainError):
        ModelSpec(Family.ERLANG_A, 5, -1.0, 1.0)
    with pytest.raises(DomainError):
        ModelSpec(Family.ERLANG_A, 5, 1.0, 1.0, theta=-0.1)
    with pytest.raises(DomainError):
        ModelSpec(Family.FINITE_ROOM, 5, 1.0, 1.0, m_n=2, initial=InitialLaw("point", 8))
    with pytest.raises(ConfigError):
        ModelSpec("Bogus", 5, 1.0, 1.0)


def test_infinite_server_ignores_theta():
    spec = ModelSpec(Family.INFINITE_SERVER, 5, 1.0, 5.0, theta=3.0)
    assert spec.theta == 0.0 and math.isinf(spec.m_n)


def test_config_round_trip():
    cfg = {"family": "FiniteRoom", "n": 100, "mu": 2.0, "beta": 0.5, "theta": 0.3, "kappa": 1.0,
           "service": {"kind": "exponential", "rate": 2.0}}
    spec = ModelSpec.from_config(cfg)
    assert spec.lambda_n == 200 - 0.5 * 2 * 10 and spec.m_n == 10
    again = ModelSpec.from_config(spec.to_config())
    assert again == spec


def test_config_errors_name_field():
    with pytest.raises(ConfigError) as e:
        ModelSpec.from_config({"family": "Nope", "n": 3, "mu": 1})
    assert e.value.field == "family"
    with pytest.raises(ConfigError) as e:
        ModelSpec.from_config({"family": "ErlangA", "mu": 1})
    assert e.value.field == "n"


# invariants of every construction ----------------------------------------------


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family.value)
@pytest.mark.parametrize("construction", ["time_change", "thinning"])
def test_markovian_constructions_audit_clean(spec, construction):
    for rep in range(5):
        r = simulate(spec, 2.0, 11, rep, construction)
        a = audit(r)
        assert a["violations"] == [] and a["flow_residual"] == 0


@pytest.mark.parametrize("spec", [mm_inf(), mm_inf(service=Law.with_mean("lognormal", 1.0, scv=2.0)),
                                  mm_inf(initial=InitialLaw("poisson", 50))])
def test_service_times_audit_clean(spec):
    for rep in range(5):
        assert audit(simulate(spec, 2.0, 4, rep, "service_times"))["violations"] == []


@given(st.integers(0, 10_000), st.integers(1, 30), st.floats(0.0, 3.0), st.floats(0.0, 2.0))
def test_time_change_property(seed, n, beta, theta):
    lam = max(n - beta * math.sqrt(n), 0.5)
    for fam, kw in ((Family.ERLANG_A, {"theta": theta}),
                    (Family.FINITE_ROOM, {"theta": theta, "m_n": room_size(n, 1.0)})):
        r = simulate(ModelSpec(fam, n, 1.0, lam, **kw), 1.0, seed)
        assert audit(r)["violations"] == []


def test_deterministic_by_seed():
    a = simulate(erlang_a(), 1.0, 7, 3)
    b = simulate(erlang_a(), 1.0, 7, 3)
    assert np.array_equal(a.events[0], b.events[0]) and np.array_equal(a.events[1], b.events[1])
    c = simulate(erlang_a(), 1.0, 7, 4)
    assert not np.array_equal(a.events[0], c.events[0])


# spec examples -----------------------------------------------------------------


def test_pure_death_path():
    spec = ModelSpec(Family.INFINITE_SERVER, 10, 1.0, 0.0, initial=InitialLaw("point", 7))
    r = simulate(spec, 3.0, 2)
    assert r.D.final() <= 7 and np.all(np.diff(r.Q.levels) <= 0)


def test_thinning_empty_start_no_arrivals():
    spec = ModelSpec(Family.ERLANG_A, 3, 1.0, 0.0, theta=1.0, initial=InitialLaw("point", 0))
    r = simulate(spec, 5.0, 1, 0, "thinning")
    assert r.D.final() == 0 and r.Q.final() == 0


def test_thinning_single_server_departures_need_customer():
    spec = ModelSpec(Family.ERLANG_A, 1, 1.0, 0.8, theta=0.0, initial=InitialLaw("point", 0))
    r = simulate(spec, 20.0, 3, 0, "thinning")
    times, types, q_after = r.events
    q_before = np.concatenate(([0], q_after[:-1]))
    assert np.all(q_before[types == 1] >= 1) and r.D.final() > 0


def test_kernel_matches_interpreter_on_simulated_input():
    spec = erlang_a(30)
    r = simulate(spec, 2.0, 5)
    arr = r.A.epochs
    from qedsim.rng import substream
    from qedsim.models import _unit_epochs
    s_ep = _unit_epochs(substream(5, 0, "service"), 500.0)
    r_ep = _unit_epochs(substream(5, 0, "abandon"), 500.0)
    args = (np.int64(30), np.int64(30), _kernels.INF_COUNT, 1.0, 0.5, arr, s_ep, r_ep, 2.0)
    jit = _kernels.time_change_loop(*args)
    py = _kernels.time_change_loop.py_func(*args)
    for a, b in zip(jit[:3], py[:3]):
        assert np.array_equal(a, b)
    assert jit[3] == py[3] and jit[4] == py[4]


@given(st.integers(0, 40), st.integers(1, 10), st.integers(0, 10), st.floats(0.1, 3.0), st.floats(0.0, 3.0),
       st.integers(0, 2**31))
def test_kernels_match_interpreter(q0, servers, room, mu, theta, seed):
    rng = np.random.default_rng(seed)
    q0 = min(q0, servers + room)
    T = 2.0
    arr = np.cumsum(rng.exponential(0.2, 30))
    arr = arr[arr <= T]
    s_ep = np.cumsum(rng.exponential(1.0, 400))
    r_ep = np.cumsum(rng.exponential(1.0, 400))
    args = (np.int64(q0), np.int64(servers), np.int64(servers + room), mu, theta, arr, s_ep, r_ep, T)
    jit = _kernels.time_change_loop(*args)
    py = _kernels.time_change_loop.py_func(*args)
    for a, b in zip(jit[:3], py[:3]):
        assert np.array_equal(a, b)
    g1, g2 = rng.exponential(1.0, 400), rng.exponential(1.0, 400)
    targs = (np.int64(q0), np.int64(servers), np.int64(servers + room), mu, theta, arr, g1, g2,
             np.int64(q0 + arr.size), T)
    tj = _kernels.thinning_loop(*targs)
    tp = _kernels.thinning_loop.py_func(*targs)
    for a, b in zip(tj[:3], tp[:3]):
        assert np.array_equal(a, b)
    assert tj[3] == tp[3]


def test_stationary_start_mean():
    lam, n = 20.0, 20
    spec = mm_inf(n, lam, initial=InitialLaw("poisson", lam))
    q = np.array([simulate(spec, 1.0, 8, rep).Q.eval([0.5, 1.0]) for rep in range(2000)])
    se = q.std(axis=0, ddof=1) / math.sqrt(q.shape[0])
    assert np.all(np.abs(q.mean(axis=0) - lam) <= 3 * se)


def test_constructions_agree_in_law():
    spec = mm_inf(30)
    a = np.array([simulate(spec, 1.0, 1, rep, "time_change").Q.final() for rep in range(3000)])
    b = np.array([simulate(spec, 1.0, 2, rep, "thinning").Q.final() for rep in range(3000)])
    c = np.array([simulate(spec, 1.0, 3, rep, "service_times").Q.final() for rep in range(3000)])
    crit = 1.63 * math.sqrt(2 / 3000)
    assert ks_2samp_statistic(a, b) <= crit and ks_2samp_statistic(a, c) <= crit


def test_erlang_a_constructions_agree_in_law():
    spec = erlang_a(25, 0.5, 0.7)
    a = np.array([simulate(spec, 1.0, 1, rep, "time_change").Q.final() for rep in range(3000)])
    b = np.array([simulate(spec, 1.0, 2, rep, "thinning").Q.final() for rep in range(3000)])
    assert ks_2samp_statistic(a, b) <= 1.63 * math.sqrt(2 / 3000)


def test_service_times_requires_infinite_servers():
    with pytest.raises(UnsupportedConstructionError):
        simulate(erlang_a(), 1.0, 0, 0, "service_times")


def test_markovian_constructions_reject_general_service():
    spec = mm_inf(service=Law.deterministic(1.0))
    with pytest.raises(UnsupportedConstructionError):
        simulate(spec, 1.0, 0)


def test_deterministic_service_shifts_arrivals():
    d = 0.3
    spec = mm_inf(20, service=Law.deterministic(d), initial=InitialLaw("point", 0))
    r = simulate(spec, 2.0, 6, 0, "service_times")
    t = np.linspace(d + 1e-6, 2.0, 200)
    assert np.array_equal(r.D.eval(t), r.A.eval(t - d))


def test_transient_mean_from_empty():
    lam, mu = 10.0, 1.0
    spec = mm_inf(10, lam, initial=InitialLaw("point", 0))
    q = np.array([simulate(spec, 1.0, 9, rep, "service_times").Q.final() for rep in range(3000)])
    # dE/dt = lam - mu E from E(0) = 0
    oracle = lam / mu * -math.expm1(-mu)
    assert abs(q.mean() - oracle) <= 3 * q.std(ddof=1) / math.sqrt(q.size)


def test_direct_service_count():
    assert service_count([0.1, 0.5, 2.0], [], [], 1.0) == 1


def test_direct_count_matches_construction():
    spec = mm_inf(30, service=Law.with_mean("gamma", 1.0, scv=0.5))
    r = simulate(spec, 2.0, 12, 0, "service_times")
    d = r.service_data
    for t in np.linspace(0, 2, 21):
        assert service_count(d["eta0"], d["tau"], d["eta"], t) == r.Q.eval(t)


# two-parameter counts -----------------------------------------------------------


def test_two_param_counts():
    spec = mm_inf(30)
    r = simulate(spec, 2.0, 3, 0, "service_times")
    t = 1.5
    snap = two_param_counts(r, t, [0.0, 0.5, t, t + 0.1])
    assert snap.counts[0] == r.Q.eval(t)
    assert snap.counts[2] == np.count_nonzero(r.service_data["eta0"] > t)
    assert np.all(np.diff(snap.counts) <= 0)


def test_two_param_counts_empty_start_beyond_t():
    spec = mm_inf(10, initial=InitialLaw("point", 0))
    r = simulate(spec, 1.0, 3, 0, "service_times")
    assert two_param_counts(r, 0.5, [0.6]).counts[0] == 0


def test_two_param_counts_unsupported():
    with pytest.raises(UnsupportedConstructionError):
        two_param_counts(simulate(mm_inf(), 1.0, 0), 0.5, [0.0])


# compensators --------------------------------------------------------------------


def test_compensators_pinned_path():
    # lambda = 0, n customers, no abandonment: between departures Q < n, so build the pinned case by hand
    spec = ModelSpec(Family.ERLANG_A, 5, 2.0, 0.0, theta=0.0, initial=InitialLaw("point", 5))
    r = simulate(spec, 1e-9, 0)
    comps = compensators(r)
    assert comps["comp_D"].final() == pytest.approx(2.0 * 5 * 1e-9)
    assert comps["comp_L"].final() == 0.0


def test_compensator_infinite_server_is_integral():
    r = simulate(mm_inf(), 1.0, 2)
    from qedsim.paths import time_integral
    assert compensators(r)["comp_D"].final() == pytest.approx(time_integral(r.Q, 0, 1.0), rel=1e-14)


def test_compensators_theta_zero():
    spec = ModelSpec(Family.ERLANG_A, 10, 1.0, 12.0, theta=0.0)
    comps = compensators(simulate(spec, 1.0, 2))
    assert np.all(comps["comp_L"].values == 0) and np.all(comps["comp_L"].slopes == 0)


def test_compensators_unsupported_for_service_times():
    with pytest.raises(UnsupportedConstructionError):
        compensators(simulate(mm_inf(), 1.0, 0, 0, "service_times"))


# renewal arrivals ------------------------------------------------------------------


def test_renewal_deterministic():
    lam, T = 7.0, 3.0
    A = renewal_arrivals(Law.deterministic(1 / lam), lam, 0, T)
    assert A.final() == math.floor(lam * T)


def test_renewal_exponential_rate():
    lam, T = 50.0, 100.0
    A = renewal_arrivals(Law.exponential(lam), lam, 1, T)
    assert abs(A.final() / T - lam) < 4 * math.sqrt(lam / T)


def test_renewal_erlang2_scaled_variance():
    n, lam, t = 10_000, 1.0, 1.0
    counts = np.array([renewal_arrivals(Law.erlang(2, 2.0), lam * n, rep, t, rep).final()
                       for rep in range(2000)])
    var = np.var((counts - lam * n * t) / math.sqrt(n), ddof=1)
    assert abs(var - lam * 0.5 * t) <= 0.1 * 0.5


def test_renewal_rejects_bad_rate():
    with pytest.raises(DomainError):
        renewal_arrivals(Law.exponential(1.0), 0.0, 0, 1.0)


def test_event_log_format():
    r = simulate(finite_room(10), 1.0, 0)
    buf = io.StringIO()
    write_event_log(r, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,event_type,Q_after"
    assert len(lines) == r.events[0].size + 1


def test_blocking_only_when_full():
    spec = finite_room(20, beta=-2.0, kappa=0.5)
    r = simulate(spec, 3.0, 1)
    times, types, q_after = r.events
    assert np.any(types == 3)
    assert np.all(q_after[types == 3] == spec.capacity)


def test_construction_tags():
    assert simulate(mm_inf(), 1.0, 0).construction == Construction.TIME_CHANGE
