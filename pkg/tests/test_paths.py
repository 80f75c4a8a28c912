import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qedsim.errors import ContractError, DomainError
from qedsim.models import Family, ModelSpec, simulate
from qedsim.paths import (GridPath, PiecewiseLinearPath, StepPath, complementarity_residual,
                          cumulative_integral, left_limit, max_jump, optional_qv, read_csv,
                          reflect_upper, stieltjes_integral, time_integral, write_csv, write_jsonl)


def jump_to_3():
    return StepPath([1.0], [3.0], 2.0, 2.0)


@st.composite
def step_paths(draw, T=2.0, max_jumps=12):
    k = draw(st.integers(0, max_jumps))
    ep = sorted(set(draw(st.lists(st.floats(0.01, T), min_size=k, max_size=k))))
    vals = draw(st.lists(st.floats(-5, 5), min_size=len(ep), max_size=len(ep)))
    init = draw(st.floats(-5, 5))
    return StepPath(ep, vals, init, T)


# eval / left limits ---------------------------------------------------------


def test_eval_is_right_continuous():
    assert jump_to_3().eval(1.0) == 3.0


def test_eval_constant():
    p = StepPath.constant(5.0, 3.0)
    assert np.all(p.eval([0.0, 1.3, 3.0]) == 5.0)


def test_eval_before_unit_step():
    assert StepPath([0.5], [1.0], 0.0, 1.0).eval(0.49) == 0.0


def test_eval_outside_domain():
    with pytest.raises(DomainError):
        jump_to_3().eval(2.5)
    with pytest.raises(DomainError):
        jump_to_3().eval(-0.1)


def test_left_limit_before_jump():
    assert left_limit(jump_to_3(), 1.0) == 2.0


def test_left_limit_at_zero_is_value():
    assert jump_to_3().left_limit(0.0) == 2.0


def test_left_limit_constant():
    assert StepPath.constant(4.0, 1.0).left_limit(0.7) == 4.0


def test_invalid_epochs_rejected():
    with pytest.raises(ContractError):
        StepPath([1.0, 0.5], [1.0, 2.0], 0.0, 2.0)
    with pytest.raises(ContractError):
        StepPath([0.0], [1.0], 0.0, 2.0)


# integrals ------------------------------------------------------------------


def test_time_integral_unit():
    assert time_integral(StepPath.constant(1.0, 2.0), 0.0, 2.0) == 2.0


def test_time_integral_step():
    assert time_integral(StepPath([1.0], [4.0], 0.0, 2.0), 0.0, 2.0) == 4.0


def test_time_integral_rejects_reversed():
    with pytest.raises(DomainError):
        time_integral(StepPath.constant(1.0, 2.0), 1.5, 0.5)


def test_time_integral_matches_fine_riemann_sum():
    spec = ModelSpec(Family.INFINITE_SERVER, 20, 1.0, 20.0)
    r = simulate(spec, 1.0, 5)
    exact = time_integral(r.Q, 0.0, 1.0)
    # midpoint sums on refining grids converge to the exact value at rate O(events * h^1)
    m = 2_000_000
    t = (np.arange(m) + 0.5) / m
    riemann = float(np.sum(r.Q.eval(t)) / m)
    assert abs(exact - riemann) / exact < 1e-5
    # the oracle built from sojourns agrees to rounding
    ep = np.concatenate(([0.0], r.Q.epochs, [1.0]))
    sojourn = float(np.sum(r.Q.levels * np.diff(ep)))
    assert abs(exact - sojourn) <= 1e-12 * exact


@given(step_paths(), st.floats(0, 2), st.floats(0, 2), st.floats(0, 2))
def test_time_integral_additive(p, a, b, c):
    a, b, c = sorted((a, b, c))
    lhs = time_integral(p, a, b) + time_integral(p, b, c)
    assert lhs == pytest.approx(time_integral(p, a, c), abs=1e-12)


def test_cumulative_integral_matches_time_integral():
    p = StepPath([0.5, 1.2], [3.0, -1.0], 1.0, 2.0)
    ci = cumulative_integral(p)
    for t in (0.0, 0.3, 0.5, 1.0, 1.7, 2.0):
        assert ci.eval(t) == pytest.approx(time_integral(p, 0.0, t), abs=1e-14)


def test_stieltjes_identity_integrand():
    g = StepPath.counting([0.2, 0.7, 1.1], 2.0)
    out = stieltjes_integral(StepPath.constant(1.0, 2.0), g)
    grid = np.linspace(0, 2, 41)
    assert np.array_equal(out.eval(grid), g.eval(grid) - g.eval(0.0))


def test_stieltjes_zero_integrand():
    g = StepPath.counting([0.2, 0.7], 2.0)
    out = stieltjes_integral(StepPath.constant(0.0, 2.0), g)
    assert np.all(out.levels == 0.0)


def test_stieltjes_indicator_matches_event_loop():
    rng = np.random.default_rng(3)
    T = 5.0
    q = StepPath.from_increments(np.sort(rng.uniform(0, T, 40)), rng.choice([-1.0, 1.0], 40), 3.0, T)
    stream = np.sort(rng.uniform(0, T, 60))
    g = StepPath.counting(stream, T)
    k = 3
    out = stieltjes_integral(lambda s: (q.left_limit(s) >= k).astype(float), g)
    total = 0
    for s in stream:
        total += 1 if q.left_limit(s) >= k else 0
    assert out.final() == total


def test_stieltjes_rejects_decreasing_integrator():
    with pytest.raises(ContractError):
        stieltjes_integral(StepPath.constant(1.0, 1.0), StepPath([0.5], [-1.0], 0.0, 1.0))


# jumps and brackets -----------------------------------------------------------


def test_max_jump_continuous():
    assert max_jump(StepPath.constant(1.0, 1.0), 1.0) == 0.0


def test_max_jump_scaled_counting():
    n = 100
    p = StepPath.counting([0.1, 0.4], 1.0) / math.sqrt(n)
    assert max_jump(p, 1.0) == pytest.approx(1 / math.sqrt(n))


def test_max_jump_signed():
    assert max_jump(StepPath([0.2, 0.5], [2.0, -3.0], 0.0, 1.0), 1.0) == 5.0


@given(step_paths(), step_paths())
def test_max_jump_subadditive(p, q):
    assert max_jump(p + q, 2.0) <= max_jump(p, 2.0) + max_jump(q, 2.0) + 1e-12


def test_oqv_compensated_counting_is_count():
    N = StepPath.counting([0.3, 0.9, 1.4], 2.0)
    A = PiecewiseLinearPath.linear(1.5, 2.0)
    br = optional_qv(N - A, N - A)
    # jumps recovered from a piecewise-linear path carry rounding; the exact route is compensated_oqv
    assert np.allclose(br.eval([0.0, 0.5, 1.0, 2.0]), N.eval([0.0, 0.5, 1.0, 2.0]), rtol=0, atol=1e-12)


def test_oqv_disjoint_jumps_zero():
    a = StepPath.counting([0.3], 1.0)
    b = StepPath.counting([0.6], 1.0)
    assert optional_qv(a, b).final() == 0.0


def test_oqv_common_jump():
    a = StepPath([1.0], [2.0], 0.0, 2.0)
    b = StepPath([1.0], [3.0], 0.0, 2.0)
    br = optional_qv(a, b)
    assert br.eval(0.99) == 0.0 and br.eval(1.0) == 6.0


@given(step_paths(), step_paths())
def test_oqv_symmetric_and_nonnegative(p, q):
    assert np.allclose(optional_qv(p, q).eval([0.5, 1.0, 2.0]), optional_qv(q, p).eval([0.5, 1.0, 2.0]))
    assert optional_qv(p, p).final() >= 0


# reflection -------------------------------------------------------------------


def test_reflect_inactive():
    y = StepPath([0.5], [0.4], 0.0, 1.0)
    reg = reflect_upper(y, 1.0)
    assert np.all(reg.regulator.levels == 0.0)
    assert np.array_equal(reg.content.levels, y.levels)


def test_reflect_linear_ramp():
    y = PiecewiseLinearPath.linear(1.0, 3.0)
    reg = reflect_upper(y, 1.0)
    t = np.linspace(0, 3, 61)
    assert np.allclose(reg.content.eval(t), np.minimum(t, 1.0), atol=1e-12)
    assert np.allclose(reg.regulator.eval(t), np.maximum(t - 1.0, 0.0), atol=1e-12)


def test_reflect_negative_kappa():
    with pytest.raises(DomainError):
        reflect_upper(StepPath.constant(0.0, 1.0), -1.0)


def test_reflect_initial_excess_recorded():
    reg = reflect_upper(StepPath.constant(3.0, 1.0), 1.0)
    assert reg.regulator.initial == 2.0 and reg.content.initial == 1.0


@given(step_paths(), st.floats(0, 3))
def test_reflect_invariants(y, kappa):
    reg = reflect_upper(y, kappa)
    assert np.all(reg.content.levels <= kappa + 1e-12)
    assert np.all(np.diff(reg.regulator.levels) >= 0)
    assert complementarity_residual(reg) == 0.0


@given(step_paths(), step_paths(), st.floats(0, 3))
def test_reflect_lipschitz_two(y1, y2, kappa):
    r1, r2 = reflect_upper(y1, kappa), reflect_upper(y2, kappa)
    grid = np.union1d(np.union1d(y1.knots(), y2.knots()), [2.0])
    dy = np.max(np.abs(y1.eval(grid) - y2.eval(grid)))
    dx = np.max(np.abs(r1.content.eval(grid) - r2.content.eval(grid)))
    assert dx <= 2 * dy + 1e-12


def test_reflect_grid_path():
    t = np.linspace(0, 1, 11)
    reg = reflect_upper(GridPath(t, 2 * t), 1.0)
    assert np.max(reg.content.x) <= 1.0
    assert complementarity_residual(reg) == 0.0


# serialization ----------------------------------------------------------------


def test_csv_round_trip():
    p = StepPath([0.25, 0.5], [1.0, 3.0], 2.0, 1.0)
    buf = io.StringIO()
    write_csv(p, buf)
    buf.seek(0)
    q = read_csv(buf)
    assert np.array_equal(q.epochs, p.epochs) and np.array_equal(q.levels, p.levels)
    assert q.horizon == p.horizon


def test_jsonl_rows():
    buf = io.StringIO()
    write_jsonl(StepPath([0.5], [1.0], 0.0, 1.0), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == '{"t": 0.0, "v": 0.0}' and len(lines) == 3


def test_paths_are_immutable():
    p = jump_to_3()
    with pytest.raises(ValueError):
        p.levels[0] = 1.0
