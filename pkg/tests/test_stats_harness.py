import functools
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from qedsim.errors import DomainError
from qedsim.harness import (Check, PathAt, Verdict, replicate, replicate_blocks, run_ensemble,
                            verdict_from_checks)
from qedsim.models import Family, ModelSpec
from qedsim.rng import derive_seed, substream
from qedsim.stats import (EnsembleStats, ExactSum, RESERVOIR_CAP, ks_2samp_statistic, ks_critical,
                          ks_statistic, poisson_normal_distance)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(st.lists(finite, max_size=50))
def test_exact_sum_is_exact(values):
    assert ExactSum.of(values).fraction() == sum((Fraction(v) for v in values), Fraction(0))
    assert ExactSum.of_squares(values).fraction() == sum((Fraction(v) ** 2 for v in values), Fraction(0))


def test_exact_sum_rejects_nan():
    with pytest.raises(DomainError):
        ExactSum.of([1.0, math.nan])


@given(st.lists(finite, min_size=1, max_size=30), st.lists(finite, min_size=1, max_size=30),
       st.lists(finite, min_size=1, max_size=30))
def test_merge_associative(a, b, c):
    sa, sb, sc = (EnsembleStats([0.0], np.array(v)[:, None]) for v in (a, b, c))
    left = sa.merge(sb).merge(sc)
    right = sa.merge(sb.merge(sc))
    assert np.array_equal(left.mean, right.mean)
    assert np.array_equal(left.variance, right.variance, equal_nan=True)


@given(st.lists(finite, min_size=2, max_size=60), st.integers(1, 59))
def test_split_equals_whole(values, cut):
    cut = min(cut, len(values) - 1)
    v = np.array(values)[:, None]
    whole = EnsembleStats([0.0], v)
    parts = EnsembleStats([0.0], v[:cut]).merge(EnsembleStats([0.0], v[cut:]))
    assert whole.mean.tobytes() == parts.mean.tobytes()
    assert whole.variance.tobytes() == parts.variance.tobytes()


def test_single_replication():
    s = EnsembleStats([0.0, 1.0], np.array([[3.0, 4.0]]))
    assert list(s.mean) == [3.0, 4.0]
    assert not s.variance_defined and np.all(np.isnan(s.variance))


def test_constant_extractor():
    s = EnsembleStats([0.5], np.full((100, 1), 7.0))
    assert s.mean[0] == 7.0 and s.variance[0] == 0.0


def test_se_halves_with_quadrupled_replications():
    rng = np.random.default_rng(0)
    a = EnsembleStats([0.0], rng.normal(size=(2500, 1))).se[0]
    b = EnsembleStats([0.0], rng.normal(size=(10_000, 1))).se[0]
    assert 0.8 * 2 <= a / b <= 1.2 * 2


def test_doubling_replications_shrinks_se():
    rng = np.random.default_rng(1)
    a = EnsembleStats([0.0], rng.normal(size=(5000, 1))).se[0]
    b = EnsembleStats([0.0], rng.normal(size=(10_000, 1))).se[0]
    assert a / b == pytest.approx(math.sqrt(2), rel=0.2)


def test_mean_variance_match_numpy():
    x = np.random.default_rng(2).normal(3.0, 2.0, size=(1000, 2))
    s = EnsembleStats([0.0, 1.0], x)
    np.testing.assert_allclose(s.mean, x.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(s.variance, x.var(axis=0, ddof=1), rtol=1e-12)


def test_quantiles_and_reservoir_cap():
    x = np.arange(1001, dtype=float)[:, None]
    s = EnsembleStats([0.0], x)
    assert s.quantiles([0.5])[0.5][0] == 500.0 and not s.approximate_quantiles
    big = EnsembleStats([0.0], np.random.default_rng(3).random((RESERVOIR_CAP + 10, 1)))
    assert big.approximate_quantiles
    assert big.quantiles([0.5])[0.5][0] == pytest.approx(0.5, abs=0.01)
    assert len(big.summary_rows()) == 1 and "q50" in big.summary_rows()[0]


def test_grid_mismatch():
    with pytest.raises(DomainError):
        EnsembleStats([0.0, 1.0], np.zeros((3, 3)))
    with pytest.raises(DomainError):
        EnsembleStats([0.0]).merge(EnsembleStats([1.0]))


def test_ks_matches_scipy():
    x = np.random.default_rng(4).normal(size=500)
    assert ks_statistic(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-15)
    y = np.random.default_rng(5).normal(0.2, 1, size=300)
    assert ks_2samp_statistic(x, y) == pytest.approx(stats.ks_2samp(x, y).statistic, abs=1e-15)


def test_ks_examples():
    x = substream(0, 0, "aux").normal(size=10_000)
    assert ks_statistic(x, stats.norm.cdf) < 1.63 / math.sqrt(10_000)
    assert ks_statistic(np.zeros(50), stats.norm.cdf) >= 0.5
    with pytest.raises(DomainError):
        ks_statistic([1.0], stats.norm.cdf)
    assert ks_critical(10_000) == pytest.approx(1.6276 / 100, rel=1e-3)


def test_poisson_normal_distance():
    # brute force over the lattice with scipy
    n = 400
    k = np.arange(0, 1000)
    right = stats.poisson.cdf(k, n)
    left = right - stats.poisson.pmf(k, n)
    phi = stats.norm.cdf((k - n) / math.sqrt(n))
    oracle = max(np.abs(right - phi).max(), np.abs(left - phi).max())
    assert poisson_normal_distance(n) == pytest.approx(oracle, abs=1e-14)
    assert poisson_normal_distance(4) > poisson_normal_distance(400)
    assert poisson_normal_distance(400) < 0.03


def test_substreams_are_distinct_and_reproducible():
    a = substream(1, 0, "arrivals").random(5)
    assert np.array_equal(a, substream(1, 0, "arrivals").random(5))
    assert not np.array_equal(a, substream(1, 1, "arrivals").random(5))
    assert not np.array_equal(a, substream(1, 0, "service").random(5))
    with pytest.raises(KeyError):
        substream(1, 0, "nope")
    assert derive_seed(3, "x") == derive_seed(3, "x") != derive_seed(3, "y")


def _square(rep):
    return np.array([rep, rep**2], dtype=float)


def _block(first, count):
    return np.arange(first, first + count, dtype=float)[:, None] * 2


def test_replicate_order_independent_of_workers():
    one = replicate(_square, 37, 1)
    two = replicate(_square, 37, 2, chunk=5)
    assert np.array_equal(one, two) and one[5, 1] == 25
    with pytest.raises(DomainError):
        replicate(_square, 0)


def test_replicate_blocks():
    a = replicate_blocks(_block, 10, 3, 1)
    b = replicate_blocks(_block, 10, 4, 2)
    assert np.array_equal(a, b) and a.shape == (10, 1) and a[9, 0] == 18


def test_run_ensemble_worker_invariant():
    spec = ModelSpec(Family.ERLANG_A, 20, 1.0, 18.0, theta=0.5)
    grid = (0.5, 1.0)
    ex = {"Q": (PathAt(grid), grid), "A": (PathAt(grid, "A"), grid)}
    s1 = run_ensemble(spec, 40, 1.0, ex, seed=3, workers=1)
    s2 = run_ensemble(spec, 40, 1.0, ex, seed=3, workers=2)
    for k in ex:
        assert s1[k].mean.tobytes() == s2[k].mean.tobytes()
        assert s1[k].variance.tobytes() == s2[k].variance.tobytes()
    assert np.all(s1["Q"].count == 40)


def test_verdict_record():
    checks = [Check("a", 0.01, 0.03, True, {"arr": np.array([1, 2])}), Check("b", math.nan, 1.0, False)]
    v = verdict_from_checks("exp", "some theorem", 7, checks)
    assert v.status == "fail" and not v.passed and v.statistic == 0.01
    rec = json.loads(v.to_json())
    assert rec["checks"][0]["arr"] == [1, 2] and rec["checks"][1]["statistic"] == "nan"
    assert set(rec) == {"experiment", "theorem", "statistic", "threshold", "pass", "status", "seed", "checks"}
    v.runtime_s = 99.0
    assert json.loads(v.to_json()) == rec
    inc = verdict_from_checks("exp", "t", 7, checks[:1], inconclusive=True)
    assert inc.status == "inconclusive" and not inc.record()["pass"]
    assert isinstance(Verdict("e", "t", 0, 0, "pass", 0).checks, list)


def test_replicate_accepts_partials():
    out = replicate(functools.partial(np.full, 2), 3)
    assert out.shape == (3, 2)
