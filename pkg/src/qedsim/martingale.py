"""
Scaled martingale decompositions of queue paths and their diagnostics.

For a Markovian realization with scale ``n`` the three compensated counting
processes are

    M1 = (A - lambda t) / sqrt(n)
    M2 = (D - mu int (Q ^ n)) / sqrt(n)
    M3 = (L - theta int (Q - n)^+) / sqrt(n)

with predictable quadratic variations equal to the compensators over ``n``
and optional quadratic variations equal to the counts over ``n``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UnsupportedConstructionError
from .models import Construction, Family, compensators
from .paths import PiecewiseLinearPath, StepPath, cumulative_integral, optional_qv


class PowerWarning(UserWarning):
    """Too few replications for the requested statistical check."""


@dataclass(frozen=True)
class MartingaleBundle:
    """Scaled martingales, their bracket processes and the scaled regulator.

    ``M3``/``pqv3``/``oqv3`` are None for infinite servers; with ``theta = 0``
    they are zero paths.  ``pqv1`` is None for renewal arrivals, where ``M1``
    is the scaled centred arrival path rather than a martingale.
    """

    n: int
    M1: PiecewiseLinearPath
    M2: PiecewiseLinearPath
    M3: PiecewiseLinearPath | None
    pqv1: PiecewiseLinearPath | None
    pqv2: PiecewiseLinearPath
    pqv3: PiecewiseLinearPath | None
    oqv1: StepPath
    oqv2: StepPath
    oqv3: StepPath | None
    V: StepPath
    counts: dict
    comps: dict
    compensator_scale: float = 1.0

    def martingales(self):
        """``{index: (M, pqv)}`` for the components that are present."""
        out = {1: (self.M1, self.pqv1), 2: (self.M2, self.pqv2)}
        if self.M3 is not None:
            out[3] = (self.M3, self.pqv3)
        return out


def compensated_jumps(N, comp, tol=1e-12):
    """Jump epochs and sizes of ``N - A`` for a counting path ``N``.

    Compensator jumps below ``tol`` (relative to its size) are rounding
    artefacts of a continuous path and are set to exactly zero.
    """
    ep, dn = N.jumps()
    if comp is None:
        return ep, dn
    ce, ca = comp.jumps()
    vals = comp.values if isinstance(comp, PiecewiseLinearPath) else comp.levels
    scale = 1.0 + float(np.max(np.abs(vals)))
    big = np.abs(ca) > tol * scale
    if not np.any(big):
        return ep, dn
    allep = np.union1d(ep, ce[big])
    d = np.zeros(allep.size)
    d[np.searchsorted(allep, ep)] += dn
    d[np.searchsorted(allep, ce[big])] -= ca[big]
    return allep, d


def compensated_oqv(N, comp, tol=1e-12):
    """``[N - A](t) = sum_{s <= t} (dN(s) - dA(s))^2`` for a counting path ``N``.

    For a continuous compensator this is exactly ``N``.
    """
    ep, d = compensated_jumps(N, comp, tol)
    return StepPath(ep, np.cumsum(d**2), 0.0, N.horizon, check=False)


def compensated_covariation(N1, comp1, N2, comp2, tol=1e-12):
    """``[N1 - A1, N2 - A2](t)``: sum of products of simultaneous jumps."""
    e1, d1 = compensated_jumps(N1, comp1, tol)
    e2, d2 = compensated_jumps(N2, comp2, tol)
    common, i1, i2 = np.intersect1d(e1, e2, assume_unique=True, return_indices=True)
    prod = d1[i1] * d2[i2]
    return StepPath(common, np.cumsum(prod), 0.0, min(N1.horizon, N2.horizon), check=False)


def decompose(r, compensator_scale=1.0):
    """Martingale bundle of a Markovian realization.

    Parameters
    ----------
    r : QueueRealization
        Built by the time-change or thinning construction.
    compensator_scale : float
        Multiplies every compensator; values other than 1 inject a fault
        used to check the power of the diagnostics.
    """
    if r.construction == Construction.SERVICE_TIMES:
        raise UnsupportedConstructionError("decomposition needs a Markovian construction")
    spec = r.spec
    n = spec.n
    rn = math.sqrt(n)
    comps = compensators(r)
    c = float(compensator_scale)
    T = r.horizon
    if comps["comp_A"] is None:
        comp_a = PiecewiseLinearPath.linear(spec.lambda_n, T)
        pqv1 = None
    else:
        comp_a = comps["comp_A"] * c
        pqv1 = comp_a / n
    comp_d = comps["comp_D"] * c
    M1 = (r.A - comp_a) / rn
    M2 = (r.D - comp_d) / rn
    if spec.family == Family.INFINITE_SERVER:
        M3 = pqv3 = oqv3 = None
    else:
        comp_l = comps["comp_L"] * c
        M3 = (r.L - comp_l) / rn
        pqv3 = comp_l / n
        oqv3 = compensated_oqv(r.L, comp_l) / n
    return MartingaleBundle(
        n=n,
        M1=M1,
        M2=M2,
        M3=M3,
        pqv1=pqv1,
        pqv2=comp_d / n,
        pqv3=pqv3,
        oqv1=compensated_oqv(r.A, comp_a) / n,
        oqv2=compensated_oqv(r.D, comp_d) / n,
        oqv3=oqv3,
        V=r.U / rn,
        counts={"A": r.A, "D": r.D, "L": r.L, "U": r.U},
        comps=comps,
        compensator_scale=c,
    )


def martingale_values(r, t_grid, compensator_scale=1.0):
    """``M_i`` and ``<M_i>`` at ``t_grid``, ``sup_{t <= T} |M_i|`` and ``<M_i>(T)`` directly from arrays.

    Same quantities as ``decompose`` followed by evaluation, without
    building the path objects.  Returns ``{i: dict(M, pqv, sup, pqv_T)}``.
    """
    spec = r.spec
    n = spec.n
    rn = math.sqrt(n)
    comps = compensators(r)
    c = float(compensator_scale)
    t_grid = np.asarray(t_grid, dtype=float)
    T = r.horizon
    srcs = {1: (r.A, comps["comp_A"]), 2: (r.D, comps["comp_D"])}
    if spec.family != Family.INFINITE_SERVER:
        srcs[3] = (r.L, comps["comp_L"])
    out = {}
    for i, (N, comp) in srcs.items():
        if comp is None:
            continue
        pts = np.union1d(np.union1d(comp.knots, N.epochs), [T])
        cv = c * np.asarray(comp.eval(pts))
        right = np.asarray(N.eval(pts)) - cv
        left = np.asarray(N.left_limit(pts)) - cv
        out[i] = {
            "M": (np.asarray(N.eval(t_grid)) - c * np.asarray(comp.eval(t_grid))) / rn,
            "pqv": c * np.asarray(comp.eval(t_grid)) / n,
            "sup": float(max(np.max(np.abs(right)), np.max(np.abs(left)))) / rn,
            "pqv_T": c * comp.final() / n,
        }
    return out


def drift_function(spec):
    """``h`` of the integral representation: ``-mu s`` or ``-mu (s ^ 0) - theta s^+``."""
    mu, theta = spec.mu, spec.theta
    if spec.family == Family.INFINITE_SERVER:
        return lambda s: -mu * np.asarray(s, dtype=float)

    def h(s):
        s = np.asarray(s, dtype=float)
        return -mu * np.minimum(s, 0.0) - theta * np.maximum(s, 0.0)

    return h


def scaled_state_identity(r, bundle):
    """Relative sup residual of the integral representation of ``X_n``.

    Compares ``X_n(t) = (Q(t) - n)/sqrt(n)`` with
    ``X_n(0) + M1 - M2 - M3 + (lambda - mu n) t/sqrt(n) + int h(X_n) - V``
    at every knot (values and left limits) and divides by
    ``1 + max |term|``.
    """
    spec = r.spec
    n = spec.n
    rn = math.sqrt(n)
    X = (r.Q - n) / rn
    T = r.horizon
    h = drift_function(spec)
    integral_h = cumulative_integral(X.map(h))
    drift = PiecewiseLinearPath.linear((spec.lambda_n - spec.mu * n) / rn, T, X.initial)
    rhs = drift + bundle.M1 - bundle.M2 + integral_h - bundle.V
    if bundle.M3 is not None:
        rhs = rhs - bundle.M3
    diff = rhs - X
    resid = diff.sup_abs()
    terms = [X.to_linear(), bundle.M1, bundle.M2, integral_h, bundle.V.to_linear(), drift]
    if bundle.M3 is not None:
        terms.append(bundle.M3)
    scale = 1.0 + max(p.sup_abs() for p in terms)
    return resid / scale


def oqv_identity(bundle):
    """Check ``[M_i] = N_i / n`` two ways.

    Returns
    -------
    dict
        ``exact``: True if the bracket of each compensated count, computed
        from its jumps, equals the count exactly; ``max_dev``: the largest
        deviation of the jump-sum bracket of the scaled path ``M_i`` from
        ``N_i / n``.
    """
    pairs = [(bundle.counts["A"], bundle.oqv1, bundle.M1, bundle.comps["comp_A"])]
    pairs.append((bundle.counts["D"], bundle.oqv2, bundle.M2, bundle.comps["comp_D"]))
    if bundle.M3 is not None:
        pairs.append((bundle.counts["L"], bundle.oqv3, bundle.M3, bundle.comps["comp_L"]))
    exact = True
    dev = 0.0
    for N, _, M, comp in pairs:
        raw = compensated_oqv(N, comp)
        if not (np.array_equal(raw.epochs, N.epochs) and np.array_equal(raw.levels, N.levels)):
            exact = False
        jumpsum = optional_qv(M, M)
        grid = np.concatenate(([0.0], N.epochs))
        dev = max(dev, float(np.max(np.abs(jumpsum.eval(grid) - N.eval(grid) / bundle.n))))
    return {"exact": exact, "max_dev": dev}


def orthogonality_test(bundle):
    """Largest ``|[M_i, M_j](T)|`` over distinct pairs of present martingales.

    Computed from the exact jumps of the source counting paths, so the
    result is exactly 0 when no two of them jump together.
    """
    srcs = [(bundle.counts["A"], bundle.comps["comp_A"]), (bundle.counts["D"], bundle.comps["comp_D"])]
    if bundle.M3 is not None:
        srcs.append((bundle.counts["L"], bundle.comps["comp_L"]))
    worst = 0.0
    for i in range(len(srcs)):
        for j in range(i + 1, len(srcs)):
            cov = compensated_covariation(*srcs[i], *srcs[j])
            worst = max(worst, abs(cov.final()) / bundle.n)
    return worst


def martingale_samples(bundles, t_grid):
    """Stack ``M_i(t)`` and ``<M_i>(t)`` over replications.

    Returns ``{i: (M values (R, k), pqv values (R, k))}``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    out = {}
    for b in bundles:
        for i, (m, q) in b.martingales().items():
            if q is None:
                continue
            out.setdefault(i, ([], []))
            out[i][0].append(m.eval(t_grid))
            out[i][1].append(q.eval(t_grid))
    return {i: (np.asarray(a), np.asarray(p)) for i, (a, p) in out.items()}


def martingale_mean_test(samples, t_grid, z=3.0):
    """Zero-mean and centred-square tests at each time point.

    Parameters
    ----------
    samples : dict or sequence of MartingaleBundle
        ``{i: (M (R, k), pqv (R, k))}`` as from ``martingale_samples``, or
        the bundles themselves.
    t_grid : array_like of length k
    z : float
        Number of standard errors allowed.

    Returns
    -------
    list of dict
        Rows ``{test, i, t, statistic, se, pass}``.
    """
    if not isinstance(samples, dict):
        samples = martingale_samples(samples, t_grid)
    rows = []
    for i, (m, q) in sorted(samples.items()):
        R = m.shape[0]
        if R < 100:
            warnings.warn(f"only {R} replications; mean tests have little power", PowerWarning)
        for name, vals in (("mean", m), ("centered_square", m**2 - q)):
            mean = vals.mean(axis=0)
            se = vals.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(mean.shape, np.inf)
            for t, mu_hat, s in zip(np.asarray(t_grid, dtype=float), mean, se):
                ok = bool(abs(mu_hat) <= z * s) if s > 0 else bool(mu_hat == 0)
                rows.append({"test": name, "i": i, "t": float(t), "statistic": float(mu_hat),
                             "se": float(s), "pass": ok})
    return rows


def lenglart_check(sup_abs, pqv_T, c_grid, d_grid):
    """Empirical Lenglart-Rebolledo inequality ``P(sup|M| > c) <= d/c^2 + P(<M>(T) > d)``.

    Parameters
    ----------
    sup_abs, pqv_T : array_like (R,)
        Per-replication ``sup_{t <= T} |M(t)|`` and ``<M>(T)``.

    Returns
    -------
    list of dict
        One row per ``(c, d)`` with ``lhs, rhs, se, pass``; pass means
        ``lhs <= rhs + 2 se`` with the binomial standard error of both
        probabilities.
    """
    sup_abs = np.asarray(sup_abs, dtype=float)
    pqv_T = np.asarray(pqv_T, dtype=float)
    R = sup_abs.size
    if R < 1000:
        warnings.warn(f"only {R} replications for the Lenglart check", PowerWarning)
    rows = []
    for c in c_grid:
        p1 = float(np.mean(sup_abs > c))
        for d in d_grid:
            p2 = float(np.mean(pqv_T > d))
            se = math.sqrt(p1 * (1 - p1) / R + p2 * (1 - p2) / R)
            rhs = d / c**2 + p2
            rows.append({"c": float(c), "d": float(d), "lhs": p1, "rhs": rhs, "se": se,
                         "pass": bool(p1 <= rhs + 2 * se)})
    return rows


def pqv_counting_general(N, comp):
    """Predictable quadratic variation of ``N - A`` for a possibly discontinuous compensator.

    ``<N - A>(t) = A(t) - sum_{s <= t} (dA(s))^2``; equals ``A`` when ``A``
    is continuous.
    """
    dn = np.diff(N.levels)
    if np.any((dn != 0) & (dn != 1)):
        raise ContractError("N must be a unit-jump counting path")
    ep, da = comp.jumps()
    if np.any(da < 0):
        raise ContractError("compensator must be nondecreasing")
    if isinstance(comp, PiecewiseLinearPath) and np.any(comp.slopes < 0):
        raise ContractError("compensator must be nondecreasing")
    keep = da != 0
    sq = StepPath(ep[keep], np.cumsum(da[keep] ** 2), 0.0, comp.horizon, check=False)
    if isinstance(comp, StepPath):
        return comp - sq
    return comp - sq.to_linear()
