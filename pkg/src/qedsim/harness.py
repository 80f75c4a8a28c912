"""
Monte Carlo orchestration: deterministic replication, ensembles and verdicts.

Every replication draws from substreams keyed by (seed, replication id,
role), so results are identical whatever the worker count or scheduling.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .models import simulate
from .stats import EnsembleStats


class PartialRunError(RuntimeError):
    """A replication batch stopped early; ``completed`` replications finished."""

    def __init__(self, completed, cause):
        self.completed = completed
        super().__init__(f"run stopped after {completed} replications: {cause}")


def _run_chunk(fn, start, stop):
    return [fn(rep) for rep in range(start, stop)]


def replicate(fn, R, workers=1, chunk=None):
    """``[fn(0), ..., fn(R-1)]`` stacked along a new first axis.

    ``fn`` must be picklable when ``workers > 1`` (a module-level function
    or a ``functools.partial`` of one).  Outputs are ordered by replication
    id regardless of the worker count.
    """
    if R < 1:
        raise DomainError("R must be positive")
    results = []
    if workers <= 1:
        try:
            for rep in range(R):
                results.append(fn(rep))
        except MemoryError as e:
            raise PartialRunError(len(results), e) from e
    else:
        chunk = chunk or max(1, math.ceil(R / (workers * 8)))
        bounds = [(a, min(R, a + chunk)) for a in range(0, R, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_run_chunk, fn, a, b) for a, b in bounds]
            try:
                for f in futures:
                    results.extend(f.result())
            except MemoryError as e:
                raise PartialRunError(len(results), e) from e
    first = results[0]
    if isinstance(first, tuple):
        return tuple(np.stack([r[k] for r in results]) for k in range(len(first)))
    return np.stack([np.asarray(r) for r in results])


def _run_block(fn, first, count):
    return fn(first, count)


def replicate_blocks(fn, R, block, workers=1):
    """Concatenate ``fn(first, count)`` over consecutive replication blocks.

    ``fn`` returns an array whose first axis has length ``count``; blocks
    are joined in replication order.
    """
    if R < 1:
        raise DomainError("R must be positive")
    bounds = [(a, min(block, R - a)) for a in range(0, R, block)]
    if workers <= 1:
        parts = [fn(a, c) for a, c in bounds]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_run_block, fn, a, c) for a, c in bounds]
            parts = [f.result() for f in futures]
    return np.concatenate(parts, axis=0)


@dataclass(frozen=True)
class PathAt:
    """Extractor: value of a named path of the realization at fixed times."""

    t_grid: tuple
    path: str = "Q"

    def __call__(self, r):
        return np.asarray(getattr(r, self.path).eval(np.asarray(self.t_grid)), dtype=float)


@dataclass(frozen=True)
class _EnsembleRep:
    spec: object
    T: float
    seed: int
    extractors: tuple
    construction: str

    def __call__(self, rep):
        r = simulate(self.spec, self.T, self.seed, rep, self.construction)
        return tuple(np.atleast_1d(np.asarray(e(r), dtype=float)) for e in self.extractors)


def run_ensemble(spec, R, T, extractors, seed=0, workers=1, construction="time_change"):
    """Simulate ``R`` replications and summarise each extractor.

    Parameters
    ----------
    extractors : dict
        ``{name: (callable, t_grid)}``; the callable maps a realization to
        values on ``t_grid``.

    Returns
    -------
    dict
        ``{name: EnsembleStats}``.
    """
    names = list(extractors)
    fns = tuple(extractors[k][0] for k in names)
    out = replicate(_EnsembleRep(spec, float(T), int(seed), fns, construction), R, workers)
    return {k: EnsembleStats(extractors[k][1], out[i]) for i, k in enumerate(names)}


@dataclass
class Check:
    """One sub-check of an experiment."""

    name: str
    statistic: float
    threshold: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "statistic": _num(self.statistic), "threshold": _num(self.threshold),
                "pass": bool(self.passed), **{k: _jsonable(v) for k, v in self.detail.items()}}


@dataclass
class Verdict:
    """Outcome of one named experiment.

    ``status`` is ``pass``, ``fail`` or ``inconclusive`` (too little
    statistical power to decide).  ``runtime_s`` is reported separately
    from the reproducible record.
    """

    experiment: str
    theorem: str
    statistic: float
    threshold: float
    status: str
    seed: int
    checks: list = field(default_factory=list)
    runtime_s: float = 0.0
    check_runtimes: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.status == "pass"

    def record(self):
        """The reproducible part: identical for identical config and seed."""
        return {
            "experiment": self.experiment,
            "theorem": self.theorem,
            "statistic": _num(self.statistic),
            "threshold": _num(self.threshold),
            "pass": self.status == "pass",
            "status": self.status,
            "seed": self.seed,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self):
        return json.dumps(self.record(), sort_keys=False)


def _num(x):
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return repr(x)
    return x


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return _num(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def verdict_from_checks(experiment, theorem, seed, checks, main=None, inconclusive=False):
    """Combine sub-checks; the headline statistic is that of ``main`` (default first)."""
    head = checks[0] if main is None else next(c for c in checks if c.name == main)
    if inconclusive:
        status = "inconclusive"
    else:
        status = "pass" if all(c.passed for c in checks) else "fail"
    return Verdict(experiment, theorem, head.statistic, head.threshold, status, int(seed), checks)


class Timer:
    """Accumulates wall-clock time per named sub-check."""

    def __init__(self):
        self.times = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.times[name] = timer.times.get(name, 0.0) + time.perf_counter() - self.t0

        return _Ctx()
