"""Service, abandonment, interarrival and initial-content distributions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .errors import ConfigError, DomainError

_KINDS = ("exponential", "deterministic", "erlang", "gamma", "lognormal", "uniform")


@dataclass(frozen=True)
class Law:
    """A nonnegative distribution given by ``kind`` and parameters.

    ``exponential`` (rate), ``deterministic`` (value), ``erlang`` (k, rate),
    ``gamma`` (shape, scale), ``lognormal`` (mean, scv), ``uniform``
    (low, high).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError("kind", f"unknown distribution {self.kind!r}")
        p = self.params
        need = {
            "exponential": ("rate",),
            "deterministic": ("value",),
            "erlang": ("k", "rate"),
            "gamma": ("shape", "scale"),
            "lognormal": ("mean", "scv"),
            "uniform": ("low", "high"),
        }[self.kind]
        for key in need:
            if key not in p:
                raise ConfigError(key, f"missing parameter for {self.kind}")
        if self.kind == "exponential" and p["rate"] <= 0:
            raise DomainError("rate must be positive")
        if self.kind == "deterministic" and p["value"] < 0:
            raise DomainError("value must be nonnegative")

    # constructors -----------------------------------------------------------
    @classmethod
    def exponential(cls, rate):
        return cls("exponential", {"rate": float(rate)})

    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", {"value": float(value)})

    @classmethod
    def erlang(cls, k, rate):
        return cls("erlang", {"k": int(k), "rate": float(rate)})

    @classmethod
    def with_mean(cls, kind, mean, **shape):
        """Law of the given family rescaled to ``mean`` (shape kept)."""
        if mean <= 0:
            raise DomainError("mean must be positive")
        if kind == "exponential":
            return cls.exponential(1.0 / mean)
        if kind == "deterministic":
            return cls.deterministic(mean)
        if kind == "erlang":
            k = int(shape.get("k", 2))
            return cls.erlang(k, k / mean)
        if kind == "gamma":
            scv = float(shape.get("scv", 1.0))
            return cls("gamma", {"shape": 1.0 / scv, "scale": mean * scv})
        if kind == "lognormal":
            return cls("lognormal", {"mean": mean, "scv": float(shape.get("scv", 1.0))})
        if kind == "uniform":
            return cls("uniform", {"low": 0.0, "high": 2.0 * mean})
        raise ConfigError("kind", f"unknown distribution {kind!r}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", None) or d.pop("dist", None)
        if kind is None:
            raise ConfigError("kind", "distribution kind missing")
        return cls(kind, d)

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    # properties ---------------------------------------------------------------
    @property
    def is_exponential(self):
        return self.kind == "exponential"

    @property
    def rate(self):
        if not self.is_exponential:
            raise DomainError("rate defined for exponential laws only")
        return self.params["rate"]

    def _frozen(self):
        p = self.params
        if self.kind == "exponential":
            return stats.expon(scale=1.0 / p["rate"])
        if self.kind == "erlang":
            return stats.gamma(p["k"], scale=1.0 / p["rate"])
        if self.kind == "gamma":
            return stats.gamma(p["shape"], scale=p["scale"])
        if self.kind == "lognormal":
            s2 = math.log1p(p["scv"])
            return stats.lognorm(math.sqrt(s2), scale=p["mean"] * math.exp(-s2 / 2))
        if self.kind == "uniform":
            return stats.uniform(p["low"], p["high"] - p["low"])
        return None

    @property
    def mean(self):
        if self.kind == "deterministic":
            return self.params["value"]
        return float(self._frozen().mean())

    @property
    def var(self):
        if self.kind == "deterministic":
            return 0.0
        return float(self._frozen().var())

    @property
    def scv(self):
        """Squared coefficient of variation ``Var / mean^2``."""
        return self.var / self.mean**2

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "deterministic":
            return (x >= self.params["value"]).astype(float)
        if self.kind == "exponential":
            return np.where(x > 0, -np.expm1(-self.params["rate"] * np.maximum(x, 0)), 0.0)
        return self._frozen().cdf(x)

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "deterministic":
            return (x < self.params["value"]).astype(float)
        if self.kind == "exponential":
            return np.where(x > 0, np.exp(-self.params["rate"] * np.maximum(x, 0)), 1.0)
        return self._frozen().sf(x)

    def integrated_sf(self, t):
        """``int_0^t (1 - F(u)) du``."""
        t = float(t)
        if t <= 0:
            return 0.0
        if self.kind == "exponential":
            r = self.params["rate"]
            return -math.expm1(-r * t) / r
        if self.kind == "deterministic":
            return min(t, self.params["value"])
        val, _ = integrate.quad(lambda u: float(self.sf(u)), 0.0, t, limit=200)
        return val

    def sample(self, rng, size):
        p = self.params
        if self.kind == "exponential":
            return rng.exponential(1.0 / p["rate"], size)
        if self.kind == "deterministic":
            return np.full(size, p["value"])
        if self.kind == "erlang":
            return rng.gamma(p["k"], 1.0 / p["rate"], size)
        if self.kind == "gamma":
            return rng.gamma(p["shape"], p["scale"], size)
        if self.kind == "lognormal":
            s2 = math.log1p(p["scv"])
            return rng.lognormal(math.log(p["mean"]) - s2 / 2, math.sqrt(s2), size)
        return rng.uniform(p["low"], p["high"], size)


@dataclass(frozen=True)
class InitialLaw:
    """Law of the initial content ``Q(0)``: a point mass or a Poisson law."""

    kind: str = "point"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("point", "poisson"):
            raise ConfigError("initial.kind", f"unknown initial law {self.kind!r}")
        if self.value < 0:
            raise DomainError("initial value must be nonnegative")

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (int, float)):
            return cls("point", float(d))
        kind = d.get("kind", "point")
        return cls(kind, float(d.get("value", d.get("mean", 0.0))))

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}

    def sample(self, rng):
        if self.kind == "point":
            return int(round(self.value))
        return int(rng.poisson(self.value))
