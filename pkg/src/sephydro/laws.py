"""Scalar distributions for conductances and energy marks."""
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Law"]

_KINDS = {
    "constant": ("value",),
    "uniform": ("low", "high"),
    "exponential": ("scale",),
    "lognormal": ("mu", "sigma"),
    "two_point": ("low", "high", "p_high"),
    "table": ("values", "probs"),
    "sequence": ("values",),
    "normal": ("mu", "sigma"),
}


@dataclass(frozen=True)
class Law:
    """A one-dimensional law, identified by ``kind`` and its parameters.

    ``sequence`` is deterministic: the ``k``-th draw is ``values[k % len]``.
    It is used to build rings with prescribed conductance patterns.

    Examples
    --------
    >>> Law.uniform(1.0, 2.0).sample(np.random.default_rng(0), 3).shape
    (3,)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown law kind {self.kind!r}; expected one of {sorted(_KINDS)}")
        missing = [k for k in _KINDS[self.kind] if k not in self.params]
        extra = [k for k in self.params if k not in _KINDS[self.kind]]
        if missing or extra:
            raise ValueError(f"law {self.kind!r} needs parameters {_KINDS[self.kind]}, got {sorted(self.params)}")
        p = self.params
        if self.kind == "uniform" and not p["low"] < p["high"]:
            raise ValueError("uniform law needs low < high")
        if self.kind in ("lognormal", "normal") and p["sigma"] < 0:
            raise ValueError("sigma must be nonnegative")
        if self.kind == "exponential" and p["scale"] <= 0:
            raise ValueError("exponential scale must be positive")
        if self.kind == "two_point" and not 0.0 <= p["p_high"] <= 1.0:
            raise ValueError("p_high must lie in [0, 1]")
        if self.kind == "table":
            probs = np.asarray(p["probs"], dtype=float)
            if len(probs) != len(p["values"]) or len(probs) == 0:
                raise ValueError("table law needs matching nonempty values and probs")
            if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
                raise ValueError("table probabilities must be nonnegative and sum to 1")
        if self.kind == "sequence" and len(p["values"]) == 0:
            raise ValueError("sequence law needs at least one value")

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value):
        return cls("constant", {"value": float(value)})

    @classmethod
    def uniform(cls, low, high):
        return cls("uniform", {"low": float(low), "high": float(high)})

    @classmethod
    def exponential(cls, scale=1.0):
        return cls("exponential", {"scale": float(scale)})

    @classmethod
    def lognormal(cls, mu, sigma):
        return cls("lognormal", {"mu": float(mu), "sigma": float(sigma)})

    @classmethod
    def two_point(cls, low, high, p_high):
        return cls("two_point", {"low": float(low), "high": float(high), "p_high": float(p_high)})

    @classmethod
    def table(cls, values, probs):
        return cls("table", {"values": [float(v) for v in values], "probs": [float(q) for q in probs]})

    @classmethod
    def sequence(cls, values):
        return cls("sequence", {"values": [float(v) for v in values]})

    @classmethod
    def normal(cls, mu, sigma):
        return cls("normal", {"mu": float(mu), "sigma": float(sigma)})

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.pop("kind")
        return cls(kind, spec)

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    # properties -------------------------------------------------------
    def support_positive(self):
        """True when every possible draw is strictly positive."""
        p = self.params
        if self.kind == "constant":
            return p["value"] > 0
        if self.kind == "uniform":
            return p["low"] > 0
        if self.kind in ("exponential", "lognormal"):
            return True
        if self.kind == "two_point":
            return min(p["low"], p["high"]) > 0
        if self.kind == "table":
            return all(v > 0 for v, q in zip(p["values"], p["probs"]) if q > 0)
        if self.kind == "sequence":
            return min(p["values"]) > 0
        return False

    def upper_bound(self):
        p = self.params
        if self.kind == "constant":
            return p["value"]
        if self.kind == "uniform":
            return p["high"]
        if self.kind == "two_point":
            return max(p["low"], p["high"])
        if self.kind in ("table", "sequence"):
            return max(p["values"])
        return np.inf

    def sample(self, rng, n):
        p = self.params
        if self.kind == "constant":
            return np.full(n, p["value"])
        if self.kind == "uniform":
            return rng.uniform(p["low"], p["high"], size=n)
        if self.kind == "exponential":
            out = rng.exponential(p["scale"], size=n)
            # Exp draws of exactly 0 have probability ~2^-53; keep support open
            return np.where(out > 0, out, np.finfo(float).tiny)
        if self.kind == "lognormal":
            return rng.lognormal(p["mu"], p["sigma"], size=n)
        if self.kind == "two_point":
            return np.where(rng.random(n) < p["p_high"], p["high"], p["low"])
        if self.kind == "table":
            return rng.choice(np.asarray(p["values"]), size=n, p=np.asarray(p["probs"]))
        if self.kind == "sequence":
            vals = np.asarray(p["values"])
            return vals[np.arange(n) % len(vals)]
        if self.kind == "normal":
            return rng.normal(p["mu"], p["sigma"], size=n)
        raise AssertionError(self.kind)
