"""Baseline functions for hazards and drifts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import as_float, one_of, take
from .errors import ConfigError

FORMS = ("constant", "weibull", "piecewise_constant")


@dataclass(frozen=True)
class BaselineFunction:
    """A time-varying baseline ``b(t)`` with closed-form integral.

    ``constant``            b(t) = c
    ``weibull``             b(t) = (k/s) (t/s)^(k-1),   B(t) = (t/s)^k
    ``piecewise_constant``  b(t) = values[j] on [cuts[j-1], cuts[j]), with cuts[-1] read as 0
    """

    form: str
    value: float = 0.0
    shape: float = 1.0
    scale: float = 1.0
    cuts: tuple[float, ...] = ()
    values: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigError(f"unknown baseline form {self.form!r}")
        if self.form == "weibull" and not (self.shape > 0 and self.scale > 0):
            raise ConfigError("weibull baseline needs shape > 0 and scale > 0")
        if self.form == "piecewise_constant":
            if len(self.values) != len(self.cuts) + 1:
                raise ConfigError("piecewise_constant needs len(values) == len(cuts) + 1")
            if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])) or any(c <= 0 for c in self.cuts):
                raise ConfigError("piecewise_constant cut times must be positive and strictly increasing")

    # -- construction ------------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "BaselineFunction":
        return cls("constant", value=float(c))

    @classmethod
    def weibull(cls, shape: float, scale: float) -> "BaselineFunction":
        return cls("weibull", shape=float(shape), scale=float(scale))

    @classmethod
    def piecewise(cls, cuts, values) -> "BaselineFunction":
        return cls("piecewise_constant", cuts=tuple(map(float, cuts)), values=tuple(map(float, values)))

    @classmethod
    def from_config(cls, doc, where: str = "baseline") -> "BaselineFunction":
        kind, body = one_of(doc, where, FORMS)
        if kind == "constant":
            return cls.constant(as_float(body, f"{where}.constant"))
        if kind == "weibull":
            body = take(body, f"{where}.weibull", ("shape", "scale"))
            return cls.weibull(as_float(body["shape"], where), as_float(body["scale"], where))
        body = take(body, f"{where}.piecewise_constant", ("cuts", "values"))
        return cls.piecewise(body["cuts"], body["values"])

    def to_config(self) -> dict:
        if self.form == "constant":
            return {"constant": self.value}
        if self.form == "weibull":
            return {"weibull": {"shape": self.shape, "scale": self.scale}}
        return {"piecewise_constant": {"cuts": list(self.cuts), "values": list(self.values)}}

    # -- evaluation --------------------------------------------------------
    @property
    def is_nonnegative(self) -> bool:
        if self.form == "constant":
            return self.value >= 0
        if self.form == "weibull":
            return True
        return all(v >= 0 for v in self.values)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return self.cuts if self.form == "piecewise_constant" else ()

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return np.full_like(t, self.value)
        if self.form == "weibull":
            k, s = self.shape, self.scale
            with np.errstate(divide="ignore"):
                return (k / s) * np.power(t / s, k - 1.0)
        idx = np.searchsorted(self.cuts, t, side="right")
        return np.asarray(self.values)[idx]

    def cumulative(self, t):
        """Integral of the baseline over [0, t]."""
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return self.value * t
        if self.form == "weibull":
            return np.power(np.maximum(t, 0.0) / self.scale, self.shape)
        edges = np.concatenate(([0.0], self.cuts))
        widths = np.clip(t[..., None] - edges, 0.0, None)
        widths[..., :-1] = np.minimum(widths[..., :-1], np.diff(edges))
        return widths @ np.asarray(self.values)

    def integral(self, a, b):
        return self.cumulative(b) - self.cumulative(a)
