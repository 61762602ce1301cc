"""Model specifications and parametric baseline forms used in likelihoods."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..config import as_float, one_of, take
from ..errors import ConfigError, IncompatibleChannels

FAMILIES = ("illness_death_interval", "joint_quantitative_shared_effect", "naive_mixed_longitudinal",
            "naive_survival_only")


WEIBULL_GRADING = (0.001, 0.01, 0.1)


@dataclass(frozen=True)
class HazardForm:
    """Baseline hazard ``a(t)`` with parameters named ``<prefix>.<field>``."""

    prefix: str
    form: str = "weibull"  # weibull | constant | piecewise_constant
    cuts: tuple[float, ...] = ()

    @property
    def names(self) -> list[str]:
        if self.form == "weibull":
            return [f"{self.prefix}.shape", f"{self.prefix}.scale"]
        if self.form == "constant":
            return [f"{self.prefix}.value"]
        return [f"{self.prefix}.v{j}" for j in range(len(self.cuts) + 1)]

    @property
    def breakpoints(self) -> tuple[float, ...]:
        if self.form == "weibull":
            # graded panels near 0, where t^(shape-1) is not smooth
            return WEIBULL_GRADING
        return self.cuts if self.form == "piecewise_constant" else ()

    def log_hazard(self, p: Mapping[str, float], t):
        t = np.asarray(t, dtype=float)
        if self.form == "weibull":
            k, s = p[f"{self.prefix}.shape"], p[f"{self.prefix}.scale"]
            with np.errstate(divide="ignore"):
                return np.log(k) - k * np.log(s) + (k - 1.0) * np.log(t)
        if self.form == "constant":
            return np.full(t.shape, np.log(p[f"{self.prefix}.value"]))
        levels = np.log([p[n] for n in self.names])
        return levels[np.searchsorted(self.cuts, t, side="right")]

    def dlog_hazard(self, p: Mapping[str, float], t) -> dict[str, np.ndarray]:
        """Derivatives of ``log a(t)`` with respect to each parameter."""
        t = np.asarray(t, dtype=float)
        if self.form == "weibull":
            k, s = p[f"{self.prefix}.shape"], p[f"{self.prefix}.scale"]
            with np.errstate(divide="ignore"):
                return {f"{self.prefix}.shape": 1.0 / k - np.log(s) + np.log(t),
                        f"{self.prefix}.scale": np.full(t.shape, -k / s)}
        if self.form == "constant":
            return {f"{self.prefix}.value": np.full(t.shape, 1.0 / p[f"{self.prefix}.value"])}
        idx = np.searchsorted(self.cuts, t, side="right")
        return {n: (idx == j) / p[n] for j, n in enumerate(self.names)}


@dataclass(frozen=True)
class DriftForm:
    """Drift baseline ``b0(t)`` (constant or piecewise constant) and its
    integral ``B0(t)``; parameters ``b0.value`` or ``b0.v<j>``."""

    form: str = "constant"
    cuts: tuple[float, ...] = ()

    @property
    def names(self) -> list[str]:
        if self.form == "constant":
            return ["b0.value"]
        return [f"b0.v{j}" for j in range(len(self.cuts) + 1)]

    @property
    def breakpoints(self) -> tuple[float, ...]:
        if self.form == "weibull":
            # graded panels near 0, where t^(shape-1) is not smooth
            return WEIBULL_GRADING
        return self.cuts if self.form == "piecewise_constant" else ()

    def basis(self, t) -> np.ndarray:
        """``B0(t) = basis(t) @ levels``: time spent in each piece up to t."""
        t = np.asarray(t, dtype=float)
        if self.form == "constant":
            return t[..., None]
        edges = np.concatenate(([0.0], self.cuts, [np.inf]))
        return np.clip(t[..., None] - edges[:-1], 0.0, None).clip(max=np.diff(edges))

    def levels(self, p) -> np.ndarray:
        return np.array([p[n] for n in self.names])


def _hazard_form(doc, prefix: str) -> HazardForm:
    if doc is None:
        return HazardForm(prefix)
    if isinstance(doc, str):
        doc = {doc: {}}
    kind, body = one_of(doc, f"baselines.{prefix}", ("weibull", "constant", "piecewise_constant"))
    if kind == "piecewise_constant":
        body = take(body, f"baselines.{prefix}.piecewise_constant", ("cuts",))
        return HazardForm(prefix, kind, tuple(as_float(c, prefix) for c in body["cuts"]))
    return HazardForm(prefix, kind)


def _drift_form(doc) -> DriftForm:
    if doc is None:
        return DriftForm()
    if isinstance(doc, str):
        doc = {doc: {}}
    kind, body = one_of(doc, "baselines.b0", ("constant", "piecewise_constant"))
    if kind == "piecewise_constant":
        body = take(body, "baselines.b0.piecewise_constant", ("cuts",))
        return DriftForm(kind, tuple(as_float(c, "b0") for c in body["cuts"]))
    return DriftForm()


@dataclass(frozen=True)
class ModelSpec:
    """Which likelihood, which channels feed it and how integrals are done.

    ``survival_target`` (naive_survival_only) is ``"Y"`` (event channel, death
    treated as censoring) or ``"death"`` (death time, marginal over Y).
    """

    family: str
    event_channel: str | None = None
    gaussian_channel: str | None = None
    threshold_channels: tuple[str, ...] = ()
    survival_target: str = "Y"
    attribute: str | None = "G"
    factor: str | None = "V"
    random_effect: bool = True
    baselines: dict = field(default_factory=dict)
    gh_nodes: int = 20
    gl_nodes: int = 7
    max_segment: float = 1.0
    qmc_points: int = 512
    qmc_seed: int = 0
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        fam = self.family
        if fam == "illness_death_interval":
            if self.event_channel is None or self.gaussian_channel or self.threshold_channels:
                raise IncompatibleChannels("illness_death_interval uses exactly one event channel")
        elif fam == "naive_survival_only":
            if self.gaussian_channel or self.threshold_channels:
                raise IncompatibleChannels("naive_survival_only uses event data only")
            if self.survival_target == "Y" and self.event_channel is None:
                raise IncompatibleChannels("naive_survival_only on Y needs an event channel")
            if self.survival_target not in ("Y", "death"):
                raise ConfigError("survival_target must be 'Y' or 'death'")
        else:
            if self.event_channel is not None:
                raise IncompatibleChannels(f"{fam} takes longitudinal channels, not event channels")
            if self.gaussian_channel is None and not self.threshold_channels:
                raise IncompatibleChannels(f"{fam} needs at least one longitudinal channel")
            if self.gaussian_channel and self.threshold_channels:
                raise IncompatibleChannels("mixing a Gaussian (Model-a) channel with threshold (Model-b) "
                                           "channels in one fit is not supported")
            if fam == "naive_mixed_longitudinal" and self.threshold_channels:
                raise IncompatibleChannels("naive_mixed_longitudinal takes a Gaussian channel")

    def hazard(self, prefix: str) -> HazardForm:
        return _hazard_form(self.baselines.get(prefix), prefix)

    @property
    def drift(self) -> DriftForm:
        return _drift_form(self.baselines.get("b0"))

    @property
    def uses_death(self) -> bool:
        return self.family in ("illness_death_interval", "joint_quantitative_shared_effect") or \
            (self.family == "naive_survival_only" and self.survival_target == "death")

    def with_fixed(self, **kw) -> "ModelSpec":
        from dataclasses import replace
        return replace(self, fixed={**self.fixed, **kw})

    def to_config(self) -> dict:
        doc = {"family": self.family, "attribute": self.attribute, "factor": self.factor,
               "random_effect": self.random_effect, "baselines": self.baselines,
               "quadrature": {"gh_nodes": self.gh_nodes, "gl_nodes": self.gl_nodes, "max_segment": self.max_segment},
               "qmc": {"points": self.qmc_points, "seed": self.qmc_seed}, "fixed": dict(self.fixed)}
        ch = {}
        if self.event_channel:
            ch["event"] = self.event_channel
        if self.gaussian_channel:
            ch["gaussian"] = self.gaussian_channel
        if self.threshold_channels:
            ch["threshold"] = list(self.threshold_channels)
        doc["channels"] = ch
        if self.family == "naive_survival_only":
            doc["survival_target"] = self.survival_target
        return doc

    @classmethod
    def from_config(cls, doc: Mapping, where: str = "model") -> "ModelSpec":
        doc = take(doc, where, ("family",), ("channels", "survival_target", "attribute", "factor", "random_effect",
                                             "baselines", "quadrature", "qmc", "fixed"))
        ch = take(doc.get("channels", {}), f"{where}.channels", (), ("event", "gaussian", "threshold"))
        quad = take(doc.get("quadrature", {}), f"{where}.quadrature", (), ("gh_nodes", "gl_nodes", "max_segment"))
        qmc = take(doc.get("qmc", {}), f"{where}.qmc", (), ("points", "seed"))
        baselines = take(doc.get("baselines", {}), f"{where}.baselines", (), ("a01", "a02", "aD", "b0"))
        return cls(
            family=doc["family"],
            event_channel=ch.get("event"),
            gaussian_channel=ch.get("gaussian"),
            threshold_channels=tuple(ch.get("threshold", ())),
            survival_target=doc.get("survival_target", "Y"),
            attribute=doc.get("attribute", "G"),
            factor=doc.get("factor", "V"),
            random_effect=bool(doc.get("random_effect", True)),
            baselines=dict(baselines),
            gh_nodes=int(quad.get("gh_nodes", 20)),
            gl_nodes=int(quad.get("gl_nodes", 7)),
            max_segment=float(quad.get("max_segment", 1.0)),
            qmc_points=int(qmc.get("points", 512)),
            qmc_seed=int(qmc.get("seed", 0)),
            fixed={k: as_float(v, f"{where}.fixed.{k}") for k, v in doc.get("fixed", {}).items()},
        )
