"""Declarative stochastic systems with a privileged death process.

A system is a set of processes (counting, diffusion, attribute, external
factor) whose laws are given by intensities.  Death is the counting process
named ``"death"``: every other process lives on ``[0, T_D)``, so no law may
depend on death.  Influence is read off the linear predictors: ``A -> B`` iff
A appears with a nonzero coefficient in B's intensity or drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from .baseline import BaselineFunction
from .config import as_float, check_schema, load_json, one_of, take
from .errors import (
    AttributeInfluenced,
    ConfigError,
    DeathHasOutgoingEdge,
    InvalidSystem,
    NoDeathProcess,
    TargetIsAttribute,
    UnknownReference,
)

DEATH = "death"
KINDS = ("counting", "diffusion", "attribute", "external_factor")


@dataclass(frozen=True)
class ProcessDecl:
    name: str
    kind: str
    state_space: str
    latent: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"process {self.name!r}: unknown kind {self.kind!r}")
        if self.state_space not in ("binary", "real"):
            raise ConfigError(f"process {self.name!r}: unknown state space {self.state_space!r}")


@dataclass(frozen=True)
class LinearPredictor:
    """``sum(coef * value)`` over true current values, plus ``observed_terms``
    reading the last *observed* value of a monitored process."""

    terms: tuple[tuple[str, float], ...] = ()
    observed_terms: tuple[tuple[str, float], ...] = ()

    @classmethod
    def of(cls, terms: Mapping[str, float] | None = None, observed: Mapping[str, float] | None = None):
        return cls(tuple((k, float(v)) for k, v in (terms or {}).items()),
                   tuple((k, float(v)) for k, v in (observed or {}).items()))

    def coef(self, name: str) -> float:
        return sum(c for s, c in self.terms if s == name)

    def observed_coef(self, name: str) -> float:
        return sum(c for s, c in self.observed_terms if s == name)

    @property
    def sources(self) -> set[str]:
        return {s for s, c in self.terms if c != 0.0}

    @property
    def observed_sources(self) -> set[str]:
        return {s for s, c in self.observed_terms if c != 0.0}

    def replace_coef(self, name: str, value: float, observed: bool = False) -> "LinearPredictor":
        attr = "observed_terms" if observed else "terms"
        terms = [(s, c) for s, c in getattr(self, attr) if s != name] + [(name, float(value))]
        return replace(self, **{attr: tuple(terms)})


@dataclass(frozen=True)
class IntensitySpec:
    """Counting: ``at_risk * baseline(t) * exp(lp)``.  Diffusion: drift
    ``baseline(t) + lp`` with Brownian scale ``sigma`` and a normal initial law."""

    baseline: BaselineFunction
    predictor: LinearPredictor = LinearPredictor()
    sigma: float = 0.0
    initial_mean: float = 0.0
    initial_sd: float = 0.0


@dataclass(frozen=True)
class AttributeLaw:
    kind: str  # bernoulli | normal
    p: float = 0.5
    mean: float = 0.0
    sd: float = 1.0

    @property
    def state_space(self) -> str:
        return "binary" if self.kind == "bernoulli" else "real"


@dataclass(frozen=True)
class FactorLaw:
    """Deterministic factor path ``v(t) = intercept + slope * t``."""

    intercept: float = 0.0
    slope: float = 0.0


@dataclass(frozen=True)
class Monitor:
    """Noisy readings ``Y(t_j) + eps_j`` taken while the subject is alive and
    fed back into the system through ``observed_terms``."""

    process: str
    times: tuple[float, ...]
    noise_sd: float


@dataclass(frozen=True)
class SystemSpec:
    processes: tuple[ProcessDecl, ...]
    intensities: Mapping[str, IntensitySpec]
    attribute_laws: Mapping[str, AttributeLaw] = field(default_factory=dict)
    factor_laws: Mapping[str, FactorLaw] = field(default_factory=dict)
    monitors: Mapping[str, Monitor] = field(default_factory=dict)
    death_name: str = DEATH

    def decl(self, name: str) -> ProcessDecl:
        for p in self.processes:
            if p.name == name:
                return p
        raise UnknownReference(f"no process named {name!r}")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.processes]

    def of_kind(self, *kinds: str) -> list[ProcessDecl]:
        return [p for p in self.processes if p.kind in kinds]


@dataclass(frozen=True)
class ValidatedSystem:
    """Sealed, immutable handle returned by :func:`validate_system`."""

    spec: SystemSpec
    order: tuple[str, ...]

    @property
    def death(self) -> str:
        return self.spec.death_name

    @property
    def counting(self) -> list[str]:
        return [p.name for p in self.spec.of_kind("counting") if p.name != self.death]

    @property
    def diffusions(self) -> list[str]:
        return [p.name for p in self.spec.of_kind("diffusion")]

    @property
    def attributes(self) -> list[str]:
        return [p.name for p in self.spec.of_kind("attribute")]

    @property
    def factors(self) -> list[str]:
        return [p.name for p in self.spec.of_kind("external_factor")]

    def factor_is_diffusion(self, name: str) -> bool:
        return name in self.spec.intensities

    def default_factor(self) -> str:
        if len(self.factors) != 1:
            raise InvalidSystem(f"expected exactly one external factor, found {self.factors}")
        return self.factors[0]

    def default_target(self) -> str:
        cands = [n for n in self.counting + self.diffusions if not self.spec.decl(n).latent]
        if len(cands) != 1:
            raise InvalidSystem(f"cannot infer the outcome process among {cands}; pass it explicitly")
        return cands[0]


@dataclass(frozen=True)
class InfluenceGraph:
    nodes: tuple[ProcessDecl, ...]
    edges: frozenset[tuple[str, str]]
    observed_edges: frozenset[tuple[str, str]] = frozenset()
    death: str = DEATH

    def parents(self, name: str) -> set[str]:
        return {a for a, b in self.edges if b == name}

    def children(self, name: str) -> set[str]:
        return {b for a, b in self.edges if a == name}

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self.edges

    def node(self, name: str) -> ProcessDecl:
        for n in self.nodes:
            if n.name == name:
                return n
        raise UnknownReference(f"no node {name!r}")

    @property
    def latent(self) -> set[str]:
        return {n.name for n in self.nodes if n.latent}

    def to_dot(self) -> str:
        """DOT text; death is a star, attributes are boxes, latent nodes dashed,
        influences through observed values dotted."""
        lines = ["digraph influence {", "  rankdir=LR;"]
        for n in sorted(self.nodes, key=lambda d: d.name):
            if n.name == self.death:
                attrs = ['shape=star', 'label="★"']
            elif n.kind == "attribute":
                attrs = ["shape=box"]
            else:
                attrs = ["shape=ellipse"]
            if n.latent:
                attrs.append("style=dashed")
            lines.append(f'  "{n.name}" [{", ".join(attrs)}];')
        for a, b in sorted(self.edges):
            lines.append(f'  "{a}" -> "{b}";')
        for a, b in sorted(self.observed_edges):
            lines.append(f'  "{a}" -> "{b}" [style=dotted, label="observed"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class NucVerdict:
    status: str  # nuc | confounded | perfect_unknown
    by: tuple[str, ...] = ()

    def __str__(self):
        return f"confounded({', '.join(self.by)})" if self.status == "confounded" else self.status


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_system(spec: SystemSpec) -> ValidatedSystem:
    """Check the structural rules and return a sealed handle.

    Raises
    ------
    NoDeathProcess, DeathHasOutgoingEdge, UnknownReference, AttributeInfluenced,
    InvalidSystem
    """
    names = [p.name for p in spec.processes]
    if len(set(names)) != len(names):
        raise InvalidSystem(f"duplicate process names in {names}")
    by_name = {p.name: p for p in spec.processes}
    death = spec.death_name
    if death not in by_name:
        raise NoDeathProcess(f"no process named {death!r}; the death process is mandatory")
    if by_name[death].kind != "counting":
        raise InvalidSystem("the death process must be a counting process")

    for name in spec.intensities:
        if name not in by_name:
            raise UnknownReference(f"intensity given for undeclared process {name!r}")
        if by_name[name].kind == "attribute":
            raise AttributeInfluenced(f"attribute {name!r} cannot have an intensity (attributes are time-constant)")

    for p in spec.processes:
        if p.kind == "counting" and p.state_space != "binary":
            raise InvalidSystem(f"counting process {p.name!r} must have binary state space")
        if p.kind in ("diffusion", "external_factor") and p.state_space != "real":
            raise InvalidSystem(f"{p.kind} {p.name!r} must have real state space")
        if p.kind in ("counting", "diffusion") and p.name not in spec.intensities:
            raise InvalidSystem(f"process {p.name!r} needs an intensity")
        if p.kind == "attribute" and p.name not in spec.attribute_laws:
            raise InvalidSystem(f"attribute {p.name!r} needs a law")
        if p.kind == "external_factor" and (p.name in spec.intensities) == (p.name in spec.factor_laws):
            raise InvalidSystem(f"factor {p.name!r} needs exactly one law (deterministic or diffusion)")

    for target, inten in spec.intensities.items():
        refs = [s for s, _ in inten.predictor.terms] + [s for s, _ in inten.predictor.observed_terms]
        for src in refs:
            if src == death:
                raise DeathHasOutgoingEdge(
                    f"{target!r} references {death!r}: no process may depend on death")
            if src not in by_name:
                raise UnknownReference(f"{target!r} references unknown process {src!r}")
        for src, _ in inten.predictor.observed_terms:
            if src not in spec.monitors:
                raise UnknownReference(f"{target!r} uses the observed value of {src!r} but no monitor is declared")
        kind = by_name[target].kind
        if kind == "counting":
            if not inten.baseline.is_nonnegative:
                raise InvalidSystem(f"hazard baseline of {target!r} must be nonnegative")
        if inten.sigma < 0 or inten.initial_sd < 0:
            raise InvalidSystem(f"{target!r}: sigma and initial sd must be >= 0")
        for _, c in inten.predictor.terms + inten.predictor.observed_terms:
            if not math.isfinite(c):
                raise InvalidSystem(f"{target!r}: non-finite coefficient")
        if kind == "external_factor":
            bad = {s for s, c in inten.predictor.terms if c != 0 and by_name[s].kind != "attribute"}
            if bad:
                raise InvalidSystem(f"factor {target!r} drift may only depend on attributes, got {sorted(bad)}")

    for name, mon in spec.monitors.items():
        if name != mon.process or mon.process not in by_name:
            raise UnknownReference(f"monitor for unknown process {name!r}")
        if by_name[mon.process].kind != "diffusion":
            raise InvalidSystem("monitors observe diffusion processes only")
        if mon.noise_sd < 0:
            raise InvalidSystem("monitor noise_sd must be >= 0")

    order = tuple(sorted(names))
    return ValidatedSystem(spec=spec, order=order)


def influence_graph(sys: ValidatedSystem) -> InfluenceGraph:
    """Directed graph with an edge A -> B iff A has a nonzero coefficient in
    B's intensity (or drift)."""
    spec = sys.spec
    edges, observed = set(), set()
    for target, inten in spec.intensities.items():
        for src in inten.predictor.sources:
            edges.add((src, target))
        for src in inten.predictor.observed_sources:
            observed.add((src, target))
    nodes = tuple(sorted(spec.processes, key=lambda p: p.name))
    return InfluenceGraph(nodes=nodes, edges=frozenset(edges), observed_edges=frozenset(observed),
                          death=spec.death_name)


def is_nuc(sys: ValidatedSystem, factor: str, target: str, graph: InfluenceGraph | None = None) -> NucVerdict:
    """No-unmeasured-confounder verdict for ``(factor, target)``.

    A latent process with edges into both the factor and the target is a
    confounder.  When the factor or the target is itself latent the verdict is
    ``perfect_unknown``.
    """
    if factor == target:
        raise ValueError("factor and target must differ")
    graph = graph or influence_graph(sys)
    tdecl = graph.node(target)
    fdecl = graph.node(factor)
    if tdecl.kind == "attribute":
        raise TargetIsAttribute(f"target {target!r} is an attribute; attributes cannot be influenced")
    if tdecl.latent or fdecl.latent:
        return NucVerdict("perfect_unknown")
    confounders = tuple(sorted(u for u in graph.latent
                               if graph.has_edge(u, target) and graph.has_edge(u, factor)))
    if confounders:
        return NucVerdict("confounded", confounders)
    return NucVerdict("nuc")


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _predictor(doc: Mapping, where: str) -> LinearPredictor:
    terms = {k: as_float(v, f"{where}.terms.{k}") for k, v in doc.get("terms", {}).items()}
    observed = {k: as_float(v, f"{where}.observed_terms.{k}") for k, v in doc.get("observed_terms", {}).items()}
    return LinearPredictor.of(terms, observed)


def _diffusion(doc: Mapping, where: str) -> IntensitySpec:
    doc = take(doc, where, ("drift",), ("initial", "sigma"))
    drift = take(doc["drift"], f"{where}.drift", ("baseline",), ("terms",))
    init = take(doc.get("initial", {}), f"{where}.initial", (), ("mean", "sd"))
    return IntensitySpec(
        baseline=BaselineFunction.from_config(drift["baseline"], f"{where}.drift.baseline"),
        predictor=_predictor(drift, f"{where}.drift"),
        sigma=as_float(doc.get("sigma", 0.0), f"{where}.sigma"),
        initial_mean=as_float(init.get("mean", 0.0), where),
        initial_sd=as_float(init.get("sd", 0.0), where),
    )


def system_from_config(doc: Mapping) -> SystemSpec:
    """Build a :class:`SystemSpec` from the JSON dialect documented in
    ``docs/config_schema.md``."""
    check_schema(doc, "system")
    doc = take(doc, "system", ("schema", "processes"), ("monitors", "description"))
    procs, intens, attr_laws, factor_laws = [], {}, {}, {}
    for name, body in doc["processes"].items():
        where = f"processes.{name}"
        kind = body.get("kind") if isinstance(body, Mapping) else None
        if kind == "attribute":
            body = take(body, where, ("kind", "law"), ("latent",))
            law_kind, law = one_of(body["law"], f"{where}.law", ("bernoulli", "normal"))
            if law_kind == "bernoulli":
                p = as_float(law, f"{where}.law.bernoulli")
                if not 0 <= p <= 1:
                    raise ConfigError(f"{where}: bernoulli p must lie in [0, 1]")
                attr_laws[name] = AttributeLaw("bernoulli", p=p)
            else:
                law = take(law, f"{where}.law.normal", ("mean", "sd"))
                attr_laws[name] = AttributeLaw("normal", mean=as_float(law["mean"], where), sd=as_float(law["sd"], where))
            procs.append(ProcessDecl(name, "attribute", attr_laws[name].state_space, bool(body.get("latent", False))))
        elif kind == "counting":
            body = take(body, where, ("kind", "hazard"), ("latent",))
            hz = take(body["hazard"], f"{where}.hazard", ("baseline",), ("terms", "observed_terms"))
            intens[name] = IntensitySpec(BaselineFunction.from_config(hz["baseline"], f"{where}.hazard.baseline"),
                                         _predictor(hz, f"{where}.hazard"))
            procs.append(ProcessDecl(name, "counting", "binary", bool(body.get("latent", False))))
        elif kind == "diffusion":
            body = take(body, where, ("kind", "drift"), ("initial", "sigma", "latent"))
            latent = bool(body.pop("latent", False))
            body.pop("kind")
            intens[name] = _diffusion(body, where)
            procs.append(ProcessDecl(name, "diffusion", "real", latent))
        elif kind == "external_factor":
            body = take(body, where, ("kind", "law"), ("latent",))
            law_kind, law = one_of(body["law"], f"{where}.law", ("deterministic", "diffusion"))
            if law_kind == "deterministic":
                law = take(law, f"{where}.law.deterministic", (), ("intercept", "slope"))
                factor_laws[name] = FactorLaw(as_float(law.get("intercept", 0.0), where),
                                              as_float(law.get("slope", 0.0), where))
            else:
                intens[name] = _diffusion(law, f"{where}.law.diffusion")
            procs.append(ProcessDecl(name, "external_factor", "real", bool(body.get("latent", False))))
        else:
            raise ConfigError(f"{where}: kind must be one of {KINDS}, got {kind!r}")
    monitors = {}
    for name, body in doc.get("monitors", {}).items():
        body = take(body, f"monitors.{name}", ("times", "noise_sd"))
        monitors[name] = Monitor(name, tuple(float(t) for t in body["times"]),
                                 as_float(body["noise_sd"], f"monitors.{name}.noise_sd"))
    return SystemSpec(processes=tuple(procs), intensities=intens, attribute_laws=attr_laws,
                      factor_laws=factor_laws, monitors=monitors)


def system_to_config(spec: SystemSpec) -> dict:
    procs = {}
    for p in spec.processes:
        if p.kind == "attribute":
            law = spec.attribute_laws[p.name]
            body = {"kind": "attribute",
                    "law": {"bernoulli": law.p} if law.kind == "bernoulli"
                    else {"normal": {"mean": law.mean, "sd": law.sd}}}
        elif p.kind == "counting":
            it = spec.intensities[p.name]
            hz = {"baseline": it.baseline.to_config(), "terms": dict(it.predictor.terms)}
            if it.predictor.observed_terms:
                hz["observed_terms"] = dict(it.predictor.observed_terms)
            body = {"kind": "counting", "hazard": hz}
        else:
            if p.name in spec.factor_laws:
                fl = spec.factor_laws[p.name]
                body = {"kind": p.kind, "law": {"deterministic": {"intercept": fl.intercept, "slope": fl.slope}}}
            else:
                it = spec.intensities[p.name]
                diff = {"initial": {"mean": it.initial_mean, "sd": it.initial_sd},
                        "drift": {"baseline": it.baseline.to_config(), "terms": dict(it.predictor.terms)},
                        "sigma": it.sigma}
                body = {"kind": p.kind, **diff} if p.kind == "diffusion" else {"kind": p.kind, "law": {"diffusion": diff}}
        if p.latent:
            body["latent"] = True
        procs[p.name] = body
    doc = {"schema": "deathsys/1", "processes": procs}
    if spec.monitors:
        doc["monitors"] = {k: {"times": list(m.times), "noise_sd": m.noise_sd} for k, m in spec.monitors.items()}
    return doc


def load_system(path) -> ValidatedSystem:
    return validate_system(system_from_config(load_json(path)))


def with_overrides(sys: ValidatedSystem, params: Mapping[str, float] | None) -> ValidatedSystem:
    """Return a copy of ``sys`` with selected true-law values replaced.

    Keys are ``"<process>.<source>"`` for a predictor coefficient,
    ``"<process>.observed.<source>"``, ``"<process>.sigma"``,
    ``"<process>.initial_mean"``, ``"<process>.initial_sd"`` and
    ``"<process>.baseline.<field>"`` (``value``, ``shape``, ``scale``).
    """
    if not params:
        return sys
    spec = sys.spec
    intens = dict(spec.intensities)
    for key, value in params.items():
        parts = key.split(".")
        if parts[0] not in intens:
            raise UnknownReference(f"override {key!r}: {parts[0]!r} has no intensity")
        it = intens[parts[0]]
        if len(parts) == 2 and parts[1] in ("sigma", "initial_mean", "initial_sd"):
            it = replace(it, **{parts[1]: float(value)})
        elif len(parts) == 3 and parts[1] == "baseline":
            it = replace(it, baseline=replace(it.baseline, **{parts[2]: float(value)}))
        elif len(parts) == 3 and parts[1] == "observed":
            it = replace(it, predictor=it.predictor.replace_coef(parts[2], value, observed=True))
        elif len(parts) == 2:
            it = replace(it, predictor=it.predictor.replace_coef(parts[1], value))
        else:
            raise ConfigError(f"cannot interpret override key {key!r}")
        intens[parts[0]] = it
    return validate_system(replace(spec, intensities=dict(intens)))
