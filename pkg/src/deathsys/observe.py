"""Observation schemes: response indicator processes, noise models, datasets.

A channel observes one system process.  Its response indicator process
(RIP) says when; its noise model says how.  Death truncation is always in
force: nothing is recorded at or after a subject's (censored) death time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import logistic, norm

from . import rng as rngmod
from .config import SCHEMA, as_float, check_schema, fingerprint, load_json, one_of, take
from .errors import (
    ChannelUnmapped,
    ConfigError,
    KindIncompatibleWithStateSpace,
    RuleInputUnavailable,
    UndeclaredInputs,
)
from .simulate import Population
from .system import InfluenceGraph, influence_graph

INPUTS = ("observed_history", "true_latent", "attributes", "death_status")
EVENT_COLUMNS = ["subject", "channel", "process", "status", "time", "left", "right"]


def _typed_events(ev: pd.DataFrame) -> pd.DataFrame:
    return ev.astype({"subject": np.int64, "channel": object, "process": object, "status": object,
                      "time": float, "left": float, "right": float}).reset_index(drop=True)


# ---------------------------------------------------------------------------
# response indicator processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NullRip:
    """Never observed (latent processes)."""

    inputs: tuple = ()


@dataclass(frozen=True)
class ContinuousRightCensored:
    """Observed continuously until min(death, admin, Exp(random_rate))."""

    admin: float | None = None
    random_rate: float = 0.0
    inputs: tuple = ()


@dataclass(frozen=True)
class FixedVisits:
    times: tuple[float, ...]
    inputs: tuple = ()


@dataclass(frozen=True)
class DoctorCare:
    """Next visit after ``clip(base_delay + slope * z_last, min_delay, max_delay)``,
    ``z_last`` being the last value recorded on this channel."""

    first: float
    base_delay: float
    slope: float
    min_delay: float
    max_delay: float
    until: float
    inputs: tuple | None = ("observed_history",)


@dataclass(frozen=True)
class OutcomeDependent:
    """Scheduled visit at ``t`` is missed with probability
    ``expit(intercept + slope * Y_t)`` on the true current value."""

    times: tuple[float, ...]
    intercept: float
    slope: float
    inputs: tuple | None = ("true_latent",)


@dataclass(frozen=True)
class Dropout:
    """Permanent loss to follow-up with hazard
    ``rate * exp(c_obs * z_last + c_true * Y_t + sum_a c_a * a)``, checked at
    each visit of the inner scheme."""

    inner: object
    rate: float
    observed: float = 0.0
    true: float = 0.0
    attributes: tuple[tuple[str, float], ...] = ()
    inputs: tuple | None = None


@dataclass(frozen=True)
class DeathTruncated:
    """Explicit ``R = (1 - D) R_inner``; truncation by death is applied to
    every channel regardless, this wrapper only documents it."""

    inner: object

    @property
    def inputs(self):
        return ("death_status",)


def _inputs_field(body, where, required: bool):
    if "inputs" not in body:
        if required:
            return None
        return ()
    raw = body["inputs"]
    if raw is None:
        return None
    if not isinstance(raw, list):
        raise ConfigError(f"{where}.inputs: expected a list")
    return tuple(str(x) for x in raw)


def rip_from_config(doc, where: str = "rip"):
    if doc == "null":
        return NullRip()
    kind, body = one_of(doc, where, ("null", "continuous_right_censored", "discrete_visits", "dropout",
                                     "death_truncated"))
    w = f"{where}.{kind}"
    if kind == "null":
        return NullRip()
    if kind == "continuous_right_censored":
        body = take(body, w, (), ("admin", "random_rate"))
        admin = body.get("admin")
        return ContinuousRightCensored(None if admin is None else as_float(admin, w),
                                       as_float(body.get("random_rate", 0.0), w))
    if kind == "discrete_visits":
        sk, sb = one_of(body, w, ("fixed", "doctor_care", "outcome_dependent"))
        ws = f"{w}.{sk}"
        if sk == "fixed":
            sb = take(sb, ws, ("times",))
            return FixedVisits(_times(sb["times"], ws))
        if sk == "doctor_care":
            sb = take(sb, ws, ("first", "base_delay", "slope", "min_delay", "max_delay", "until", "inputs"))
            inputs = _inputs_field(sb, ws, True)
            rip = DoctorCare(*(as_float(sb[k], ws) for k in ("first", "base_delay", "slope", "min_delay",
                                                             "max_delay", "until")), inputs=inputs)
            if not rip.min_delay > 0 or rip.max_delay < rip.min_delay:
                raise ConfigError(f"{ws}: need 0 < min_delay <= max_delay")
            return rip
        sb = take(sb, ws, ("times", "intercept", "slope", "inputs"))
        return OutcomeDependent(_times(sb["times"], ws), as_float(sb["intercept"], ws), as_float(sb["slope"], ws),
                                inputs=_inputs_field(sb, ws, True))
    if kind == "dropout":
        body = take(body, w, ("inner", "rate", "inputs"), ("observed", "true", "attributes"))
        attrs = tuple((k, as_float(v, w)) for k, v in body.get("attributes", {}).items())
        return Dropout(rip_from_config(body["inner"], f"{w}.inner"), as_float(body["rate"], w),
                       as_float(body.get("observed", 0.0), w), as_float(body.get("true", 0.0), w), attrs,
                       _inputs_field(body, w, True))
    return DeathTruncated(rip_from_config(body, w))


def rip_to_config(rip):
    if isinstance(rip, NullRip):
        return {"null": {}}
    if isinstance(rip, ContinuousRightCensored):
        out = {"random_rate": rip.random_rate}
        if rip.admin is not None:
            out["admin"] = rip.admin
        return {"continuous_right_censored": out}
    if isinstance(rip, FixedVisits):
        return {"discrete_visits": {"fixed": {"times": list(rip.times)}}}
    if isinstance(rip, DoctorCare):
        return {"discrete_visits": {"doctor_care": {
            "first": rip.first, "base_delay": rip.base_delay, "slope": rip.slope, "min_delay": rip.min_delay,
            "max_delay": rip.max_delay, "until": rip.until,
            "inputs": None if rip.inputs is None else list(rip.inputs)}}}
    if isinstance(rip, OutcomeDependent):
        return {"discrete_visits": {"outcome_dependent": {
            "times": list(rip.times), "intercept": rip.intercept, "slope": rip.slope,
            "inputs": None if rip.inputs is None else list(rip.inputs)}}}
    if isinstance(rip, Dropout):
        return {"dropout": {"inner": rip_to_config(rip.inner), "rate": rip.rate, "observed": rip.observed,
                            "true": rip.true, "attributes": dict(rip.attributes),
                            "inputs": None if rip.inputs is None else list(rip.inputs)}}
    if isinstance(rip, DeathTruncated):
        return {"death_truncated": rip_to_config(rip.inner)}
    raise TypeError(f"not a RIP: {rip!r}")


def _times(raw, where) -> tuple[float, ...]:
    times = tuple(as_float(t, where) for t in raw)
    if any(b <= a for a, b in zip(times, times[1:])) or any(t < 0 for t in times):
        raise ConfigError(f"{where}: visit times must be nonnegative and strictly increasing")
    return times


def _base_rip(rip):
    """Strip wrappers; return (innermost rip, list of wrappers outer to inner)."""
    wrappers = []
    while isinstance(rip, (DeathTruncated, Dropout)):
        wrappers.append(rip)
        rip = rip.inner
    return rip, wrappers


# ---------------------------------------------------------------------------
# noise models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """``none``, ``model_a`` (additive Gaussian, sd), ``model_b_ordinal``
    (cuts, law, scale), ``model_b_binary`` (cut, law, scale),
    ``misclassification`` (sensitivity, specificity) or ``feedback`` (reuse the
    values the system itself recorded through a monitor)."""

    kind: str = "none"
    sd: float = 0.0
    cuts: tuple[float, ...] = ()
    law: str = "logistic"
    scale: float = 1.0
    sensitivity: float = 1.0
    specificity: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "model_a", "model_b_ordinal", "model_b_binary", "misclassification", "feedback"):
            raise ConfigError(f"unknown noise model {self.kind!r}")
        if any(b <= a for a, b in zip(self.cuts, self.cuts[1:])):
            raise ConfigError("threshold cuts must be strictly increasing")
        if self.law not in ("logistic", "normal"):
            raise ConfigError(f"threshold noise law must be logistic or normal, got {self.law!r}")
        if not (0 < self.sensitivity <= 1 and 0 < self.specificity <= 1):
            raise ConfigError("sensitivity and specificity must lie in (0, 1]")
        if self.sd < 0 or self.scale < 0:
            raise ConfigError("noise scales must be >= 0")

    @property
    def threshold(self) -> bool:
        return self.kind in ("model_b_ordinal", "model_b_binary")

    @property
    def n_levels(self) -> int | None:
        return len(self.cuts) + 1 if self.threshold else None

    def quantile(self, u):
        """Noise value with CDF level ``u`` (threshold models)."""
        f = norm.ppf if self.law == "normal" else logistic.ppf
        return self.scale * f(u)

    @classmethod
    def from_config(cls, doc, where: str = "noise") -> "NoiseModel":
        if doc in ("none", "feedback"):
            return cls(doc)
        kind, body = one_of(doc, where, ("none", "model_a", "model_b_ordinal", "model_b_binary",
                                         "misclassification", "feedback"))
        w = f"{where}.{kind}"
        if kind in ("none", "feedback"):
            return cls(kind)
        if kind == "model_a":
            body = take(body, w, ("sd",))
            return cls(kind, sd=as_float(body["sd"], w))
        if kind == "model_b_ordinal":
            body = take(body, w, ("cuts",), ("law", "scale"))
            return cls(kind, cuts=tuple(as_float(c, w) for c in body["cuts"]), law=body.get("law", "logistic"),
                       scale=as_float(body.get("scale", 1.0), w))
        if kind == "model_b_binary":
            body = take(body, w, ("cut",), ("law", "scale"))
            return cls(kind, cuts=(as_float(body["cut"], w),), law=body.get("law", "logistic"),
                       scale=as_float(body.get("scale", 1.0), w))
        body = take(body, w, ("sensitivity", "specificity"))
        return cls(kind, sensitivity=as_float(body["sensitivity"], w), specificity=as_float(body["specificity"], w))

    def to_config(self):
        if self.kind in ("none", "feedback"):
            return self.kind
        if self.kind == "model_a":
            return {"model_a": {"sd": self.sd}}
        if self.kind == "model_b_ordinal":
            return {"model_b_ordinal": {"cuts": list(self.cuts), "law": self.law, "scale": self.scale}}
        if self.kind == "model_b_binary":
            return {"model_b_binary": {"cut": self.cuts[0], "law": self.law, "scale": self.scale}}
        return {"misclassification": {"sensitivity": self.sensitivity, "specificity": self.specificity}}


@dataclass(frozen=True)
class Channel:
    name: str
    process: str
    rip: object
    noise: NoiseModel = NoiseModel()


@dataclass(frozen=True)
class ObservationScheme:
    """Channels plus the censoring law of death (administrative end of
    follow-up and/or an independent exponential censoring rate)."""

    channels: tuple[Channel, ...]
    death_admin: float | None = None
    death_random_rate: float = 0.0
    attributes: tuple[str, ...] | None = None  # observed attributes; None = all non-latent

    def channel(self, name: str) -> Channel:
        for c in self.channels:
            if c.name == name:
                return c
        raise ChannelUnmapped(f"no channel named {name!r}")

    def to_config(self) -> dict:
        doc = {"schema": SCHEMA,
               "channels": {c.name: {"process": c.process, "rip": rip_to_config(c.rip), "noise": c.noise.to_config()}
                            for c in self.channels},
               "death": {"random_rate": self.death_random_rate}}
        if self.death_admin is not None:
            doc["death"]["admin"] = self.death_admin
        if self.attributes is not None:
            doc["attributes"] = list(self.attributes)
        return doc

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_config())


def scheme_from_config(doc: Mapping) -> ObservationScheme:
    check_schema(doc, "scheme")
    doc = take(doc, "scheme", ("schema", "channels"), ("death", "attributes", "description"))
    chans = []
    for name, body in doc["channels"].items():
        w = f"channels.{name}"
        body = take(body, w, ("process", "rip"), ("noise",))
        chans.append(Channel(name, str(body["process"]), rip_from_config(body["rip"], f"{w}.rip"),
                             NoiseModel.from_config(body.get("noise", "none"), f"{w}.noise")))
    death = take(doc.get("death", {}), "death", (), ("admin", "random_rate"))
    admin = death.get("admin")
    attrs = doc.get("attributes")
    return ObservationScheme(tuple(chans), None if admin is None else as_float(admin, "death.admin"),
                             as_float(death.get("random_rate", 0.0), "death.random_rate"),
                             None if attrs is None else tuple(attrs))


def load_scheme(path) -> ObservationScheme:
    return scheme_from_config(load_json(path))


# ---------------------------------------------------------------------------
# dataset
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Observed records.

    ``longitudinal``  subject, t, channel, value
    ``events``        subject, channel, process, status, time, left, right
                      (status observed_jump: left = right = time;
                      right_censored: left = time, right = inf;
                      interval: event in (left, right])
    ``deaths``        subject, time, delta
    ``attributes``    subject plus one column per observed attribute
    ``factor``        subject, factor, t, value: knots of the (piecewise
                      linear) factor path, fully observed up to the censored
                      death time
    """

    longitudinal: pd.DataFrame
    events: pd.DataFrame
    deaths: pd.DataFrame
    attributes: pd.DataFrame
    factor: pd.DataFrame
    meta: dict = field(default_factory=dict)

    @property
    def subjects(self) -> np.ndarray:
        return self.deaths["subject"].to_numpy()

    @property
    def n_subjects(self) -> int:
        return len(self.deaths)

    @property
    def fingerprint(self) -> str:
        return self.meta.get("scheme_fingerprint", "")

    def subset(self, subjects) -> "Dataset":
        """Records of the given subjects only (a copy)."""
        keep = set(int(s) for s in subjects)

        def pick(df):
            return df[df["subject"].isin(keep)].reset_index(drop=True)

        return Dataset(pick(self.longitudinal), pick(self.events), pick(self.deaths), pick(self.attributes),
                       pick(self.factor), dict(self.meta))

    def channel_info(self, name: str) -> dict:
        try:
            return self.meta["channels"][name]
        except KeyError:
            raise ChannelUnmapped(f"dataset has no channel {name!r}") from None

    def write(self, outdir, extra_manifest: Mapping | None = None) -> Path:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        kw = dict(index=False, float_format="%.17g")
        self.longitudinal.to_csv(out / "longitudinal.csv", **kw)
        ev = self.events.copy()
        dd = self.deaths.assign(channel="death", process="death",
                                status=np.where(self.deaths["delta"] == 1, "observed_jump", "right_censored"),
                                left=self.deaths["time"],
                                right=np.where(self.deaths["delta"] == 1, self.deaths["time"], np.inf))
        ev = pd.concat([ev, dd[ev.columns]], ignore_index=True) if len(ev) else dd[ev.columns]
        ev.to_csv(out / "events.csv", **kw)
        self.attributes.to_csv(out / "attributes.csv", **kw)
        self.factor.to_csv(out / "factor.csv", **kw)
        manifest = {"kind": "dataset", **self.meta}
        if extra_manifest:
            manifest.update(extra_manifest)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def read(cls, indir) -> "Dataset":
        src = Path(indir)
        meta = json.loads((src / "manifest.json").read_text())
        meta.pop("kind", None)
        lon = pd.read_csv(src / "longitudinal.csv", float_precision="round_trip")
        ev = pd.read_csv(src / "events.csv", float_precision="round_trip")
        is_death = ev["channel"] == "death"
        d = ev[is_death]
        deaths = pd.DataFrame({"subject": d["subject"].to_numpy(), "time": d["time"].to_numpy(dtype=float),
                               "delta": (d["status"] == "observed_jump").to_numpy().astype(int)})
        events = _typed_events(ev[~is_death])
        attrs = pd.read_csv(src / "attributes.csv", float_precision="round_trip")
        attrs = attrs.astype({c: float for c in attrs.columns if c != "subject"})
        lon = lon.astype({"subject": np.int64, "t": float, "value": float})
        return cls(lon, events, deaths.reset_index(drop=True), attrs, pd.read_csv(src / "factor.csv", float_precision="round_trip"), meta)


def _compress_knots(t: np.ndarray, v: np.ndarray, tol: float = 1e-9):
    """Drop interior knots lying on the line through their neighbours."""
    if len(t) <= 2:
        return t, v
    keep = [0]
    for k in range(1, len(t) - 1):
        a = keep[-1]
        pred = v[a] + (v[k + 1] - v[a]) * (t[k] - t[a]) / (t[k + 1] - t[a])
        if abs(pred - v[k]) > tol * max(1.0, abs(v[k])):
            keep.append(k)
    keep.append(len(t) - 1)
    return t[keep], v[keep]


# ---------------------------------------------------------------------------
# applying a scheme
# ---------------------------------------------------------------------------

def _snap(t, step):
    return round(t / step) * step


def apply_observation(pop: Population, scheme: ObservationScheme, seed: int) -> Dataset:
    """Turn a simulated population into observed records.

    Longitudinal values appear only where the RIP is one and the subject is
    alive and uncensored.  Model-a noise is added after RIP gating; Model-b
    thresholding draws latent noise at each realized visit.  Visit times are
    snapped to the simulation grid.
    """
    sys = pop.system
    spec = sys.spec
    grid = pop.grid
    h = pop.config.step
    tau = pop.config.horizon
    names = set(spec.names)
    for ch in scheme.channels:
        if ch.process not in names or ch.process == sys.death:
            raise ChannelUnmapped(f"channel {ch.name!r} maps to {ch.process!r}, which is not an observable system process")
        decl = spec.decl(ch.process)
        if decl.kind == "attribute":
            raise ChannelUnmapped(f"channel {ch.name!r}: attributes are observed through the attribute table")
        binary = decl.state_space == "binary"
        if binary and ch.noise.kind not in ("none", "misclassification"):
            raise KindIncompatibleWithStateSpace(f"channel {ch.name!r}: {ch.noise.kind} needs a real-valued process")
        if not binary and ch.noise.kind == "misclassification":
            raise KindIncompatibleWithStateSpace(f"channel {ch.name!r}: misclassification needs a binary process")
        if ch.noise.kind == "feedback" and ch.process not in pop.monitor:
            raise ConfigError(f"channel {ch.name!r}: feedback noise needs a monitor on {ch.process!r}")
        base, wrappers = _base_rip(ch.rip)
        needs_true = isinstance(base, OutcomeDependent) or any(isinstance(w, Dropout) and w.true for w in wrappers)
        if needs_true and ch.process not in pop.paths and ch.process not in pop.jump_times:
            raise RuleInputUnavailable(f"channel {ch.name!r}: rule needs the true value of {ch.process!r}, "
                                       "which has no simulated path")

    observed_attrs = list(scheme.attributes) if scheme.attributes is not None else \
        [a for a in sys.attributes if not spec.decl(a).latent]

    lon_rows: list[tuple] = []
    ev_rows: list[tuple] = []
    death_rows: list[tuple] = []
    fac_rows: list[tuple] = []
    for i in range(len(pop)):
        sid = int(pop.subject_ids[i])
        g0 = rngmod.stream(seed, rngmod.OBSERVATION, sid, 0)
        td = float(pop.death_time[i])
        c = scheme.death_admin if scheme.death_admin is not None else tau
        c = min(c, tau)
        if scheme.death_random_rate > 0:
            c = min(c, g0.exponential(1.0 / scheme.death_random_rate))
        if td <= c:
            t_obs, delta = td, 1
        else:
            t_obs, delta = c, 0
        death_rows.append((sid, t_obs, delta))

        def alive_ok(t):
            return t < td and t <= t_obs + 1e-12

        for f in sys.factors:
            idx = np.flatnonzero(np.isfinite(pop.paths[f][i]) & (grid <= t_obs + 1e-12))
            tt, vv = _compress_knots(grid[idx], pop.paths[f][i, idx])
            if len(tt) and t_obs > tt[-1] + 1e-12:
                # the last grid value before death is carried linearly to the censored death time
                slope = (vv[-1] - vv[-2]) / (tt[-1] - tt[-2]) if len(tt) > 1 else 0.0
                vv = np.append(vv, vv[-1] + slope * (t_obs - tt[-1]))
                tt = np.append(tt, t_obs)
                tt, vv = _compress_knots(tt, vv)
            fac_rows.extend((sid, f, float(a), float(b)) for a, b in zip(tt, vv))

        for j, ch in enumerate(scheme.channels):
            g = rngmod.stream(seed, rngmod.OBSERVATION, sid, j + 1)
            _observe_channel(pop, i, sid, ch, g, alive_ok, t_obs, h, lon_rows, ev_rows)

    lon = pd.DataFrame(lon_rows, columns=["subject", "t", "channel", "value"])
    ev = _typed_events(pd.DataFrame(ev_rows, columns=EVENT_COLUMNS))
    deaths = pd.DataFrame(death_rows, columns=["subject", "time", "delta"])
    attrs = pd.DataFrame({"subject": pop.subject_ids.astype(int),
                          **{a: pop.attributes[a] for a in observed_attrs}})
    fac = pd.DataFrame(fac_rows, columns=["subject", "factor", "t", "value"])
    meta = {
        "scheme": scheme.to_config(),
        "scheme_fingerprint": scheme.fingerprint,
        "observation_seed": int(seed),
        "horizon": float(tau),
        "step": float(h),
        "channels": {ch.name: {"process": ch.process, "noise": ch.noise.kind,
                               "binary": spec.decl(ch.process).state_space == "binary",
                               "n_levels": ch.noise.n_levels, "law": ch.noise.law if ch.noise.threshold else None}
                     for ch in scheme.channels},
        "attributes": observed_attrs,
        "factors": list(sys.factors),
        "car": _car_summary(scheme, sys),
    }
    return Dataset(lon, ev, deaths, attrs, fac, meta)


def _car_summary(scheme, sys) -> dict[str, dict]:
    try:
        verdicts = classify_car(scheme, influence_graph(sys))
    except UndeclaredInputs as exc:
        verdicts = {ch.name: CarVerdict("fails", f"undeclared inputs: {exc}") for ch in scheme.channels}
    return {k: {"status": v.status, "reason": v.reason, "via_death": v.via_death} for k, v in verdicts.items()}


def _true_value(pop: Population, i: int, process: str, k: int) -> float:
    if process in pop.jump_times:
        return float(pop.jump_times[process][i] <= pop.grid[k] + 1e-12)
    return float(pop.paths[process][i, k])


def _emit(ch: Channel, y: float, g: np.random.Generator, pop: Population, i: int, t: float):
    nz = ch.noise
    if nz.kind == "none":
        return y
    if nz.kind == "model_a":
        return y + nz.sd * g.standard_normal()
    if nz.threshold:
        eps = nz.quantile(g.random())
        return float(np.searchsorted(nz.cuts, y + eps, side="right"))
    if nz.kind == "misclassification":
        u = g.random()
        if y == 1.0:
            return 1.0 if u < nz.sensitivity else 0.0
        return 0.0 if u < nz.specificity else 1.0
    times, vals = pop.monitor[ch.process]
    j = np.flatnonzero(np.abs(times - t) < 1e-9)
    if len(j) == 0 or not np.isfinite(vals[i, j[0]]):
        raise ConfigError(f"channel {ch.name!r}: no monitor reading at t={t:g}")
    return float(vals[i, j[0]])


def _observe_channel(pop, i, sid, ch, g, alive_ok, t_obs, h, lon_rows, ev_rows):
    base, wrappers = _base_rip(ch.rip)
    binary = ch.process in pop.jump_times
    if isinstance(base, NullRip):
        return
    if isinstance(base, ContinuousRightCensored):
        c = t_obs
        if base.admin is not None:
            c = min(c, base.admin)
        if base.random_rate > 0:
            c = min(c, g.exponential(1.0 / base.random_rate))
        if binary:
            jt = float(pop.jump_times[ch.process][i])
            if jt <= c + 1e-12:
                ev_rows.append((sid, ch.name, ch.process, "observed_jump", jt, jt, jt))
            else:
                ev_rows.append((sid, ch.name, ch.process, "right_censored", c, c, np.inf))
            return
        n_pts = int(math.floor(c / h + 1e-9)) + 1
        for k in range(n_pts):
            t = pop.grid[k]
            if not alive_ok(t):
                break
            lon_rows.append((sid, t, ch.name, _emit(ch, _true_value(pop, i, ch.process, k), g, pop, i, t)))
        return

    dropouts = [w for w in wrappers if isinstance(w, Dropout)]
    attr_vals = pop.attributes
    last_z = 0.0
    prev_t = 0.0
    states = []  # (t, observed value)

    def visit_times():
        if isinstance(base, (FixedVisits, OutcomeDependent)):
            yield from base.times
            return
        t = base.first
        while t <= base.until + 1e-12:
            yield t
            delay = min(max(base.base_delay + base.slope * last_z, base.min_delay), base.max_delay)
            t = t + delay

    for t_raw in visit_times():
        t = _snap(t_raw, h)
        if t > pop.config.horizon + 1e-12 or not alive_ok(t):
            break
        k = int(round(t / h))
        y = _true_value(pop, i, ch.process, k)
        lost = False
        for w in dropouts:
            lp = w.observed * last_z + w.true * y + sum(c * attr_vals[a][i] for a, c in w.attributes)
            if g.random() < -math.expm1(-w.rate * (t - prev_t) * math.exp(lp)):
                lost = True
        if lost:
            break
        prev_t = t
        if isinstance(base, OutcomeDependent) and g.random() < expit(base.intercept + base.slope * y):
            continue
        z = _emit(ch, y, g, pop, i, t)
        lon_rows.append((sid, t, ch.name, z))
        states.append((t, z))
        last_z = z

    if binary:
        first_one = next((j for j, (_, z) in enumerate(states) if z == 1.0), None)
        if first_one is None:
            last = states[-1][0] if states else 0.0
            ev_rows.append((sid, ch.name, ch.process, "right_censored", last, last, np.inf))
        else:
            r = states[first_one][0]
            l = states[first_one - 1][0] if first_one > 0 else 0.0
            if r <= l:
                ev_rows.append((sid, ch.name, ch.process, "observed_jump", r, r, r))
            else:
                ev_rows.append((sid, ch.name, ch.process, "interval", r, l, r))


# ---------------------------------------------------------------------------
# CAR(DYN) classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CarVerdict:
    status: str  # holds | fails | holds_if
    reason: str = ""
    via_death: bool = False  # fails only because death depends on unobserved Y (directly or through U)

    def __str__(self):
        return self.status if not self.reason else f"{self.status}({self.reason})"


def _collect_inputs(rip) -> tuple[set[str], list[str]]:
    """Union of declared inputs over the RIP tree plus attributes named by
    dropout rules.  Raises :class:`UndeclaredInputs` when a rule-bearing RIP
    has no declaration."""
    inputs: set[str] = set()
    named_attrs: list[str] = []
    while True:
        decl = rip.inputs
        if decl is None:
            raise UndeclaredInputs(f"{type(rip).__name__} does not declare its inputs")
        inputs |= set(decl)
        if isinstance(rip, Dropout):
            named_attrs += [a for a, _ in rip.attributes]
        if isinstance(rip, (DeathTruncated, Dropout)):
            rip = rip.inner
        else:
            return inputs, named_attrs


def _shared_latent(graph: InfluenceGraph, target: str) -> list[str]:
    return sorted(u for u in graph.latent if graph.has_edge(u, graph.death) and graph.has_edge(u, target))


def classify_channel(ch: Channel, graph: InfluenceGraph) -> CarVerdict:
    node_names = {n.name for n in graph.nodes}
    if ch.process not in node_names:
        raise ChannelUnmapped(f"channel {ch.name!r} maps to unknown process {ch.process!r}")
    inputs, named_attrs = _collect_inputs(ch.rip)
    base, _ = _base_rip(ch.rip)
    if isinstance(base, NullRip):
        return CarVerdict("holds", "never observed")
    unknown = sorted(inputs - set(INPUTS))
    if unknown:
        return CarVerdict("fails", f"undeclared input(s) {unknown}")
    if "true_latent" in inputs:
        return CarVerdict("fails", "outcome_dependent: RIP depends on the unobserved current value")
    latent_attrs = [a for a in named_attrs if a not in node_names or graph.node(a).latent]
    if latent_attrs:
        return CarVerdict("fails", f"RIP depends on unobserved attribute(s) {latent_attrs}")
    attr_condition = "attributes" in inputs and not named_attrs

    node = graph.node(ch.process)
    binary = node.state_space == "binary"
    continuous = isinstance(base, ContinuousRightCensored)
    direct = graph.has_edge(ch.process, graph.death)
    shared = _shared_latent(graph, ch.process)
    if binary and continuous:
        verdict = CarVerdict("holds", "continuous-time observation of a 0-1 process; death censors it")
    elif not binary and continuous and ch.noise.kind == "none":
        verdict = CarVerdict("holds", "continuous noiseless observation up to death")
    elif direct:
        verdict = CarVerdict("fails", f"{ch.process} -> death: death between observations depends on unobserved values",
                             via_death=True)
    elif shared:
        verdict = CarVerdict("fails", f"latent {shared} influence both {ch.process} and death", via_death=True)
    elif "observed_history" in inputs:
        verdict = CarVerdict("holds", "RIP depends on observed history only (doctor's care)")
    else:
        verdict = CarVerdict("holds", "death depends on observed quantities only")
    if verdict.status == "holds" and attr_condition:
        return CarVerdict("holds_if", "the attributes driving the RIP are fully observed")
    return verdict


def classify_car(scheme: ObservationScheme, graph: InfluenceGraph) -> dict[str, CarVerdict]:
    """CAR(DYN) verdict per channel from declared RIP inputs and the
    influence graph.  Pure: same arguments, same verdicts."""
    return {ch.name: classify_channel(ch, graph) for ch in scheme.channels}
