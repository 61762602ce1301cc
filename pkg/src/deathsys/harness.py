"""Replicated bias studies: simulate -> observe -> fit -> aggregate.

A scenario fixes a system, an observation scheme, the model families to
compare and the replication plan.  Every replication draws its own seeds
from ``numpy.random.SeedSequence(seed).spawn``, so results do not depend on
how replications are spread over worker processes.
"""

from __future__ import annotations

import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd

from .config import SCHEMA, as_float, check_schema, load_json, take
from .errors import ConfigError, DeathsysError
from .estimate.fit import DEATH_AWARE, FitOptions, build_likelihood, fit
from .estimate.models import ModelSpec
from .estimate.truth import default_init, true_params
from .observe import apply_observation, classify_car, scheme_from_config
from .simulate import SimConfig, simulate_population
from .system import influence_graph, load_system, system_from_config, validate_system, with_overrides

BIASED_MCSE = 5.0
UNBIASED_MCSE = 3.0
Z95 = 1.959963984540054

REPORT_COLUMNS = ["scenario", "fit", "family", "parameter", "true", "mean_estimate", "bias", "mcse", "emp_sd",
                  "mean_se", "coverage", "n_used", "n_excluded", "exclusion_rate"]


@dataclass(frozen=True)
class FitPlan:
    label: str
    model: ModelSpec
    init: str = "truth"  # truth | default


@dataclass
class Scenario:
    name: str
    system_config: dict
    scheme_config: dict
    fits: list
    n: int = 1000
    replications: int = 100
    seed: int = 0
    step: float = 0.01
    horizon: float = 5.0
    params: dict = field(default_factory=dict)
    focus: str = "beta2"
    cell: str | None = None
    expected_verdict: str | None = None
    fit_options: FitOptions = field(default_factory=FitOptions)
    description: str = ""

    def __post_init__(self):
        if not self.fits:
            raise ConfigError(f"scenario {self.name!r} has no fits")
        if self.replications < 1 or self.n < 1:
            raise ConfigError("replications and n must be positive")

    @property
    def system(self):
        sys = validate_system(system_from_config(self.system_config))
        return with_overrides(sys, self.params) if self.params else sys

    @property
    def scheme(self):
        return scheme_from_config(self.scheme_config)

    @property
    def sim_config(self) -> SimConfig:
        return SimConfig(self.n, self.step, self.horizon, 0)

    def truth(self, plan: FitPlan):
        return true_params(plan.model, self.system, self.scheme)

    def car(self) -> dict:
        return classify_car(self.scheme, influence_graph(self.system))

    def naive(self) -> FitPlan | None:
        return next((f for f in self.fits if f.model.family.startswith("naive_")), None)

    def reference(self) -> FitPlan | None:
        return next((f for f in self.fits if f.model.family in DEATH_AWARE), None)

    def car_status(self) -> str:
        """Verdict of the channel feeding the naive fit (``holds_if`` counts
        as holds: scenarios observe every attribute)."""
        plan = self.naive() or self.fits[0]
        ch = plan.model.event_channel or plan.model.gaussian_channel or plan.model.threshold_channels[0]
        status = self.car()[ch].status
        return "holds" if status == "holds_if" else status

    def with_replications(self, replications: int, n: int | None = None) -> "Scenario":
        return replace(self, replications=replications, n=n or self.n)

    def to_config(self) -> dict:
        doc = {"schema": SCHEMA, "name": self.name, "description": self.description,
               "system": self.system_config, "observation": self.scheme_config,
               "simulation": {"n": self.n, "step": self.step, "horizon": self.horizon},
               "replications": self.replications, "seed": self.seed, "focus": self.focus,
               "fits": [{"label": f.label, "init": f.init, "model": f.model.to_config()} for f in self.fits],
               "fit_options": {k: getattr(self.fit_options, k) for k in FitOptions.__dataclass_fields__}}
        if self.params:
            doc["params"] = dict(self.params)
        if self.cell:
            doc["cell"] = self.cell
        if self.expected_verdict:
            doc["expected_verdict"] = self.expected_verdict
        return doc

    @classmethod
    def from_config(cls, doc: Mapping, base: Path | None = None) -> "Scenario":
        check_schema(doc, "scenario")
        doc = take(doc, "scenario", ("schema", "name", "system", "observation", "fits"),
                   ("description", "simulation", "replications", "seed", "params", "focus", "cell",
                    "expected_verdict", "fit_options"))
        base = Path(base or ".")

        def resolve(x, what):
            if isinstance(x, str):
                return load_json(base / x)
            if isinstance(x, Mapping):
                return dict(x)
            raise ConfigError(f"scenario.{what}: expected an object or a path")

        sim = take(doc.get("simulation", {}), "scenario.simulation", (), ("n", "step", "horizon"))
        fits = []
        for k, f in enumerate(doc["fits"]):
            f = take(f, f"scenario.fits[{k}]", ("label", "model"), ("init",))
            if f.get("init", "truth") not in ("truth", "default"):
                raise ConfigError(f"scenario.fits[{k}].init must be 'truth' or 'default'")
            fits.append(FitPlan(f["label"], ModelSpec.from_config(f["model"], f"scenario.fits[{k}].model"),
                                f.get("init", "truth")))
        if len({f.label for f in fits}) != len(fits):
            raise ConfigError("fit labels must be unique")
        verdict = doc.get("expected_verdict")
        if verdict not in (None, "holds", "fails"):
            raise ConfigError("expected_verdict must be 'holds' or 'fails'")
        out = cls(
            name=str(doc["name"]),
            system_config=resolve(doc["system"], "system"),
            scheme_config=resolve(doc["observation"], "observation"),
            fits=fits,
            n=int(sim.get("n", 1000)),
            step=as_float(sim.get("step", 0.01), "simulation.step"),
            horizon=as_float(sim.get("horizon", 5.0), "simulation.horizon"),
            replications=int(doc.get("replications", 100)),
            seed=int(doc.get("seed", 0)),
            params={k: as_float(v, f"params.{k}") for k, v in doc.get("params", {}).items()},
            focus=str(doc.get("focus", "beta2")),
            cell=doc.get("cell"),
            expected_verdict=verdict,
            fit_options=FitOptions.from_config(doc.get("fit_options")),
            description=str(doc.get("description", "")),
        )
        out.system  # validate eagerly
        out.scheme
        return out


def load_scenario(path) -> Scenario:
    path = Path(path)
    return Scenario.from_config(load_json(path), path.parent)


# ---------------------------------------------------------------------------
# replications
# ---------------------------------------------------------------------------

def replication_seeds(seed: int, replications: int) -> list[tuple[int, int]]:
    """(simulation seed, observation seed) per replication."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(replications):
        a, b = child.generate_state(2, dtype=np.uint32)
        out.append((int(a), int(b)))
    return out


def simulate_dataset(s: Scenario, sim_seed: int, obs_seed: int):
    sys = s.system
    pop = simulate_population(sys, None, replace(s.sim_config, master_seed=sim_seed))
    return apply_observation(pop, s.scheme, obs_seed)


def run_replication(s: Scenario, r: int) -> dict:
    """Fit every family on replication ``r``.  Returns, per fit label,
    estimates, standard errors and a convergence flag."""
    sim_seed, obs_seed = replication_seeds(s.seed, r + 1)[r]
    data = simulate_dataset(s, sim_seed, obs_seed)
    out = {}
    for plan in s.fits:
        truth = s.truth(plan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                lik = build_likelihood(plan.model, data)
                init = truth if plan.init == "truth" else default_init(plan.model, lik)
                res = fit(plan.model, data, init, s.fit_options, lik=lik)
                out[plan.label] = {"estimates": dict(res.estimates), "se": res.se, "converged": res.converged,
                                   "free": list(res.free)}
            except DeathsysError as exc:
                out[plan.label] = {"estimates": None, "se": None, "converged": False, "error": str(exc)}
    return out


def _replication_job(args):
    s, r = args
    return run_replication(s, r)


@dataclass
class StudyReport:
    scenario: str
    table: pd.DataFrame
    car: dict
    car_status: str
    focus: str
    naive: str | None
    reference: str | None
    replications: int
    cell: str | None = None
    expected_verdict: str | None = None

    def row(self, fit_label: str, parameter: str) -> pd.Series:
        t = self.table
        sel = t[(t["fit"] == fit_label) & (t["parameter"] == parameter)]
        if sel.empty:
            raise KeyError((fit_label, parameter))
        return sel.iloc[0]

    def z(self, fit_label: str, parameter: str | None = None) -> float:
        """|bias| / MCSE."""
        r = self.row(fit_label, parameter or self.focus)
        return abs(r["bias"]) / r["mcse"] if r["mcse"] > 0 else (0.0 if r["bias"] == 0 else math.inf)

    def empirical_verdict(self, fit_label: str | None = None) -> str:
        """``biased`` (> 5 MCSE), ``unbiased`` (<= 3 MCSE) or ``inconclusive``."""
        z = self.z(fit_label or self.naive)
        if z > BIASED_MCSE:
            return "biased"
        if z <= UNBIASED_MCSE:
            return "unbiased"
        return "inconclusive"

    @property
    def consistent(self) -> bool:
        """holds: naive bias within 3 MCSE.  fails: naive bias beyond 3 MCSE
        and the death-aware fit (when present) within 3 MCSE."""
        if self.naive is None:
            return True
        z = self.z(self.naive)
        if self.car_status == "holds":
            return z <= UNBIASED_MCSE
        ok = z > UNBIASED_MCSE
        if self.reference is not None:
            ok = ok and self.z(self.reference) <= UNBIASED_MCSE
        return ok

    @property
    def exclusion_rate(self) -> float:
        return float(self.table["exclusion_rate"].max()) if len(self.table) else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.table.to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"scenario {self.scenario}: R = {self.replications}, CAR(DYN) {self.car_status} "
                 f"({'; '.join(f'{k}: {v}' for k, v in self.car.items())})"]
        if self.cell:
            lines.append(f"table cell {self.cell}: stated verdict {self.expected_verdict}")
        lines.append(f"{'fit':<10} {'parameter':<12} {'true':>8} {'mean':>9} {'bias':>9} {'mcse':>8} "
                     f"{'|bias|/mcse':>11} {'mean se':>8} {'cover':>6} {'excl':>5}")
        for _, r in self.table.iterrows():
            z = abs(r["bias"]) / r["mcse"] if r["mcse"] > 0 else float("nan")
            lines.append(f"{r['fit']:<10} {r['parameter']:<12} {r['true']:>8.4f} {r['mean_estimate']:>9.4f} "
                         f"{r['bias']:>9.4f} {r['mcse']:>8.4f} {z:>11.2f} {r['mean_se']:>8.4f} "
                         f"{r['coverage']:>6.3f} {r['exclusion_rate']:>5.2f}")
        if self.naive is not None:
            lines.append(f"focus {self.focus}: naive fit {self.naive} empirically {self.empirical_verdict()}; "
                         f"verdict-consistent: {self.consistent}")
        return "\n".join(lines)


def aggregate(s: Scenario, results: list[dict]) -> pd.DataFrame:
    rows = []
    R = len(results)
    for plan in s.fits:
        truth = s.truth(plan)
        res = [r[plan.label] for r in results]
        ok = [x for x in res if x["converged"] and x["estimates"] is not None]
        n_used = len(ok)
        free = ok[0]["free"] if ok else [k for k in truth if k not in plan.model.fixed]
        for k in free:
            est = np.array([x["estimates"][k] for x in ok], dtype=float)
            ses = np.array([x["se"][k] if x["se"] is not None else np.nan for x in ok], dtype=float)
            mean = math.fsum(est) / n_used if n_used else math.nan
            sd = float(np.std(est, ddof=1)) if n_used > 1 else math.nan
            has_se = np.isfinite(ses)
            cover = float(np.mean(np.abs(est[has_se] - truth[k]) <= Z95 * ses[has_se])) if has_se.any() else math.nan
            rows.append({
                "scenario": s.name, "fit": plan.label, "family": plan.model.family, "parameter": k,
                "true": float(truth[k]), "mean_estimate": mean, "bias": mean - float(truth[k]),
                "mcse": sd / math.sqrt(n_used) if n_used > 1 else math.nan, "emp_sd": sd,
                "mean_se": float(np.mean(ses[has_se])) if has_se.any() else math.nan,
                "coverage": cover, "n_used": n_used, "n_excluded": R - n_used,
                "exclusion_rate": (R - n_used) / R if R else 0.0,
            })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def run_scenario(s: Scenario, workers: int = 1) -> StudyReport:
    jobs = [(s, r) for r in range(s.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replication_job, jobs))
    else:
        results = [_replication_job(j) for j in jobs]
    table = aggregate(s, results)
    naive, ref = s.naive(), s.reference()
    return StudyReport(s.name, table, {k: str(v) for k, v in s.car().items()}, s.car_status(), s.focus,
                       naive.label if naive else None, ref.label if ref else None, s.replications,
                       s.cell, s.expected_verdict)


# ---------------------------------------------------------------------------
# typology and sweeps
# ---------------------------------------------------------------------------

TYPOLOGY_COLUMNS = ["cell", "scenario", "expected_verdict", "classify_car", "naive_fit", "focus", "naive_bias",
                    "naive_mcse", "naive_z", "empirical", "reference_z", "agrees_with_classifier",
                    "agrees_with_expected"]


def typology_row(rep: StudyReport) -> dict:
    emp = rep.empirical_verdict() if rep.naive else "n/a"
    expected = {"holds": "unbiased", "fails": "biased"}
    nrow = rep.row(rep.naive, rep.focus)
    return {
        "cell": rep.cell or rep.scenario, "scenario": rep.scenario, "expected_verdict": rep.expected_verdict or "",
        "classify_car": rep.car_status, "naive_fit": rep.naive, "focus": rep.focus,
        "naive_bias": float(nrow["bias"]), "naive_mcse": float(nrow["mcse"]), "naive_z": rep.z(rep.naive),
        "empirical": emp, "reference_z": rep.z(rep.reference) if rep.reference else math.nan,
        "agrees_with_classifier": expected.get(rep.car_status) == emp,
        "agrees_with_expected": (expected.get(rep.expected_verdict) == emp) if rep.expected_verdict else False,
    }


def typology_suite(config, base: Path | None = None, workers: int = 1):
    """Run one scenario per table cell.  ``config`` is a document
    ``{"schema", "cells": [scenario or path, ...], "replications"?, "n"?}``
    or a list of scenarios.  Returns ``(table, reports)``."""
    if isinstance(config, (list, tuple)):
        scenarios = list(config)
    else:
        check_schema(config, "typology")
        doc = take(config, "typology", ("schema", "cells"), ("replications", "n", "description"))
        scenarios = []
        for k, c in enumerate(doc["cells"]):
            if isinstance(c, str):
                sc = load_scenario(Path(base or ".") / c)
            else:
                sc = Scenario.from_config(c, base)
            if "replications" in doc or "n" in doc:
                sc = sc.with_replications(int(doc.get("replications", sc.replications)), doc.get("n"))
            scenarios.append(sc)
    reports = [run_scenario(sc, workers) for sc in scenarios]
    table = pd.DataFrame([typology_row(r) for r in reports], columns=TYPOLOGY_COLUMNS)
    return table, reports


def visit_spacing_sweep(s: Scenario, channel: str, spacings, workers: int = 1):
    """Naive focus bias as a function of the spacing of fixed visits on
    ``channel``; the curve is reported as is, with no target shape."""
    rows, reports = [], []
    for gap in spacings:
        gap = float(gap)
        times = list(np.round(np.arange(0.0, s.horizon + 1e-9, gap), 10))
        doc = dict(s.scheme_config)
        chans = dict(doc["channels"])
        ch = dict(chans[channel])
        ch["rip"] = {"discrete_visits": {"fixed": {"times": times}}}
        chans[channel] = ch
        doc["channels"] = chans
        variant = replace(s, name=f"{s.name}@{gap:g}", scheme_config=doc)
        rep = run_scenario(variant, workers)
        reports.append(rep)
        for f in s.fits:
            r = rep.row(f.label, s.focus)
            rows.append({"scenario": s.name, "spacing": gap, "fit": f.label, "parameter": s.focus,
                         "bias": float(r["bias"]), "mcse": float(r["mcse"]), "z": rep.z(f.label)})
    return pd.DataFrame(rows), reports
