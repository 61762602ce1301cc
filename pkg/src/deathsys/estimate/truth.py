"""True parameter values of a model family under a simulation system, and
crude starting values from data."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .models import HazardForm, ModelSpec
from .params import ParamSet


def _hazard_truth(form: HazardForm, baseline) -> dict[str, float]:
    """Express a system baseline in the model's hazard parameterization."""
    pre = form.prefix
    if baseline.form == "constant":
        c = baseline.value
        if form.form == "constant":
            return {f"{pre}.value": c}
        if form.form == "weibull":
            return {f"{pre}.shape": 1.0, f"{pre}.scale": 1.0 / c}
        return {n: c for n in form.names}
    if baseline.form == "weibull" and form.form == "weibull":
        return {f"{pre}.shape": baseline.shape, f"{pre}.scale": baseline.scale}
    if baseline.form == "piecewise_constant" and form.form == "piecewise_constant" and \
            tuple(baseline.cuts) == tuple(form.cuts):
        return dict(zip(form.names, baseline.values))
    raise ConfigError(f"system baseline {baseline.form} cannot be expressed as model form {form.form} for {pre}")


def _latent_effect(sys, target: str):
    """(name, sd) of the latent normal attribute feeding ``target``/death, if any."""
    spec = sys.spec
    cands = [a for a in sys.attributes if spec.decl(a).latent and spec.attribute_laws[a].kind == "normal"
             and (spec.intensities[target].predictor.coef(a) != 0 or spec.intensities[sys.death].predictor.coef(a) != 0)]
    if len(cands) > 1:
        raise ConfigError(f"the joint model has one shared random effect; system has {cands}")
    if not cands:
        return None, 0.0
    law = spec.attribute_laws[cands[0]]
    if law.mean != 0.0:
        raise ConfigError(f"latent attribute {cands[0]!r} must have mean 0 to map onto the random effect")
    return cands[0], law.sd


def true_params(model: ModelSpec, sys, scheme) -> ParamSet:
    """Parameters of ``model`` implied by the data-generating system.

    Terms of the system that the model family cannot represent (for
    instance death reacting to observed values) have no counterpart; the
    returned values are then those of the misspecified model's nearest
    structural analogue, which is what bias is measured against.
    """
    spec = sys.spec
    death = spec.intensities[sys.death]
    G, V = model.attribute, model.factor
    p = ParamSet()
    fam = model.family
    channels = {c.name: c for c in scheme.channels}

    if fam in ("illness_death_interval", "naive_survival_only"):
        target = channels[model.event_channel].process if model.event_channel else sys.default_target()
        if fam == "illness_death_interval" or model.survival_target == "Y":
            y = spec.intensities[target]
            p.update(_hazard_truth(model.hazard("a01"), y.baseline))
            if G:
                p["beta1"] = y.predictor.coef(G)
            if V:
                p["beta2"] = y.predictor.coef(V)
        if fam == "illness_death_interval" or model.survival_target == "death":
            form = model.hazard("a02" if fam == "illness_death_interval" else "aD")
            p.update(_hazard_truth(form, death.baseline))
            if G:
                p["gamma1"] = death.predictor.coef(G)
            if V:
                p["gamma2"] = death.predictor.coef(V)
            if fam == "illness_death_interval":
                p["gamma3"] = death.predictor.coef(target)
        return p

    ch = channels[model.gaussian_channel or model.threshold_channels[0]]
    target = ch.process
    y = spec.intensities[target]
    u_name, u_sd = _latent_effect(sys, target)
    p["y0_mean"] = y.initial_mean
    p["y0_sd"] = y.initial_sd
    drift = model.drift
    b = y.baseline
    if b.form == "constant":
        p.update({n: b.value for n in drift.names})
    elif b.form == "piecewise_constant" and tuple(b.cuts) == drift.cuts:
        p.update(dict(zip(drift.names, b.values)))
    else:
        raise ConfigError(f"drift baseline {b.form} of {target!r} cannot be expressed by the model")
    if G:
        p["beta1"] = y.predictor.coef(G)
    if V:
        p["beta2"] = y.predictor.coef(V)
    if model.random_effect:
        p["beta3"] = y.predictor.coef(u_name) * u_sd if u_name else 0.0
    p["sigma_b"] = y.sigma
    if model.gaussian_channel:
        if ch.noise.kind == "feedback":
            p["sigma_eps"] = spec.monitors[target].noise_sd
        else:
            p["sigma_eps"] = ch.noise.sd
    for c in model.threshold_channels:
        nz = channels[c].noise
        for j, cut in enumerate(nz.cuts, start=1):
            p[f"cut.{c}.{j}"] = cut
        p[f"scale.{c}"] = nz.scale
    if model.threshold_channels:
        first = channels[model.threshold_channels[0]].noise
        if first.scale != 1.0 or first.cuts[0] != 0.0:
            raise ConfigError("threshold truth must already satisfy the normalization scale = 1, first cut = 0")
    if fam == "joint_quantitative_shared_effect":
        p.update(_hazard_truth(model.hazard("aD"), death.baseline))
        if G:
            p["gamma1"] = death.predictor.coef(G)
        if V:
            p["gamma2"] = death.predictor.coef(V)
        p["gamma3"] = death.predictor.coef(target)
        if model.random_effect:
            p["gamma4"] = death.predictor.coef(u_name) * u_sd if u_name else 0.0
    return p


def default_init(model: ModelSpec, lik) -> ParamSet:
    """Data-driven starting values: event rates for hazards, moments of the
    first observations for the outcome, zero regression coefficients."""
    sa = lik.sa
    person_time = max(float(np.sum(sa.T)), 1e-8)
    p = ParamSet()

    def hazard(form: HazardForm, rate):
        rate = max(rate, 1e-3)
        if form.form == "constant":
            p[f"{form.prefix}.value"] = rate
        elif form.form == "weibull":
            p[f"{form.prefix}.shape"] = 1.0
            p[f"{form.prefix}.scale"] = 1.0 / rate
        else:
            p.update({n: rate for n in form.names})

    death_rate = float(np.sum(sa.delta)) / person_time
    for form in (getattr(lik, name) for name in ("h01", "h02", "hD", "form") if hasattr(lik, name)):
        if form.prefix == "a01":
            rate = float(np.mean(getattr(lik, "status", np.zeros(1)) != 2)) * sa.n / person_time
        else:
            rate = death_rate
        hazard(form, rate)
    for n in lik.names:
        if n in p:
            continue
        if n == "y0_mean" or n.startswith("b0."):
            p[n] = 0.0
        elif n in ("y0_sd", "sigma_b", "sigma_eps"):
            p[n] = 0.5
        elif n.startswith("scale."):
            p[n] = 1.0
        elif n.startswith("cut."):
            p[n] = float(int(n.rsplit(".", 1)[1]) - 1)
        else:
            p[n] = 0.0
    if getattr(lik, "gaussian", None) is not None:
        if lik.markov:
            z0 = lik.flat["z"][lik.flat["starts"]]
        else:
            z0 = np.concatenate([g["z"][:, 0] for g in lik.groups]) if lik.groups else np.zeros(1)
        p["y0_mean"] = float(np.mean(z0))
        sd = float(np.std(z0)) if len(z0) > 1 else 1.0
        p["y0_sd"] = max(0.5 * sd, 0.05)
        p["sigma_eps"] = max(0.5 * sd, 0.05)
    if getattr(lik, "re", False) and "beta3" in p:
        p["beta3"] = 0.1
    p.update(model.fixed)
    return p
