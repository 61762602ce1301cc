"""Likelihood oracles, gradient checks and fit recovery for the model families."""

import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit, logsumexp
from scipy.stats import multivariate_normal, norm

from conftest import DOCS, GALLERY, load, make_dataset
from deathsys import CarWarning, ConfigError, IncompatibleChannels, system_from_config, validate_system
from deathsys.estimate import (FitOptions, ModelSpec, build_likelihood, default_init, fit, gradient, log_likelihood,
                               profile_check, true_params)
from deathsys.estimate.joint import log_interval_prob
from deathsys.observe import scheme_from_config

warnings.simplefilter("ignore", CarWarning)

POSITIVE = ("y0_sd", "sigma_b", "sigma_eps", "shape", "scale", "value")


def truth(model, system_doc, scheme_doc):
    sys_ = validate_system(system_from_config(system_doc))
    return true_params(model, sys_, scheme_from_config(scheme_doc))


def jitter(p, rng, sd=0.15, names=None):
    """Random parameter point near ``p``: log-scale noise for positive
    parameters, additive noise otherwise."""
    out = dict(p)
    for k in names or p:
        if k.split(".")[-1] in POSITIVE or k in POSITIVE:
            out[k] = p[k] * math.exp(sd * rng.standard_normal())
        else:
            out[k] = p[k] + sd * rng.standard_normal()
    return out


_VIEWS = {}


def subject_view(data, i):
    key = (id(data), int(i))
    if key not in _VIEWS:
        _VIEWS[key] = _subject_view(data, i)
    return _VIEWS[key]


def _subject_view(data, i):
    lon = data.longitudinal[data.longitudinal["subject"] == i].sort_values("t")
    fac = data.factor[data.factor["subject"] == i].sort_values("t")
    G = float(data.attributes.set_index("subject").loc[i, "G"])
    d = data.deaths.set_index("subject").loc[i]
    return lon["t"].to_numpy(), lon["value"].to_numpy(), fac["t"].to_numpy(), fac["value"].to_numpy(), G, \
        float(d["time"]), int(d["delta"])


def integrated_factor(data, i):
    """int_0^t V at the visit times of subject ``i``, by adaptive quadrature."""
    key = ("IV", id(data), int(i))
    if key not in _VIEWS:
        t, _, kt, kv, *_ = subject_view(data, i)
        _VIEWS[key] = np.array([quad(lambda s: np.interp(s, kt, kv), 0.0, x, limit=200)[0] if x > 0 else 0.0
                                for x in t])
    return _VIEWS[key]


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def quant():
    sysd = load(GALLERY / "systems" / "quant_shared.json")
    sch = load(GALLERY / "schemes" / "annual_z.json")
    return sysd, sch, make_dataset(sysd, sch, 60, 5, 5.0)


@pytest.fixture(scope="module")
def dementia():
    sysd = load(GALLERY / "systems" / "dementia.json")
    sch = load(GALLERY / "schemes" / "dementia_visits.json")
    return sysd, sch, make_dataset(sysd, sch, 80, 6, 8.0)


@pytest.fixture(scope="module")
def threshold():
    sysd = load(DOCS / "threshold" / "system.json")
    sch = load(DOCS / "threshold" / "observation.json")
    return sysd, sch, make_dataset(sysd, sch, 25, 7, 6.0)


@pytest.fixture(scope="module")
def brownian():
    sysd = load(GALLERY / "systems" / "quant_brownian.json")
    sch = load(GALLERY / "schemes" / "continuous_y.json")
    return sysd, sch, make_dataset(sysd, sch, 15, 8, 5.0, step=0.05)


NAIVE_MIXED = ModelSpec.from_config({"family": "naive_mixed_longitudinal", "channels": {"gaussian": "Z"}})
JOINT = ModelSpec.from_config({"family": "joint_quantitative_shared_effect", "channels": {"gaussian": "Z"},
                               "baselines": {"aD": "constant"}})
ILLNESS = ModelSpec.from_config({"family": "illness_death_interval", "channels": {"event": "dementia"}})
SURV_Y = ModelSpec.from_config({"family": "naive_survival_only", "survival_target": "Y",
                                "channels": {"event": "dementia"}})
SURV_D = ModelSpec.from_config({"family": "naive_survival_only", "survival_target": "death",
                                "channels": {"event": "dementia"}, "baselines": {"aD": "weibull"}})
THRESH = ModelSpec.from_config({"family": "joint_quantitative_shared_effect",
                                "channels": {"threshold": ["mmse", "dementia"]}, "baselines": {"aD": "weibull"},
                                "quadrature": {"gh_nodes": 10}, "qmc": {"points": 64, "seed": 3}})


# ---------------------------------------------------------------------------
# Gaussian longitudinal likelihood against scipy's multivariate normal
# ---------------------------------------------------------------------------

def mixed_oracle(data, p):
    total = 0.0
    for i in data.deaths["subject"]:
        t, z, kt, kv, G, _, _ = subject_view(data, i)
        if len(t) == 0:
            continue
        IV = integrated_factor(data, i)
        mean = p["y0_mean"] + p["b0.value"] * t + p["beta1"] * G * t + p["beta2"] * IV
        cov = (p["y0_sd"] ** 2 + p["beta3"] ** 2 * np.outer(t, t) + p["sigma_b"] ** 2 * np.minimum.outer(t, t)
               + p["sigma_eps"] ** 2 * np.eye(len(t)))
        total += multivariate_normal(mean, cov).logpdf(z)
    return total


def test_naive_mixed_matches_multivariate_normal(quant):
    sysd, sch, data = quant
    rng = np.random.default_rng(0)
    base = truth(NAIVE_MIXED, sysd, sch)
    base.update(y0_sd=0.3, sigma_b=0.2)
    for _ in range(5):
        p = jitter(base, rng)
        assert log_likelihood(NAIVE_MIXED, data, p) == pytest.approx(mixed_oracle(data, p), rel=1e-10)


def test_gaussian_reduces_to_independent_densities(quant):
    """sigma_B = sigma_U = sigma_Y0 = 0: product of univariate normals."""
    sysd, sch, data = quant
    model = NAIVE_MIXED.with_fixed(y0_sd=0.0, sigma_b=0.0, beta3=0.0)
    rng = np.random.default_rng(1)
    base = truth(NAIVE_MIXED, sysd, sch)
    for _ in range(100):
        p = jitter(base, rng, names=["y0_mean", "b0.value", "beta1", "beta2", "sigma_eps"])
        p.update(y0_sd=0.0, sigma_b=0.0, beta3=0.0)
        want = 0.0
        for i in data.deaths["subject"]:
            t, z, kt, kv, G, _, _ = subject_view(data, i)
            mean = p["y0_mean"] + p["b0.value"] * t + p["beta1"] * G * t + p["beta2"] * integrated_factor(data, i)
            want += norm.logpdf(z, mean, p["sigma_eps"]).sum()
        assert abs(log_likelihood(model, data, p) - want) < 1e-10


def test_markov_path_matches_dense(brownian):
    """Noiseless channel: the first-difference route equals the dense
    covariance route with a vanishing measurement error."""
    sysd, sch, data = brownian
    spec = {"family": "naive_mixed_longitudinal", "channels": {"gaussian": "Z"}, "random_effect": False}
    markov = ModelSpec.from_config({**spec, "fixed": {"sigma_eps": 0.0}})
    p = truth(markov, sysd, sch)
    sub = data.subset(data.subjects[:4])
    lon = sub.longitudinal
    # thin the path so the dense route stays cheap
    keep = lon.groupby("subject").cumcount() % 25 == 0
    sub.longitudinal = lon[keep].reset_index(drop=True)
    dense = ModelSpec.from_config({**spec, "fixed": {"sigma_eps": 1e-7}})
    a = log_likelihood(markov, sub, p)
    b = log_likelihood(dense, sub, {**p, "sigma_eps": 1e-7})
    assert a == pytest.approx(b, rel=1e-6)


# ---------------------------------------------------------------------------
# joint model: Gauss-Hermite against brute-force Monte Carlo over U
# ---------------------------------------------------------------------------

def joint_mc_oracle(data, p, n_draws=10 ** 6, seed=2):
    """Marginal log-likelihood by plain Monte Carlo over U ~ N(0, 1).

    Constant death baseline and constant factor make the cumulative hazard
    closed-form given U: the conditional mean is linear in t.
    """
    u = np.random.default_rng(seed).standard_normal(n_draws)
    total = 0.0
    for i in data.deaths["subject"]:
        t, z, kt, kv, G, T, delta = subject_view(data, i)
        V = kv[0]
        assert np.allclose(kv, V)
        slope0 = p["b0.value"] + p["beta1"] * G + p["beta2"] * V
        # longitudinal part, U excluded from the covariance
        cov = p["y0_sd"] ** 2 + p["sigma_b"] ** 2 * np.minimum.outer(t, t) + p["sigma_eps"] ** 2 * np.eye(len(t))
        cf = cho_factor(cov)
        r0 = z - (p["y0_mean"] + slope0 * t)
        A = r0 @ cho_solve(cf, r0)
        B = t @ cho_solve(cf, r0)
        C = t @ cho_solve(cf, t)
        logdet = 2 * np.log(np.diag(cf[0])).sum()
        b3 = p["beta3"]
        logZ = -0.5 * (len(t) * np.log(2 * np.pi) + logdet + A - 2 * b3 * u * B + b3 * b3 * u * u * C)
        # death part: log hazard = c0 + k t with k depending on U
        k = p["gamma3"] * (slope0 + b3 * u)
        c0 = (math.log(p["aD.value"]) + p["gamma1"] * G + p["gamma2"] * V + p["gamma3"] * p["y0_mean"]
              + p["gamma4"] * u)
        Lam = np.exp(c0) * np.where(np.abs(k) > 1e-12, np.expm1(k * T) / np.where(k == 0, 1, k), T)
        logS = delta * (c0 + k * T) - Lam
        total += logsumexp(logZ + logS) - math.log(n_draws)
    return total


def four_significant(a, b):
    scale = 10.0 ** (math.floor(math.log10(abs(a))) - 3)
    return abs(a - b) < 0.5 * scale


def test_gauss_hermite_matches_monte_carlo(quant):
    sysd, sch, data = quant
    five = data.subset(data.subjects[:5])
    model = ModelSpec.from_config({**JOINT.to_config(), "quadrature": {"gh_nodes": 30}})
    p = truth(model, sysd, sch)
    p.update(y0_sd=0.2, sigma_b=0.1)
    gh = log_likelihood(model, five, p)
    mc = joint_mc_oracle(five, p)
    assert four_significant(gh, mc), (gh, mc)


# ---------------------------------------------------------------------------
# illness-death and naive survival against direct numerical integration
# ---------------------------------------------------------------------------

def weibull_cum(t, shape, scale):
    return (t / scale) ** shape


def weibull_haz(t, shape, scale):
    return shape / scale * (t / scale) ** (shape - 1)


def illness_oracle(data, p):
    ev = data.events.set_index("subject")
    total = 0.0
    for i in data.deaths["subject"]:
        _, _, kt, kv, G, T, delta = subject_view(data, i)
        V = kv[0]
        e01 = math.exp(p["beta1"] * G + p["beta2"] * V)
        e02 = math.exp(p["gamma1"] * G + p["gamma2"] * V)
        e12 = e02 * math.exp(p["gamma3"])
        k1, s1, k2, s2 = p["a01.shape"], p["a01.scale"], p["a02.shape"], p["a02.scale"]

        def S0(u):
            return math.exp(-e01 * weibull_cum(u, k1, s1) - e02 * weibull_cum(u, k2, s2))

        def a01(u):
            return e01 * weibull_haz(u, k1, s1)

        def stay_ill(u):
            return math.exp(-e12 * (weibull_cum(T, k2, s2) - weibull_cum(u, k2, s2)))

        def dens(u):
            return S0(u) * a01(u) * stay_ill(u)

        a12T = (e12 * weibull_haz(T, k2, s2)) ** delta
        rec = ev.loc[i]
        if rec["status"] == "observed_jump":
            like = dens(rec["left"]) * a12T
        elif rec["status"] == "interval":
            like = quad(dens, rec["left"], min(rec["right"], T), epsabs=0, epsrel=1e-12, limit=200)[0] * a12T
        else:
            like = S0(T) * (e02 * weibull_haz(T, k2, s2)) ** delta + \
                a12T * quad(dens, rec["left"], T, epsabs=0, epsrel=1e-12, limit=200)[0]
        total += math.log(like)
    return total


def survival_y_oracle(data, p):
    ev = data.events.set_index("subject")
    total = 0.0
    for i in data.deaths["subject"]:
        _, _, kt, kv, G, T, _ = subject_view(data, i)
        e = math.exp(p["beta1"] * G + p["beta2"] * kv[0])
        k, s = p["a01.shape"], p["a01.scale"]
        rec = ev.loc[i]
        if rec["status"] == "observed_jump":
            total += math.log(e * weibull_haz(rec["left"], k, s)) - e * weibull_cum(rec["left"], k, s)
        elif rec["status"] == "interval":
            total += math.log(math.exp(-e * weibull_cum(rec["left"], k, s)) - math.exp(-e * weibull_cum(rec["right"], k, s)))
        else:
            total += -e * weibull_cum(rec["left"], k, s)
    return total


def survival_death_oracle(data, p):
    total = 0.0
    for i in data.deaths["subject"]:
        _, _, kt, kv, G, T, delta = subject_view(data, i)
        e = math.exp(p["gamma1"] * G + p["gamma2"] * kv[0])
        k, s = p["aD.shape"], p["aD.scale"]
        total += delta * math.log(e * weibull_haz(T, k, s)) - e * weibull_cum(T, k, s)
    return total


@pytest.mark.parametrize("scheme", ["dementia_visits.json", "dementia_continuous.json"])
def test_illness_death_matches_quadrature_oracle(dementia, scheme):
    sysd = dementia[0]
    sch = load(GALLERY / "schemes" / scheme)
    data = make_dataset(sysd, sch, 40, 9, 8.0)
    rng = np.random.default_rng(3)
    base = truth(ILLNESS, sysd, sch)
    fine = ModelSpec.from_config({**ILLNESS.to_config(), "quadrature": {"gl_nodes": 20, "max_segment": 0.05}})
    for _ in range(3):
        p = jitter(base, rng)
        want = illness_oracle(data, p)
        assert log_likelihood(ILLNESS, data, p) == pytest.approx(want, rel=1e-7)
        assert log_likelihood(fine, data, p) == pytest.approx(want, rel=1e-9)


def test_naive_survival_matches_closed_form(dementia):
    sysd, sch, data = dementia
    rng = np.random.default_rng(4)
    for model, oracle in ((SURV_Y, survival_y_oracle), (SURV_D, survival_death_oracle)):
        base = truth(model, sysd, sch)
        for _ in range(3):
            p = jitter(base, rng)
            assert log_likelihood(model, data, p) == pytest.approx(oracle(data, p), rel=1e-7)


# ---------------------------------------------------------------------------
# threshold (Model-b) channels
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("law", ["logistic", "normal"])
def test_interval_probability_binary_closed_form(law):
    F = expit if law == "logistic" else norm.cdf
    Fbar = (lambda x: expit(-x)) if law == "logistic" else norm.sf
    x = np.linspace(-30, 30, 601)
    np.testing.assert_allclose(np.exp(log_interval_prob(x, np.inf, law)), Fbar(x), rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(np.exp(log_interval_prob(-np.inf, x, law)), F(x), rtol=1e-12, atol=1e-300)
    lo, hi = x[:-1], x[1:]
    np.testing.assert_allclose(np.exp(log_interval_prob(lo, hi, law)), F(hi) - F(lo), rtol=1e-6, atol=1e-15)


def test_ordinal_with_two_levels_equals_binary(threshold):
    sysd, sch, _ = threshold
    binary = {"schema": "deathsys/1", "death": sch["death"],
              "channels": {"d": {"process": "Y", "rip": sch["channels"]["mmse"]["rip"],
                                 "noise": {"model_b_binary": {"cut": 0.0, "law": "logistic", "scale": 1.0}}}}}
    ordinal = {**binary, "channels": {"d": {**binary["channels"]["d"],
                                            "noise": {"model_b_ordinal": {"cuts": [0.0], "law": "logistic",
                                                                          "scale": 1.0}}}}}
    db = make_dataset(sysd, binary, 25, 7, 6.0)
    do = make_dataset(sysd, ordinal, 25, 7, 6.0)
    assert db.longitudinal.equals(do.longitudinal)
    model = ModelSpec.from_config({"family": "joint_quantitative_shared_effect", "channels": {"threshold": ["d"]},
                                   "baselines": {"aD": "weibull"}, "quadrature": {"gh_nodes": 8},
                                   "qmc": {"points": 32, "seed": 1}})
    lb, lo = build_likelihood(model, db), build_likelihood(model, do)
    base = truth(model, sysd, binary)
    rng = np.random.default_rng(5)
    for _ in range(100):
        p = jitter(base, rng, sd=0.3)
        assert abs(log_likelihood(model, db, p, lik=lb) - log_likelihood(model, do, p, lik=lo)) < 1e-12


def test_threshold_fit_fixes_location_and_scale(threshold):
    _, _, data = threshold
    lik = build_likelihood(THRESH, data)
    assert lik.default_fixed() == {"scale.mmse": 1.0, "cut.mmse.1": 0.0}
    assert "scale.dementia" in lik.names and "cut.mmse.4" in lik.names


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def relative_gap(a, b):
    return max(abs(a[k] - b[k]) / max(abs(a[k]), abs(b[k]), 1.0) for k in a)


CASES = {
    "illness_death_interval": (ILLNESS, "dementia"),
    "naive_survival_only_Y": (SURV_Y, "dementia"),
    "naive_survival_only_death": (SURV_D, "dementia"),
    "naive_mixed_longitudinal": (NAIVE_MIXED, "quant"),
    "joint_gaussian": (JOINT, "quant"),
    "joint_threshold": (THRESH, "threshold"),
}


@pytest.mark.parametrize("case", list(CASES))
def test_gradient_consistency(case, request):
    model, fx = CASES[case]
    sysd, sch, data = request.getfixturevalue(fx)
    if fx == "quant":
        data = data.subset(data.subjects[:25])
    lik = build_likelihood(model, data)
    base = truth(model, sysd, sch)
    base.update({k: v for k, v in {"y0_sd": 0.3, "sigma_b": 0.2}.items() if k in lik.names})
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = jitter(base, rng, sd=0.1)
        g1 = gradient(model, data, p, step=1e-4, lik=lik)
        g2 = gradient(model, data, p, step=1e-5, lik=lik)
        assert relative_gap(g1, g2) < 1e-3
        if getattr(lik, "analytic", False):
            assert relative_gap(gradient(model, data, p, lik=lik), g2) < 1e-3


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def test_illness_death_fit_recovers_truth(dementia):
    sysd, sch, _ = dementia
    data = make_dataset(sysd, sch, 1500, 10, 8.0)
    want = truth(ILLNESS, sysd, sch)
    res = fit(ILLNESS, data, default_init(ILLNESS, build_likelihood(ILLNESS, data)))
    assert res.converged and res.hessian_ok
    for k in ("beta1", "beta2", "gamma1", "gamma2", "gamma3"):
        assert abs(res.estimates[k] - want[k]) < 4 * res.se[k], k
    assert res.history[-1] >= res.history[0]


def test_joint_fit_recovers_truth_and_profile_peaks(quant):
    sysd, sch, _ = quant
    data = make_dataset(sysd, sch, 800, 11, 5.0)
    model = JOINT.with_fixed(y0_sd=0.0, sigma_b=0.0)
    want = truth(model, sysd, sch)
    res = fit(model, data, want, FitOptions(gtol=1e-6))
    assert res.converged
    for k in ("beta2", "beta3", "gamma2", "gamma4"):
        assert abs(res.estimates[k] - want[k]) < 4 * res.se[k], k
    grid, vals = profile_check(model, data, res.estimates, "beta2",
                               res.estimates["beta2"] + np.linspace(-0.05, 0.05, 11))
    assert np.argmax(vals) == 5
    assert set(res.to_dict()) >= {"estimates", "se", "loglik", "converged", "history"}


def test_fit_flags_nonconvergence_and_warns_on_car(quant):
    sysd, sch, data = quant
    with pytest.warns(CarWarning):
        res = fit(NAIVE_MIXED.with_fixed(y0_sd=0.0, sigma_b=0.0), data, truth(NAIVE_MIXED, sysd, sch),
                  FitOptions(maxiter=1, standard_errors=False))
    assert not res.converged and res.se is None
    with warnings.catch_warnings():
        warnings.simplefilter("error", CarWarning)
        log_likelihood(JOINT, data, {**truth(JOINT, sysd, sch), "y0_sd": 0.1, "sigma_b": 0.1})


def test_model_config_errors():
    with pytest.raises(IncompatibleChannels):
        ModelSpec.from_config({"family": "naive_mixed_longitudinal", "channels": {"event": "x"}})
    with pytest.raises(ConfigError):
        ModelSpec.from_config({"family": "naive_mixed_longitudinal", "channels": {"gaussian": "Z"}, "typo": 1})
    with pytest.raises(ConfigError):
        ModelSpec.from_config({"family": "unknown"})
