import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import GALLERY, constant_id_system, load
from deathsys import StepTooCoarse, system_from_config, validate_system
from deathsys.simulate import (SimConfig, contrast, mean_outcome_alive, occupation_probabilities, preferable,
                               read_population, simulate_population, simulate_subject, write_population)


def build(doc):
    return validate_system(system_from_config(doc))


def kolmogorov(a01, a02, a12, t_grid):
    """Forward equations of the constant-hazard illness-death model."""
    def rhs(t, p):
        h, i, d = p
        return [-(a01 + a02) * h, a01 * h - a12 * i, a02 * h + a12 * i]
    sol = solve_ivp(rhs, (0, max(t_grid)), [1.0, 0.0, 0.0], t_eval=t_grid, rtol=1e-11, atol=1e-13)
    return sol.y.T


def test_occupation_matches_forward_equations():
    sys_ = build(constant_id_system(0.3, 0.1, 0.5))
    t = [0.5, 1.0, 2.0]
    tab = occupation_probabilities(sys_, None, None, t, 20000, seed=4, step=0.005)
    exact = kolmogorov(0.3, 0.1, 0.5, t)
    got = tab[["p_healthy", "p_ill", "p_dead"]].to_numpy()
    se = tab[["se_healthy", "se_ill", "se_dead"]].to_numpy()
    assert np.all(np.abs(got - exact) <= 4 * se + 1e-12)
    np.testing.assert_allclose(got.sum(axis=1), 1.0)


def test_exponential_death_time():
    doc = {"schema": "deathsys/1", "processes": {
        "death": {"kind": "counting", "hazard": {"baseline": {"constant": 0.7}}}}}
    pop = simulate_population(build(doc), None, SimConfig(20000, 0.01, 3.0, 9))
    for t in (0.5, 1.0, 2.0):
        p = np.mean(pop.death_time > t)
        se = math.sqrt(p * (1 - p) / 20000)
        assert abs(p - math.exp(-0.7 * t)) < 4 * se


def test_diffusion_moments():
    doc = {"schema": "deathsys/1", "processes": {
        "Y": {"kind": "diffusion", "initial": {"mean": 1.0, "sd": 0.5},
              "drift": {"baseline": {"constant": -0.4}}, "sigma": 0.8},
        "death": {"kind": "counting", "hazard": {"baseline": {"constant": 0.0}}}}}
    pop = simulate_population(build(doc), None, SimConfig(20000, 0.01, 2.0, 3))
    y = pop.paths["Y"][:, -1]
    assert abs(y.mean() - (1.0 - 0.8)) < 4 * math.sqrt((0.25 + 0.64 * 2) / 20000)
    assert abs(y.var() - (0.25 + 0.64 * 2)) < 0.05


def test_reproducible_and_subject_addressed(dementia_doc):
    sys_ = build(dementia_doc)
    a = simulate_population(sys_, None, SimConfig(50, 0.01, 8.0, 5))
    b = simulate_population(sys_, None, SimConfig(120, 0.01, 8.0, 5))
    np.testing.assert_array_equal(a.death_time, b.death_time[:50])
    np.testing.assert_array_equal(a.jump_times["Y"], b.jump_times["Y"][:50])
    one = simulate_subject(sys_, None, SimConfig(120, 0.01, 8.0, 5), 77)
    assert one.death_time == b.death_time[77]
    c = simulate_population(sys_, None, SimConfig(50, 0.01, 8.0, 6))
    assert not np.array_equal(a.death_time, c.death_time)


def test_workers_do_not_change_output(dementia_doc, monkeypatch):
    import deathsys.simulate as sim
    monkeypatch.setattr(sim, "BLOCK", 16)
    monkeypatch.setattr(sim, "MAX_BLOCK_CELLS", 16 * 801)
    sys_ = build(dementia_doc)
    cfg = SimConfig(40, 0.01, 8.0, 2)
    a = sim.simulate_population(sys_, None, cfg, workers=1)
    b = sim.simulate_population(sys_, None, cfg, workers=2)
    np.testing.assert_array_equal(a.death_time, b.death_time)
    np.testing.assert_array_equal(a.paths["V"], b.paths["V"])


def test_paths_stop_at_death(direct_doc):
    pop = simulate_population(build(direct_doc), None, SimConfig(200, 0.01, 5.0, 1))
    for i in range(len(pop)):
        alive = pop.grid < pop.death_time[i]
        assert np.all(np.isfinite(pop.paths["Y"][i, alive]))
        assert np.all(np.isnan(pop.paths["Y"][i, ~alive]))


def test_step_too_coarse():
    doc = {"schema": "deathsys/1", "processes": {
        "death": {"kind": "counting", "hazard": {"baseline": {"constant": 20.0}}}}}
    with pytest.raises(StepTooCoarse):
        simulate_population(build(doc), None, SimConfig(10, 0.1, 1.0, 0))


def test_population_round_trip(tmp_path):
    doc = {"schema": "deathsys/1",
           "processes": {
               "G": {"kind": "attribute", "law": {"bernoulli": 0.5}},
               "Y": {"kind": "diffusion", "drift": {"baseline": {"constant": 0.1}, "terms": {"G": 0.2}},
                     "sigma": 0.3},
               "D1": {"kind": "counting", "hazard": {"baseline": {"constant": 0.2}}},
               "death": {"kind": "counting", "hazard": {"baseline": {"constant": 0.2},
                                                        "observed_terms": {"Y": 0.5}}}},
           "monitors": {"Y": {"times": [0, 0.5, 1.0], "noise_sd": 0.1}}}
    pop = simulate_population(build(doc), {"Y.G": 0.25}, SimConfig(30, 0.05, 1.0, 8))
    write_population(pop, tmp_path)
    back = read_population(tmp_path)
    np.testing.assert_array_equal(back.death_time, pop.death_time)
    np.testing.assert_array_equal(back.jump_times["D1"], pop.jump_times["D1"])
    np.testing.assert_array_equal(back.paths["Y"], pop.paths["Y"])
    np.testing.assert_array_equal(back.monitor["Y"][1], pop.monitor["Y"][1])
    assert back.params == {"Y.G": 0.25}
    assert back.system.spec.intensities["Y"].predictor.coef("G") == 0.25


def test_monitor_reading_at_horizon():
    doc = {"schema": "deathsys/1",
           "processes": {"Y": {"kind": "diffusion", "drift": {"baseline": {"constant": 0.0}}},
                         "death": {"kind": "counting", "hazard": {"baseline": {"constant": 0.01}}}},
           "monitors": {"Y": {"times": [0, 1.0], "noise_sd": 0.0}}}
    pop = simulate_population(build(doc), None, SimConfig(5, 0.1, 1.0, 0))
    alive = pop.death_time > 1.0
    assert np.all(np.isfinite(pop.monitor["Y"][1][alive, 1]))


def test_preferable_identity_and_order():
    sys_ = build(load(GALLERY / "systems" / "bp_cognition.json"))
    same = preferable(sys_, None, 0.0, 0.0, [2, 4], 2000, seed=1)
    assert same.verdict == "indistinguishable"
    # beta2 > 0 and gamma2 > 0: a lower factor path is better on both criteria
    better = preferable(sys_, None, -1.0, 1.0, [2, 4, 8], 4000, seed=1)
    assert better.verdict == "v1_preferable"
    assert better.interpretation == "E(Y_t | D_t = 0)"


def test_preferable_binary_outcome_can_reverse(dementia_doc):
    # with binary Y the joint probability P(Y=1, D=0) is not monotone in v:
    # a lower factor keeps more demented subjects alive late in follow-up
    res = preferable(build(dementia_doc), None, -1.0, 1.0, [2, 8], 4000, seed=1)
    assert res.interpretation == "P(Y_t = 1, D_t = 0)"
    tab = res.table
    assert tab["p_dead_v1"].iloc[-1] < tab["p_dead_v2"].iloc[-1]
    assert tab["outcome_v1"].iloc[-1] > tab["outcome_v2"].iloc[-1]
    assert res.verdict == "incomparable"


def test_contrasts(dementia_doc, direct_doc):
    sys_ = build(dementia_doc)
    hr = contrast(sys_, None, 0.0, 1.0, "hazard_ratio", [1, 2])
    np.testing.assert_allclose(hr["value"], math.exp(0.3))
    dd = contrast(build(direct_doc), None, 0.0, 2.0, "drift_difference", [1])
    np.testing.assert_allclose(dd["value"], 1.0)
    sd = contrast(sys_, None, 0.0, 1.0, "survival_difference", [4], n_mc=4000, seed=2)
    assert sd["value"].iloc[0] < 0
    with pytest.raises(ValueError):
        contrast(sys_, None, 0.0, 1.0, "odds", [1])


def test_mean_outcome_alive_flags_empty_cells():
    doc = {"schema": "deathsys/1", "processes": {
        "Y": {"kind": "diffusion", "drift": {"baseline": {"constant": 1.0}}},
        "death": {"kind": "counting", "hazard": {"baseline": {"constant": 90.0}}}}}
    tab = mean_outcome_alive(build(doc), None, None, [0.5], 50, seed=0, step=0.001)
    assert not tab["defined"].iloc[0]
    assert np.isnan(tab["mean"].iloc[0])
