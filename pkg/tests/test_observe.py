import copy

import numpy as np
import pandas as pd
import pytest

from conftest import GALLERY, load
from deathsys import influence_graph, system_from_config, validate_system
from deathsys.errors import ChannelUnmapped, ConfigError, UndeclaredInputs
from deathsys.observe import Dataset, apply_observation, classify_car, scheme_from_config
from deathsys.simulate import SimConfig, simulate_population


def build(doc):
    return validate_system(system_from_config(doc))


def verdict(system, scheme):
    sys_ = build(load(GALLERY / "systems" / system) if isinstance(system, str) else system)
    sch = scheme_from_config(load(GALLERY / "schemes" / scheme) if isinstance(scheme, str) else scheme)
    return classify_car(sch, influence_graph(sys_))


@pytest.mark.parametrize("system,scheme,channel,status", [
    ("dementia.json", "dementia_continuous.json", "dementia", "holds"),
    ("dementia.json", "dementia_visits.json", "dementia", "fails"),
    ("quant_brownian.json", "continuous_y.json", "Z", "holds"),
    ("quant_direct.json", "annual_z.json", "Z", "fails"),
    ("quant_visits.json", "doctor_z.json", "Z", "holds"),
    ("quant_visits.json", "outcome_z.json", "Z", "fails"),
    ("quant_chicken.json", "annual_feedback.json", "Z", "holds"),
    ("quant_shared.json", "annual_z.json", "Z", "fails"),
])
def test_table_cells(system, scheme, channel, status):
    assert verdict(system, scheme)[channel].status == status


def test_death_only_fails_are_flagged():
    v = verdict("quant_direct.json", "annual_z.json")["Z"]
    assert v.via_death
    v = verdict("quant_visits.json", "outcome_z.json")["Z"]
    assert not v.via_death


def test_classification_is_pure():
    a = verdict("quant_direct.json", "annual_z.json")
    b = verdict("quant_direct.json", "annual_z.json")
    assert a == b


def test_rule_without_inputs_is_rejected():
    doc = load(GALLERY / "schemes" / "doctor_z.json")
    doc["channels"]["Z"]["rip"]["discrete_visits"]["doctor_care"].pop("inputs")
    with pytest.raises(ConfigError):
        scheme_from_config(doc)


def test_undeclared_input_fails():
    doc = load(GALLERY / "schemes" / "doctor_z.json")
    doc["channels"]["Z"]["rip"]["discrete_visits"]["doctor_care"]["inputs"] = ["weather"]
    assert verdict("quant_visits.json", doc)["Z"].status == "fails"


def test_unmapped_channel():
    doc = load(GALLERY / "schemes" / "annual_z.json")
    doc["channels"]["Z"]["process"] = "BP"
    with pytest.raises(ChannelUnmapped):
        verdict("quant_direct.json", doc)


def test_latent_attribute_in_rule_fails():
    doc = load(GALLERY / "schemes" / "annual_z.json")
    doc["channels"]["Z"]["rip"] = {"dropout": {"inner": doc["channels"]["Z"]["rip"], "rate": 0.1,
                                               "attributes": {"U": 0.5}, "inputs": ["attributes"]}}
    assert verdict("quant_visits.json", doc)["Z"].status == "fails"


def _observe(system, scheme, n=300, seed=1, horizon=5.0):
    sys_ = build(load(GALLERY / "systems" / system))
    pop = simulate_population(sys_, None, SimConfig(n, 0.01, horizon, seed))
    return pop, apply_observation(pop, scheme_from_config(load(GALLERY / "schemes" / scheme)), seed)


def test_observations_only_while_alive():
    pop, data = _observe("quant_direct.json", "annual_z.json")
    rec = data.deaths.set_index("subject").loc[data.longitudinal["subject"]]
    t = data.longitudinal["t"].to_numpy()
    dead = rec["delta"].to_numpy() == 1
    assert np.all(t[dead] < rec["time"].to_numpy()[dead])
    assert np.all(t[~dead] <= rec["time"].to_numpy()[~dead])
    assert set(data.longitudinal["t"].unique()) <= {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}
    assert data.meta["car"]["Z"]["status"] == "fails"


def test_noiseless_channel_returns_truth():
    doc = load(GALLERY / "schemes" / "annual_z.json")
    doc["channels"]["Z"]["noise"] = "none"
    sys_ = build(load(GALLERY / "systems" / "quant_direct.json"))
    pop = simulate_population(sys_, None, SimConfig(50, 0.01, 5.0, 2))
    data = apply_observation(pop, scheme_from_config(doc), 0)
    for r in data.longitudinal.itertuples():
        k = int(round(r.t / 0.01))
        assert r.value == pop.paths["Y"][r.subject, k]


def test_feedback_channel_reuses_monitor():
    pop, data = _observe("quant_chicken.json", "annual_feedback.json", n=100)
    times, vals = pop.monitor["Y"]
    for r in data.longitudinal.itertuples():
        j = int(np.flatnonzero(np.isclose(times, r.t))[0])
        assert r.value == vals[r.subject, j]


def test_interval_censored_dementia():
    pop, data = _observe("dementia.json", "dementia_visits.json", n=400, horizon=8.0)
    ev = data.events
    iv = ev[ev["status"] == "interval"]
    assert len(iv) > 0
    truth = pop.jump_times["Y"][iv["subject"].to_numpy()]
    assert np.all(truth > iv["left"].to_numpy()) and np.all(truth <= iv["right"].to_numpy() + 1e-12)
    rc = ev[ev["status"] == "right_censored"]
    # last visit negative: either no dementia yet, or onset after the last visit
    assert np.all(pop.jump_times["Y"][rc["subject"].to_numpy()] > rc["time"].to_numpy())


def test_threshold_levels():
    doc = {"schema": "deathsys/1", "channels": {
        "m": {"process": "Y", "rip": {"discrete_visits": {"fixed": {"times": [0, 1, 2]}}},
              "noise": {"model_b_ordinal": {"cuts": [-1.0, 0.0, 1.0], "law": "normal", "scale": 0.5}}},
        "d": {"process": "Y", "rip": {"discrete_visits": {"fixed": {"times": [0, 1, 2]}}},
              "noise": {"model_b_binary": {"cut": 0.5}}}}}
    sys_ = build(load(GALLERY / "systems" / "quant_direct.json"))
    pop = simulate_population(sys_, None, SimConfig(200, 0.01, 2.0, 3))
    data = apply_observation(pop, scheme_from_config(doc), 3)
    m = data.longitudinal[data.longitudinal["channel"] == "m"]["value"]
    d = data.longitudinal[data.longitudinal["channel"] == "d"]["value"]
    assert set(m.unique()) <= {0.0, 1.0, 2.0, 3.0} and len(m.unique()) > 1
    assert set(d.unique()) <= {0.0, 1.0}


def test_dataset_round_trip(tmp_path):
    _, data = _observe("dementia.json", "dementia_visits.json", n=100, horizon=8.0)
    data.write(tmp_path)
    back = Dataset.read(tmp_path)
    pd.testing.assert_frame_equal(back.deaths, data.deaths, check_dtype=False)
    pd.testing.assert_frame_equal(back.events.reset_index(drop=True), data.events.reset_index(drop=True),
                                  check_dtype=False)
    assert back.meta["car"] == data.meta["car"]


def test_observation_seed_changes_only_noise():
    sys_ = build(load(GALLERY / "systems" / "quant_direct.json"))
    pop = simulate_population(sys_, None, SimConfig(100, 0.01, 5.0, 2))
    sch = scheme_from_config(load(GALLERY / "schemes" / "annual_z.json"))
    a, b, c = apply_observation(pop, sch, 1), apply_observation(pop, sch, 1), apply_observation(pop, sch, 2)
    pd.testing.assert_frame_equal(a.longitudinal, b.longitudinal)
    assert not a.longitudinal["value"].equals(c.longitudinal["value"])
    pd.testing.assert_frame_equal(a.longitudinal[["subject", "t"]], c.longitudinal[["subject", "t"]])
