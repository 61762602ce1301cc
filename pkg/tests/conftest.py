import copy
import json
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
GALLERY = ROOT / "gallery"
DOCS = ROOT / "docs" / "examples"


def load(path):
    return json.loads(Path(path).read_text())


def constant_id_system(a01=0.2, a02=0.1, a12=0.4):
    """Illness-death system with constant hazards and no covariates."""
    import math
    return {
        "schema": "deathsys/1",
        "processes": {
            "Y": {"kind": "counting", "hazard": {"baseline": {"constant": a01}}},
            "death": {"kind": "counting", "hazard": {"baseline": {"constant": a02},
                                                     "terms": {"Y": math.log(a12 / a02)}}},
        },
    }


@pytest.fixture
def dementia_doc():
    return load(GALLERY / "systems" / "dementia.json")


@pytest.fixture
def direct_doc():
    return load(GALLERY / "systems" / "quant_direct.json")


@pytest.fixture
def fresh():
    return copy.deepcopy


def make_dataset(system_doc, scheme_doc, n, seed, horizon, step=0.01):
    """Simulate ``n`` subjects and observe them (test helper)."""
    from deathsys import system_from_config, validate_system
    from deathsys.observe import apply_observation, scheme_from_config
    from deathsys.simulate import SimConfig, simulate_population
    sys_ = validate_system(system_from_config(system_doc))
    pop = simulate_population(sys_, None, SimConfig(n, step, horizon, seed))
    return apply_observation(pop, scheme_from_config(scheme_doc), seed)
