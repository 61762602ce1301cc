"""Simulation and likelihood inference for systems truncated by death."""

__version__ = "0.1.0"

from .baseline import BaselineFunction
from .errors import *  # noqa: F401,F403
from .system import (
    InfluenceGraph,
    LinearPredictor,
    ProcessDecl,
    SystemSpec,
    ValidatedSystem,
    influence_graph,
    is_nuc,
    load_system,
    system_from_config,
    validate_system,
)
