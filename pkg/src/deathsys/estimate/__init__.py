"""Likelihoods, fitting and standard errors for the supported model families."""

from .fit import (FitOptions, FitResult, build_likelihood, fit, gradient, log_likelihood,
                  profile_check)
from .models import FAMILIES, DriftForm, HazardForm, ModelSpec
from .params import Layout, ParamSet
from .truth import default_init, true_params

__all__ = ["FAMILIES", "DriftForm", "FitOptions", "FitResult", "HazardForm", "Layout", "ModelSpec", "ParamSet",
           "build_likelihood", "default_init", "fit", "gradient", "log_likelihood", "profile_check", "true_params"]
