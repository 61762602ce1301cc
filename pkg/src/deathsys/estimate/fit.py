"""Likelihood dispatch, maximization and standard errors."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..errors import CarWarning, ConfigError, NonConvergence, NonFiniteLikelihood, SingularHessian
from .illness_death import IllnessDeathLikelihood
from .joint import JointLikelihood
from .models import ModelSpec
from .params import Layout, ParamSet
from .survival import SurvivalLikelihood

DEATH_AWARE = ("illness_death_interval", "joint_quantitative_shared_effect")


def build_likelihood(model: ModelSpec, data):
    fam = model.family
    if fam == "illness_death_interval":
        return IllnessDeathLikelihood(model, data)
    if fam == "naive_survival_only":
        return SurvivalLikelihood(model, data)
    if fam == "joint_quantitative_shared_effect":
        return JointLikelihood(model, data, survival=True)
    return JointLikelihood(model, data, survival=False)


def model_channels(model: ModelSpec) -> list[str]:
    out = [model.event_channel, model.gaussian_channel, *model.threshold_channels]
    return [c for c in out if c is not None]


def car_problems(model: ModelSpec, data) -> dict[str, str]:
    """Channels of the fit whose recorded CAR(DYN) verdict is not ``holds``.

    A failure caused only by death depending on unobserved values is not a
    problem for families that model death jointly.
    """
    car = data.meta.get("car", {})
    out = {}
    for c in model_channels(model):
        v = car.get(c)
        if v is None:
            out[c] = "no CAR(DYN) verdict recorded"
        elif v["status"] != "holds":
            if v.get("via_death") and model.family in DEATH_AWARE:
                continue
            out[c] = f"{v['status']}({v['reason']})"
    return out


def warn_car(model: ModelSpec, data) -> None:
    bad = car_problems(model, data)
    if bad:
        warnings.warn(f"CAR(DYN) not established for {bad}; likelihood treats the observation "
                      f"scheme as fixed and is only a partial likelihood", CarWarning, stacklevel=3)


def total(terms: np.ndarray) -> float:
    """Compensated sum, independent of subject order up to rounding."""
    val = math.fsum(terms)
    if not math.isfinite(val):
        raise NonFiniteLikelihood("log-likelihood is not finite at these parameter values")
    return val


def _complete(lik, model: ModelSpec, theta) -> ParamSet:
    p = ParamSet(getattr(lik, "default_fixed", lambda: {})())
    p.update(model.fixed)
    p.update({k: float(v) for k, v in theta.items()})
    missing = [n for n in lik.names if n not in p]
    if missing:
        raise ConfigError(f"missing parameter values for {missing}")
    return p


def log_likelihood(model: ModelSpec, data, theta, lik=None) -> float:
    """Total log-likelihood of ``data`` at ``theta`` (natural scale)."""
    warn_car(model, data)
    lik = lik or build_likelihood(model, data)
    return total(lik.terms(_complete(lik, model, theta)))


# ---------------------------------------------------------------------------
# objective on the unconstrained scale
# ---------------------------------------------------------------------------

class Objective:
    """Mean log-likelihood as a function of the free unconstrained vector."""

    def __init__(self, lik, model: ModelSpec, fd_step: float = 1e-5):
        self.lik = lik
        fixed = {**getattr(lik, "default_fixed", lambda: {})(), **model.fixed}
        self.layout = Layout(lik.names, fixed)
        self.n = lik.sa.n
        self.fd_step = fd_step
        self.analytic = bool(getattr(lik, "analytic", False))

    def params(self, x) -> ParamSet:
        return self.layout.from_vector(x)

    def loglik(self, x) -> float:
        try:
            return total(self.lik.terms(self.params(x)))
        except (NonFiniteLikelihood, FloatingPointError, OverflowError, ValueError):
            return -np.inf

    def grad(self, x, step: float | None = None) -> np.ndarray:
        """Gradient of the total log-likelihood in ``x``; analytic when the
        likelihood provides one, otherwise central differences."""
        if self.analytic and step is None:
            g = self.lik.gradient(self.params(x))
            return self.layout.chain(x, g)
        return fd_gradient(self.loglik, x, step or self.fd_step)

    def hessian(self, x, step: float = 1e-4) -> np.ndarray:
        k = len(x)
        H = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step * max(1.0, abs(x[j]))
            H[:, j] = (self.grad(x + e) - self.grad(x - e)) / (2 * e[j])
        return 0.5 * (H + H.T)


def fd_gradient(f, x, step: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(len(x)):
        h = step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2 * h)
    return g


def gradient(model: ModelSpec, data, theta, step: float | None = None, lik=None) -> dict[str, float]:
    """Gradient of the total log-likelihood with respect to the free
    parameters on the natural scale.  ``step=None`` uses the likelihood's
    own gradient (analytic where available); a number forces central
    differences with that relative step."""
    lik = lik or build_likelihood(model, data)
    p = _complete(lik, model, theta)
    fixed = {**getattr(lik, "default_fixed", lambda: {})(), **model.fixed}
    free = [n for n in lik.names if n not in fixed]
    if step is None and getattr(lik, "analytic", False):
        g = lik.gradient(p)
        return {n: g[n] for n in free}
    out = {}
    for n in free:
        h = step * max(1.0, abs(p[n]))
        up, dn = ParamSet(p), ParamSet(p)
        up[n] += h
        dn[n] -= h
        out[n] = (total(lik.terms(up)) - total(lik.terms(dn))) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

@dataclass
class FitOptions:
    ftol: float = 1e-8
    gtol: float = 1e-5
    maxiter: int = 500
    fd_step: float = 1e-5
    hessian_step: float = 1e-4
    standard_errors: bool = True
    strict: bool = False  # raise NonConvergence / SingularHessian instead of flagging

    @classmethod
    def from_config(cls, doc) -> "FitOptions":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fit options {sorted(unknown)}")
        return cls(**doc)


@dataclass
class FitResult:
    family: str
    estimates: ParamSet
    se: dict | None
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    message: str = ""
    hessian_ok: bool = False
    covariance: np.ndarray | None = None
    free: list = field(default_factory=list)
    history: list = field(default_factory=list)
    quadrature: dict = field(default_factory=dict)
    qmc_seed: int | None = None
    car: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "estimates": {k: float(v) for k, v in self.estimates.items()},
            "se": None if self.se is None else {k: float(v) for k, v in self.se.items()},
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "grad_norm": float(self.grad_norm),
            "message": self.message,
            "hessian_ok": bool(self.hessian_ok),
            "history": [float(v) for v in self.history],
            "quadrature": self.quadrature,
            "qmc_seed": self.qmc_seed,
            "car_problems": self.car,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fit(model: ModelSpec, data, init, opts: FitOptions | None = None, lik=None) -> FitResult:
    """Maximum likelihood by L-BFGS-B on the unconstrained scale."""
    opts = opts or FitOptions()
    car = car_problems(model, data)
    if car:
        warn_car(model, data)
    lik = lik or build_likelihood(model, data)
    obj = Objective(lik, model, opts.fd_step)
    start = _complete(lik, model, init)
    x0 = obj.layout.to_vector(start)
    n = obj.n
    if not np.isfinite(obj.loglik(x0)):
        raise NonFiniteLikelihood("log-likelihood is not finite at the initial values")
    history = []

    def fun(x):
        ll = obj.loglik(x)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(x)
        return -ll / n, -obj.grad(x) / n

    def record(xk):
        history.append(obj.loglik(xk))

    history.append(obj.loglik(x0))
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", callback=record,
                   options={"ftol": opts.ftol, "gtol": opts.gtol, "maxiter": opts.maxiter, "maxcor": 20})
    x = res.x
    ll = obj.loglik(x)
    g = obj.grad(x) / n
    converged = bool(res.success) and np.all(np.isfinite(g))
    est = obj.params(x)
    out = FitResult(model.family, est, None, ll, converged, int(res.nit), float(np.max(np.abs(g))),
                    str(res.message), free=list(obj.layout.free), history=history,
                    quadrature={"gh_nodes": model.gh_nodes, "gl_nodes": model.gl_nodes,
                                "max_segment": model.max_segment},
                    qmc_seed=model.qmc_seed if model.threshold_channels else None, car=car)
    if not converged and opts.strict:
        exc = NonConvergence(f"optimizer stopped without convergence: {res.message}")
        exc.result = out
        raise exc
    if opts.standard_errors:
        _attach_se(out, obj, x, opts)
    return out


def _attach_se(out: FitResult, obj: Objective, x, opts: FitOptions) -> None:
    H = obj.hessian(x, opts.hessian_step)
    info = -H
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        out.hessian_ok = False
        if opts.strict:
            raise SingularHessian("observed information is not positive definite") from None
        return
    cov_x = np.linalg.inv(info)
    J = obj.layout.jacobian(x)
    cov = J @ cov_x @ J.T
    out.covariance = cov
    out.se = {n: float(np.sqrt(cov[i, i])) for i, n in enumerate(obj.layout.free)}
    out.hessian_ok = True


def profile_check(model: ModelSpec, data, theta, param_name: str, grid, lik=None):
    """Log-likelihood along one coordinate with the others held at ``theta``.

    Returns ``(grid, values)``.
    """
    lik = lik or build_likelihood(model, data)
    p = _complete(lik, model, theta)
    if param_name not in p:
        raise ConfigError(f"unknown parameter {param_name!r}")
    grid = np.asarray(grid, dtype=float)
    vals = np.empty(len(grid))
    for k, v in enumerate(grid):
        q = ParamSet(p)
        q[param_name] = float(v)
        try:
            vals[k] = total(lik.terms(q))
        except NonFiniteLikelihood:
            vals[k] = -np.inf
    return grid, vals
