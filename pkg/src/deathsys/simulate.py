"""Monte Carlo simulation of systems truncated by death.

Diffusions advance by Euler-Maruyama on a uniform grid of step ``h``.
Counting processes jump by cumulative-hazard inversion on the same grid: a
subject draws ``E ~ Exp(1)`` per counting process and jumps at the end of the
first step where the accumulated hazard (baseline integrated over the step,
covariates frozen at the left endpoint) exceeds ``E``; this gives jump
probability ``1 - exp(-dLambda)`` in each step.  Within a step non-death
counting processes move first and death then sees their post-jump values.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd
from scipy.special import ndtri

from . import rng as rngmod
from .errors import (
    KindIncompatibleWithStateSpace,
    NonFiniteState,
    NotBinaryY,
    NucWarning,
    StepTooCoarse,
)
from .system import ValidatedSystem, is_nuc, system_from_config, system_to_config, validate_system, with_overrides

BLOCK = 4096
MAX_BLOCK_CELLS = 4_000_000

FactorInput = float | Callable | Mapping | None


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int
    step: float
    horizon: float
    master_seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        if not (self.step > 0 and self.horizon > 0 and self.step <= self.horizon):
            raise ValueError("need 0 < step <= horizon")
        k = self.horizon / self.step
        if abs(k - round(k)) > 1e-8 * max(1.0, k):
            raise ValueError(f"horizon {self.horizon} is not a multiple of step {self.step}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.step

    def index_of(self, t, what: str = "time") -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.rint(t / self.step).astype(int)
        if np.any(np.abs(idx * self.step - t) > 1e-9 * max(1.0, self.horizon)) or np.any(idx < 0) or np.any(idx > self.n_steps):
            raise ValueError(f"{what} {t.tolist()} not on the simulation grid (step {self.step}, horizon {self.horizon})")
        return idx


@dataclass
class Trajectory:
    """One subject's realized paths on ``[0, min(T_D, horizon)]``.

    Path arrays hold values at grid times strictly before death only; entries
    after death are absent, not zero-filled.
    """

    subject_id: int
    attributes: dict[str, float]
    grid: np.ndarray
    factor_path: dict[str, np.ndarray]
    diffusion_paths: dict[str, np.ndarray]
    jump_times: dict[str, float | None]
    death_time: float
    horizon: float
    monitor: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass
class Population:
    """Columnar population; ``NaN`` in a path marks "subject not alive"."""

    system: ValidatedSystem
    config: SimConfig
    subject_ids: np.ndarray
    attributes: dict[str, np.ndarray]
    paths: dict[str, np.ndarray]
    jump_times: dict[str, np.ndarray]
    death_time: np.ndarray
    monitor: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    params: dict[str, float] = field(default_factory=dict)

    def __len__(self):
        return len(self.subject_ids)

    @property
    def grid(self) -> np.ndarray:
        return self.config.grid

    def alive_at(self, idx: int) -> np.ndarray:
        return self.death_time > self.grid[idx]

    def __getitem__(self, i: int) -> Trajectory:
        grid = self.grid
        n_alive = int(np.sum(grid < self.death_time[i]))
        factors = set(self.system.factors)
        fpath = {k: v[i, :n_alive].copy() for k, v in self.paths.items() if k in factors}
        dpath = {k: v[i, :n_alive].copy() for k, v in self.paths.items() if k not in factors}
        jumps = {k: (float(v[i]) if np.isfinite(v[i]) else None) for k, v in self.jump_times.items()}
        mon = {}
        for k, (times, vals) in self.monitor.items():
            keep = np.isfinite(vals[i])
            mon[k] = (times[keep], vals[i][keep])
        return Trajectory(int(self.subject_ids[i]), {k: float(v[i]) for k, v in self.attributes.items()},
                          grid[:n_alive].copy(), fpath, dpath, jumps, float(self.death_time[i]),
                          self.config.horizon, mon)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

def factor_values(v: FactorInput, grid: np.ndarray) -> np.ndarray | None:
    """Evaluate a factor trajectory given as a number, a callable of ``t``,
    or ``{"intercept": a, "slope": b}``."""
    if v is None:
        return None
    if callable(v):
        out = np.asarray(v(grid), dtype=float)
        return np.broadcast_to(out, grid.shape).astype(float)
    if isinstance(v, Mapping):
        return float(v.get("intercept", 0.0)) + float(v.get("slope", 0.0)) * grid
    return np.full(grid.shape, float(v))


def _linear_predictor(pred, values: Mapping[str, np.ndarray], observed: Mapping[str, np.ndarray] | None = None):
    out = 0.0
    for src, c in pred.terms:
        if c != 0.0:
            out = out + c * values[src]
    if observed is not None:
        for src, c in pred.observed_terms:
            if c != 0.0:
                out = out + c * observed[src]
    return out


def _run_block(sys: ValidatedSystem, cfg: SimConfig, subjects: np.ndarray,
               factor_override: np.ndarray | None = None,
               attribute_override: Mapping[str, float] | None = None,
               record: np.ndarray | None = None):
    """Simulate ``subjects``.  With ``record`` (grid indices) only the values at
    those indices are kept; otherwise full paths are returned."""
    spec = sys.spec
    n = len(subjects)
    K = cfg.n_steps
    h = cfg.step
    grid = cfg.grid
    seed = cfg.master_seed
    death = sys.death
    counting = sys.counting
    diffusions = [p.name for p in spec.processes
                  if p.kind == "diffusion" or (p.kind == "external_factor" and p.name in spec.intensities)]
    det_factors = [p.name for p in spec.processes
                   if p.kind == "external_factor" and p.name not in spec.intensities]
    attrs = sys.attributes
    override_factor = sys.factors[0] if factor_override is not None else None
    if factor_override is not None and len(sys.factors) != 1:
        raise ValueError("a factor trajectory override needs exactly one external factor")
    monitors = sorted(spec.monitors)

    # --- per-subject random numbers -------------------------------------
    u_attr = np.empty((n, len(attrs)))
    e_count = np.empty((n, len(counting) + 1))
    noise = {d: np.empty((n, K + 1)) for d in diffusions if d != override_factor}
    mon_idx = {m: cfg.index_of(spec.monitors[m].times, f"monitor times of {m!r}") for m in monitors}
    n_mon = sum(len(v) for v in mon_idx.values())
    mon_noise = np.empty((n, n_mon))
    for row, s in enumerate(subjects):
        if attrs:
            u_attr[row] = rngmod.stream(seed, rngmod.SIMULATION, s, rngmod.ATTRIBUTES).random(len(attrs))
        e_count[row] = rngmod.stream(seed, rngmod.SIMULATION, s, rngmod.COUNTING).standard_exponential(len(counting) + 1)
        for j, d in enumerate(diffusions):
            if d in noise:
                noise[d][row] = rngmod.stream(seed, rngmod.SIMULATION, s, rngmod.DIFFUSION_BASE + j).standard_normal(K + 1)
        if n_mon:
            mon_noise[row] = rngmod.stream(seed, rngmod.SIMULATION, s, rngmod.MONITOR).standard_normal(n_mon)

    values: dict[str, np.ndarray] = {}
    for j, a in enumerate(attrs):
        law = spec.attribute_laws[a]
        if attribute_override and a in attribute_override:
            values[a] = np.full(n, float(attribute_override[a]))
        elif law.kind == "bernoulli":
            values[a] = (u_attr[:, j] < law.p).astype(float)
        else:
            values[a] = law.mean + law.sd * ndtri(u_attr[:, j])

    keep_idx = np.arange(K + 1) if record is None else np.asarray(record)
    slot = {int(k): i for i, k in enumerate(keep_idx)}
    out_paths = {d: np.full((n, len(keep_idx)), np.nan) for d in diffusions + det_factors}

    def store(name, k, val, alive):
        if k in slot:
            col = out_paths[name][:, slot[k]]
            col[alive] = val[alive] if np.ndim(val) else val

    alive = np.ones(n, dtype=bool)
    for d in diffusions:
        if d == override_factor:
            continue
        it = spec.intensities[d]
        values[d] = it.initial_mean + it.initial_sd * noise[d][:, 0]
    for f in det_factors:
        if f != override_factor:
            fl = spec.factor_laws[f]
            values[f] = np.full(n, fl.intercept)
    if override_factor is not None:
        values[override_factor] = np.full(n, factor_override[0])

    for c in counting:
        values[c] = np.zeros(n)
    cum = {c: np.zeros(n) for c in counting + [death]}
    thresholds = {c: e_count[:, j] for j, c in enumerate(counting + [death])}
    jump_time = {c: np.full(n, np.inf) for c in counting}
    death_time = np.full(n, np.inf)
    last_obs = {m: np.zeros(n) for m in monitors}
    mon_vals = {m: np.full((n, len(mon_idx[m])), np.nan) for m in monitors}
    mon_pos = {}
    off = 0
    for m in monitors:
        mon_pos[m] = {int(k): off + i for i, k in enumerate(mon_idx[m])}
        off += len(mon_idx[m])

    for name in diffusions + det_factors:
        store(name, 0, values[name], alive)

    for k in range(K):
        t0, t1 = grid[k], grid[k + 1]
        for m in monitors:
            if k in mon_pos[m]:
                j = mon_pos[m][k]
                z = values[m] + spec.monitors[m].noise_sd * mon_noise[:, j]
                last_obs[m] = np.where(alive, z, last_obs[m])
                mon_vals[m][alive, list(mon_idx[m]).index(k)] = z[alive]
        new_count = {}
        for c in counting:
            it = spec.intensities[c]
            at_risk = alive & (values[c] == 0.0)
            d_cum = it.baseline.integral(t0, t1) * np.exp(_linear_predictor(it.predictor, values, last_obs))
            d_cum = np.broadcast_to(d_cum, (n,))
            if np.any(d_cum[at_risk] >= 1.0):
                raise StepTooCoarse(f"{c!r}: hazard x step reaches {d_cum[at_risk].max():.3g} >= 1 at t={t0:g}; reduce the step")
            cum[c] = np.where(at_risk, cum[c] + d_cum, cum[c])
            jumped = at_risk & (cum[c] >= thresholds[c])
            jump_time[c][jumped] = t1
            new_count[c] = np.where(jumped, 1.0, values[c])
        post = dict(values)
        post.update(new_count)
        it = spec.intensities[death]
        d_cum = np.broadcast_to(it.baseline.integral(t0, t1) * np.exp(_linear_predictor(it.predictor, post, last_obs)), (n,))
        if np.any(d_cum[alive] >= 1.0):
            raise StepTooCoarse(f"death hazard x step reaches {d_cum[alive].max():.3g} >= 1 at t={t0:g}; reduce the step")
        cum[death] = np.where(alive, cum[death] + d_cum, cum[death])
        dies = alive & (cum[death] >= thresholds[death])
        death_time[dies] = t1
        still = alive & ~dies

        new_vals = {}
        for d in diffusions:
            if d == override_factor:
                continue
            it = spec.intensities[d]
            drift = it.baseline.integral(t0, t1) + _linear_predictor(it.predictor, values) * h
            x = values[d] + drift + it.sigma * math.sqrt(h) * noise[d][:, k + 1]
            if not np.all(np.isfinite(x[still])):
                raise NonFiniteState(f"diffusion {d!r} left the reals at t={t1:g}")
            new_vals[d] = x
        values.update(new_count)
        values.update(new_vals)
        for f in det_factors:
            if f != override_factor:
                fl = spec.factor_laws[f]
                values[f] = np.full(n, fl.intercept + fl.slope * t1)
        if override_factor is not None:
            values[override_factor] = np.full(n, factor_override[k + 1])
        alive = still
        for name in diffusions + det_factors:
            store(name, k + 1, values[name], alive)
        if not alive.any() and record is None:
            break

    # readings scheduled at the horizon influence nothing but are still recorded
    for m in monitors:
        if K in mon_pos[m]:
            z = values[m] + spec.monitors[m].noise_sd * mon_noise[:, mon_pos[m][K]]
            mon_vals[m][alive, list(mon_idx[m]).index(K)] = z[alive]

    return {
        "attributes": {a: values[a] for a in attrs},
        "paths": out_paths,
        "jump_times": jump_time,
        "death_time": death_time,
        "monitor": {m: (grid[mon_idx[m]], mon_vals[m]) for m in monitors},
    }


def _blocks(n_subjects: int, n_cols: int):
    size = max(1, min(BLOCK, MAX_BLOCK_CELLS // max(1, n_cols)))
    return [np.arange(s, min(s + size, n_subjects)) for s in range(0, n_subjects, size)]


def _merge(parts):
    first = parts[0]
    return {
        "attributes": {k: np.concatenate([p["attributes"][k] for p in parts]) for k in first["attributes"]},
        "paths": {k: np.concatenate([p["paths"][k] for p in parts]) for k in first["paths"]},
        "jump_times": {k: np.concatenate([p["jump_times"][k] for p in parts]) for k in first["jump_times"]},
        "death_time": np.concatenate([p["death_time"] for p in parts]),
        "monitor": {k: (first["monitor"][k][0], np.concatenate([p["monitor"][k][1] for p in parts]))
                    for k in first["monitor"]},
    }


def _block_job(args):
    return _run_block(*args)


def simulate_subject(sys: ValidatedSystem, params: Mapping[str, float] | None, cfg: SimConfig,
                     subject_index: int) -> Trajectory:
    """Draw one subject's trajectory from the true law of ``sys``.

    The subject's random streams are addressed by ``(cfg.master_seed,
    subject_index)``, so the result equals entry ``subject_index`` of
    :func:`simulate_population` with the same config.
    """
    sys = with_overrides(sys, params)
    raw = _run_block(sys, cfg, np.array([subject_index]))
    pop = Population(sys, cfg, np.array([subject_index]), raw["attributes"], raw["paths"],
                     raw["jump_times"], raw["death_time"], raw["monitor"], dict(params or {}))
    return pop[0]


def simulate_population(sys: ValidatedSystem, params: Mapping[str, float] | None, cfg: SimConfig,
                        workers: int = 1) -> Population:
    """Simulate ``cfg.n_subjects`` independent subjects (bitwise reproducible
    for a fixed master seed, whatever ``workers`` is)."""
    sys = with_overrides(sys, params)
    blocks = _blocks(cfg.n_subjects, cfg.n_steps + 1)
    jobs = [(sys, cfg, b) for b in blocks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_block_job, jobs))
    else:
        parts = [_block_job(j) for j in jobs]
    raw = _merge(parts)
    return Population(sys, cfg, np.arange(cfg.n_subjects), raw["attributes"], raw["paths"],
                      raw["jump_times"], raw["death_time"], raw["monitor"], dict(params or {}))


# ---------------------------------------------------------------------------
# population summaries
# ---------------------------------------------------------------------------

def _summary_runs(sys, params, v, t_grid, n_mc, seed, step, attributes=None):
    sys = with_overrides(sys, params)
    t_grid = np.asarray(t_grid, dtype=float)
    horizon = float(np.max(t_grid)) if np.max(t_grid) > 0 else step
    horizon = math.ceil(horizon / step - 1e-9) * step
    cfg = SimConfig(n_mc, step, horizon, seed)
    idx = cfg.index_of(t_grid, "t_grid")
    fv = factor_values(v, cfg.grid)
    for block in _blocks(n_mc, len(idx)):
        yield sys, cfg, idx, _run_block(sys, cfg, block, fv, attributes, record=idx)


def _counting_target(sys, target):
    target = target or sys.default_target()
    if sys.spec.decl(target).kind != "counting":
        raise NotBinaryY(f"{target!r} is not a 0-1 counting process")
    return target


def occupation_probabilities(sys: ValidatedSystem, params, v: FactorInput, t_grid, n_mc: int, seed: int,
                             step: float = 0.01, target: str | None = None,
                             attributes: Mapping[str, float] | None = None) -> pd.DataFrame:
    """Monte Carlo P(alive & Y=0), P(alive & Y=1), P(dead) at each ``t``.

    Each subject is in exactly one state, so each row sums to one.
    """
    target = _counting_target(sys, target)
    t_grid = np.asarray(t_grid, dtype=float)
    counts = np.zeros((len(t_grid), 3), dtype=np.int64)
    for _, cfg, idx, raw in _summary_runs(sys, params, v, t_grid, n_mc, seed, step, attributes):
        for r, t in enumerate(cfg.grid[idx]):
            dead = raw["death_time"] <= t
            ill = ~dead & (raw["jump_times"][target] <= t)
            counts[r] += [np.sum(~dead & ~ill), np.sum(ill), np.sum(dead)]
    p = counts / n_mc
    p[:, 2] = 1.0 - p[:, 0] - p[:, 1]
    se = np.sqrt(p * (1 - p) / n_mc)
    return pd.DataFrame({"t": t_grid, "p_healthy": p[:, 0], "p_ill": p[:, 1], "p_dead": p[:, 2],
                         "se_healthy": se[:, 0], "se_ill": se[:, 1], "se_dead": se[:, 2],
                         "n_healthy": counts[:, 0], "n_ill": counts[:, 1], "n_dead": counts[:, 2]})


def _outcome_table(sys, params, v, t_grid, n_mc, seed, step, target, attributes=None):
    """Per t: P(dead), mean outcome among the living (continuous Y) or
    P(Y=1, alive) (binary Y), with standard errors."""
    t_grid = np.asarray(t_grid, dtype=float)
    binary = sys.spec.decl(target).kind == "counting"
    m = len(t_grid)
    n_dead = np.zeros(m)
    n_alive = np.zeros(m)
    s1 = np.zeros(m)
    s2 = np.zeros(m)
    for _, cfg, idx, raw in _summary_runs(sys, params, v, t_grid, n_mc, seed, step, attributes):
        for r, t in enumerate(cfg.grid[idx]):
            alive = raw["death_time"] > t
            n_dead[r] += np.sum(~alive)
            n_alive[r] += np.sum(alive)
            if binary:
                y = (alive & (raw["jump_times"][target] <= t)).astype(float)
            else:
                y = raw["paths"][target][alive, r]
            s1[r] += y.sum()
            s2[r] += np.sum(y * y)
    p_dead = n_dead / n_mc
    se_dead = np.sqrt(p_dead * (1 - p_dead) / n_mc)
    if binary:
        mean = s1 / n_mc
        se = np.sqrt(mean * (1 - mean) / n_mc)
        defined = np.ones(m, dtype=bool)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s1 / n_alive
            var = np.maximum(s2 / n_alive - mean ** 2, 0.0) * n_alive / np.maximum(n_alive - 1, 1)
            se = np.sqrt(var / n_alive)
        defined = n_alive > 0
        mean = np.where(defined, mean, np.nan)
        se = np.where(n_alive > 1, se, np.nan)
    return pd.DataFrame({"t": t_grid, "p_dead": p_dead, "se_dead": se_dead, "mean": mean, "se": se,
                         "n_alive": n_alive.astype(np.int64), "defined": defined})


def mean_outcome_alive(sys: ValidatedSystem, params, v: FactorInput, t_grid, n_mc: int, seed: int,
                       step: float = 0.01, target: str | None = None,
                       attributes: Mapping[str, float] | None = None) -> pd.DataFrame:
    """E(Y_t | D_t = 0) for a quantitative outcome.

    ``Y_t`` exists only for the living, so the mean is over survivors; cells
    with no survivors are flagged ``defined = False`` rather than raising.
    """
    target = target or sys.default_target()
    if sys.spec.decl(target).kind == "counting":
        raise KindIncompatibleWithStateSpace(f"{target!r} is binary; use occupation_probabilities")
    tab = _outcome_table(sys, params, v, t_grid, n_mc, seed, step, target, attributes)
    tab = tab[["t", "mean", "se", "n_alive", "defined"]].copy()
    tab.attrs["interpretation"] = "E(Y_t | D_t = 0)"
    return tab


@dataclass
class PreferableResult:
    verdict: str  # v1_preferable | v2_preferable | incomparable | indistinguishable
    table: pd.DataFrame
    interpretation: str

    def __str__(self):
        return self.verdict


def preferable(sys: ValidatedSystem, params, v1: FactorInput, v2: FactorInput, t_grid, n_mc: int, seed: int,
               z_threshold: float = 3.0, step: float = 0.01, target: str | None = None,
               factor: str | None = None) -> PreferableResult:
    """Compare two factor trajectories on death probability and outcome.

    ``v1`` is preferable when, at every ``t``, neither P(D_t=1) nor the outcome
    criterion is worse than under ``v2`` by more than ``z_threshold`` standard
    errors, and at least one is better by more than that somewhere.  The
    outcome criterion is E(Y_t | D_t=0) for quantitative Y and P(Y_t=1, D_t=0)
    for binary Y.  Both arms share random numbers; the standard error of a
    difference is taken as sqrt(se1^2 + se2^2).
    """
    target = target or sys.default_target()
    factor = factor or sys.default_factor()
    for outcome in (sys.death, target):
        verdict = is_nuc(sys, factor, outcome)
        if verdict.status != "nuc":
            warnings.warn(f"system is not NUC for ({factor}, {outcome}): {verdict}", NucWarning, stacklevel=2)
    a = _outcome_table(sys, params, v1, t_grid, n_mc, seed, step, target)
    b = _outcome_table(sys, params, v2, t_grid, n_mc, seed, step, target)
    d_dead = a["p_dead"] - b["p_dead"]
    se_dead = np.sqrt(a["se_dead"] ** 2 + b["se_dead"] ** 2)
    d_y = a["mean"] - b["mean"]
    se_y = np.sqrt(a["se"].fillna(0) ** 2 + b["se"].fillna(0) ** 2)
    ok = a["defined"] & b["defined"]
    v1_better = bool(np.any(d_dead < -z_threshold * se_dead) or np.any((d_y < -z_threshold * se_y) & ok))
    v2_better = bool(np.any(d_dead > z_threshold * se_dead) or np.any((d_y > z_threshold * se_y) & ok))
    if v1_better and v2_better:
        verdict = "incomparable"
    elif v1_better:
        verdict = "v1_preferable"
    elif v2_better:
        verdict = "v2_preferable"
    else:
        verdict = "indistinguishable"
    table = pd.DataFrame({"t": a["t"], "p_dead_v1": a["p_dead"], "p_dead_v2": b["p_dead"], "se_diff_dead": se_dead,
                          "outcome_v1": a["mean"], "outcome_v2": b["mean"], "se_diff_outcome": se_y})
    binary = sys.spec.decl(target).kind == "counting"
    interp = "P(Y_t = 1, D_t = 0)" if binary else "E(Y_t | D_t = 0)"
    table.attrs["interpretation"] = interp
    return PreferableResult(verdict, table, interp)


CONTRASTS = ("hazard_ratio", "drift_difference", "survival_difference", "mean_difference")


def contrast(sys: ValidatedSystem, params, v1: FactorInput, v2: FactorInput, kind: str, t_grid,
             n_mc: int = 10_000, seed: int = 0, step: float = 0.01, target: str | None = None,
             factor: str | None = None, attributes: Mapping[str, float] | None = None) -> pd.DataFrame:
    """Contrast two factor trajectories (v2 relative to v1).

    ``hazard_ratio`` and ``drift_difference`` come straight from the
    parametric law; ``survival_difference`` and ``mean_difference`` are Monte
    Carlo contrasts, marginal over attributes unless ``attributes`` fixes them.
    """
    if kind not in CONTRASTS:
        raise ValueError(f"unknown contrast {kind!r}; expected one of {CONTRASTS}")
    sys = with_overrides(sys, params)
    target = target or sys.default_target()
    factor = factor or sys.default_factor()
    t_grid = np.asarray(t_grid, dtype=float)
    if kind in ("hazard_ratio", "drift_difference"):
        dv = factor_values(v2, t_grid) - factor_values(v1, t_grid)
        if kind == "hazard_ratio":
            coef = sys.spec.intensities[sys.death].predictor.coef(factor)
            value = np.exp(coef * dv)
        else:
            if sys.spec.decl(target).kind != "diffusion":
                raise KindIncompatibleWithStateSpace(f"drift_difference needs a diffusion outcome; {target!r} is binary")
            value = sys.spec.intensities[target].predictor.coef(factor) * dv
        return pd.DataFrame({"t": t_grid, "value": value, "se": np.zeros_like(value)})
    a = _outcome_table(sys, None, v1, t_grid, n_mc, seed, step, target, attributes)
    b = _outcome_table(sys, None, v2, t_grid, n_mc, seed, step, target, attributes)
    if kind == "survival_difference":
        value = (1 - b["p_dead"]) - (1 - a["p_dead"])
        se = np.sqrt(a["se_dead"] ** 2 + b["se_dead"] ** 2)
    else:
        value = b["mean"] - a["mean"]
        se = np.sqrt(a["se"] ** 2 + b["se"] ** 2)
    return pd.DataFrame({"t": t_grid, "value": np.asarray(value), "se": np.asarray(se)})


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_population(pop: Population, outdir, extra_manifest: Mapping | None = None) -> Path:
    """Write ``paths.csv`` (subject x grid point, alive only), ``subjects.csv``,
    ``events.csv``, ``monitor.csv`` and ``manifest.json``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    grid = pop.grid
    names = sorted(pop.paths)
    rows = []
    for i in range(len(pop)):
        n_alive = int(np.sum(grid < pop.death_time[i]))
        for k in range(n_alive):
            rows.append(",".join([str(int(pop.subject_ids[i])), _fmt(grid[k])] + [_fmt(pop.paths[nm][i, k]) for nm in names]))
    (out / "paths.csv").write_text("\n".join([",".join(["subject", "t"] + names)] + rows) + "\n")
    attrs = sorted(pop.attributes)
    lines = [",".join(["subject", "death_time"] + attrs)]
    for i in range(len(pop)):
        lines.append(",".join([str(int(pop.subject_ids[i])), _fmt(pop.death_time[i])] + [_fmt(pop.attributes[a][i]) for a in attrs]))
    (out / "subjects.csv").write_text("\n".join(lines) + "\n")
    lines = ["subject,process,time"]
    for i in range(len(pop)):
        for c in sorted(pop.jump_times):
            if np.isfinite(pop.jump_times[c][i]):
                lines.append(f"{int(pop.subject_ids[i])},{c},{_fmt(pop.jump_times[c][i])}")
        if np.isfinite(pop.death_time[i]):
            lines.append(f"{int(pop.subject_ids[i])},{pop.system.death},{_fmt(pop.death_time[i])}")
    (out / "events.csv").write_text("\n".join(lines) + "\n")
    lines = ["subject,process,t,value"]
    for m in sorted(pop.monitor):
        times, vals = pop.monitor[m]
        for i in range(len(pop)):
            for j, t in enumerate(times):
                if np.isfinite(vals[i, j]):
                    lines.append(f"{int(pop.subject_ids[i])},{m},{_fmt(t)},{_fmt(vals[i, j])}")
    (out / "monitor.csv").write_text("\n".join(lines) + "\n")
    manifest = {
        "kind": "population",
        "system": system_to_config(pop.system.spec),
        "params": dict(pop.params),
        "n_subjects": pop.config.n_subjects,
        "step": pop.config.step,
        "horizon": pop.config.horizon,
        "master_seed": pop.config.master_seed,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_population(indir) -> Population:
    src = Path(indir)
    manifest = json.loads((src / "manifest.json").read_text())
    sys = validate_system(system_from_config(manifest["system"]))
    cfg = SimConfig(int(manifest["n_subjects"]), float(manifest["step"]), float(manifest["horizon"]),
                    int(manifest["master_seed"]))
    subj = pd.read_csv(src / "subjects.csv", float_precision="round_trip")
    n = len(subj)
    ids = subj["subject"].to_numpy()
    pos = {int(s): i for i, s in enumerate(ids)}
    attrs = {a: subj[a].to_numpy(dtype=float) for a in subj.columns if a not in ("subject", "death_time")}
    death_time = subj["death_time"].to_numpy(dtype=float)
    paths_df = pd.read_csv(src / "paths.csv", float_precision="round_trip")
    k_idx = np.rint(paths_df["t"].to_numpy() / cfg.step).astype(int)
    rows = paths_df["subject"].map(pos).to_numpy()
    paths = {}
    for name in paths_df.columns[2:]:
        arr = np.full((n, cfg.n_steps + 1), np.nan)
        arr[rows, k_idx] = paths_df[name].to_numpy(dtype=float)
        paths[name] = arr
    ev = pd.read_csv(src / "events.csv", float_precision="round_trip")
    jumps = {c: np.full(n, np.inf) for c in sys.counting}
    for r in ev.itertuples(index=False):
        if r.process in jumps:
            jumps[r.process][pos[int(r.subject)]] = float(r.time)
    monitor = {}
    mon = pd.read_csv(src / "monitor.csv", float_precision="round_trip")
    for m, spec in sys.spec.monitors.items():
        times = np.asarray(spec.times, dtype=float)
        vals = np.full((n, len(times)), np.nan)
        sub = mon[mon["process"] == m]
        if len(sub):
            j = np.searchsorted(times, sub["t"].to_numpy())
            vals[sub["subject"].map(pos).to_numpy(), j] = sub["value"].to_numpy(dtype=float)
        monitor[m] = (times, vals)
    return Population(sys, cfg, ids, attrs, paths, jumps, death_time, monitor,
                      {k: float(v) for k, v in manifest.get("params", {}).items()})
