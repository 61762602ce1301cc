"""Named parameter sets and their unconstrained parameterization."""

from __future__ import annotations

import json
from typing import Iterable, Mapping

import numpy as np

LOG = "log"
IDENTITY = "id"
CUT = "cut"


class ParamSet(dict):
    """Ordered ``name -> value`` mapping on the natural scale."""

    def with_values(self, **kw) -> "ParamSet":
        out = ParamSet(self)
        out.update(kw)
        return out

    def subset(self, names: Iterable[str]) -> "ParamSet":
        return ParamSet((k, self[k]) for k in names)

    def to_json(self) -> str:
        return json.dumps({k: float(v) for k, v in self.items()}, sort_keys=True)


def transform_kind(name: str) -> str:
    """Log for scales, standard deviations and hazard baseline levels;
    ordered log-differences for threshold cuts; identity otherwise."""
    head = name.split(".")[0]
    if head == "cut":
        return CUT
    if head in ("y0_sd", "sigma_b", "sigma_eps", "scale"):
        return LOG
    if head in ("a01", "a02", "aD"):
        return LOG
    return IDENTITY


class Layout:
    """Maps between natural parameters and the free unconstrained vector.

    Parameters listed in ``fixed`` keep their value and are not optimized.
    """

    def __init__(self, names: list[str], fixed: Mapping[str, float] | None = None):
        self.names = list(names)
        self.fixed = {k: float(v) for k, v in (fixed or {}).items() if k in self.names}
        self.free = [n for n in self.names if n not in self.fixed]
        self.kind = {n: transform_kind(n) for n in self.names}
        groups: dict[str, list[str]] = {}
        for n in self.names:
            if self.kind[n] == CUT:
                groups.setdefault(n.rsplit(".", 1)[0], []).append(n)
        self.cut_groups = {g: sorted(v, key=lambda s: int(s.rsplit(".", 1)[1])) for g, v in groups.items()}
        self.index = {n: i for i, n in enumerate(self.free)}

    @property
    def n_free(self) -> int:
        return len(self.free)

    def _cut_position(self, name):
        group = name.rsplit(".", 1)[0]
        return self.cut_groups[group].index(name), self.cut_groups[group]

    def to_vector(self, params: Mapping[str, float]) -> np.ndarray:
        x = np.empty(self.n_free)
        for n in self.free:
            v = float(params[n])
            kind = self.kind[n]
            if kind == LOG:
                if v <= 0:
                    raise ValueError(f"{n} must be > 0 (got {v})")
                x[self.index[n]] = np.log(v)
            elif kind == CUT:
                pos, group = self._cut_position(n)
                if pos == 0:
                    x[self.index[n]] = v
                else:
                    d = v - float(params[group[pos - 1]])
                    if d <= 0:
                        raise ValueError(f"cuts of {group[0].rsplit('.', 1)[0]} must be strictly increasing")
                    x[self.index[n]] = np.log(d)
            else:
                x[self.index[n]] = v
        return x

    def from_vector(self, x: np.ndarray) -> ParamSet:
        out = ParamSet()
        for n in self.names:
            if n in self.fixed:
                out[n] = self.fixed[n]
                continue
            xi = float(x[self.index[n]])
            kind = self.kind[n]
            if kind == LOG:
                out[n] = float(np.exp(xi))
            elif kind == CUT:
                pos, group = self._cut_position(n)
                out[n] = xi if pos == 0 else out[group[pos - 1]] + float(np.exp(xi))
            else:
                out[n] = xi
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """``J[i, j] = d natural(free_i) / d x_j``."""
        p = self.from_vector(x)
        J = np.zeros((self.n_free, self.n_free))
        for n in self.free:
            i = self.index[n]
            kind = self.kind[n]
            if kind == LOG:
                J[i, i] = p[n]
            elif kind == CUT:
                pos, group = self._cut_position(n)
                # c_q = c_1 + sum_{k=2..q} exp(x_k)
                for k in range(pos + 1):
                    m = group[k]
                    if m in self.fixed:
                        continue
                    j = self.index[m]
                    J[i, j] = 1.0 if k == 0 else p[m] - p[group[k - 1]]
            else:
                J[i, i] = 1.0
        return J

    def chain(self, x: np.ndarray, grad_natural: Mapping[str, float]) -> np.ndarray:
        g = np.array([grad_natural.get(n, 0.0) for n in self.free])
        return self.jacobian(x).T @ g
