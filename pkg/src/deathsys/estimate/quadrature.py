"""Quadrature rules and per-subject integration panels."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite, legendre


@lru_cache(maxsize=None)
def gauss_legendre(n: int):
    """Nodes, weights and spectral integration matrix on [-1, 1].

    ``S[i, j]`` integrates the j-th Lagrange basis polynomial from -1 to
    ``x[i]``, so ``S @ f(x)`` is the running integral at the nodes.
    """
    x, w = legendre.leggauss(n)
    vand = legendre.legvander(x, n - 1)
    coef = np.linalg.inv(vand)  # column j: Legendre coefficients of Lagrange basis j
    S = np.empty((n, n))
    for j in range(n):
        anti = legendre.legint(coef[:, j], lbnd=-1.0)
        S[:, j] = legendre.legval(x, anti)
    return x, w, S


@lru_cache(maxsize=None)
def gauss_hermite(n: int):
    """Nodes and weights for integrals against exp(-x^2)."""
    return hermite.hermgauss(n)


class FactorPaths:
    """Piecewise-linear factor paths, one knot list per subject (first knot at 0)."""

    def __init__(self, knots_t: list[np.ndarray], knots_v: list[np.ndarray]):
        self.t = [np.asarray(a, dtype=float) for a in knots_t]
        self.v = [np.asarray(a, dtype=float) for a in knots_v]
        self.cum = []
        for t, v in zip(self.t, self.v):
            seg = 0.5 * (v[1:] + v[:-1]) * np.diff(t)
            self.cum.append(np.concatenate(([0.0], np.cumsum(seg))))

    @classmethod
    def zeros(cls, n: int):
        return cls([np.array([0.0])] * n, [np.array([0.0])] * n)

    def __len__(self):
        return len(self.t)

    def breaks(self, i: int) -> np.ndarray:
        return self.t[i]

    def _locate(self, i, x):
        t, v = self.t[i], self.v[i]
        if len(t) == 1:
            return None
        k = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
        slope = (v[k + 1] - v[k]) / (t[k + 1] - t[k])
        return k, slope

    def value(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        loc = self._locate(i, x)
        if loc is None:
            return np.full(x.shape, self.v[i][0])
        k, slope = loc
        return self.v[i][k] + slope * (x - self.t[i][k])

    def integral(self, i: int, x) -> np.ndarray:
        """Integral of the path over [0, x] (linear extrapolation outside the knots)."""
        x = np.asarray(x, dtype=float)
        loc = self._locate(i, x)
        if loc is None:
            return self.v[i][0] * x
        k, slope = loc
        d = x - self.t[i][k]
        return self.cum[i][k] + self.v[i][k] * d + 0.5 * slope * d * d

    def evaluate(self, subj: np.ndarray, x: np.ndarray):
        """Vectorized value and integral at (subject, time) pairs."""
        val = np.empty(x.shape)
        integ = np.empty(x.shape)
        flat_s, flat_x = subj.ravel(), x.ravel()
        fv, fi = val.ravel(), integ.ravel()
        order = np.argsort(flat_s, kind="stable")
        bounds = np.searchsorted(flat_s[order], np.arange(len(self) + 1))
        for i in range(len(self)):
            idx = order[bounds[i]:bounds[i + 1]]
            if len(idx):
                fv[idx] = self.value(i, flat_x[idx])
                fi[idx] = self.integral(i, flat_x[idx])
        return val, integ


class Panels:
    """Gauss-Legendre panels covering ``[0, end_i]`` for every subject.

    Panel edges include the given breakpoints; panels longer than
    ``max_segment`` are split evenly.  Node values ``f`` have shape
    ``(n_panels, n_gl)`` or ``(n_panels, n_gl, K)``.
    """

    def __init__(self, ends, breaks, n_gl: int = 7, max_segment: float = 1.0):
        x, w, S = gauss_legendre(n_gl)
        self.n_gl = n_gl
        self.ends = np.asarray(ends, dtype=float)
        n = len(self.ends)
        a_list, b_list, s_list = [], [], []
        self.edges = []
        for i in range(n):
            end = self.ends[i]
            pts = np.asarray(breaks[i], dtype=float) if len(breaks[i]) else np.empty(0)
            pts = pts[(pts > 0) & (pts < end)]
            e = np.unique(np.concatenate(([0.0], pts, [end]))) if end > 0 else np.array([0.0])
            if len(e) > 1:
                widths = np.diff(e)
                pieces = np.maximum(1, np.ceil(widths / max_segment - 1e-9).astype(int))
                if np.any(pieces > 1):
                    e = np.concatenate([np.linspace(e[j], e[j + 1], pieces[j] + 1)[:-1] for j in range(len(widths))]
                                       + [[end]])
            self.edges.append(e)
            a_list.append(e[:-1])
            b_list.append(e[1:])
            s_list.append(np.full(len(e) - 1, i))
        self.a = np.concatenate(a_list) if a_list else np.empty(0)
        self.b = np.concatenate(b_list) if b_list else np.empty(0)
        self.subj = np.concatenate(s_list).astype(int) if s_list else np.empty(0, int)
        self.n_subjects = n
        half = 0.5 * (self.b - self.a)
        mid = 0.5 * (self.b + self.a)
        self.half = half
        self.t = mid[:, None] + half[:, None] * x[None, :]
        self.w = half[:, None] * w[None, :]
        self.S = S
        counts = np.bincount(self.subj, minlength=n)
        self.first = np.concatenate(([0], np.cumsum(counts)[:-1]))
        self.count = counts
        self.node_subj = np.repeat(self.subj, n_gl).reshape(self.t.shape)

    @property
    def n_panels(self) -> int:
        return len(self.a)

    def panel_totals(self, f):
        return np.einsum("pn,pn...->p...", self.w, f)

    def start_cumulative(self, totals):
        """Integral from 0 to each panel's left edge (per subject)."""
        csum = np.cumsum(totals, axis=0)
        prev = np.concatenate([np.zeros((1,) + totals.shape[1:]), csum[:-1]], axis=0)
        return prev - prev[self.first[self.subj]]

    def node_cumulative(self, f, totals=None):
        """Integral from 0 to every node."""
        if totals is None:
            totals = self.panel_totals(f)
        start = self.start_cumulative(totals)
        inner = np.einsum("ij,pj...->pi...", self.S, f) * self.half.reshape((-1, 1) + (1,) * (f.ndim - 2))
        return start[:, None] + inner

    def subject_totals(self, f, totals=None):
        if totals is None:
            totals = self.panel_totals(f)
        out = np.zeros((self.n_subjects,) + totals.shape[1:])
        np.add.at(out, self.subj, totals)
        return out

    def panel_ending_at(self, i: int, x: float) -> int:
        """Index of subject ``i``'s panel whose right edge is ``x``."""
        lo, hi = self.first[i], self.first[i] + self.count[i]
        k = lo + int(np.argmin(np.abs(self.b[lo:hi] - x)))
        if abs(self.b[k] - x) > 1e-9 * max(1.0, x):
            raise ValueError(f"{x} is not a panel edge of subject {i}")
        return k

    def panel_starting_at(self, i: int, x: float) -> int:
        lo, hi = self.first[i], self.first[i] + self.count[i]
        k = lo + int(np.argmin(np.abs(self.a[lo:hi] - x)))
        if abs(self.a[k] - x) > 1e-9 * max(1.0, x):
            raise ValueError(f"{x} is not a panel edge of subject {i}")
        return k
