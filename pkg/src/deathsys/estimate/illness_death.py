"""Interval-censored illness-death likelihood (binary Y, death).

Transition intensities, clock-forward:

    alpha01(t) = a01(t) exp(beta1 G + beta2 V_t)            healthy -> ill
    alpha02(t) = a02(t) exp(gamma1 G + gamma2 V_t)          healthy -> dead
    alpha12(t) = alpha02(t) exp(gamma3)                     ill -> dead

so ``gamma3`` is the coefficient of Y in the death hazard.  With
``A0 = int (alpha01 + alpha02)`` and ``A12 = int alpha12`` a subject with death
(or censoring) time T and indicator delta contributes

    exact y:        -A0(0,y) + log alpha01(y) - A12(y,T) + delta log alpha12(T)
    interval (l,r]: log int_l^r e^{-A0(0,u)} alpha01(u) e^{-A12(u,T)} du
                    + delta log alpha12(T)
    healthy at c:   log[ e^{-A0(0,T)} alpha02(T)^delta
                         + alpha12(T)^delta int_c^T e^{-A0(0,u)} alpha01(u) e^{-A12(u,T)} du ]
"""

from __future__ import annotations

import numpy as np

from .data import EXACT, INTERVAL, RIGHT, event_arrays, logsumexp_segments, subject_arrays
from .quadrature import Panels


class IllnessDeathLikelihood:
    def __init__(self, model, data):
        self.model = model
        sa = subject_arrays(data, model.attribute, model.factor)
        self.sa = sa
        self.h01 = model.hazard("a01")
        self.h02 = model.hazard("a02")
        status, left, right = event_arrays(data, model.event_channel, sa.subjects)
        T = sa.T
        # guard against records at T + rounding
        left = np.minimum(left, T)
        right = np.where(np.isfinite(right), np.minimum(right, T), right)
        self.status, self.left, self.right = status, left, right
        n = sa.n
        breaks = []
        for i in range(n):
            pts = [*sa.factor.breaks(i), *self.h01.breakpoints, *self.h02.breakpoints, left[i]]
            if status[i] == INTERVAL:
                pts.append(right[i])
            breaks.append(np.asarray(pts, dtype=float))
        self.panels = P = Panels(T, breaks, model.gl_nodes, model.max_segment)
        self.V_nodes, _ = sa.factor.evaluate(P.node_subj, P.t)
        self.G_nodes = sa.G[P.node_subj]

        # cumulative-at-point lookups: panel ending at x (-1 when x == 0)
        def end_index(i, x):
            return -1 if x <= 0 else P.panel_ending_at(i, x)

        self.exact = np.flatnonzero(status == EXACT)
        self.exact_panel = np.array([end_index(i, left[i]) for i in self.exact], dtype=int)
        self.V_exact = np.array([sa.factor.value(i, left[i]) for i in self.exact], dtype=float)
        self.V_T = np.array([sa.factor.value(i, T[i]) for i in range(n)], dtype=float)

        # windows of integration over the unknown transition time
        win_nodes, starts, win_subj = [], [], []
        lo = np.where(status == INTERVAL, left, left)
        hi = np.where(status == INTERVAL, right, T)
        for i in range(n):
            if status[i] == EXACT or hi[i] <= lo[i] + 1e-12:
                continue
            p0, p1 = P.first[i], P.first[i] + P.count[i]
            ps = np.arange(p0, p1)
            inside = ps[(P.a[ps] >= lo[i] - 1e-12) & (P.b[ps] <= hi[i] + 1e-12)]
            nodes = (inside[:, None] * P.n_gl + np.arange(P.n_gl)[None, :]).ravel()
            starts.append(sum(len(x) for x in win_nodes))
            win_nodes.append(nodes)
            win_subj.append(i)
        self.win_nodes = np.concatenate(win_nodes) if win_nodes else np.empty(0, int)
        self.win_starts = np.array(starts, dtype=int)
        self.win_subj = np.array(win_subj, dtype=int)
        self.right_cens = np.flatnonzero(status == RIGHT)

    @property
    def names(self) -> list[str]:
        m = self.model
        out = self.h01.names + self.h02.names
        if m.attribute is not None:
            out += ["beta1"]
        if m.factor is not None:
            out += ["beta2"]
        if m.attribute is not None:
            out += ["gamma1"]
        if m.factor is not None:
            out += ["gamma2"]
        return out + ["gamma3"]

    def terms(self, p) -> np.ndarray:
        P = self.panels
        sa = self.sa
        b1, b2 = p.get("beta1", 0.0), p.get("beta2", 0.0)
        g1, g2, g3 = p.get("gamma1", 0.0), p.get("gamma2", 0.0), p["gamma3"]
        log01 = self.h01.log_hazard(p, P.t) + b1 * self.G_nodes + b2 * self.V_nodes
        log02 = self.h02.log_hazard(p, P.t) + g1 * self.G_nodes + g2 * self.V_nodes
        f01, f02 = np.exp(log01), np.exp(log02)
        tot01, tot02 = P.panel_totals(f01), P.panel_totals(f02)
        A01_T = P.subject_totals(f01, tot01)
        A02_T = P.subject_totals(f02, tot02)
        e3 = np.exp(g3)
        T, delta = sa.T, sa.delta
        log_a02_T = self.h02.log_hazard(p, T) + g1 * sa.G + g2 * self.V_T
        log_a12_T = log_a02_T + g3
        out = np.zeros(sa.n)

        if len(self.exact):
            i = self.exact
            start01, start02 = P.start_cumulative(tot01), P.start_cumulative(tot02)
            pe = self.exact_panel
            ok = pe >= 0
            A01_y = np.where(ok, start01[pe] + tot01[pe], 0.0)
            A02_y = np.where(ok, start02[pe] + tot02[pe], 0.0)
            y = self.left[i]
            log_a01_y = self.h01.log_hazard(p, y) + b1 * sa.G[i] + b2 * self.V_exact
            out[i] = (-A01_y - A02_y + log_a01_y - e3 * (A02_T[i] - A02_y) + delta[i] * log_a12_T[i])

        log_int = np.full(sa.n, -np.inf)
        if len(self.win_nodes):
            c01 = P.node_cumulative(f01, tot01).ravel()
            c02 = P.node_cumulative(f02, tot02).ravel()
            k = self.win_nodes
            subj = P.node_subj.ravel()[k]
            logf = (-c01[k] - c02[k] - e3 * (A02_T[subj] - c02[k]) + log01.ravel()[k] + np.log(P.w.ravel()[k]))
            log_int[self.win_subj] = logsumexp_segments(logf, self.win_starts)

        iv = np.flatnonzero(self.status == INTERVAL)
        out[iv] = log_int[iv] + delta[iv] * log_a12_T[iv]
        rc = self.right_cens
        if len(rc):
            stay = -A01_T[rc] - A02_T[rc] + delta[rc] * log_a02_T[rc]
            ill = log_int[rc] + delta[rc] * log_a12_T[rc]
            out[rc] = np.logaddexp(stay, ill)
        return out
