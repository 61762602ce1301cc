"""Single-event survival likelihood used as the naive comparator.

Target ``Y``: the event channel with death treated as ordinary censoring.
Target ``death``: the death time, marginal over Y.  Hazard
``a(t) exp(c1 G + c2 V_t)``; exact, interval and right-censored records.
"""

from __future__ import annotations

import numpy as np

from .data import EXACT, INTERVAL, RIGHT, event_arrays, subject_arrays
from .quadrature import Panels


class SurvivalLikelihood:
    def __init__(self, model, data):
        self.model = model
        sa = subject_arrays(data, model.attribute, model.factor)
        self.sa = sa
        n = sa.n
        if model.survival_target == "Y":
            self.form = model.hazard("a01")
            self.coef = ("beta1", "beta2")
            status, left, right = event_arrays(data, model.event_channel, sa.subjects)
        else:
            self.form = model.hazard("aD")
            self.coef = ("gamma1", "gamma2")
            status = np.where(sa.delta == 1, EXACT, RIGHT)
            left = sa.T.copy()
            right = np.where(sa.delta == 1, sa.T, np.inf)
        self.status, self.left, self.right = status, left, right
        end = np.where(status == INTERVAL, right, left)
        breaks = [np.asarray([*sa.factor.breaks(i), *self.form.breakpoints, left[i]], dtype=float) for i in range(n)]
        self.panels = P = Panels(end, breaks, model.gl_nodes, model.max_segment)
        self.V_nodes, _ = sa.factor.evaluate(P.node_subj, P.t)
        self.G_nodes = sa.G[P.node_subj]
        self.l_panel = np.array([P.panel_ending_at(i, left[i]) if left[i] > 0 else -1 for i in range(n)], dtype=int)
        self.V_left = np.array([sa.factor.value(i, left[i]) for i in range(n)], dtype=float)

    @property
    def names(self) -> list[str]:
        out = list(self.form.names)
        if self.model.attribute is not None:
            out.append(self.coef[0])
        if self.model.factor is not None:
            out.append(self.coef[1])
        return out

    def terms(self, p) -> np.ndarray:
        P = self.panels
        sa = self.sa
        c1, c2 = p.get(self.coef[0], 0.0), p.get(self.coef[1], 0.0)
        f = np.exp(self.form.log_hazard(p, P.t) + c1 * self.G_nodes + c2 * self.V_nodes)
        tot = P.panel_totals(f)
        A_end = P.subject_totals(f, tot)
        start = P.start_cumulative(tot)
        pl = self.l_panel
        A_left = np.where(pl >= 0, start[pl] + tot[pl], 0.0)
        out = np.empty(sa.n)
        ex = self.status == EXACT
        log_h = self.form.log_hazard(p, np.where(ex, self.left, 1.0)) + c1 * sa.G + c2 * self.V_left
        out[ex] = log_h[ex] - A_left[ex]
        rc = self.status == RIGHT
        out[rc] = -A_left[rc]
        iv = self.status == INTERVAL
        out[iv] = -A_left[iv] + np.log(-np.expm1(-(A_end[iv] - A_left[iv])))
        return out
