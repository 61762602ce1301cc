"""Joint longitudinal-survival likelihood with a shared random effect.

Latent outcome, conditional on a standard normal random effect U:

    Y_t = Y0 + B0(t) + beta1 G t + beta2 int_0^t V + beta3 U t + sigma_b W_t,
    Y0 ~ N(y0_mean, y0_sd^2),

observed through a Gaussian (Model-a) channel ``Z_j = Y_{t_j} + eps_j`` or
through threshold (Model-b) channels.  Death hazard

    lambda(t | U) = aD(t) exp(gamma1 G + gamma2 V_t + gamma3 m(t | U) + gamma4 U)

where ``m(t | U)`` is the conditional mean path (Brownian fluctuation and
individual Y0 deviation excluded).  U is integrated out by Gauss-Hermite
quadrature, centred on the exact Gaussian posterior of U given Z when a
Gaussian channel is present.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_expit, ndtri
from scipy.stats import norm, qmc

from .data import logsumexp_segments, longitudinal_arrays, subject_arrays
from .quadrature import Panels, gauss_hermite

LOG2PI = np.log(2 * np.pi)
SQRT2 = np.sqrt(2.0)


def log_interval_prob(lo, hi, law: str):
    """log P(lo < X <= hi) for a standard logistic or normal X, lo < hi.

    Logistic: F(b) - F(a) = F(b) F(-a) (1 - e^(a-b)), stable everywhere.
    Normal: survival functions in the upper tail, the CDF otherwise.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if law != "normal":
            return log_expit(hi) + log_expit(-lo) + np.log(-np.expm1(lo - hi))
        upper = lo > 0
        big = np.where(upper, norm.logsf(lo), norm.logcdf(hi))
        small = np.where(upper, norm.logsf(hi), norm.logcdf(lo))
        return big + np.log1p(-np.exp(small - big))


def _log_density(x, law: str):
    """log density of the standard logistic or normal law."""
    if law != "normal":
        return log_expit(x) + log_expit(-x)
    return norm.logpdf(x)


class JointLikelihood:
    """``joint_quantitative_shared_effect`` (``survival=True``) or
    ``naive_mixed_longitudinal`` (``survival=False``)."""

    def __init__(self, model, data, survival: bool = True):
        self.model = model
        self.survival = survival
        self.sa = sa = subject_arrays(data, model.attribute, model.factor)
        self.drift = model.drift
        self.nb = len(self.drift.names)
        self.re = model.random_effect
        n = sa.n
        self.threshold = list(model.threshold_channels)
        self.gaussian = model.gaussian_channel
        if self.gaussian is not None:
            self._prep_gaussian(data)
        if self.threshold:
            self._prep_threshold(data)
        if survival:
            self.hD = model.hazard("aD")
            breaks = [np.asarray([*sa.factor.breaks(i), *self.hD.breakpoints, *self.drift.breakpoints], dtype=float)
                      for i in range(n)]
            self.panels = P = Panels(sa.T, breaks, model.gl_nodes, model.max_segment)
            self.V_nodes, self.IV_nodes = sa.factor.evaluate(P.node_subj, P.t)
            self.G_nodes = sa.G[P.node_subj]
            self.basis_nodes = self.drift.basis(P.t)
            self.V_T, self.IV_T = sa.factor.evaluate(np.arange(n), sa.T)
            self.basis_T = self.drift.basis(sa.T)
            # panels are contiguous per subject; reduceat over flattened nodes
            counts = P.count * P.n_gl
            self.node_starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
            if np.any(counts == 0):
                raise ValueError("every subject needs a positive follow-up time")

    # ------------------------------------------------------------------
    def _prep_gaussian(self, data):
        sa = self.sa
        obs = longitudinal_arrays(data, self.gaussian, sa.subjects)
        sizes = np.array([len(t) for t, _ in obs])
        # noiseless channels: first differences of Z are independent given U,
        # which keeps dense (continuously observed) paths linear in their length
        self.markov = self.model.fixed.get("sigma_eps", None) == 0.0
        if self.markov:
            keep = sizes > 0
            idx = np.repeat(np.arange(sa.n), sizes)
            t = np.concatenate([o[0] for o in obs]) if keep.any() else np.empty(0)
            z = np.concatenate([o[1] for o in obs]) if keep.any() else np.empty(0)
            IV = np.concatenate([sa.factor.integral(i, obs[i][0]) for i in range(sa.n)]) if keep.any() else t
            first = np.ones(len(t), dtype=bool)
            first[1:] = idx[1:] != idx[:-1]
            starts = np.flatnonzero(first)
            self.flat = dict(idx=idx, t=t, z=z, IV=IV, basis=self.drift.basis(t), G=sa.G[idx], first=first,
                             starts=starts, subjects=idx[starts])
            return
        self.groups = []
        for m in np.unique(sizes):
            if m == 0:
                continue
            idx = np.flatnonzero(sizes == m)
            t = np.stack([obs[i][0] for i in idx])
            z = np.stack([obs[i][1] for i in idx])
            IV = np.stack([sa.factor.integral(i, obs[i][0]) for i in idx])
            basis = self.drift.basis(t)
            M = np.minimum(t[:, :, None], t[:, None, :])
            self.groups.append(dict(idx=idx, t=t, z=z, IV=IV, basis=basis, M=M, G=sa.G[idx], m=int(m)))

    def _prep_threshold(self, data):
        sa = self.sa
        self.th_info = {c: data.meta["channels"][c] for c in self.threshold}
        obs = {c: longitudinal_arrays(data, c, sa.subjects) for c in self.threshold}
        times, levels = [], []
        for i in range(sa.n):
            tt = np.unique(np.concatenate([obs[c][i][0] for c in self.threshold]))
            lv = np.full((len(self.threshold), len(tt)), -1, dtype=int)
            for ci, c in enumerate(self.threshold):
                t, z = obs[c][i]
                lv[ci, np.searchsorted(tt, t)] = z.astype(int)
            times.append(tt)
            levels.append(lv)
        sizes = np.array([len(t) for t in times])
        self.th_groups = []
        for m in np.unique(sizes):
            if m == 0:
                continue
            idx = np.flatnonzero(sizes == m)
            for chunk in np.array_split(idx, max(1, len(idx) // 64)):
                t = np.stack([times[i] for i in chunk])
                self.th_groups.append(dict(
                    idx=chunk, t=t, m=int(m), G=sa.G[chunk],
                    IV=np.stack([sa.factor.integral(i, times[i]) for i in chunk]),
                    basis=self.drift.basis(t),
                    dt=np.sqrt(np.diff(np.concatenate([np.zeros((len(chunk), 1)), t], axis=1), axis=1)),
                    levels=np.stack([levels[i] for i in chunk], axis=1)))  # (channels, g, m)
        dmax = 1 + int(sizes.max(initial=0))
        sob = qmc.Sobol(d=dmax, scramble=True, seed=self.model.qmc_seed)
        u = sob.random(self.model.qmc_points)
        self.qmc_normals = ndtri(np.clip(u, 1e-12, 1 - 1e-12))

    # ------------------------------------------------------------------
    @property
    def analytic(self) -> bool:
        return True

    @property
    def mean_names(self) -> list[str]:
        out = ["y0_mean", *self.drift.names]
        if self.model.attribute is not None:
            out.append("beta1")
        if self.model.factor is not None:
            out.append("beta2")
        return out

    @property
    def names(self) -> list[str]:
        out = self.mean_names[:1] + ["y0_sd"] + self.mean_names[1:]
        if self.re:
            out.append("beta3")
        out.append("sigma_b")
        if self.gaussian is not None:
            out.append("sigma_eps")
        for c in self.threshold:
            q = self.th_info[c]["n_levels"]
            out += [f"cut.{c}.{j}" for j in range(1, q)] + [f"scale.{c}"]
        if self.survival:
            out += self.hD.names
            if self.model.attribute is not None:
                out.append("gamma1")
            if self.model.factor is not None:
                out.append("gamma2")
            out.append("gamma3")
            if self.re:
                out.append("gamma4")
        return out

    def default_fixed(self) -> dict:
        """Identifiability for threshold-only fits: first channel has unit
        noise scale and first cut at zero."""
        if self.threshold and self.gaussian is None:
            c = self.threshold[0]
            return {f"scale.{c}": 1.0, f"cut.{c}.1": 0.0}
        return {}

    # ------------------------------------------------------------------
    def _mean(self, p, G, t, IV, basis):
        out = p["y0_mean"] + basis @ self.drift.levels(p)
        out = out + p.get("beta1", 0.0) * G * t + p.get("beta2", 0.0) * IV
        return out

    def _design(self, name, G, t, IV, basis):
        if name == "y0_mean":
            return np.ones_like(t)
        if name == "beta1":
            return G * t
        if name == "beta2":
            return IV
        j = self.drift.names.index(name)
        return basis[..., j]

    def _gauss_dense(self, p, grad: bool):
        """Quadratic forms of the marginal covariance (U excluded) per group of
        subjects with equal visit counts."""
        sb, sy, se = p["sigma_b"], p["y0_sd"], p["sigma_eps"]
        for g in self.groups:
            idx, t, m = g["idx"], g["t"], g["m"]
            Sig = sb * sb * g["M"] + sy * sy + se * se * np.eye(m)
            try:
                L = np.linalg.cholesky(Sig)
            except np.linalg.LinAlgError:
                yield idx, None
                continue
            logdet = 2 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
            Sinv = np.linalg.inv(Sig)
            r0 = g["z"] - self._mean(p, g["G"][:, None], t, g["IV"], g["basis"])
            x = np.einsum("gij,gj->gi", Sinv, r0)
            y = np.einsum("gij,gj->gi", Sinv, t)
            st = dict(m=m, P=(t * y).sum(1), R=(t * x).sum(1), Q=(r0 * x).sum(1), logdet=logdet)
            if grad:
                st["dx"], st["dy"] = {}, {}
                for k in self.mean_names:
                    d = self._design(k, g["G"][:, None], t, g["IV"], g["basis"])
                    st["dx"][k] = (d * x).sum(1)
                    st["dy"][k] = (d * y).sum(1)
                M = g["M"]
                sx, sy_ = x.sum(1), y.sum(1)
                st["var"] = {
                    "sigma_b": (2 * sb, (Sinv * M).sum((1, 2)), np.einsum("gi,gij,gj->g", x, M, x),
                                np.einsum("gi,gij,gj->g", y, M, x), np.einsum("gi,gij,gj->g", y, M, y)),
                    "y0_sd": (2 * sy, Sinv.sum((1, 2)), sx * sx, sy_ * sx, sy_ * sy_),
                    "sigma_eps": (2 * se, np.trace(Sinv, axis1=1, axis2=2), (x * x).sum(1), (y * x).sum(1),
                                  (y * y).sum(1)),
                }
            yield idx, st

    def _gauss_markov(self, p, grad: bool):
        """Same quadratic forms for noiseless channels via first differences:
        Cov(diff Z) = diag(sigma_b^2 dt + y0_sd^2 [first visit])."""
        f = self.flat
        if len(f["t"]) == 0:
            return
        sb, sy = p["sigma_b"], p["y0_sd"]
        first, starts = f["first"], f["starts"]

        def diff(a):
            out = a.copy()
            out[1:] -= a[:-1]
            out[first] = a[first]
            return out

        dt = diff(f["t"])
        D = sb * sb * dt + sy * sy * first
        if np.any(D <= 0):
            yield f["subjects"], None
            return
        r = diff(f["z"] - self._mean(p, f["G"], f["t"], f["IV"], f["basis"]))

        def red(a):
            return np.add.reduceat(a, starts)

        st = dict(m=red(np.ones_like(D)), P=red(dt * dt / D), R=red(dt * r / D), Q=red(r * r / D),
                  logdet=red(np.log(D)))
        if grad:
            st["dx"], st["dy"] = {}, {}
            for k in self.mean_names:
                d = diff(self._design(k, f["G"], f["t"], f["IV"], f["basis"]))
                st["dx"][k] = red(d * r / D)
                st["dy"][k] = red(d * dt / D)
            st["var"] = {}
            for k, dD in (("sigma_b", 2 * sb * dt), ("y0_sd", 2 * sy * first)):
                st["var"][k] = (1.0, red(dD / D), red(dD * r * r / D ** 2), red(dD * dt * r / D ** 2),
                                red(dD * dt * dt / D ** 2))
        yield f["subjects"], st

    def _gauss(self, p, grad: bool):
        """Gaussian channel: marginal log-density of Z (U integrated out
        analytically), posterior mean and sd of U, and their derivatives."""
        n = self.sa.n
        lZ = np.zeros(n)
        mu = np.zeros(n)
        s = np.ones(n)
        d_lZ, d_mu, d_s = {}, {}, {}
        if self.gaussian is None:
            return lZ, mu, s, d_lZ, d_mu, d_s
        b3 = p.get("beta3", 0.0)
        if grad:
            for k in self.mean_names + ["beta3", "sigma_b", "y0_sd", "sigma_eps"]:
                d_lZ[k], d_mu[k], d_s[k] = np.zeros(n), np.zeros(n), np.zeros(n)
        blocks = self._gauss_markov(p, grad) if self.markov else self._gauss_dense(p, grad)
        for idx, st in blocks:
            if st is None:
                lZ[idx] = -np.inf
                continue
            P, R, Q = st["P"], st["R"], st["Q"]
            kap = 1.0 + b3 * b3 * P
            lZ[idx] = -0.5 * (st["m"] * LOG2PI + st["logdet"] + Q) - 0.5 * np.log(kap) + 0.5 * b3 * b3 * R * R / kap
            mu[idx] = b3 * R / kap
            s[idx] = kap ** -0.5
            if not grad:
                continue
            for k in self.mean_names:
                d_lZ[k][idx] = st["dx"][k] - b3 * mu[idx] * st["dy"][k]
                d_mu[k][idx] = -b3 * st["dy"][k] / kap
            d_lZ["beta3"][idx] = -b3 * P / kap + b3 * R * R / kap ** 2
            d_mu["beta3"][idx] = R * (1 - b3 * b3 * P) / kap ** 2
            d_s["beta3"][idx] = -b3 * P * kap ** -1.5
            for k, (c, tr, xDx, yDx, yDy) in st["var"].items():
                tr, xDx, yDx, yDy = c * tr, c * xDx, c * yDx, c * yDy
                dP, dR = -yDy, -yDx
                dk = b3 * b3 * dP
                d_lZ[k][idx] = (-0.5 * tr + 0.5 * xDx - 0.5 * dk / kap
                                + 0.5 * b3 * b3 * (2 * R * dR / kap - R * R * dk / kap ** 2))
                d_mu[k][idx] = b3 * dR / kap - b3 * R * dk / kap ** 2
                d_s[k][idx] = -0.5 * kap ** -1.5 * dk
        return lZ, mu, s, d_lZ, d_mu, d_s

    # ------------------------------------------------------------------
    def _survival_nodes(self, p, u):
        """Node hazards h (N, K) and per-subject sums, for U values u (n, K)."""
        P = self.panels
        b3 = p.get("beta3", 0.0)
        g1, g2, g3, g4 = p.get("gamma1", 0.0), p.get("gamma2", 0.0), p["gamma3"], p.get("gamma4", 0.0)
        t = P.t.ravel()
        subj = P.node_subj.ravel()
        m0 = self._mean(p, self.G_nodes.ravel(), t, self.IV_nodes.ravel(), self.basis_nodes.reshape(len(t), -1))
        base = self.hD.log_hazard(p, t) + g1 * self.G_nodes.ravel() + g2 * self.V_nodes.ravel() + g3 * m0
        slope = g3 * b3 * t + g4
        logh = base[:, None] + slope[:, None] * u[subj] + np.log(P.w.ravel())[:, None]
        return np.exp(logh), t, subj, m0, slope

    def _survival(self, p, u, grad: bool):
        """S(u) for each subject and node (n, K); with grad also dS/dtheta at
        fixed u and dS/du."""
        sa = self.sa
        h, t, subj, m0, slope = self._survival_nodes(p, u)
        starts = self.node_starts
        Lam = np.add.reduceat(h, starts, axis=0)
        b3 = p.get("beta3", 0.0)
        g1, g2, g3, g4 = p.get("gamma1", 0.0), p.get("gamma2", 0.0), p["gamma3"], p.get("gamma4", 0.0)
        T, delta = sa.T, sa.delta[:, None]
        m0T = self._mean(p, sa.G, T, self.IV_T, self.basis_T)
        mT = m0T[:, None] + b3 * T[:, None] * u
        etaT = g1 * sa.G[:, None] + g2 * self.V_T[:, None] + g3 * mT + g4 * u
        logaT = self.hD.log_hazard(p, T)[:, None]
        S = delta * (logaT + etaT) - Lam
        if not grad:
            return S, None, None

        def sums(q):
            return np.add.reduceat(h * q[:, None], starts, axis=0)

        h_t = sums(t)
        h_m0 = sums(m0)
        h_V = sums(self.V_nodes.ravel())
        dS = {}
        G = sa.G[:, None]
        if self.model.attribute is not None:
            dS["gamma1"] = G * (delta - Lam)
        if self.model.factor is not None:
            dS["gamma2"] = delta * self.V_T[:, None] - h_V
        dS["gamma3"] = delta * mT - (h_m0 + b3 * u * h_t)
        if self.re:
            dS["gamma4"] = u * (delta - Lam)
            dS["beta3"] = g3 * u * (delta * T[:, None] - h_t)
        dlog_T = self.hD.dlog_hazard(p, T)
        dlog_n = self.hD.dlog_hazard(p, t)
        for k in self.hD.names:
            dS[k] = delta * dlog_T[k][:, None] - sums(dlog_n[k])
        Gn, IVn = self.G_nodes.ravel(), self.IV_nodes.ravel()
        Bn = self.basis_nodes.reshape(len(t), -1)
        for k in self.mean_names:
            dT = self._design(k, sa.G, T, self.IV_T, self.basis_T)
            dn = self._design(k, Gn, t, IVn, Bn)
            dS[k] = g3 * (delta * dT[:, None] - sums(dn))
        dSdu = delta * (g3 * b3 * T[:, None] + g4) - sums(slope)
        return S, dS, dSdu

    # ------------------------------------------------------------------
    def _threshold_long(self, p, u, grad: bool = False):
        """log of the QMC-averaged threshold-channel likelihood, (n, K), and
        with ``grad`` its derivatives at fixed ``u``.

        Given U, the latent value at visit j is m(t_j | U) + W_j with
        W_j = y0_sd xi_0 + sigma_b sum_{l<=j} sqrt(dt_l) xi_l; the same
        scrambled Sobol points serve every subject and every evaluation.
        """
        n, K = u.shape
        out = np.zeros((n, K))
        b3 = p.get("beta3", 0.0)
        sb, sy = p["sigma_b"], p["y0_sd"]
        Zq = self.qmc_normals
        ext, scales, laws = [], [], []
        for c in self.threshold:
            q = self.th_info[c]["n_levels"]
            ext.append(np.array([-np.inf] + [p[f"cut.{c}.{j}"] for j in range(1, q)] + [np.inf]))
            scales.append(p[f"scale.{c}"])
            laws.append(self.th_info[c]["law"] or "logistic")
        d = {}
        if grad:
            names = self.mean_names + ["y0_sd", "sigma_b"] + (["beta3"] if self.re else [])
            for ci, c in enumerate(self.threshold):
                names += [f"cut.{c}.{j}" for j in range(1, len(ext[ci]) - 1)] + [f"scale.{c}"]
            d = {k: np.zeros((n, K)) for k in names}
        for g in self.th_groups:
            idx, t, m = g["idx"], g["t"], g["m"]
            C = np.cumsum(Zq[None, :, 1:m + 1] * g["dt"][:, None, :], axis=2)  # (g,N,m)
            W = sy * Zq[None, :, :1] + sb * C
            m0 = self._mean(p, g["G"][:, None], t, g["IV"], g["basis"])  # (g,m)
            mean = m0[:, None, :] + b3 * u[idx][:, :, None] * t[:, None, :]  # (g,K,m)
            lat = mean[:, :, None, :] + W[:, None, :, :]  # (g,K,N,m)
            ll = np.zeros(lat.shape[:3])
            parts = []
            for ci in range(len(self.threshold)):
                lv = g["levels"][ci]  # (g,m)
                seen = lv >= 0
                if not seen.any():
                    parts.append(None)
                    continue
                lo = (np.where(seen, ext[ci][np.maximum(lv, 0)], -np.inf)[:, None, None, :] - lat) / scales[ci]
                hi = (np.where(seen, ext[ci][np.maximum(lv, 0) + 1], np.inf)[:, None, None, :] - lat) / scales[ci]
                lp = np.where(seen[:, None, None, :], log_interval_prob(lo, hi, laws[ci]), 0.0)
                ll += lp.sum(axis=3)
                parts.append((lv, seen, lo, hi, lp))
            mx = ll.max(axis=2, keepdims=True)
            mx = np.where(np.isfinite(mx), mx, 0.0)
            ex = np.exp(ll - mx)
            tot = ex.sum(axis=2, keepdims=True)
            out[idx] = mx[:, :, 0] + np.log(tot[:, :, 0] / Zq.shape[0])
            if grad:
                self._threshold_grad(d, idx, g, ex / tot, parts, ext, scales, laws, C, u, t)
        return out, d

    def _threshold_grad(self, d, idx, g, w, parts, ext, scales, laws, C, u, t):
        """Accumulate d log(QMC average) / d theta for one group; ``w`` are
        the normalized QMC weights (g, K, N)."""
        Zq = self.qmc_normals
        D = np.zeros(w.shape + (g["m"],))  # d ll / d latent value, (g,K,N,m)
        for ci, c in enumerate(self.threshold):
            if parts[ci] is None:
                continue
            lv, seen, lo, hi, lp = parts[ci]
            s = scales[ci]
            with np.errstate(invalid="ignore", over="ignore"):
                A = np.where(np.isfinite(lo), -np.exp(_log_density(lo, laws[ci]) - lp), 0.0)
                B = np.where(np.isfinite(hi), np.exp(_log_density(hi, laws[ci]) - lp), 0.0)
            mask = seen[:, None, None, :]
            A = np.where(mask & np.isfinite(A), A, 0.0)
            B = np.where(mask & np.isfinite(B), B, 0.0)
            D -= (A + B) / s
            lo_f = np.where(np.isfinite(lo), lo, 0.0)
            hi_f = np.where(np.isfinite(hi), hi, 0.0)
            d[f"scale.{c}"][idx] += (w * (-(A * lo_f + B * hi_f) / s).sum(axis=3)).sum(axis=2)
            for j in range(1, len(ext[ci]) - 1):
                sel_lo = (lv == j)[:, None, None, :]
                sel_hi = (lv + 1 == j)[:, None, None, :]
                val = (np.where(sel_lo, A, 0.0) + np.where(sel_hi, B, 0.0)).sum(axis=3) / s
                d[f"cut.{c}.{j}"][idx] += (w * val).sum(axis=2)
        E = (w[..., None] * D).sum(axis=2)  # (g,K,m)
        Gm = g["G"][:, None]
        for k in self.mean_names:
            des = np.broadcast_to(self._design(k, Gm, t, g["IV"], g["basis"]), t.shape)
            d[k][idx] += np.einsum("gkm,gm->gk", E, des)
        if self.re:
            d["beta3"][idx] += np.einsum("gkm,gm->gk", E, t) * u[idx]
        d["y0_sd"][idx] += np.einsum("gknm,n->gk", w[..., None] * D, Zq[:, 0])
        d["sigma_b"][idx] += np.einsum("gknm,gnm->gk", w[..., None] * D, C)

    # ------------------------------------------------------------------
    def terms(self, p) -> np.ndarray:
        return self._evaluate(p, grad=False)[0]

    def _nodes(self, mu, s):
        x, w = gauss_hermite(self.model.gh_nodes if self.re else 1)
        u = mu[:, None] + s[:, None] * SQRT2 * x[None, :] if self.re else np.zeros((len(mu), 1))
        logw = np.log(w / np.sqrt(np.pi)) if self.re else np.zeros(1)
        return x, u, logw

    def _evaluate(self, p, grad: bool):
        lZ, mu, s, d_lZ, d_mu, d_s = self._gauss(p, grad)
        if not self.survival and not self.threshold:
            return lZ, d_lZ
        x, u, logw = self._nodes(mu, s)
        inner = np.broadcast_to(logw, u.shape).copy()
        dS = dSdu = None
        dTh = {}
        if self.survival:
            S, dS, dSdu = self._survival(p, u, grad)
            inner += S
        if self.threshold:
            Th, dTh = self._threshold_long(p, u, grad)
            inner += Th
        mx = inner.max(axis=1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        ex = np.exp(inner - mx)
        tot = ex.sum(axis=1)
        ll = lZ + mx[:, 0] + np.log(tot)
        if not grad:
            return ll, None
        pi = ex / tot[:, None]
        g = {}
        for k in self.names:
            val = d_lZ.get(k, 0.0)
            if dS is not None and k in dS:
                val = val + (pi * dS[k]).sum(1)
            if k in dTh:
                val = val + (pi * dTh[k]).sum(1)
            if self.re and dSdu is not None and k in d_mu:
                du = d_mu[k][:, None] + d_s[k][:, None] * SQRT2 * x[None, :]
                val = val + (pi * dSdu * du).sum(1)
            g[k] = np.broadcast_to(val, (self.sa.n,))
        return ll, g

    def gradient(self, p) -> dict[str, float]:
        """Analytic gradient of the total log-likelihood (natural scale)."""
        _, g = self._evaluate(p, grad=True)
        return {k: float(np.sum(v)) for k, v in g.items()}
