"""Reshape a :class:`~deathsys.observe.Dataset` into per-subject arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ChannelUnmapped, ConfigError
from .quadrature import FactorPaths

EXACT, INTERVAL, RIGHT = 0, 1, 2
_STATUS = {"observed_jump": EXACT, "interval": INTERVAL, "right_censored": RIGHT}


@dataclass
class SubjectArrays:
    subjects: np.ndarray
    G: np.ndarray
    factor: FactorPaths
    T: np.ndarray
    delta: np.ndarray

    @property
    def n(self) -> int:
        return len(self.subjects)


def subject_arrays(data, attribute: str | None, factor: str | None) -> SubjectArrays:
    deaths = data.deaths.sort_values("subject", kind="stable")
    subjects = deaths["subject"].to_numpy()
    n = len(subjects)
    if attribute is not None:
        if attribute not in data.attributes.columns:
            raise ConfigError(f"attribute {attribute!r} is not observed in the dataset")
        att = data.attributes.set_index("subject")[attribute]
        G = att.reindex(subjects).to_numpy(dtype=float)
    else:
        G = np.zeros(n)
    if factor is not None:
        fac = data.factor[data.factor["factor"] == factor]
        if fac.empty:
            raise ConfigError(f"factor {factor!r} is not in the dataset")
        groups = {s: g for s, g in fac.groupby("subject", sort=False)}
        kt, kv = [], []
        for s in subjects:
            g = groups[s].sort_values("t")
            kt.append(g["t"].to_numpy(dtype=float))
            kv.append(g["value"].to_numpy(dtype=float))
        paths = FactorPaths(kt, kv)
    else:
        paths = FactorPaths.zeros(n)
    return SubjectArrays(subjects, G, paths, deaths["time"].to_numpy(dtype=float),
                         deaths["delta"].to_numpy(dtype=int))


def event_arrays(data, channel: str, subjects: np.ndarray):
    """Status code, left and right bound per subject (exact: left = right)."""
    ev = data.events[data.events["channel"] == channel]
    if ev.empty and channel not in data.meta.get("channels", {}):
        raise ChannelUnmapped(f"dataset has no event channel {channel!r}")
    ev = ev.set_index("subject").reindex(subjects)
    if ev["status"].isna().any():
        raise ConfigError(f"channel {channel!r}: some subjects have no event record")
    status = ev["status"].map(_STATUS).to_numpy(dtype=int)
    left = ev["left"].to_numpy(dtype=float)
    right = ev["right"].to_numpy(dtype=float)
    return status, left, right


def longitudinal_arrays(data, channel: str, subjects: np.ndarray):
    """Per-subject (times, values) for one channel, in subject order."""
    info = data.meta.get("channels", {})
    if channel not in info:
        raise ChannelUnmapped(f"dataset has no channel {channel!r}")
    lon = data.longitudinal[data.longitudinal["channel"] == channel]
    groups = {s: g for s, g in lon.groupby("subject", sort=False)}
    out = []
    for s in subjects:
        g = groups.get(s)
        if g is None:
            out.append((np.empty(0), np.empty(0)))
        else:
            g = g.sort_values("t")
            out.append((g["t"].to_numpy(dtype=float), g["value"].to_numpy(dtype=float)))
    return out


def logsumexp_segments(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """logsumexp over contiguous segments ``values[starts[k]:starts[k+1]]``
    (segments must be nonempty; works along axis 0)."""
    m = np.maximum.reduceat(values, starts, axis=0)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    counts = np.diff(np.append(starts, len(values)))
    s = np.add.reduceat(np.exp(values - np.repeat(m_safe, counts, axis=0)), starts, axis=0)
    with np.errstate(divide="ignore"):
        return np.log(s) + m_safe
