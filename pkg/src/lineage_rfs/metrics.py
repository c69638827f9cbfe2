"""OSPA, OSPA⁽²⁾, a lineage-aware TRA score and mitotic-event errors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .labels import LineageForest, Spawned, build_lineage_forest, parent


@dataclass(eq=False)
class TrackSet:
    """Per-label positions keyed by frame."""

    tracks: dict = field(default_factory=dict)
    lineage: Optional[LineageForest] = None
    modes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tracks = {lab: {int(k): np.asarray(v, float) for k, v in sorted(pts.items())}
                       for lab, pts in self.tracks.items()}
        if self.lineage is None:
            self.lineage = build_lineage_forest(self.tracks)

    @classmethod
    def from_estimates(cls, estimates) -> "TrackSet":
        tracks: dict = {}
        for est in estimates:
            for lab, st in est.states.items():
                tracks.setdefault(lab, {})[est.frame] = np.asarray(st.mean[:2], float)
        return cls(tracks)

    @property
    def frames(self) -> list:
        out = set()
        for pts in self.tracks.values():
            out.update(pts)
        return sorted(out)

    def at(self, k: int) -> tuple:
        labs = [lab for lab in sorted(self.tracks) if k in self.tracks[lab]]
        pts = np.array([self.tracks[lab][k] for lab in labs]).reshape(-1, 2)
        return labs, pts

    def count(self, k: int) -> int:
        return sum(1 for pts in self.tracks.values() if k in pts)


def ospa(X, Y, p: float = 1.0, c: float = 25.0) -> float:
    X = np.asarray(X, float).reshape(-1, 2) if np.size(X) else np.zeros((0, 2))
    Y = np.asarray(Y, float).reshape(-1, 2) if np.size(Y) else np.zeros((0, 2))
    if p < 1 or c <= 0:
        raise ValueError("need p >= 1 and c > 0")
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(c)
    D = np.minimum(cdist(X, Y), c) ** p
    r, s = linear_sum_assignment(D)
    cost = D[r, s].sum() + c**p * abs(m - n)
    return float((cost / max(m, n)) ** (1.0 / p))


def _track_distance(a: dict, b: dict, frames, p: float, c: float) -> float:
    total, count = 0.0, 0
    for k in frames:
        ina, inb = k in a, k in b
        if ina and inb:
            total += min(float(np.linalg.norm(a[k] - b[k])), c) ** p
        elif ina or inb:
            total += c**p
        else:
            continue
        count += 1
    return (total / count) ** (1.0 / p) if count else 0.0


def ospa2(est: TrackSet, truth: TrackSet, window: int = 20, p: float = 1.0, c: float = 25.0,
          frames=None) -> np.ndarray:
    """OSPA between track segments over a trailing window, per frame.

    The base distance of two tracks is the time-averaged cut-off distance
    over the window frames where at least one of them exists, a frame with
    only one of them costing ``c``.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    if frames is None:
        frames = sorted(set(est.frames) | set(truth.frames))
    out = np.zeros(len(frames))
    for i, k in enumerate(frames):
        win = range(k - window + 1, k + 1)
        ex = [t for t in est.tracks.values() if any(f in t for f in win)]
        tr = [t for t in truth.tracks.values() if any(f in t for f in win)]
        m, n = len(ex), len(tr)
        if m == 0 and n == 0:
            continue
        if m == 0 or n == 0:
            out[i] = c
            continue
        D = np.array([[_track_distance(a, b, win, p, c) ** p for b in tr] for a in ex])
        r, s = linear_sum_assignment(D)
        out[i] = ((D[r, s].sum() + c**p * abs(m - n)) / max(m, n)) ** (1.0 / p)
    return out


def _edges(ts: TrackSet) -> dict:
    """Edges between consecutive nodes of a track (link) and from a
    parent's last node to a daughter's first node (division)."""
    edges = {}
    for lab, pts in ts.tracks.items():
        ks = list(pts)
        for a, b in zip(ks, ks[1:]):
            edges[((lab, a), (lab, b))] = "link"
        par = parent(lab)
        if par is not None and par in ts.tracks and ks:
            last = max(f for f in ts.tracks[par] if f < ks[0]) if any(f < ks[0] for f in ts.tracks[par]) else None
            if last is not None:
                edges[((par, last), (lab, ks[0]))] = "division"
    return edges


@dataclass(frozen=True)
class TraWeights:
    ns: float = 1.0
    fn: float = 1.0
    fp: float = 1.0
    ed: float = 1.0
    ea: float = 1.0
    ec: float = 1.0


def tra_counts(est: TrackSet, truth: TrackSet, match_radius: float = 25.0) -> dict:
    """AOGM error counts under per-frame centroid matching."""
    match = {}  # estimated node -> truth node
    counts = dict(ns=0, fn=0, fp=0, ed=0, ea=0, ec=0)
    for k in sorted(set(est.frames) | set(truth.frames)):
        el, ep = est.at(k)
        tl, tp = truth.at(k)
        matched_t = set()
        if len(el) and len(tl):
            D = cdist(ep, tp)
            big = 1e9
            r, s = linear_sum_assignment(np.where(D <= match_radius, D, big))
            for a, b in zip(r, s):
                if D[a, b] <= match_radius:
                    match[(el[a], k)] = (tl[b], k)
                    matched_t.add(b)
        for b in range(len(tl)):
            if b in matched_t:
                continue
            # a truth node covered only by an already matched estimate is a merge
            if len(el) and np.min(np.linalg.norm(ep - tp[b], axis=1)) <= match_radius:
                counts["ns"] += 1
            else:
                counts["fn"] += 1
        counts["fp"] += sum(1 for a in range(len(el)) if (el[a], k) not in match)
    t_edges = _edges(truth)
    covered = set()
    for (a, b), kind in _edges(est).items():
        if a not in match or b not in match:
            counts["ed"] += 1
            continue
        te = (match[a], match[b])
        if te not in t_edges:
            counts["ed"] += 1
        else:
            covered.add(te)
            if t_edges[te] != kind:
                counts["ec"] += 1
    counts["ea"] = sum(1 for e in t_edges if e not in covered)
    counts["truth_nodes"] = sum(len(p) for p in truth.tracks.values())
    counts["truth_edges"] = len(t_edges)
    return counts


def tra_score(est: TrackSet, truth: TrackSet, match_radius: float = 25.0, weights: TraWeights = TraWeights()) -> float:
    c = tra_counts(est, truth, match_radius)
    aogm = (weights.ns * c["ns"] + weights.fn * c["fn"] + weights.fp * c["fp"]
            + weights.ed * c["ed"] + weights.ea * c["ea"] + weights.ec * c["ec"])
    aogm0 = weights.fn * c["truth_nodes"] + weights.ea * c["truth_edges"]
    if aogm0 == 0:
        return 1.0 if aogm == 0 else 0.0
    return 1.0 - min(aogm, aogm0) / aogm0


def division_counts(ts: TrackSet, frames) -> np.ndarray:
    """Number of distinct dividing parents per frame (daughters' label time)."""
    per = {}
    for lab in ts.tracks:
        if isinstance(lab, Spawned):
            per.setdefault(lab.time, set()).add(lab.parent)
    return np.array([len(per.get(k, ())) for k in frames], dtype=int)


def mitotic_event_error(est: TrackSet, truth: TrackSet, frames=None) -> tuple:
    """Per-frame (estimated - true) division counts and their mean |error|."""
    if frames is None:
        frames = sorted(set(est.frames) | set(truth.frames))
    err = division_counts(est, frames) - division_counts(truth, frames)
    return err, float(np.mean(np.abs(err))) if len(err) else 0.0


def cardinality_error(est: TrackSet, truth: TrackSet, frames=None) -> np.ndarray:
    if frames is None:
        frames = sorted(set(est.frames) | set(truth.frames))
    return np.array([est.count(k) - truth.count(k) for k in frames], dtype=int)
