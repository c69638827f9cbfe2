"""Multi-object density bookkeeping: hypotheses, weights, statistics and
estimate extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.special import logsumexp

from .densities import GaussianMixture, HybridDensity, JointGaussianMixture
from .labels import LineageForest, Spawned, build_lineage_forest, parent


class DegenerateDensityError(RuntimeError):
    def __init__(self, message: str, frame: Optional[int] = None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """One (I, ξ) component.

    ``densities`` holds one single-label density per label.  In the exact
    filter the kinematics of coupled labels live in ``blocks`` (joint
    mixtures over two or more labels) and ``densities`` carry their
    marginals; labels outside every block form singleton blocks.
    ``assoc`` records the measurement index each label took at the last
    update (0 = missed).
    """

    log_weight: float
    labels: tuple = ()
    densities: tuple = ()
    assoc: tuple = ()
    blocks: tuple = ()
    history: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "densities", tuple(self.densities))
        if len(self.labels) != len(self.densities):
            raise ValueError("need exactly one density per label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels within a hypothesis must be distinct")
        if not self.assoc:
            object.__setattr__(self, "assoc", (0,) * len(self.labels))
        object.__setattr__(self, "history", hash(tuple(d.key for d in self.densities)))

    @property
    def weight(self) -> float:
        return float(np.exp(self.log_weight))

    @property
    def key(self) -> tuple:
        return (self.labels, self.history)

    def with_log_weight(self, log_weight: float) -> "Hypothesis":
        return Hypothesis(log_weight, self.labels, self.densities, self.assoc, self.blocks)

    def density(self, label) -> HybridDensity:
        return self.densities[self.labels.index(label)]

    def block_of(self, label) -> Optional[JointGaussianMixture]:
        for b in self.blocks:
            if label in b.labels:
                return b
        return None


@dataclass(frozen=True, eq=False)
class MultiObjectDensity:
    hypotheses: tuple = ()
    frame: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))

    def __len__(self):
        return len(self.hypotheses)

    @classmethod
    def empty(cls, frame: int = 0) -> "MultiObjectDensity":
        return cls((Hypothesis(0.0),), frame)

    @property
    def log_weights(self) -> np.ndarray:
        return np.array([h.log_weight for h in self.hypotheses], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def label_space(self) -> set:
        out = set()
        for h in self.hypotheses:
            out.update(h.labels)
        return out


def normalize(d: MultiObjectDensity) -> MultiObjectDensity:
    lw = d.log_weights
    if len(lw) == 0 or not np.isfinite(lw).any():
        raise DegenerateDensityError("every hypothesis has zero weight", d.frame)
    total = logsumexp(lw)
    hyps = [h.with_log_weight(h.log_weight - total) for h in d.hypotheses if np.isfinite(h.log_weight)]
    return MultiObjectDensity(hyps, d.frame)


def truncate(d: MultiObjectDensity, cap: int, floor: float = 0.0) -> MultiObjectDensity:
    """Keep the ``cap`` heaviest hypotheses whose normalized weight is at
    least ``floor``; the heaviest one is always kept."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    d = normalize(d)
    order = sorted(range(len(d)), key=lambda i: (-d.hypotheses[i].log_weight, d.hypotheses[i].labels))
    log_floor = np.log(floor) if floor > 0 else -np.inf
    keep = [i for i in order[:cap] if d.hypotheses[i].log_weight >= log_floor] or order[:1]
    return normalize(MultiObjectDensity([d.hypotheses[i] for i in keep], d.frame))


def cardinality_distribution(d: MultiObjectDensity) -> np.ndarray:
    if len(d) == 0:
        return np.ones(1)
    sizes = np.array([len(h.labels) for h in d.hypotheses])
    pmf = np.zeros(sizes.max() + 1)
    np.add.at(pmf, sizes, d.weights)
    return pmf


def expected_cardinality(d: MultiObjectDensity) -> float:
    pmf = cardinality_distribution(d)
    return float(np.arange(len(pmf)) @ pmf)


def label_existence(d: MultiObjectDensity, label) -> float:
    return float(sum(h.weight for h in d.hypotheses if label in h.labels))


def existence_map(d: MultiObjectDensity) -> dict:
    out: dict = {}
    for h in d.hypotheses:
        w = h.weight
        for lab in h.labels:
            out[lab] = out.get(lab, 0.0) + w
    return out


def intensity(d: MultiObjectDensity, label) -> GaussianMixture:
    """Existence-weighted kinematic marginal of ``label``; its total weight
    is the label's existence probability (empty mixture when absent)."""
    ws, ms, cs = [], [], []
    for h in d.hypotheses:
        if label in h.labels:
            gm = h.density(label).kinematics
            ws.append(h.weight * gm.weights / gm.weights.sum())
            ms.append(gm.means)
            cs.append(gm.covs)
    if not ws:
        return GaussianMixture(np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1, 1)))
    return GaussianMixture(np.concatenate(ws), np.concatenate(ms), np.concatenate(cs))


def intensity_at(d: MultiObjectDensity, points, labels: Optional[Iterable] = None) -> np.ndarray:
    """Intensity summed over ``labels`` (default: all) at kinematic points."""
    pts = np.atleast_2d(np.asarray(points, float))
    out = np.zeros(len(pts))
    for lab in (d.label_space if labels is None else labels):
        gm = intensity(d, lab)
        if len(gm):
            out += gm.pdf(pts)
    return out


def spawning_and_division_counts(d: MultiObjectDensity, prev_label_space=None, birth_space=None) -> tuple:
    """Pmfs of the number of newly spawned labels and of division events.

    New spawned labels are those outside the previous label space and the
    birth space; without these spaces, a label counts as newly spawned when
    it is a daughter labelled with the density's frame.
    """
    prev = set(prev_label_space) if prev_label_space is not None else None
    births = set(birth_space) if birth_space is not None else set()
    n_sp, n_div = [], []
    for h in d.hypotheses:
        if prev is None:
            new = [l for l in h.labels if isinstance(l, Spawned) and l.time == d.frame]
        else:
            new = [l for l in h.labels if l not in prev and l not in births]
        n_sp.append(len(new))
        n_div.append(len({parent(l) for l in new}))
    w = d.weights
    sp = np.zeros(max(n_sp, default=0) + 1)
    dv = np.zeros(max(n_div, default=0) + 1)
    np.add.at(sp, np.array(n_sp, dtype=int), w)
    np.add.at(dv, np.array(n_div, dtype=int), w)
    return sp, dv


@dataclass(frozen=True)
class LabelEstimate:
    mean: np.ndarray
    mode: int
    detection: float


@dataclass(frozen=True, eq=False)
class Estimate:
    frame: int
    labels: tuple
    states: dict
    lineage: LineageForest


def extract_estimate(d: MultiObjectDensity) -> Estimate:
    """MAP cardinality (smallest on ties), then the heaviest hypothesis of
    that size (lexicographically smallest label set on ties)."""
    pmf = cardinality_distribution(d)
    n_star = int(np.flatnonzero(pmf >= pmf.max() * (1 - 1e-12))[0])
    best = None
    for h in d.hypotheses:
        if len(h.labels) != n_star:
            continue
        labs = tuple(sorted(h.labels))
        if best is None or h.log_weight > best[0] or (h.log_weight == best[0] and labs < best[1]):
            best = (h.log_weight, labs, h)
    if best is None:
        return Estimate(d.frame, (), {}, build_lineage_forest([]))
    h = best[2]
    states = {}
    for lab in best[1]:
        dens = h.density(lab)
        states[lab] = LabelEstimate(dens.kinematics.mean(), dens.mode.map_mode, dens.detection.mean)
    return Estimate(d.frame, best[1], states, build_lineage_forest(best[1]))


def statistics_record(d: MultiObjectDensity, tail: float = 1e-6) -> dict:
    """Per-frame statistics for JSON export."""
    pmf = cardinality_distribution(d)
    cum = np.cumsum(pmf)
    cut = int(np.searchsorted(cum, 1.0 - tail)) + 1
    sp, dv = spawning_and_division_counts(d)
    return {
        "frame": d.frame,
        "cardinality_pmf": pmf[:cut].tolist(),
        "existence": {str(k): v for k, v in sorted(existence_map(d).items())},
        "spawning_pmf": sp.tolist(),
        "division_pmf": dv.tolist(),
    }
