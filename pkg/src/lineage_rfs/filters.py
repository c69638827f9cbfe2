"""The PA, UA and EF recursions and the sequence driver.

All three variants share one proposal path: λ costs are built from the
label-marginal predicted densities, extended association maps are drawn
per hypothesis, and each map becomes a child hypothesis.  They differ in
how children are finished:

* PA keeps the λ-product weight and the per-label posteriors;
* UA updates daughters jointly against their measurements, reweights
  children where both daughters were detected, and keeps the marginals;
* EF additionally retains the joint posteriors as blocks, so later steps
  predict and update coupled labels jointly.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .assignment import RowBank, enumerate_sparse, gibbs_chain, unique_rows
from .densities import (
    GaussianMixture,
    HybridDensity,
    JointGaussianMixture,
    ReductionConfig,
    gm_marginalize,
    gm_update_log,
)
from .dynamics import (
    DIE,
    DIVIDE,
    SURVIVE,
    BirthModel,
    BirthParams,
    MitosisModel,
    ModeModel,
    MotionModel,
    adaptive_birth,
    generation_cardinality,
    predict_stacked,
    spawn_predict_joint,
    survival_predict,
)
from .hypotheses import (
    DegenerateDensityError,
    Estimate,
    Hypothesis,
    MultiObjectDensity,
    cardinality_distribution,
    extract_estimate,
    normalize,
    spawning_and_division_counts,
    truncate,
)
from .labels import Birth, daughters
from .measurement import (
    ClutterBank,
    DetectionFrame,
    SensorModel,
    detected_posterior,
    log_psi_vector,
    missed_posterior,
)

log = logging.getLogger(__name__)

VARIANTS = ("pa", "ua", "ef")


class CapacityError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    variant: str = "pa"
    gibbs_samples: int = 1000
    cap: int = 1000
    floor: float = 1e-5
    sampler: str = "gibbs"
    unknown_clutter: bool = False
    unknown_detection: bool = False
    max_block_dim: int = 32
    k_beta: float = 1.1
    reduction: ReductionConfig = ReductionConfig()
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown filter variant {self.variant!r}")
        if self.sampler not in ("gibbs", "enumerate"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.cap < 1 or self.gibbs_samples < 1:
            raise ValueError("cap and gibbs_samples must be at least 1")


@dataclass(frozen=True, eq=False)
class Models:
    motion: MotionModel
    mitosis: MitosisModel
    modes: ModeModel
    sensor: SensorModel
    birth: BirthParams = BirthParams()
    static_birth: Optional[Sequence] = None

    @property
    def state_dim(self) -> int:
        return self.motion.dim


def _key(*parts) -> int:
    return hash(parts)


def _stacked_update(mixture: GaussianMixture, state_dim: int, slots: Sequence, frame: DetectionFrame,
                    sensor: SensorModel) -> tuple:
    """Update a stacked mixture with measurement ``j`` for each (slot, j),
    j > 0; returns (joint log likelihood, posterior)."""
    slots = [(q, j) for q, j in slots if j > 0]
    if not slots:
        return 0.0, mixture
    m = sensor.H.shape[0]
    H = np.zeros((m * len(slots), mixture.dim))
    z = np.zeros(m * len(slots))
    for r, (q, j) in enumerate(slots):
        H[r * m:(r + 1) * m, q * state_dim:(q + 1) * state_dim] = sensor.H
        z[r * m:(r + 1) * m] = frame.detections[j - 1].position
    R = block_diag(*([sensor.R] * len(slots)))
    return gm_update_log(mixture, H, R, z)


class FrameContext:
    """Per-frame caches shared by every hypothesis of the step."""

    def __init__(self, frame: DetectionFrame, models: Models, cfg: FilterConfig, kappa: Optional[float] = None):
        self.frame = frame
        self.models = models
        self.cfg = cfg
        self.M = len(frame)
        kappa = models.sensor.kappa() if kappa is None else kappa
        if not kappa > 0:
            raise ValueError("clutter intensity must be positive")
        self.log_kappa = math.log(kappa)
        self.appearance = models.sensor.appearance(frame.features) if self.M else np.zeros((0, 2))
        self.tracks: dict = {}
        self.blocks: dict = {}

    def track(self, label, hd: HybridDensity) -> "TrackCosts":
        k = (label, hd.key) if hd.key else (label, id(hd))
        tc = self.tracks.get(k)
        if tc is None:
            tc = self.tracks[k] = TrackCosts(label, hd, self)
        return tc

    def psi(self, hd: HybridDensity) -> tuple:
        return log_psi_vector(hd, self.frame, self.models.sensor, self.log_kappa, self.appearance)


def _finite(v: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.isfinite(v))


class TrackCosts:
    """λ costs of one prior label and lazily built posteriors."""

    def __init__(self, label, hd: HybridDensity, ctx: FrameContext):
        m, cfg = ctx.models, ctx.cfg
        self.label, self.hd, self.ctx = label, hd, ctx
        self.key = hd.key if hd.key else id(hd)
        self.rho = generation_cardinality(hd.mode, m.modes)
        with np.errstate(divide="ignore"):
            lrho = np.log(self.rho)
        self.surv = survival_predict(hd, m.motion, m.modes, cfg.k_beta, cfg.reduction)
        self.lpsi_s, self.kin_s = ctx.psi(self.surv)
        cand = [(-1, -1, -1), (-1, -1, 0)]
        logw = [lrho[0], lrho[1] + self.lpsi_s[0]]
        for j in _finite(self.lpsi_s[1:]) + 1:
            cand.append((-1, -1, j))
            logw.append(lrho[1] + self.lpsi_s[j])
        self.joint = None
        if self.rho[2] > 0:
            d1, d2 = daughters(label, ctx.frame.frame)
            self.joint, dmode, dbeta = spawn_predict_joint(hd, m.mitosis, m.modes, (d1, d2), cfg.k_beta, cfg.reduction)
            self.daughter = [HybridDensity(gm_marginalize(self.joint, d), dmode, dbeta) for d in (d1, d2)]
            (self.lpsi_1, self.kin_1), (self.lpsi_2, self.kin_2) = ctx.psi(self.daughter[0]), ctx.psi(self.daughter[1])
            for j1 in _finite(self.lpsi_1):
                for j2 in _finite(self.lpsi_2):
                    if j1 == j2 and j1 > 0:
                        continue
                    cand.append((j1, j2, -1))
                    logw.append(lrho[2] + self.lpsi_1[j1] + self.lpsi_2[j2])
        self.cand = np.array(cand, dtype=np.int64)
        self.logw = np.array(logw, dtype=float)
        self._post: dict = {}

    def kin_loglik(self, q: int, j: int) -> float:
        """Marginal kinematic log likelihood used inside λ (q = 0 survivor)."""
        kin = self.kin_s if q == 0 else (self.kin_1 if q == 1 else self.kin_2)
        return float(kin[j - 1])

    def posterior(self, q: int, j: int) -> HybridDensity:
        """Per-label posterior of the survivor (q = 0) or daughter q."""
        k = (q, j)
        out = self._post.get(k)
        if out is None:
            prior = self.surv if q == 0 else self.daughter[q - 1]
            key = _key(self.key, q, j)
            if j == 0:
                out = missed_posterior(prior, key)
            else:
                out = detected_posterior(prior, self.ctx.frame.detections[j - 1], self.ctx.models.sensor, key)
            self._post[k] = out
        return out

    def joint_posterior(self, j1: int, j2: int) -> tuple:
        """(joint kinematic log likelihood, joint posterior) of the daughters."""
        k = (-4, j1, j2)
        out = self._post.get(k)
        if out is None:
            ll, post = _stacked_update(self.joint.mixture, self.ctx.models.state_dim, [(0, j1), (1, j2)],
                                       self.ctx.frame, self.ctx.models.sensor)
            out = self._post[k] = (ll, JointGaussianMixture(self.joint.labels, post, key=_key(self.key, -4, j1, j2)))
        return out

    def joint_daughters(self, j1: int, j2: int) -> tuple:
        """Daughter densities as marginals of the joint posterior."""
        k = (-5, j1, j2)
        out = self._post.get(k)
        if out is None:
            _, joint = self.joint_posterior(j1, j2)
            out = []
            for q, (lab, j) in enumerate(zip(joint.labels, (j1, j2))):
                p = self.posterior(q + 1, j)
                out.append(HybridDensity(gm_marginalize(joint, lab), p.mode, p.detection, key=_key(joint.key, q)))
            out = self._post[k] = tuple(out)
        return out


class BirthCosts:
    def __init__(self, entry, ctx: FrameContext):
        self.label, self.ctx = entry.label, ctx
        self.hd = entry.density
        self.key = _key(-3, entry.label, self.hd.key)
        self.lpsi, self.kin = ctx.psi(self.hd)
        cand = [(-1, -1, -1)]
        lr1 = math.log1p(-entry.r) if entry.r < 1 else -np.inf
        lr = math.log(entry.r) if entry.r > 0 else -np.inf
        logw = [lr1]
        for j in _finite(self.lpsi):
            cand.append((-1, -1, j))
            logw.append(lr + self.lpsi[j])
        self.cand = np.array(cand, dtype=np.int64)
        self.logw = np.array(logw, dtype=float)
        self._post: dict = {}

    def posterior(self, j: int) -> HybridDensity:
        out = self._post.get(j)
        if out is None:
            key = _key(self.key, j)
            if j == 0:
                out = missed_posterior(self.hd, key)
            else:
                out = detected_posterior(self.hd, self.ctx.frame.detections[j - 1], self.ctx.models.sensor, key)
            self._post[j] = out
        return out


def static_births(models: Models, time_index: int) -> BirthModel:
    """Births from fixed regions: ``models.static_birth`` holds (r, HybridDensity)."""
    from .dynamics import BirthEntry

    entries = []
    for i, (r, hd) in enumerate(models.static_birth or ()):
        hd = HybridDensity(hd.kinematics, hd.mode, hd.detection, key=_key(-2, time_index, i))
        entries.append(BirthEntry(Birth(time_index, i), r, hd))
    return BirthModel(tuple(entries))


@dataclass
class StepInfo:
    assoc_any: np.ndarray
    assoc_track: np.ndarray
    n_children: int = 0
    n_sweeps: int = 0


def _block_child(block: JointGaussianMixture, events: list, ctx: FrameContext, tcs: list) -> tuple:
    """Predict and update an EF block under per-label events.

    ``events[i]`` is (event, j1, j2) for block label i; returns the new
    labels, per-label densities, measurement indices, joint posterior (or
    None for a single survivor) and the kinematic log-weight correction.
    """
    key = (block.key, tuple(events))
    hit = ctx.blocks.get(key)
    if hit is not None:
        return hit
    m = ctx.models
    d = m.state_dim
    codes = [e[0] for e in events]
    new_labels, meas, parts = [], [], []
    for lab, (ev, j1, j2), tc in zip(block.labels, events, tcs):
        if ev == SURVIVE:
            new_labels.append(lab)
            meas.append(j1)
            parts.append(tc.posterior(0, j1))
        elif ev == DIVIDE:
            d1, d2 = daughters(lab, ctx.frame.frame)
            new_labels += [d1, d2]
            meas += [j1, j2]
            parts += [tc.posterior(1, j1), tc.posterior(2, j2)]
    if not new_labels:
        out = ((), (), (), None, 0.0)
        ctx.blocks[key] = out
        return out
    if d * len(new_labels) > ctx.cfg.max_block_dim:
        raise CapacityError(f"joint block of {len(new_labels)} labels exceeds {ctx.cfg.max_block_dim} state dims")
    pred = predict_stacked(block.mixture, d, codes, m.motion, m.mitosis, ctx.cfg.reduction)
    ll, post = _stacked_update(pred, d, list(enumerate(meas)), ctx.frame, m.sensor)
    bkey = _key(*key)
    joint = JointGaussianMixture(tuple(new_labels), post, key=bkey)
    dens = tuple(
        HybridDensity(gm_marginalize(joint, lab), p.mode, p.detection, key=_key(bkey, i))
        for i, (lab, p) in enumerate(zip(new_labels, parts))
    )
    detected = [(i, j) for i, j in enumerate(meas) if j > 0]
    corr = 0.0
    if len(detected) >= 2:
        marg = 0.0
        i = 0
        for (ev, j1, j2), tc in zip(events, tcs):
            if ev == SURVIVE:
                marg += tc.kin_loglik(0, j1) if j1 > 0 else 0.0
            elif ev == DIVIDE:
                marg += (tc.kin_loglik(1, j1) if j1 > 0 else 0.0) + (tc.kin_loglik(2, j2) if j2 > 0 else 0.0)
        corr = ll - marg
    out = (tuple(new_labels), dens, tuple(meas), joint if len(new_labels) > 1 else None, corr)
    ctx.blocks[key] = out
    return out


def _step(d: MultiObjectDensity, frame: DetectionFrame, models: Models, cfg: FilterConfig,
          births: Optional[BirthModel] = None, kappa: Optional[float] = None) -> tuple:
    variant = cfg.variant
    if variant != "ef" and any(h.blocks for h in d.hypotheses):
        raise ValueError("PA/UA steps need a density in per-label form")
    ctx = FrameContext(frame, models, cfg, kappa)
    births = births if births is not None else BirthModel(())
    M = ctx.M

    # one bank row per distinct (label, density) and per birth entry
    rows, row_of, costs = [], {}, []
    hyp_rows = []
    for h in d.hypotheses:
        ids = []
        for lab, hd in zip(h.labels, h.densities):
            tc = ctx.track(lab, hd)
            rid = row_of.get(id(tc))
            if rid is None:
                rid = row_of[id(tc)] = len(rows)
                rows.append((tc.cand, tc.logw))
                costs.append(tc)
            ids.append(rid)
        hyp_rows.append(ids)
    birth_costs = [BirthCosts(e, ctx) for e in births.entries]
    birth_rows = []
    for bc in birth_costs:
        birth_rows.append(len(rows))
        rows.append((bc.cand, bc.logw))
        costs.append(bc)
    bank = RowBank.from_rows(rows)

    dn = normalize(d)
    children: dict = {}
    n_sweeps = 0
    for hi, h in enumerate(dn.hypotheses):
        ids = np.array(hyp_rows[hi] + birth_rows, dtype=np.int64)
        n_prior = len(h.labels)
        if cfg.sampler == "enumerate":
            combos = enumerate_sparse(bank, ids)
            states = np.array(combos, dtype=np.int64).reshape(len(combos), len(ids))
        else:
            sweeps = max(1, int(round(cfg.gibbs_samples * math.exp(h.log_weight))))
            init = np.array([1] * n_prior + [0] * len(birth_rows), dtype=np.int64)
            rng = np.random.default_rng([cfg.seed, frame.frame, hi])
            states = np.vstack([init[None, :], gibbs_chain(bank, ids, init, M, sweeps - 1, rng)])
            states = unique_rows(states)
            n_sweeps += sweeps
        tcs = [costs[r] for r in hyp_rows[hi]]
        for s in states:
            child = _make_child(h, s, ids, bank, tcs, birth_costs, ctx)
            if child is None:
                continue
            k = child.key
            prev = children.get(k)
            if prev is None:
                children[k] = child
            else:
                children[k] = prev.with_log_weight(np.logaddexp(prev.log_weight, child.log_weight))
    if not children:
        raise DegenerateDensityError("no child hypothesis has positive weight", frame.frame)
    out = MultiObjectDensity(list(children.values()), frame.frame)
    try:
        out = truncate(out, cfg.cap, cfg.floor)
    except DegenerateDensityError as exc:
        raise DegenerateDensityError("all child weights vanished", frame.frame) from exc
    assoc_any = np.zeros(M + 1)
    assoc_track = np.zeros(M + 1)
    for h in out.hypotheses:
        w = h.weight
        for lab, j in zip(h.labels, h.assoc):
            if j > 0:
                assoc_any[j] += w
                if not (isinstance(lab, Birth) and lab.time == frame.frame):
                    assoc_track[j] += w
    info = StepInfo(np.minimum(assoc_any[1:], 1.0), np.minimum(assoc_track[1:], 1.0), len(children), n_sweeps)
    return out, info


def _make_child(h: Hypothesis, s: np.ndarray, ids: np.ndarray, bank: RowBank, tcs: list,
                birth_costs: list, ctx: FrameContext) -> Optional[Hypothesis]:
    variant = ctx.cfg.variant
    idx = bank.ptr[ids] + s
    logw = h.log_weight + float(bank.logw[idx].sum())
    if not np.isfinite(logw):
        return None
    cand = bank.cand[idx]
    labels, dens, assoc, blocks = [], [], [], []
    n_prior = len(h.labels)
    in_block = {}
    if variant == "ef":
        for bi, b in enumerate(h.blocks):
            for lab in b.labels:
                in_block[lab] = bi
    block_events: dict = {}
    for i in range(n_prior):
        j1, j2, j3 = (int(x) for x in cand[i])
        lab, tc = h.labels[i], tcs[i]
        if lab in in_block:
            if j1 >= 0:
                ev = (DIVIDE, j1, j2)
            elif j3 >= 0:
                ev = (SURVIVE, j3, -1)
            else:
                ev = (DIE, -1, -1)
            block_events.setdefault(in_block[lab], {})[lab] = (ev, tc)
            continue
        if j1 >= 0:
            d1, d2 = daughters(lab, ctx.frame.frame)
            if variant == "ef":
                single = JointGaussianMixture((lab,), tc.hd.kinematics, key=tc.key)
                nl, nd, nm, joint, corr = _block_child(single, [(DIVIDE, j1, j2)], ctx, [tc])
                labels += nl
                dens += nd
                assoc += nm
                blocks.append(joint)
                logw += corr
                continue
            if variant == "pa" or (j1 == 0 and j2 == 0):
                p1, p2 = tc.posterior(1, j1), tc.posterior(2, j2)
            else:
                p1, p2 = tc.joint_daughters(j1, j2)
            if variant == "ua" and j1 > 0 and j2 > 0:
                ll, _ = tc.joint_posterior(j1, j2)
                logw += ll - tc.kin_loglik(1, j1) - tc.kin_loglik(2, j2)
            labels += [d1, d2]
            dens += [p1, p2]
            assoc += [j1, j2]
        elif j3 >= 0:
            labels.append(lab)
            dens.append(tc.posterior(0, j3))
            assoc.append(j3)
    for bi, evmap in block_events.items():
        b = h.blocks[bi]
        events = [evmap[lab][0] for lab in b.labels]
        nl, nd, nm, joint, corr = _block_child(b, events, ctx, [evmap[lab][1] for lab in b.labels])
        labels += nl
        dens += nd
        assoc += nm
        if joint is not None:
            blocks.append(joint)
        logw += corr
    for bc, (j1, j2, j3) in zip(birth_costs, cand[n_prior:]):
        if j3 >= 0:
            labels.append(bc.label)
            dens.append(bc.posterior(int(j3)))
            assoc.append(int(j3))
    if not np.isfinite(logw):
        return None
    order = sorted(range(len(labels)), key=lambda k: labels[k])
    blocks.sort(key=lambda b: b.labels[0])
    return Hypothesis(logw, [labels[k] for k in order], [dens[k] for k in order], [assoc[k] for k in order],
                      tuple(blocks))


def pa_step(d, frame, models, cfg, births=None, kappa=None) -> MultiObjectDensity:
    return _step(d, frame, models, replace(cfg, variant="pa"), births, kappa)[0]


def ua_step(d, frame, models, cfg, births=None, kappa=None) -> MultiObjectDensity:
    return _step(d, frame, models, replace(cfg, variant="ua"), births, kappa)[0]


def ef_step(d, frame, models, cfg, births=None, kappa=None) -> MultiObjectDensity:
    return _step(d, frame, models, replace(cfg, variant="ef"), births, kappa)[0]


@dataclass
class FrameSummary:
    frame: int
    estimate: Estimate
    cardinality_pmf: np.ndarray
    division_pmf: np.ndarray
    spawning_pmf: np.ndarray
    clutter_estimate: float
    mean_detection: float
    n_hypotheses: int
    seconds: float

    @property
    def cardinality_mean(self) -> float:
        return float(np.arange(len(self.cardinality_pmf)) @ self.cardinality_pmf)

    @property
    def cardinality_std(self) -> float:
        n = np.arange(len(self.cardinality_pmf))
        mu = self.cardinality_mean
        return float(math.sqrt(max(((n - mu) ** 2) @ self.cardinality_pmf, 0.0)))


@dataclass
class FilterState:
    density: MultiObjectDensity
    clutter: ClutterBank = field(default_factory=ClutterBank)
    prev_frame: Optional[DetectionFrame] = None
    assoc_probs: Optional[np.ndarray] = None


def filter_step(state: FilterState, frame: DetectionFrame, models: Models, cfg: FilterConfig) -> tuple:
    """One recursion including births and the clutter bank."""
    sensor = models.sensor
    if models.static_birth is not None:
        births = static_births(models, frame.frame)
    else:
        births = adaptive_birth(state.prev_frame, sensor.bounds, models.birth, state.assoc_probs,
                                next_time=frame.frame, state_dim=models.state_dim)
    clutter_pred = state.clutter
    kappa = None
    if cfg.unknown_clutter:
        params = sensor.clutter_objects
        clutter_pred = state.clutter.predict(params)
        kappa = sensor.kappa(max(clutter_pred.expected_detections(params), 1e-6))
    density, info = _step(state.density, frame, models, cfg, births, kappa)
    clutter = clutter_pred
    if cfg.unknown_clutter:
        clutter = clutter_pred.update(sensor.clutter_objects, 1.0 - info.assoc_track)
    return FilterState(density, clutter, frame, info.assoc_any), info


def run_sequence(frames: Sequence[DetectionFrame], models: Models, cfg: FilterConfig,
                 initial: Optional[MultiObjectDensity] = None) -> list:
    """Run the chosen variant over ``frames``; one summary per frame."""
    frames = list(frames)
    if not frames:
        return []
    if any(b.frame <= a.frame for a, b in zip(frames, frames[1:])):
        raise ValueError("frames must be strictly time ordered")
    density = initial if initial is not None else MultiObjectDensity.empty(frames[0].frame - 1)
    state = FilterState(density)
    out = []
    for frame in frames:
        t0 = time.perf_counter()
        state, info = filter_step(state, frame, models, cfg)
        d = state.density
        est = extract_estimate(d)
        sp, dv = spawning_and_division_counts(d)
        if cfg.unknown_clutter:
            clutter_est = state.clutter.expected_detections(models.sensor.clutter_objects)
        else:
            clutter_est = models.sensor.clutter_rate
        pds = [s.detection for s in est.states.values()]
        dt = time.perf_counter() - t0
        out.append(FrameSummary(frame.frame, est, cardinality_distribution(d), dv, sp, clutter_est,
                                float(np.mean(pds)) if pds else float("nan"), len(d), dt))
        log.info("frame %d: %d hypotheses, %d children, E|X|=%.2f, %.3fs", frame.frame, len(d), info.n_children,
                 out[-1].cardinality_mean, dt)
    return out
