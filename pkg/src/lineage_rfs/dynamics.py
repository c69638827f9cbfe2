"""Transition model: death / survival / division, modes and LMB births."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .densities import (
    BetaDensity,
    CategoricalMode,
    GaussianMixture,
    HybridDensity,
    JointGaussianMixture,
    ReductionConfig,
    _clean_covs,
    beta_detection_predict,
    reduce_mixture,
)
from .labels import Birth, Label

DIE, SURVIVE, DIVIDE = 0, 1, 2


@dataclass(frozen=True, eq=False)
class MotionModel:
    """Mixture of linear-Gaussian motions: ``components = ((w, F, Q), ...)``."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), np.asarray(F, float), np.asarray(Q, float)) for w, F, Q in self.components)
        if abs(sum(c[0] for c in comps) - 1.0) > 1e-9:
            raise ValueError("motion mixture weights must sum to 1")
        object.__setattr__(self, "components", comps)

    @classmethod
    def cell(cls, w1: float = 1.0, w2: float = 0.0, sigma_v: float = 1.0, sigma_s: float = 9.0) -> "MotionModel":
        I2, Z2 = np.eye(2), np.zeros((2, 2))
        F1 = np.block([[I2, I2], [Z2, I2]])
        Q1 = sigma_v**2 * np.block([[0.25 * I2, 0.5 * I2], [0.5 * I2, I2]])
        F2 = np.block([[I2, Z2], [Z2, Z2]])
        Q2 = sigma_s * F2
        return cls(((w1, F1, Q1), (w2, F2, Q2)))

    @property
    def dim(self) -> int:
        return self.components[0][1].shape[0]


@dataclass(frozen=True, eq=False)
class MitosisModel:
    """Post-division kinematics of the two daughters.

    Each daughter state is ``F x + offset_q + noise(Q)`` where ``x`` is the
    parent state; the stacked offsets ``(offset_1, offset_2)`` are given per
    mixture component, all components equally weighted.  With
    ``bearing_from_velocity`` the base angle follows the parent's mean
    heading instead of ``theta_hat``.
    """

    F: np.ndarray
    Q: np.ndarray
    offsets: tuple = ()
    n_components: int = 1
    theta_hat: float = 0.0
    epsilon: float = 0.0
    distance: float = 10.0
    bearing_from_velocity: bool = False

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, float))
        object.__setattr__(self, "Q", np.asarray(self.Q, float))
        object.__setattr__(self, "offsets", tuple(np.asarray(o, float) for o in self.offsets))
        if self.n_components < 1:
            raise ValueError("mitosis model needs at least one component")
        if self.distance <= 0:
            raise ValueError("daughter offset distance must be positive")

    @classmethod
    def cell(cls, n_components=1, theta_hat=0.0, epsilon=90.0, distance=10.0, sigma_s=9.0,
             bearing_from_velocity=False) -> "MitosisModel":
        I2, Z2 = np.eye(2), np.zeros((2, 2))
        F2 = np.block([[I2, Z2], [Z2, Z2]])
        return cls(F=F2, Q=sigma_s * F2, n_components=n_components, theta_hat=theta_hat,
                   epsilon=epsilon, distance=distance, bearing_from_velocity=bearing_from_velocity)

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def stacked_offsets(self, parent_mean: np.ndarray) -> list:
        if self.offsets:
            return list(self.offsets)
        base = self.theta_hat
        if self.bearing_from_velocity and np.hypot(parent_mean[2], parent_mean[3]) > 1e-9:
            base = math.degrees(math.atan2(parent_mean[3], parent_mean[2]))
        out = []
        for n in range(1, self.n_components + 1):
            ang = math.radians(base + self.epsilon * n)
            d0 = np.zeros(self.dim)
            d0[0], d0[1] = self.distance * math.cos(ang), self.distance * math.sin(ang)
            out.append(np.concatenate([d0, -d0]))
        return out


@dataclass(frozen=True)
class ModeModel:
    """Generation-count law per mode and daughter/survivor mode laws.

    ``rho[m-1, c]`` is the probability that a cell in mode ``m`` generates
    ``c`` objects; ``vartheta[c][m-1, m+ - 1]`` the mode law of generated cells.
    """

    p_sp: float = 0.03
    rho: tuple = ((0.01, 0.98, 0.01), (0.01, 0.09, 0.9))
    persistence: Optional[float] = None

    def __post_init__(self):
        rho = np.asarray(self.rho, float)
        if rho.shape != (2, 3) or np.any(rho < 0) or np.any(np.abs(rho.sum(axis=1) - 1) > 1e-9):
            raise ValueError("rho must be a 2x3 row-stochastic table")
        if not 0 <= self.p_sp <= 1:
            raise ValueError("p_sp outside [0, 1]")

    @property
    def rho_table(self) -> np.ndarray:
        return np.asarray(self.rho, float)

    def vartheta(self, c: int) -> np.ndarray:
        memoryless = np.array([[1 - self.p_sp, self.p_sp], [1 - self.p_sp, self.p_sp]])
        if self.persistence is None or c != 1:
            return memoryless
        # optional persistence of the mode for survivors
        keep = self.persistence
        return keep * np.eye(2) + (1 - keep) * memoryless


def generation_cardinality(mode: CategoricalMode, mm: ModeModel) -> np.ndarray:
    return mode.as_array() @ mm.rho_table


def generated_mode(mode: CategoricalMode, mm: ModeModel, c: int) -> CategoricalMode:
    """Mode law of a generated object given the parent generated ``c`` objects."""
    w = mode.as_array() * mm.rho_table[:, c]
    if w.sum() <= 0:
        w = mode.as_array()
    return CategoricalMode.from_array((w / w.sum()) @ mm.vartheta(c))


def _event_maps(event: int, mean: np.ndarray, motion: MotionModel, mitosis: MitosisModel) -> list:
    """Per-label list of (weight, A, b, Q) mapping the label's state."""
    if event == SURVIVE:
        return [(w, F, None, Q) for w, F, Q in motion.components if w > 0]
    if event == DIVIDE:
        A = np.vstack([mitosis.F, mitosis.F])
        Q = np.kron(np.eye(2), mitosis.Q)
        offs = mitosis.stacked_offsets(mean)
        return [(1.0 / len(offs), A, b, Q) for b in offs]
    raise ValueError(f"event {event} produces no state")


def predict_stacked(gm: GaussianMixture, state_dim: int, events: Sequence[int], motion: MotionModel,
                    mitosis: MitosisModel, reduction: ReductionConfig = ReductionConfig()) -> GaussianMixture:
    """Jointly predict a stacked state of several labels.

    ``events[i]`` is DIE, SURVIVE or DIVIDE for the i-th label block.  Dying
    labels are integrated out; dividing labels contribute two stacked
    daughter blocks fed by the same parent state, which keeps siblings
    correlated.
    """
    live = [i for i, e in enumerate(events) if e != DIE]
    if not live:
        raise ValueError("no surviving label to predict")
    ws, ms, cs = [], [], []
    for w0, mu, P in zip(gm.weights, gm.means, gm.covs):
        per_label = []
        for i in live:
            sub = mu[i * state_dim:(i + 1) * state_dim]
            per_label.append(_event_maps(events[i], sub, motion, mitosis))
        for combo in itertools.product(*per_label):
            out_dim = sum(A.shape[0] for _, A, _, _ in combo)
            A_full = np.zeros((out_dim, gm.dim))
            b_full = np.zeros(out_dim)
            Q_full = np.zeros((out_dim, out_dim))
            w = w0
            r = 0
            for i, (wk, A, b, Q) in zip(live, combo):
                n = A.shape[0]
                A_full[r:r + n, i * state_dim:(i + 1) * state_dim] = A
                if b is not None:
                    b_full[r:r + n] = b
                Q_full[r:r + n, r:r + n] = Q
                w *= wk
                r += n
            ws.append(w)
            ms.append(A_full @ mu + b_full)
            cs.append(A_full @ P @ A_full.T + Q_full)
    out = GaussianMixture(np.array(ws), np.array(ms), _clean_covs(np.array(cs)))
    return reduce_mixture(out, reduction)


def survival_predict(d: HybridDensity, motion: MotionModel, mm: ModeModel, k_beta: float = 1.1,
                     reduction: ReductionConfig = ReductionConfig()) -> HybridDensity:
    kin = predict_stacked(d.kinematics, d.kinematics.dim, [SURVIVE], motion, None, reduction)
    return HybridDensity(kin, generated_mode(d.mode, mm, 1), beta_detection_predict(d.detection, k_beta))


def spawn_predict_joint(d: HybridDensity, mit: MitosisModel, mm: ModeModel, labels: tuple = ("d1", "d2"),
                        k_beta: float = 1.1, reduction: ReductionConfig = ReductionConfig()) -> tuple:
    """Joint daughter kinematics, the (shared) daughter mode law and Beta."""
    kin = predict_stacked(d.kinematics, d.kinematics.dim, [DIVIDE], None, mit, reduction)
    joint = JointGaussianMixture(tuple(labels), kin)
    return joint, generated_mode(d.mode, mm, 2), beta_detection_predict(d.detection, k_beta)


@dataclass(frozen=True, eq=False)
class BirthEntry:
    label: Label
    r: float
    density: HybridDensity

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"birth probability {self.r} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class BirthModel:
    entries: tuple = ()
    adaptive: bool = False

    @property
    def labels(self) -> list:
        return [e.label for e in self.entries]


def lmb_birth_weight(bm: BirthModel, born) -> float:
    born = set(born)
    space = {e.label for e in bm.entries}
    if not born <= space:
        return 0.0
    logw = 0.0
    for e in bm.entries:
        p = e.r if e.label in born else 1.0 - e.r
        if p <= 0:
            return 0.0
        logw += math.log(p)
    return math.exp(logw)


@dataclass(frozen=True)
class BirthParams:
    r_base: float = 0.001
    edge_boost: float = 3.0
    inner_boost: float = 1.0
    edge_width: float = 50.0
    position_std: float = 5.0
    velocity_std: float = 3.0
    mode: tuple = (0.97, 0.03)
    detection: tuple = (9.0, 1.0)
    known_pd: Optional[float] = None
    assoc_threshold: float = 0.5


def edge_boost(position, bounds, params: BirthParams) -> float:
    """Piecewise-linear multiplier: ``edge_boost`` at the border falling to
    ``inner_boost`` at ``edge_width`` pixels inside the image."""
    (x0, x1), (y0, y1) = bounds
    x, y = float(position[0]), float(position[1])
    dmin = max(0.0, min(x - x0, x1 - x, y - y0, y1 - y))
    frac = min(dmin / params.edge_width, 1.0) if params.edge_width > 0 else 1.0
    return params.edge_boost + (params.inner_boost - params.edge_boost) * frac


def birth_density(position, params: BirthParams, state_dim: int = 4) -> HybridDensity:
    mean = np.zeros(state_dim)
    mean[: len(position)] = position
    var = np.full(state_dim, params.velocity_std**2)
    var[: len(position)] = params.position_std**2
    det = BetaDensity.point(params.known_pd) if params.known_pd is not None else BetaDensity(*params.detection)
    return HybridDensity(GaussianMixture.single(mean, np.diag(var)), CategoricalMode(*params.mode), det)


def adaptive_birth(prev_frame, image_bounds, params: BirthParams, assoc_probs=None,
                   next_time: Optional[int] = None, state_dim: int = 4) -> BirthModel:
    """One LMB entry per weakly-associated detection of the previous frame.

    The birth label index is the detection's index in that frame.
    """
    if prev_frame is None or len(prev_frame) == 0:
        return BirthModel((), adaptive=True)
    time = prev_frame.frame + 1 if next_time is None else next_time
    entries = []
    for j, det in enumerate(prev_frame.detections):
        if assoc_probs is not None and assoc_probs[j] >= params.assoc_threshold:
            continue
        r = min(1.0, params.r_base * edge_boost(det.position, image_bounds, params))
        dens = birth_density(det.position, params, state_dim)
        dens = HybridDensity(dens.kinematics, dens.mode, dens.detection, key=hash((-1, time, j)))
        entries.append(BirthEntry(Birth(time, j), r, dens))
    return BirthModel(tuple(entries), adaptive=True)
