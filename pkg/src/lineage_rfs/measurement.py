"""Observation model: detections, ψ factors, appearance and clutter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .densities import (
    BetaDensity,
    CategoricalMode,
    GaussianMixture,
    HybridDensity,
    beta_update_detected,
    beta_update_missed,
    gm_log_likelihoods,
    gm_update_log,
)

TINY = 1e-300


@dataclass(frozen=True, eq=False)
class Detection:
    position: np.ndarray
    features: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(-1)
        feat = np.asarray(self.features, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(feat))):
            raise ValueError("detection has non-finite entries")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "features", feat)


@dataclass(frozen=True, eq=False)
class DetectionFrame:
    frame: int
    detections: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def __len__(self):
        return len(self.detections)

    @property
    def positions(self) -> np.ndarray:
        if not self.detections:
            return np.zeros((0, 2))
        return np.array([d.position for d in self.detections])

    @property
    def features(self) -> np.ndarray:
        if not self.detections:
            return np.zeros((0, 0))
        return np.array([d.features for d in self.detections])


# appearance likelihoods: vectorized maps from features (M, f) to (M, 2)

def beta_features(features: np.ndarray) -> np.ndarray:
    """g(α|1) = α₁, g(α|2) = α₂."""
    return np.maximum(np.asarray(features, float)[:, :2], TINY)


@dataclass(frozen=True)
class IntensityThreshold:
    """Two logistic curves on the first feature: the normal-mode likelihood
    falls and the mitotic-mode likelihood rises with intensity."""

    midpoint_normal: float = 0.6
    midpoint_mitotic: float = 0.6
    slope: float = 0.1

    def __call__(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, float)[:, 0]
        g1 = 1.0 / (1.0 + np.exp((x - self.midpoint_normal) / self.slope))
        g2 = 1.0 / (1.0 + np.exp(-(x - self.midpoint_mitotic) / self.slope))
        return np.maximum(np.column_stack([g1, g2]), TINY)


@dataclass(frozen=True, eq=False)
class TableAppearance:
    """Piecewise-constant likelihood over bins of the first feature."""

    edges: np.ndarray
    values: np.ndarray

    @classmethod
    def from_file(cls, path) -> "TableAppearance":
        # columns: lower bin edge, g(.|1), g(.|2); the last row closes the range
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(edges=data[:, 0], values=data[:-1, 1:3])

    def __call__(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, float)[:, 0]
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, len(self.values) - 1)
        return np.maximum(self.values[idx], TINY)


def uniform_appearance(features: np.ndarray) -> np.ndarray:
    return np.ones((len(features), 2))


@dataclass(frozen=True, eq=False)
class ClutterParams:
    birth: float = 0.5
    survival: float = 0.9
    detection: float = 0.9


@dataclass(frozen=True, eq=False)
class SensorModel:
    H: np.ndarray
    R: np.ndarray
    appearance: Callable = beta_features
    clutter_rate: float = 30.0
    bounds: tuple = ((0.0, 1000.0), (0.0, 1000.0))
    clutter_objects: Optional[ClutterParams] = None
    gate: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "H", np.asarray(self.H, float))
        object.__setattr__(self, "R", np.asarray(self.R, float))
        if np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() < 0:
            raise ValueError("observation covariance is not PSD")
        if self.clutter_rate < 0:
            raise ValueError("negative clutter rate")

    @classmethod
    def cell(cls, sigma_eps: float = 2.0, **kw) -> "SensorModel":
        H = np.hstack([np.eye(2), np.zeros((2, 2))])
        return cls(H=H, R=sigma_eps**2 * np.eye(2), **kw)

    @property
    def area(self) -> float:
        (x0, x1), (y0, y1) = self.bounds
        return (x1 - x0) * (y1 - y0)

    def kappa(self, rate: Optional[float] = None) -> float:
        """Uniform clutter intensity for ``rate`` expected false alarms."""
        return (self.clutter_rate if rate is None else rate) / self.area


def single_likelihood(det: Detection, kin: GaussianMixture, mode: CategoricalMode, sm: SensorModel) -> tuple:
    loglik, kin_post = gm_update_log(kin, sm.H, sm.R, det.position)
    g = sm.appearance(det.features.reshape(1, -1))[0]
    joint = mode.as_array() * g
    app = joint.sum()
    return math.exp(loglik) * app, kin_post, CategoricalMode.from_array(joint / app)


def psi(j: int, det: Optional[Detection], hd: HybridDensity, sm: SensorModel, kappa: Optional[float] = None) -> tuple:
    """The ψ factor of one object for measurement ``j`` (0 = missed)."""
    if (j == 0) != (det is None):
        raise ValueError("j = 0 exactly when no detection is supplied")
    if j == 0:
        factor, beta = beta_update_missed(hd.detection)
        return factor, HybridDensity(hd.kinematics, hd.mode, beta)
    kappa = sm.kappa() if kappa is None else kappa
    if not kappa > 0:
        raise ValueError("clutter intensity must be positive to normalise ψ")
    value, kin_post, mode_post = single_likelihood(det, hd.kinematics, hd.mode, sm)
    factor, beta = beta_update_detected(hd.detection)
    return factor * value / kappa, HybridDensity(kin_post, mode_post, beta)


def log_psi_vector(hd: HybridDensity, frame: DetectionFrame, sm: SensorModel, log_kappa: float,
                   appearance: Optional[np.ndarray] = None, dims: Optional[np.ndarray] = None) -> tuple:
    """log ψ for j = 0..M (gated entries are -inf) and the kinematic part.

    ``dims`` selects the coordinates of a stacked state the sensor sees;
    ``appearance`` is the (M, 2) table of g(α_j|m) for the frame.
    """
    M = len(frame)
    out = np.full(M + 1, -np.inf)
    pd = hd.detection.mean
    out[0] = math.log(1.0 - pd) if pd < 1.0 else -np.inf
    kin = np.full(M, -np.inf)
    if M == 0 or pd <= 0.0:
        return out, kin
    loglik, maha = gm_log_likelihoods(hd.kinematics, sm.H, sm.R, frame.positions)
    ok = maha < sm.gate**2
    if appearance is None:
        appearance = sm.appearance(frame.features)
    app = np.log(np.maximum(appearance @ hd.mode.as_array(), TINY))
    kin[ok] = loglik[ok]
    out[1:][ok] = math.log(pd) + loglik[ok] + app[ok] - log_kappa
    return out, kin


def detected_posterior(hd: HybridDensity, det: Detection, sm: SensorModel, key: int = 0) -> HybridDensity:
    _, kin_post = gm_update_log(hd.kinematics, sm.H, sm.R, det.position)
    g = sm.appearance(det.features.reshape(1, -1))[0]
    mode_post = CategoricalMode.from_array(hd.mode.as_array() * g)
    _, beta = beta_update_detected(hd.detection)
    return HybridDensity(kin_post, mode_post, beta, key=key)


def missed_posterior(hd: HybridDensity, key: int = 0) -> HybridDensity:
    _, beta = beta_update_missed(hd.detection)
    return HybridDensity(hd.kinematics, hd.mode, beta, key=key)


@dataclass(frozen=True, eq=False)
class ClutterBank:
    """Bernoulli clutter generators (existence probabilities only).

    Clutter generators have a uniform spatial law, never divide and carry a
    single mode, so only their existence probabilities need tracking.
    """

    r: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prune: float = 1e-3

    def __post_init__(self):
        r = np.asarray(self.r, float).reshape(-1)
        object.__setattr__(self, "r", r[r >= self.prune])

    def predict(self, params: ClutterParams) -> "ClutterBank":
        r = np.concatenate([self.r * params.survival, [params.birth] if params.birth > 0 else []])
        return ClutterBank(r, self.prune)

    def update(self, params: ClutterParams, clutter_probs: Sequence[float]) -> "ClutterBank":
        """Undetected generators are thinned by 1 - P_D; each measurement
        spawns a detected generator that exists with its clutter probability."""
        r = np.concatenate([self.r * (1.0 - params.detection), np.asarray(clutter_probs, float)])
        return ClutterBank(r, self.prune)

    def cardinality(self) -> float:
        return float(self.r.sum())

    def expected_detections(self, params: ClutterParams) -> float:
        return float(self.r.sum() * params.detection)


def clutter_object_step(bank: ClutterBank, params: ClutterParams, clutter_probs=None) -> ClutterBank:
    """Predict the bank and, when measurement clutter probabilities are
    given, update it."""
    pred = bank.predict(params)
    return pred if clutter_probs is None else pred.update(params, clutter_probs)
