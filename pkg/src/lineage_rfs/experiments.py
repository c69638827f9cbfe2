"""Monte Carlo harness for the simulated-detection experiments."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dynamics import BirthParams, MitosisModel, ModeModel, MotionModel
from .filters import FilterConfig, Models, run_sequence
from .measurement import ClutterParams, SensorModel
from .metrics import TrackSet, ospa2
from .simulator import ScenarioConfig


def scenario_models(sc: ScenarioConfig, known_pd: bool = True, **birth) -> Models:
    """Filter models matched to a simulated scenario."""
    sensor = SensorModel.cell(sc.sigma_eps, clutter_rate=sc.clutter_rate,
                              bounds=((0.0, sc.image_size[0]), (0.0, sc.image_size[1])),
                              clutter_objects=ClutterParams())
    cv = sc.w_fd == 0.0
    motion = MotionModel.cell(1.0, 0.0) if cv else MotionModel.cell(sc.w_dm, sc.w_fd, sigma_s=sc.fd_sigma**2)
    mitosis = MitosisModel.cell(sc.mitosis_components, sc.theta_hat, sc.epsilon, sc.daughter_distance,
                                sigma_s=sc.daughter_sigma**2, bearing_from_velocity=sc.bearing_from_velocity)
    params = BirthParams(known_pd=sc.detection_prob if known_pd else None, **birth)
    return Models(motion, mitosis, ModeModel(), sensor, params)


@dataclass
class TrialResult:
    variant: str
    seed: int
    seconds: float
    cardinality_mean: np.ndarray
    cardinality_error: np.ndarray
    ospa2: np.ndarray
    clutter: np.ndarray
    detection: np.ndarray


def run_trial(truth: TrackSet, frames: list, sc: ScenarioConfig, cfg: FilterConfig,
              models: Models = None, window: int = 20, c: float = 25.0) -> TrialResult:
    models = models or scenario_models(sc)
    t0 = time.perf_counter()
    out = run_sequence(frames, models, cfg)
    dt = time.perf_counter() - t0
    est = TrackSet.from_estimates([s.estimate for s in out])
    ks = [s.frame for s in out]
    true_n = np.array([truth.count(k) for k in ks])
    mean = np.array([s.cardinality_mean for s in out])
    return TrialResult(
        cfg.variant, cfg.seed, dt, mean, mean - true_n,
        ospa2(est, truth, window, 1.0, c, ks),
        np.array([s.clutter_estimate for s in out]),
        np.array([s.mean_detection for s in out]),
    )
