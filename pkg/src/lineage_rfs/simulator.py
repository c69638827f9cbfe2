"""Ground truth and detection generation for simulated cell sequences."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .labels import Birth, daughters
from .measurement import Detection, DetectionFrame
from .metrics import TrackSet


@dataclass(frozen=True)
class ScenarioConfig:
    initial_cells: int = 20
    frames: int = 100
    image_size: tuple = (1000.0, 1000.0)
    birth_rate: float = 0.1
    death_prob: float = 0.01
    mitosis_prob: float = 0.05
    w_dm: float = 0.3
    w_fd: float = 0.7
    fd_sigma: float = 10.0
    accel_sigma: float = 1.0
    initial_speed: float = 2.0
    margin: float = 100.0
    mitosis_components: int = 9
    theta_hat: float = 0.0
    epsilon: float = 20.0
    daughter_distance: float = 10.0
    daughter_sigma: float = 3.0
    bearing_from_velocity: bool = False
    detection_prob: float = 0.9
    clutter_rate: float = 30.0
    sigma_eps: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("birth_rate", "clutter_rate", "fd_sigma", "accel_sigma", "sigma_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("death_prob", "mitosis_prob", "w_dm", "w_fd", "detection_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if abs(self.w_dm + self.w_fd - 1.0) > 1e-9:
            raise ValueError("motion weights must sum to 1")
        if self.frames < 0 or self.initial_cells < 0 or min(self.image_size) <= 0:
            raise ValueError("sizes must be positive")


# appearance Beta parameters (a, b) for (α₁, α₂)
APPEARANCE = {
    1: ((0.9, 0.1), (0.2, 0.1)),
    2: ((0.2, 0.1), (0.9, 0.1)),
    0: ((0.4, 0.1), (0.1, 0.1)),
}


def _inside(pos, size) -> bool:
    return 0.0 <= pos[0] <= size[0] and 0.0 <= pos[1] <= size[1]


def _new_cell(rng, cfg) -> np.ndarray:
    lo, hi = cfg.margin, np.array(cfg.image_size) - cfg.margin
    pos = rng.uniform(lo, hi)
    vel = rng.normal(0.0, cfg.initial_speed, 2)
    return np.concatenate([pos, vel])


def _move(x, rng, cfg) -> np.ndarray:
    if rng.random() < cfg.w_dm:
        a = rng.normal(0.0, cfg.accel_sigma, 2)
        pos = x[:2] + x[2:] + 0.5 * a
        return np.concatenate([pos, x[2:] + a])
    return np.concatenate([x[:2] + rng.normal(0.0, cfg.fd_sigma, 2), np.zeros(2)])


def _divide(x, rng, cfg) -> tuple:
    base = cfg.theta_hat
    if cfg.bearing_from_velocity and np.hypot(x[2], x[3]) > 1e-9:
        base = math.degrees(math.atan2(x[3], x[2]))
    n = rng.integers(1, cfg.mitosis_components + 1)
    ang = math.radians(base + cfg.epsilon * n)
    d0 = cfg.daughter_distance * np.array([math.cos(ang), math.sin(ang)])
    out = []
    for sign in (1.0, -1.0):
        pos = x[:2] + sign * d0 + rng.normal(0.0, cfg.daughter_sigma, 2)
        out.append(np.concatenate([pos, np.zeros(2)]))
    return out


def generate_truth(cfg: ScenarioConfig) -> TrackSet:
    """Simulate lineage-labelled ground truth.

    A cell that enters the mitotic mode divides at the next frame; cells
    leaving the image are removed.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    tracks: dict = {}
    modes: dict = {}
    live: dict = {}
    mitotic: set = set()

    def add(lab, k, x, mode):
        tracks.setdefault(lab, {})[k] = x[:2].copy()
        modes.setdefault(lab, {})[k] = mode
        live[lab] = x

    if cfg.frames == 0:
        return TrackSet({}, modes={})
    for i in range(cfg.initial_cells):
        add(Birth(1, i), 1, _new_cell(rng, cfg), 1)
    for k in range(2, cfg.frames + 1):
        prev = dict(live)
        live.clear()
        next_mitotic = set()
        for lab in sorted(prev):
            x = prev[lab]
            if lab in mitotic:
                for dlab, dx in zip(daughters(lab, k), _divide(x, rng, cfg)):
                    if _inside(dx, cfg.image_size):
                        add(dlab, k, dx, 1)
                continue
            if rng.random() < cfg.death_prob:
                continue
            nx = _move(x, rng, cfg)
            if not _inside(nx, cfg.image_size):
                continue
            mode = 2 if rng.random() < cfg.mitosis_prob else 1
            add(lab, k, nx, mode)
            if mode == 2:
                next_mitotic.add(lab)
        for i in range(rng.poisson(cfg.birth_rate)):
            add(Birth(k, i), k, _new_cell(rng, cfg), 1)
        mitotic = next_mitotic
    return TrackSet(tracks, modes=modes)


def generate_detections(truth: TrackSet, cfg: ScenarioConfig) -> list:
    rng = np.random.default_rng([cfg.seed, 1])
    area_hi = np.array(cfg.image_size, float)
    frames = []
    for k in range(1, cfg.frames + 1):
        dets = []
        for lab in sorted(truth.tracks):
            pts = truth.tracks[lab]
            if k not in pts or rng.random() >= cfg.detection_prob:
                continue
            mode = truth.modes.get(lab, {}).get(k, 1)
            (a1, b1), (a2, b2) = APPEARANCE[mode]
            feat = [rng.beta(a1, b1), rng.beta(a2, b2)]
            dets.append(Detection(pts[k] + rng.normal(0.0, cfg.sigma_eps, 2), feat))
        for _ in range(rng.poisson(cfg.clutter_rate)):
            (a1, b1), (a2, b2) = APPEARANCE[0]
            dets.append(Detection(rng.uniform(0.0, area_hi), [rng.beta(a1, b1), rng.beta(a2, b2)]))
        order = rng.permutation(len(dets))
        frames.append(DetectionFrame(k, [dets[i] for i in order]))
    return frames


def max_simultaneous(truth: TrackSet) -> int:
    return max((truth.count(k) for k in truth.frames), default=0)


def n_divisions(truth: TrackSet) -> int:
    return len({lab.parent for lab in truth.tracks if hasattr(lab, "parent")})


def small_scenario_config(max_cells: int = 12, seed: int = 0) -> ScenarioConfig:
    """Constant-velocity cells in the spirit of the simulated-detection
    experiment, sized so at most ``max_cells`` coexist."""
    return ScenarioConfig(
        initial_cells=max(2, max_cells // 3), frames=100, birth_rate=0.02, death_prob=0.002,
        mitosis_prob=0.015, w_dm=1.0, w_fd=0.0, accel_sigma=0.3, initial_speed=1.5, margin=150.0,
        mitosis_components=1, epsilon=90.0, bearing_from_velocity=True, seed=seed,
    )


def fixed_scenario(max_cells: int, seed: int = 0, min_divisions: int = 3, **overrides) -> tuple:
    """Deterministic scenario with at most ``max_cells`` simultaneous cells
    and at least ``min_divisions`` divisions; seeds are retried in order."""
    for attempt in range(10_000):
        cfg = replace(small_scenario_config(max_cells, seed * 10_000 + attempt), **overrides)
        truth = generate_truth(cfg)
        if max_simultaneous(truth) <= max_cells and n_divisions(truth) >= min_divisions:
            return truth, generate_detections(truth, cfg), cfg
    raise RuntimeError("no scenario satisfies the constraints")


def fixed_scenario_12cells(seed: int = 0) -> tuple:
    return fixed_scenario(12, seed, 3)


def fixed_scenario_6cells(seed: int = 0) -> tuple:
    return fixed_scenario(6, seed, 2)
