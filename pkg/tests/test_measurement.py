import math

import numpy as np
import pytest
from scipy import stats

from lineage_rfs.densities import BetaDensity, CategoricalMode, GaussianMixture, HybridDensity
from lineage_rfs.measurement import (
    ClutterBank,
    ClutterParams,
    Detection,
    DetectionFrame,
    IntensityThreshold,
    SensorModel,
    TableAppearance,
    beta_features,
    clutter_object_step,
    detected_posterior,
    log_psi_vector,
    missed_posterior,
    psi,
    uniform_appearance,
)


@pytest.fixture
def track():
    kin = GaussianMixture.single([100.0, 200.0, 1.0, 0.0], np.diag([4.0, 4.0, 1.0, 1.0]))
    return HybridDensity(kin, CategoricalMode(0.7, 0.3), BetaDensity.point(0.9))


def test_psi_detected_matches_closed_form(track):
    sm = SensorModel.cell(2.0, clutter_rate=30.0)
    det = Detection([101.0, 198.5], [0.8, 0.3])
    value, post = psi(1, det, track, sm)
    g = stats.multivariate_normal([100, 200], np.diag([8.0, 8.0])).pdf([101.0, 198.5])
    app = 0.7 * 0.8 + 0.3 * 0.3
    assert value == pytest.approx(0.9 * g * app / (30.0 / 1e6), rel=1e-10)
    assert np.allclose(post.mode.as_array(), np.array([0.7 * 0.8, 0.3 * 0.3]) / app)


def test_psi_missed_and_unknown_detection(track):
    sm = SensorModel.cell()
    assert psi(0, None, track, sm)[0] == pytest.approx(0.1)
    t = HybridDensity(track.kinematics, track.mode, BetaDensity(6.0, 2.0))
    f, post = psi(0, None, t, sm)
    assert f == pytest.approx(0.25)
    assert (post.detection.s, post.detection.t) == (6.0, 3.0)


def test_psi_argument_errors(track):
    sm = SensorModel.cell()
    with pytest.raises(ValueError):
        psi(0, Detection([0, 0]), track, sm)
    with pytest.raises(ValueError):
        psi(1, Detection([0, 0], [0.5, 0.5]), track, sm, kappa=0.0)


def test_log_psi_vector_agrees_with_scalar_psi_and_gates(track):
    sm = SensorModel.cell(2.0)
    frame = DetectionFrame(1, [Detection([101, 200], [0.5, 0.5]), Detection([900, 900], [0.5, 0.5]),
                               Detection([97, 203], [0.9, 0.1])])
    lp, kin = log_psi_vector(track, frame, sm, math.log(sm.kappa()))
    assert lp[0] == pytest.approx(math.log(0.1))
    for j in (1, 3):
        assert lp[j] == pytest.approx(math.log(psi(j, frame.detections[j - 1], track, sm)[0]), rel=1e-10)
    assert lp[2] == -np.inf and kin[1] == -np.inf


def test_posteriors(track):
    sm = SensorModel.cell(2.0)
    det = Detection([102.0, 200.0], [0.2, 0.9])
    p = detected_posterior(track, det, sm, key=5)
    assert p.key == 5 and p.kinematics.mean()[0] > 100.0
    assert p.mode.p_mitotic > track.mode.p_mitotic
    assert missed_posterior(track).kinematics is track.kinematics


def test_appearance_models(tmp_path):
    feats = np.array([[0.2, 0.9], [0.95, 0.05]])
    assert np.allclose(beta_features(feats), feats)
    assert np.allclose(uniform_appearance(feats), 1.0)
    it = IntensityThreshold()
    g = it(np.array([[0.1], [0.9]]))
    assert g[0, 0] > g[0, 1] and g[1, 1] > g[1, 0]
    path = tmp_path / "table.csv"
    path.write_text("0.0,0.9,0.1\n0.5,0.2,0.8\n1.0,0,0\n")
    tab = TableAppearance.from_file(path)
    assert np.allclose(tab(np.array([[0.1], [0.7], [1.0]])), [[0.9, 0.1], [0.2, 0.8], [0.2, 0.8]])


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection([np.nan, 0.0])
    assert DetectionFrame(1).positions.shape == (0, 2)


def test_clutter_bank_recursion():
    p = ClutterParams(birth=0.5, survival=0.9, detection=0.9)
    bank = ClutterBank(np.array([0.4, 0.8]))
    pred = bank.predict(p)
    assert np.allclose(pred.r, [0.36, 0.72, 0.5])
    upd = pred.update(p, [1.0, 0.3])
    assert np.allclose(upd.r, [0.036, 0.072, 0.05, 1.0, 0.3])
    assert clutter_object_step(bank, p, [1.0, 0.3]).cardinality() == pytest.approx(upd.cardinality())


def test_clutter_bank_fixed_point_with_pure_clutter():
    # with M clutter-only returns per frame the bank converges to the fixed point
    # R = (1 - pd)(s R + b) + M of its total existence
    p = ClutterParams(0.5, 0.9, 0.9)
    bank = ClutterBank()
    for _ in range(200):
        bank = clutter_object_step(bank, p, np.ones(30))
    R = 30.05 / (1 - 0.1 * 0.9)
    assert bank.cardinality() == pytest.approx(R, rel=1e-3)
    assert bank.predict(p).expected_detections(p) == pytest.approx(0.9 * (0.9 * R + 0.5), rel=1e-3)
