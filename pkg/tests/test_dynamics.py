import itertools

import numpy as np
import pytest

from lineage_rfs.densities import NO_REDUCTION, BetaDensity, CategoricalMode, GaussianMixture, HybridDensity
from lineage_rfs.dynamics import (
    DIE,
    DIVIDE,
    SURVIVE,
    BirthEntry,
    BirthModel,
    BirthParams,
    MitosisModel,
    ModeModel,
    MotionModel,
    adaptive_birth,
    edge_boost,
    generated_mode,
    generation_cardinality,
    lmb_birth_weight,
    predict_stacked,
    spawn_predict_joint,
    survival_predict,
)
from lineage_rfs.labels import Birth
from lineage_rfs.measurement import Detection, DetectionFrame


def test_cell_motion_matrices():
    m = MotionModel.cell(0.3, 0.7, sigma_v=1.0, sigma_s=9.0)
    (w1, F1, Q1), (w2, F2, Q2) = m.components
    assert (w1, w2) == (0.3, 0.7)
    assert np.allclose(F1 @ [1, 2, 3, 4], [4, 6, 3, 4])
    assert np.allclose(Q1[0, 2], 0.5) and np.allclose(Q1[0, 0], 0.25)
    assert np.allclose(F2 @ [1, 2, 3, 4], [1, 2, 0, 0])
    assert np.allclose(np.diag(Q2), [9, 9, 0, 0])
    with pytest.raises(ValueError):
        MotionModel(((0.5, F1, Q1),))


def test_mitosis_offsets_follow_the_angle_grid():
    mit = MitosisModel.cell(n_components=4, theta_hat=10.0, epsilon=20.0, distance=10.0)
    offs = mit.stacked_offsets(np.zeros(4))
    assert len(offs) == 4
    for n, o in enumerate(offs, start=1):
        ang = np.radians(10.0 + 20.0 * n)
        assert np.allclose(o[:2], 10 * np.array([np.cos(ang), np.sin(ang)]))
        assert np.allclose(o[4:6], -o[:2])
        assert np.allclose(o[2:4], 0) and np.allclose(o[6:], 0)
    heading = MitosisModel.cell(1, 0.0, 90.0, 10.0, bearing_from_velocity=True)
    o = heading.stacked_offsets(np.array([0, 0, 1.0, 0]))[0]
    assert np.allclose(o[:2], [0, 10], atol=1e-12)


def test_generation_cardinality_is_mode_weighted_rho():
    mm = ModeModel()
    mode = CategoricalMode(0.8, 0.2)
    expect = [0.8 * mm.rho[0][c] + 0.2 * mm.rho[1][c] for c in range(3)]
    assert np.allclose(generation_cardinality(mode, mm), expect)
    assert generation_cardinality(mode, mm).sum() == pytest.approx(1.0)


@pytest.mark.parametrize("persistence", [None, 0.6])
def test_generated_mode_conditions_on_the_event(persistence):
    mm = ModeModel(p_sp=0.1, persistence=persistence)
    mode = CategoricalMode(0.3, 0.7)
    rho = np.asarray(mm.rho)
    for c in (1, 2):
        # brute force over parent and child modes
        joint = np.zeros(2)
        for m, mp in itertools.product(range(2), range(2)):
            joint[mp] += mode.as_array()[m] * rho[m, c] * mm.vartheta(c)[m, mp]
        assert np.allclose(generated_mode(mode, mm, c).as_array(), joint / joint.sum())


def test_mode_model_validation():
    with pytest.raises(ValueError):
        ModeModel(rho=((0.5, 0.5, 0.5), (0.1, 0.1, 0.8)))
    with pytest.raises(ValueError):
        ModeModel(p_sp=1.5)


def test_division_prediction_couples_daughters_like_sampling():
    rng = np.random.default_rng(0)
    mit = MitosisModel(F=np.eye(2), Q=0.5 * np.eye(2), offsets=([3.0, 0.0, -3.0, 0.0],), distance=3.0)
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    gm = GaussianMixture.single([1.0, -1.0], P)
    pred = predict_stacked(gm, 2, [DIVIDE], None, mit, NO_REDUCTION)
    n = 300_000
    x = rng.multivariate_normal([1.0, -1.0], P, n)
    d1 = x + [3.0, 0.0] + rng.normal(scale=np.sqrt(0.5), size=(n, 2))
    d2 = x - [3.0, 0.0] + rng.normal(scale=np.sqrt(0.5), size=(n, 2))
    y = np.hstack([d1, d2])
    assert np.allclose(pred.mean(), y.mean(axis=0), atol=0.02)
    assert np.allclose(pred.covariance(), np.cov(y.T), atol=0.05)
    # siblings share the parent's uncertainty
    assert np.allclose(pred.covariance()[:2, 2:], P)


def test_stacked_prediction_integrates_out_dead_labels():
    motion = MotionModel(((1.0, np.eye(1), 0.2 * np.eye(1)),))
    gm = GaussianMixture.single([1.0, 5.0], [[1.0, 0.4], [0.4, 2.0]])
    pred = predict_stacked(gm, 1, [DIE, SURVIVE], motion, None, NO_REDUCTION)
    assert pred.dim == 1
    assert pred.mean()[0] == pytest.approx(5.0)
    assert pred.covariance()[0, 0] == pytest.approx(2.2)
    with pytest.raises(ValueError):
        predict_stacked(gm, 1, [DIE, DIE], motion, None, NO_REDUCTION)


def test_survival_and_spawn_prediction_carry_modes_and_detection():
    hd = HybridDensity(GaussianMixture.single(np.zeros(4), np.eye(4)), CategoricalMode(0.9, 0.1), BetaDensity(9, 1))
    mm = ModeModel()
    s = survival_predict(hd, MotionModel.cell(), mm)
    assert s.detection.mean == pytest.approx(0.9)
    joint, dmode, dbeta = spawn_predict_joint(hd, MitosisModel.cell(), mm, ("x", "y"))
    assert joint.labels == ("x", "y") and joint.mixture.dim == 8
    assert np.allclose(dmode.as_array(), generated_mode(hd.mode, mm, 2).as_array())
    assert dbeta.mean == pytest.approx(0.9)


def test_lmb_birth_weight_is_bernoulli_product():
    hd = HybridDensity(GaussianMixture.single(np.zeros(4), np.eye(4)), CategoricalMode(1, 0), BetaDensity(1, 1))
    bm = BirthModel((BirthEntry(Birth(2, 0), 0.2, hd), BirthEntry(Birth(2, 1), 0.5, hd)))
    assert lmb_birth_weight(bm, []) == pytest.approx(0.8 * 0.5)
    assert lmb_birth_weight(bm, [Birth(2, 0)]) == pytest.approx(0.2 * 0.5)
    assert lmb_birth_weight(bm, [Birth(2, 0), Birth(2, 1)]) == pytest.approx(0.1)
    assert lmb_birth_weight(bm, [Birth(3, 0)]) == 0.0
    total = sum(lmb_birth_weight(bm, s) for s in ([], [Birth(2, 0)], [Birth(2, 1)], [Birth(2, 0), Birth(2, 1)]))
    assert total == pytest.approx(1.0)


def test_edge_boost_profile():
    p = BirthParams(edge_boost=3.0, inner_boost=1.0, edge_width=50.0)
    b = ((0, 1000), (0, 1000))
    assert edge_boost([0, 500], b, p) == pytest.approx(3.0)
    assert edge_boost([25, 500], b, p) == pytest.approx(2.0)
    assert edge_boost([500, 500], b, p) == pytest.approx(1.0)


def test_adaptive_birth_uses_unassociated_detections():
    frame = DetectionFrame(4, [Detection([10, 500]), Detection([500, 500]), Detection([600, 600])])
    p = BirthParams(r_base=0.01)
    bm = adaptive_birth(frame, ((0, 1000), (0, 1000)), p, assoc_probs=np.array([0.1, 0.2, 0.9]))
    assert [e.label for e in bm.entries] == [Birth(5, 0), Birth(5, 1)]
    assert bm.entries[0].r == pytest.approx(0.01 * edge_boost([10, 500], ((0, 1000), (0, 1000)), p))
    assert bm.entries[1].r == pytest.approx(0.01)
    assert np.allclose(bm.entries[1].density.kinematics.mean(), [500, 500, 0, 0])
    assert adaptive_birth(None, ((0, 1), (0, 1)), p).entries == ()
