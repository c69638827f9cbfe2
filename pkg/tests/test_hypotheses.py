import numpy as np
import pytest
from helpers import random_density, random_hybrid

from lineage_rfs.hypotheses import (
    DegenerateDensityError,
    Hypothesis,
    MultiObjectDensity,
    cardinality_distribution,
    existence_map,
    expected_cardinality,
    extract_estimate,
    intensity,
    intensity_at,
    label_existence,
    normalize,
    spawning_and_division_counts,
    statistics_record,
    truncate,
)
from lineage_rfs.labels import Birth, Spawned, daughters


def test_normalize_and_degenerate():
    rng = np.random.default_rng(0)
    d = random_density(rng)
    assert d.weights.sum() == pytest.approx(1.0)
    with pytest.raises(DegenerateDensityError):
        normalize(MultiObjectDensity([Hypothesis(-np.inf)], 3))


def test_truncate_keeps_heaviest_and_respects_cap_and_floor():
    rng = np.random.default_rng(1)
    d = random_density(rng, n_hyp=20)
    t = truncate(d, 5)
    assert len(t) == 5
    assert t.weights.sum() == pytest.approx(1.0)
    top = sorted(d.hypotheses, key=lambda h: -h.log_weight)[:5]
    assert {id(h.densities) for h in top} == {id(h.densities) for h in t.hypotheses}
    # a floor above every weight still keeps the heaviest hypothesis
    assert len(truncate(d, 5, floor=0.999)) == 1
    with pytest.raises(ValueError):
        truncate(d, 0)


def test_cardinality_and_existence_match_recounts():
    rng = np.random.default_rng(2)
    for _ in range(20):
        d = random_density(rng)
        pmf = cardinality_distribution(d)
        for n in range(len(pmf)):
            assert pmf[n] == pytest.approx(sum(h.weight for h in d.hypotheses if len(h.labels) == n))
        ex = existence_map(d)
        assert sum(ex.values()) == pytest.approx(expected_cardinality(d))
        for lab, r in ex.items():
            assert label_existence(d, lab) == pytest.approx(r)


def test_intensity_mass_is_expected_cardinality():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = random_density(rng)
        mass = sum(intensity(d, lab).total_weight for lab in d.label_space)
        assert mass == pytest.approx(expected_cardinality(d), abs=1e-9)
    assert len(intensity(d, Birth(99, 0))) == 0


def test_intensity_at_sums_labels():
    rng = np.random.default_rng(4)
    d = random_density(rng, dim=2, n_hyp=6)
    pts = rng.normal(scale=20, size=(7, 2))
    ref = np.zeros(7)
    for h in d.hypotheses:
        for hd in h.densities:
            gm = hd.kinematics
            ref += h.weight * gm.normalized().pdf(pts)
    assert np.allclose(intensity_at(d, pts), ref)


def test_spawning_and_division_counts_against_recount():
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = random_density(rng, frame=5)
        sp, dv = spawning_and_division_counts(d)
        rs, rd = np.zeros(len(sp)), np.zeros(len(dv))
        for h in d.hypotheses:
            new = [lab for lab in h.labels if isinstance(lab, Spawned) and lab.time == 5]
            rs[len(new)] += h.weight
            rd[len({lab.parent for lab in new})] += h.weight
        assert np.allclose(sp, rs) and np.allclose(dv, rd)


def test_division_counts_with_explicit_label_spaces():
    p = Birth(1, 0)
    d1, d2 = daughters(p, 4)
    h = Hypothesis(0.0, [d1, d2, Birth(4, 0)], [random_hybrid(np.random.default_rng(0)) for _ in range(3)])
    d = MultiObjectDensity([h], 4)
    sp, dv = spawning_and_division_counts(d, prev_label_space={p}, birth_space={Birth(4, 0)})
    assert sp[2] == pytest.approx(1.0) and dv[1] == pytest.approx(1.0)


def test_estimate_takes_map_cardinality_then_heaviest():
    rng = np.random.default_rng(6)
    a, b, c = Birth(1, 0), Birth(1, 1), Birth(1, 2)
    dens = {lab: random_hybrid(rng) for lab in (a, b, c)}
    hyps = [Hypothesis(np.log(0.3), [a], [dens[a]]),
            Hypothesis(np.log(0.25), [a, b], [dens[a], dens[b]]),
            Hypothesis(np.log(0.25), [b, c], [dens[b], dens[c]]),
            Hypothesis(np.log(0.2), [], [])]
    est = extract_estimate(MultiObjectDensity(hyps, 2))
    assert est.labels == (a, b)  # n = 2 has mass 0.5; tie broken lexicographically
    assert np.allclose(est.states[a].mean, dens[a].kinematics.mean())


def test_estimate_of_empty_density():
    est = extract_estimate(MultiObjectDensity.empty(3))
    assert est.labels == () and est.frame == 3


def test_statistics_record_fields():
    rng = np.random.default_rng(7)
    d = random_density(rng)
    rec = statistics_record(d)
    assert rec["frame"] == d.frame
    assert sum(rec["cardinality_pmf"]) == pytest.approx(1.0, abs=1e-6)
    assert sum(rec["division_pmf"]) == pytest.approx(1.0)


def test_hypothesis_validation():
    hd = random_hybrid(np.random.default_rng(0))
    with pytest.raises(ValueError):
        Hypothesis(0.0, [Birth(1, 0), Birth(1, 0)], [hd, hd])
    with pytest.raises(ValueError):
        Hypothesis(0.0, [Birth(1, 0)], [])
