"""Random multi-object densities for property tests."""
import numpy as np

from lineage_rfs.densities import BetaDensity, CategoricalMode, GaussianMixture, HybridDensity
from lineage_rfs.hypotheses import Hypothesis, MultiObjectDensity, normalize
from lineage_rfs.labels import Birth, daughters


def random_hybrid(rng, dim=4, n_comp=None):
    n = n_comp or int(rng.integers(1, 4))
    A = rng.normal(size=(n, dim, dim))
    covs = A @ np.swapaxes(A, 1, 2) + dim * np.eye(dim)
    p = float(rng.uniform(0.05, 0.95))
    return HybridDensity(GaussianMixture(rng.random(n) + 0.1, rng.normal(scale=20, size=(n, dim)), covs),
                         CategoricalMode(p, 1 - p), BetaDensity(float(rng.uniform(1, 9)), float(rng.uniform(1, 3))))


def random_density(rng, frame=5, n_hyp=None, dim=4):
    """Hypotheses over a small label pool that includes fresh daughters."""
    base = [Birth(1, i) for i in range(3)] + [Birth(frame, 0)]
    pool = base + list(daughters(Birth(2, 0), frame)) + list(daughters(Birth(1, 1), frame))
    hyps = []
    for _ in range(n_hyp or int(rng.integers(1, 8))):
        k = int(rng.integers(0, len(pool) + 1))
        labs = sorted(rng.choice(len(pool), size=k, replace=False).tolist())
        labels = [pool[i] for i in labs]
        hyps.append(Hypothesis(float(rng.normal()), labels, [random_hybrid(rng, dim) for _ in labels]))
    return normalize(MultiObjectDensity(hyps, frame))
