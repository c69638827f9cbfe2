"""A two-frame 1-D problem small enough for the grid oracle."""
import numpy as np
import grid_oracle as go

from lineage_rfs.densities import NO_REDUCTION, BetaDensity, CategoricalMode, GaussianMixture, HybridDensity
from lineage_rfs.dynamics import MitosisModel, ModeModel, MotionModel
from lineage_rfs.filters import FilterConfig, Models
from lineage_rfs.hypotheses import Hypothesis, MultiObjectDensity, normalize
from lineage_rfs.labels import Birth
from lineage_rfs.measurement import Detection, DetectionFrame, SensorModel

# first step allows division, second step only death or survival
RHO_DIVIDE = np.array([[0.05, 0.75, 0.20], [0.05, 0.25, 0.70]])
RHO_NO_DIVIDE = np.array([[0.1, 0.9, 0.0], [0.3, 0.7, 0.0]])
P_SP = 0.3
PD = 0.8
CLUTTER = 0.5
TOY = dict(q=1.0, q2=1.0, delta=6.0, r=1.0)

LABEL = Birth(1, 0)
PRIOR_MEAN, PRIOR_VAR, PRIOR_MODE, PRIOR_EXIST = 25.0, 4.0, (0.6, 0.4), 0.9

Z1 = [19.5, 31.0, 24.0]
A1 = [[0.3, 0.6], [0.4, 0.5], [0.8, 0.1]]
Z2 = [18.7, 32.2]
A2 = [[0.5, 0.5], [0.2, 0.9]]


def models(rho) -> Models:
    mm = ModeModel(p_sp=P_SP, rho=tuple(map(tuple, rho)))
    return Models(
        MotionModel(((1.0, [[1.0]], [[TOY["q"]]]),)),
        MitosisModel(F=[[1.0]], Q=[[TOY["q2"]]], offsets=([TOY["delta"], -TOY["delta"]],), distance=TOY["delta"]),
        mm,
        SensorModel(H=[[1.0]], R=[[TOY["r"]]], clutter_rate=CLUTTER, bounds=((0, 50), (0, 1)), gate=np.inf),
    )


def config(variant="ef") -> FilterConfig:
    return FilterConfig(variant=variant, sampler="enumerate", cap=10**6, floor=0.0, reduction=NO_REDUCTION,
                        k_beta=1.0)


def frames():
    f1 = DetectionFrame(2, [Detection([z], a) for z, a in zip(Z1, A1)])
    f2 = DetectionFrame(3, [Detection([z], a) for z, a in zip(Z2, A2)])
    return f1, f2


def prior() -> MultiObjectDensity:
    hd = HybridDensity(GaussianMixture.single([PRIOR_MEAN], [[PRIOR_VAR]]), CategoricalMode(*PRIOR_MODE),
                       BetaDensity.point(PD), key=7)
    return MultiObjectDensity([Hypothesis(np.log(PRIOR_EXIST), [LABEL], [hd]),
                               Hypothesis(np.log(1 - PRIOR_EXIST), [], [])], 1)


def oracle():
    """Grid posteriors after each step as {(labels, theta): weight}."""
    vartheta = np.array([1 - P_SP, P_SP])
    toy = go.Toy(pd=PD, kappa=CLUTTER / 50.0, rho=RHO_DIVIDE, vartheta=vartheta, **TOY)
    hyps = [go.prior(PRIOR_EXIST, [LABEL], [PRIOR_MEAN], PRIOR_VAR, [PRIOR_MODE]), (1 - PRIOR_EXIST, (), np.ones(()))]
    w1, h1 = go.normalize(go.step(hyps, toy, Z1, A1, 2))
    toy.rho = RHO_NO_DIVIDE
    w2, _ = go.normalize(go.step(h1, toy, Z2, A2, 3))
    return w1, w2


def aggregate(d) -> dict:
    """Weights keyed by (labels, measurement indices), summed over histories."""
    out = {}
    for h in normalize(d).hypotheses:
        k = (tuple(h.labels), tuple(h.assoc))
        out[k] = out.get(k, 0.0) + h.weight
    return out


def total_variation(a: dict, b: dict) -> float:
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))
