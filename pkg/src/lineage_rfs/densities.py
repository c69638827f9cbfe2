"""Single-object density primitives with closed-form prediction and update.

Kinematics are Gaussian mixtures propagated by the Kalman recursion, the
mode is a two-state categorical (normal / mitotic) and the detection
probability is Beta distributed.  Joint mixtures over several labels hold
the stacked state of siblings whose kinematics are correlated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))
EIG_FLOOR = 1e-12
PSD_TOL = 1e-9


class NumericalConditioningError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ReductionConfig:
    prune: float = 1e-5
    merge: float = 0.1
    cap: int = 20


NO_REDUCTION = ReductionConfig(prune=0.0, merge=0.0, cap=10**9)


def _clean_covs(covs: np.ndarray) -> np.ndarray:
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals = np.linalg.eigvalsh(covs)
    if np.all(vals >= EIG_FLOOR):
        return covs
    scale = np.maximum(1.0, np.abs(vals).max(axis=-1, keepdims=True))
    if np.any(vals < -PSD_TOL * scale):
        raise NumericalConditioningError(f"covariance not PSD (min eigenvalue {vals.min():.3g})")
    vals, vecs = np.linalg.eigh(covs)
    vals = np.maximum(vals, EIG_FLOOR)
    return np.einsum("...ij,...j,...kj->...ik", vecs, vals, vecs)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        m = np.asarray(self.means, dtype=float)
        if m.ndim == 1:
            m = m.reshape(1, -1)
        c = np.asarray(self.covs, dtype=float)
        if c.ndim == 2:
            c = c.reshape(1, *c.shape)
        if not (len(w) == m.shape[0] == c.shape[0]):
            raise ValueError("mixture arrays disagree on component count")
        if c.shape[1:] != (m.shape[1], m.shape[1]):
            raise ValueError("covariance shape does not match mean dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "covs", c)

    @classmethod
    def single(cls, mean, cov) -> "GaussianMixture":
        mean = np.asarray(mean, dtype=float)
        return cls(np.ones(1), mean.reshape(1, -1), np.asarray(cov, dtype=float).reshape(1, len(mean), len(mean)))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __len__(self):
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "GaussianMixture":
        total = self.weights.sum()
        if total <= 0:
            raise NumericalConditioningError("mixture has no mass")
        return GaussianMixture(self.weights / total, self.means, self.covs)

    def mean(self) -> np.ndarray:
        w = self.weights / self.weights.sum()
        return w @ self.means

    def covariance(self) -> np.ndarray:
        w = self.weights / self.weights.sum()
        mu = w @ self.means
        diff = self.means - mu
        return np.einsum("i,ijk->jk", w, self.covs) + np.einsum("i,ij,ik->jk", w, diff, diff)

    def pdf(self, x) -> np.ndarray:
        """Evaluate the (weighted) mixture at points ``x`` of shape (..., d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for w, m, c in zip(self.weights, self.means, self.covs):
            diff = x - m
            inv = np.linalg.inv(c)
            _, logdet = np.linalg.slogdet(c)
            maha = np.einsum("ij,jk,ik->i", diff, inv, diff)
            out += w * np.exp(-0.5 * (self.dim * LOG_2PI + logdet + maha))
        return out


def reduce_mixture(gm: GaussianMixture, cfg: ReductionConfig = ReductionConfig()) -> GaussianMixture:
    """Prune, merge and cap a mixture while keeping its total weight."""
    total = gm.weights.sum()
    if len(gm) <= 1 or total <= 0:
        return gm
    rel = gm.weights / total
    keep = rel >= cfg.prune
    if not keep.any():
        keep[np.argmax(rel)] = True
    w, m, c = gm.weights[keep], gm.means[keep], gm.covs[keep]
    if cfg.merge > 0 and len(w) > 1:
        order = list(np.argsort(-w, kind="stable"))
        nw, nm, nc = [], [], []
        remaining = np.ones(len(w), dtype=bool)
        for i in order:
            if not remaining[i]:
                continue
            idx = np.flatnonzero(remaining)
            diff = m[idx] - m[i]
            inv = np.linalg.inv(c[i])
            d2 = np.einsum("ij,jk,ik->i", diff, inv, diff)
            group = idx[d2 < cfg.merge]
            remaining[group] = False
            gw = w[group]
            wsum = gw.sum()
            mu = gw @ m[group] / wsum
            dd = m[group] - mu
            cov = (np.einsum("i,ijk->jk", gw, c[group]) + np.einsum("i,ij,ik->jk", gw, dd, dd)) / wsum
            nw.append(wsum)
            nm.append(mu)
            nc.append(0.5 * (cov + cov.T))
        w, m, c = np.array(nw), np.array(nm), np.array(nc)
    if len(w) > cfg.cap:
        top = np.argsort(-w, kind="stable")[: cfg.cap]
        w, m, c = w[top], m[top], c[top]
    w = w * (total / w.sum())
    return GaussianMixture(w, m, c)


def gm_predict(gm: GaussianMixture, models: Sequence, reduction: ReductionConfig = ReductionConfig()) -> GaussianMixture:
    """Push a mixture through a mixture of affine-Gaussian transitions.

    ``models`` is a sequence of ``(weight, F, b, Q)``; zero-weight models are
    skipped.
    """
    ws, ms, cs = [], [], []
    for weight, F, b, Q in models:
        if weight <= 0:
            continue
        F = np.asarray(F, dtype=float)
        means = gm.means @ F.T
        if b is not None:
            means = means + np.asarray(b, dtype=float)
        covs = F @ gm.covs @ F.T + np.asarray(Q, dtype=float)
        ws.append(gm.weights * weight)
        ms.append(means)
        cs.append(covs)
    if not ws:
        raise ValueError("no transition model with positive weight")
    out = GaussianMixture(np.concatenate(ws), np.concatenate(ms), _clean_covs(np.concatenate(cs)))
    return reduce_mixture(out, reduction)


def _innovations(gm: GaussianMixture, H: np.ndarray, R: np.ndarray):
    zpred = gm.means @ H.T
    PHt = gm.covs @ H.T
    S = H @ PHt + R
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    sign, logdet = np.linalg.slogdet(S)
    if np.any(sign <= 0):
        raise NumericalConditioningError("singular innovation covariance")
    Sinv = np.linalg.inv(S)
    return zpred, PHt, S, Sinv, logdet


def gm_log_likelihoods(gm: GaussianMixture, H, R, Z) -> tuple:
    """Log marginal likelihood of every row of ``Z`` plus per-row minimum
    squared Mahalanobis distance over components (used for gating)."""
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    zpred, _, _, Sinv, logdet = _innovations(gm, H, R)
    diff = Z[:, None, :] - zpred[None, :, :]
    maha = np.einsum("mni,nij,mnj->mn", diff, Sinv, diff)
    m = H.shape[0]
    logc = np.log(np.maximum(gm.weights, 1e-300)) - 0.5 * (m * LOG_2PI + logdet)
    comp = logc[None, :] - 0.5 * maha
    top = comp.max(axis=1)
    loglik = top + np.log(np.exp(comp - top[:, None]).sum(axis=1))
    return loglik, maha.min(axis=1)


def gm_update_log(gm: GaussianMixture, H, R, z) -> tuple:
    """Kalman update; returns (log likelihood, normalized posterior)."""
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1)
    zpred, PHt, S, Sinv, logdet = _innovations(gm, H, R)
    v = z - zpred
    K = PHt @ Sinv
    means = gm.means + np.einsum("nij,nj->ni", K, v)
    covs = gm.covs - K @ np.swapaxes(PHt, -1, -2)
    maha = np.einsum("ni,nij,nj->n", v, Sinv, v)
    logw = np.log(np.maximum(gm.weights, 1e-300)) - 0.5 * (len(z) * LOG_2PI + logdet + maha)
    top = logw.max()
    w = np.exp(logw - top)
    loglik = top + np.log(w.sum())
    return float(loglik), GaussianMixture(w / w.sum(), means, _clean_covs(covs))


def gm_update(gm: GaussianMixture, H, R, z) -> tuple:
    loglik, post = gm_update_log(gm, H, R, z)
    return float(np.exp(loglik)), post


@dataclass(frozen=True)
class CategoricalMode:
    p_normal: float
    p_mitotic: float

    def __post_init__(self):
        if min(self.p_normal, self.p_mitotic) < 0 or abs(self.p_normal + self.p_mitotic - 1.0) > 1e-12:
            raise ValueError(f"mode probabilities {self.p_normal}, {self.p_mitotic} do not form a distribution")

    @classmethod
    def from_array(cls, p) -> "CategoricalMode":
        p = np.asarray(p, dtype=float)
        p = p / p.sum()
        return cls(float(p[0]), float(1.0 - p[0]))

    def as_array(self) -> np.ndarray:
        return np.array([self.p_normal, self.p_mitotic])

    @property
    def map_mode(self) -> int:
        return 1 if self.p_normal >= self.p_mitotic else 2


@dataclass(frozen=True)
class BetaDensity:
    """Beta law on the detection probability.

    ``fixed`` turns the density into a point mass (known detection
    probability); updates then leave it unchanged.
    """

    s: float
    t: float
    fixed: Optional[float] = None

    def __post_init__(self):
        if self.fixed is None:
            if not (np.isfinite(self.s) and np.isfinite(self.t) and self.s > 0 and self.t > 0):
                raise ValueError(f"invalid Beta shapes ({self.s}, {self.t})")
        elif not 0.0 <= self.fixed <= 1.0:
            raise ValueError("fixed detection probability outside [0, 1]")

    @classmethod
    def point(cls, p: float) -> "BetaDensity":
        return cls(1.0, 1.0, fixed=float(p))

    @property
    def mean(self) -> float:
        if self.fixed is not None:
            return self.fixed
        return self.s / (self.s + self.t)

    @property
    def variance(self) -> float:
        if self.fixed is not None:
            return 0.0
        n = self.s + self.t
        return self.s * self.t / (n * n * (n + 1.0))


def beta_detection_predict(b: BetaDensity, k_beta: float = 1.1) -> BetaDensity:
    """Keep the mean, inflate the variance by ``k_beta`` (moment matching)."""
    if b.fixed is not None or k_beta == 1.0:
        return b
    mu = b.mean
    var = b.variance * k_beta
    # a Beta cannot have variance >= mu(1-mu); keep the total count above a floor
    total = max(mu * (1.0 - mu) / var - 1.0, 1e-6)
    return BetaDensity(mu * total, (1.0 - mu) * total)


def beta_update_detected(b: BetaDensity) -> tuple:
    if b.fixed is not None:
        return b.fixed, b
    return b.mean, BetaDensity(b.s + 1.0, b.t)


def beta_update_missed(b: BetaDensity) -> tuple:
    if b.fixed is not None:
        return 1.0 - b.fixed, b
    return 1.0 - b.mean, BetaDensity(b.s, b.t + 1.0)


@dataclass(frozen=True, eq=False)
class HybridDensity:
    kinematics: GaussianMixture
    mode: CategoricalMode
    detection: BetaDensity
    key: int = field(default=0, compare=False)


@dataclass(frozen=True, eq=False)
class JointGaussianMixture:
    """Stacked-state mixture over an ordered list of labels."""

    labels: tuple
    mixture: GaussianMixture
    key: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.mixture.dim % max(len(self.labels), 1):
            raise ValueError("stacked dimension is not a multiple of the label count")

    @property
    def state_dim(self) -> int:
        return self.mixture.dim // len(self.labels)

    def block(self, label) -> slice:
        i = self.labels.index(label)
        d = self.state_dim
        return slice(i * d, (i + 1) * d)


def gm_marginalize(joint: JointGaussianMixture, keep) -> GaussianMixture:
    if keep not in joint.labels:
        raise KeyError(f"label {keep} not in joint density")
    sl = joint.block(keep)
    gm = joint.mixture
    return GaussianMixture(gm.weights.copy(), gm.means[:, sl], gm.covs[:, sl, sl])


def stacked_marginal(gm: GaussianMixture, idx: np.ndarray) -> GaussianMixture:
    """Marginal of a mixture onto the coordinates ``idx``."""
    return GaussianMixture(gm.weights.copy(), gm.means[:, idx], gm.covs[:, idx][:, :, idx])
