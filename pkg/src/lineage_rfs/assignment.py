"""Extended association maps, their λ costs and the block Gibbs sampler.

A map γ has one row per prior label followed by one row per birth label.
Row ``(j1, j2, -1)`` means the object divided and its daughters took
measurements ``j1`` and ``j2``; row ``(-1, -1, j3)`` means the object
survived (or was born) with measurement ``j3``, or died (was not born)
when ``j3 = -1``.  Index 0 is a missed detection.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .labels import daughters

MAX_ENUM_ROWS = 4
MAX_ENUM_MEAS = 3


def n_candidates(M: int) -> int:
    return (M + 1) ** 2 + M + 2


def candidate_triplets(M: int) -> np.ndarray:
    """All row values: no-division first (j3 = -1..M), then divisions row-major."""
    nondiv = [(-1, -1, j3) for j3 in range(-1, M + 1)]
    div = [(j1, j2, -1) for j1 in range(M + 1) for j2 in range(M + 1)]
    return np.array(nondiv + div, dtype=np.int64).reshape(-1, 3)


def candidate_index(j, M: int) -> int:
    j1, j2, j3 = (int(x) for x in j)
    if j1 < 0:
        return j3 + 1
    return M + 2 + j1 * (M + 1) + j2


def is_valid_gamma(gamma, M: int, n_prior: int) -> bool:
    g = np.asarray(gamma, dtype=np.int64).reshape(-1, 3)
    pos = []
    for i, (j1, j2, j3) in enumerate(g):
        if j1 >= 0 or j2 >= 0:
            if i >= n_prior or j3 != -1 or j1 < 0 or j2 < 0 or j1 > M or j2 > M:
                return False
            if j1 == j2 and j1 > 0:
                return False
            pos.extend(x for x in (j1, j2) if x > 0)
        else:
            if j1 != -1 or j2 != -1 or not -1 <= j3 <= M:
                return False
            if j3 > 0:
                pos.append(j3)
    return len(pos) == len(set(pos))


@dataclass(frozen=True, eq=False)
class CostTable:
    """log λ for every row and candidate (``-inf`` marks a zero cost)."""

    log_lambda: np.ndarray
    M: int
    n_prior: int

    def __post_init__(self):
        ll = np.asarray(self.log_lambda, dtype=float)
        if ll.ndim != 2 or ll.shape[1] != n_candidates(self.M):
            raise ValueError("cost table needs (M+1)^2+M+2 columns")
        object.__setattr__(self, "log_lambda", ll)

    @property
    def P(self) -> int:
        return self.log_lambda.shape[0]

    def row_log_cost(self, i: int, j) -> float:
        return float(self.log_lambda[i, candidate_index(j, self.M)])


def gamma_log_weight(ct: CostTable, gamma, log_weight: float = 0.0) -> float:
    g = np.asarray(gamma, dtype=np.int64).reshape(-1, 3)
    if g.shape[0] != ct.P or not is_valid_gamma(g, ct.M, ct.n_prior):
        return -np.inf
    return log_weight + sum(ct.row_log_cost(i, row) for i, row in enumerate(g))


def gamma_weight(ct: CostTable, gamma, weight: float = 1.0) -> float:
    if weight <= 0:
        return 0.0
    return float(np.exp(gamma_log_weight(ct, gamma, np.log(weight))))


def gamma_to_hypothesis_keys(gamma, row_labels: Sequence, n_prior: int, next_time: int) -> tuple:
    """Recover the new label set and label → measurement map from γ."""
    labels, theta = [], {}
    for i, (j1, j2, j3) in enumerate(np.asarray(gamma, dtype=np.int64).reshape(-1, 3)):
        lab = row_labels[i]
        if j1 >= 0:
            d1, d2 = daughters(lab, next_time)
            labels += [d1, d2]
            theta[d1], theta[d2] = int(j1), int(j2)
        elif j3 >= 0:
            labels.append(lab)
            theta[lab] = int(j3)
    return frozenset(labels), theta


def hypothesis_keys_to_gamma(labels, theta: dict, row_labels: Sequence, n_prior: int, next_time: int) -> np.ndarray:
    """Inverse of ``gamma_to_hypothesis_keys``."""
    labels = set(labels)
    g = np.full((len(row_labels), 3), -1, dtype=np.int64)
    for i, lab in enumerate(row_labels):
        if i < n_prior:
            d1, d2 = daughters(lab, next_time)
            if d1 in labels:
                g[i, 0], g[i, 1] = theta[d1], theta[d2]
                continue
        if lab in labels:
            g[i, 2] = theta[lab]
    return g


def initial_gamma(P: int, n_prior: int) -> np.ndarray:
    g = np.full((P, 3), -1, dtype=np.int64)
    g[:n_prior, 2] = 0
    return g


# --- sparse row representation shared by the filter and the sampler -------

@dataclass(frozen=True, eq=False)
class RowBank:
    """Candidate lists of many rows in CSR form."""

    ptr: np.ndarray     # (n_rows + 1,)
    cand: np.ndarray    # (nnz, 3)
    logw: np.ndarray    # (nnz,)

    @classmethod
    def from_rows(cls, rows: Sequence) -> "RowBank":
        """``rows`` is a list of (cand (k,3) array, logw (k,) array)."""
        sizes = [len(r[1]) for r in rows]
        ptr = np.zeros(len(rows) + 1, dtype=np.int64)
        ptr[1:] = np.cumsum(sizes)
        cand = np.concatenate([r[0] for r in rows]).astype(np.int64) if rows else np.zeros((0, 3), np.int64)
        logw = np.concatenate([r[1] for r in rows]).astype(float) if rows else np.zeros(0)
        return cls(ptr, cand.reshape(-1, 3), logw)

    @classmethod
    def from_cost_table(cls, ct: CostTable, keep_init: bool = True) -> "RowBank":
        trip = candidate_triplets(ct.M)
        rows = []
        for i in range(ct.P):
            keep = np.isfinite(ct.log_lambda[i])
            keep[0] = True  # the all-(-1) candidate is always present
            if keep_init and i < ct.n_prior:
                keep[1] = True
            rows.append((trip[keep], ct.log_lambda[i, keep]))
        return cls.from_rows(rows)

    def local_index(self, row: int, j) -> int:
        a, b = self.ptr[row], self.ptr[row + 1]
        hit = np.flatnonzero(np.all(self.cand[a:b] == np.asarray(j), axis=1))
        if len(hit) == 0:
            raise KeyError(f"candidate {tuple(j)} not available in row {row}")
        return int(hit[0])


@njit(cache=True)
def _gibbs_kernel(ptr, cand, logw, rows, init, M, uniforms):
    P = rows.shape[0]
    T = uniforms.shape[0]
    out = np.empty((T, P), np.int64)
    state = init.copy()
    owner = np.full(M + 1, -1, np.int64)
    width = 1
    for i in range(P):
        r = rows[i]
        width = max(width, ptr[r + 1] - ptr[r])
        c = ptr[r] + state[i]
        for q in range(3):
            j = cand[c, q]
            if j > 0:
                owner[j] = i
    buf = np.empty(width)
    for t in range(T):
        for i in range(P):
            r = rows[i]
            a = ptr[r]
            b = ptr[r + 1]
            c = a + state[i]
            for q in range(3):
                j = cand[c, q]
                if j > 0:
                    owner[j] = -1
            top = -np.inf
            for k in range(a, b):
                ok = True
                for q in range(3):
                    j = cand[k, q]
                    if j > 0 and owner[j] != -1:
                        ok = False
                if ok and logw[k] > top:
                    top = logw[k]
            if top > -np.inf:
                total = 0.0
                for k in range(a, b):
                    ok = True
                    for q in range(3):
                        j = cand[k, q]
                        if j > 0 and owner[j] != -1:
                            ok = False
                    w = np.exp(logw[k] - top) if ok else 0.0
                    buf[k - a] = w
                    total += w
                u = uniforms[t, i] * total
                pick = b - a - 1
                acc = 0.0
                for k in range(b - a):
                    acc += buf[k]
                    if u < acc and buf[k] > 0:
                        pick = k
                        break
                while buf[pick] == 0.0:
                    pick -= 1
                state[i] = pick
            c = a + state[i]
            for q in range(3):
                j = cand[c, q]
                if j > 0:
                    owner[j] = i
            out[t, i] = state[i]
    return out


def gibbs_chain(bank: RowBank, rows: np.ndarray, init: np.ndarray, M: int, sweeps: int,
                rng: np.random.Generator) -> np.ndarray:
    """Run ``sweeps`` block-Gibbs sweeps; returns (sweeps, P) local candidate
    indices, one row per sweep."""
    rows = np.asarray(rows, dtype=np.int64)
    if len(rows) == 0 or sweeps <= 0:
        return np.zeros((max(sweeps, 0), len(rows)), np.int64)
    uniforms = rng.random((sweeps, len(rows)))
    return _gibbs_kernel(bank.ptr, bank.cand, bank.logw, rows, np.asarray(init, np.int64), M, uniforms)


def unique_rows(states: np.ndarray) -> np.ndarray:
    """Distinct rows of ``states`` in first-visit order."""
    if len(states) == 0:
        return states
    seen, keep = set(), []
    for i, s in enumerate(states):
        k = s.tobytes()
        if k not in seen:
            seen.add(k)
            keep.append(i)
    return states[keep]


def gibbs_sample(ct: CostTable, gamma_init=None, T: int = 1000, seed: int = 0, distinct: bool = True):
    """Block Gibbs over the rows of ``ct``.

    Returns the initial map followed by the maps visited in ``T - 1``
    sweeps, as a list of distinct (P, 3) arrays (or every visited state when
    ``distinct`` is False).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    bank = RowBank.from_cost_table(ct)
    g0 = initial_gamma(ct.P, ct.n_prior) if gamma_init is None else np.asarray(gamma_init, np.int64)
    if not is_valid_gamma(g0, ct.M, ct.n_prior):
        raise ValueError("initial map is not a valid extended association map")
    rows = np.arange(ct.P, dtype=np.int64)
    init = np.array([bank.local_index(i, g0[i]) for i in range(ct.P)], dtype=np.int64)
    rng = np.random.default_rng(seed)
    states = np.vstack([init[None, :], gibbs_chain(bank, rows, init, ct.M, T - 1, rng)])
    if distinct:
        states = unique_rows(states)
    return [np.array([bank.cand[bank.ptr[i] + s[i]] for i in range(ct.P)]).reshape(-1, 3) for s in states]


def enumerate_sparse(bank: RowBank, rows: Sequence[int], limit: int = 1_000_000) -> list:
    """Every positive 1-1 combination of the rows' candidates (local indices)."""
    out = []
    rows = list(rows)
    choice = [0] * len(rows)

    def rec(i, used):
        if len(out) > limit:
            raise ValueError("enumeration exceeds the size guard")
        if i == len(rows):
            out.append(list(choice))
            return
        a, b = bank.ptr[rows[i]], bank.ptr[rows[i] + 1]
        for k in range(b - a):
            pos = [int(j) for j in bank.cand[a + k] if j > 0]
            if any(j in used for j in pos):
                continue
            choice[i] = k
            rec(i + 1, used | set(pos))

    rec(0, frozenset())
    return out


def enumerate_gamma(P: int, M: int, row_domains: Optional[Sequence[bool]] = None) -> list:
    """All valid maps for ``P`` rows and ``M`` measurements.

    ``row_domains[i]`` is True for a birth row (no division allowed); by
    default every row belongs to a prior label.  Births must follow priors.
    """
    if P > MAX_ENUM_ROWS or M > MAX_ENUM_MEAS:
        raise ValueError(f"enumeration limited to P <= {MAX_ENUM_ROWS}, M <= {MAX_ENUM_MEAS}")
    births = [False] * P if row_domains is None else list(row_domains)
    if any(births[i] and not births[i + 1] for i in range(P - 1)):
        raise ValueError("birth rows must follow prior rows")
    n_prior = births.count(False)
    K = n_candidates(M)
    ll = np.zeros((P, K))
    for i in range(n_prior, P):
        ll[i, M + 2:] = -np.inf
    trip = candidate_triplets(M)
    for i in range(n_prior):
        for k in range(M + 2, K):
            if trip[k, 0] == trip[k, 1] and trip[k, 0] > 0:
                ll[i, k] = -np.inf
    bank = RowBank.from_cost_table(CostTable(ll, M, n_prior))
    combos = enumerate_sparse(bank, range(P))
    return [np.array([bank.cand[bank.ptr[i] + c[i]] for i in range(P)]).reshape(P, 3) for c in combos]


def target_distribution(ct: CostTable, gammas: Sequence) -> np.ndarray:
    """Normalized λ-product weights of ``gammas``."""
    lw = np.array([gamma_log_weight(ct, g) for g in gammas])
    lw = lw - lw[np.isfinite(lw)].max()
    w = np.exp(lw)
    return w / w.sum()


def sweep_transition_matrix(ct: CostTable, gammas: Sequence) -> np.ndarray:
    """Transition matrix of one systematic-scan sweep over ``gammas`` (which
    must be closed under single-row changes, e.g. the full enumeration)."""
    index = {np.asarray(g).tobytes(): s for s, g in enumerate(gammas)}
    n = len(gammas)
    K = n_candidates(ct.M)
    trip = candidate_triplets(ct.M)
    kernel = np.eye(n)
    for i in range(ct.P):
        Ki = np.zeros((n, n))
        for s, g in enumerate(gammas):
            w = np.zeros(K)
            targets = [None] * K
            for k in range(K):
                h = np.array(g, copy=True)
                h[i] = trip[k]
                t = index.get(h.tobytes())
                if t is not None and np.isfinite(ct.log_lambda[i, k]):
                    w[k] = np.exp(ct.log_lambda[i, k])
                    targets[k] = t
            if w.sum() == 0:
                Ki[s, s] = 1.0
                continue
            for k in range(K):
                if targets[k] is not None:
                    Ki[s, targets[k]] += w[k] / w.sum()
        kernel = kernel @ Ki
    return kernel


def build_cost_table(hypothesis, frame, models, cfg, births=None, kappa: Optional[float] = None) -> tuple:
    """Dense λ table of one hypothesis (prior rows, then birth rows).

    Returns (CostTable, row labels).  Candidates outside a row's gate keep
    ``-inf``.
    """
    from .filters import BirthCosts, FrameContext

    ctx = FrameContext(frame, models, cfg, kappa)
    M = ctx.M
    entries = births.entries if births is not None else ()
    rows = [ctx.track(lab, hd) for lab, hd in zip(hypothesis.labels, hypothesis.densities)]
    rows += [BirthCosts(e, ctx) for e in entries]
    table = np.full((len(rows), n_candidates(M)), -np.inf)
    for i, rc in enumerate(rows):
        for j, lw in zip(rc.cand, rc.logw):
            table[i, candidate_index(j, M)] = lw
    labels = list(hypothesis.labels) + [e.label for e in entries]
    return CostTable(table, M, len(hypothesis.labels)), labels
