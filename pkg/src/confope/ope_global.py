"""Global confounders: trajectory clustering and the cluster-weighted OPE estimator."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.special import logsumexp

from .core_mdp import as_observed
from .data import Dataset, count_stats, empirical_model
from .ope_memoryless import ValueReport, fqe, mu_start_value


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    weights: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    @property
    def U(self) -> int:
        return len(self.weights)

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def relabel(self, perm) -> "ClusterAssignment":
        """Cluster ``k`` becomes ``perm[k]``."""
        perm = np.asarray(perm)
        w = np.zeros_like(self.weights)
        w[perm] = self.weights
        return ClusterAssignment(perm[self.labels], w, self.method, dict(self.diagnostics))

    def to_json(self) -> str:
        return json.dumps({"labels": self.labels.tolist(), "weights": self.weights.tolist(), "method": self.method})


def assignment_from_labels(labels, U: int, method: str = "given", diagnostics=None) -> ClusterAssignment:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= U):
        raise ValueError("labels out of range")
    w = np.bincount(labels, minlength=U) / max(1, labels.size)
    return ClusterAssignment(labels, w, method, diagnostics or {})


# ---------------------------------------------------------------------------
# per-trajectory statistics


@dataclass
class TrajectoryStats:
    """Per-trajectory transition counts pooled over time, as a sparse ``(n, S*A*S)`` matrix."""

    counts: sparse.csr_matrix
    S: int
    A: int

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    def sa_counts(self) -> np.ndarray:
        """Dense ``(n, S*A)`` visit counts of state-action pairs with a successor."""
        agg = sparse.csr_matrix((np.ones(self.S * self.A * self.S), (np.arange(self.S * self.A * self.S),
                                 np.repeat(np.arange(self.S * self.A), self.S))),
                                shape=(self.S * self.A * self.S, self.S * self.A))
        return np.asarray((self.counts @ agg).todense())

    def rows(self, idx, cell: int) -> np.ndarray:
        """Raw next-state counts of trajectories ``idx`` at flattened cell ``cell``."""
        return np.asarray(self.counts[idx][:, cell * self.S:(cell + 1) * self.S].todense())


def trajectory_stats(ds: Dataset, S: int, A: int, state_map=None) -> TrajectoryStats:
    s = ds.states if state_map is None else np.asarray(state_map)[ds.states]
    a = ds.actions
    n, H = s.shape
    flat = ((s[:, :-1] * A + a[:, :-1]) * S + s[:, 1:]).ravel()
    rows = np.repeat(np.arange(n), H - 1)
    m = sparse.csr_matrix((np.ones(flat.size), (rows, flat)), shape=(n, S * A * S))
    m.sum_duplicates()
    return TrajectoryStats(m, S, A)


def _n_states(ds: Dataset, S, state_map):
    if state_map is not None:
        return int(np.max(state_map)) + 1
    return S if S is not None else int(ds.states.max()) + 1


def _n_actions(ds: Dataset, A):
    return A if A is not None else int(ds.actions.max()) + 1


def pairwise_statistic(ts: TrajectoryStats, idx: np.ndarray, tau: int) -> np.ndarray:
    """``d(i,j) = max over shared cells of ||P_i - P_j||^2 - sum(P_i(1-P_i)/n_i + P_j(1-P_j)/n_j)``.

    Pairs without a shared cell (each with at least ``tau`` visits) are NaN.
    """
    m = len(idx)
    D = np.full((m, m), -np.inf)
    nsa = ts.sa_counts()[idx]
    sub = ts.counts[idx]
    for cell in np.flatnonzero((nsa >= tau).sum(0) >= 2):
        I = np.flatnonzero(nsa[:, cell] >= tau)
        cnt = np.asarray(sub[I][:, cell * ts.S:(cell + 1) * ts.S].todense())
        nn = cnt.sum(1)
        P = cnt / nn[:, None]
        sq = (P**2).sum(1)
        dist = sq[:, None] + sq[None, :] - 2 * P @ P.T
        var = (P * (1 - P)).sum(1) / nn
        stat = dist - var[:, None] - var[None, :]
        block = D[np.ix_(I, I)]
        D[np.ix_(I, I)] = np.maximum(block, stat)
    D[np.isneginf(D)] = np.nan
    np.fill_diagonal(D, 0.0)
    return D


def _cluster_models(ts: TrajectoryStats, labels: np.ndarray, U: int, smooth: float) -> np.ndarray:
    """Log kernels ``(U, S*A*S)`` fitted on each cluster's pooled counts."""
    onehot = sparse.csr_matrix((np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(U, len(labels)))
    tot = np.asarray((onehot @ ts.counts).todense()).reshape(U, ts.S * ts.A, ts.S) + smooth
    P = tot / tot.sum(-1, keepdims=True)
    return np.log(P).reshape(U, -1)


def _refine(ts: TrajectoryStats, labels: np.ndarray, U: int, iters: int, smooth: float = 0.5):
    done = 0
    for done in range(1, iters + 1):
        logP = _cluster_models(ts, labels, U, smooth)
        ll = np.asarray(ts.counts @ logP.T)
        cur = ll[np.arange(len(labels)), labels]
        best = ll.argmax(1)
        move = ll[np.arange(len(labels)), best] > cur + 1e-12
        new = np.where(move, best, labels)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, done


def _linkage_cut(D: np.ndarray, U: int, min_frac: float):
    """Single-linkage cut of the statistic; falls back to a centered embedding when degenerate.

    Single linkage chains through noisy pairs and often isolates a single outlier.
    When any cluster holds fewer than ``min_frac`` of the points, the statistic is
    double-centered (removing per-trajectory offsets such as how many cells a
    trajectory visits), embedded in ``U - 1`` dimensions and cut with Ward linkage.
    """
    m = len(D)
    Dc = np.where(np.isnan(D), np.nanmax(D) + 1.0, np.clip(D, 0.0, None))
    Dc = 0.5 * (Dc + Dc.T)
    np.fill_diagonal(Dc, 0.0)
    iu = np.triu_indices(m, 1)
    lab = fcluster(linkage(Dc[iu], method="single"), U, criterion="maxclust") - 1
    lab = np.unique(lab, return_inverse=True)[1]
    sizes = np.bincount(lab, minlength=U)
    if sizes.min() >= max(2, min_frac * m):
        return lab, "single"
    X = np.where(np.isnan(D), np.nanmean(D), np.clip(D, 0.0, None))
    X = 0.5 * (X + X.T)
    np.fill_diagonal(X, 0.0)
    J = np.eye(m) - 1.0 / m
    w, V = np.linalg.eigh(-0.5 * J @ X @ J)
    Y = V[:, -(U - 1):] * np.sqrt(np.maximum(w[-(U - 1):], 0.0))
    lab = fcluster(linkage(Y, method="ward"), U, criterion="maxclust") - 1
    return np.unique(lab, return_inverse=True)[1], "embedded-ward"


def cluster_separation(ds: Dataset, U: int, tau_count: int = 5, refine_iters: int = 20, S: int | None = None,
                       A: int | None = None, state_map=None, max_pairwise: int = 500, seed: int = 0,
                       min_frac: float = 0.05) -> ClusterAssignment:
    """Cluster trajectories by their transition statistics.

    Steps: per-trajectory counts, the variance-corrected max statistic over shared
    cells, a single-linkage cut into ``U`` groups (see ``_linkage_cut``), then rounds of likelihood
    reassignment against each group's pooled kernel.  With more than
    ``max_pairwise`` trajectories the pairwise stage runs on a seeded subset and the
    rest join during reassignment.
    """
    n = ds.n
    if U > n:
        raise ValueError("more clusters than trajectories")
    if U < 1:
        raise ValueError("U must be >= 1")
    if U == 1:
        return assignment_from_labels(np.zeros(n, dtype=np.int64), 1, "separation")
    S = _n_states(ds, S, state_map)
    A = _n_actions(ds, A)
    ts = trajectory_stats(ds, S, A, state_map)
    rng = np.random.default_rng(seed)
    anchors = np.arange(n) if n <= max_pairwise else np.sort(rng.choice(n, max_pairwise, replace=False))
    D = pairwise_statistic(ts, anchors, tau_count)
    known = ~np.isnan(D)
    np.fill_diagonal(known, False)
    diag = {"n_anchors": len(anchors), "unknown_pairs": int((~known).sum() - len(anchors)) // 2}
    if not known.any():
        labels = rng.integers(0, U, size=n)
        diag["fallback"] = "random"
    else:
        lab_a, cut = _linkage_cut(D, U, min_frac)
        diag["cut"] = cut
        labels = np.full(n, -1)
        labels[anchors] = lab_a
        if (labels < 0).any():
            logP = _cluster_models(TrajectoryStats(ts.counts[anchors], S, A), lab_a, U, 0.5)
            rest = np.flatnonzero(labels < 0)
            labels[rest] = np.asarray(ts.counts[rest] @ logP.T).argmax(1)
        diag["statistic"] = D
    labels, it = _refine(ts, labels.astype(np.int64), U, refine_iters)
    diag["refine_iterations"] = it
    return assignment_from_labels(labels, U, "separation", diag)


def cluster_soft_em(ds: Dataset, U: int, seed: int = 0, iters: int = 100, S: int | None = None,
                    A: int | None = None, state_map=None, tol: float = 1e-8) -> ClusterAssignment:
    """Mixture-of-Markov-chains EM from random responsibilities, add-one smoothed M-steps.

    ``diagnostics["objective"]`` is the smoothed (penalized) log-likelihood per
    iteration, the quantity EM never decreases.
    """
    n = ds.n
    if U == 1:
        return assignment_from_labels(np.zeros(n, dtype=np.int64), 1, "soft-em")
    S = _n_states(ds, S, state_map)
    A = _n_actions(ds, A)
    ts = trajectory_stats(ds, S, A, state_map)
    rng = np.random.default_rng(seed)
    resp = rng.dirichlet(np.ones(U), size=n)
    objective = []
    for _ in range(iters):
        w = resp.mean(0)
        tot = np.asarray((ts.counts.T @ resp).T).reshape(U, S * A, S) + 1.0
        P = tot / tot.sum(-1, keepdims=True)
        logP = np.log(P).reshape(U, -1)
        ll = np.asarray(ts.counts @ logP.T) + np.log(np.maximum(w, 1e-300))
        norm = logsumexp(ll, axis=1)
        objective.append(float(norm.sum() + logP.sum()))
        resp = np.exp(ll - norm[:, None])
        if len(objective) > 1 and abs(objective[-1] - objective[-2]) <= tol * max(1.0, abs(objective[-1])):
            break
    return assignment_from_labels(resp.argmax(1), U, "soft-em", {"objective": objective, "responsibilities": resp})


def best_permutation(labels, truth, U: int):
    labels = np.asarray(labels)
    truth = np.asarray(truth)
    K = max(U, int(truth.max()) + 1 if truth.size else 1)
    if K > 8:
        raise ValueError("exhaustive permutation search supports at most 8 labels")
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(K)):
        err = float(np.mean(np.asarray(perm)[labels] != truth))
        if err < best:
            best, best_perm = err, perm
    return best, np.asarray(best_perm)


def clustering_accuracy(ca, truth) -> float:
    """Misassignment rate minimized over label permutations."""
    labels = ca.labels if isinstance(ca, ClusterAssignment) else np.asarray(ca)
    U = ca.U if isinstance(ca, ClusterAssignment) else int(labels.max()) + 1
    return best_permutation(labels, truth, U)[0]


def weight_error(ca: ClusterAssignment, truth_labels, p_true) -> float:
    """``max_u |P_hat(u) - P(u)|`` after aligning cluster ids with the truth."""
    p_true = np.asarray(p_true, dtype=float)
    if ca.U == 1:
        return float(abs(ca.weights[0] - p_true.sum()))
    _, perm = best_permutation(ca.labels, truth_labels, max(ca.U, len(p_true)))
    w = np.zeros(len(perm))
    w[perm[: ca.U]] = ca.weights
    return float(np.max(np.abs(w[: len(p_true)] - p_true)))


# ---------------------------------------------------------------------------
# cluster-weighted OPE


def per_cluster_plugin_ope(ds: Dataset, pi_e, s0, S: int, A: int, reward=None) -> ValueReport:
    """Pooled empirical model on the cluster, then exact DP for the evaluation policy."""
    cs = count_stats(ds, S, A)
    model = empirical_model(cs, "pooled", reward)
    starts = np.atleast_1d(s0) if np.ndim(s0) == 0 else np.flatnonzero(np.asarray(s0) > 0)
    rep = fqe(model, pi_e, starts=starts)
    rep.method = "plugin"
    rep.s0 = int(s0) if np.ndim(s0) == 0 else None
    rep.diagnostics["value"] = mu_start_value(rep.v1, s0)
    return rep


def clustering_ope(ds: Dataset, U: int, pi_e, s0, S: int, A: int, cluster_fn=None, ope_fn=None,
                   ca: ClusterAssignment | None = None, reward=None) -> ValueReport:
    """``V_hat = sum_u P_hat(u) V_hat(s0; C_u)`` over the clusters of ``ds``."""
    pi_e = as_observed(pi_e)
    if ca is None:
        cluster_fn = cluster_fn or (lambda d, k: cluster_separation(d, k, S=S, A=A))
        ca = cluster_fn(ds, U)
    ope_fn = ope_fn or (lambda d: per_cluster_plugin_ope(d, pi_e, s0, S, A, reward))
    v1 = np.zeros(S)
    per = {}
    for k in range(ca.U):
        idx = ca.members(k)
        if idx.size == 0:
            continue
        rep = ope_fn(ds.subset(idx))
        per[k] = mu_start_value(rep.v1, s0)
        v1 = v1 + ca.weights[k] * rep.v1
    rep = ValueReport("cluster", v1, None, False, int(s0) if np.ndim(s0) == 0 else None,
                      diagnostics={"per_cluster": per, "weights": ca.weights.copy(), "assignment": ca})
    rep.diagnostics["value"] = mu_start_value(v1, s0)
    return rep
