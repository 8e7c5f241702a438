"""Policy improvement: max-min ascent on the robust lower bound and clustering-based policy gradient."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core_mdp import softmax
from .data import Dataset, count_stats, empirical_model
from .ope_global import ClusterAssignment, cluster_separation
from .ope_memoryless import mb_pgd, mb_value_and_grad, mu_start_value
from .sensitivity import TransitionUncertainty, build_uncertainty


@dataclass
class ImprovementTrace:
    thetas: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    final_objective: float | None = None
    initial_objective: float | None = None

    def __len__(self):
        return len(self.objective)

    def record(self, theta, obj, gnorm, lr):
        self.thetas.append(np.array(theta, copy=True))
        self.objective.append(float(obj))
        self.grad_norm.append(float(gnorm))
        self.lr.append(float(lr))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "objective", "grad_norm", "lr"])
        for i, (o, g, l) in enumerate(zip(self.objective, self.grad_norm, self.lr)):
            w.writerow([i, repr(o), repr(g), repr(l)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# ---------------------------------------------------------------------------
# gradients


def softmax_grad(theta: np.ndarray, dv_dpi: np.ndarray) -> np.ndarray:
    """Chain rule through a row-wise softmax: ``pi * (g - <pi, g>)``."""
    pi = softmax(np.asarray(theta, dtype=float))
    g = np.asarray(dv_dpi, dtype=float)
    return pi * (g - (pi * g).sum(-1, keepdims=True))


def _start_dist(s0, S: int) -> np.ndarray:
    if np.ndim(s0) == 0:
        return np.eye(S)[int(s0)]
    return np.asarray(s0, dtype=float)


def value_and_policy_grad(P: np.ndarray, r: np.ndarray, pi: np.ndarray, H: int, s0):
    """``V_1(s0)`` under a stationary kernel and stationary policy ``pi[s, a]``, and ``dV/dpi``.

    ``dV/dpi(s, a) = sum_h mu_h(s) Q_h(s, a)`` where ``mu_h`` is the state law at step ``h``.
    """
    S = P.shape[0]
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, r.shape[1]))
    for h in range(H - 1, -1, -1):
        Q[h] = r + P @ V[h + 1]
        V[h] = (pi * Q[h]).sum(-1)
    mu = _start_dist(s0, S)
    g = np.zeros_like(pi)
    for h in range(H):
        g += mu[:, None] * Q[h]
        mu = np.einsum("sa,sat->t", mu[:, None] * pi, P)
    return float(mu_start_value(V[0], s0)), g


def theta_grad(P, r, theta, H, s0):
    v, g = value_and_policy_grad(P, r, softmax(theta), H, s0)
    return v, softmax_grad(theta, g)


# ---------------------------------------------------------------------------
# max-min ascent


def _pooled(model):
    if model.stationary:
        return model
    if model.counts is not None:
        return model.pooled()
    raise ValueError("max-min ascent needs a pooled model; build it with mode='pooled'")


def maxmin_improve(model, theta0, gamma: float | None = None, tu: TransitionUncertainty | None = None,
                   s0=0, outer_iters: int = 30, inner_iters: int = 30, lr=None, inner_lr=None, seed: int = 0):
    """Alternate a warm-started inner descent over kernels in the set with an ascent step on the logits.

    The ascent direction is the policy gradient at the inner minimizer (Danskin).
    Returns ``(theta, trace)``; ``trace.objective[t]`` is the inner minimum at the
    ``t``-th iterate.  The inner problem is non-convex, so those values also move as
    the warm-started solver finds deeper minima; ``trace.initial_objective`` and
    ``trace.final_objective`` re-evaluate ``theta0`` and the returned logits against
    the same pool of kernels for a like-for-like comparison.
    """
    model = _pooled(model)
    if tu is None:
        if gamma is None:
            raise ValueError("pass gamma or an uncertainty set")
        tu = build_uncertainty(model, gamma=gamma)
    lr = lr or (lambda t: 0.1 / math.sqrt(t))
    theta = np.array(theta0, dtype=float, copy=True)
    H, r = model.H, model.reward
    trace = ImprovementTrace()
    P_warm = None

    def inner(th, warm):
        pi = softmax(th)
        rep = mb_pgd(model, pi, tu, s0, iters=inner_iters, lr=inner_lr, seed=seed, init=warm)
        if warm is not None:
            fresh = mb_pgd(model, pi, tu, s0, iters=1, seed=seed)
            if fresh.diagnostics["value"] < rep.diagnostics["value"]:
                rep = fresh
        return rep.diagnostics["value"], rep.diagnostics["kernel"]

    pool = []
    for t in range(1, outer_iters + 1):
        lb, P_warm = inner(theta, P_warm)
        pool.append(P_warm)
        _, g = theta_grad(P_warm, r, theta, H, s0)
        trace.record(theta, lb, np.linalg.norm(g), lr(t))
        theta = theta + lr(t) * g

    def pooled_bound(th):
        # every kernel found is feasible for every policy, so both endpoints share one candidate pool
        pi = softmax(th)
        vals = [mb_value_and_grad(P, r, pi, H, s0)[0] for P in pool]
        best = pool[int(np.argmin(vals))]
        rep = mb_pgd(model, pi, tu, s0, iters=inner_iters, lr=inner_lr, seed=seed, init=best)
        return min(min(vals), rep.diagnostics["value"])

    trace.initial_objective = float(pooled_bound(np.asarray(theta0, dtype=float)))
    trace.final_objective = float(pooled_bound(theta))
    return theta, trace


# ---------------------------------------------------------------------------
# clustering-based policy gradient


def _log_policy_grad_add(grad, states, actions, coef, pi):
    np.add.at(grad, (states, actions), coef)
    np.add.at(grad, states, -coef[:, None] * pi[states])


def per_cluster_pg(ds: Dataset, theta, mode: str = "approx", S: int | None = None, A: int | None = None,
                   s0=None, reward=None, pi_b_hat=None):
    """Gradient of the cluster's value in the logits.

    ``is``: IS-REINFORCE with per-reward weights,
    ``mean_i sum_h grad log pi(a_h|s_h) sum_{k>=h} W_{1:k} r_k`` and
    ``W_{1:k} = prod_{j<=k} pi(a_j|s_j) / pi_b(a_j|s_j)``; ``pi_b`` defaults to the
    cluster's empirical behavior policy.
    ``approx``: exact gradient of the plug-in model's value, that is the
    occupancy-weighted ``grad log pi * Q`` on the cluster's pooled kernel.  Without
    ``s0`` the cluster's empirical start distribution is used.
    """
    theta = np.asarray(theta, dtype=float)
    S = S or theta.shape[0]
    A = A or theta.shape[1]
    pi = softmax(theta)
    if mode == "is":
        if pi_b_hat is None:
            pi_b_hat = empirical_model(count_stats(ds, S, A), "pooled").pi_b[0]
        pb = np.asarray(pi_b_hat)[ds.states, ds.actions]
        if np.any(pb <= 0):
            raise ValueError("behavior probability is zero on a logged action")
        W = np.cumprod(pi[ds.states, ds.actions] / pb, axis=1)
        G = np.cumsum((W * ds.rewards)[:, ::-1], axis=1)[:, ::-1]
        grad = np.zeros((S, A))
        _log_policy_grad_add(grad, ds.states.ravel(), ds.actions.ravel(), G.ravel(), pi)
        return grad / ds.n
    if mode == "approx":
        P, r, start = plugin_parts(ds, S, A, s0, reward)
        return theta_grad(P, r, theta, ds.H, start)[1]
    raise ValueError(f"unknown gradient mode {mode!r}")


def plugin_parts(ds: Dataset, S: int, A: int, s0=None, reward=None):
    """Pooled kernel, reward table and start distribution of a cluster's plug-in model."""
    m = empirical_model(count_stats(ds, S, A), "pooled", reward)
    P = m.P[0].copy()
    empty = ~m.visited_sa[0]
    P[empty] = np.eye(S)[np.nonzero(empty)[0]]  # unvisited: absorbing self-loop, never reached under data support
    start = np.bincount(ds.states[:, 0], minlength=S) / ds.n if s0 is None else s0
    return P, m.reward, start


def clustering_pg(ds: Dataset, U: int, theta0, eta: float = 0.05, T: int = 100, S: int | None = None,
                  A: int | None = None, s0=None, cluster_fn=None, grad_fn=None, ca: ClusterAssignment | None = None,
                  value_fn=None, reward=None):
    """Cluster once, then ascend ``sum_u P_hat(u) Z_u(theta)`` with a constant step.

    ``grad_fn(cluster_ds, theta)`` defaults to the plug-in gradient.  The trace holds
    ``value_fn(theta)`` when given (ground truth) and the plug-in estimate otherwise.
    """
    theta = np.array(theta0, dtype=float, copy=True)
    S = S or theta.shape[0]
    A = A or theta.shape[1]
    if ca is None:
        cluster_fn = cluster_fn or (lambda d, k: cluster_separation(d, k, S=S, A=A))
        ca = cluster_fn(ds, U)
    parts = []
    for k in range(ca.U):
        idx = ca.members(k)
        if idx.size:
            sub = ds.subset(idx)
            parts.append((ca.weights[k], sub, plugin_parts(sub, S, A, s0, reward)))
    trace = ImprovementTrace()

    def estimate(th):
        tot_v, tot_g = 0.0, np.zeros_like(th)
        for w, sub, (P, r, start) in parts:
            if grad_fn is None:
                v, g = theta_grad(P, r, th, ds.H, start)
            else:
                v = value_and_policy_grad(P, r, softmax(th), ds.H, start)[0]
                g = grad_fn(sub, th)
            tot_v += w * v
            tot_g += w * g
        return tot_v, tot_g

    for _ in range(T):
        v_hat, g = estimate(theta)
        obj = value_fn(theta) if value_fn is not None else v_hat
        trace.record(theta, obj, np.linalg.norm(g), eta)
        theta = theta + eta * g
    trace.final_objective = float(value_fn(theta) if value_fn is not None else estimate(theta)[0])
    return theta, trace


# ---------------------------------------------------------------------------
# suboptimality


@dataclass
class SuboptimalityReport:
    gap: float
    eps_hat: float
    best_true: int
    best_hat: int

    @property
    def holds(self) -> bool:
        return -1e-12 <= self.gap <= 2 * self.eps_hat + 1e-12


def suboptimality_check(v_true, v_hat, policies=None) -> SuboptimalityReport:
    """``0 <= V(pi*) - V(pi_hat*) <= 2 max_pi |V_hat(pi) - V(pi)|`` over a finite candidate set.

    ``v_true``/``v_hat`` are arrays of values or callables applied to ``policies``.
    """
    if callable(v_true):
        v_true = [v_true(p) for p in policies]
    if callable(v_hat):
        v_hat = [v_hat(p) for p in policies]
    vt = np.asarray(v_true, dtype=float)
    vh = np.asarray(v_hat, dtype=float)
    i_star, i_hat = int(vt.argmax()), int(vh.argmax())
    return SuboptimalityReport(float(vt[i_star] - vt[i_hat]), float(np.abs(vh - vt).max()), i_star, i_hat)
