"""Point estimates and lower bounds for memoryless confounding.

FQE, confounded FQE, the per-step relaxation of the model-based bound, the
stationary model-based bound by projected gradient descent, a grid oracle for
small instances, and the closed-form worst-case error envelopes.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core_mdp import ConfoundedMDP, ObservedPolicy, as_observed
from .data import EmpiricalModel, analytic_model
from .errors import CoverageError, InfeasibleError
from .sensitivity import FEAS_TOL, TransitionUncertainty


@dataclass
class ValueReport:
    method: str
    v1: np.ndarray                   # [s]
    f: np.ndarray | None = None      # [H + 1, s, a], f[H] == 0
    is_lower_bound: bool = False
    s0: int | None = None
    gamma: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        if self.s0 is None:
            raise ValueError("report has no designated start state")
        return float(self.v1[self.s0])

    def at(self, s) -> float:
        return float(self.v1[s])

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            if isinstance(x, dict):
                return {str(k): clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        return clean({
            "method": self.method, "v1": self.v1, "is_lower_bound": self.is_lower_bound,
            "s0": self.s0, "gamma": self.gamma, "diagnostics": self.diagnostics,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _start_mask(model: EmpiricalModel, starts) -> np.ndarray:
    S = model.S
    if starts is None:
        if model.counts is not None:
            return model.counts.n_s[0] > 0
        return np.ones(S, dtype=bool)
    mask = np.zeros(S, dtype=bool)
    mask[np.atleast_1d(starts)] = True
    return mask


def unvisited_reachable(support: np.ndarray, visited: np.ndarray, pi_e: ObservedPolicy, H: int,
                        starts: np.ndarray) -> list:
    """Unvisited ``(h, s, a)`` cells the evaluation policy can reach through ``support``."""
    T = support.shape[0]
    reach = starts.copy()
    bad = []
    for h in range(H - 1):
        t = min(h, T - 1)
        cells = reach[:, None] & (pi_e.at(h) > 0)
        miss = cells & ~visited[t]
        bad.extend((h, int(s), int(a)) for s, a in np.argwhere(miss))
        ok = cells & visited[t]
        reach = np.any(ok[..., None] & support[t], axis=(0, 1))
    return bad


def _ensure_model(model, pi_b, mode="per-h") -> EmpiricalModel:
    if isinstance(model, ConfoundedMDP):
        if pi_b is None:
            raise ValueError("analytic mode needs the confounded behavior policy")
        return analytic_model(model, pi_b, mode)
    return model


# ---------------------------------------------------------------------------
# continuous knapsack


@dataclass
class KnapsackProblem:
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)


def min_linear_over_box_simplex(kp: KnapsackProblem):
    """Minimize ``c.m`` over ``lo <= m <= hi, sum(m) = 1``.

    Start at ``lo`` and pour the remaining mass into coordinates in ascending cost
    (ties by index), each up to its upper bound.
    """
    lo, hi, c = kp.lo, kp.hi, kp.c
    if np.any(lo > hi + FEAS_TOL) or lo.sum() > 1 + FEAS_TOL or hi.sum() < 1 - FEAS_TOL:
        raise InfeasibleError([], "infeasible knapsack")
    m = lo.copy()
    rest = 1.0 - lo.sum()
    for i in np.argsort(c, kind="stable"):
        if rest <= 0:
            break
        add = min(hi[i] - lo[i], rest)
        m[i] += add
        rest -= add
    return m, float(c @ m)


def knapsack_rows(c: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized greedy solution for many rows sharing one cost vector; returns ``m``."""
    order = np.argsort(c, kind="stable")
    cap = np.clip(hi - lo, 0.0, None)[..., order]
    rest = np.clip(1.0 - lo.sum(-1, keepdims=True), 0.0, None)
    before = np.cumsum(cap, axis=-1) - cap
    take = np.clip(rest - before, 0.0, cap)
    m = lo.copy()
    m[..., order] += take
    return m


# ---------------------------------------------------------------------------
# FQE


def fqe(model, pi_e, pi_b=None, starts=None) -> ValueReport:
    """Backward regression ``f_h(s,a) = r(s,a) + sum_s' P_h(s'|s,a) sum_a' pi_e(a'|s') f_{h+1}(s',a')``.

    ``model`` is an :class:`EmpiricalModel` or a :class:`ConfoundedMDP` (then ``pi_b``
    is required and the infinite-data model under ``pi_b`` is used).
    """
    model = _ensure_model(model, pi_b)
    pi_e = as_observed(pi_e)
    H, S, A = model.H, model.S, model.A
    if not model.analytic:
        bad = unvisited_reachable(model.P > 0, model.visited_sa, pi_e, H, _start_mask(model, starts))
        if bad:
            raise CoverageError(bad)
    f = np.zeros((H + 1, S, A))
    v = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        f[h] = model.reward
        if h < H - 1:
            f[h] += model.P_at(h) @ v[h + 1]
        v[h] = np.einsum("sa,sa->s", pi_e.at(h), f[h])
    return ValueReport("fqe", v[0], f, False, diagnostics={"analytic": model.analytic})


def naive_fqe_lower_bound(report: ValueReport, eps: float, H: int, reward_range: float = 1.0) -> ValueReport:
    """Shift a point estimate by the worst-case downward FQE error for ``Γ = 1 + eps``."""
    corr = fqe_error_envelope(eps, H)[0] * reward_range
    return ValueReport("naive-lb", report.v1 + corr, None, True, report.s0, 1.0 + eps,
                       {"correction": corr})


# ---------------------------------------------------------------------------
# CFQE and the per-step relaxation


def _check_set(model: EmpiricalModel, tu: TransitionUncertainty, pi_e, starts):
    tu.check()
    if not model.analytic:
        bad = unvisited_reachable(tu.hi > 0, tu.visited, pi_e, model.H, _start_mask(model, starts))
        if bad:
            raise CoverageError(bad)


def cfqe(model: EmpiricalModel, pi_e, tu: TransitionUncertainty, starts=None) -> ValueReport:
    """FQE whose backup takes the least favorable kernel row inside the envelope at each step."""
    pi_e = as_observed(pi_e)
    _check_set(model, tu, pi_e, starts)
    H, S, A = model.H, model.S, model.A
    f = np.zeros((H + 1, S, A))
    v = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        f[h] = model.reward
        if h < H - 1:
            lo, hi = tu.at(h)
            m = knapsack_rows(v[h + 1], lo, hi)
            f[h] += m @ v[h + 1]
        v[h] = np.einsum("sa,sa->s", pi_e.at(h), f[h])
    return ValueReport("cfqe", v[0], f, True, gamma=tu.gamma, diagnostics={"set": tu.kind})


def mb_relaxation(model: EmpiricalModel, pi_e, tu: TransitionUncertainty, s0=None) -> ValueReport:
    """Per-state minimization of the Bellman backup over each timestep's envelope.

    The product set over actions makes the joint minimum split into one knapsack per
    ``(s, a)``, combined with the evaluation policy's weights.
    """
    pi_e = as_observed(pi_e)
    _check_set(model, tu, pi_e, s0)
    H, S, A = model.H, model.S, model.A
    V = np.zeros(S)
    f = np.zeros((H + 1, S, A))
    inner = 0
    for h in range(H - 1, -1, -1):
        pe = pi_e.at(h)
        lo, hi = tu.at(h)
        newV = np.zeros(S)
        for s in range(S):
            for a in range(A):
                q = model.reward[s, a]
                if h < H - 1:
                    _, val = min_linear_over_box_simplex(KnapsackProblem(V, lo[s, a], hi[s, a]))
                    q += val
                    inner += 1
                f[h, s, a] = q
                newV[s] += pe[s, a] * q
        V = newV
    return ValueReport("mb-relax", V, f, True, s0, tu.gamma, {"inner_calls": inner})


# ---------------------------------------------------------------------------
# stationary model-based bound


def _pe_table(pi_e, H) -> np.ndarray:
    return as_observed(pi_e).full(H)


def mb_value_and_grad(P: np.ndarray, r: np.ndarray, pi_e, H: int, s0):
    """``V_1(s0)`` for a stationary kernel ``P[s, a, s']`` and its gradient in ``P``.

    ``dV_1/dP(s,a,s') = sum_h mu_h(s) pi_e,h(a|s) V_{h+1}(s')`` with ``mu_h`` the state
    distribution at step ``h`` from ``s0``.
    """
    pe = _pe_table(pi_e, H)
    S = P.shape[0]
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        V[h] = np.einsum("sa,sa->s", pe[h], r + P @ V[h + 1])
    mu = np.zeros(S)
    if np.ndim(s0) == 0:
        mu[int(s0)] = 1.0
    else:
        mu = np.asarray(s0, dtype=float).copy()
    grad = np.zeros_like(P)
    for h in range(H - 1):
        w = mu[:, None] * pe[h]
        grad += w[..., None] * V[h + 1][None, None, :]
        mu = np.einsum("sa,sat->t", w, P)
    return float(mu_start_value(V[0], s0)), grad


def mu_start_value(v1: np.ndarray, s0) -> float:
    if np.ndim(s0) == 0:
        return float(v1[int(s0)])
    return float(np.asarray(s0) @ v1)


def value_table(P: np.ndarray, r: np.ndarray, pi_e, H: int) -> np.ndarray:
    pe = _pe_table(pi_e, H)
    V = np.zeros((H + 1, P.shape[0]))
    for h in range(H - 1, -1, -1):
        V[h] = np.einsum("sa,sa->s", pe[h], r + P @ V[h + 1])
    return V


def project_box_simplex(Y: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Euclidean projection of each row of ``Y`` onto ``{lo <= x <= hi, sum(x) = 1}``.

    ``x = clip(y + lam, lo, hi)`` with ``lam`` found by bisection on the monotone residual.
    """
    Y = np.asarray(Y, dtype=float)
    a = (lo - Y).min(-1, keepdims=True)
    b = (hi - Y).max(-1, keepdims=True)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        res = np.clip(Y + mid, lo, hi).sum(-1, keepdims=True) - 1.0
        if np.all(np.abs(res) <= tol):
            break
        over = res > 0
        b = np.where(over, mid, b)
        a = np.where(over, a, mid)
    return np.clip(Y + mid, lo, hi)


def project_onto_uncertainty(P: np.ndarray, tu: TransitionUncertainty) -> np.ndarray:
    st = tu.intersect().check()
    return project_box_simplex(P, st.lo[0], st.hi[0])


def _stationary_set(model: EmpiricalModel, tu: TransitionUncertainty, pi_e, s0):
    st = tu.intersect().check()
    if not model.analytic:
        bad = unvisited_reachable(st.hi > 0, st.visited, pi_e, model.H, _start_mask(model, s0))
        if bad:
            raise CoverageError(bad)
    return st


def _initial_kernel(model: EmpiricalModel) -> np.ndarray:
    if model.stationary:
        P = model.P[0].copy()
    elif model.counts is not None:
        P = model.pooled().P[0].copy()
    else:
        P = model.P[: max(1, model.H - 1)].mean(0)
    empty = P.sum(-1) <= 0
    P[empty] = 1.0 / model.S
    return P


def mb_pgd(model: EmpiricalModel, pi_e, tu: TransitionUncertainty, s0, iters: int = 300,
           lr=None, seed: int = 0, restarts: int = 0, init=None) -> ValueReport:
    """Projected gradient descent on ``V_1(s0)`` over stationary kernels in the set.

    Starts from the projected point estimate (or ``init``) and returns the lowest
    value encountered.  With ``lr=None`` the step size is found by backtracking
    (Armijo on the projected step); otherwise the schedule ``lr(t)`` is used as is.
    ``restarts`` adds runs from random feasible kernels drawn with ``seed``.
    """
    pi_e = as_observed(pi_e)
    st = _stationary_set(model, tu, pi_e, s0)
    lo, hi = st.lo[0], st.hi[0]
    H, r = model.H, model.reward
    rng = np.random.default_rng(seed)
    starts = [project_box_simplex(_initial_kernel(model) if init is None else init, lo, hi)]
    for _ in range(restarts):
        starts.append(project_box_simplex(rng.dirichlet(np.ones(model.S), size=lo.shape[:2]), lo, hi))
    best_v, best_P, trace = math.inf, None, []
    for P in starts:
        step = 1.0
        for t in range(1, iters + 1):
            v, g = mb_value_and_grad(P, r, pi_e, H, s0)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient in projected gradient descent")
            if v < best_v:
                best_v, best_P = v, P
            trace.append(v)
            if lr is not None:
                P = project_box_simplex(P - lr(t) * g, lo, hi)
                continue
            # backtrack until the projected step gives sufficient decrease
            while True:
                Q = project_box_simplex(P - step * g, lo, hi)
                d = Q - P
                vq, _ = mb_value_and_grad(Q, r, pi_e, H, s0)
                if vq <= v + 1e-4 * np.sum(g * d) or step < 1e-10:
                    break
                step *= 0.5
            if np.max(np.abs(d)) < 1e-13:
                break
            P, step = Q, step * 2.0
        v, _ = mb_value_and_grad(P, r, pi_e, H, s0)
        if v < best_v:
            best_v, best_P = v, P
    V = value_table(best_P, r, pi_e, H)
    s0i = int(s0) if np.ndim(s0) == 0 else None
    rep = ValueReport("mb-pgd", V[0], None, True, s0i, tu.gamma,
                      {"iterations": iters * len(starts), "restarts": restarts, "heuristic_tight": True,
                       "lowest_trace": np.minimum.accumulate(trace), "value": best_v})
    rep.diagnostics["kernel"] = best_P
    return rep


# ---------------------------------------------------------------------------
# grid oracle


def _row_grid(lo: np.ndarray, hi: np.ndarray, res: float) -> np.ndarray:
    """Feasible points of ``{lo <= x <= hi, sum x = 1}`` on a grid, vertices included (S <= 3)."""
    S = lo.shape[0]

    def span(a, b):
        if b < a - FEAS_TOL:
            return np.empty(0)
        b = max(a, b)
        n = max(1, int(math.ceil((b - a) / res)))
        return np.linspace(a, b, n + 1)

    if S == 1:
        return np.ones((1, 1))
    if S == 2:
        xs = span(max(lo[0], 1 - hi[1]), min(hi[0], 1 - lo[1]))
        return np.stack([xs, 1 - xs], axis=1)
    a0, b0 = max(lo[0], 1 - hi[1] - hi[2]), min(hi[0], 1 - lo[1] - lo[2])
    x0s = list(span(a0, b0))
    for u in (lo[1], hi[1]):
        for w in (lo[2], hi[2]):
            x = 1 - u - w
            if a0 - FEAS_TOL <= x <= b0 + FEAS_TOL:
                x0s.append(min(max(x, a0), b0))
    pts = []
    for x0 in np.unique(np.round(x0s, 15)):
        x1s = span(max(lo[1], 1 - x0 - hi[2]), min(hi[1], 1 - x0 - lo[2]))
        for x1 in x1s:
            pts.append((x0, x1, 1 - x0 - x1))
    return np.array(pts)


def mb_bruteforce_oracle(tu: TransitionUncertainty, r: np.ndarray, pi_e, H: int, s0, resolution: float = 0.01,
                         max_points: int = 5_000_000) -> float:
    """Minimum of ``V_1(s0)`` over a grid of stationary kernels in the set (S <= 3, A <= 2).

    Rows the evaluation policy never uses are pinned to an arbitrary feasible point.
    """
    st = tu.intersect().check()
    lo, hi = st.lo[0], st.hi[0]
    S, A = lo.shape[:2]
    if S > 3 or A > 2:
        raise ValueError("grid oracle supports at most 3 states and 2 actions")
    pe = _pe_table(pi_e, H)
    used = pe.max(0) > 0
    grids = {}
    for s in range(S):
        for a in range(A):
            g = _row_grid(lo[s, a], hi[s, a], resolution)
            if g.size == 0:
                raise InfeasibleError([(s, a)])
            grids[(s, a)] = g if used[s, a] else g[:1]
    keys = list(grids)
    sizes = [len(grids[k]) for k in keys]
    total = int(np.prod(sizes))
    if total > max_points:
        raise ValueError(f"grid has {total} points; increase resolution")
    best = math.inf
    idx_iter = itertools.product(*[range(n) for n in sizes])
    chunk = 20000
    while True:
        block = list(itertools.islice(idx_iter, chunk))
        if not block:
            break
        block = np.array(block)
        N = len(block)
        P = np.zeros((N, S, A, S))
        for j, (s, a) in enumerate(keys):
            P[:, s, a] = grids[(s, a)][block[:, j]]
        V = np.zeros((N, S))
        for h in range(H - 1, -1, -1):
            Q = r[None] + np.einsum("nsat,nt->nsa", P, V)
            V = np.einsum("sa,nsa->ns", pe[h], Q)
        vals = V[:, int(s0)] if np.ndim(s0) == 0 else V @ np.asarray(s0)
        best = min(best, float(vals.min()))
    return best


# ---------------------------------------------------------------------------
# closed-form envelopes


def fqe_error_envelope(eps: float, H: int):
    """Interval for (FQE - truth) under ``Γ = 1 + eps`` with unit reward range."""
    if eps == 0:
        return 0.0, 0.0
    lo = (1 + eps * H - (1 + eps) ** H) / eps
    hi = ((1 + eps) ** (-H) - 1 + eps * H) / eps
    return lo, hi


def theory_envelopes(eps: float, H: int, reward_range: float = 1.0) -> dict:
    lo, hi = fqe_error_envelope(eps, H)
    cap = 2 * eps * H**2 * reward_range
    return {"fqe_interval": (lo * reward_range, hi * reward_range), "cfqe_cap": cap, "mb_cap": cap}
