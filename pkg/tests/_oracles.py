"""Independent reference computations for the test suite.

Nothing here calls the package's value, projection or knapsack code: values are
computed by forward propagation of state laws (the package uses backward DP),
linear programs go through scipy's HiGHS, and projections use dense, locally refined grids.
"""

import itertools

import numpy as np
from scipy.optimize import brentq, linprog

from confope.core_mdp import (
    ConfoundedMDP,
    ConfoundedPolicy,
    Global,
    HistoryDeterministic,
    Memoryless,
    ObservedPolicy,
    sensitivity_gamma,
)


def forward_value(mdp: ConfoundedMDP, pi_e, start) -> float:
    """Sum of expected rewards by pushing the (state, confounder) law forward in time."""
    table = pi_e.table if hasattr(pi_e, "table") else np.asarray(pi_e)
    if table.ndim == 2:
        table = table[None]
    pol = lambda h: table[min(h, table.shape[0] - 1)]
    K = lambda h: mdp.kernel[min(h, mdp.kernel.shape[0] - 1)]
    d = np.eye(mdp.S)[start] if np.ndim(start) == 0 else np.asarray(start, dtype=float)
    proc = mdp.process
    total = 0.0
    if isinstance(proc, Global):
        for u in range(mdp.U):
            mu = d.copy()
            for h in range(mdp.H):
                total += proc.p[u] * np.sum(mu[:, None] * pol(h) * mdp.reward)
                mu = np.einsum("s,sa,sat->t", mu, pol(h), K(h)[:, u])
        return float(total)
    if isinstance(proc, Memoryless):
        mu = d.copy()
        for h in range(mdp.H):
            total += np.sum(mu[:, None] * pol(h) * mdp.reward)
            pu = proc.table[min(h, proc.table.shape[0] - 1)]
            mu = np.einsum("s,sa,su,suat->t", mu, pol(h), pu, K(h))
        return float(total)
    # deterministic history: carry the joint law over (state, memory)
    joint = np.zeros((mdp.S, mdp.U))
    joint[:, proc.u0] = d
    for h in range(mdp.H):
        total += np.sum(joint.sum(1)[:, None] * pol(h) * mdp.reward)
        new = np.zeros_like(joint)
        for s, u, a in itertools.product(range(mdp.S), range(mdp.U), range(mdp.A)):
            w = joint[s, u] * pol(h)[s, a]
            if w:
                new[:, proc.next[u, a]] += w * K(h)[s, u, a]
        joint = new
    return float(total)


def enumerate_uniform_alternating_value(H: int) -> float:
    """Brute force over all 2^H action sequences of the uniform policy in the alternating fixture.

    Reward 1 is collected at every step after the first step whose action repeats the
    previous one (the step that breaks alternation moves to the rewarding state).
    """
    total = 0.0
    for seq in itertools.product((0, 1), repeat=H):
        broken_at = next((k for k in range(1, H) if seq[k] == seq[k - 1]), None)
        ret = 0 if broken_at is None else H - 1 - broken_at
        total += ret / 2**H
    return total


def lp_min_linear(c, lo, hi) -> float:
    """``min c.x`` s.t. ``lo <= x <= hi``, ``sum x = 1`` via scipy's LP solver."""
    res = linprog(c, A_eq=np.ones((1, len(c))), b_eq=[1.0], bounds=list(zip(lo, hi)), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def _grid_points(lo, hi, centre, width, res):
    """Feasible grid points of ``{lo <= x <= hi, sum x = 1}`` inside a window around ``centre``."""
    n = len(lo)
    if n == 2:
        a = max(lo[0], 1 - hi[1], centre[0] - width)
        b = min(hi[0], 1 - lo[1], centre[0] + width)
        x0 = np.linspace(a, b, max(2, int(np.ceil((b - a) / res)) + 1))
        pts = np.stack([x0, 1 - x0], 1)
    else:
        axes = [np.arange(max(lo[i], centre[i] - width), min(hi[i], centre[i] + width) + res / 2, res)
                for i in range(2)]
        a, b = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([a.ravel(), b.ravel(), 1 - a.ravel() - b.ravel()], 1)
    ok = np.all((pts >= lo - 1e-12) & (pts <= hi + 1e-12), axis=1)
    return pts[ok]


def grid_projection(y, lo, hi, res=1e-3):
    """Dense grid search for the projection onto ``{lo <= x <= hi, sum x = 1}`` (2 or 3 dims).

    A global grid at ``res`` is followed by finer grids in shrinking windows around
    the incumbent.  The first window must be wide: the grid argmin of a distance can
    sit about sqrt(2 * dist * res) away from the true projection.
    """
    y, lo, hi = (np.asarray(v, dtype=float) for v in (y, lo, hi))
    pts = _grid_points(lo, hi, np.full(len(y), 0.5), 1.0, res)
    best = pts[np.argmin(((pts - y) ** 2).sum(1))]
    width = max(0.1, 10 * np.sqrt(res))
    while res > 1e-7:
        res, width = res / 10, max(width / 10, 20 * res)
        pts = np.vstack([_grid_points(lo, hi, best, width, res), best])
        best = pts[np.argmin(((pts - y) ** 2).sum(1))]
    return best


def stationary_value(P, r, pi, H, s0):
    """Forward-propagated value of a stationary kernel ``P[s, a, s']``."""
    mu = np.eye(P.shape[0])[s0] if np.ndim(s0) == 0 else np.asarray(s0, dtype=float)
    total = 0.0
    for _ in range(H):
        total += np.sum(mu[:, None] * pi * r)
        mu = np.einsum("s,sa,sat->t", mu, pi, P)
    return float(total)


# ---------------------------------------------------------------------------
# random instances


def random_memoryless(rng, S, U, A, H, eps=None, stationary=True, reward_scale=1.0):
    """Random memoryless confounded MDP with behavior Γ = 1 + eps (or unconfounded if eps is 0).

    Returns ``(mdp, pi_b, pi_e)``.  The behavior's dependence on the confounder is
    scaled by root finding so that its sensitivity parameter equals ``1 + eps``.
    """
    T = 1 if stationary else H
    K = rng.dirichlet(np.ones(S), size=(T, S, U, A))
    pu = rng.dirichlet(np.ones(U), size=(S,))
    r = rng.uniform(-reward_scale, reward_scale, size=(S, A)) if reward_scale != 1.0 else rng.uniform(0, 1, (S, A))
    d0 = rng.dirichlet(np.ones(S))
    mdp = ConfoundedMDP(S, U, A, H, K, r, Memoryless(pu), d0)
    base = rng.normal(size=(S, 1, A))
    z = rng.normal(size=(S, U, A))

    def policy(scale):
        logits = base + scale * z
        e = np.exp(logits - logits.max(-1, keepdims=True))
        return ConfoundedPolicy(e / e.sum(-1, keepdims=True))

    if not eps:
        pi_b = policy(0.0)
    else:
        f = lambda c: sensitivity_gamma(mdp, policy(c)) - (1 + eps)
        hi = 1.0
        while f(hi) < 0:
            hi *= 2
        pi_b = policy(brentq(f, 0.0, hi, xtol=1e-14))
    pi_e = ObservedPolicy(rng.dirichlet(np.ones(A), size=S))
    return mdp, pi_b, pi_e


def random_global(rng, S, U, A, H, p=None):
    K = rng.dirichlet(np.ones(S), size=(S, U, A))
    p = rng.dirichlet(np.ones(U)) if p is None else np.asarray(p)
    r = rng.uniform(0, 1, (S, A))
    mdp = ConfoundedMDP(S, U, A, H, K, r, Global(p), rng.dirichlet(np.ones(S)))
    pi_b = ConfoundedPolicy(rng.dirichlet(np.ones(A), size=(S, U)))
    return mdp, pi_b, ObservedPolicy(rng.dirichlet(np.ones(A), size=S))


def random_history(rng, S, U, A, H):
    K = rng.dirichlet(np.ones(S), size=(S, U, A))
    nxt = rng.integers(0, U, size=(U, A))
    r = rng.uniform(0, 1, (S, A))
    mdp = ConfoundedMDP(S, U, A, H, K, r, HistoryDeterministic(0, nxt), rng.dirichlet(np.ones(S)))
    return mdp, ObservedPolicy(rng.dirichlet(np.ones(A), size=S))
