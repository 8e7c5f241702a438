"""Environment constructors and adversarial fixtures with analytically known quantities.

Every constructor re-derives the entries of ``known`` with the exact oracles in
:mod:`confope.core_mdp` and refuses to build if a closed form disagrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_mdp import (
    ConfoundedMDP,
    ConfoundedPolicy,
    Global,
    HistoryDeterministic,
    Memoryless,
    ObservedPolicy,
    exact_value,
    laws_equal,
    observed_model,
    occupancies,
    sensitivity_gamma,
    trajectory_law,
)


class FixtureError(ValueError):
    pass


@dataclass
class FixtureBundle:
    name: str
    mdp: ConfoundedMDP
    pi_b: ConfoundedPolicy
    pi_e: ObservedPolicy
    known: dict = field(default_factory=dict)
    mdp2: ConfoundedMDP | None = None
    pi_b2: ConfoundedPolicy | None = None
    start: int | None = None          # designated evaluation start state
    state_map: np.ndarray | None = None  # projection used when clustering
    params: dict = field(default_factory=dict)

    @property
    def H(self) -> int:
        return self.mdp.H


def _require(cond: bool, what: str):
    if not cond:
        raise FixtureError(f"fixture self-check failed: {what}")


def _prob(x, name):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name}={x} is not a probability")


# ---------------------------------------------------------------------------
# indistinguishable memoryless pair


def thm1_pair(eps: float = 0.1, z: float = 0.0, z1: float = 0.3, z2: float = 0.7, H: int = 10) -> FixtureBundle:
    """Two memoryless confounded MDPs that generate identical data but differ in value.

    States: 0 is a reward-free start state, 1 and 2 are the two payoff states
    (reward 1 in state 1).  Transitions ignore the current state, so the episode has
    ``H`` reward-bearing draws after the start and the MDP horizon is ``H + 1``.
    Actions 0 and 1 stand for the two actions; the evaluation policy always plays 0.
    """
    if not 0.0 <= eps < 0.5:
        raise ValueError("eps must lie in [0, 1/2)")
    for v, n in ((z, "z"), (z1, "z1"), (z2, "z2")):
        _prob(v, n)
    if H < 1:
        raise ValueError("H must be >= 1")
    S, U, A = 3, 2, 2

    def kernel(a2_pair):
        k = np.zeros((S, U, A, S))
        rows = {(0, 0): z, (1, 0): 1 - z, (0, 1): a2_pair[0], (1, 1): a2_pair[1]}
        for (u, a), p1 in rows.items():
            k[:, u, a, 1] = p1
            k[:, u, a, 2] = 1 - p1
        return k

    reward = np.zeros((S, A))
    reward[1] = 1.0
    d0 = np.array([1.0, 0.0, 0.0])
    pu1 = np.array([0.5 - eps, 0.5 + eps])
    pu2 = pu1[::-1].copy()
    m1 = ConfoundedMDP(S, U, A, H + 1, kernel((z1, z2)), reward, Memoryless(np.tile(pu1, (S, 1))), d0, "thm1-M1")
    m2 = ConfoundedMDP(S, U, A, H + 1, kernel((z2, z1)), reward, Memoryless(np.tile(pu2, (S, 1))), d0, "thm1-M2")

    def behavior(p_u1):
        t = np.zeros((S, U, A))
        t[:, 0, 0], t[:, 1, 0] = p_u1, 1 - p_u1
        t[..., 1] = 1 - t[..., 0]
        return ConfoundedPolicy(t)

    pb1 = behavior(0.5 + eps)
    pb2 = behavior(0.5 - eps)
    pi_e = ObservedPolicy(np.tile([1.0, 0.0], (S, 1)))

    o1, o2 = observed_model(m1, pb1), observed_model(m2, pb2)
    joint1 = o1.pi_b[0][..., None] * o1.kernel[0]
    joint2 = o2.pi_b[0][..., None] * o2.kernel[0]
    v1 = exact_value(m1, pi_e).at(0)
    v2 = exact_value(m2, pi_e).at(0)
    gap = 2 * eps * H * abs(1 - 2 * z)
    gamma = max(sensitivity_gamma(m1, pb1), sensitivity_gamma(m2, pb2))
    gamma_closed = (0.5 + eps) / (0.5 - eps) * (0.5 + 2 * eps**2) / (0.5 - 2 * eps**2)

    _require(np.max(np.abs(joint1 - joint2)) <= 1e-12, "observed joint tables differ")
    _require(abs(abs(v1 - v2) - gap) <= 1e-9, "value gap")
    _require(abs(gamma - gamma_closed) <= 1e-9 * gamma_closed, "sensitivity parameter")
    _require(abs(o1.pi_b[0, 1, 0] - (0.5 - 2 * eps**2)) <= 1e-12, "observed behavior policy")

    known = {
        "observed_joint_1": joint1,
        "observed_joint_2": joint2,
        "observed_pi_b": 0.5 - 2 * eps**2,
        "value_1": v1,
        "value_2": v2,
        "value_gap": gap,
        "gamma": gamma,
    }
    return FixtureBundle("thm1", m1, pb1, pi_e, known, mdp2=m2, pi_b2=pb2, start=0,
                         params=dict(eps=eps, z=z, z1=z1, z2=z2, H=H))


# ---------------------------------------------------------------------------
# deterministic-memory chain where infinite-data FQE fails


def memory_chain(H: int = 64) -> FixtureBundle:
    """Two states, two actions and a one-bit memory of "only a1 so far".

    While the memory is intact, action 0 keeps the agent in state 0 (reward 1 for
    action 0 there).  Any other step moves to state 0 w.p. ``1/H`` and to state 1
    otherwise, and a single deviation from action 0 erases the memory for good.
    """
    if H < 2:
        raise ValueError("H must be >= 2")
    S, U, A = 2, 2, 2
    k = np.zeros((S, U, A, S))
    k[..., 0] = 1.0 / H
    k[..., 1] = 1.0 - 1.0 / H
    k[:, 0, 0] = [1.0, 0.0]
    nxt = np.array([[0, 1], [1, 1]])
    reward = np.zeros((S, A))
    reward[0, 0] = 1.0
    mdp = ConfoundedMDP(S, U, A, H, k, reward, HistoryDeterministic(0, nxt), np.array([1.0, 0.0]), "memory-chain")
    pi_b = ConfoundedPolicy(np.full((S, U, A), 0.5))
    pi_e = ObservedPolicy(np.tile([1.0, 0.0], (S, 1)))

    v = exact_value(mdp, pi_e).at(0)
    occ = occupancies(mdp, pi_b, pi_e)
    _require(abs(v - H) <= 1e-9, "true value equals H")
    _require(abs(occ.tau_a - 2.0) <= 1e-12, "action ratio equals 2")
    known = {"true_value": float(H), "fqe_cap": 2 * math.log2(H) + 9, "tau_a": occ.tau_a}
    return FixtureBundle("memory-chain", mdp, pi_b, pi_e, known, start=0, params=dict(H=H))


# ---------------------------------------------------------------------------
# alternating action-sequence pair (history-dependent confounder)

ALT_START, ALT_END_0, ALT_END_1, ALT_BROKEN = 0, 1, 2, 3


def alternating_value(H: int) -> float:
    """Exact value of the uniform policy in the first alternating MDP."""
    return H - 3 + 2.0 ** (2 - H)


def alternating_pair(H: int = 10) -> FixtureBundle:
    """Pair where behavior always alternates actions and thus never sees a reward.

    The confounder records whether the action sequence so far alternates, on the
    quotient {start, alternating ending in action 0, alternating ending in action 1,
    broken}.  In the first MDP the step leaves state 1 (index 1, reward 0) for state 0
    (reward 1) as soon as the sequence including the current action is broken; in the
    second MDP the agent stays in state 1 forever.
    """
    if H < 2:
        raise ValueError("H must be >= 2")
    S, U, A = 2, 4, 2
    nxt = np.array([
        [ALT_END_0, ALT_END_1],
        [ALT_BROKEN, ALT_END_1],
        [ALT_END_0, ALT_BROKEN],
        [ALT_BROKEN, ALT_BROKEN],
    ])
    k1 = np.zeros((S, U, A, S))
    for u in range(U):
        for a in range(A):
            k1[:, u, a, 0 if nxt[u, a] == ALT_BROKEN else 1] = 1.0
    k2 = np.zeros((S, U, A, S))
    k2[..., 1] = 1.0
    reward = np.zeros((S, A))
    reward[0] = 1.0
    d0 = np.array([0.0, 1.0])
    m1 = ConfoundedMDP(S, U, A, H, k1, reward, HistoryDeterministic(ALT_START, nxt), d0, "alternating-M1")
    m2 = ConfoundedMDP(S, U, A, H, k2, reward, HistoryDeterministic(ALT_START, nxt), d0, "alternating-M2")
    t = np.zeros((S, U, A))
    t[:, ALT_START] = 0.5
    t[:, ALT_END_0, 1] = 1.0
    t[:, ALT_END_1, 0] = 1.0
    t[:, ALT_BROKEN] = 0.5
    pi_b = ConfoundedPolicy(t)
    pi_e = ObservedPolicy(np.full((S, A), 0.5))

    law1, law2 = trajectory_law(m1, pi_b), trajectory_law(m2, pi_b)
    v1 = exact_value(m1, pi_e).at(1)
    v2 = exact_value(m2, pi_e).at(1)
    _require(laws_equal(law1, law2) <= 1e-12, "observed laws differ")
    _require(len(law1) == 2, "behavior produces exactly two trajectories")
    _require(all(set(s) == {1} for s, _ in law1), "behavior stays in the zero-reward state")
    _require(abs(v1 - alternating_value(H)) <= 1e-9, "closed-form value")
    _require(v2 == 0.0, "second MDP is worthless")
    known = {
        "value_1": v1,
        "value_2": 0.0,
        "gamma": sensitivity_gamma(m1, pi_b),
        "law": law1,
    }
    return FixtureBundle("alternating", m1, pi_b, pi_e, known, mdp2=m2, pi_b2=pi_b, start=1, params=dict(H=H))


# ---------------------------------------------------------------------------
# Boolean hypercube with a rewarding twin of the all-ones corner


def hypercube_kernel(n: int, p: float) -> np.ndarray:
    """``[s, a, s']`` kernel on ``{0,1}^n`` (bit j of the index is coordinate j) plus s_r = 2^n."""
    N = 2**n
    S = N + 1
    sr, ones = N, N - 1
    k = np.zeros((S, 2, S))
    for s in range(N):
        zeros = [j for j in range(n) if not (s >> j) & 1]
        kz = len(zeros)
        # action 0: push towards ones
        if kz > 1:
            for j in zeros:
                k[s, 0, s | (1 << j)] += 1.0 / n
            k[s, 0, s] += (n - kz) / n
        elif kz == 1:
            k[s, 0, sr] += p / n
            k[s, 0, ones] += (1 - p) / n
            k[s, 0, s] += 1 - 1.0 / n
        else:
            k[s, 0, sr] += p
            k[s, 0, s] += 1 - p
        # action 1: push towards zeros
        if s == ones:
            continue
        for j in range(n):
            if (s >> j) & 1:
                k[s, 1, s & ~(1 << j)] += 1.0 / n
        k[s, 1, s] += kz / n
    k[sr, 0, sr] = p
    k[sr, 0, ones] = 1 - p
    for s in (sr, ones):
        for j in range(n):
            k[s, 1, ones & ~(1 << j)] = 1.0 / n
    return k


def hypercube_pair(n: int = 8, p=((0.99, 0.98), (0.01, 0.02)), H: int = 2) -> FixtureBundle:
    """Pair of global-confounder MDPs that are indistinguishable for short horizons.

    ``p[i][j]`` is the traffic into the rewarding state for MDP ``i`` under confounder
    ``j``.  Data start at the all-zeros corner; values are compared from the all-ones
    corner under the policy that always plays action 0.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (2, 2):
        raise ValueError("p must be a 2x2 matrix")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("every p entry must lie in [0, 1]")
    if n < 2 or H < 1:
        raise ValueError("need n >= 2 and H >= 1")
    S, U, A = 2**n + 1, 2, 2
    reward = np.zeros((S, A))
    reward[2**n] = 1.0
    d0 = np.zeros(S)
    d0[0] = 1.0

    def build(i):
        k = np.stack([hypercube_kernel(n, p[i, j]) for j in range(U)], axis=1)
        return ConfoundedMDP(S, U, A, H, k, reward, Global(np.array([0.5, 0.5])), d0, f"hypercube-M{i + 1}")

    m1, m2 = build(0), build(1)
    pi_b = ConfoundedPolicy(np.full((S, U, A), 0.5))
    pi_e = ObservedPolicy(np.tile([1.0, 0.0], (S, 1)))
    ones = 2**n - 1
    v1 = exact_value(m1, pi_e).at(ones)
    v2 = exact_value(m2, pi_e).at(ones)
    gap = (H - 1) * abs(p[0].sum() - p[1].sum()) / 2
    _require(abs(abs(v1 - v2) - gap) <= 1e-9, "value gap")
    known = {"value_1": v1, "value_2": v2, "value_gap": gap}
    if 4 * H <= n:
        laws = []
        for m in (m1, m2):
            for j in range(U):
                mj = ConfoundedMDP(S, U, A, H, m.kernel, reward, Global(np.eye(U)[j]), d0)
                laws.append(trajectory_law(mj, pi_b))
        diff = max(laws_equal(laws[0], q) for q in laws[1:])
        _require(diff <= 1e-12, "short-horizon trajectory laws differ")
        known["laws_identical"] = True
    return FixtureBundle("hypercube", m1, pi_b, pi_e, known, mdp2=m2, pi_b2=pi_b, start=ones,
                         params=dict(n=n, p=p.tolist(), H=H))


# ---------------------------------------------------------------------------
# 4x4 gridworld with an i.i.d. slip confounder

GRID = 4
GOAL = 15
MOVES = [(0, -1), (0, 1), (-1, 0), (1, 0)]  # W, E, N, S as (drow, dcol)


def _grid_step(s: int, a: int) -> int:
    r, c = divmod(s, GRID)
    dr, dc = MOVES[a]
    r2, c2 = r + dr, c + dc
    if not (0 <= r2 < GRID and 0 <= c2 < GRID):
        return s
    return r2 * GRID + c2


def grid_distances(pit=None) -> np.ndarray:
    """Fewest moves to the goal avoiding ``pit`` (``inf`` for the pit itself)."""
    dist = np.full(GRID * GRID, np.inf)
    dist[GOAL] = 0
    frontier = [GOAL]
    while frontier:
        nxt = []
        for t in frontier:
            for s in range(GRID * GRID):
                if s != pit and np.isinf(dist[s]) and any(_grid_step(s, a) == t for a in range(4)):
                    dist[s] = dist[t] + 1
                    nxt.append(s)
        frontier = nxt
    return dist


def grid_greedy_action(s: int, pit=None) -> int:
    """First action (in WENS order) on a shortest path to the goal around ``pit``."""
    dist = grid_distances(pit)
    return int(np.argmin([dist[_grid_step(s, a)] if _grid_step(s, a) != s else np.inf for a in range(4)]))


def gridworld_iid(slip_high: float = 0.5, slip_low: float = 0.05, p_u: float = 0.5,
                  explore=(0.6, 0.1), H: int = 8, step_reward: float = -0.1,
                  goal_reward: float = 0.2, greedy_mass: float = 0.95, pit=10,
                  pit_reward: float = -1.0) -> FixtureBundle:
    """Gridworld whose behavior policy reacts to an i.i.d. hidden wind.

    Confounder 1 ("windy", probability ``p_u``) slips with ``slip_high``, confounder 0
    with ``slip_low``; a slip moves in a uniformly random direction.  Goal (cell 15)
    and pit (``pit``, None for no pit) are absorbing.  The behavior is epsilon-greedy
    around a shortest path avoiding the pit, with exploration rate ``explore[u]``.  The
    evaluation policy puts ``greedy_mass`` on the greedy action and spreads the rest
    uniformly.
    """
    for v, n in ((slip_high, "slip_high"), (slip_low, "slip_low"), (p_u, "p_u"),
                 (explore[0], "explore[0]"), (explore[1], "explore[1]"), (greedy_mass, "greedy_mass")):
        _prob(v, n)
    S, U, A = GRID * GRID, 2, 4
    slips = (slip_low, slip_high)
    k = np.zeros((S, U, A, S))
    for s in range(S):
        for u in range(U):
            for a in range(A):
                if s in (GOAL, pit):
                    k[s, u, a, s] = 1.0
                    continue
                k[s, u, a, _grid_step(s, a)] += 1 - slips[u]
                for b in range(A):
                    k[s, u, a, _grid_step(s, b)] += slips[u] / A
    reward = np.full((S, A), step_reward)
    reward[GOAL] = goal_reward
    d0 = np.ones(S)
    d0[GOAL] = 0.0
    if pit is not None:
        if not (0 <= pit < S) or pit in (GOAL, 13):
            raise ValueError("pit must be a cell other than the goal and the start")
        reward[pit] = pit_reward
        d0[pit] = 0.0
    d0 /= d0.sum()
    mdp = ConfoundedMDP(S, U, A, H, k, reward, Memoryless(np.tile([1 - p_u, p_u], (S, 1))), d0, "gridworld")
    greedy = np.zeros((S, A))
    greedy[np.arange(S), [grid_greedy_action(s, pit) for s in range(S)]] = 1.0
    tb = np.stack([(1 - e) * greedy + e / A for e in explore], axis=1)
    pi_b = ConfoundedPolicy(tb)
    pi_e = ObservedPolicy(greedy_mass * greedy + (1 - greedy_mass) / A)
    v = exact_value(mdp, pi_e).v1
    _require(np.all(np.isfinite(v)), "finite values")
    known = {"values": v, "gamma": sensitivity_gamma(mdp, pi_b)}
    return FixtureBundle("gridworld", mdp, pi_b, pi_e, known, start=13,
                         params=dict(slip_high=slip_high, slip_low=slip_low, p_u=p_u,
                                     explore=list(explore), H=H, pit=pit))


# ---------------------------------------------------------------------------
# reduced sepsis-style simulator with a global "diabetic" confounder


def sepsis_toy(n_levels: int = 3, U: int = 2, H: int = 60, p_diabetic: float = 0.5) -> FixtureBundle:
    """Heart rate, blood pressure and glucose on ``n_levels`` levels each, two actions.

    Action 1 is "treat".  Untreated vitals drift away from the normal (middle) level;
    treatment pulls them back, less effectively for diabetics.  Glucose is redrawn
    each step from a confounder-dependent distribution and is hidden from clustering
    through ``state_map``.  Reward 1 when heart rate and blood pressure are both normal.
    """
    L = n_levels
    if L < 2 or L > 5:
        raise ValueError("n_levels must be in 2..5")
    if U < 1 or U > 2:
        raise ValueError("U must be 1 or 2")
    _prob(p_diabetic, "p_diabetic")
    S, A = L**3, 2
    mid = L // 2
    # per-confounder parameters: treatment success, untreated drift
    heal = [0.7, 0.35][:U]
    drift = [0.2, 0.35][:U]
    gluc = [np.exp(-0.8 * np.abs(np.arange(L) - mid)), np.exp(0.8 * (np.arange(L) - mid))][:U]
    gluc = [g / g.sum() for g in gluc]

    def vital_row(level, a, u):
        row = np.zeros(L)
        if a == 1:
            toward = level + np.sign(mid - level)
            if level == mid:
                row[mid] = 1.0
            else:
                row[int(toward)] += heal[u]
                row[level] += 1 - heal[u]
        else:
            away = min(L - 1, level + 1) if level >= mid else max(0, level - 1)
            row[away] += drift[u]
            row[level] += 1 - drift[u]
        return row

    k = np.zeros((S, U, A, S))
    for hr in range(L):
        for bp in range(L):
            for g in range(L):
                s = (hr * L + bp) * L + g
                for u in range(U):
                    for a in range(A):
                        joint = np.einsum("i,j,k->ijk", vital_row(hr, a, u), vital_row(bp, a, u), gluc[u])
                        k[s, u, a] = joint.reshape(-1)
    reward = np.zeros((S, A))
    for hr in range(L):
        for bp in range(L):
            if hr == mid and bp == mid:
                reward[(hr * L + bp) * L: (hr * L + bp + 1) * L] = 1.0
    d0 = np.full(S, 1.0 / S)
    pu = np.array([1 - p_diabetic, p_diabetic])[:U] if U == 2 else np.array([1.0])
    mdp = ConfoundedMDP(S, U, A, H, k, reward, Global(pu), d0, "sepsis")
    treat = [0.7, 0.4]
    tb = np.zeros((S, U, A))
    for s in range(S):
        hr, bp = divmod(s // L, L)
        abnormal = hr != mid or bp != mid
        for u in range(U):
            t = treat[u] if abnormal else 0.15
            tb[s, u] = [1 - t, t]
    pi_b = ConfoundedPolicy(tb)
    pi_e = ObservedPolicy(tb.mean(axis=1))
    state_map = np.arange(S) // L
    # separating pair: abnormal heart rate, treated, on the projected (hr, bp) space
    s_sep = ((0 * L + mid) * L + mid)
    known = {"separating_pair": (s_sep, 1)}
    if U == 2:
        proj = np.zeros((S, L * L))
        proj[np.arange(S), state_map] = 1.0
        rows = k[s_sep, :, 1] @ proj
        delta = float(np.linalg.norm(rows[0] - rows[1]))
        _require(delta > 0, "separation at the designated pair")
        known["separation_delta"] = delta
    return FixtureBundle("sepsis", mdp, pi_b, pi_e, known, start=None, state_map=state_map,
                         params=dict(n_levels=L, U=U, H=H, p_diabetic=p_diabetic))


# ---------------------------------------------------------------------------
# synthetic two-component mixture for clustering experiments


def two_mixture(H: int | None = None, n_ref: int = 200, lazy: float = 0.2, horizon_factor: float = 20.0) -> FixtureBundle:
    """Three-state, two-action mixture of two MDPs with strongly confounded behavior.

    Under confounder 0 action 0 reaches the rewarding state 0 w.p. 0.9, under
    confounder 1 only w.p. 0.1; action 1 reaches it w.p. 0.55 under both.  Behavior
    picks action 0 w.p. 0.9 under confounder 0 and 0.1 under confounder 1, so pooled
    data overrate action 0.  Each row is mixed with a self-loop of weight ``lazy``.
    Without an explicit ``H`` the horizon is ``horizon_factor * t_mix * ln(n_ref)``.
    """
    from .core_mdp import mixing_time

    S, U, A = 3, 2, 2
    base = {
        (0, 0): [0.9, 0.05, 0.05],
        (1, 0): [0.1, 0.45, 0.45],
        (0, 1): [0.55, 0.225, 0.225],
        (1, 1): [0.55, 0.225, 0.225],
    }
    k = np.zeros((S, U, A, S))
    for (u, a), row in base.items():
        for s in range(S):
            k[s, u, a] = (1 - lazy) * np.asarray(row) + lazy * np.eye(S)[s]
    reward = np.zeros((S, A))
    reward[0] = 1.0
    d0 = np.full(S, 1.0 / S)
    tb = np.zeros((S, U, A))
    tb[:, 0] = [0.9, 0.1]
    tb[:, 1] = [0.1, 0.9]
    pi_b = ConfoundedPolicy(tb)
    probe = ConfoundedMDP(S, U, A, 1, k, reward, Global(np.array([0.5, 0.5])), d0)
    t_mix = mixing_time(probe, pi_b).overall
    if H is None:
        H = int(math.ceil(horizon_factor * t_mix * math.log(n_ref)))
    mdp = ConfoundedMDP(S, U, A, H, k, reward, Global(np.array([0.5, 0.5])), d0, "mixture")
    pi_e = ObservedPolicy(np.full((S, A), 0.5))
    delta = max(float(np.linalg.norm(k[s, 0, a] - k[s, 1, a])) for s in range(S) for a in range(A))
    _require(delta >= 0.5, "separation of at least 0.5")
    known = {"t_mix": t_mix, "separation_delta": delta, "values": exact_value(mdp, pi_e).v1}
    return FixtureBundle("mixture", mdp, pi_b, pi_e, known, start=0, params=dict(H=H, lazy=lazy, n_ref=n_ref))


ENVIRONMENTS = {
    "thm1": thm1_pair,
    "memory-chain": memory_chain,
    "alternating": alternating_pair,
    "hypercube": hypercube_pair,
    "gridworld": gridworld_iid,
    "sepsis": sepsis_toy,
    "mixture": two_mixture,
}


def make(env_id: str, **params) -> FixtureBundle:
    try:
        ctor = ENVIRONMENTS[env_id]
    except KeyError:
        raise KeyError(f"unknown environment {env_id!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return ctor(**params)
