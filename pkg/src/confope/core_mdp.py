"""Tabular confounded MDPs and their exact (infinite-data) oracles.

Array conventions used throughout the package (all time indices 0-based):

    kernel[h, s, u, a, s']   P_h(s' | s, u, a), leading axis of length 1 when stationary
    reward[s, a]             unconfounded reward
    ObservedPolicy.table     [h, s, a]
    ConfoundedPolicy.table   [h, s, u, a]

A leading time axis of length 1 always means "the same table at every step".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DimensionError

ATOL = 1e-12


class Memoryless:
    """Fresh confounder each step, ``u_h ~ table[h, s_h, :]``."""

    kind = "memoryless"

    def __init__(self, table):
        table = np.asarray(table, dtype=float)
        if table.ndim == 2:
            table = table[None]
        self.table = table

    def at(self, h: int) -> np.ndarray:
        return self.table[min(h, self.table.shape[0] - 1)]

    def to_dict(self):
        return {"type": self.kind, "table": self.table.tolist()}


class Global:
    """One confounder per episode, drawn from ``p`` and never changed."""

    kind = "global"

    def __init__(self, p):
        self.p = np.asarray(p, dtype=float)

    def to_dict(self):
        return {"type": self.kind, "p": self.p.tolist()}


class HistoryDeterministic:
    """Deterministic memory: ``u_1 = u0`` and ``u_{h+1} = next[u_h, a_h]``."""

    kind = "history"

    def __init__(self, u0: int, next_table):
        self.u0 = int(u0)
        self.next = np.asarray(next_table, dtype=int)

    def to_dict(self):
        return {"type": self.kind, "u0": self.u0, "next": self.next.tolist()}


ConfounderProcess = Union[Memoryless, Global, HistoryDeterministic]


def process_from_dict(d: dict) -> ConfounderProcess:
    kind = d["type"]
    if kind == "memoryless":
        return Memoryless(d["table"])
    if kind == "global":
        return Global(d["p"])
    if kind == "history":
        return HistoryDeterministic(d["u0"], d["next"])
    raise ValueError(f"unknown confounder process {kind!r}")


def _check_rows(x: np.ndarray, what: str):
    if np.any(x < -ATOL) or np.any(x > 1 + ATOL):
        raise ValueError(f"{what}: entries outside [0, 1]")
    bad = np.abs(x.sum(axis=-1) - 1.0) > 1e-12
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{what}: row {idx} does not sum to 1")


@dataclass(frozen=True, eq=False)
class ConfoundedMDP:
    S: int
    U: int
    A: int
    H: int
    kernel: np.ndarray
    reward: np.ndarray
    process: ConfounderProcess
    d0: np.ndarray
    name: str = ""

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.ndim == 4:
            kernel = kernel[None]
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "d0", np.asarray(self.d0, dtype=float))
        S, U, A, H = self.S, self.U, self.A, self.H
        if H < 1:
            raise DimensionError("horizon must be >= 1")
        if kernel.shape[1:] != (S, U, A, S) or kernel.shape[0] not in (1, H):
            raise DimensionError(f"kernel shape {kernel.shape} does not match S={S}, U={U}, A={A}, H={H}")
        if self.reward.shape != (S, A):
            raise DimensionError(f"reward shape {self.reward.shape} != {(S, A)}")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")
        if self.d0.shape != (S,):
            raise DimensionError(f"d0 shape {self.d0.shape} != {(S,)}")
        _check_rows(kernel, "kernel")
        _check_rows(self.d0, "d0")
        proc = self.process
        if isinstance(proc, Memoryless):
            if proc.table.shape[1:] != (S, U) or proc.table.shape[0] not in (1, H):
                raise DimensionError(f"memoryless table shape {proc.table.shape}")
            _check_rows(proc.table, "P(u|s)")
        elif isinstance(proc, Global):
            if proc.p.shape != (U,):
                raise DimensionError(f"P(u) shape {proc.p.shape} != {(U,)}")
            _check_rows(proc.p, "P(u)")
        elif isinstance(proc, HistoryDeterministic):
            if proc.next.shape != (U, A) or not 0 <= proc.u0 < U:
                raise DimensionError("history transition table must be total on U x A")
            if proc.next.min() < 0 or proc.next.max() >= U:
                raise DimensionError("history transition table maps outside U")
        else:
            raise TypeError(f"unsupported confounder process {type(proc).__name__}")

    @property
    def stationary(self) -> bool:
        if self.kernel.shape[0] != 1:
            return False
        if isinstance(self.process, Memoryless):
            return self.process.table.shape[0] == 1
        return True

    @property
    def reward_range(self) -> float:
        span = float(self.reward.max() - self.reward.min())
        return span if span > 0 else 1.0

    def kernel_at(self, h: int) -> np.ndarray:
        return self.kernel[min(h, self.kernel.shape[0] - 1)]

    def initial_joint(self, s0=None) -> np.ndarray:
        """Distribution of ``(s_1, u_1)``; ``s0`` overrides ``d0`` with a point mass."""
        d = self.d0 if s0 is None else np.eye(self.S)[s0]
        proc = self.process
        if isinstance(proc, Memoryless):
            return d[:, None] * proc.at(0)
        if isinstance(proc, Global):
            return d[:, None] * proc.p[None, :]
        out = np.zeros((self.S, self.U))
        out[:, proc.u0] = d
        return out

    def joint_transition(self, h: int) -> np.ndarray:
        """``T[s, u, a, s', u']`` for the step from ``h`` to ``h+1``."""
        P = self.kernel_at(h)
        proc = self.process
        if isinstance(proc, Memoryless):
            return P[..., None] * proc.at(h + 1)[None, None, None]
        T = np.zeros(P.shape + (self.U,))
        if isinstance(proc, Global):
            for u in range(self.U):
                T[:, u, :, :, u] = P[:, u]
        else:
            for u in range(self.U):
                for a in range(self.A):
                    T[:, u, a, :, proc.next[u, a]] = P[:, u, a]
        return T

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "U": self.U,
            "A": self.A,
            "H": self.H,
            "stationary": self.kernel.shape[0] == 1,
            "kernel": self.kernel.tolist(),
            "reward": self.reward.tolist(),
            "process": self.process.to_dict(),
            "d0": self.d0.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ConfoundedMDP":
        kernel = np.asarray(d["kernel"], dtype=float)
        if d.get("stationary") and kernel.shape[0] != 1:
            if not np.all(kernel == kernel[:1]):
                raise ValueError("stationary flag set but timestep kernels differ")
            kernel = kernel[:1]
        return cls(
            S=d["S"], U=d["U"], A=d["A"], H=d["H"], kernel=kernel,
            reward=d["reward"], process=process_from_dict(d["process"]), d0=d["d0"],
        )

    @classmethod
    def from_json(cls, text: str) -> "ConfoundedMDP":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# policies


def softmax(theta: np.ndarray) -> np.ndarray:
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ObservedPolicy:
    """Confounder-oblivious policy ``pi_h(a | s)``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim == 2:
            t = t[None]
        _check_rows(t, "policy")
        object.__setattr__(self, "table", t)

    def at(self, h: int) -> np.ndarray:
        return self.table[min(h, self.table.shape[0] - 1)]

    def full(self, H: int) -> np.ndarray:
        if self.table.shape[0] == H:
            return self.table
        return np.broadcast_to(self.table[:1], (H,) + self.table.shape[1:])

    @property
    def stationary(self) -> bool:
        return self.table.shape[0] == 1


@dataclass(frozen=True, eq=False)
class ConfoundedPolicy:
    """Behavior policy that may read the confounder, ``pi_h(a | s, u)``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.ndim == 3:
            t = t[None]
        _check_rows(t, "confounded policy")
        object.__setattr__(self, "table", t)

    def at(self, h: int) -> np.ndarray:
        return self.table[min(h, self.table.shape[0] - 1)]

    @property
    def stationary(self) -> bool:
        return self.table.shape[0] == 1


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Stationary softmax policy over logits ``theta[s, a]``."""

    theta: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return softmax(np.asarray(self.theta, dtype=float))

    def observed(self) -> ObservedPolicy:
        return ObservedPolicy(self.probs)


PolicyLike = Union[ObservedPolicy, ConfoundedPolicy, SoftmaxPolicy, np.ndarray]


def as_observed(pi) -> ObservedPolicy:
    if isinstance(pi, ObservedPolicy):
        return pi
    if isinstance(pi, SoftmaxPolicy):
        return pi.observed()
    if isinstance(pi, ConfoundedPolicy):
        raise TypeError("evaluation policies must not depend on the confounder")
    return ObservedPolicy(np.asarray(pi, dtype=float))


def as_confounded(pi, U: int) -> ConfoundedPolicy:
    """Lift any policy to a ``[h, s, u, a]`` table (observed ones are broadcast over u)."""
    if isinstance(pi, ConfoundedPolicy):
        return pi
    obs = as_observed(pi)
    t = np.repeat(obs.table[:, :, None, :], U, axis=2)
    return ConfoundedPolicy(t)


def _check_policy(mdp: ConfoundedMDP, pi: ConfoundedPolicy):
    t = pi.table
    if t.shape[1:] != (mdp.S, mdp.U, mdp.A) or t.shape[0] not in (1, mdp.H):
        raise DimensionError(f"policy shape {t.shape} does not match the MDP")


# ---------------------------------------------------------------------------
# forward quantities


def joint_occupancy(mdp: ConfoundedMDP, pi, s0=None) -> np.ndarray:
    """``d[h, s, u]``: distribution of ``(s_h, u_h)`` when acting with ``pi``."""
    pi = as_confounded(pi, mdp.U)
    _check_policy(mdp, pi)
    d = np.zeros((mdp.H, mdp.S, mdp.U))
    d[0] = mdp.initial_joint(s0)
    for h in range(mdp.H - 1):
        dsua = d[h][..., None] * pi.at(h)
        d[h + 1] = np.einsum("sua,suatv->tv", dsua, mdp.joint_transition(h))
    return d


def confounder_weights(mdp: ConfoundedMDP, pi_b, d=None) -> np.ndarray:
    """``w[h, s, u]``: belief over the confounder at ``(h, s)`` before the action.

    Memoryless processes use ``P_h(u | s)`` directly.  Otherwise the forward-filtered
    posterior under ``pi_b`` is used, with a uniform belief at unreachable ``(h, s)``.
    """
    if isinstance(mdp.process, Memoryless):
        return np.stack([mdp.process.at(h) for h in range(mdp.H)])
    if d is None:
        d = joint_occupancy(mdp, pi_b)
    tot = d.sum(axis=2, keepdims=True)
    w = np.full_like(d, 1.0 / mdp.U)
    np.divide(d, tot, out=w, where=tot > 0)
    return w


def marginalize_behavior(mdp: ConfoundedMDP, pi_b) -> ObservedPolicy:
    """Observed behavior policy ``pi_{b,h}(a | s) = sum_u w_h(u | s) pi_{b,h}(a | s, u)``."""
    pi_b = as_confounded(pi_b, mdp.U)
    _check_policy(mdp, pi_b)
    if isinstance(mdp.process, Memoryless) and mdp.stationary and pi_b.stationary:
        return ObservedPolicy(np.einsum("su,sua->sa", mdp.process.at(0), pi_b.at(0)))
    w = confounder_weights(mdp, pi_b)
    table = np.stack([np.einsum("su,sua->sa", w[h], pi_b.at(h)) for h in range(mdp.H)])
    return ObservedPolicy(table)


def marginalized_kernel(mdp: ConfoundedMDP) -> np.ndarray:
    """``P_h(s' | s, a) = sum_u P_h(u | s) P_h(s' | s, a, u)`` as a ``[h, s, a, s']`` table."""
    if not isinstance(mdp.process, Memoryless):
        raise TypeError("the marginalized kernel is only defined for memoryless confounders")
    T = max(mdp.kernel.shape[0], mdp.process.table.shape[0])
    return np.stack([
        np.einsum("su,suat->sat", mdp.process.at(h), mdp.kernel_at(h)) for h in range(T)
    ])


@dataclass
class ObservedModel:
    """What infinite data collected under ``pi_b`` reveals, per timestep."""

    pi_b: np.ndarray       # [h, s, a]
    kernel: np.ndarray     # [h, s, a, s']   P^{pi_b}_h(s' | s, a)
    d_s: np.ndarray        # [h, s]
    d_sa: np.ndarray       # [h, s, a]


def observed_model(mdp: ConfoundedMDP, pi_b) -> ObservedModel:
    """Exact observed behavior policy and observed transition kernel under ``pi_b``.

    The kernel uses the posterior ``P_h(u | s, a) ∝ w_h(u | s) pi_b(a | s, u)``, which
    for memoryless processes is ``P_h(u | s) pi_b(a | s, u) / pi_b(a | s)``.
    """
    pi_b = as_confounded(pi_b, mdp.U)
    _check_policy(mdp, pi_b)
    d = joint_occupancy(mdp, pi_b)
    w = confounder_weights(mdp, pi_b, d)
    H, S, A = mdp.H, mdp.S, mdp.A
    obs_pi = np.zeros((H, S, A))
    kern = np.zeros((H, S, A, S))
    for h in range(H):
        joint = w[h][..., None] * pi_b.at(h)          # [s, u, a]
        pa = joint.sum(axis=1)                        # [s, a]
        obs_pi[h] = pa
        post = np.where(pa[:, None, :] > 0, joint / np.where(pa > 0, pa, 1.0)[:, None, :],
                        w[h][..., None])
        kern[h] = np.einsum("sua,suat->sat", post, mdp.kernel_at(h))
    d_s = d.sum(axis=2)
    d_sa = np.einsum("hsu,hsua->hsa", d, np.stack([pi_b.at(h) for h in range(H)]))
    return ObservedModel(obs_pi, kern, d_s, d_sa)


def sensitivity_gamma(mdp: ConfoundedMDP, pi_b) -> float:
    """Smallest Γ for which ``pi_b`` satisfies the odds-ratio sensitivity model."""
    pi_b = as_confounded(pi_b, mdp.U)
    obs = marginalize_behavior(mdp, pi_b)
    d = joint_occupancy(mdp, pi_b)
    w = confounder_weights(mdp, pi_b, d)
    gamma = 1.0
    for h in range(mdp.H):
        pu = pi_b.at(h)
        po = obs.at(h)[:, None, :]
        relevant = w[h][..., None] > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            odds_u = pu / (1 - pu)
            odds_o = po / (1 - po)
            ratio = odds_u / odds_o
        ratio = np.where(np.isnan(ratio), 1.0, ratio)
        ratio = np.broadcast_to(ratio, pu.shape)[np.broadcast_to(relevant, pu.shape)]
        if ratio.size:
            with np.errstate(divide="ignore"):
                gamma = max(gamma, float(np.max(ratio)), float(np.max(1.0 / ratio)))
    return gamma


# ---------------------------------------------------------------------------
# values


@dataclass
class ExactValue:
    v1: np.ndarray                  # [s]  value from each start state
    v: np.ndarray | None = None     # [h, s] (memoryless only), v[H] == 0
    q: np.ndarray | None = None     # [h, s, a] (memoryless only)
    joint: np.ndarray | None = None  # [h, s, u] joint-chain values
    per_u: np.ndarray | None = None  # [u, s] (global only)

    def at(self, s0) -> float:
        return float(self.v1[s0])


def dp_values(kernel: np.ndarray, reward: np.ndarray, pi_e, H: int):
    """Backward induction on an ordinary MDP with ``kernel[h, s, a, s']``."""
    pi_e = as_observed(pi_e)
    S, A = reward.shape
    v = np.zeros((H + 1, S))
    q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        P = kernel[min(h, kernel.shape[0] - 1)]
        q[h] = reward + P @ v[h + 1]
        v[h] = np.einsum("sa,sa->s", pi_e.at(h), q[h])
    return v, q


def joint_value(mdp: ConfoundedMDP, pi_e) -> np.ndarray:
    """``V[h, s, u]`` on the joint ``(s, u)`` chain; valid for every process."""
    pi_e = as_observed(pi_e)
    v = np.zeros((mdp.H + 1, mdp.S, mdp.U))
    for h in range(mdp.H - 1, -1, -1):
        T = mdp.joint_transition(h)
        qsua = mdp.reward[:, None, :] + np.einsum("suatv,tv->sua", T, v[h + 1])
        v[h] = np.einsum("sa,sua->su", pi_e.at(h), qsua)
    return v


def _start_weights(mdp: ConfoundedMDP) -> np.ndarray:
    """``[s, u]`` confounder distribution at step 1 given the start state."""
    proc = mdp.process
    if isinstance(proc, Memoryless):
        return proc.at(0)
    if isinstance(proc, Global):
        return np.broadcast_to(proc.p, (mdp.S, mdp.U))
    return np.eye(mdp.U)[np.full(mdp.S, proc.u0)]


def exact_value(mdp: ConfoundedMDP, pi_e) -> ExactValue:
    """True value of a confounder-oblivious policy from every start state."""
    pi_e = as_observed(pi_e)
    if pi_e.table.shape[1:] != (mdp.S, mdp.A):
        raise DimensionError("evaluation policy shape does not match the MDP")
    proc = mdp.process
    if isinstance(proc, Memoryless):
        v, q = dp_values(marginalized_kernel(mdp), mdp.reward, pi_e, mdp.H)
        return ExactValue(v1=v[0], v=v, q=q)
    if isinstance(proc, Global):
        per_u = np.zeros((mdp.U, mdp.S))
        for u in range(mdp.U):
            k = mdp.kernel[:, :, u]
            v, _ = dp_values(k, mdp.reward, pi_e, mdp.H)
            per_u[u] = v[0]
        return ExactValue(v1=proc.p @ per_u, per_u=per_u)
    joint = joint_value(mdp, pi_e)
    return ExactValue(v1=joint[0, :, proc.u0], joint=joint)


def value_of(mdp: ConfoundedMDP, pi_e, start) -> float:
    """Value from a start state index or a start distribution over states."""
    v1 = exact_value(mdp, pi_e).v1
    if np.ndim(start) == 0:
        return float(v1[int(start)])
    return float(np.asarray(start) @ v1)


# ---------------------------------------------------------------------------
# occupancies and mixing


@dataclass
class OccupancyReport:
    d_b: np.ndarray      # [h, s]
    d_e: np.ndarray      # [h, s]
    d_b_sa: np.ndarray   # [h, s, a]
    d_e_sa: np.ndarray   # [h, s, a]
    tau_s: float
    tau_a: float
    d_m: float


def occupancies(mdp: ConfoundedMDP, pi_b, pi_e, s0=None) -> OccupancyReport:
    pi_b = as_confounded(pi_b, mdp.U)
    pe = as_observed(pi_e)
    db = joint_occupancy(mdp, pi_b, s0)
    de = joint_occupancy(mdp, pe, s0)
    obs_b = marginalize_behavior(mdp, pi_b)
    d_b, d_e = db.sum(2), de.sum(2)
    pb_full = obs_b.full(mdp.H)
    pe_full = pe.full(mdp.H)
    d_b_sa = d_b[..., None] * pb_full
    d_e_sa = d_e[..., None] * pe_full
    on = d_e > 0
    if np.any(on & (d_b <= 0)):
        tau_s = float("inf")
    else:
        tau_s = float(np.max(d_e[on] / d_b[on]))
    act = on[..., None] & (pe_full > 0)
    if np.any(act & (pb_full <= 0)):
        tau_a = float("inf")
    else:
        tau_a = float(np.max(np.broadcast_to(pe_full, act.shape)[act] / np.broadcast_to(pb_full, act.shape)[act]))
    d_m = float(np.min(d_b[on]))
    return OccupancyReport(d_b, d_e, d_b_sa, d_e_sa, tau_s, tau_a, d_m)


@dataclass
class MixingReport:
    t_mix: dict = field(default_factory=dict)       # u -> int | None
    diagnostic: dict = field(default_factory=dict)  # u -> "ok" | "reducible component" | "periodic" | "cap reached"
    overall: int | None = None


MIX_CAP = 10_000


def state_action_chain(P: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """``M[(s, a), (s', a')] = P(s' | s, a) pi(a' | s')`` for stationary ``P`` and ``pi``."""
    S, A = pi.shape
    return np.einsum("sat,tb->satb", P, pi).reshape(S * A, S * A)


def chain_mixing_time(M: np.ndarray, threshold: float = 0.25, cap: int = MIX_CAP):
    """Mixing time of a finite chain, or ``(None, diagnostic)`` when it does not mix."""
    n = M.shape[0]
    ev, vecs = np.linalg.eig(M.T)
    near_one = np.abs(ev - 1.0) < 1e-9
    if near_one.sum() > 1:
        return None, "reducible component"
    unit = np.abs(np.abs(ev) - 1.0) < 1e-9
    if unit.sum() > 1:
        return None, "periodic"
    pi = np.real(vecs[:, np.argmax(near_one)])
    pi = pi / pi.sum()
    D = np.eye(n)
    for t in range(1, cap + 1):
        D = D @ M
        if 0.5 * np.abs(D - pi).sum(axis=1).max() <= threshold:
            return t, "ok"
    return None, "cap reached"


def mixing_time(mdp: ConfoundedMDP, pi_b, u=None) -> MixingReport:
    """Per-confounder mixing time of the behavior-induced chain on ``S x A``."""
    if not isinstance(mdp.process, Global):
        raise TypeError("mixing time is defined for global confounders")
    if not mdp.stationary:
        raise TypeError("mixing time needs a stationary kernel")
    pi_b = as_confounded(pi_b, mdp.U)
    if not pi_b.stationary:
        raise TypeError("mixing time needs a stationary behavior policy")
    rep = MixingReport()
    us = range(mdp.U) if u is None else [u]
    for uu in us:
        M = state_action_chain(mdp.kernel[0, :, uu], pi_b.at(0)[:, uu])
        t, diag = chain_mixing_time(M)
        rep.t_mix[uu] = t
        rep.diagnostic[uu] = diag
    if all(t is not None for t in rep.t_mix.values()):
        rep.overall = max(rep.t_mix.values())
    return rep


# ---------------------------------------------------------------------------
# trajectory laws


def trajectory_loglik(mdp: ConfoundedMDP, pi_b, states, actions) -> float:
    """Log-probability of an observed ``(s, a)`` sequence, confounders summed out."""
    pi_b = as_confounded(pi_b, mdp.U)
    states = np.asarray(states)
    actions = np.asarray(actions)
    alpha = mdp.initial_joint()[states[0]].copy()
    logp = 0.0
    for h in range(len(states)):
        s, a = states[h], actions[h]
        alpha = alpha * pi_b.at(h)[s, :, a]
        if h + 1 < len(states):
            alpha = alpha @ mdp.joint_transition(h)[s, :, a, states[h + 1], :]
        z = alpha.sum()
        if z <= 0:
            return float("-inf")
        logp += np.log(z)
        alpha = alpha / z
    return float(logp)


def trajectory_law(mdp: ConfoundedMDP, pi_b, H=None, max_paths=1_000_000) -> dict:
    """Exact law of observed ``(s_1..s_H, a_1..a_H)`` sequences by enumeration.

    Keys are ``(states, actions)`` tuples; only positive-probability paths are kept.
    """
    pi_b = as_confounded(pi_b, mdp.U)
    H = mdp.H if H is None else H
    law = {}
    joints = [mdp.joint_transition(h) for h in range(H - 1)]
    init = mdp.initial_joint()
    stack = [((int(s),), (), init[s]) for s in range(mdp.S) if init[s].sum() > 0]
    while stack:
        ss, aa, alpha = stack.pop()
        h = len(aa)
        s = ss[-1]
        for a in range(mdp.A):
            w = alpha * pi_b.at(h)[s, :, a]
            if w.sum() <= 0:
                continue
            if h == H - 1:
                law[(ss, aa + (a,))] = law.get((ss, aa + (a,)), 0.0) + float(w.sum())
                if len(law) > max_paths:
                    raise ValueError("trajectory law too large to enumerate")
                continue
            nxt = np.einsum("u,utv->tv", w, joints[h][s, :, a])
            for s2 in np.flatnonzero(nxt.sum(axis=1) > 0):
                stack.append((ss + (int(s2),), aa + (a,), nxt[s2]))
    return law


def laws_equal(p: dict, q: dict, atol=1e-12) -> float:
    """Largest absolute probability difference between two enumerated laws."""
    keys = set(p) | set(q)
    return max((abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys), default=0.0)
