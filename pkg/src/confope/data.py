"""Trajectory simulation, dataset persistence, counts, empirical models and Hoeffding widths."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .core_mdp import (
    ConfoundedMDP,
    Global,
    HistoryDeterministic,
    Memoryless,
    as_confounded,
    observed_model,
)


class DatasetParseError(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


@dataclass(frozen=True)
class Trajectory:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    hidden_u: np.ndarray | None = None

    def __len__(self):
        return len(self.s)


@dataclass(eq=False)
class Dataset:
    """``n`` episodes of equal length stored as ``(n, H)`` arrays.

    ``hidden_u`` holds the true confounders for diagnostics; estimators never read it.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    hidden_u: np.ndarray | None = None
    env_id: str = ""
    seed: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.hidden_u is not None:
            self.hidden_u = np.asarray(self.hidden_u, dtype=np.int64)
        shapes = {self.states.shape, self.actions.shape, self.rewards.shape}
        if self.hidden_u is not None:
            shapes.add(self.hidden_u.shape)
        if len(shapes) != 1 or self.states.ndim != 2:
            raise ValueError("trajectory arrays must share one (n, H) shape")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def H(self) -> int:
        return self.states.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> Trajectory:
        u = None if self.hidden_u is None else self.hidden_u[i]
        return Trajectory(self.states[i], self.actions[i], self.rewards[i], u)

    @property
    def trajectories(self):
        return [self[i] for i in range(self.n)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        u = None if self.hidden_u is None else self.hidden_u[idx]
        return Dataset(self.states[idx], self.actions[idx], self.rewards[idx], u, self.env_id, self.seed)

    def episode_confounder(self) -> np.ndarray:
        """Per-trajectory confounder label (global processes: constant within an episode)."""
        if self.hidden_u is None:
            raise ValueError("dataset carries no hidden confounders")
        return self.hidden_u[:, 0]

    def metadata(self) -> dict:
        return {"env_id": self.env_id, "seed": int(self.seed), "n": self.n, "H": self.H}


# ---------------------------------------------------------------------------
# simulation


def _substream_uniforms(seed: int, ids, H: int) -> np.ndarray:
    """Uniform draws for trajectories ``ids``; trajectory ``i`` always gets the same stream."""
    out = np.empty((len(ids), H + 1, 3))
    for row, i in enumerate(ids):
        bitgen = np.random.Philox(np.random.SeedSequence(seed, spawn_key=(int(i),)))
        out[row] = np.random.Generator(bitgen).random((H + 1, 3))
    return out


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _rollout(mdp: ConfoundedMDP, table: np.ndarray, draws: np.ndarray, s0) -> tuple:
    n, H = draws.shape[0], mdp.H
    proc = mdp.process
    S_ = np.zeros((n, H), dtype=np.int64)
    A_ = np.zeros((n, H), dtype=np.int64)
    R_ = np.zeros((n, H))
    U_ = np.zeros((n, H), dtype=np.int64)
    if s0 is None:
        s = _categorical(np.broadcast_to(mdp.d0, (n, mdp.S)), draws[:, 0, 0])
    else:
        s = np.full(n, int(s0), dtype=np.int64)
    if isinstance(proc, Memoryless):
        u = _categorical(proc.at(0)[s], draws[:, 0, 1])
    elif isinstance(proc, Global):
        u = _categorical(np.broadcast_to(proc.p, (n, mdp.U)), draws[:, 0, 1])
    else:
        u = np.full(n, proc.u0, dtype=np.int64)
    T = table.shape[0]
    for h in range(H):
        pol = table[min(h, T - 1)]
        a = _categorical(pol[s, u], draws[:, h + 1, 0])
        S_[:, h], A_[:, h], U_[:, h] = s, a, u
        R_[:, h] = mdp.reward[s, a]
        if h == H - 1:
            break
        s_next = _categorical(mdp.kernel_at(h)[s, u, a], draws[:, h + 1, 1])
        if isinstance(proc, Memoryless):
            u = _categorical(proc.at(h + 1)[s_next], draws[:, h + 1, 2])
        elif isinstance(proc, HistoryDeterministic):
            u = proc.next[u, a]
        s = s_next
    return S_, A_, R_, U_


def default_workers() -> int:
    env = os.environ.get("CONFOPE_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def simulate(env, pi_b=None, n: int = 100, seed: int = 0, s0=None, env_id: str | None = None,
             workers: int | None = None, chunk: int = 4096) -> Dataset:
    """Draw ``n`` i.i.d. episodes.

    ``env`` is a :class:`~confope.environments.FixtureBundle` (its behavior policy is
    used unless ``pi_b`` is given) or a bare :class:`ConfoundedMDP`.  Each episode
    reads its randomness from its own counter-based substream keyed by
    ``(seed, episode index)``, so results do not depend on chunking or worker count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(env, ConfoundedMDP):
        mdp = env
        if pi_b is None:
            raise ValueError("a behavior policy is required with a bare MDP")
        name = env_id or mdp.name
    else:
        mdp = env.mdp
        pi_b = env.pi_b if pi_b is None else pi_b
        name = env_id or env.name
    table = as_confounded(pi_b, mdp.U).table
    H = mdp.H
    blocks = [range(i, min(n, i + chunk)) for i in range(0, n, chunk)]

    def run(ids):
        return _rollout(mdp, table, _substream_uniforms(seed, ids, H), s0)

    workers = workers or default_workers()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    S_, A_, R_, U_ = (np.concatenate([p[k] for p in parts]) for k in range(4))
    return Dataset(S_, A_, R_, U_, name, seed)


def monte_carlo_value(mdp: ConfoundedMDP, pi, n: int, seed: int = 0, s0=None):
    """Mean and standard error of the episode return under ``pi``."""
    ds = simulate(mdp, pi, n=n, seed=seed, s0=s0)
    ret = ds.rewards.sum(axis=1)
    return float(ret.mean()), float(ret.std(ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------------------
# persistence


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save(ds: Dataset, path) -> None:
    """One JSON object per line, ``{"s", "a", "r", "u"}``, plus a metadata sidecar."""
    path = Path(path)
    with open(path, "w") as f:
        for i in range(ds.n):
            rec = {"s": ds.states[i].tolist(), "a": ds.actions[i].tolist(), "r": ds.rewards[i].tolist()}
            if ds.hidden_u is not None:
                rec["u"] = ds.hidden_u[i].tolist()
            f.write(json.dumps(rec) + "\n")
    with open(_sidecar(path), "w") as f:
        json.dump(ds.metadata(), f, sort_keys=True)
        f.write("\n")


def load(path) -> Dataset:
    path = Path(path)
    S_, A_, R_, U_ = [], [], [], []
    has_u = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                s, a, r = rec["s"], rec["a"], rec["r"]
            except json.JSONDecodeError as e:
                raise DatasetParseError(lineno, f"invalid JSON ({e.msg})") from None
            except (KeyError, TypeError) as e:
                raise DatasetParseError(lineno, f"missing field {e}") from None
            if not (len(s) == len(a) == len(r)):
                raise DatasetParseError(lineno, "s, a and r differ in length")
            if S_ and len(s) != len(S_[0]):
                raise DatasetParseError(lineno, "episode length differs from earlier lines")
            u = rec.get("u")
            if has_u is None:
                has_u = u is not None
            elif has_u != (u is not None):
                raise DatasetParseError(lineno, "field 'u' present on some lines only")
            S_.append(s)
            A_.append(a)
            R_.append(r)
            if u is not None:
                U_.append(u)
    if not S_:
        raise DatasetParseError(0, "empty dataset")
    meta = {}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text())
    return Dataset(np.array(S_), np.array(A_), np.array(R_), np.array(U_) if has_u else None,
                   meta.get("env_id", ""), meta.get("seed", 0))


# ---------------------------------------------------------------------------
# counts


def logmeanexp_neg(counts) -> float:
    """``-log(mean(exp(-N)))``, a soft minimum of the counts."""
    c = np.asarray(counts, dtype=float).ravel()
    if c.size == 0:
        return 0.0
    return float(-(logsumexp(-c) - math.log(c.size)))


@dataclass
class CountStats:
    """Per-timestep counts.  ``n_sas[h]`` counts transitions out of step ``h``."""

    n_s: np.ndarray      # [h, s]
    n_sa: np.ndarray     # [h, s, a]
    n_sas: np.ndarray    # [h, s, a, s']  (last step is all zeros)
    r_sum: np.ndarray    # [h, s, a]

    @property
    def H(self) -> int:
        return self.n_s.shape[0]

    @property
    def S(self) -> int:
        return self.n_s.shape[1]

    @property
    def A(self) -> int:
        return self.n_sa.shape[2]

    @property
    def n_sa_next(self) -> np.ndarray:
        """State-action counts restricted to steps that have a successor."""
        return self.n_sas.sum(axis=-1)

    def pooled(self) -> "CountStats":
        return CountStats(self.n_s.sum(0, keepdims=True), self.n_sa.sum(0, keepdims=True),
                          self.n_sas.sum(0, keepdims=True), self.r_sum.sum(0, keepdims=True))

    def __add__(self, other: "CountStats") -> "CountStats":
        return CountStats(self.n_s + other.n_s, self.n_sa + other.n_sa,
                          self.n_sas + other.n_sas, self.r_sum + other.r_sum)

    def n_star_s(self, h: int | None = None) -> float:
        c = self.n_s.sum(0) if h is None else self.n_s[h]
        return logmeanexp_neg(c[c > 0])

    def n_star_sa(self, h: int | None = None) -> float:
        c = self.n_sa_next.sum(0) if h is None else self.n_sa_next[h]
        return logmeanexp_neg(c[c > 0])


def count_stats(ds: Dataset, S: int, A: int, state_map=None) -> CountStats:
    s = ds.states if state_map is None else np.asarray(state_map)[ds.states]
    a = ds.actions
    n, H = s.shape
    hh = np.broadcast_to(np.arange(H), (n, H))
    n_sa = np.zeros((H, S, A))
    np.add.at(n_sa, (hh, s, a), 1)
    r_sum = np.zeros((H, S, A))
    np.add.at(r_sum, (hh, s, a), ds.rewards)
    n_sas = np.zeros((H, S, A, S))
    if H > 1:
        np.add.at(n_sas, (hh[:, :-1], s[:, :-1], a[:, :-1], s[:, 1:]), 1)
    return CountStats(n_sa.sum(-1), n_sa, n_sas, r_sum)


# ---------------------------------------------------------------------------
# empirical models


@dataclass
class EmpiricalModel:
    """Observed behavior policy and kernel, per timestep (``T = H``) or pooled (``T = 1``).

    Rows of unvisited cells are zero and flagged through the ``visited_*`` masks.
    """

    mode: str
    H: int
    pi_b: np.ndarray        # [T, s, a]
    P: np.ndarray           # [T, s, a, s']
    reward: np.ndarray      # [s, a]
    visited_s: np.ndarray   # [T, s]
    visited_sa: np.ndarray  # [T, s, a]  rows of P that are estimated
    counts: CountStats | None = None
    analytic: bool = False

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @property
    def T(self) -> int:
        return self.P.shape[0]

    @property
    def stationary(self) -> bool:
        return self.T == 1

    def pi_b_at(self, h: int) -> np.ndarray:
        return self.pi_b[min(h, self.T - 1)]

    def P_at(self, h: int) -> np.ndarray:
        return self.P[min(h, self.T - 1)]

    def visited_at(self, h: int) -> np.ndarray:
        return self.visited_sa[min(h, self.T - 1)]

    def pooled(self) -> "EmpiricalModel":
        if self.stationary:
            return self
        if self.counts is None:
            raise ValueError("pooling an analytic per-step model needs occupancies; rebuild with mode='pooled'")
        return empirical_model(self.counts, "pooled")


def _safe_div(num, den):
    out = np.zeros(np.broadcast_shapes(num.shape, den.shape))
    np.divide(num, den, out=out, where=den > 0)
    return out


def empirical_model(cs: CountStats, mode: str = "per-h", reward=None) -> EmpiricalModel:
    """``pi_b(a|s) = N(s,a)/N(s)`` and ``P(s'|s,a) = N(s,a,s')/N(s,a)`` by exact counting."""
    if mode not in ("per-h", "pooled"):
        raise ValueError(f"unknown mode {mode!r}")
    c = cs if mode == "per-h" else cs.pooled()
    pi = _safe_div(c.n_sa, c.n_s[..., None])
    n_next = c.n_sa_next
    P = _safe_div(c.n_sas, n_next[..., None])
    if reward is None:
        tot = cs.n_sa.sum(0)
        reward = _safe_div(cs.r_sum.sum(0), tot)
    return EmpiricalModel(mode, cs.H, pi, P, np.asarray(reward, dtype=float), c.n_s > 0, n_next > 0, cs)


def model_from_dataset(ds: Dataset, S: int, A: int, mode: str = "per-h", reward=None) -> EmpiricalModel:
    return empirical_model(count_stats(ds, S, A), mode, reward)


def analytic_model(mdp: ConfoundedMDP, pi_b, mode: str = "per-h") -> EmpiricalModel:
    """The infinite-data limit of :func:`empirical_model` under ``pi_b``.

    Rows of never-visited cells keep the prior-weighted kernel and are flagged.
    """
    om = observed_model(mdp, pi_b)
    H = mdp.H
    if mode == "per-h":
        visited_sa = om.d_sa > 0
        visited_sa[H - 1] = False
        return EmpiricalModel(mode, H, om.pi_b, om.kernel, mdp.reward.copy(), om.d_s > 0, visited_sa, analytic=True)
    if mode != "pooled":
        raise ValueError(f"unknown mode {mode!r}")
    ds_ = om.d_s.sum(0)
    dsa = om.d_sa.sum(0)
    pi = _safe_div(dsa, ds_[:, None])
    pi[ds_ <= 0] = 1.0 / mdp.A
    w = om.d_sa[: H - 1]
    wsum = w.sum(0)
    P = np.einsum("hsa,hsat->sat", w, om.kernel[: H - 1])
    P = _safe_div(P, wsum[..., None])
    unvisited = wsum <= 0
    P[unvisited] = om.kernel[0][unvisited]
    return EmpiricalModel(mode, H, pi[None], P[None], mdp.reward.copy(), (ds_ > 0)[None], (~unvisited)[None],
                          analytic=True)


# ---------------------------------------------------------------------------
# Hoeffding widths


@dataclass
class Widths:
    d_pi: np.ndarray   # [T, s]     inf where the state was never visited
    d_P: np.ndarray    # [T, s, a]  inf where the pair has no observed successor
    n_star_s: np.ndarray
    n_star_sa: np.ndarray


def hoeffding_width(n_star: float, log_term: float) -> float:
    return math.sqrt(log_term / (2 * n_star)) if n_star > 0 else math.inf


def hoeffding_widths(cs: CountStats, delta1: float, delta2: float, S: int | None = None,
                     A: int | None = None, mode: str = "pooled") -> Widths:
    """Uniform confidence widths for the behavior policy and the observed kernel.

    ``d_pi = sqrt(log(2SA/delta1) / (2 N*_s))`` and ``d_P = sqrt(log(2S^2A/delta2) / (2 N*_sa))``
    where ``N*`` is the soft minimum of the visited counts in the slice.
    """
    S = cs.S if S is None else S
    A = cs.A if A is None else A
    c = cs.pooled() if mode == "pooled" else cs
    T = c.H
    d_pi = np.full((T, cs.S), np.inf)
    d_P = np.full((T, cs.S, cs.A), np.inf)
    ns_s, ns_sa = np.zeros(T), np.zeros(T)
    lp = math.log(2 * S * A / delta1)
    lP = math.log(2 * S * S * A / delta2)
    for t in range(T):
        ns_s[t] = c.n_star_s(t)
        ns_sa[t] = c.n_star_sa(t)
        d_pi[t][c.n_s[t] > 0] = hoeffding_width(ns_s[t], lp)
        d_P[t][c.n_sa_next[t] > 0] = hoeffding_width(ns_sa[t], lP)
    return Widths(d_pi, d_P, ns_s, ns_sa)
