"""Fixture battery: the analytic checks on the adversarial fixtures, one verdict per check."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import environments as envs
from .core_mdp import laws_equal, trajectory_law, trajectory_loglik, value_of
from .data import model_from_dataset, simulate
from .ope_global import cluster_separation, clustering_accuracy
from .ope_memoryless import fqe


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check_indistinguishable_pair(eps=0.1, z=0.0, H=10) -> Verdict:
    t = time.perf_counter()
    b = envs.thm1_pair(eps=eps, z=z, H=H)
    diff = float(np.max(np.abs(b.known["observed_joint_1"] - b.known["observed_joint_2"])))
    gap = abs(b.known["value_1"] - b.known["value_2"])
    dt = time.perf_counter() - t
    ok = diff <= 1e-12 and abs(gap - 2.0) <= 1e-9 and dt < 1.0
    return Verdict("indistinguishable-pair", ok, f"max table diff {diff:.1e}, value gap {gap:.12f}, {dt:.2f}s")


def check_memory_chain(horizons=(16, 64, 256)) -> Verdict:
    t = time.perf_counter()
    parts, ok = [], True
    for H in horizons:
        b = envs.memory_chain(H)
        est = fqe(b.mdp, b.pi_e, pi_b=b.pi_b).at(0)
        truth = value_of(b.mdp, b.pi_e, 0)
        ok &= est <= b.known["fqe_cap"] and abs(truth - H) <= 1e-9
        parts.append(f"H={H}: fqe {est:.3f} true {truth:.0f}")
        last_ratio = (truth - est) / H
    dt = time.perf_counter() - t
    ok &= last_ratio >= 0.8 and dt < 5.0
    return Verdict("memory-chain", bool(ok), "; ".join(parts) + f"; gap/H {last_ratio:.3f}, {dt:.2f}s")


def check_hypercube(n=8, H=2, trials=30, n_traj=200) -> Verdict:
    b = envs.hypercube_pair(n=n, H=H)
    ds = simulate(b.mdp, b.pi_b, n=50, seed=0)
    ll_diff = 0.0
    for i in range(ds.n):
        l1 = trajectory_loglik(b.mdp, b.pi_b, ds.states[i], ds.actions[i])
        l2 = trajectory_loglik(b.mdp2, b.pi_b2, ds.states[i], ds.actions[i])
        ll_diff = max(ll_diff, abs(l1 - l2))
    errs = []
    for seed in range(trials):
        d = simulate(b.mdp, b.pi_b, n=n_traj, seed=seed)
        ca = cluster_separation(d, 2, S=b.mdp.S, A=b.mdp.A, seed=seed)
        errs.append(clustering_accuracy(ca, d.episode_confounder()))
    gap = abs(b.known["value_1"] - b.known["value_2"])
    p = np.asarray(b.params["p"])
    closed = (H - 1) * abs(p[0].sum() - p[1].sum()) / 2
    ok = ll_diff == 0.0 and np.mean(errs) >= 0.4 and abs(gap - closed) <= 1e-12
    return Verdict("hypercube", bool(ok),
                   f"loglik diff {ll_diff:.1e}, mean clustering error {np.mean(errs):.3f}, gap {gap} vs {closed}")


def alternating_formula(H: int) -> float:
    """Closed form stated for the alternating fixture's value."""
    return (1 - 2 / 2**H) * (H - 1)


def check_alternating(H=10, n=500) -> Verdict:
    b = envs.alternating_pair(H)
    law_diff = laws_equal(trajectory_law(b.mdp, b.pi_b), trajectory_law(b.mdp2, b.pi_b2))
    v1 = b.known["value_1"]
    formula = alternating_formula(H)
    ds = simulate(b.mdp, b.pi_b, n=n, seed=0)
    model = model_from_dataset(ds, b.mdp.S, b.mdp.A, mode="per-h", reward=None)
    est = fqe(model, b.pi_e, starts=[b.start]).at(b.start)
    ok = law_diff == 0.0 and abs(v1 - formula) <= 1e-9 and abs(est) <= 1e-9
    return Verdict("alternating", bool(ok),
                   f"law diff {law_diff:.1e}, DP value {v1:.9f} vs formula {formula:.9f}, fqe {est:.1e}")


def run_fixtures() -> list:
    return [check_indistinguishable_pair(), check_memory_chain(), check_hypercube(), check_alternating()]
