import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from confope import environments as envs
from confope.core_mdp import exact_value, laws_equal, observed_model, sensitivity_gamma, trajectory_law, trajectory_loglik
from confope.data import analytic_model, simulate
from confope.ope_memoryless import cfqe, fqe
from confope.sensitivity import build_uncertainty

from _oracles import enumerate_uniform_alternating_value, forward_value


def _two_sample_pvalue(ds1, ds2):
    """Chi-square homogeneity test on whole observed trajectories, sparse keys pooled."""
    keys = lambda ds: [tuple(s) + tuple(a) for s, a in zip(ds.states.tolist(), ds.actions.tolist())]
    k1, k2 = keys(ds1), keys(ds2)
    cats = sorted(set(k1) | set(k2))
    idx = {c: i for i, c in enumerate(cats)}
    table = np.zeros((2, len(cats)))
    for row, ks in enumerate((k1, k2)):
        np.add.at(table[row], [idx[k] for k in ks], 1)
    big = table.sum(0) >= 10
    table = np.column_stack([table[:, big], table[:, ~big].sum(1)]) if (~big).any() else table[:, big]
    table = table[:, table.sum(0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return chi2_contingency(table)[1]


# ---------------------------------------------------------------------------
# indistinguishable memoryless pair


def test_zero_eps_pair_is_identical():
    b = envs.thm1_pair(eps=0.0)
    assert b.known["value_gap"] == 0.0
    assert np.array_equal(b.mdp.kernel, b.mdp2.kernel) or b.known["value_1"] == b.known["value_2"]


def test_pair_gap_is_two_at_default():
    b = envs.thm1_pair(eps=0.1, z=0.0, H=10)
    assert abs(b.known["value_1"] - b.known["value_2"]) == pytest.approx(2.0, abs=1e-9)
    assert np.max(np.abs(b.known["observed_joint_1"] - b.known["observed_joint_2"])) <= 1e-12


@pytest.mark.parametrize("H", [4, 10, 30])
def test_pair_gap_is_linear_in_horizon_near_half(H):
    b = envs.thm1_pair(eps=0.5 - 1.0 / H**2, z=0.0, H=H)
    assert b.known["value_gap"] >= H - 4.0 / H


def test_pair_gamma_closed_form():
    eps = 0.1
    b = envs.thm1_pair(eps=eps)
    closed = (0.5 + eps) / (0.5 - eps) * (0.5 + 2 * eps**2) / (0.5 - 2 * eps**2)
    assert b.known["gamma"] == pytest.approx(closed, rel=1e-12)
    assert sensitivity_gamma(b.mdp, b.pi_b) == pytest.approx(closed, rel=1e-12)


@given(st.floats(0.0, 0.49), st.floats(0.0, 1.0), st.integers(1, 12))
@settings(max_examples=40, deadline=None)
def test_pair_is_always_indistinguishable(eps, z, H):
    b = envs.thm1_pair(eps=eps, z=z, H=H)
    o1, o2 = observed_model(b.mdp, b.pi_b), observed_model(b.mdp2, b.pi_b2)
    assert np.max(np.abs(o1.pi_b[..., None] * o1.kernel - o2.pi_b[..., None] * o2.kernel)) <= 1e-12
    assert abs(b.known["value_1"] - b.known["value_2"]) == pytest.approx(2 * eps * H * abs(1 - 2 * z), abs=1e-9)


def test_pair_rejects_eps_at_half():
    with pytest.raises(ValueError):
        envs.thm1_pair(eps=0.5)


def test_pair_action_frequency_matches_marginal():
    b = envs.thm1_pair(eps=0.1)
    ds = simulate(b, n=4000, seed=0)
    freq = np.mean(ds.actions[:, 1:] == 0)
    p = b.known["observed_pi_b"]
    assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / ds.actions[:, 1:].size)


# ---------------------------------------------------------------------------
# memory chain


def test_memory_chain_short_horizon():
    b = envs.memory_chain(2)
    assert b.known["true_value"] == 2.0
    assert exact_value(b.mdp, b.pi_e).at(0) == pytest.approx(2.0)


def test_memory_chain_cap_uses_log2():
    b = envs.memory_chain(64)
    assert b.known["fqe_cap"] == pytest.approx(21.0)
    assert b.known["tau_a"] == pytest.approx(2.0)


def test_memory_chain_rejects_short_horizon():
    with pytest.raises(ValueError):
        envs.memory_chain(1)


# ---------------------------------------------------------------------------
# alternating pair


@pytest.mark.parametrize("H", [2, 3, 6, 10])
def test_alternating_value_matches_enumeration(H):
    b = envs.alternating_pair(H)
    assert b.known["value_1"] == pytest.approx(enumerate_uniform_alternating_value(H), abs=1e-12)
    assert b.known["value_2"] == 0.0


def test_alternating_value_frozen():
    # exact values of the uniform policy, from enumeration of all action sequences
    assert envs.alternating_value(2) == 0.0
    assert envs.alternating_value(10) == pytest.approx(7.00390625, abs=1e-12)


def test_alternating_behavior_never_sees_reward():
    b = envs.alternating_pair(8)
    law = b.known["law"]
    assert len(law) == 2
    for (states, actions), p in law.items():
        assert p == pytest.approx(0.5)
        assert all(actions[i] != actions[i + 1] for i in range(len(actions) - 1))
    for m in (b.mdp, b.mdp2):
        ds = simulate(m, b.pi_b, n=200, seed=3)
        assert np.all(ds.rewards.sum(1) == 0)


def test_alternating_gamma_is_unbounded():
    assert envs.alternating_pair(6).known["gamma"] == np.inf


# ---------------------------------------------------------------------------
# hypercube pair


def test_hypercube_equal_p_has_zero_gap():
    b = envs.hypercube_pair(n=4, p=((0.3, 0.3), (0.3, 0.3)), H=5)
    assert b.known["value_gap"] == 0.0
    assert b.known["value_1"] == pytest.approx(b.known["value_2"], abs=1e-12)


def test_hypercube_gap_frozen():
    b = envs.hypercube_pair(n=8, p=((0.99, 0.98), (0.01, 0.02)), H=9)
    assert b.known["value_gap"] == pytest.approx(7.76, abs=1e-12)
    assert abs(b.known["value_1"] - b.known["value_2"]) == pytest.approx(7.76, abs=1e-9)


def test_hypercube_short_horizon_logliks_agree():
    b = envs.hypercube_pair(n=8, H=2)
    law = trajectory_law(b.mdp, b.pi_b)
    for (states, actions) in law:
        l1 = trajectory_loglik(b.mdp, b.pi_b, states, actions)
        l2 = trajectory_loglik(b.mdp2, b.pi_b2, states, actions)
        assert l1 == pytest.approx(l2, abs=1e-12)


def test_hypercube_rejects_negative_traffic():
    with pytest.raises(ValueError):
        envs.hypercube_pair(n=8, p=((0.99, 0.98), (-0.01, 0.02)))


# ---------------------------------------------------------------------------
# two-sample sanity layer


@pytest.mark.parametrize("name", ["thm1", "alternating", "hypercube"])
def test_pairs_pass_two_sample_test(name):
    b = {"thm1": lambda: envs.thm1_pair(H=3),
         "alternating": lambda: envs.alternating_pair(6),
         "hypercube": lambda: envs.hypercube_pair(n=8, H=2)}[name]()
    d1 = simulate(b.mdp, b.pi_b, n=10_000, seed=1)
    d2 = simulate(b.mdp2, b.pi_b2, n=10_000, seed=2)
    assert _two_sample_pvalue(d1, d2) > 0.001


def test_two_sample_test_detects_different_pairs():
    b1 = envs.thm1_pair(H=3)
    other = envs.thm1_pair(eps=0.1, z1=0.1, z2=0.9, H=3)
    d1 = simulate(b1.mdp, b1.pi_b, n=10_000, seed=1)
    d2 = simulate(other.mdp, other.pi_b, n=10_000, seed=2)
    assert _two_sample_pvalue(d1, d2) < 1e-6


# ---------------------------------------------------------------------------
# gridworld


def test_gridworld_shape_and_truth():
    b = envs.gridworld_iid()
    m = b.mdp
    assert (m.S, m.A, m.H, m.U) == (16, 4, 8, 2)
    assert np.isfinite(b.known["values"]).all()
    assert b.known["values"][13] == pytest.approx(forward_value(m, b.pi_e, 13), abs=1e-12)


def test_gridworld_equal_slips_unit_gamma_cfqe_is_fqe():
    b = envs.gridworld_iid(slip_high=0.2, slip_low=0.2)
    m = analytic_model(b.mdp, b.pi_b)
    starts = b.mdp.d0 > 0  # rows of never-started states are unconstrained at step 0
    c = cfqe(m, b.pi_e, build_uncertainty(m, gamma=1.0)).v1
    assert np.allclose(c[starts], fqe(m, b.pi_e).v1[starts], atol=1e-10)


def test_gridworld_early_states_have_negative_fqe():
    b = envs.gridworld_iid()
    v = fqe(analytic_model(b.mdp, b.pi_b), b.pi_e).v1
    assert v[0] < 0 and v[4] < 0


def test_gridworld_greedy_avoids_pit():
    b = envs.gridworld_iid()
    greedy = b.pi_e.at(0).argmax(1)
    for s in range(16):
        if s in (10, 15):
            continue
        assert envs._grid_step(s, greedy[s]) != 10


def test_gridworld_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        envs.gridworld_iid(slip_high=1.2)
    with pytest.raises(ValueError):
        envs.gridworld_iid(pit=15)


# ---------------------------------------------------------------------------
# sepsis toy and mixture


def test_sepsis_defaults():
    b = envs.sepsis_toy()
    assert b.mdp.H == 60
    assert b.known["separation_delta"] > 0
    assert b.state_map.max() + 1 == 9
    assert np.allclose(b.pi_e.at(0), b.pi_b.at(0).mean(axis=1))


def test_sepsis_global_confounder():
    ds = simulate(envs.sepsis_toy(H=10), n=50, seed=0)
    assert np.all(ds.hidden_u == ds.hidden_u[:, :1])


def test_mixture_regime():
    b = envs.two_mixture()
    assert b.known["separation_delta"] >= 0.5
    assert b.mdp.H == math.ceil(20 * b.known["t_mix"] * math.log(200))


def test_every_environment_is_addressable():
    for name in ("thm1", "memory-chain", "alternating", "hypercube", "gridworld", "sepsis", "mixture"):
        assert envs.make(name).mdp is not None
    with pytest.raises(KeyError):
        envs.make("nope")


def test_known_quantities_are_recomputed():
    b = envs.thm1_pair()
    assert laws_equal({0: 1.0}, {0: 1.0}) == 0.0
    assert exact_value(b.mdp, b.pi_e).at(0) == pytest.approx(b.known["value_1"], abs=1e-12)
    assert exact_value(b.mdp2, b.pi_e).at(0) == pytest.approx(b.known["value_2"], abs=1e-12)
