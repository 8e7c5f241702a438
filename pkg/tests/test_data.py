import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confope import environments as envs
from confope.core_mdp import ConfoundedMDP, Global, marginalize_behavior
from confope.data import (
    Dataset,
    DatasetParseError,
    analytic_model,
    count_stats,
    empirical_model,
    hoeffding_width,
    hoeffding_widths,
    load,
    logmeanexp_neg,
    model_from_dataset,
    save,
    simulate,
)

from _oracles import random_global, random_memoryless


def _concat(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(np.vstack([a.states, b.states]), np.vstack([a.actions, b.actions]),
                   np.vstack([a.rewards, b.rewards]), np.vstack([a.hidden_u, b.hidden_u]))


# ---------------------------------------------------------------------------
# simulation


def test_deterministic_system_gives_identical_trajectories():
    k = np.zeros((3, 1, 1, 3))
    k[0, 0, 0, 1] = k[1, 0, 0, 2] = k[2, 0, 0, 0] = 1.0
    mdp = ConfoundedMDP(3, 1, 1, 7, k, np.arange(3.0)[:, None], Global([1.0]), [1.0, 0.0, 0.0])
    ds = simulate(mdp, np.ones((3, 1)), n=20, seed=4)
    assert np.all(ds.states == ds.states[0])
    assert ds.states[0].tolist() == [0, 1, 2, 0, 1, 2, 0]


def test_simulation_is_a_function_of_the_seed():
    b = envs.sepsis_toy(H=12)
    d1 = simulate(b, n=300, seed=7)
    d2 = simulate(b, n=300, seed=7, workers=4, chunk=17)
    d3 = simulate(b, n=300, seed=8)
    assert np.array_equal(d1.states, d2.states) and np.array_equal(d1.actions, d2.actions)
    assert np.array_equal(d1.hidden_u, d2.hidden_u)
    assert not np.array_equal(d1.states, d3.states)


def test_prefix_of_a_larger_sample_is_the_smaller_sample():
    b = envs.thm1_pair()
    small, big = simulate(b, n=50, seed=3), simulate(b, n=500, seed=3)
    assert np.array_equal(small.states, big.states[:50])


def test_simulation_needs_episodes():
    with pytest.raises(ValueError):
        simulate(envs.thm1_pair(), n=0)


def test_start_state_override():
    ds = simulate(envs.gridworld_iid(), n=30, seed=0, s0=13)
    assert np.all(ds.states[:, 0] == 13)


# ---------------------------------------------------------------------------
# counts


@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
@settings(max_examples=30, deadline=None)
def test_count_marginals_are_consistent(seed, n):
    rng = np.random.default_rng(seed)
    mdp, pi_b, _ = random_memoryless(rng, 3, 2, 2, 5)
    cs = count_stats(simulate(mdp, pi_b, n=n, seed=seed), 3, 2)
    assert np.array_equal(cs.n_s, cs.n_sa.sum(-1))
    assert np.array_equal(cs.n_sa[:-1], cs.n_sas[:-1].sum(-1))
    assert cs.n_s.sum() == n * 5
    for c in (cs.n_s.sum(0), cs.n_sa_next.sum(0).ravel()):
        c = c[c > 0]
        ns = logmeanexp_neg(c)
        assert c.min() - 1e-9 <= ns <= c.mean() + 1e-9


def test_counts_are_mergeable():
    rng = np.random.default_rng(1)
    mdp, pi_b, _ = random_global(rng, 3, 2, 2, 6)
    a, b = simulate(mdp, pi_b, n=40, seed=1), simulate(mdp, pi_b, n=25, seed=2)
    merged = count_stats(a, 3, 2) + count_stats(b, 3, 2)
    whole = count_stats(_concat(a, b), 3, 2)
    for f in ("n_s", "n_sa", "n_sas"):
        assert np.array_equal(getattr(merged, f), getattr(whole, f))
    assert np.allclose(merged.r_sum, whole.r_sum, rtol=0, atol=1e-12)  # float summation order


def test_soft_minimum_closed_form():
    assert logmeanexp_neg([10, 1000]) == pytest.approx(10 + math.log(2), abs=1e-12)
    assert logmeanexp_neg([10, 1000]) == pytest.approx(10.6931, abs=1e-4)


def test_single_trajectory_gives_one_hot_rows():
    ds = Dataset(np.array([[0, 1, 2, 0]]), np.array([[0, 1, 0, 1]]), np.zeros((1, 4)))
    m = model_from_dataset(ds, 3, 2, mode="pooled")
    rows = m.P[0][m.visited_sa[0]]
    assert len(rows) == 3
    assert np.all(np.sort(rows, axis=1)[:, -1] == 1.0)
    assert not m.visited_sa[0, 0, 1]   # never observed: flagged, left at zero
    assert np.all(m.P[0, 0, 1] == 0.0)


def test_empirical_kernel_error_shrinks_like_root_n():
    rng = np.random.default_rng(0)
    mdp, pi_b, _ = random_memoryless(rng, 3, 2, 2, 4)
    truth = analytic_model(mdp, pi_b, mode="pooled").P[0]

    def med_err(n):
        errs = []
        for seed in range(10):
            m = model_from_dataset(simulate(mdp, pi_b, n=n, seed=seed), 3, 2, mode="pooled")
            errs.append(np.max(np.abs(m.P[0] - truth)))
        return np.median(errs)

    ratio = med_err(500) / med_err(2000)
    assert 2 / 1.5 <= ratio <= 2 * 1.5


def test_analytic_model_is_the_large_sample_limit():
    rng = np.random.default_rng(2)
    mdp, pi_b, _ = random_memoryless(rng, 3, 2, 2, 4)
    m = model_from_dataset(simulate(mdp, pi_b, n=50_000, seed=0), 3, 2, mode="per-h")
    a = analytic_model(mdp, pi_b)
    assert np.max(np.abs(m.pi_b - a.pi_b)) < 0.02
    assert np.max(np.abs(m.P[:-1] - a.P[:-1])) < 0.03


def test_analytic_pooled_policy_is_the_marginal():
    rng = np.random.default_rng(3)
    mdp, pi_b, _ = random_memoryless(rng, 3, 2, 2, 4)
    a = analytic_model(mdp, pi_b, mode="pooled")
    assert np.allclose(a.pi_b[0], marginalize_behavior(mdp, pi_b).at(0), atol=1e-12)


def test_unknown_mode_rejected():
    ds = Dataset(np.zeros((1, 2), int), np.zeros((1, 2), int), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        empirical_model(count_stats(ds, 1, 1), mode="weird")


# ---------------------------------------------------------------------------
# Hoeffding widths


def test_policy_width_closed_form():
    w = hoeffding_width(100, math.log(2 * 2 * 2 / 0.1))
    assert w == pytest.approx(math.sqrt(math.log(80) / 200), abs=1e-15)
    assert w == pytest.approx(0.1480, abs=1e-4)


def test_widths_vanish_with_counts_and_are_infinite_without():
    assert hoeffding_width(1e12, 5.0) < 1e-5
    assert hoeffding_width(0, 5.0) == math.inf


def test_unvisited_cells_get_infinite_width():
    ds = Dataset(np.array([[0, 0, 0]]), np.array([[0, 0, 0]]), np.zeros((1, 3)))
    w = hoeffding_widths(count_stats(ds, 2, 2), 0.05, 0.05)
    assert np.isfinite(w.d_pi[0, 0]) and np.isinf(w.d_pi[0, 1])
    assert np.isfinite(w.d_P[0, 0, 0]) and np.isinf(w.d_P[0, 0, 1])


def test_widths_use_stated_log_terms():
    rng = np.random.default_rng(4)
    mdp, pi_b, _ = random_memoryless(rng, 3, 2, 2, 4)
    cs = count_stats(simulate(mdp, pi_b, n=300, seed=0), 3, 2)
    w = hoeffding_widths(cs, 0.1, 0.2)
    assert w.d_pi[0, 0] == pytest.approx(math.sqrt(math.log(2 * 3 * 2 / 0.1) / (2 * w.n_star_s[0])))
    assert w.d_P[0, 0, 0] == pytest.approx(math.sqrt(math.log(2 * 9 * 2 / 0.2) / (2 * w.n_star_sa[0])))


def test_width_coverage():
    rng = np.random.default_rng(5)
    mdp, pi_b, _ = random_memoryless(rng, 2, 2, 2, 4)
    truth = analytic_model(mdp, pi_b, mode="pooled")
    cover_pi = cover_P = 0
    for seed in range(500):
        ds = simulate(mdp, pi_b, n=60, seed=seed)
        cs = count_stats(ds, 2, 2)
        m = empirical_model(cs, "pooled")
        w = hoeffding_widths(cs, 0.05, 0.05)
        cover_pi += bool(np.all(np.abs(m.pi_b[0] - truth.pi_b[0]) <= w.d_pi[0][:, None]))
        cover_P += bool(np.all(np.abs(m.P[0] - truth.P[0]) <= w.d_P[0][..., None]))
    assert cover_pi >= 0.95 * 500
    assert cover_P >= 0.95 * 500


# ---------------------------------------------------------------------------
# persistence


def test_round_trip(tmp_path):
    ds = simulate(envs.sepsis_toy(H=6), n=25, seed=2)
    save(ds, tmp_path / "d.jsonl")
    back = load(tmp_path / "d.jsonl")
    for f in ("states", "actions", "rewards", "hidden_u"):
        assert np.array_equal(getattr(ds, f), getattr(back, f))
    assert back.env_id == "sepsis" and back.seed == 2
    meta = json.loads((tmp_path / "d.jsonl.meta.json").read_text())
    assert meta == {"env_id": "sepsis", "seed": 2, "n": 25, "H": 6}


def test_missing_confounder_field_loads(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"s": [0, 1], "a": [1, 0], "r": [0.0, 1.0]}\n' * 3)
    ds = load(p)
    assert ds.hidden_u is None and ds.n == 3


def test_corrupt_line_is_reported_by_number(tmp_path):
    p = tmp_path / "d.jsonl"
    good = '{"s": [0, 1], "a": [1, 0], "r": [0.0, 1.0]}\n'
    p.write_text(good * 6 + "{not json\n" + good)
    with pytest.raises(DatasetParseError, match="line 7") as e:
        load(p)
    assert e.value.line == 7


def test_mixed_lengths_rejected(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"s": [0, 1], "a": [1, 0], "r": [0, 1]}\n{"s": [0], "a": [1], "r": [0]}\n')
    with pytest.raises(DatasetParseError, match="line 2"):
        load(p)


def test_saving_twice_is_byte_identical(tmp_path):
    ds = simulate(envs.thm1_pair(), n=40, seed=9)
    save(ds, tmp_path / "a.jsonl")
    save(simulate(envs.thm1_pair(), n=40, seed=9), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
