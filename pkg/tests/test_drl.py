"""Tabular policy, gradient estimators, and the enumeration oracle."""

import math
from dataclasses import replace

import numpy as np
import pytest

from eqsr.drl import (
    OracleError,
    Policy,
    ScoringError,
    TrainConfig,
    aggregated_logp,
    egg_equivalents,
    egg_gradient,
    enumerate_sequences,
    exact_gradient,
    standard_gradient,
    train,
)
from eqsr.grammar import Grammar, sequence_to_expression
from eqsr.rewrite import builtin_rules
from eqsr.verify import make_semantic_reward, oracle_grammar

G4 = oracle_grammar()  # add, log, x1, x2
COMM = builtin_rules(["commutative"])
LOG_PRODUCT = [r for r in builtin_rules(["log-exp"]) if r.name.startswith("log-of-product")]


def random_policy(seed=0, scale=0.5, **kwargs) -> Policy:
    policy = Policy(G4, max_len=4, **kwargs)
    policy.randomize(np.random.default_rng(seed), scale=scale)
    return policy


class TestPolicyBasics:
    def test_distribution_normalized(self):
        policy = random_policy(3)
        for t in range(4):
            for prev in range(policy.vocab_size + 1):
                for open_count in (1, 2):
                    if open_count > policy.max_len - t:
                        continue  # unreachable under the mask
                    p = policy.distribution(t, prev, open_count)
                    assert abs(p.sum() - 1.0) <= 1e-12

    def test_unreachable_context_rejected(self):
        policy = random_policy(3)
        with pytest.raises(ScoringError):
            policy.distribution(3, 0, 2)

    def test_mask_blocks_uncompletable_rules(self):
        policy = random_policy(0)
        # at t=3 with one open slot, binary/unary rules no longer fit
        p = policy.distribution(3, 0, 1)
        assert p[0] == 0.0 and p[1] == 0.0
        assert p[2] > 0 and p[3] > 0

    def test_sample_always_complete_under_mask(self):
        policy = random_policy(1)
        rng = np.random.default_rng(0)
        from eqsr.grammar import expand_sequence

        for _ in range(200):
            traj = policy.sample(rng)
            assert len(traj.seq) <= 4
            exp = expand_sequence(tuple(G4.rules[i] for i in traj.seq))
            assert exp.open == 0 and not exp.unused

    def test_score_matches_sample_logp(self):
        policy = random_policy(2)
        rng = np.random.default_rng(1)
        for _ in range(100):
            traj = policy.sample(rng)
            assert policy.score(traj.seq) == pytest.approx(traj.logp, abs=1e-12)

    def test_logp_factorization(self):
        policy = random_policy(4)
        seq = (0, 2, 3)  # add, x1, x2
        total = 0.0
        open_count = 1
        for t, choice in enumerate(seq):
            prev = policy.vocab_size if t == 0 else seq[t - 1]
            total += math.log(policy.distribution(t, prev, open_count)[choice])
            open_count += policy.arity[choice] - 1
        assert policy.score(seq) == pytest.approx(total, abs=1e-14)

    def test_one_hot_logits_give_logp_zero(self):
        policy = Policy(G4, max_len=4)
        policy.logits[:, :, 2] = 1000.0  # always pick x1
        traj = policy.sample(np.random.default_rng(0))
        assert traj.seq == (2,)
        assert traj.logp == 0.0

    def test_uniform_first_step(self):
        policy = Policy(G4, max_len=4)  # zero logits = uniform over feasible
        rng = np.random.default_rng(0)
        traj = policy.sample(rng)
        first_p = policy.distribution(0, policy.vocab_size, 1)
        assert first_p[traj.seq[0]] == pytest.approx(0.25)

    def test_fixed_seed_identical_trajectory(self):
        policy = random_policy(5)
        a = policy.sample(np.random.default_rng(42))
        b = policy.sample(np.random.default_rng(42))
        assert a == b

    def test_score_rejects_bad_sequences(self):
        policy = random_policy(6)
        with pytest.raises(ScoringError):
            policy.score((0, 2, 3, 2, 3))  # longer than max_len under mask
        with pytest.raises(ScoringError):
            policy.score((99,))

    def test_truncation_completion_when_mask_off(self):
        from eqsr.grammar import expand_sequence

        policy = Policy(G4, max_len=3, mask_infeasible=False)
        policy.logits[:, :, 0] = 8.0  # strongly prefer add: forces truncation
        rng = np.random.default_rng(0)
        traj = policy.sample(rng)
        exp = expand_sequence(tuple(G4.rules[i] for i in traj.seq))
        assert exp.open == 0
        assert np.isfinite(traj.logp)
        assert len(traj.seq) >= 3


class TestStandardGradient:
    def test_single_sample_with_reward_baseline_is_zero(self):
        # N=1 with b = reward centers the sample exactly: zero vector
        policy = random_policy(0)
        traj = replace(policy.sample(np.random.default_rng(0)), reward=0.6)
        est = standard_gradient(policy, [traj], baseline="mean")
        assert np.array_equal(est.vector, np.zeros(policy.n_params))
        assert est.baseline == 0.6

    def test_score_function_zero_mean_by_enumeration(self):
        policy = random_policy(7)
        seqs, probs = enumerate_sequences(policy)
        total = np.zeros(policy.n_params)
        for s, p in zip(seqs, probs):
            total += p * policy.grad_logp(s)
        assert np.max(np.abs(total)) <= 1e-10

    def test_constant_reward_exact_gradient_zero(self):
        policy = random_policy(8)
        oracle = exact_gradient(policy, COMM, lambda expr: 0.37)
        assert np.max(np.abs(oracle.grad_J)) <= 1e-10

    def test_baselines(self):
        rewards = np.array([0.1, 0.2, 0.3, 0.8])
        from eqsr.drl import compute_baseline

        assert compute_baseline(rewards, "none") == 0.0
        assert compute_baseline(rewards, "mean") == pytest.approx(0.35)
        assert compute_baseline(rewards, "top_quantile") == pytest.approx(
            np.quantile(rewards, 0.75))


class TestExactGradient:
    def test_single_sequence_grammar_hand_check(self):
        tiny = Grammar(["A->x1"])
        policy = Policy(tiny, max_len=2)
        oracle = exact_gradient(policy, (), lambda expr: 0.9)
        # one sequence with probability 1: grad J = r * p * grad logp = 0
        assert oracle.J == pytest.approx(0.9)
        assert np.max(np.abs(oracle.grad_J)) <= 1e-12

    def test_matches_finite_differences(self):
        policy = random_policy(9)
        reward_fn = make_semantic_reward(G4)
        oracle = exact_gradient(policy, COMM, reward_fn)

        def J_at(theta):
            saved = policy.logits.copy()
            policy.logits[:] = theta.reshape(policy.logits.shape)
            policy.clear_cache()
            seqs, probs = enumerate_sequences(policy)
            rewards = [
                reward_fn(sequence_to_expression(tuple(G4.rules[i] for i in s)))
                for s in seqs
            ]
            value = float(np.dot(probs, rewards))
            policy.logits[:] = saved
            policy.clear_cache()
            return value

        theta0 = policy.theta.copy()
        rng = np.random.default_rng(0)
        coords = rng.choice(policy.n_params, size=12, replace=False)
        h = 1e-6
        for i in coords:
            up, down = theta0.copy(), theta0.copy()
            up[i] += h
            down[i] -= h
            fd = (J_at(up) - J_at(down)) / (2 * h)
            assert fd == pytest.approx(oracle.grad_J[i], abs=1e-5)

    def test_budget_enforced(self):
        policy = Policy(G4, max_len=4)
        with pytest.raises(OracleError):
            exact_gradient(policy, (), lambda e: 1.0, budget=3)

    def test_classes_group_commutations(self):
        policy = random_policy(10)
        oracle = exact_gradient(policy, COMM, lambda e: 1.0)
        seq_index = {s: i for i, s in enumerate(oracle.sequences)}
        a = seq_index[(0, 2, 3)]  # x1 + x2
        b = seq_index[(0, 3, 2)]  # x2 + x1
        assert oracle.class_of[a] == oracle.class_of[b]
        lone = seq_index[(2,)]
        assert oracle.class_of[lone] != oracle.class_of[a]
        assert abs(oracle.class_q.sum() - 1.0) <= 1e-12


class TestEggEquivalents:
    def test_no_rules_returns_original(self):
        policy = random_policy(0)
        assert egg_equivalents((0, 2, 3), policy, (), K=4) == [(0, 2, 3)]

    def test_log_product_pair(self):
        grammar = Grammar(["A->(A+A)", "A->(A*A)", "A->log(A)", "A->x1", "A->x2"])
        policy = Policy(grammar, max_len=8)
        seq = (2, 1, 3, 4)  # log(x1*x2)
        members = egg_equivalents(seq, policy, LOG_PRODUCT, K=4, exhaustive=True)
        assert members[0] == seq
        assert (0, 2, 3, 2, 4) in members  # log(x1)+log(x2)
        assert len(members) == 2

    def test_k_one_only_original(self):
        policy = random_policy(1)
        assert egg_equivalents((0, 2, 3), policy, COMM, K=1) == [(0, 2, 3)]

    def test_overlong_equivalents_filtered(self):
        # splitting log(x1*x2) needs 5 rules; with max_len 4 it must be dropped
        grammar = Grammar(["A->(A+A)", "A->(A*A)", "A->log(A)", "A->x1", "A->x2"])
        policy = Policy(grammar, max_len=4)
        members = egg_equivalents((2, 1, 3, 4), policy, LOG_PRODUCT, K=8, exhaustive=True)
        assert members == [(2, 1, 3, 4)]

    def test_cache_used(self):
        policy = random_policy(2)
        cache = {}
        first = egg_equivalents((0, 2, 3), policy, COMM, K=4, exhaustive=True, cache=cache)
        assert cache[(0, 2, 3)] == first
        assert egg_equivalents((0, 2, 3), policy, COMM, K=4, cache=cache) is first


class TestEggGradient:
    def test_k1_bitwise_equal_to_standard(self):
        policy = random_policy(3)
        rng = np.random.default_rng(5)
        batch = [replace(policy.sample(rng), reward=0.2 * i) for i in range(1, 6)]
        g_std = standard_gradient(policy, batch, baseline="mean")
        g_egg = egg_gradient(policy, batch, K=1, rules=COMM, baseline="mean")
        assert np.array_equal(g_std.vector, g_egg.vector)
        assert g_std.baseline == g_egg.baseline

    def test_aggregated_logp_exceeds_own(self):
        policy = random_policy(4)
        seq = (0, 2, 3)
        members = egg_equivalents(seq, policy, COMM, K=8, exhaustive=True)
        assert len(members) == 2
        assert aggregated_logp(policy, members) > policy.score(seq)

    def test_mixture_weights_sum_effects(self):
        # gradient of log sum p equals probability-weighted member mixture
        policy = random_policy(5)
        seq = (0, 2, 3)
        members = egg_equivalents(seq, policy, COMM, K=8, exhaustive=True)
        logps = np.array([policy.score(m) for m in members])
        w = np.exp(logps - logps.max())
        w /= w.sum()
        expected = sum(wk * policy.grad_logp(m) for wk, m in zip(w, members))
        traj = replace(policy.sample(np.random.default_rng(0)), reward=1.0)
        traj = replace(traj, seq=seq)
        est = egg_gradient(policy, [traj], K=8, rules=COMM, baseline="none",
                           exhaustive=True)
        assert np.allclose(est.vector, expected, atol=1e-14)


class TestUnbiasednessAndVariance:
    def test_mini_monte_carlo(self):
        policy = random_policy(11)
        reward_fn = make_semantic_reward(G4)
        oracle = exact_gradient(policy, COMM, reward_fn)
        reward_of = {s: r for s, r in zip(oracle.sequences, oracle.rewards)}
        rng = np.random.default_rng(0)
        cache = {}
        draws = 4000
        sums = {"std": 0.0, "egg": 0.0}
        acc = {k: np.zeros(policy.n_params) for k in ("std", "egg")}
        sq = {k: np.zeros(policy.n_params) for k in ("std", "egg")}
        for _ in range(draws):
            traj = replace(policy.sample(rng), reward=None)
            traj = replace(traj, reward=reward_of[traj.seq])
            g1 = standard_gradient(policy, [traj], baseline="none").vector
            g2 = egg_gradient(policy, [traj], K=16, rules=COMM, baseline="none",
                              exhaustive=True, cache=cache).vector
            acc["std"] += g1
            sq["std"] += g1**2
            acc["egg"] += g2
            sq["egg"] += g2**2
        for kind in ("std", "egg"):
            mean = acc[kind] / draws
            var = np.maximum(sq[kind] / draws - mean**2, 0)
            se = np.sqrt(var / draws)
            assert np.all(np.abs(mean - oracle.grad_J) <= 5 * se + 1e-12)
        var_std = (sq["std"] / draws - (acc["std"] / draws) ** 2).sum()
        var_egg = (sq["egg"] / draws - (acc["egg"] / draws) ** 2).sum()
        assert var_egg <= 1.05 * var_std


class TestTrain:
    @staticmethod
    def _reward_fn():
        semantic = make_semantic_reward(G4)

        def fn(expr, seq):
            r = semantic(expr)
            return r, (1.0 / r - 1.0) if r > 0 else math.inf

        return fn

    def test_zero_lr_leaves_theta_and_traces_flat(self):
        policy = random_policy(12)
        theta_before = policy.theta.copy()
        cfg = TrainConfig(iterations=5, batch=32, lr=0.0, entropy_weight=0.0,
                          seed=3, estimator="standard")
        result = train(policy, self._reward_fn(), cfg)
        assert np.array_equal(policy.theta, theta_before)
        rewards = [row.mean_reward for row in result.trace]
        assert len(set(rewards)) > 0  # sampled, but policy unchanged

    def test_training_improves_reward(self):
        policy = random_policy(13, scale=0.1)
        cfg = TrainConfig(iterations=40, batch=64, lr=0.05, entropy_weight=0.0,
                          seed=4, estimator="standard", baseline="mean")
        result = train(policy, self._reward_fn(), cfg)
        assert result.trace[-1].mean_reward > result.trace[0].mean_reward

    def test_egg_estimator_runs_and_logs_k(self):
        policy = random_policy(14)
        cfg = TrainConfig(iterations=3, batch=16, lr=0.01, seed=5,
                          estimator="egg", K=8, entropy_weight=0.0)
        result = train(policy, self._reward_fn(), cfg, rules=COMM)
        assert all(row.mean_k_used >= 1.0 for row in result.trace)
