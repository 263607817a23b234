"""Estimator verification battery: unbiasedness, variance reduction, the
conditional-expectation key identity, and the K=1 degeneracy, all on an
exactly enumerable grammar.

The search space (4 rules, max_len 4) is small enough to enumerate every
sequence the policy can emit, so the exact objective gradient and the exact
equivalence classes are available as oracles.  Monte Carlo draws then go
through the production sampling and estimator code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .drl import Policy, egg_gradient, exact_gradient, standard_gradient
from .grammar import (
    Grammar,
    evaluate,
    is_complete,
    parse_sequence,
    sequence_to_expression,
)
from .rewrite import builtin_rules

ORACLE_RULES = ("A->(A+A)", "A->log(A)", "A->x1", "A->x2")
ORACLE_MAX_LEN = 4


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


@dataclass
class BatteryReport:
    seed: int
    draws: int
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        header = [f"estimator verification battery (seed={self.seed}, draws={self.draws})"]
        return header + [c.line() for c in self.checks]


def oracle_grammar() -> Grammar:
    return Grammar(ORACLE_RULES)


def make_semantic_reward(grammar: Grammar, seed: int = 7, n_points: int = 32):
    """Reward in (0, 1] from agreement with a fixed target on fixed points.

    The grammar has no coefficient slots, so no fitting is involved and the
    reward is an exact function of the expression's semantics (equivalent
    expressions receive identical rewards).
    """
    rng = np.random.default_rng(seed)
    variables = grammar.variables
    x = rng.uniform(0.5, 2.0, size=(n_points, len(variables)))
    target_expr = sequence_to_expression(parse_sequence("A->(A+A), A->x1, A->x2"))
    y = np.asarray(evaluate(target_expr, x, variables=variables), dtype=float)
    var_y = float(np.var(y))

    def reward_fn(expr) -> float:
        if not is_complete(expr):
            return 0.0
        pred = np.asarray(evaluate(expr, x, variables=variables), dtype=float)
        if not np.all(np.isfinite(pred)):
            return 0.0
        value = float(np.mean((y - pred) ** 2) / var_y)
        return 1.0 / (1.0 + value)

    return reward_fn


def run_battery(
    seed: int = 0,
    draws: int = 100_000,
    variance_slack: float = 1.05,
    key_identity_tol: float = 1e-10,
    forced_bug: bool = False,
) -> BatteryReport:
    """Run every check; with `forced_bug` the aggregated estimator drops its
    probability mixture weights, which the battery is expected to catch."""
    grammar = oracle_grammar()
    rules = builtin_rules(["commutative"])
    policy = Policy(grammar, max_len=ORACLE_MAX_LEN, mask_infeasible=True)
    policy.randomize(np.random.default_rng(seed), scale=0.6)
    reward_fn = make_semantic_reward(grammar)

    report = BatteryReport(seed=seed, draws=draws)
    oracle = exact_gradient(policy, rules, reward_fn)
    reward_of = {s: float(r) for s, r in zip(oracle.sequences, oracle.rewards)}

    # score-function zero mean: sum_tau p grad log p == 0
    zero_mean = np.zeros(policy.n_params)
    for s, p in zip(oracle.sequences, oracle.probs):
        zero_mean += p * policy.grad_logp(s)
    err = float(np.max(np.abs(zero_mean)))
    report.checks.append(CheckResult(
        "score-function-zero-mean", err <= 1e-10, f"max |E grad log p| = {err:.2e}"))

    # key identity per class: sum (p/q) grad log p  ==  (sum p grad log p)/q
    worst = 0.0
    for c in range(len(oracle.class_q)):
        members = [
            (s, p) for s, p, ci in zip(oracle.sequences, oracle.probs, oracle.class_of)
            if ci == c
        ]
        q = oracle.class_q[c]
        lhs = np.zeros(policy.n_params)
        for s, p in members:
            lhs += (p / q) * policy.grad_logp(s)
        worst = max(worst, float(np.max(np.abs(lhs - oracle.class_grad_logq[c]))))
    report.checks.append(CheckResult(
        "key-identity", worst <= key_identity_tol,
        f"max class deviation = {worst:.2e} (tol {key_identity_tol:.0e})"))

    # Monte Carlo moments of both estimators through the production paths
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xBA77]))
    cache: dict = {}
    dim = policy.n_params
    sums = {"std": np.zeros(dim), "egg": np.zeros(dim)}
    sumsq = {"std": np.zeros(dim), "egg": np.zeros(dim)}
    for _ in range(draws):
        traj = policy.sample(rng)
        traj = replace(traj, reward=reward_of[traj.seq])
        g_std = standard_gradient(policy, [traj], baseline="none").vector
        g_egg = egg_gradient(
            policy, [traj], K=64, rules=rules, baseline="none",
            exhaustive=True, cache=cache, uniform_mixture=forced_bug,
        ).vector
        sums["std"] += g_std
        sumsq["std"] += g_std**2
        sums["egg"] += g_egg
        sumsq["egg"] += g_egg**2

    results = {}
    for kind in ("std", "egg"):
        mean = sums[kind] / draws
        var = np.maximum(sumsq[kind] / draws - mean**2, 0.0)
        se = np.sqrt(var / draws)
        gap = np.abs(mean - oracle.grad_J)
        ok = bool(np.all(gap <= 4.0 * se + 1e-12))
        results[kind] = (mean, var, se, gap, ok)
        label = "unbiasedness-standard" if kind == "std" else "unbiasedness-egg"
        report.checks.append(CheckResult(
            label, ok,
            f"max |mean - grad J| = {float(gap.max()):.2e}, max 4*SE = {float((4*se).max()):.2e}"))

    trace_std = float(results["std"][1].sum())
    trace_egg = float(results["egg"][1].sum())
    ok = trace_egg <= variance_slack * trace_std
    report.checks.append(CheckResult(
        "variance-reduction", ok,
        f"trace Cov: egg {trace_egg:.4e} vs standard {trace_std:.4e} "
        f"(slack {variance_slack})"))

    # K=1 degeneracy: aggregated estimator collapses to the standard one
    rng_k = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xA1]))
    batch = []
    for _ in range(16):
        traj = policy.sample(rng_k)
        batch.append(replace(traj, reward=reward_of[traj.seq]))
    g1 = standard_gradient(policy, batch, baseline="none").vector
    g2 = egg_gradient(policy, batch, K=1, rules=rules, baseline="none").vector
    identical = bool(np.array_equal(g1, g2))
    report.checks.append(CheckResult(
        "k1-degeneracy", identical, "bit-identical" if identical else "vectors differ"))

    return report
