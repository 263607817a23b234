"""Tabular autoregressive policy over production rules, REINFORCE-style
training, and the equivalence-aggregated gradient estimator.

The decoder is a table of logits indexed by (position, previous rule), which
makes log-probabilities and their gradients exact; that exactness is what
lets the enumeration oracle check the estimator theorems to Monte Carlo
precision.  A neural decoder can replace the table behind the same
sample/score/grad interface.

By default the per-step distribution masks rules that could no longer be
completed within ``max_len`` (so every sampled sequence is complete and the
sampling law factors exactly as scored).  With masking off, sequences that
hit the length cap are closed by random terminals scored under the policy at
the last table position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import egraph as eg
from .grammar import Grammar, expand_sequence, expression_to_sequence


class ScoringError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    seq: tuple[int, ...]
    logp: float
    reward: float = math.nan

    @property
    def effective_length(self) -> int:
        return len(self.seq)


class Policy:
    """Tabular autoregressive rule distribution p(rule | position, previous)."""

    def __init__(self, grammar: Grammar, max_len: int = 20, mask_infeasible: bool = True):
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.grammar = grammar
        self.max_len = max_len
        self.mask_infeasible = mask_infeasible
        self.vocab_size = len(grammar)
        self.arity = np.array([r.arity for r in grammar.rules])
        # previous-rule axis has an extra begin-of-sequence row
        self.logits = np.zeros((max_len, self.vocab_size + 1, self.vocab_size))
        self._grad_cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def theta(self) -> np.ndarray:
        """Flat view of the parameters (shares memory with the table)."""
        return self.logits.reshape(-1)

    @property
    def n_params(self) -> int:
        return self.logits.size

    def randomize(self, rng, scale: float = 0.5) -> None:
        self.logits[:] = rng.normal(0.0, scale, size=self.logits.shape)

    def _feasible(self, t: int, open_count: int) -> np.ndarray:
        if not self.mask_infeasible:
            return np.ones(self.vocab_size, dtype=bool)
        remaining = self.max_len - t - 1
        return (open_count - 1 + self.arity) <= remaining

    def _prev_index(self, seq, t: int) -> int:
        return self.vocab_size if t == 0 else seq[t - 1]

    def distribution(self, t: int, prev: int, open_count: int) -> np.ndarray:
        """Masked softmax over the vocabulary for one decoding context."""
        z = self.logits[min(t, self.max_len - 1), prev]
        feasible = self._feasible(min(t, self.max_len - 1), open_count)
        if not feasible.any():
            raise ScoringError("no feasible rule in this context")
        probs = np.zeros(self.vocab_size)
        zf = z[feasible]
        zf = zf - zf.max()
        ex = np.exp(zf)
        probs[feasible] = ex / ex.sum()
        return probs

    def sample(self, rng) -> Trajectory:
        """Draw one rule sequence; deterministic under the rng state."""
        seq: list[int] = []
        logp = 0.0
        open_count = 1
        t = 0
        while open_count > 0 and t < self.max_len:
            probs = self.distribution(t, self._prev_index(seq, t), open_count)
            choice = int(rng.choice(self.vocab_size, p=probs))
            seq.append(choice)
            logp += math.log(probs[choice])
            open_count += self.arity[choice] - 1
            t += 1
        if open_count > 0:
            # length cap hit (mask off): close with random terminals, scored
            # under the policy at the clamped last position
            terminals = [
                self.grammar.index_of(r) for r in self.grammar.terminals
            ]
            while open_count > 0:
                choice = terminals[int(rng.integers(len(terminals)))]
                probs = self.distribution(t, self._prev_index(seq, t), open_count)
                logp += math.log(probs[choice]) if probs[choice] > 0 else -math.inf
                seq.append(choice)
                open_count -= 1
                t += 1
        return Trajectory(tuple(seq), logp)

    def _check(self, seq) -> None:
        if len(seq) > self.max_len and self.mask_infeasible:
            raise ScoringError(f"sequence longer than max_len={self.max_len}")
        for i in seq:
            if not (0 <= i < self.vocab_size):
                raise ScoringError(f"rule index {i} outside the vocabulary")

    def score(self, seq) -> float:
        """Teacher-forced log-probability; agrees with sample() exactly."""
        self._check(seq)
        logp = 0.0
        open_count = 1
        for t, choice in enumerate(seq):
            probs = self.distribution(t, self._prev_index(seq, t), open_count)
            p = probs[choice]
            if p <= 0.0:
                raise ScoringError("sequence is infeasible under the mask")
            logp += math.log(p)
            open_count += self.arity[choice] - 1
        return logp

    def grad_logp(self, seq) -> np.ndarray:
        """Exact gradient of log p(seq) w.r.t. the flat parameters.

        Results are memoized by sequence; call clear_cache() after any
        parameter update.
        """
        key = tuple(seq)
        cached = self._grad_cache.get(key)
        if cached is not None:
            return cached
        self._check(seq)
        grad = np.zeros_like(self.logits)
        open_count = 1
        for t, choice in enumerate(seq):
            row = min(t, self.max_len - 1)
            prev = self._prev_index(seq, t)
            probs = self.distribution(t, prev, open_count)
            grad[row, prev] -= probs
            grad[row, prev, choice] += 1.0
            open_count += self.arity[choice] - 1
        flat = grad.reshape(-1)
        self._grad_cache[key] = flat
        return flat

    def entropy_grad(self, seq, weight: float, gamma: float) -> np.ndarray:
        """Gradient of the decayed entropy bonus sum_t weight*gamma^t H_t
        along the contexts this sequence visits."""
        grad = np.zeros_like(self.logits)
        open_count = 1
        for t, choice in enumerate(seq):
            row = min(t, self.max_len - 1)
            prev = self._prev_index(seq, t)
            probs = self.distribution(t, prev, open_count)
            support = probs > 0
            logp = np.zeros_like(probs)
            logp[support] = np.log(probs[support])
            entropy = -float(np.sum(probs[support] * logp[support]))
            dh = np.zeros_like(probs)
            dh[support] = -probs[support] * (logp[support] + entropy)
            grad[row, prev] += weight * (gamma**t) * dh
            open_count += self.arity[choice] - 1
        return grad.reshape(-1)

    def clear_cache(self) -> None:
        self._grad_cache.clear()


def sample_sequence(policy: Policy, rng) -> Trajectory:
    """Free-function alias for Policy.sample."""
    return policy.sample(rng)


def score_sequence(policy: Policy, seq) -> float:
    """Free-function alias for Policy.score."""
    return policy.score(seq)


# ---------------------------------------------------------------------------
# Gradient estimators


@dataclass(frozen=True)
class GradEstimate:
    vector: np.ndarray
    kind: str
    K_used: int
    baseline: float


BASELINE_MODES = ("none", "mean", "top_quantile")


def compute_baseline(rewards, mode: str) -> float:
    if mode == "none":
        return 0.0
    if mode == "mean":
        return float(np.mean(rewards))
    if mode == "top_quantile":
        # threshold of the top 25% of sampled rewards
        return float(np.quantile(rewards, 0.75))
    raise ValueError(f"unknown baseline mode {mode!r}")


def standard_gradient(policy: Policy, trajectories, baseline: str = "none") -> GradEstimate:
    """Score-function estimator (1/N) sum_i (r_i - b) grad log p(tau_i)."""
    if not trajectories:
        raise ValueError("need at least one trajectory")
    rewards = np.array([t.reward for t in trajectories])
    b = compute_baseline(rewards, baseline)
    total = np.zeros(policy.n_params)
    for traj in trajectories:
        total += (traj.reward - b) * policy.grad_logp(traj.seq)
    return GradEstimate(total / len(trajectories), "standard", 1, b)


def egg_equivalents(
    seq,
    policy: Policy,
    rules,
    K: int,
    rng=None,
    sat_max_iter: int = eg.DEFAULT_MAX_ITER,
    sat_max_nodes: int = eg.DEFAULT_MAX_NODES,
    exhaustive: bool = False,
    cache: dict | None = None,
) -> list[tuple[int, ...]]:
    """Up to K equivalent rule sequences for `seq`, the original first.

    The sampled expression is saturated and equivalents are extracted by
    random walk (or exhaustively for oracle use), deduplicated, and filtered
    to sequences the policy can score (in-vocabulary, within max_len).
    """
    seq = tuple(seq)
    if cache is not None and seq in cache:
        return cache[seq]
    result = [seq]
    if K > 1 and rules:
        grammar = policy.grammar
        expr = expand_sequence(tuple(grammar.rules[i] for i in seq)).expr
        g, _ = eg.equality_saturation(expr, rules, max_iter=sat_max_iter, max_nodes=sat_max_nodes)
        if exhaustive:
            candidates = [
                expression_to_sequence(e)
                for e in eg.enumerate_expressions(g, policy.max_len)
            ]
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            try:
                candidates = eg.extract_random_walk(g, rng, k=K, max_depth=4 * policy.max_len)
            except eg.ExtractionError:
                candidates = []
        for cand in candidates:
            try:
                indices = tuple(grammar.index_of(r) for r in cand)
                policy.score(indices)
            except Exception:
                continue
            if indices not in result:
                result.append(indices)
            if len(result) >= K:
                break
    if cache is not None:
        cache[seq] = result
    return result


def egg_gradient(
    policy: Policy,
    trajectories,
    K: int,
    rules,
    baseline: str = "none",
    rng=None,
    sat_max_iter: int = eg.DEFAULT_MAX_ITER,
    sat_max_nodes: int = eg.DEFAULT_MAX_NODES,
    exhaustive: bool = False,
    cache: dict | None = None,
    uniform_mixture: bool = False,
) -> GradEstimate:
    """Aggregated estimator (1/N) sum_i (r_i - b) grad log sum_k p(tau_i^k).

    The gradient of the log-sum is the probability-weighted mixture of the
    members' score functions.  `uniform_mixture` deliberately drops those
    weights (for the mutation check in the verification battery) and is not
    a correct estimator.
    """
    if not trajectories:
        raise ValueError("need at least one trajectory")
    if K < 1:
        raise ValueError("K must be >= 1")
    rewards = np.array([t.reward for t in trajectories])
    b = compute_baseline(rewards, baseline)
    total = np.zeros(policy.n_params)
    k_used_total = 0
    for traj in trajectories:
        members = egg_equivalents(
            traj.seq, policy, rules, K, rng=rng,
            sat_max_iter=sat_max_iter, sat_max_nodes=sat_max_nodes,
            exhaustive=exhaustive, cache=cache,
        )
        k_used_total += len(members)
        if len(members) == 1:
            mix = 1.0 * policy.grad_logp(members[0])
        else:
            logps = np.array([policy.score(m) for m in members])
            weights = np.exp(logps - logps.max())
            weights /= weights.sum()
            if uniform_mixture:
                weights = np.full(len(members), 1.0 / len(members))
            mix = np.zeros(policy.n_params)
            for w, member in zip(weights, members):
                mix += w * policy.grad_logp(member)
        total += (traj.reward - b) * mix
    k_used = int(round(k_used_total / len(trajectories)))
    return GradEstimate(total / len(trajectories), "egg", k_used, b)


def aggregated_logp(policy: Policy, members) -> float:
    """log sum_k p(tau^k), computed stably."""
    logps = np.array([policy.score(m) for m in members])
    peak = logps.max()
    return float(peak + np.log(np.sum(np.exp(logps - peak))))


# ---------------------------------------------------------------------------
# Exact enumeration oracle


@dataclass(frozen=True)
class ExactOracle:
    sequences: tuple[tuple[int, ...], ...]
    probs: np.ndarray
    rewards: np.ndarray
    grad_J: np.ndarray
    J: float
    class_of: tuple[int, ...]
    class_q: np.ndarray
    class_grad_logq: np.ndarray

    def class_members(self, class_index: int):
        return [s for s, c in zip(self.sequences, self.class_of) if c == class_index]


def enumerate_sequences(policy: Policy, budget: int = 1_000_000):
    """All complete sequences the masked policy can emit, with probabilities."""
    grammar = policy.grammar
    out: list[tuple[tuple[int, ...], float]] = []

    def go(seq: list[int], logp: float, open_count: int, t: int):
        if open_count == 0:
            out.append((tuple(seq), logp))
            if len(out) > budget:
                raise OracleError(f"more than {budget} sequences")
            return
        if t >= policy.max_len:
            return
        prev = policy.vocab_size if t == 0 else seq[-1]
        probs = policy.distribution(t, prev, open_count)
        for choice in range(policy.vocab_size):
            if probs[choice] <= 0.0:
                continue
            seq.append(choice)
            go(seq, logp + math.log(probs[choice]), open_count + policy.arity[choice] - 1, t + 1)
            seq.pop()

    go([], 0.0, 1, 0)
    sequences = tuple(s for s, _ in out)
    probs = np.array([math.exp(lp) for _, lp in out])
    return sequences, probs


def exact_gradient(
    policy: Policy,
    rules,
    reward_fn,
    budget: int = 1_000_000,
    sat_max_iter: int = eg.DEFAULT_MAX_ITER,
    sat_max_nodes: int = eg.DEFAULT_MAX_NODES,
) -> ExactOracle:
    """Enumerate the policy's whole sequence space: exact J(theta), exact
    grad J, the partition into rewrite-equivalence classes, each class's
    total probability q, and the class-conditional grad log q.

    Requires the masked policy (otherwise the sampling law has truncation
    mass the enumeration cannot see).
    """
    if not policy.mask_infeasible:
        raise OracleError("exact enumeration requires mask_infeasible=True")
    grammar = policy.grammar
    sequences, probs = enumerate_sequences(policy, budget)
    rewards = np.array([
        reward_fn(expand_sequence(tuple(grammar.rules[i] for i in s)).expr)
        for s in sequences
    ])

    grad_J = np.zeros(policy.n_params)
    for seq, p, r in zip(sequences, probs, rewards):
        grad_J += p * r * policy.grad_logp(seq)
    J = float(np.sum(probs * rewards))

    # partition by saturating all expressions in one shared graph
    g = eg.EGraph()
    roots = []
    for seq in sequences:
        expr = expand_sequence(tuple(grammar.rules[i] for i in seq)).expr
        roots.append(g.add_expression(expr))
    for _ in range(sat_max_iter):
        before = g.version
        g.apply_rewrite_rules(rules)
        if g.version == before or g.node_count > sat_max_nodes:
            break
    class_index: dict[int, int] = {}
    class_of = []
    for root in roots:
        rep = g.find(root)
        if rep not in class_index:
            class_index[rep] = len(class_index)
        class_of.append(class_index[rep])
    n_classes = len(class_index)

    class_q = np.zeros(n_classes)
    class_weighted = np.zeros((n_classes, policy.n_params))
    for seq, p, c in zip(sequences, probs, class_of):
        class_q[c] += p
        class_weighted[c] += p * policy.grad_logp(seq)
    class_grad_logq = class_weighted / class_q[:, None]

    return ExactOracle(
        sequences, probs, rewards, grad_J, J,
        tuple(class_of), class_q, class_grad_logq,
    )


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    iterations: int = 200
    batch: int = 1024
    lr: float = 0.009
    entropy_weight: float = 0.03
    entropy_gamma: float = 0.7
    estimator: str = "standard"  # or "egg"
    K: int = 8
    baseline: str = "mean"
    seed: int = 0
    sat_max_iter: int = eg.DEFAULT_MAX_ITER
    sat_max_nodes: int = eg.DEFAULT_MAX_NODES
    early_stop_nmse: float | None = None


@dataclass
class TrainTraceRow:
    iteration: int
    mean_reward: float
    best_nmse: float
    estimator_mean: float
    estimator_std: float
    mean_k_used: float


@dataclass
class TrainResult:
    best_seq: tuple | None
    best_nmse: float
    trace: list[TrainTraceRow]


class Adam:
    """Adaptive-moment ascent on a flat parameter vector."""

    def __init__(self, n_params: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        theta += self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    policy: Policy,
    reward_fn,
    config: TrainConfig,
    rules=(),
    nmse_fn=None,
) -> TrainResult:
    """REINFORCE training loop with entropy bonus.

    `reward_fn(expr, seq) -> (reward, nmse)` prices a completed expression;
    the trace logs the batch mean/std of the per-sample estimated objective
    (reward * log-probability, aggregated probability for the egg
    estimator), which is the quantity whose stability the equivalence
    aggregation improves.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF, 0xD21]))
    opt = Adam(policy.n_params, config.lr)
    best_seq, best_nmse = None, math.inf
    trace: list[TrainTraceRow] = []
    equivalents_cache: dict = {}

    for iteration in range(1, config.iterations + 1):
        policy.clear_cache()
        trajectories = []
        for _ in range(config.batch):
            traj = policy.sample(rng)
            r, value = reward_fn(expand_sequence(
                tuple(policy.grammar.rules[i] for i in traj.seq)).expr, traj.seq)
            trajectories.append(replace(traj, reward=r))
            if value < best_nmse:
                best_seq, best_nmse = traj.seq, value

        if config.estimator == "egg":
            estimate = egg_gradient(
                policy, trajectories, config.K, rules,
                baseline=config.baseline, rng=rng,
                sat_max_iter=config.sat_max_iter, sat_max_nodes=config.sat_max_nodes,
                cache=equivalents_cache,
            )
            objective = np.array([
                t.reward * aggregated_logp(
                    policy,
                    egg_equivalents(t.seq, policy, rules, config.K, rng=rng,
                                    cache=equivalents_cache),
                )
                for t in trajectories
            ])
        else:
            estimate = standard_gradient(policy, trajectories, baseline=config.baseline)
            objective = np.array([t.reward * t.logp for t in trajectories])

        grad = estimate.vector.copy()
        if config.entropy_weight:
            bonus = np.zeros(policy.n_params)
            for traj in trajectories:
                bonus += policy.entropy_grad(traj.seq, config.entropy_weight, config.entropy_gamma)
            grad += bonus / len(trajectories)
        if config.lr:
            opt.step(policy.theta, grad)

        trace.append(TrainTraceRow(
            iteration,
            float(np.mean([t.reward for t in trajectories])),
            best_nmse,
            float(np.mean(objective)),
            float(np.std(objective)),
            float(estimate.K_used) if config.estimator == "egg" else 1.0,
        ))
        if config.early_stop_nmse is not None and best_nmse < config.early_stop_nmse:
            break
    return TrainResult(best_seq, best_nmse, trace)
