"""UCT Monte Carlo tree search over production-rule sequences.

Tree edges are grammar rules; a node's label is the partial expression built
by the rule sequence from the root.  The equivalence-aware variant saturates
the selected partial expression after each simulation, samples equivalent
rule sequences from the e-graph, and backpropagates the same reward along
every equivalent path already present in the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import egraph as eg
from .dataopt import Dataset, FitConfig, FitResult, SequenceEvaluator
from .grammar import Expansion, Expr, Grammar, complete_randomly, expand_sequence


@dataclass
class MctsConfig:
    c: float = math.sqrt(2.0)
    rollouts: int = 4
    max_depth: int = 10
    iterations: int = 100
    egg_enabled: bool = False
    k_paths: int = 8
    sat_max_iter: int = eg.DEFAULT_MAX_ITER
    sat_max_nodes: int = eg.DEFAULT_MAX_NODES
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    early_stop_nmse: float | None = None

    def __post_init__(self):
        if self.c < 0 or self.iterations < 1:
            raise ValueError("require c >= 0 and iterations >= 1")


class SearchNode:
    """One tree node: per-edge visit counts and reward sums, plus the number
    of simulations that terminated here (for the conservation invariant)."""

    __slots__ = ("path", "children", "visits", "child_visits", "child_reward", "terminal_updates")

    def __init__(self, path: tuple[int, ...]):
        self.path = path
        self.children: dict[int, SearchNode] = {}
        self.visits = 0
        self.child_visits: dict[int, int] = {}
        self.child_reward: dict[int, float] = {}
        self.terminal_updates = 0

    def edge_reward(self, rule_index: int) -> float:
        return self.child_reward[rule_index] / self.child_visits[rule_index]


class SearchTree:
    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.root = SearchNode(())

    def walk(self, path) -> SearchNode | None:
        node = self.root
        for rule_index in path:
            node = node.children.get(rule_index)
            if node is None:
                return None
        return node

    def size(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count


def uct_score(node: SearchNode, rule_index: int, c: float) -> float:
    """UCT value of taking `rule_index` at `node`; unvisited edges score
    +inf so every child is tried once (in rule order)."""
    visits = node.child_visits.get(rule_index, 0)
    if visits == 0:
        return math.inf
    mean = node.child_reward[rule_index] / visits
    return mean + c * math.sqrt(math.log(node.visits) / visits)


def select(tree: SearchTree, c: float) -> SearchNode:
    """Descend by argmax UCT (ties to the lowest rule index) to a leaf."""
    node = tree.root
    while node.children:
        best = max(sorted(node.children), key=lambda r: (uct_score(node, r, c), -r))
        node = node.children[best]
    return node


def _expansion(grammar: Grammar, path) -> Expansion:
    if not path:
        # the root is the bare start symbol: one open nonterminal
        return Expansion(Expr("hole"), 0, ())
    return expand_sequence(tuple(grammar.rules[i] for i in path))


def applicable_rules(grammar: Grammar, path, max_depth: int) -> list[int]:
    """Rules that keep the sequence completable within the depth budget:
    after applying a rule, every open nonterminal still needs one rule."""
    exp = _expansion(grammar, path)
    if exp.open == 0:
        return []
    remaining = max_depth - len(path) - 1
    out = []
    for i, rule in enumerate(grammar.rules):
        if rule.op == "pvar":
            continue
        if exp.open - 1 + rule.arity <= remaining:
            out.append(i)
    return out


def expand(node: SearchNode, grammar: Grammar, max_depth: int) -> list[SearchNode]:
    """Create one child per applicable rule; complete paths are terminal."""
    if node.children:
        raise RuntimeError("node already expanded")
    rules = applicable_rules(grammar, node.path, max_depth)
    if not rules:
        raise RuntimeError("cannot expand a terminal node")
    for i in rules:
        node.children[i] = SearchNode(node.path + (i,))
        node.child_visits[i] = 0
        node.child_reward[i] = 0.0
    return [node.children[i] for i in rules]


def backpropagate(tree: SearchTree, path, reward: float) -> None:
    """Add one visit and `reward` to every (node, edge) along `path`."""
    node = tree.root
    node.visits += 1
    for rule_index in path:
        child = node.children.get(rule_index)
        if child is None:
            raise RuntimeError("path not present in tree")
        node.child_visits[rule_index] += 1
        node.child_reward[rule_index] += reward
        node = child
        node.visits += 1
    node.terminal_updates += 1


def egg_backpropagate(
    tree: SearchTree,
    path,
    reward: float,
    rules,
    k_paths: int,
    rng,
    sat_max_iter: int = eg.DEFAULT_MAX_ITER,
    sat_max_nodes: int = eg.DEFAULT_MAX_NODES,
) -> int:
    """Backpropagate along `path` and along up to k_paths-1 equivalent paths.

    The node's partial expression is saturated (hole leaves stay opaque),
    equivalent sequences are sampled by random walk, mapped back to rule
    indices, and any whose full path already exists in the tree receives the
    identical reward update.  Returns how many paths were updated.
    """
    backpropagate(tree, path, reward)
    expr = _expansion(tree.grammar, path).expr
    g, _ = eg.equality_saturation(expr, rules, max_iter=sat_max_iter, max_nodes=sat_max_nodes)
    try:
        sequences = eg.extract_random_walk(
            g, rng, k=k_paths, allow_partial=True, max_depth=4 * max(len(path), 1) + 8
        )
    except eg.ExtractionError:
        return 1
    updated = 1
    for seq in sequences:
        try:
            candidate = tuple(tree.grammar.index_of(r) for r in seq)
        except Exception:
            continue  # uses rules outside the search grammar
        if candidate == tuple(path):
            continue
        if tree.walk(candidate) is not None:
            backpropagate(tree, candidate, reward)
            updated += 1
    return updated


@dataclass
class TraceRow:
    iteration: int
    tree_nodes: int
    best_nmse: float
    updated_paths: int


@dataclass
class MctsResult:
    best_sequence: tuple | None
    best_fit: FitResult | None
    trace: list[TraceRow]

    @property
    def best_nmse(self) -> float:
        return self.best_fit.nmse if self.best_fit else math.inf


def simulate(
    node: SearchNode,
    grammar: Grammar,
    evaluator: SequenceEvaluator,
    rollouts: int,
    rng,
):
    """Run `rollouts` random completions of the node's path; returns the mean
    reward and the best (sequence, fit) seen."""
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")
    prefix = tuple(grammar.rules[i] for i in node.path)
    total = 0.0
    best_seq, best_fit = None, None
    for _ in range(rollouts):
        seq = complete_randomly(prefix, grammar, rng)
        fit = evaluator.fit(seq)
        total += fit.reward
        if best_fit is None or fit.nmse < best_fit.nmse:
            best_seq, best_fit = seq, fit
    return total / rollouts, best_seq, best_fit


def run_mcts(
    grammar: Grammar,
    dataset: Dataset,
    config: MctsConfig,
    rules=(),
    evaluator: SequenceEvaluator | None = None,
) -> MctsResult:
    """Full search loop: select, expand, simulate each new child, backprop
    (equivalence-aware when enabled).  Deterministic under config.seed."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed & 0xFFFFFFFF, 0xE99]))
    tree = SearchTree(grammar)
    if evaluator is None:
        evaluator = SequenceEvaluator(dataset, config.fit, config.seed)
    best_seq, best_fit = None, None
    trace: list[TraceRow] = []

    def consider(seq, fit):
        nonlocal best_seq, best_fit
        if fit is not None and (best_fit is None or fit.nmse < best_fit.nmse):
            best_seq, best_fit = seq, fit

    for iteration in range(1, config.iterations + 1):
        leaf = select(tree, config.c)
        exp = _expansion(grammar, leaf.path) if leaf.path else None
        is_terminal = leaf.path != () and exp.open == 0
        updated = 0
        if is_terminal:
            seq = tuple(grammar.rules[i] for i in leaf.path)
            fit = evaluator.fit(seq)
            consider(seq, fit)
            updated += _backprop(tree, leaf.path, fit.reward, config, rules, rng)
        else:
            children = expand(leaf, grammar, config.max_depth)
            for child in children:
                mean_reward, seq, fit = simulate(child, grammar, evaluator, config.rollouts, rng)
                consider(seq, fit)
                updated += _backprop(tree, child.path, mean_reward, config, rules, rng)
        trace.append(TraceRow(iteration, tree.size(),
                              best_fit.nmse if best_fit else math.inf, updated))
        if (
            config.early_stop_nmse is not None
            and best_fit is not None
            and best_fit.nmse < config.early_stop_nmse
        ):
            break
    return MctsResult(best_seq, best_fit, trace)


def _backprop(tree, path, reward, config: MctsConfig, rules, rng) -> int:
    if config.egg_enabled:
        return egg_backpropagate(
            tree, path, reward, rules, config.k_paths, rng,
            sat_max_iter=config.sat_max_iter, sat_max_nodes=config.sat_max_nodes,
        )
    backpropagate(tree, path, reward)
    return 1
