"""Equivalence-aware symbolic regression.

A grammar-based e-graph keeps every symbolically equivalent form of a
candidate expression in one shared structure; equality saturation, UCT tree
search, and a policy-gradient trainer all read from it: the tree search
shares rewards across equivalent paths and the trainer aggregates the
probability of equivalent rule sequences into a lower-variance estimator.
"""

from .benchmarks import REGISTRY, BenchmarkSpec, get_benchmark
from .dataopt import (
    Dataset,
    FitConfig,
    FitResult,
    SequenceEvaluator,
    data_oracle,
    fit_batch,
    fit_coefficients,
    metrics,
    nmse,
    reward,
)
from .drl import (
    GradEstimate,
    Policy,
    TrainConfig,
    Trajectory,
    egg_equivalents,
    egg_gradient,
    exact_gradient,
    sample_sequence,
    score_sequence,
    standard_gradient,
    train,
)
from .egraph import (
    EGraph,
    ENode,
    SaturationReport,
    check_equivalent,
    count_choice_variants,
    enumerate_expressions,
    equality_saturation,
    extract_cost,
    extract_random_walk,
    to_dot,
)
from .grammar import (
    Expr,
    Grammar,
    GrammarError,
    ProductionRule,
    complete_randomly,
    evaluate,
    expand_sequence,
    expression_to_sequence,
    parse_rule,
    parse_sequence,
    sequence_to_expression,
    sequence_to_string,
)
from .mcts import MctsConfig, SearchTree, egg_backpropagate, run_mcts, uct_score
from .rewrite import RewriteRule, builtin_rules, load_rules, make_rule
from .verify import run_battery

__version__ = "0.1.0"
