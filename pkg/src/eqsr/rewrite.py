"""Rewrite rules: directed pattern pairs over the expression grammar.

A pattern is an expression tree whose leaves may be placeholders (bare
lowercase letters) binding arbitrary sub-expressions.  The built-in catalog
encodes standard mathematical identities; every identity contributes both
directions unless the reverse would introduce an unbound placeholder (for
example ``1 ~> sin(a)^2 + cos(a)^2``) or is the same rule up to placeholder
renaming (commutativity).
"""

from __future__ import annotations

from dataclasses import dataclass

from .grammar import (
    Expr,
    GrammarError,
    expand_sequence,
    parse_sequence,
    preorder,
)


class RuleError(ValueError):
    """Invalid rewrite-rule definition."""


CATEGORIES = (
    "commutative",
    "distributive",
    "factorization",
    "log-exp",
    "trig",
    "half-angle",
    "derivative",
    "custom",
)


@dataclass(frozen=True)
class RewriteRule:
    """Directed rewrite LHS ~> RHS with a stable name and category."""

    name: str
    lhs: Expr
    rhs: Expr
    category: str = "custom"

    def __str__(self) -> str:
        return f"{self.name}: {self.lhs} ~> {self.rhs}"


def pattern_placeholders(expr: Expr) -> frozenset:
    return frozenset(n.name for n in preorder(expr) if n.op == "pvar")


def _as_pattern(seq) -> Expr:
    if isinstance(seq, str):
        seq = parse_sequence(seq)
    exp = expand_sequence(seq)
    if exp.open:
        raise RuleError("pattern sequence leaves nonterminals open")
    if exp.unused:
        raise RuleError(f"pattern sequence has unused trailing rules: {exp.unused}")
    return exp.expr


def make_rule(name: str, lhs_seq, rhs_seq, category: str = "custom") -> RewriteRule:
    """Build a rewrite rule from two pattern sequences.

    Every placeholder on the RHS must also occur on the LHS.
    """
    if category not in CATEGORIES:
        raise RuleError(f"unknown rule category {category!r}")
    lhs = _as_pattern(lhs_seq)
    rhs = _as_pattern(rhs_seq)
    missing = pattern_placeholders(rhs) - pattern_placeholders(lhs)
    if missing:
        raise RuleError(
            f"rule {name}: RHS placeholders {sorted(missing)} unbound on the LHS"
        )
    return RewriteRule(name, lhs, rhs, category)


def _alpha_key(lhs: Expr, rhs: Expr) -> tuple:
    """Structure of a rule pair with placeholders renamed by first appearance."""
    names: dict[str, str] = {}

    def key(node: Expr):
        if node.op == "pvar":
            if node.name not in names:
                names[node.name] = f"p{len(names)}"
            return ("pvar", names[node.name])
        return (node.op, node.value, node.name, tuple(key(c) for c in node.children))

    return (key(lhs), key(rhs))


# (name, category, lhs sequence, rhs sequence)
_CATALOG = [
    # structural laws
    ("add-comm", "commutative",
     "A->(A+A), A->a, A->b",
     "A->(A+A), A->b, A->a"),
    ("mul-comm", "commutative",
     "A->(A*A), A->a, A->b",
     "A->(A*A), A->b, A->a"),
    # distribution of one operation over another
    ("mul-over-add", "distributive",
     "A->(A*A), A->a, A->(A+A), A->b, A->c",
     "A->(A+A), A->(A*A), A->a, A->b, A->(A*A), A->a, A->c"),
    ("square-of-sum", "distributive",
     "A->(A^A), A->(A+A), A->a, A->b, A->2",
     "A->(A+A), A->(A+A), A->(A^A), A->a, A->2, A->(A*A), A->2, A->(A*A), A->a, A->b, A->(A^A), A->b, A->2"),
    ("pow-over-mul", "distributive",
     "A->(A^A), A->(A*A), A->a, A->b, A->c",
     "A->(A*A), A->(A^A), A->a, A->c, A->(A^A), A->b, A->c"),
    ("pow-over-div", "distributive",
     "A->(A^A), A->(A/A), A->a, A->b, A->c",
     "A->(A/A), A->(A^A), A->a, A->c, A->(A^A), A->b, A->c"),
    ("sqrt-over-mul", "distributive",
     "A->sqrt(A), A->(A*A), A->a, A->b",
     "A->(A*A), A->sqrt(A), A->a, A->sqrt(A), A->b"),
    # factorization
    ("difference-of-squares", "factorization",
     "A->(A-A), A->(A^A), A->a, A->2, A->(A^A), A->b, A->2",
     "A->(A*A), A->(A+A), A->a, A->b, A->(A-A), A->a, A->b"),
    # exponential / logarithmic identities
    ("exp-of-sum", "log-exp",
     "A->exp(A), A->(A+A), A->a, A->b",
     "A->(A*A), A->exp(A), A->a, A->exp(A), A->b"),
    ("log-of-product", "log-exp",
     "A->log(A), A->(A*A), A->a, A->b",
     "A->(A+A), A->log(A), A->a, A->log(A), A->b"),
    ("log-of-power", "log-exp",
     "A->log(A), A->(A^A), A->a, A->b",
     "A->(A*A), A->b, A->log(A), A->a"),
    ("log-of-quotient", "log-exp",
     "A->log(A), A->(A/A), A->a, A->b",
     "A->(A-A), A->log(A), A->a, A->log(A), A->b"),
    ("exp-pair-to-cosh", "log-exp",
     "A->(A+A), A->exp(A), A->a, A->exp(A), A->(-A), A->a",
     "A->(A*A), A->2, A->cosh(A), A->a"),
    ("tanh-to-exp", "log-exp",
     "A->tanh(A), A->a",
     "A->(A/A), A->(A-A), A->exp(A), A->(A*A), A->2, A->a, A->1, A->(A+A), A->exp(A), A->(A*A), A->2, A->a, A->1"),
    # trigonometric sum and difference formulas
    ("sin-of-sum", "trig",
     "A->sin(A), A->(A+A), A->a, A->b",
     "A->(A+A), A->(A*A), A->sin(A), A->a, A->cos(A), A->b, A->(A*A), A->cos(A), A->a, A->sin(A), A->b"),
    ("sin-of-diff", "trig",
     "A->sin(A), A->(A-A), A->a, A->b",
     "A->(A-A), A->(A*A), A->sin(A), A->a, A->cos(A), A->b, A->(A*A), A->cos(A), A->a, A->sin(A), A->b"),
    ("cos-of-sum", "trig",
     "A->cos(A), A->(A+A), A->a, A->b",
     "A->(A-A), A->(A*A), A->cos(A), A->a, A->cos(A), A->b, A->(A*A), A->sin(A), A->a, A->sin(A), A->b"),
    ("cos-of-diff", "trig",
     "A->cos(A), A->(A-A), A->a, A->b",
     "A->(A+A), A->(A*A), A->cos(A), A->a, A->cos(A), A->b, A->(A*A), A->sin(A), A->a, A->sin(A), A->b"),
    ("tan-of-sum", "trig",
     "A->tan(A), A->(A+A), A->a, A->b",
     "A->(A/A), A->(A+A), A->tan(A), A->a, A->tan(A), A->b, A->(A-A), A->1, A->(A*A), A->tan(A), A->a, A->tan(A), A->b"),
    ("tan-of-diff", "trig",
     "A->tan(A), A->(A-A), A->a, A->b",
     "A->(A/A), A->(A-A), A->tan(A), A->a, A->tan(A), A->b, A->(A+A), A->1, A->(A*A), A->tan(A), A->a, A->tan(A), A->b"),
    # double angle
    ("sin-double", "trig",
     "A->sin(A), A->(A+A), A->a, A->a",
     "A->(A*A), A->2, A->(A*A), A->sin(A), A->a, A->cos(A), A->a"),
    ("cos-double-squares", "trig",
     "A->cos(A), A->(A+A), A->a, A->a",
     "A->(A-A), A->(A^A), A->cos(A), A->a, A->2, A->(A^A), A->sin(A), A->a, A->2"),
    ("cos-double-cos", "trig",
     "A->cos(A), A->(A+A), A->a, A->a",
     "A->(A-A), A->(A*A), A->2, A->(A^A), A->cos(A), A->a, A->2, A->1"),
    ("cos-double-sin", "trig",
     "A->cos(A), A->(A+A), A->a, A->a",
     "A->(A-A), A->1, A->(A*A), A->2, A->(A^A), A->sin(A), A->a, A->2"),
    ("tan-double", "trig",
     "A->tan(A), A->(A+A), A->a, A->a",
     "A->(A/A), A->(A*A), A->2, A->tan(A), A->a, A->(A-A), A->1, A->(A^A), A->tan(A), A->a, A->2"),
    ("cos-sin-to-double", "trig",
     "A->(A*A), A->cos(A), A->a, A->sin(A), A->a",
     "A->(A/A), A->sin(A), A->(A*A), A->2, A->a, A->2"),
    # sum-to-product
    ("sin-sum-to-product", "trig",
     "A->(A+A), A->sin(A), A->a, A->sin(A), A->b",
     "A->(A*A), A->2, A->(A*A), A->sin(A), A->(A/A), A->(A+A), A->a, A->b, A->2, A->cos(A), A->(A/A), A->(A-A), A->a, A->b, A->2"),
    ("cos-sum-to-product", "trig",
     "A->(A+A), A->cos(A), A->a, A->cos(A), A->b",
     "A->(A*A), A->2, A->(A*A), A->cos(A), A->(A/A), A->(A+A), A->a, A->b, A->2, A->cos(A), A->(A/A), A->(A-A), A->a, A->b, A->2"),
    # product-to-sum
    ("sin-cos-to-sum", "trig",
     "A->(A*A), A->sin(A), A->a, A->cos(A), A->b",
     "A->(A*A), A->0.5, A->(A+A), A->sin(A), A->(A+A), A->a, A->b, A->sin(A), A->(A-A), A->a, A->b"),
    ("cos-cos-to-sum", "trig",
     "A->(A*A), A->cos(A), A->a, A->cos(A), A->b",
     "A->(A*A), A->0.5, A->(A+A), A->cos(A), A->(A+A), A->a, A->b, A->cos(A), A->(A-A), A->a, A->b"),
    ("sin-sin-to-diff", "trig",
     "A->(A*A), A->sin(A), A->a, A->sin(A), A->b",
     "A->(A*A), A->0.5, A->(A-A), A->cos(A), A->(A-A), A->a, A->b, A->cos(A), A->(A+A), A->a, A->b"),
    # Pythagorean (reverse omitted: it would match the bare literal 1 with
    # an unbound placeholder)
    ("pythagorean-sin-cos", "trig",
     "A->(A+A), A->(A^A), A->sin(A), A->a, A->2, A->(A^A), A->cos(A), A->a, A->2",
     "A->1"),
    # half-angle formulas
    ("sin-half-square", "half-angle",
     "A->(A^A), A->sin(A), A->(A/A), A->a, A->2, A->2",
     "A->(A/A), A->(A-A), A->1, A->cos(A), A->a, A->2"),
    ("cos-half-square", "half-angle",
     "A->(A^A), A->cos(A), A->(A/A), A->a, A->2, A->2",
     "A->(A/A), A->(A+A), A->1, A->cos(A), A->a, A->2"),
    ("tan-half-square", "half-angle",
     "A->(A^A), A->tan(A), A->(A/A), A->a, A->2, A->2",
     "A->(A/A), A->(A-A), A->1, A->cos(A), A->a, A->(A+A), A->1, A->cos(A), A->a"),
]

_PARTIAL_VARS = 4  # derivative commutation rules are generated for x1..x4


def _derivative_rules() -> list[RewriteRule]:
    rules = []
    for i in range(1, _PARTIAL_VARS + 1):
        for j in range(1, _PARTIAL_VARS + 1):
            if i == j:
                continue
            lhs = f"A->d(A)/dx{i}, A->d(A)/dx{j}, A->f"
            rhs = f"A->d(A)/dx{j}, A->d(A)/dx{i}, A->f"
            rules.append(make_rule(f"partial-commute-x{i}-x{j}", lhs, rhs, "derivative"))
    return rules


def builtin_rules(categories=None) -> tuple[RewriteRule, ...]:
    """The built-in identity catalog, optionally filtered by category.

    Each identity appears in both directions; reverses that are unsound
    (unbound placeholders) or redundant (self-symmetric) are skipped.
    """
    if categories is None:
        wanted = set(CATEGORIES) - {"custom"}
    else:
        wanted = set(categories)
        unknown = wanted - set(CATEGORIES)
        if unknown:
            raise RuleError(f"unknown rule categories {sorted(unknown)}")

    rules: list[RewriteRule] = []
    for name, category, lhs_seq, rhs_seq in _CATALOG:
        if category not in wanted:
            continue
        forward = make_rule(name, lhs_seq, rhs_seq, category)
        rules.append(forward)
        if pattern_placeholders(forward.lhs) - pattern_placeholders(forward.rhs):
            continue  # reverse would leave placeholders unbound
        if _alpha_key(forward.rhs, forward.lhs) == _alpha_key(forward.lhs, forward.rhs):
            continue  # self-symmetric under renaming (commutativity)
        rules.append(RewriteRule(f"{name}-rev", forward.rhs, forward.lhs, category))
    if "derivative" in wanted:
        rules.extend(_derivative_rules())
    return tuple(rules)


def load_rules(path) -> tuple[RewriteRule, ...]:
    """Load custom rules from a DSL file: ``name : LHS_SEQ => RHS_SEQ``."""
    rules = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                name, rest = line.split(":", 1)
                lhs_seq, rhs_seq = rest.split("=>", 1)
            except ValueError:
                raise RuleError(f"{path}:{lineno}: expected 'name : LHS => RHS'")
            rules.append(make_rule(name.strip(), lhs_seq.strip(), rhs_seq.strip()))
    return tuple(rules)


def rules_from_spec(spec: str) -> tuple[RewriteRule, ...]:
    """Resolve a CLI rule spec: a DSL file path or comma-separated categories."""
    import os

    if os.path.exists(spec):
        return load_rules(spec)
    categories = [c.strip() for c in spec.split(",") if c.strip()]
    return builtin_rules(categories)
