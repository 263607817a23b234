"""Context-free grammar machinery for symbolic expressions.

Expressions are encoded two ways: as ordered sequences of production rules
(strings like ``A->(A+A)`` or ``A->x1``) and as expression trees.  A rule
sequence is expanded left to right, each rule replacing the *leftmost*
remaining nonterminal, so a sequence is exactly a preorder traversal of the
tree it builds.  Sequences that stop early leave placeholder leaves behind
(partial expressions); both forms are first-class values here.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np


class GrammarError(ValueError):
    """Malformed rule text, sequence, or evaluation request."""


UNARY_OPS = ("log", "exp", "sin", "cos", "tan", "sqrt", "tanh", "cosh", "neg")
BINARY_OPS = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}

KIND_BINARY = "binary-op"
KIND_UNARY = "unary-op"
KIND_VARIABLE = "terminal-variable"
KIND_CONST = "terminal-const"
KIND_LITERAL = "terminal-literal"
KIND_PLACEHOLDER = "nonterminal-placeholder"


@dataclass(frozen=True)
class Expr:
    """A node of an expression tree.

    ``op`` is an operator tag (``add``, ``log``, ...) or one of the leaf tags
    ``var`` (name set), ``const`` (a fitted coefficient slot), ``lit`` (value
    set), ``hole`` (an unexpanded nonterminal of a partial expression),
    ``pvar`` (a rewrite-pattern placeholder, name set).  ``partial`` carries
    the differentiation variable in ``name``.
    """

    op: str
    children: tuple["Expr", ...] = ()
    value: float | None = None
    name: str | None = None

    def __str__(self) -> str:
        return format_expression(self)


# Leaf constructors, used heavily by tests and the benchmark registry.
def var(name: str) -> Expr:
    return Expr("var", name=name)


def const() -> Expr:
    return Expr("const")


def lit(value: float) -> Expr:
    return Expr("lit", value=float(value))


def hole() -> Expr:
    return Expr("hole")


def pvar(name: str) -> Expr:
    return Expr("pvar", name=name)


def op_arity(op: str) -> int:
    if op in BINARY_OPS:
        return 2
    if op in UNARY_OPS or op == "partial":
        return 1
    if op in ("var", "const", "lit", "hole", "pvar"):
        return 0
    raise GrammarError(f"unknown operator tag {op!r}")


def is_complete(expr: Expr) -> bool:
    """True when the tree contains no hole (unexpanded nonterminal)."""
    return all(n.op != "hole" for n in preorder(expr))


def has_placeholders(expr: Expr) -> bool:
    return any(n.op == "pvar" for n in preorder(expr))


def preorder(expr: Expr):
    yield expr
    for child in expr.children:
        yield from preorder(child)


def n_coefficients(expr: Expr) -> int:
    """Number of coefficient slots; slots are const leaves numbered in preorder."""
    return sum(1 for n in preorder(expr) if n.op == "const")


def variable_names(expr: Expr) -> tuple[str, ...]:
    seen = dict.fromkeys(n.name for n in preorder(expr) if n.op == "var")
    return _sort_variables(seen)


def _sort_variables(names) -> tuple[str, ...]:
    def key(name):
        m = re.fullmatch(r"x(\d+)", name)
        return (0, int(m.group(1))) if m else (1, name)

    return tuple(sorted(names, key=key))


def format_expression(expr: Expr) -> str:
    """Human-readable infix form with preorder coefficient slots c0, c1, ..."""
    counter = [0]

    def go(node: Expr) -> str:
        if node.op == "var":
            return node.name
        if node.op == "const":
            slot = counter[0]
            counter[0] += 1
            return f"c{slot}"
        if node.op == "lit":
            return _format_literal(node.value)
        if node.op == "hole":
            return "A"
        if node.op == "pvar":
            return node.name
        if node.op == "neg":
            return f"(-{go(node.children[0])})"
        if node.op == "partial":
            return f"d({go(node.children[0])})/d{node.name}"
        if node.op in BINARY_OPS:
            sym = BINARY_OPS[node.op]
            return f"({go(node.children[0])}{sym}{go(node.children[1])})"
        return f"{node.op}({go(node.children[0])})"

    return go(expr)


def _format_literal(value: float) -> str:
    if value == math.pi:
        return "pi"
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


# ---------------------------------------------------------------------------
# Production rules


@dataclass(frozen=True)
class ProductionRule:
    """One production ``A->RHS`` of the expression grammar.

    ``arity`` counts the nonterminals on the right-hand side, i.e. how many
    later rules the rule consumes during expansion.
    """

    text: str
    kind: str
    op: str
    arity: int
    value: float | None = None
    name: str | None = None

    def node(self, children: tuple[Expr, ...] = ()) -> Expr:
        if len(children) != self.arity:
            raise GrammarError(f"rule {self.text} expects {self.arity} children")
        if self.op == "var":
            return var(self.name)
        if self.op == "pvar":
            return pvar(self.name)
        if self.op == "lit":
            return lit(self.value)
        if self.op == "const":
            return const()
        return Expr(self.op, children=children, name=self.name)

    def __str__(self) -> str:
        return self.text


_BINARY_RE = re.compile(r"^\(?A([+\-*/^])A\)?$")
_UNARY_RE = re.compile(r"^(log|exp|sin|cos|tan|sqrt|tanh|cosh)\(A\)$")
_PARTIAL_RE = re.compile(r"^d\(A\)/d(x\d+)$")
_VAR_RE = re.compile(r"^x\d+$")
_NUMBER_RE = re.compile(r"^-?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_SYMBOL_FOR_OP = {sym: op for op, sym in BINARY_OPS.items()}


def rule_text(op: str, value: float | None = None, name: str | None = None) -> str:
    """Canonical rule string for an operator tag."""
    if op in BINARY_OPS:
        return f"A->(A{BINARY_OPS[op]}A)"
    if op == "neg":
        return "A->(-A)"
    if op == "partial":
        return f"A->d(A)/d{name}"
    if op in UNARY_OPS:
        return f"A->{op}(A)"
    if op == "var":
        return f"A->{name}"
    if op == "const":
        return "A->const"
    if op == "lit":
        return f"A->{_format_literal(value)}"
    if op == "pvar":
        return f"A->{name}"
    raise GrammarError(f"unknown operator tag {op!r}")


def parse_rule(text: str) -> ProductionRule:
    """Parse a production-rule string such as ``A->sin(A)`` or ``A->x1``."""
    compact = text.replace(" ", "")
    if not compact.startswith("A->") or len(compact) <= 3:
        raise GrammarError(f"rule must have the form 'A->...': {text!r}")
    rhs = compact[3:]

    m = _BINARY_RE.match(rhs)
    if m:
        op = _SYMBOL_FOR_OP[m.group(1)]
        return ProductionRule(rule_text(op), KIND_BINARY, op, 2)
    if rhs in ("(-A)", "-A"):
        return ProductionRule(rule_text("neg"), KIND_UNARY, "neg", 1)
    m = _UNARY_RE.match(rhs)
    if m:
        op = m.group(1)
        return ProductionRule(rule_text(op), KIND_UNARY, op, 1)
    m = _PARTIAL_RE.match(rhs)
    if m:
        name = m.group(1)
        return ProductionRule(rule_text("partial", name=name), KIND_UNARY, "partial", 1, name=name)
    if _VAR_RE.match(rhs):
        return ProductionRule(rule_text("var", name=rhs), KIND_VARIABLE, "var", 0, name=rhs)
    if rhs == "const":
        return ProductionRule(rule_text("const"), KIND_CONST, "const", 0)
    if rhs == "pi":
        return ProductionRule("A->pi", KIND_LITERAL, "lit", 0, value=math.pi)
    if _NUMBER_RE.match(rhs):
        value = float(rhs)
        return ProductionRule(rule_text("lit", value=value), KIND_LITERAL, "lit", 0, value=value)
    if re.fullmatch(r"[a-z]", rhs):
        return ProductionRule(rule_text("pvar", name=rhs), KIND_PLACEHOLDER, "pvar", 0, name=rhs)
    raise GrammarError(f"cannot parse rule right-hand side {rhs!r} in {text!r}")


def parse_sequence(text: str) -> tuple[ProductionRule, ...]:
    """Parse a comma-separated list of rule strings."""
    parts = [p for p in (s.strip() for s in text.split(",")) if p]
    if not parts:
        raise GrammarError("empty rule sequence")
    return tuple(parse_rule(p) for p in parts)


def sequence_to_string(seq) -> str:
    return ", ".join(r.text for r in seq)


def open_nonterminals(seq) -> int:
    """Nonterminals left open after expanding the sequence (0 when complete)."""
    return expand_sequence(seq).open


def is_complete_sequence(seq) -> bool:
    exp = expand_sequence(seq)
    return exp.open == 0 and not exp.unused


@dataclass(frozen=True)
class Expansion:
    """Result of expanding a rule sequence: the (possibly partial) tree,
    how many rules were consumed, and any unconsumed trailing rules."""

    expr: Expr
    consumed: int
    unused: tuple[ProductionRule, ...]

    @property
    def complete(self) -> bool:
        return is_complete(self.expr)

    @property
    def open(self) -> int:
        return sum(1 for n in preorder(self.expr) if n.op == "hole")


def expand_sequence(seq) -> Expansion:
    """Expand rules leftmost-first into a tree.

    Too few rules leave hole leaves; surplus rules are reported unused.
    """
    rules = tuple(seq)
    if not rules:
        raise GrammarError("cannot expand an empty sequence")
    pos = [0]

    def build() -> Expr:
        if pos[0] >= len(rules):
            return hole()
        rule = rules[pos[0]]
        pos[0] += 1
        children = tuple(build() for _ in range(rule.arity))
        return rule.node(children)

    tree = build()
    return Expansion(tree, pos[0], rules[pos[0]:])


def sequence_to_expression(seq) -> Expr:
    """Tree for a rule sequence; partial sequences yield trees with holes."""
    return expand_sequence(seq).expr


def rule_for_node(node: Expr) -> ProductionRule:
    if node.op == "hole":
        raise GrammarError("holes have no production rule")
    return parse_rule(rule_text(node.op, value=node.value, name=node.name))


def expression_to_sequence(expr: Expr) -> tuple[ProductionRule, ...]:
    """Preorder rule sequence of a complete expression (round-trip inverse)."""
    if not is_complete(expr):
        raise GrammarError("expression_to_sequence requires a complete expression")
    return tuple(rule_for_node(n) for n in preorder(expr))


def partial_prefix_sequence(expr: Expr):
    """Rule-sequence prefix of a partial expression, or None.

    A partial tree corresponds to a leftmost-expansion prefix only when all
    its holes sit at the tail of the preorder walk.
    """
    nodes = list(preorder(expr))
    rules = []
    seen_hole = False
    for node in nodes:
        if node.op == "hole":
            seen_hole = True
        elif seen_hole:
            return None
        else:
            rules.append(rule_for_node(node))
    return tuple(rules)


# ---------------------------------------------------------------------------
# Grammar


class Grammar:
    """An ordered set of production rules.

    Rule order is meaningful: it fixes action indices for search and the
    policy vocabulary.  Variables are the var-terminal rules, ordered by
    their numeric suffix for dataset column assignment.
    """

    def __init__(self, rules):
        rules = tuple(parse_rule(r) if isinstance(r, str) else r for r in rules)
        if not rules:
            raise GrammarError("a grammar needs at least one rule")
        texts = [r.text for r in rules]
        if len(set(texts)) != len(texts):
            raise GrammarError("duplicate rules in grammar")
        self.rules = rules
        self._index = {r.text: i for i, r in enumerate(rules)}
        self.terminals = tuple(r for r in rules if r.arity == 0 and r.op != "pvar")
        if not self.terminals:
            raise GrammarError("a grammar needs at least one terminal rule")
        self.variables = _sort_variables(
            dict.fromkeys(r.name for r in rules if r.op == "var")
        )

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def index_of(self, rule) -> int:
        text = rule.text if isinstance(rule, ProductionRule) else parse_rule(rule).text
        if text not in self._index:
            raise GrammarError(f"rule {text} not in grammar")
        return self._index[text]

    def __contains__(self, rule) -> bool:
        text = rule.text if isinstance(rule, ProductionRule) else rule
        return text in self._index

    @classmethod
    def from_file(cls, path) -> "Grammar":
        """Load a grammar file: one rule per line, '#' starts a comment."""
        rules = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    rules.append(parse_rule(line))
        return cls(rules)


def complete_randomly(seq, grammar: Grammar, rng) -> tuple[ProductionRule, ...]:
    """Close a partial sequence by appending uniformly random terminal rules.

    Complete sequences are returned unchanged.  Deterministic under a fixed
    rng state.
    """
    exp = expand_sequence(seq)
    rules = list(seq)
    terminals = grammar.terminals
    for _ in range(exp.open):
        rules.append(terminals[int(rng.integers(len(terminals)))])
    return tuple(rules)


# ---------------------------------------------------------------------------
# Evaluation


def differentiate(expr: Expr, name: str) -> Expr:
    """Symbolic partial derivative with respect to the variable `name`.

    Used to evaluate partial-derivative operators exactly; the output tree
    is for evaluation only and is lightly constant-folded to avoid spurious
    0*inf artifacts.
    """

    def add_(a, b):
        if a.op == "lit" and a.value == 0.0:
            return b
        if b.op == "lit" and b.value == 0.0:
            return a
        return Expr("add", (a, b))

    def sub_(a, b):
        if b.op == "lit" and b.value == 0.0:
            return a
        return Expr("sub", (a, b))

    def mul_(a, b):
        if (a.op == "lit" and a.value == 0.0) or (b.op == "lit" and b.value == 0.0):
            return lit(0.0)
        if a.op == "lit" and a.value == 1.0:
            return b
        if b.op == "lit" and b.value == 1.0:
            return a
        return Expr("mul", (a, b))

    def div_(a, b):
        if a.op == "lit" and a.value == 0.0:
            return lit(0.0)
        return Expr("div", (a, b))

    def d(node: Expr) -> Expr:
        if node.op == "var":
            return lit(1.0 if node.name == name else 0.0)
        if node.op in ("const", "lit"):
            return lit(0.0)
        if node.op in ("hole", "pvar"):
            return hole()  # unevaluable; propagates NaN
        u = node.children[0]
        if node.op == "add":
            return add_(d(u), d(node.children[1]))
        if node.op == "sub":
            return sub_(d(u), d(node.children[1]))
        if node.op == "mul":
            v = node.children[1]
            return add_(mul_(d(u), v), mul_(u, d(v)))
        if node.op == "div":
            v = node.children[1]
            num = sub_(mul_(d(u), v), mul_(u, d(v)))
            return div_(num, Expr("mul", (v, v)))
        if node.op == "pow":
            v = node.children[1]
            # d(u^v) = u^v * (v' log u + v u'/u)
            term = add_(mul_(d(v), Expr("log", (u,))), div_(mul_(v, d(u)), u))
            return mul_(node, term)
        if node.op == "neg":
            return Expr("neg", (d(u),))
        if node.op == "log":
            return div_(d(u), u)
        if node.op == "exp":
            return mul_(node, d(u))
        if node.op == "sin":
            return mul_(Expr("cos", (u,)), d(u))
        if node.op == "cos":
            return Expr("neg", (mul_(Expr("sin", (u,)), d(u)),))
        if node.op == "tan":
            cos_u = Expr("cos", (u,))
            return div_(d(u), Expr("mul", (cos_u, cos_u)))
        if node.op == "sqrt":
            return div_(d(u), mul_(lit(2.0), node))
        if node.op == "tanh":
            return mul_(sub_(lit(1.0), Expr("mul", (node, node))), d(u))
        if node.op == "cosh":
            # sinh expressed through exp; sinh is not a grammar operator
            sinh = div_(sub_(Expr("exp", (u,)), Expr("exp", (Expr("neg", (u,)),))), lit(2.0))
            return mul_(sinh, d(u))
        if node.op == "partial":
            return d(differentiate(u, node.name))
        raise GrammarError(f"cannot differentiate operator {node.op!r}")

    return d(expr)


def evaluate(expr: Expr, x, coeffs=None, variables=None):
    """Evaluate a complete expression at `x` with coefficient vector `coeffs`.

    `x` is one point (shape (n,)) or a batch (shape (N, n)); `variables`
    names the columns of `x` in order.  When omitted, the expression's own
    variables are used, sorted by numeric suffix (x1 -> column 0, ...).
    Domain violations yield non-finite values instead of raising; missing
    variables or coefficient slots raise GrammarError.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    mat = np.atleast_2d(x)
    if variables is None:
        variables = variable_names(expr)
    columns = {name: i for i, name in enumerate(variables)}
    coeffs = np.asarray([] if coeffs is None else coeffs, dtype=float)
    n_rows = mat.shape[0]
    slot = [0]

    def go(node: Expr):
        if node.op == "var":
            if node.name not in columns:
                raise GrammarError(f"no column for variable {node.name}")
            if columns[node.name] >= mat.shape[1]:
                raise GrammarError(f"x has no column {columns[node.name]} for {node.name}")
            return mat[:, columns[node.name]]
        if node.op == "const":
            index = slot[0]
            slot[0] += 1
            if index >= coeffs.size:
                raise GrammarError(f"missing coefficient for slot {index}")
            return np.full(n_rows, coeffs[index])
        if node.op == "lit":
            return np.full(n_rows, node.value)
        if node.op in ("hole", "pvar"):
            return np.full(n_rows, np.nan)
        if node.op == "partial":
            return go(differentiate(node.children[0], node.name))
        args = [go(c) for c in node.children]
        with np.errstate(all="ignore"):
            if node.op == "add":
                return args[0] + args[1]
            if node.op == "sub":
                return args[0] - args[1]
            if node.op == "mul":
                return args[0] * args[1]
            if node.op == "div":
                return args[0] / args[1]
            if node.op == "pow":
                return np.power(args[0], args[1])
            if node.op == "neg":
                return -args[0]
            if node.op == "log":
                return np.log(args[0])
            if node.op == "exp":
                return np.exp(args[0])
            if node.op == "sin":
                return np.sin(args[0])
            if node.op == "cos":
                return np.cos(args[0])
            if node.op == "tan":
                return np.tan(args[0])
            if node.op == "sqrt":
                return np.sqrt(args[0])
            if node.op == "tanh":
                return np.tanh(args[0])
            if node.op == "cosh":
                return np.cosh(args[0])
        raise GrammarError(f"cannot evaluate operator {node.op!r}")

    out = go(expr)
    return float(out[0]) if single else out
