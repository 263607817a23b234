"""Equality graph over grammar expressions.

E-classes are equivalence classes of e-nodes; an e-node applies an operator
to child e-classes.  The graph keeps a hash-consing memo from canonical
e-nodes to class ids, a union-find over class ids, and a worklist-driven
rebuild that restores congruence (f(a) and f(b) share a class once a and b
do).  Saturation repeatedly matches rewrite patterns and merges the
instantiated right-hand sides into the matched classes.

Mutation is single-threaded; saturating distinct graphs in parallel is fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .grammar import (
    Expr,
    expression_to_sequence,
    is_complete,
    partial_prefix_sequence,
    preorder,
)


class EGraphError(RuntimeError):
    pass


class ExtractionError(EGraphError):
    pass


class UnionFind:
    """Array-based union-find with path compression and union by rank.

    Rank ties go to the smaller id so the canonical representative is
    deterministic across processes.
    """

    def __init__(self):
        self.parent: list[int] = []
        self.rank: list[int] = []
        self.n_unions = 0

    def make(self) -> int:
        self.parent.append(len(self.parent))
        self.rank.append(0)
        return len(self.parent) - 1

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if (self.rank[ra], -ra) < (self.rank[rb], -rb):
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.n_unions += 1
        return ra


@dataclass(frozen=True)
class ENode:
    """Operator applied to child e-classes.  Leaf payloads live in ``op``
    via ``value`` (literals) or ``name`` (variables, partial targets)."""

    op: str
    operands: tuple[int, ...] = ()
    value: float | None = None
    name: str | None = None

    def sort_key(self):
        return (self.op, self.name or "", repr(self.value), self.operands)


def _node_for_expr(node: Expr, operands: tuple[int, ...]) -> ENode:
    return ENode(node.op, operands, value=node.value, name=node.name)


def _enode_expr(node: ENode, children: tuple[Expr, ...]) -> Expr:
    return Expr(node.op, children=children, value=node.value, name=node.name)


@dataclass(frozen=True)
class SaturationReport:
    iterations: int
    saturated: bool
    nodes: int
    classes: int

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "saturated": self.saturated,
            "nodes": self.nodes,
            "classes": self.classes,
        }


class EGraph:
    def __init__(self):
        self.uf = UnionFind()
        self.memo: dict[ENode, int] = {}
        # dicts double as deterministic insertion-ordered sets
        self.class_nodes: dict[int, dict[ENode, None]] = {}
        self.parents: dict[int, list[tuple[ENode, int]]] = {}
        self.worklist: list[int] = []
        self.root: int | None = None
        self.version = 0  # bumps on any structural change

    # -- basics ------------------------------------------------------------

    def find(self, cid: int) -> int:
        return self.uf.find(cid)

    def canonicalize(self, node: ENode) -> ENode:
        return ENode(
            node.op,
            tuple(self.uf.find(c) for c in node.operands),
            value=node.value,
            name=node.name,
        )

    def add_enode(self, node: ENode) -> int:
        node = self.canonicalize(node)
        for cid in node.operands:
            if cid >= len(self.uf.parent):
                raise EGraphError(f"dangling operand class {cid}")
        if node in self.memo:
            return self.uf.find(self.memo[node])
        cid = self.uf.make()
        self.memo[node] = cid
        self.class_nodes[cid] = {node: None}
        self.parents[cid] = []
        for child in dict.fromkeys(node.operands):
            self.parents[child].append((node, cid))
        self.version += 1
        return cid

    def add_expression(self, expr: Expr) -> int:
        """Add a (possibly partial) expression bottom-up; returns its class."""
        if any(n.op == "pvar" for n in preorder(expr)):
            raise EGraphError("patterns with placeholders cannot be added; use substitute")

        def go(node: Expr) -> int:
            operands = tuple(go(c) for c in node.children)
            return self.add_enode(_node_for_expr(node, operands))

        return go(expr)

    @classmethod
    def from_expression(cls, expr: Expr) -> "EGraph":
        g = cls()
        g.root = g.add_expression(expr)
        return g

    def merge(self, a: int, b: int) -> int:
        ra, rb = self.uf.find(a), self.uf.find(b)
        if ra == rb:
            return ra
        root = self.uf.union(ra, rb)
        loser = rb if root == ra else ra
        self.class_nodes[root].update(self.class_nodes.pop(loser))
        self.parents[root].extend(self.parents.pop(loser))
        self.worklist.append(root)
        self.version += 1
        return root

    def rebuild(self) -> None:
        """Restore congruence: re-canonicalize parents of merged classes and
        merge classes whose e-nodes now collide in the memo, to fixpoint."""
        touched = self.worklist != []
        while self.worklist:
            todo = dict.fromkeys(self.uf.find(c) for c in self.worklist)
            self.worklist.clear()
            for cid in todo:
                self._repair(self.uf.find(cid))
        if touched:
            # merged-away operand ids leave stale e-node forms behind; sweep
            # every class back to canonical, deduplicated shape
            for cid in list(self.class_nodes):
                self.class_nodes[cid] = dict.fromkeys(
                    self.canonicalize(n) for n in self.class_nodes[cid]
                )

    def _repair(self, cid: int) -> None:
        new_parents: dict[ENode, int] = {}
        for pnode, pclass in self.parents[cid]:
            self.memo.pop(pnode, None)
            canon = self.canonicalize(pnode)
            if canon in new_parents:
                self.merge(pclass, new_parents[canon])
            elif canon in self.memo and self.uf.find(self.memo[canon]) != self.uf.find(pclass):
                self.merge(self.memo[canon], pclass)
            self.memo[canon] = self.uf.find(pclass)
            new_parents[canon] = self.uf.find(pclass)
        root = self.uf.find(cid)
        if root == cid:
            self.parents[cid] = list(new_parents.items())
        else:
            # a nested merge absorbed this class mid-repair; keep the
            # winner's own parent list and let its queued repair dedupe
            self.parents[root].extend(new_parents.items())

    # -- views ---------------------------------------------------------------

    def eclasses(self) -> dict[int, list[ENode]]:
        """Canonical classes and their e-nodes, deterministically ordered."""
        out: dict[int, list[ENode]] = {}
        for cid in sorted(self.class_nodes):
            out[cid] = sorted(self.class_nodes[cid], key=ENode.sort_key)
        return out

    @property
    def class_count(self) -> int:
        return len(self.class_nodes)

    @property
    def node_count(self) -> int:
        return sum(len(nodes) for nodes in self.class_nodes.values())

    def reachable_classes(self, start: int | None = None) -> list[int]:
        """Classes reachable from `start` (default: the root), sorted."""
        start = self.uf.find(self.root if start is None else start)
        seen = {start}
        stack = [start]
        while stack:
            cid = stack.pop()
            for node in self.class_nodes[cid]:
                for child in node.operands:
                    child = self.uf.find(child)
                    if child not in seen:
                        seen.add(child)
                        stack.append(child)
        return sorted(seen)

    # -- e-matching and substitution -----------------------------------------

    def ematch(self, pattern: Expr) -> list[tuple[int, dict[str, int]]]:
        """All (class, binding) pairs where the pattern is represented.

        Placeholders bind whole e-classes; repeated placeholders must bind
        the same class.  Results are ordered by class id, then binding.
        """
        classes = self.eclasses()
        results = []
        for cid, _nodes in classes.items():
            for env in self._match_class(pattern, cid, {}, classes):
                results.append((cid, env))
        return results

    def _match_class(self, pattern: Expr, cid: int, env: dict, classes) -> list[dict]:
        cid = self.uf.find(cid)
        if pattern.op == "pvar":
            bound = env.get(pattern.name)
            if bound is not None:
                return [env] if self.uf.find(bound) == cid else []
            new = dict(env)
            new[pattern.name] = cid
            return [new]
        out = []
        for node in classes.get(cid, ()):
            if node.op != pattern.op or node.value != pattern.value or node.name != pattern.name:
                continue
            if len(node.operands) != len(pattern.children):
                continue
            envs = [env]
            for child_pat, child_cid in zip(pattern.children, node.operands):
                envs = [
                    e2
                    for e in envs
                    for e2 in self._match_class(child_pat, child_cid, e, classes)
                ]
                if not envs:
                    break
            out.extend(envs)
        return out

    def substitute(self, pattern: Expr, env: dict[str, int]) -> int:
        """Instantiate a pattern under a binding, adding it bottom-up."""
        if pattern.op == "pvar":
            if pattern.name not in env:
                raise EGraphError(f"unbound placeholder {pattern.name!r}")
            return self.uf.find(env[pattern.name])
        operands = tuple(self.substitute(c, env) for c in pattern.children)
        return self.add_enode(_node_for_expr(pattern, operands))

    def apply_rewrite_rules(self, rules) -> int:
        """One two-phase pass: collect every match read-only, then substitute
        and merge each, then rebuild once.  Returns the number of matches."""
        matches = []
        seen = set()
        for rule in rules:
            for cid, env in self.ematch(rule.lhs):
                key = (rule.name, cid, tuple(sorted(env.items())))
                if key not in seen:
                    seen.add(key)
                    matches.append((rule, cid, env))
        for rule, cid, env in matches:
            new_cid = self.substitute(rule.rhs, env)
            self.merge(cid, new_cid)
        self.rebuild()
        return len(matches)


DEFAULT_MAX_ITER = 20
DEFAULT_MAX_NODES = 50_000


def equality_saturation(
    expr: Expr | EGraph,
    rules,
    max_iter: int = DEFAULT_MAX_ITER,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> tuple[EGraph, SaturationReport]:
    """Saturate an expression (or an existing graph) under rewrite rules.

    Stops at fixpoint, at `max_iter` passes, or once the node budget is
    exceeded; budget exhaustion is reported, not raised.
    """
    if max_iter <= 0 or max_nodes <= 0:
        raise ValueError("saturation limits must be positive")
    g = expr if isinstance(expr, EGraph) else EGraph.from_expression(expr)
    saturated = False
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        before = g.version
        g.apply_rewrite_rules(rules)
        if g.version == before:
            saturated = True
            break
        if g.node_count > max_nodes:
            break
    return g, SaturationReport(iterations, saturated, g.node_count, g.class_count)


def check_equivalent(
    e1: Expr,
    e2: Expr,
    rules,
    max_iter: int = DEFAULT_MAX_ITER,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> bool:
    """Whether the rewrite system joins e1 and e2 within the budget.

    One-sided: False can also mean "not derivable within the budget".
    """
    if not (is_complete(e1) and is_complete(e2)):
        raise EGraphError("check_equivalent requires complete expressions")
    g = EGraph()
    r1 = g.add_expression(e1)
    r2 = g.add_expression(e2)
    if g.find(r1) == g.find(r2):
        return True
    for _ in range(max_iter):
        before = g.version
        g.apply_rewrite_rules(rules)
        if g.find(r1) == g.find(r2):
            return True
        if g.version == before or g.node_count > max_nodes:
            break
    return g.find(r1) == g.find(r2)


# ---------------------------------------------------------------------------
# Extraction


def extract_cost(g: EGraph, costs: dict[str, float] | None = None, default_cost: float = 1.0) -> Expr:
    """Cheapest expression for the root class.

    Iterates cost(enode) = cost(op) + sum(cost(child class)) to fixpoint;
    classes with no finite-cost derivation (cycles only) stay infinite.
    """
    if g.root is None:
        raise ExtractionError("graph has no root")
    costs = costs or {}

    def op_cost(node: ENode) -> float:
        return float(costs.get(node.op, default_cost))

    classes = g.eclasses()
    best: dict[int, tuple[float, ENode]] = {}
    changed = True
    while changed:
        changed = False
        for cid, nodes in classes.items():
            for node in nodes:
                total = op_cost(node)
                for child in node.operands:
                    child_best = best.get(g.find(child))
                    if child_best is None:
                        total = math.inf
                        break
                    total += child_best[0]
                if total < best.get(cid, (math.inf, None))[0]:
                    best[cid] = (total, node)
                    changed = True

    root = g.find(g.root)
    if root not in best:
        raise ExtractionError("root class has infinite cost")

    def build(cid: int) -> Expr:
        node = best[g.find(cid)][1]
        return _enode_expr(node, tuple(build(c) for c in node.operands))

    return build(root)


def extract_random_walk(
    g: EGraph,
    rng,
    k: int,
    max_depth: int = 50,
    max_attempts: int | None = None,
    allow_partial: bool = False,
):
    """Sample up to `k` distinct rule sequences from the graph.

    Each walk starts at the root class, picks a uniformly random e-node per
    visited class, and recurses into its operand classes; walks deeper than
    `max_depth` are abandoned and retried.  With `allow_partial`, sequences
    for partial expressions (hole leaves at the preorder tail) are returned
    as leftmost-expansion prefixes; other hole placements are discarded.
    """
    if k < 1 or max_depth < 1:
        raise ValueError("k and max_depth must be >= 1")
    if g.root is None:
        raise ExtractionError("graph has no root")
    classes = g.eclasses()
    attempts = max_attempts if max_attempts is not None else max(200, 40 * k)

    def walk(cid: int, depth: int) -> Expr | None:
        if depth > max_depth:
            return None
        nodes = classes[g.find(cid)]
        node = nodes[int(rng.integers(len(nodes)))]
        children = []
        for child in node.operands:
            sub = walk(child, depth + 1)
            if sub is None:
                return None
            children.append(sub)
        return _enode_expr(node, tuple(children))

    found: dict[tuple, tuple] = {}
    for _ in range(attempts):
        expr = walk(g.root, 1)
        if expr is None:
            continue
        if is_complete(expr):
            seq = expression_to_sequence(expr)
        elif allow_partial:
            seq = partial_prefix_sequence(expr)
            if seq is None:
                continue
        else:
            continue
        key = tuple(r.text for r in seq)
        if key not in found:
            found[key] = seq
            if len(found) >= k:
                break
    if not found:
        raise ExtractionError("random walk produced no sequences within the retry budget")
    return list(found.values())


def enumerate_expressions(g: EGraph, max_nodes_per_expr: int, start: int | None = None) -> list[Expr]:
    """All distinct expressions of at most `max_nodes_per_expr` nodes that the
    graph represents for the start class (default root), in a deterministic
    order.  Intended for desk-scale graphs; the node bound also guards cycles.
    """
    if start is None:
        if g.root is None:
            raise ExtractionError("graph has no root")
        start = g.root
    classes = g.eclasses()

    def expand(cid: int, budget: int) -> list[tuple[Expr, int]]:
        out = []
        for node in classes[g.find(cid)]:
            if budget < 1:
                break
            partials = [((), 1)]  # (children tuple, nodes used incl. this node)
            for child in node.operands:
                nxt = []
                for kids, used in partials:
                    for sub, sub_used in expand(child, budget - used):
                        nxt.append((kids + (sub,), used + sub_used))
                partials = nxt
                if not partials:
                    break
            for kids, used in partials:
                if used <= budget:
                    out.append((_enode_expr(node, kids), used))
        return out

    seen: dict[str, Expr] = {}
    for expr, _ in expand(start, max_nodes_per_expr):
        key = str(expr)
        if key not in seen:
            seen[key] = expr
    return list(seen.values())


def count_choice_variants(g: EGraph) -> int:
    """Number of derivation-choice combinations the graph encodes: the
    product of e-node counts over classes reachable from the root.

    This is the "equivalent variants" metric reported by the memory
    benchmark; for a chain expression saturated under a single splitting
    identity it equals 2**(n-1).
    """
    classes = g.eclasses()
    total = 1
    for cid in g.reachable_classes():
        total *= len(classes[cid])
    return total


def enumerate_choice_variants(g: EGraph, limit: int = 100_000):
    """Materialize one expression per derivation-choice combination.

    Exhaustive bounded enumeration of per-class e-node selections over the
    reachable classes; each selection induces the expression obtained by
    following the chosen e-nodes down from the root.  Selections whose
    read-out does not terminate within a node budget are skipped.
    """
    reach = g.reachable_classes()
    if count_choice_variants(g) > limit:
        raise ExtractionError(f"more than {limit} choice variants")
    classes = g.eclasses()
    options = [classes[cid] for cid in reach]
    index_of = {cid: i for i, cid in enumerate(reach)}

    def read_out(selection, cid, budget):
        if budget <= 0:
            return None
        node = selection[index_of[g.find(cid)]]
        children = []
        used = 1
        for child in node.operands:
            sub = read_out(selection, child, budget - used)
            if sub is None:
                return None
            sub_expr, sub_used = sub
            children.append(sub_expr)
            used += sub_used
        return _enode_expr(node, tuple(children)), used

    variants = []
    import itertools

    for selection in itertools.product(*options):
        result = read_out(selection, g.root, 10_000)
        if result is not None:
            variants.append(result[0])
    return variants


# ---------------------------------------------------------------------------
# Introspection output


def to_dot(g: EGraph) -> str:
    """Graphviz DOT text: e-classes as dashed clusters, e-nodes as boxes,
    edges from e-nodes to child e-classes.  Output is stable across runs."""
    lines = ["digraph egraph {", "  compound=true;", "  node [shape=box];"]
    classes = g.eclasses()
    anchor = {}
    for cid, nodes in classes.items():
        lines.append(f"  subgraph cluster_{cid} {{")
        lines.append(f'    label="e-class {cid}"; style=dashed;')
        for i, node in enumerate(nodes):
            name = f"n{cid}_{i}"
            if i == 0:
                anchor[cid] = name
            label = node.op
            if node.value is not None:
                label = _fmt_value(node.value)
            elif node.name is not None:
                label = node.name if node.op == "var" else f"{node.op} {node.name}"
            lines.append(f'    {name} [label="{label}"];')
        lines.append("  }")
    for cid, nodes in classes.items():
        for i, node in enumerate(nodes):
            for child in node.operands:
                child = g.find(child)
                lines.append(
                    f"  n{cid}_{i} -> {anchor[child]} [lhead=cluster_{child}];"
                )
    lines.append("}")
    return "\n".join(lines) + "\n"


def _fmt_value(value: float) -> str:
    if value == math.pi:
        return "pi"
    if float(value).is_integer():
        return str(int(value))
    return repr(value)


def serialized_size(g: EGraph) -> int:
    """Deterministic byte size of a flat text serialization of the graph,
    used as the storage-cost proxy in the memory benchmark."""
    parts = []
    for cid, nodes in g.eclasses().items():
        for node in nodes:
            payload = node.name or (_fmt_value(node.value) if node.value is not None else "")
            parts.append(f"{cid}:{node.op}:{payload}:{','.join(map(str, node.operands))}")
    return len("\n".join(parts).encode("utf-8"))
