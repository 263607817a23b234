"""Rewrite-rule construction, catalog shape, and numeric soundness."""

import numpy as np
import pytest

from eqsr.grammar import Expr, evaluate, parse_sequence, sequence_to_expression
from eqsr.rewrite import (
    CATEGORIES,
    RuleError,
    builtin_rules,
    load_rules,
    make_rule,
    pattern_placeholders,
    rules_from_spec,
)


class TestMakeRule:
    def test_log_product(self):
        rule = make_rule(
            "log-product",
            "A->log(A), A->(A*A), A->a, A->b",
            "A->(A+A), A->log(A), A->a, A->log(A), A->b",
        )
        assert pattern_placeholders(rule.lhs) == {"a", "b"}
        assert str(rule.lhs) == "log((a*b))"
        assert str(rule.rhs) == "(log(a)+log(b))"

    def test_commutativity(self):
        rule = make_rule("comm", "A->(A+A), A->a, A->b", "A->(A+A), A->b, A->a")
        assert str(rule.rhs) == "(b+a)"

    def test_unbound_rhs_placeholder_rejected(self):
        with pytest.raises(RuleError):
            make_rule("bad", "A->(A+A), A->a, A->b", "A->(A+A), A->a, A->c")

    def test_incomplete_pattern_rejected(self):
        with pytest.raises(RuleError):
            make_rule("bad", "A->(A+A), A->a", "A->a")

    def test_unknown_category(self):
        with pytest.raises(RuleError):
            make_rule("bad", "A->a", "A->a", category="bogus")


class TestCatalogShape:
    def test_unknown_category_rejected(self):
        with pytest.raises(RuleError):
            builtin_rules(["nope"])

    def test_trig_contains_sum_formula_both_ways(self):
        names = {r.name for r in builtin_rules(["trig"])}
        assert "sin-of-sum" in names and "sin-of-sum-rev" in names
        assert "sin-of-diff" in names and "cos-of-diff" in names

    def test_log_power_rule(self):
        rules = {r.name: r for r in builtin_rules(["log-exp"])}
        rule = rules["log-of-power"]
        assert str(rule.lhs) == "log((a^b))"
        assert str(rule.rhs) == "(b*log(a))"

    def test_derivative_commutation_present(self):
        names = {r.name for r in builtin_rules(["derivative"])}
        assert "partial-commute-x1-x2" in names and "partial-commute-x2-x1" in names

    def test_direction_pairing(self):
        # every rule has its reverse unless self-symmetric or the reverse
        # would leave a placeholder unbound
        rules = builtin_rules()
        by_name = {r.name: r for r in rules}
        for rule in rules:
            if rule.name.endswith("-rev") or rule.category == "derivative":
                continue
            unbound = pattern_placeholders(rule.lhs) - pattern_placeholders(rule.rhs)
            self_symmetric = rule.name in ("add-comm", "mul-comm")
            assert (f"{rule.name}-rev" in by_name) == (not unbound and not self_symmetric), rule.name

    def test_commutative_rules_not_doubled(self):
        names = [r.name for r in builtin_rules(["commutative"])]
        assert names == ["add-comm", "mul-comm"]

    def test_pythagorean_one_direction(self):
        names = {r.name for r in builtin_rules(["trig"])}
        assert "pythagorean-sin-cos" in names
        assert "pythagorean-sin-cos-rev" not in names


# positive-valued substitution pool keeps log/sqrt in-domain for most points
_SUBSTITUTION_POOL = [
    "A->x1",
    "A->x2",
    "A->(A+A), A->x1, A->x2",
    "A->(A*A), A->x1, A->x2",
    "A->sqrt(A), A->(A+A), A->x1, A->x3",
    "A->exp(A), A->(A-A), A->x3, A->x4",
]


def _substitute(pattern: Expr, env: dict) -> Expr:
    if pattern.op == "pvar":
        return env[pattern.name]
    return Expr(pattern.op, tuple(_substitute(c, env) for c in pattern.children),
                pattern.value, pattern.name)


class TestSemanticSoundness:
    @pytest.mark.parametrize("rule", builtin_rules(), ids=lambda r: r.name)
    def test_rule_preserves_value(self, rule):
        rng = np.random.default_rng(42)
        pool = [sequence_to_expression(parse_sequence(t)) for t in _SUBSTITUTION_POOL]
        placeholders = sorted(pattern_placeholders(rule.lhs))
        checked = 0
        for assignment in range(3):
            env = {
                name: pool[(assignment * 3 + i) % len(pool)]
                for i, name in enumerate(placeholders)
            }
            lhs = _substitute(rule.lhs, env)
            rhs = _substitute(rule.rhs, env)
            x = rng.uniform(0.35, 1.45, size=(32, 4))
            left = np.asarray(evaluate(lhs, x, variables=("x1", "x2", "x3", "x4")))
            right = np.asarray(evaluate(rhs, x, variables=("x1", "x2", "x3", "x4")))
            valid = np.isfinite(left) & np.isfinite(right)
            if valid.sum() == 0:
                continue
            scale = 1.0 + np.maximum(np.abs(left[valid]), np.abs(right[valid]))
            assert np.all(np.abs(left[valid] - right[valid]) <= 1e-9 * scale), rule.name
            checked += int(valid.sum())
        assert checked >= 8, f"{rule.name}: too few in-domain points"


class TestRuleDsl:
    def test_load_rules(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text(
            "# custom rules\n"
            "double : A->(A+A), A->a, A->a => A->(A*A), A->2, A->a\n"
        )
        rules = load_rules(path)
        assert len(rules) == 1
        assert rules[0].name == "double"
        assert str(rules[0].lhs) == "(a+a)"

    def test_bad_line(self, tmp_path):
        path = tmp_path / "rules.txt"
        path.write_text("not a rule line\n")
        with pytest.raises(RuleError):
            load_rules(path)

    def test_rules_from_spec_categories(self):
        rules = rules_from_spec("commutative")
        assert {r.name for r in rules} == {"add-comm", "mul-comm"}

    def test_rules_from_spec_file(self, tmp_path):
        path = tmp_path / "r.txt"
        path.write_text("swap : A->(A+A), A->a, A->b => A->(A+A), A->b, A->a\n")
        rules = rules_from_spec(str(path))
        assert rules[0].name == "swap"
