"""Named ground-truth equations for the benchmark runner.

Each entry stores the truth as a rule-sequence string (the wire format used
everywhere), its true coefficient values, variable ranges, and optionally a
known symbolically equivalent variant plus the rule categories that join the
pair.  Entries are built from expression constructors at import time and
round-trip through the sequence form, so the strings stay consistent with
the grammar module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dataopt import Dataset, data_oracle
from .grammar import (
    Expr,
    const,
    expression_to_sequence,
    lit,
    parse_sequence,
    sequence_to_expression,
    sequence_to_string,
    var,
    variable_names,
)


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    sequence: str
    coefficients: tuple[float, ...] = ()
    ranges: dict = field(default_factory=dict)
    noise_std: float = 0.0
    variant: str | None = None
    rule_categories: tuple[str, ...] = ()

    @property
    def expression(self) -> Expr:
        return sequence_to_expression(parse_sequence(self.sequence))

    @property
    def variant_expression(self) -> Expr | None:
        if self.variant is None:
            return None
        return sequence_to_expression(parse_sequence(self.variant))

    @property
    def variables(self) -> tuple[str, ...]:
        return variable_names(self.expression)

    def dataset(self, n_points: int = 2048, seed: int = 0, noise_std: float | None = None) -> Dataset:
        noise = self.noise_std if noise_std is None else noise_std
        ranges = self.ranges or None
        return data_oracle(
            self.expression,
            self.coefficients,
            self.variables,
            n_points=n_points,
            ranges=ranges,
            noise_std=noise,
            seed=seed,
        )


def _seq(expr: Expr) -> str:
    return sequence_to_string(expression_to_sequence(expr))


def add(a, b):
    return Expr("add", (a, b))


def sub(a, b):
    return Expr("sub", (a, b))


def mul(a, b):
    return Expr("mul", (a, b))


def div(a, b):
    return Expr("div", (a, b))


def pow_(a, b):
    return Expr("pow", (a, b))


def neg(a):
    return Expr("neg", (a,))


def log(a):
    return Expr("log", (a,))


def exp(a):
    return Expr("exp", (a,))


def sin(a):
    return Expr("sin", (a,))


def cos(a):
    return Expr("cos", (a,))


def sqrt(a):
    return Expr("sqrt", (a,))


def tanh(a):
    return Expr("tanh", (a,))


def cosh(a):
    return Expr("cosh", (a,))


def log_chain(n: int) -> Expr:
    """log(x1 * ... * xn) with a left-associated product."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prod = var("x1")
    for i in range(2, n + 1):
        prod = mul(prod, var(f"x{i}"))
    return log(prod)


def sin_chain(n: int) -> Expr:
    """sin(x1 + ... + xn) with a left-associated sum."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = var("x1")
    for i in range(2, n + 1):
        total = add(total, var(f"x{i}"))
    return sin(total)


def _build_registry() -> dict[str, BenchmarkSpec]:
    entries = []

    # case-study families
    for n in range(2, 7):
        entries.append(BenchmarkSpec(
            name=f"log-chain-{n}",
            sequence=_seq(log_chain(n)),
            rule_categories=("log-exp",),
        ))
        entries.append(BenchmarkSpec(
            name=f"sin-chain-{n}",
            sequence=_seq(sin_chain(n)),
            rule_categories=("trig",),
        ))

    # recovery target: two coefficients, mixed linear/log structure
    x1, x2 = var("x1"), var("x2")
    entries.append(BenchmarkSpec(
        name="log-linear",
        sequence=_seq(add(mul(const(), x1), mul(const(), log(x2)))),
        coefficients=(3.0, 2.0),
        rule_categories=("commutative", "log-exp"),
    ))

    entries.append(BenchmarkSpec(
        name="log-power",
        sequence=_seq(log(mul(pow_(x1, lit(3)), pow_(x2, lit(2))))),
        variant=_seq(add(mul(lit(3), log(x1)), mul(lit(2), log(x2)))),
        rule_categories=("log-exp",),
    ))
    entries.append(BenchmarkSpec(
        name="exp-linear",
        sequence=_seq(exp(add(mul(const(), x1), x2))),
        coefficients=(0.5,),
        variant=_seq(mul(exp(mul(const(), x1)), exp(x2))),
        ranges={"x1": (0.1, 2.0), "x2": (0.1, 2.0)},
        rule_categories=("log-exp",),
    ))

    # sincos-style trigonometric family
    entries.append(BenchmarkSpec(
        name="sincos-sum",
        sequence=_seq(sin(add(x1, x2))),
        variant=_seq(add(mul(sin(x1), cos(x2)), mul(cos(x1), sin(x2)))),
        rule_categories=("trig",),
    ))
    entries.append(BenchmarkSpec(
        name="sincos-mix",
        sequence=_seq(add(mul(const(), mul(sin(x1), cos(x2))), mul(const(), cos(x2)))),
        coefficients=(1.5, -0.8),
        rule_categories=("trig", "commutative"),
    ))

    # selected Feynman equations
    x0, x3 = var("x0"), var("x3")
    c1 = const()
    entries.append(BenchmarkSpec(
        name="feynman-I.15.3x",
        sequence=_seq(div(sub(x0, mul(x1, x2)),
                          sqrt(sub(pow_(c1, lit(2)), pow_(x1, lit(2)))))),
        coefficients=(2.0,),
        variant=_seq(div(sub(x0, mul(x1, x2)),
                         mul(sqrt(add(const(), x1)), sqrt(sub(const(), x1))))),
        ranges={"x0": (0.1, 4.0), "x1": (0.1, 1.5), "x2": (0.1, 4.0)},
        rule_categories=("distributive", "factorization"),
    ))
    two = lit(2)
    entries.append(BenchmarkSpec(
        name="feynman-I.30.3",
        sequence=_seq(mul(x0, div(pow_(sin(div(mul(x1, x2), two)), lit(2)),
                                  pow_(sin(div(x2, two)), lit(2))))),
        variant=_seq(mul(x0, pow_(div(sin(div(mul(x1, x2), two)),
                                      sin(div(x2, two))), lit(2)))),
        ranges={"x0": (0.1, 4.0), "x1": (0.1, 4.0), "x2": (0.1, 4.0)},
        rule_categories=("distributive",),
    ))
    entries.append(BenchmarkSpec(
        name="feynman-I.44.4",
        sequence=_seq(mul(mul(mul(const(), x0), x1), log(div(x2, x3)))),
        coefficients=(1.380649,),
        variant=_seq(mul(mul(mul(const(), x0), x1), sub(log(x2), log(x3)))),
        rule_categories=("log-exp",),
    ))
    cos_u = cos(mul(x1, x2))
    entries.append(BenchmarkSpec(
        name="feynman-I.50.26",
        sequence=_seq(mul(x0, add(cos_u, mul(x3, pow_(cos_u, lit(2)))))),
        variant=_seq(mul(x0, mul(cos_u, add(lit(1), mul(x3, cos_u))))),
        ranges={"x0": (0.1, 4.0), "x1": (0.1, 1.5), "x2": (0.1, 1.0), "x3": (0.1, 4.0)},
        rule_categories=("distributive", "commutative"),
    ))
    entries.append(BenchmarkSpec(
        name="feynman-II.6.15b",
        sequence=_seq(mul(div(mul(lit(3), x0), mul(lit(4), lit(math.pi))),
                          div(mul(cos(x1), sin(x1)), pow_(x2, lit(3))))),
        variant=_seq(mul(div(mul(lit(3), x0), mul(lit(8), lit(math.pi))),
                         div(sin(mul(lit(2), x1)), pow_(x2, lit(3))))),
        ranges={"x0": (0.1, 4.0), "x1": (0.1, 1.5), "x2": (0.5, 4.0)},
        rule_categories=("trig",),
    ))
    u = div(mul(x1, x2), x3)
    entries.append(BenchmarkSpec(
        name="feynman-II.35.18",
        sequence=_seq(div(x0, add(exp(u), exp(neg(u))))),
        variant=_seq(div(x0, mul(lit(2), cosh(u)))),
        ranges={"x0": (0.1, 4.0), "x1": (0.1, 2.0), "x2": (0.1, 2.0), "x3": (0.5, 4.0)},
        rule_categories=("log-exp",),
    ))
    entries.append(BenchmarkSpec(
        name="feynman-II.35.21",
        sequence=_seq(mul(mul(x0, x1), tanh(u))),
        variant=_seq(mul(mul(x0, x1),
                         div(sub(exp(mul(lit(2), u)), lit(1)),
                             add(exp(mul(lit(2), u)), lit(1))))),
        ranges={"x0": (0.1, 4.0), "x1": (0.1, 2.0), "x2": (0.1, 2.0), "x3": (0.5, 4.0)},
        rule_categories=("log-exp",),
    ))

    return {entry.name: entry for entry in entries}


REGISTRY: dict[str, BenchmarkSpec] = _build_registry()


def get_benchmark(name: str) -> BenchmarkSpec:
    if name not in REGISTRY:
        known = ", ".join(sorted(REGISTRY))
        raise KeyError(f"unknown benchmark {name!r}; known: {known}")
    return REGISTRY[name]
