"""Seeded random adlang programs for differential testing.

Every generated program defines ``f`` over one to ``max_params`` numeric
parameters.  Loops count a literal down to zero, so termination holds by
construction; divisions and logarithms are guarded so values stay finite.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

ALL_BUILTINS = ("sin", "cos", "exp", "log", "pow", "div", "cons", "box")


@dataclass(frozen=True)
class FuzzConfig:
    seed: int = 0
    max_statements: int = 6
    loop_prob: float = 0.2
    branch_prob: float = 0.25
    builtins: tuple = ALL_BUILTINS
    input_range: tuple = (-2.0, 2.0)
    max_params: int = 3
    max_depth: int = 3
    early_return_prob: float = 0.2
    max_trip_count: int = 3

    def straight_line(self) -> "FuzzConfig":
        return FuzzConfig(self.seed, self.max_statements, 0.0, 0.0, self.builtins,
                          self.input_range, self.max_params, self.max_depth, 0.0,
                          self.max_trip_count)


_CONSTS = ("0.5", "1.5", "2", "0.25", "1.25", "0.75")


@dataclass
class _Scope:
    nums: list = field(default_factory=list)
    conses: list = field(default_factory=list)
    boxes: list = field(default_factory=list)

    def copy(self) -> "_Scope":
        return _Scope(list(self.nums), list(self.conses), list(self.boxes))


class _Gen:
    def __init__(self, cfg: FuzzConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.counter = 0
        self.budget = cfg.max_statements
        self.lines: list[str] = []

    def fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def has(self, b: str) -> bool:
        return b in self.cfg.builtins

    # expressions

    def leaf(self, sc: _Scope) -> str:
        r = self.rng
        if sc.conses and r.random() < 0.15:
            return f"{r.choice(('first', 'second'))}({r.choice(sc.conses)})"
        if sc.boxes and r.random() < 0.15:
            return f"get({r.choice(sc.boxes)})"
        if r.random() < 0.8:
            return r.choice(sc.nums)
        return r.choice(_CONSTS)

    def expr(self, sc: _Scope, depth: int | None = None) -> str:
        r = self.rng
        if depth is None:
            depth = self.cfg.max_depth
        if depth <= 0 or r.random() < 0.25:
            return self.leaf(sc)
        forms = ["+", "-", "*", "neg"]
        for b in ("sin", "cos", "exp", "log", "pow", "div"):
            if self.has(b):
                forms.append(b)
        k = r.choice(forms)
        a = self.expr(sc, depth - 1)
        if k in ("+", "-", "*"):
            return f"({a} {k} {self.expr(sc, depth - 1)})"
        if k == "neg":
            return f"-({a})"
        if k in ("sin", "cos"):
            return f"{k}({a})"
        if k == "exp":
            return f"exp({a} / ({a} * {a} + 1))"
        if k == "log":
            return f"log({a} * {a} + 1)"
        if k == "pow":
            # a leaf base keeps magnitudes moderate
            return f"{self.leaf(sc)}^{r.choice(('2', '3'))}"
        b = self.expr(sc, depth - 2)
        return f"{a} / ({b} * {b} + 1)"

    def cond(self, sc: _Scope) -> str:
        op = self.rng.choice((">", "<"))
        return f"{self.expr(sc, 2)} {op} {self.expr(sc, 2)}"

    # statements

    def block(self, sc: _Scope, indent: int, loop_depth: int, allow_return: bool):
        r = self.rng
        n = r.randint(1, max(1, min(3, self.budget)))
        for _ in range(n):
            if self.budget <= 0:
                break
            self.budget -= 1
            self.stmt(sc, indent, loop_depth, allow_return)

    def emit(self, indent: int, text: str):
        self.lines.append("  " * indent + text)

    def stmt(self, sc: _Scope, indent: int, loop_depth: int, allow_return: bool):
        r = self.rng
        cfg = self.cfg
        roll = r.random()
        if roll < cfg.loop_prob and loop_depth < 2:
            k = self.fresh("k")
            self.emit(indent, f"let {k} = {r.randint(0, cfg.max_trip_count)};")
            self.emit(indent, f"while {k} > 0 {{")
            self.emit(indent + 1, f"{k} = {k} - 1;")
            self.block(sc.copy(), indent + 1, loop_depth + 1, allow_return)
            self.emit(indent, "}")
            return
        if roll < cfg.loop_prob + cfg.branch_prob:
            self.emit(indent, f"if {self.cond(sc)} {{")
            self.block(sc.copy(), indent + 1, loop_depth, allow_return)
            if allow_return and r.random() < cfg.early_return_prob:
                self.emit(indent + 1, f"return {self.expr(sc)};")
            if r.random() < 0.6:
                self.emit(indent, "} else {")
                self.block(sc.copy(), indent + 1, loop_depth, allow_return)
            self.emit(indent, "}")
            return
        choice = r.random()
        if self.has("cons") and choice < 0.12:
            c = self.fresh("c")
            self.emit(indent, f"let {c} = cons({self.expr(sc)}, {self.expr(sc)});")
            sc.conses.append(c)
        elif self.has("box") and choice < 0.2:
            b = self.fresh("b")
            self.emit(indent, f"let {b} = box({self.expr(sc)});")
            sc.boxes.append(b)
        elif sc.boxes and choice < 0.3:
            self.emit(indent, f"set({r.choice(sc.boxes)}, {self.expr(sc)});")
        elif choice < 0.6:
            v = self.fresh("v")
            self.emit(indent, f"let {v} = {self.expr(sc)};")
            sc.nums.append(v)
        else:
            v = r.choice(sc.nums)
            # keep loop-carried values bounded
            rhs = self.expr(sc)
            if loop_depth:
                rhs = f"sin({rhs})"
            self.emit(indent, f"{v} = {rhs};")

    def program(self) -> tuple[str, int]:
        r = self.rng
        k = r.randint(1, self.cfg.max_params)
        params = [f"x{i + 1}" for i in range(k)]
        sc = _Scope(nums=list(params))
        self.emit(0, f"fn f({', '.join(params)}) {{")
        while self.budget > 0:
            self.budget -= 1
            self.stmt(sc, 1, 0, True)
        terms = [self.expr(sc, 1) for _ in range(r.randint(1, 3))]
        # make every local reach the result through at least one term
        pool = list(sc.nums[-3:]) + [f"get({b})" for b in sc.boxes[-2:]]
        pool += [f"first({c}) * second({c})" for c in sc.conses[-2:]]
        terms.extend(pool)
        self.emit(1, f"return {' + '.join(terms)};")
        self.emit(0, "}")
        return "\n".join(self.lines) + "\n", k


def random_program(cfg: FuzzConfig) -> str:
    """Deterministic adlang source for ``cfg.seed``."""
    return _Gen(cfg).program()[0]


def random_case(cfg: FuzzConfig) -> tuple[str, list[float]]:
    """A program and an input point, both determined by the seed."""
    src, k = _Gen(cfg).program()
    rng = random.Random(f"inputs-{cfg.seed}")
    lo, hi = cfg.input_range
    args = [round(rng.uniform(lo, hi), 3) for _ in range(k)]
    return src, args
