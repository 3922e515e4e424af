"""Primitive operations and their pullbacks.

Every differentiable primitive carries a pullback written in the IR text
format.  ``J`` on a primitive evaluates it, packs whatever the pullback needs
into an environment and returns a closure over the pullback code.  Because
the pullbacks are ordinary IR they can themselves be differentiated, which is
what makes nested differentiation work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

from ..ir import UNIT, ZERO
from .values import (
    Box,
    ClosureAdjoint,
    Closure,
    Cons,
    ConsAdjoint,
    EvalError,
    Stack,
    accumulate,
    is_number,
)


def _num(v, op):
    if is_number(v):
        return v
    raise EvalError(f"{op} expects a number, got {type(v).__name__}")


def ieee_div(a: float, b: float) -> float:
    try:
        return a / b
    except ZeroDivisionError:
        if a != a or a == 0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)


def ieee_pow(b: float, n: float) -> float:
    try:
        return math.pow(b, n)
    except ValueError:
        if b == 0 and n < 0:
            return math.inf
        return math.nan
    except OverflowError:
        return math.inf if b > 0 or float(n).is_integer() and n % 2 == 0 else -math.inf


def ieee_log(x: float) -> float:
    if x > 0:
        return math.log(x)
    if x == 0:
        return -math.inf
    return math.nan


def ieee_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _trig(fn):
    def go(x):
        try:
            return fn(x)
        except ValueError:
            return math.nan
    return go


ieee_sin = _trig(math.sin)
ieee_cos = _trig(math.cos)


def add(a, b):
    if a is ZERO:
        return b
    if b is ZERO:
        return a
    if is_number(a) and is_number(b):
        return a + b
    return accumulate(a, b)


def sub(a, b):
    if b is ZERO:
        return a
    if a is ZERO:
        return neg(b)
    return _num(a, "-") - _num(b, "-")


def mul(a, b):
    if a is ZERO or b is ZERO:
        return ZERO
    return _num(a, "*") * _num(b, "*")


def div(a, b):
    if a is ZERO:
        return ZERO
    return ieee_div(_num(a, "/"), _num(b, "/"))


def neg(a):
    if a is ZERO:
        return ZERO
    return -_num(a, "neg")


def power(b, n):
    return ieee_pow(_num(b, "^"), _num(n, "^"))


def _cmp(op):
    def go(a, b):
        if is_number(a) and is_number(b):
            return op(a, b)
        if isinstance(a, bool) and isinstance(b, bool):
            return op(a, b)
        raise EvalError("comparison expects two numbers")
    return go


def equal(a, b):
    if type(a) is not type(b):
        return False
    return a == b


def lnot(a):
    if not isinstance(a, bool):
        raise EvalError("not expects a boolean")
    return not a


def first(c):
    if c is ZERO:
        return ZERO
    if isinstance(c, (Cons, ConsAdjoint)):
        return c.first
    raise EvalError("first expects a cons cell")


def second(c):
    if c is ZERO:
        return ZERO
    if isinstance(c, (Cons, ConsAdjoint)):
        return c.second
    raise EvalError("second expects a cons cell")


def env_of(c):
    if c is ZERO:
        return ZERO
    if isinstance(c, (Closure, ClosureAdjoint)):
        return c.env
    raise EvalError("env expects a closure")


def make_closure(code, env):
    from ..ir import FunctionIR

    if not isinstance(code, FunctionIR):
        raise EvalError("closure expects a function reference")
    return Closure(code, env)


def closadj(e):
    return ZERO if e is ZERO else ClosureAdjoint(e)


def consadj(a, b):
    if a is ZERO and b is ZERO:
        return ZERO
    return ConsAdjoint(a, b)


def box_get(b):
    if not isinstance(b, Box):
        raise EvalError("get expects a box")
    return b.value


def box_set(b, x):
    if not isinstance(b, Box):
        raise EvalError("set expects a box")
    b.value = x
    return UNIT


def stack_push(s, v):
    if not isinstance(s, Stack):
        raise EvalError("push expects a stack")
    s.push(v)
    return UNIT


def stack_pop(s):
    if not isinstance(s, Stack):
        raise EvalError("pop expects a stack")
    return s.pop()


# ---------------------------------------------------------------------------


def _cap_none(args, y):
    return UNIT


def _cap_two(args, y):
    return Cons(args[0], args[1])


def _cap_first(args, y):
    return args[0]


def _cap_result(args, y):
    return y


def _cap_pow(args, y):
    return Cons(args[0], Cons(args[1], y))


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int | None
    fn: Callable
    differentiable: bool = True
    capture: Callable = _cap_none
    # the call may touch mutable state, so it must be differentiated even
    # when its result does not flow to the output
    effectful: bool = False
    needs_runtime: bool = False

    def __repr__(self) -> str:
        return f"<primitive {self.name}>"


def _prims() -> dict[str, Primitive]:
    P = Primitive
    ps = [
        P("+", 2, add),
        P("-", 2, sub),
        P("*", 2, mul, capture=_cap_two),
        P("/", 2, div, capture=_cap_two),
        P("^", 2, power, capture=_cap_pow),
        P("neg", 1, neg),
        P("id", 1, lambda x: x),
        P("sin", 1, lambda x: ieee_sin(_num(x, "sin")), capture=_cap_first),
        P("cos", 1, lambda x: ieee_cos(_num(x, "cos")), capture=_cap_first),
        P("exp", 1, lambda x: ieee_exp(_num(x, "exp")), capture=_cap_result),
        P("log", 1, lambda x: ieee_log(_num(x, "log")), capture=_cap_first),
        P(">", 2, _cmp(lambda a, b: a > b), differentiable=False),
        P("<", 2, _cmp(lambda a, b: a < b), differentiable=False),
        P("==", 2, equal, differentiable=False),
        P("not", 1, lnot, differentiable=False),
        P("cons", 2, Cons),
        P("first", 1, first),
        P("second", 1, second),
        P("consadj", 2, consadj),
        P("closure", 2, make_closure),
        P("env", 1, env_of),
        P("closadj", 1, closadj),
        P("box", 1, Box, capture=_cap_result, effectful=True),
        P("get", 1, box_get, capture=_cap_first, effectful=True),
        P("set", 2, box_set, capture=_cap_first, effectful=True),
        P("push", 2, stack_push, capture=_cap_first, effectful=True),
        P("pop", 1, stack_pop, capture=_cap_first, effectful=True),
        P("stack", 0, None, differentiable=False, needs_runtime=True),
        P("gradref", 1, None, differentiable=False, needs_runtime=True),
    ]
    return {p.name: p for p in ps}


PRIMITIVES: dict[str, Primitive] = _prims()

# Builtins evaluated by the interpreter itself rather than through ``fn``.
SPECIAL = {"J", "grad"}
BUILTIN_NAMES = frozenset(PRIMITIVES) | SPECIAL

# calls to these can be dropped when their result is unused
PURE = frozenset(n for n, p in PRIMITIVES.items() if not p.effectful and p.fn is not None)


PULLBACK_SOURCE = {
    "+": """
block #1:
  return dy, dy""",
    "-": """
block #1:
  %1 <- call neg(dy)
  return dy, %1""",
    "*": """
block #1:
  %1 <- call env(self)
  %2 <- call first(%1)
  %3 <- call second(%1)
  %4 <- call *(dy, %3)
  %5 <- call *(dy, %2)
  return %4, %5""",
    "/": """
block #1:
  %1 <- call env(self)
  %2 <- call first(%1)
  %3 <- call second(%1)
  %4 <- call /(dy, %3)
  %5 <- call *(%4, %2)
  %6 <- call /(%5, %3)
  %7 <- call neg(%6)
  return %4, %7""",
    "^": """
block #1:
  %1 <- call env(self)
  %2 <- call first(%1)
  %3 <- call second(%1)
  %4 <- call first(%3)
  %5 <- call second(%3)
  %6 <- call -(%4, 1.0)
  %7 <- call ^(%2, %6)
  %8 <- call *(%4, %7)
  %9 <- call *(dy, %8)
  %10 <- call log(%2)
  %11 <- call *(%5, %10)
  %12 <- call *(dy, %11)
  return %9, %12""",
    "neg": """
block #1:
  %1 <- call neg(dy)
  return %1""",
    "id": """
block #1:
  return dy""",
    "sin": """
block #1:
  %1 <- call env(self)
  %2 <- call cos(%1)
  %3 <- call *(dy, %2)
  return %3""",
    "cos": """
block #1:
  %1 <- call env(self)
  %2 <- call sin(%1)
  %3 <- call *(dy, %2)
  %4 <- call neg(%3)
  return %4""",
    "exp": """
block #1:
  %1 <- call env(self)
  %2 <- call *(dy, %1)
  return %2""",
    "log": """
block #1:
  %1 <- call env(self)
  %2 <- call /(dy, %1)
  return %2""",
    ">": """
block #1:
  return 0, 0""",
    "<": """
block #1:
  return 0, 0""",
    "==": """
block #1:
  return 0, 0""",
    "not": """
block #1:
  return 0""",
    "cons": """
block #1:
  %1 <- call first(dy)
  %2 <- call second(dy)
  return %1, %2""",
    "consadj": """
block #1:
  %1 <- call first(dy)
  %2 <- call second(dy)
  return %1, %2""",
    "first": """
block #1:
  %1 <- call consadj(dy, 0)
  return %1""",
    "second": """
block #1:
  %1 <- call consadj(0, dy)
  return %1""",
    "closure": """
block #1:
  %1 <- call env(dy)
  return 0, %1""",
    "env": """
block #1:
  %1 <- call closadj(dy)
  return %1""",
    "closadj": """
block #1:
  %1 <- call env(dy)
  return %1""",
    "box": """
block #1:
  %1 <- call env(self)
  %2 <- call gradref(%1)
  %3 <- call get(%2)
  call set(%2, 0)
  return %3""",
    "get": """
block #1:
  %1 <- call env(self)
  %2 <- call gradref(%1)
  %3 <- call get(%2)
  %4 <- call +(%3, dy)
  call set(%2, %4)
  return 0""",
    "set": """
block #1:
  %1 <- call env(self)
  %2 <- call gradref(%1)
  %3 <- call get(%2)
  call set(%2, 0)
  return 0, %3""",
    "push": """
block #1:
  %1 <- call env(self)
  %2 <- call gradref(%1)
  %3 <- call pop(%2)
  return 0, %3""",
    "pop": """
block #1:
  %1 <- call env(self)
  %2 <- call gradref(%1)
  call push(%2, dy)
  return 0""",
}


def pullback_name(prim: str) -> str:
    return f"{prim}.pullback"


@lru_cache(maxsize=None)
def pullback_library():
    """Parsed pullback functions, keyed by function name."""
    from ..ir import parse_ir

    lib = {}
    for prim, src in PULLBACK_SOURCE.items():
        name = pullback_name(prim)
        lib[name] = parse_ir(src.strip(), name=name, params=("self", "dy"))
    return lib
