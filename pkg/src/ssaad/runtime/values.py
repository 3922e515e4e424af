"""Runtime and gradient value kinds.

Numbers are Python floats, booleans are ``bool``, unit is :data:`UNIT`.  The
remaining kinds are small classes; cons cells and adjoint objects are
immutable, boxes and stacks are mutable and compared by identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..ir import UNIT, ZERO, FunctionIR, ZeroType


class EvalError(RuntimeError):
    """Raised for type errors, arity mismatches and similar faults."""


class PullbackReuseError(EvalError):
    pass


@dataclass(frozen=True)
class Cons:
    first: object
    second: object


@dataclass(eq=False)
class Box:
    value: object

    def __repr__(self) -> str:
        return f"Box({self.value!r})"


@dataclass(eq=False)
class Stack:
    items: list = field(default_factory=list)
    pushes: int = 0
    pops: int = 0

    def push(self, v):
        self.items.append(v)
        self.pushes += 1

    def pop(self):
        if not self.items:
            raise EvalError("pop from an empty stack")
        self.pops += 1
        return self.items.pop()


@dataclass(eq=False)
class Closure:
    """A function value with an environment.

    Pullbacks produced by ``J`` are closures too: their code is an adjoint (or
    a primitive's pullback) and the environment holds what the primal
    captured.  ``one_shot`` closures consume their captured stacks when run.
    """

    code: FunctionIR
    env: object
    one_shot: bool = False
    consumed: bool = False

    def __repr__(self) -> str:
        return f"<closure {self.code.name}>"


@dataclass(frozen=True)
class ConsAdjoint:
    first: object
    second: object


@dataclass(frozen=True)
class ClosureAdjoint:
    env: object


def is_number(v) -> bool:
    return isinstance(v, float) and not isinstance(v, bool)


def accumulate(a, b):
    """Sum two gradients; ``ZERO`` is the identity for every structure."""
    if a is ZERO:
        return b
    if b is ZERO:
        return a
    if is_number(a) and is_number(b):
        return a + b
    if isinstance(a, ConsAdjoint) and isinstance(b, ConsAdjoint):
        return ConsAdjoint(accumulate(a.first, b.first), accumulate(a.second, b.second))
    if isinstance(a, ClosureAdjoint) and isinstance(b, ClosureAdjoint):
        return ClosureAdjoint(accumulate(a.env, b.env))
    raise EvalError(f"cannot accumulate {format_value(a)} and {format_value(b)}")


def scale(g, s: float):
    """Multiply a gradient by a scalar (used by linearity checks)."""
    if g is ZERO:
        return ZERO
    if is_number(g):
        return g * s
    if isinstance(g, ConsAdjoint):
        return ConsAdjoint(scale(g.first, s), scale(g.second, s))
    if isinstance(g, ClosureAdjoint):
        return ClosureAdjoint(scale(g.env, s))
    raise EvalError(f"cannot scale {g!r}")


def format_number(x: float) -> str:
    if x != x or x in (float("inf"), float("-inf")):
        return repr(x)
    if x == int(x) and abs(x) < 1e16:
        return str(int(x)) if not (x == 0 and str(x).startswith("-")) else "-0"
    return repr(x)


def format_value(v) -> str:
    if v is ZERO:
        return "0"
    if v is UNIT or v is None:
        return "unit"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_number(v)
    if isinstance(v, (Cons, ConsAdjoint)):
        return f"({format_value(v.first)} . {format_value(v.second)})"
    if isinstance(v, ClosureAdjoint):
        return f"closure-adjoint({format_value(v.env)})"
    if isinstance(v, Box):
        return f"box({format_value(v.value)})"
    if isinstance(v, Stack):
        return f"stack[{len(v.items)}]"
    if isinstance(v, Closure):
        return f"<closure {v.code.name}>"
    if isinstance(v, FunctionIR):
        return f"<function {v.name}>"
    return repr(v)


__all__ = [
    "UNIT", "ZERO", "ZeroType", "Cons", "Box", "Stack", "Closure", "ConsAdjoint",
    "ClosureAdjoint", "EvalError", "PullbackReuseError", "accumulate", "scale",
    "format_value", "format_number", "is_number",
]
