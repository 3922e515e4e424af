from .builtins import PRIMITIVES, Primitive
from .values import (
    Box,
    Closure,
    ClosureAdjoint,
    Cons,
    ConsAdjoint,
    EvalError,
    PullbackReuseError,
    Stack,
    format_value,
)

__all__ = [
    "PRIMITIVES", "Primitive", "Program", "Box", "Closure", "ClosureAdjoint", "Cons",
    "ConsAdjoint", "EvalError", "PullbackReuseError", "Stack", "format_value",
]


def __getattr__(name):
    # the interpreter depends on the transform modules, which import builtins
    if name == "Program":
        from .interp import Program
        return Program
    raise AttributeError(name)
