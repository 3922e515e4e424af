"""Record a Wengert list by running the reference interpreter on traced inputs.

Used to contrast tape growth (one record per executed operation) with the
fixed size of the generated adjoint code."""

from __future__ import annotations

from ..frontend import syntax as S
from .ast_interp import AstInterpreter
from .numbers import Tape, Traced


def trace(src, name: str, args, traced=None) -> tuple[object, Tape, list]:
    """Evaluate ``name`` with the arguments at indices ``traced`` (all numeric
    arguments by default) recorded on a fresh tape.

    Returns ``(result, tape, inputs)``."""
    m = S.parse(src) if isinstance(src, str) else src
    tape = Tape()
    if traced is None:
        traced = range(len(args))
    traced = set(traced)
    xs = [Traced(float(a), tape) if i in traced else float(a) for i, a in enumerate(args)]
    y = AstInterpreter(m).call(name, *xs)
    return y, tape, xs
