"""Gradient oracles (central differences, dual numbers) and the check report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..frontend import syntax as S
from ..frontend.lower import lower
from ..runtime.interp import Program
from ..runtime.values import EvalError, format_number
from . import numbers as N
from .ast_interp import AstInterpreter


class OracleError(ValueError):
    pass


def default_step(x: float) -> float:
    return 1e-6 * max(1.0, abs(x))


def finite_diff(f, args, i: int, h: float | None = None) -> float:
    """Central difference of scalar ``f`` in argument ``i``."""
    args = [float(a) for a in args]
    if h is None:
        h = default_step(args[i])
    if not h > 0:
        raise OracleError("step must be positive")
    hi = list(args)
    lo = list(args)
    hi[i] += h
    lo[i] -= h
    fp, fm = f(*hi), f(*lo)
    if not (isinstance(fp, float) and isinstance(fm, float)):
        raise OracleError("finite differences need a scalar result")
    if not (math.isfinite(fp) and math.isfinite(fm)):
        raise OracleError("non-finite value at a finite-difference probe")
    return (fp - fm) / (2 * h)


def dual_eval(f, args, i: int) -> float:
    """Forward-mode derivative of ``f`` in argument ``i`` using dual numbers."""
    xs = [N.Dual(float(a), 1.0 if j == i else 0.0) for j, a in enumerate(args)]
    y = f(*xs)
    if isinstance(y, N.Dual):
        return y.eps
    if isinstance(y, float):
        return 0.0
    raise OracleError("dual evaluation needs a scalar result")


def _module(src) -> S.Module:
    return S.parse(src) if isinstance(src, str) else src


def reference_function(src, name: str, on_compare=None):
    """Python callable evaluating ``name`` with the reference interpreter."""
    m = _module(src)

    def f(*xs):
        return AstInterpreter(m, on_compare).call(name, *xs)

    return f


def dual_probe(src, name: str, args, i: int, h: float | None = None) -> tuple[float, bool]:
    """Dual-number derivative plus whether a comparison lies within ``10·h``
    of flipping, in which case central differences straddle a kink."""
    args = [float(a) for a in args]
    if h is None:
        h = default_step(args[i])
    near = False

    def watch(a, b):
        nonlocal near
        da = a.eps if isinstance(a, N.Dual) else 0.0
        db = b.eps if isinstance(b, N.Dual) else 0.0
        # equal slopes still count: rounding alone can then pick the branch
        gap = N.primal(a) - N.primal(b)
        if (da or db) and abs(gap) <= 10 * h * max(1.0, abs(da), abs(db)):
            near = True

    d = dual_eval(reference_function(src, name, watch), args, i)
    return d, near


def _close(a: float, b: float, atol: float, rtol: float) -> bool:
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= atol + rtol * max(abs(a), abs(b))


def _errors(a: float, b: float) -> tuple[float, float]:
    err = abs(a - b)
    scale = max(abs(a), abs(b))
    return err, (err / scale if scale > 0 else 0.0)


@dataclass
class CheckEntry:
    index: int
    ad: float
    fd: float | None
    dual: float
    fd_pass: bool | None  # None when finite differences were excluded
    dual_pass: bool
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.dual_pass and self.fd_pass is not False

    def lines(self) -> list[str]:
        out = []
        if self.fd is None:
            out.append(f"{self.index} {_fmt(self.ad)} - - - excluded fd ({self.note})")
        else:
            e, r = _errors(self.ad, self.fd)
            out.append(f"{self.index} {_fmt(self.ad)} {_fmt(self.fd)} {e:.3e} {r:.3e} "
                       f"{'pass' if self.fd_pass else 'fail'} fd")
        e, r = _errors(self.ad, self.dual)
        out.append(f"{self.index} {_fmt(self.ad)} {_fmt(self.dual)} {e:.3e} {r:.3e} "
                   f"{'pass' if self.dual_pass else 'fail'} dual")
        return out


@dataclass
class CheckReport:
    name: str
    args: tuple
    value: float
    entries: list = field(default_factory=list)
    value_matches: bool = True
    stacks_balanced: bool = True
    error: str | None = None

    @property
    def passed(self) -> bool:
        return (self.error is None and self.value_matches and self.stacks_balanced
                and all(e.passed for e in self.entries))

    def lines(self) -> list[str]:
        if self.error is not None:
            return [f"error {self.error}"]
        out = []
        for e in self.entries:
            out.extend(e.lines())
        if not self.value_matches:
            out.append("value mismatch between the IR interpreter and the reference")
        if not self.stacks_balanced:
            out.append("stack pushes and pops differ")
        return out

    def __str__(self) -> str:
        return "\n".join(self.lines())


def _fmt(x: float) -> str:
    return format_number(x) if isinstance(x, float) else str(x)


def check_gradient(src, name: str, args, atol: float = 1e-8, rtol: float = 1e-5,
                   dual_atol: float | None = None, dual_rtol: float | None = None,
                   functions=None) -> CheckReport:
    """Compare the transform's gradient of ``name`` against both oracles.

    ``functions`` may supply already-lowered IR for ``src``."""
    m = _module(src)
    args = tuple(float(a) for a in args)
    dual_atol = atol if dual_atol is None else dual_atol
    dual_rtol = rtol if dual_rtol is None else dual_rtol
    prog = Program(functions if functions is not None else lower(m), track_stacks=True)
    try:
        y, grads = prog.value_and_gradient(name, *args)
    except EvalError as e:
        return CheckReport(name, args, math.nan, error=str(e))
    report = CheckReport(name, args, y)
    ref = reference_function(m, name)
    y_ref = ref(*args)
    report.value_matches = (y == y_ref) or (math.isnan(y) and math.isnan(y_ref))
    report.stacks_balanced = prog.stacks_balanced()
    for i, ad in enumerate(grads):
        if not isinstance(ad, float):
            report.error = f"gradient {i} is not a number"
            return report
        h = default_step(args[i])
        d, near = dual_probe(m, name, args, i, h)
        fd, fd_pass, note = None, None, ""
        if near:
            note = "near branch"
        else:
            try:
                fd = finite_diff(ref, args, i, h)
                fd_pass = _close(ad, fd, atol, rtol)
            except OracleError as e:
                note = str(e)
        report.entries.append(CheckEntry(i, ad, fd, d, fd_pass, _close(ad, d, dual_atol, dual_rtol), note))
    return report
