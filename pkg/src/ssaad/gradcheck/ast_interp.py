"""A tree-walking interpreter for adlang, independent of the SSA pipeline.

Arithmetic goes through the generic functions in :mod:`.numbers`, so the same
interpreter evaluates programs on floats, dual numbers or traced numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..frontend import syntax as S
from ..ir import UNIT
from ..runtime.values import Box, Cons, EvalError, Stack
from . import numbers as N

_BIN = {
    "+": N.num_add, "-": N.num_sub, "*": N.num_mul, "/": N.num_div, "^": N.num_pow,
}
_UNARY = {"sin": N.num_sin, "cos": N.num_cos, "exp": N.num_exp, "log": N.num_log}


@dataclass
class AstClosure:
    params: list
    body: list
    env: dict


@dataclass(frozen=True)
class FnValue:
    name: str


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class AstInterpreter:
    """Evaluate functions of a parsed module.

    ``on_compare(a, b)`` is called with the operands of every numeric
    comparison; the oracles use it to notice inputs that sit on a branch.
    """

    def __init__(self, module: S.Module, on_compare=None, fuel: int = 1_000_000):
        self.module = module
        self.fns = {f.name: f for f in module.functions}
        self.on_compare = on_compare
        self.fuel = fuel

    def call(self, name: str, *args):
        if name == "main" and name not in self.fns:
            return self.eval(self.module.main, [{}])
        return self.apply(FnValue(name), list(args))

    def apply(self, f, args):
        if isinstance(f, FnValue):
            if f.name in self.fns:
                fn = self.fns[f.name]
                return self._run(fn.params, fn.body, {}, args, f.name)
            return self._builtin(f.name, args)
        if isinstance(f, AstClosure):
            return self._run(f.params, f.body, dict(f.env), args, "closure")
        raise EvalError(f"cannot call {f!r}")

    def _run(self, params, body, env, args, name):
        if len(params) != len(args):
            raise EvalError(f"{name} expects {len(params)} arguments, got {len(args)}")
        env.update(zip(params, args))
        try:
            self.block(body, [env])
        except _Return as r:
            return r.value
        return UNIT

    # statements; scopes is a list of dicts, innermost last

    def block(self, body, scopes):
        scopes = scopes + [{}]
        for st in body:
            self.stmt(st, scopes)

    def _lookup_scope(self, scopes, name):
        for sc in reversed(scopes):
            if name in sc:
                return sc
        return None

    def stmt(self, st, scopes):
        self.fuel -= 1
        if self.fuel < 0:
            raise EvalError("evaluation step limit exceeded")
        if isinstance(st, S.Let):
            scopes[-1][st.name] = self.eval(st.value, scopes)
        elif isinstance(st, S.Assign):
            sc = self._lookup_scope(scopes, st.name)
            if sc is None:
                raise EvalError(f"assignment to undeclared variable {st.name}")
            sc[st.name] = self.eval(st.value, scopes)
        elif isinstance(st, S.ReturnStmt):
            raise _Return(self.eval(st.value, scopes))
        elif isinstance(st, S.ExprStmt):
            self.eval(st.value, scopes)
        elif isinstance(st, S.If):
            if self._cond(st.cond, scopes):
                self.block(st.then, scopes)
            elif st.orelse is not None:
                self.block(st.orelse, scopes)
        elif isinstance(st, S.While):
            while self._cond(st.cond, scopes):
                self.block(st.body, scopes)
                self.fuel -= 1
                if self.fuel < 0:
                    raise EvalError("evaluation step limit exceeded")
        else:
            raise EvalError(f"unknown statement {st!r}")

    def _cond(self, e, scopes):
        c = self.eval(e, scopes)
        if not isinstance(c, bool):
            raise EvalError("branch condition must be a boolean")
        return c

    # expressions

    def eval(self, e, scopes):
        if isinstance(e, S.Num):
            return float(e.value)
        if isinstance(e, S.Bool):
            return e.value
        if isinstance(e, S.UnitLit):
            return UNIT
        if isinstance(e, S.Name):
            sc = self._lookup_scope(scopes, e.id)
            if sc is not None:
                return sc[e.id]
            if e.id in self.fns or e.id in _UNARY or e.id in _OTHER_BUILTINS:
                return FnValue(e.id)
            raise EvalError(f"undefined variable {e.id}")
        if isinstance(e, S.Unary):
            if e.op == "neg" and isinstance(e.operand, S.Num):
                return -float(e.operand.value)
            v = self.eval(e.operand, scopes)
            if e.op == "neg":
                return N.num_neg(self._num(v))
            if not isinstance(v, bool):
                raise EvalError("not expects a boolean")
            return not v
        if isinstance(e, S.Binary):
            a = self.eval(e.left, scopes)
            b = self.eval(e.right, scopes)
            return self._binary(e.op, a, b)
        if isinstance(e, S.CallExpr):
            f = self.eval(e.func, scopes)
            args = [self.eval(a, scopes) for a in e.args]
            return self.apply(f, args)
        if isinstance(e, S.Lambda):
            env = {}
            for sc in scopes:
                env.update(sc)
            return AstClosure(e.params, e.body, env)
        raise EvalError(f"unknown expression {e!r}")

    def _num(self, v):
        if not N.is_num(v):
            raise EvalError(f"expected a number, got {v!r}")
        return v

    def _binary(self, op, a, b):
        if op in _BIN:
            return _BIN[op](self._num(a), self._num(b))
        if op == "==":
            if N.is_num(a) and N.is_num(b):
                if self.on_compare:
                    self.on_compare(a, b)
                return N.primal(a) == N.primal(b)
            if type(a) is not type(b):
                return False
            return a == b
        if isinstance(a, bool) and isinstance(b, bool):
            pa, pb = a, b
        else:
            self._num(a)
            self._num(b)
            if self.on_compare:
                self.on_compare(a, b)
            pa, pb = N.primal(a), N.primal(b)
        return pa > pb if op == ">" else pa < pb

    def _builtin(self, name, args):
        if name in _UNARY:
            (x,) = args
            return _UNARY[name](self._num(x))
        if name == "cons":
            return Cons(*args)
        if name in ("first", "second"):
            (c,) = args
            if not isinstance(c, Cons):
                raise EvalError(f"{name} expects a cons cell")
            return c.first if name == "first" else c.second
        if name == "box":
            (x,) = args
            return Box(x)
        if name == "get":
            (b,) = args
            return b.value
        if name == "set":
            b, x = args
            b.value = x
            return UNIT
        if name == "stack":
            return Stack()
        if name == "push":
            s, x = args
            s.push(x)
            return UNIT
        if name == "pop":
            (s,) = args
            return s.pop()
        raise EvalError(f"builtin {name} is not supported by the reference interpreter")


_OTHER_BUILTINS = {"cons", "first", "second", "box", "get", "set", "stack", "push", "pop"}
