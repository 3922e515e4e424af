"""The interpreter.

A :class:`Program` owns a table of functions (user functions, primitive
pullbacks and everything derived by differentiation) and evaluates them block
by block.  ``J`` is resolved here: on a primitive it runs the primitive and
closes its pullback over the captured values; on an IR function it runs the
derived primal and closes the derived adjoint over the primal's environment.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

from .. import adjoint as _adjoint
from ..builder import FunctionBuilder
from ..ir import (
    UNIT,
    ZERO,
    ZERO_LIT,
    Alpha,
    Arg,
    Branch,
    Const,
    FuncRef,
    FunctionIR,
    Lit,
    Return,
    Var,
)
from ..primal import env_path
from . import builtins as B
from .values import (
    Box,
    Closure,
    EvalError,
    PullbackReuseError,
    Stack,
    accumulate,
    format_value,
    is_number,
)


class ContractError(EvalError):
    """The function does not meet the calling contract (e.g. non-scalar result)."""


_SPECIAL = {name: B.Primitive(name, None, None) for name in B.SPECIAL}

_SYMBOL_NAMES = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow",
                 ">": "gt", "<": "lt", "==": "eq"}


def _tag(name: str) -> str:
    return _SYMBOL_NAMES.get(name, name)


def has_hidden(f) -> bool:
    """IR functions, closures, ``J`` and ``grad`` return a gradient for
    themselves first."""
    return isinstance(f, (FunctionIR, Closure)) or (
        isinstance(f, B.Primitive) and f.name in B.SPECIAL)


class Program:
    def __init__(self, functions=None, fuel: int | None = None, track_stacks: bool = False):
        self.functions: dict[str, FunctionIR] = dict(B.pullback_library())
        for f in (functions.values() if isinstance(functions, dict) else functions or ()):
            self.functions[f.name] = f
        self.adjoint_meta = {}
        self._derived: dict[str, tuple[FunctionIR, FunctionIR]] = {}
        self._lock = threading.RLock()
        self._registry: list[dict] = [{}]
        self.pushes = 0
        self.pops = 0
        self.fuel = fuel
        # every stack created, so tests can check pushes == pops per stack
        self.stacks: list[Stack] | None = [] if track_stacks else None

    # -- function table ----------------------------------------------------

    def add(self, f: FunctionIR) -> FunctionIR:
        with self._lock:
            self.functions[f.name] = f
        return f

    def lookup(self, name: str):
        if name in B.PRIMITIVES:
            return B.PRIMITIVES[name]
        if name in _SPECIAL:
            return _SPECIAL[name]
        try:
            return self.functions[name]
        except KeyError:
            raise EvalError(f"unknown function {name}") from None

    def differentiate(self, name: str) -> tuple[FunctionIR, FunctionIR]:
        """Primal and adjoint of the named function, derived once and cached."""
        with self._lock:
            hit = self._derived.get(name)
            if hit is not None:
                return hit
            f = self.lookup(name)
            if not isinstance(f, FunctionIR):
                raise EvalError(f"{name} is not an IR function")
            primal, adj = _adjoint.differentiate(f, self.adjoint_meta.get(name))
            self.functions[primal.name] = primal
            self.functions[adj.name] = adj.ir
            self.adjoint_meta[adj.name] = adj.meta
            self._derived[name] = (primal, adj.ir)
            return primal, adj.ir

    # -- evaluation ----------------------------------------------------------

    def call(self, name: str, *args):
        return self.apply(self.lookup(name), list(args))

    def eval_function(self, f: FunctionIR, args: list) -> list:
        if len(args) != len(f.params):
            raise EvalError(f"{f.name} expects {len(f.params) - 1} arguments, got {len(args) - 1}")
        env = dict(zip(f.params, args))
        vals: dict[int, object] = {}
        meta = self.adjoint_meta.get(f.name)

        def operand(op):
            if isinstance(op, Var):
                return vals[op.id]
            if isinstance(op, Lit):
                return op.value
            if isinstance(op, Arg):
                return env[op.name]
            if isinstance(op, FuncRef):
                return self.lookup(op.name)
            if isinstance(op, Alpha):
                return self._alpha(meta, env["self"], op.id)
            raise EvalError(f"bad operand {op!r}")

        bid, prev = 1, None
        while True:
            blk = f.block(bid)
            if blk.phis:
                new = []
                for p in blk.phis:
                    inc = dict(p.incomings)
                    if prev not in inc:
                        raise EvalError(f"{f.name}: phi %{p.result} has no value for #{prev}")
                    new.append((p.result, operand(inc[prev])))
                vals.update(new)
            for ins in blk.body:
                if self.fuel is not None:
                    self.fuel -= 1
                    if self.fuel < 0:
                        raise EvalError("evaluation step limit exceeded")
                if isinstance(ins, Const):
                    vals[ins.result] = ins.value
                    continue
                callee = operand(ins.callee)
                argv = [operand(a) for a in ins.args]
                res = self.j_apply(callee, argv) if ins.j else self.apply(callee, argv)
                if ins.results and len(res) != len(ins.results):
                    raise EvalError(f"{f.name}: call to {_name(callee)} returned {len(res)} "
                                    f"values, expected {len(ins.results)}")
                for r, v in zip(ins.results, res):
                    if r is not None:
                        vals[r] = v
            t = blk.terminator
            if isinstance(t, Return):
                return [operand(op) for op in t.operands]
            prev = bid
            if isinstance(t, Branch):
                bid = t.target
            else:
                c = operand(t.cond)
                if not isinstance(c, bool):
                    raise EvalError(f"branch condition must be a boolean, got {format_value(c)}")
                bid = t.then if c else t.else_

    def _alpha(self, meta, selfv, vid):
        if meta is None or not isinstance(selfv, Closure):
            raise EvalError("alpha reference outside an adjoint")
        v = selfv.env
        for step in env_path(meta.layout, vid):
            v = B.first(v) if step == "first" else B.second(v)
        if vid in meta.stacks:
            self.pops += 1
            v = B.stack_pop(v)
        return v

    def apply(self, f, args: list) -> list:
        if isinstance(f, B.Primitive):
            return [self._primitive(f, args)]
        if isinstance(f, FunctionIR):
            return self.eval_function(f, [f, *args])
        if isinstance(f, Closure):
            if f.one_shot:
                if f.consumed:
                    raise PullbackReuseError(
                        "pullback already consumed; pullbacks that capture stacks are one-shot")
                f.consumed = True
            return self.eval_function(f.code, [f, *args])
        raise EvalError(f"cannot call {format_value(f)}")

    def _primitive(self, p: B.Primitive, args: list):
        name = p.name
        if name == "J":
            raise EvalError("J must be called through a J-call")
        if name == "grad":
            if not args:
                raise EvalError("grad expects a function")
            w = self.grad_wrapper(args[0], len(args) - 1)
            (r,) = self.eval_function(w, [w, *args])
            return r
        if p.arity is not None and len(args) != p.arity:
            raise EvalError(f"{name} expects {p.arity} arguments, got {len(args)}")
        if name == "stack":
            s = Stack()
            if self.stacks is not None:
                self.stacks.append(s)
            return s
        if name == "gradref":
            return self._gradref(args[0])
        if name == "push":
            self.pushes += 1
        elif name == "pop":
            self.pops += 1
        elif name == "closure":
            code, env = args
            if not isinstance(code, FunctionIR):
                raise EvalError("closure expects a function reference")
            meta = self.adjoint_meta.get(code.name)
            return Closure(code, env, one_shot=bool(meta and meta.has_stacks))
        return p.fn(*args)

    # -- J -------------------------------------------------------------------

    def j_apply(self, g, args: list) -> list:
        """Evaluate ``J(g)(args...)``: the results of ``g`` followed by a pullback."""
        if isinstance(g, B.Primitive):
            if g.name == "J":
                if not args:
                    raise EvalError("J expects a function")
                w = self.j_wrapper(args[0], args[1:])
                return self._j_code(w, w, args)
            if g.name == "grad":
                w = self.grad_wrapper(args[0], len(args) - 1)
                return self._j_code(w, w, args)
            pb = self.functions.get(B.pullback_name(g.name))
            if pb is None:
                raise EvalError(f"{g.name} is not differentiable")
            y = self._primitive(g, args)
            return [y, Closure(pb, g.capture(args, y))]
        if isinstance(g, FunctionIR):
            return self._j_code(g, g, args)
        if isinstance(g, Closure):
            return self._j_code(g.code, g, args)
        raise EvalError(f"cannot differentiate {format_value(g)}")

    def _j_code(self, code: FunctionIR, selfv, args: list) -> list:
        with self._lock:
            self.functions.setdefault(code.name, code)
        primal, adj = self.differentiate(code.name)
        res = self.eval_function(primal, [selfv, *args])
        meta = self.adjoint_meta[adj.name]
        return [*res[:-1], Closure(adj, res[-1], one_shot=meta.has_stacks)]

    def result_count(self, g) -> int:
        if isinstance(g, B.Primitive):
            return 1
        code = g.code if isinstance(g, Closure) else g
        if not isinstance(code, FunctionIR):
            raise EvalError(f"cannot call {format_value(g)}")
        rets = code.return_blocks()
        return len(code.block(rets[0]).terminator.operands)

    def j_wrapper(self, h, args: list) -> FunctionIR:
        """IR with params ``(self, h, a...)`` computing ``J(h)(a...)``.

        ``J(J)(h, a...)`` is evaluated by differentiating this wrapper, so the
        wrapper spells out one level of ``J`` in terms of ordinary calls."""
        if isinstance(h, B.Primitive) and h.name == "J":
            h = self.j_wrapper(args[0], args[1:])
        elif isinstance(h, B.Primitive) and h.name == "grad":
            h = self.grad_wrapper(args[0], len(args) - 1)
        k = len(args)
        if isinstance(h, B.Primitive):
            name = f"{_tag(h.name)}.jwrap{k}"
        elif isinstance(h, FunctionIR):
            name = f"{h.name}.jwrap"
        elif isinstance(h, Closure):
            name = f"{h.code.name}.cjwrap"
        else:
            raise EvalError(f"cannot differentiate {format_value(h)}")
        with self._lock:
            if name in self.functions:
                return self.functions[name]
            params = ("self", "h") + tuple(f"a{i + 1}" for i in range(k))
            xs = tuple(Arg(p) for p in params[2:])
            fb = FunctionBuilder(name, params)
            fb.new_block()
            if isinstance(h, B.Primitive):
                (y,) = fb.call(1, FuncRef(h.name), xs)
                cap = _capture_ir(fb, h, xs, y)
                (pb,) = fb.call(1, FuncRef("closure"), (FuncRef(B.pullback_name(h.name)), cap))
                fb.terminate(1, Return((y, pb)))
            else:
                code = h if isinstance(h, FunctionIR) else h.code
                self.functions.setdefault(code.name, code)
                primal, adj = self.differentiate(code.name)
                m = self.result_count(code)
                if isinstance(h, FunctionIR):
                    callee = FuncRef(primal.name)
                else:
                    (e,) = fb.call(1, FuncRef("env"), (Arg("h"),))
                    (callee,) = fb.call(1, FuncRef("closure"), (FuncRef(primal.name), e))
                rs = fb.call(1, callee, xs, nres=m + 1)
                (pb,) = fb.call(1, FuncRef("closure"), (FuncRef(adj.name), rs[-1]))
                fb.terminate(1, Return(tuple(rs[:-1]) + (pb,)))
            w = fb.freeze()
            self.functions[name] = w
            return w

    def grad_wrapper(self, f, k: int) -> FunctionIR:
        """IR for ``grad(f, x...)``: runs ``J(f, x...)``, seeds the pullback
        with 1 and returns the gradient (a cons chain when ``k > 1``)."""
        hidden = has_hidden(f)
        name = f"gradwrap.{int(hidden)}.{k}"
        with self._lock:
            if name in self.functions:
                return self.functions[name]
            params = ("self", "f") + tuple(f"x{i + 1}" for i in range(k))
            fb = FunctionBuilder(name, params)
            fb.new_block()
            _, pb = fb.call(1, Arg("f"), tuple(Arg(p) for p in params[2:]), nres=2, j=True)
            gs = fb.call(1, pb, (Lit(1.0),), nres=k + int(hidden))
            gs = gs[int(hidden):]
            acc = gs[-1] if gs else ZERO_LIT
            for g in reversed(gs[:-1]):
                (acc,) = fb.call(1, FuncRef("cons"), (g, acc))
            fb.terminate(1, Return((acc,)))
            w = fb.freeze()
            self.functions[name] = w
            return w

    # -- gradients -----------------------------------------------------------

    @contextmanager
    def gradient_context(self):
        """A fresh registry for box and stack gradients."""
        self._registry.append({})
        try:
            yield
        finally:
            self._registry.pop()

    def _gradref(self, x):
        ctx = self._registry[-1]
        hit = ctx.get(id(x))
        if hit is None:
            if isinstance(x, Box):
                g = Box(ZERO)
            elif isinstance(x, Stack):
                g = Stack()
                if self.stacks is not None:
                    self.stacks.append(g)
            else:
                raise EvalError(f"no gradient slot for {format_value(x)}")
            hit = ctx[id(x)] = (x, g)
        return hit[1]

    def value_and_gradient(self, f, *xs):
        """Value of ``f(xs...)`` and its gradient with respect to each input."""
        if isinstance(f, str):
            f = self.lookup(f)
        args = [float(x) if isinstance(x, (int, float)) and not isinstance(x, bool) else x
                for x in xs]
        with self.gradient_context():
            res = self.j_apply(f, args)
            if len(res) != 2:
                raise ContractError(f"gradient needs a single result, got {len(res) - 1}")
            y, pb = res
            if not is_number(y):
                raise ContractError(f"gradient needs a scalar result, got {format_value(y)}")
            gs = self.apply(pb, [1.0])
        if has_hidden(f):
            gs = gs[1:]
        gs = tuple(0.0 if g is ZERO and is_number(a) else g for g, a in zip(gs, args))
        return y, gs

    def gradient(self, f, *xs):
        return self.value_and_gradient(f, *xs)[1]

    def pullback(self, f, *xs):
        """``J`` from Python: the results and the pullback closure."""
        if isinstance(f, str):
            f = self.lookup(f)
        res = self.j_apply(f, [float(x) if isinstance(x, int) else x for x in xs])
        return res[:-1], res[-1]

    def stack_balance(self) -> tuple[int, int]:
        return self.pushes, self.pops

    def stacks_balanced(self) -> bool:
        if self.stacks is None:
            return self.pushes == self.pops
        return all(s.pushes == s.pops for s in self.stacks)

    def pullback_apply(self, pb, *dys) -> list:
        return self.apply(pb, list(dys))

    @staticmethod
    def accumulate(a, b):
        return accumulate(a, b)


def _name(v) -> str:
    if isinstance(v, B.Primitive):
        return v.name
    if isinstance(v, FunctionIR):
        return v.name
    if isinstance(v, Closure):
        return v.code.name
    return format_value(v)


def _capture_ir(fb: FunctionBuilder, p: B.Primitive, xs, y):
    """IR equivalent of the primitive's capture function."""
    c = p.capture
    if c is B._cap_none:
        return Lit(UNIT)
    if c is B._cap_first:
        return xs[0]
    if c is B._cap_result:
        return y
    if c is B._cap_two:
        (v,) = fb.call(1, FuncRef("cons"), (xs[0], xs[1]))
        return v
    if c is B._cap_pow:
        (t,) = fb.call(1, FuncRef("cons"), (xs[1], y))
        (v,) = fb.call(1, FuncRef("cons"), (xs[0], t))
        return v
    raise EvalError(f"no capture rule for {p.name}")
