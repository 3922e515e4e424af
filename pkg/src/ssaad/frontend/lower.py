"""Lowering from the adlang syntax tree to SSA functions.

Local variables are resolved with :class:`~ssaad.builder.FunctionBuilder`:
each assignment writes the variable in the current block and reads go through
predecessors, placing phis at joins and loop headers.  Closure literals are
lifted into separate functions that read their captures from ``env(self)``.
"""

from __future__ import annotations

from .. import analysis
from ..builder import FunctionBuilder, remove_trivial_phis
from ..ir import (
    UNIT_LIT,
    Arg,
    Branch,
    CondBranch,
    FuncRef,
    FunctionIR,
    Lit,
    Return,
    renumber,
    validate,
)
from ..runtime.builtins import PRIMITIVES, SPECIAL
from . import syntax as S
from .syntax import FrontendError

# builtins available by name in source programs
SOURCE_BUILTINS = {
    "sin": 1, "cos": 1, "exp": 1, "log": 1,
    "cons": 2, "first": 1, "second": 1,
    "box": 1, "get": 1, "set": 2,
    "stack": 0, "push": 2, "pop": 1,
}
VARIADIC_BUILTINS = {"grad"}

_BINOPS = {"+", "-", "*", "/", "^", ">", "<", "=="}


class LowerError(FrontendError):
    pass


class _FnLowering:
    def __init__(self, name, params, body, node, module_fns, out, captures=()):
        self.name = name
        self.node = node
        self.module_fns = module_fns
        self.out = out
        self.lambdas = 0
        self.decls = 0
        self.fb = FunctionBuilder(name, ("self", *params), undefined=UNIT_LIT)
        self.scopes = [{}]
        self.params = params
        self.body = body
        self.captures = captures

    # scopes map a source name to a unique variable key

    def declare(self, name):
        self.decls += 1
        key = (name, self.decls)
        self.scopes[-1][name] = key
        return key

    def resolve(self, name):
        for sc in reversed(self.scopes):
            if name in sc:
                return sc[name]
        return None

    def visible_names(self) -> set:
        out = set()
        for sc in self.scopes:
            out.update(sc)
        return out

    def run(self) -> FunctionIR:
        fb = self.fb
        entry = fb.new_block()
        fb.seal(entry.id)
        self.cur = entry.id
        for p in self.params:
            fb.write(self.declare(p), self.cur, Arg(p))
        if self.captures:
            (env,) = fb.call(self.cur, FuncRef("env"), (Arg("self"),))
            if len(self.captures) == 1:
                fb.write(self.declare(self.captures[0]), self.cur, env)
            else:
                rest = env
                for i, c in enumerate(self.captures):
                    if i == len(self.captures) - 1:
                        v = rest
                    else:
                        (v,) = fb.call(self.cur, FuncRef("first"), (rest,))
                        (rest,) = fb.call(self.cur, FuncRef("second"), (rest,))
                    fb.write(self.declare(c), self.cur, v)
        self.stmts(self.body)
        if self.cur is not None:
            fb.terminate(self.cur, Return((UNIT_LIT,)))
        fb.seal_all()
        f = fb.freeze()
        f = analysis.remove_unreachable(f)
        f = remove_trivial_phis(f)
        f = analysis.merge_returns(f)
        f = renumber(f)
        diags = validate(f)
        if diags:
            raise LowerError(f"internal: lowered {self.name} is invalid: "
                             + "; ".join(map(str, diags)), self.node.line, self.node.col)
        return f

    # statements

    def ensure_block(self):
        if self.cur is None:
            # code after a return: lower into an unreachable block
            b = self.fb.new_block()
            self.fb.seal(b.id)
            self.cur = b.id

    def stmts(self, body):
        for st in body:
            self.stmt(st)

    def scoped(self, body):
        self.scopes.append({})
        try:
            self.stmts(body)
        finally:
            self.scopes.pop()

    def stmt(self, st):
        self.ensure_block()
        fb = self.fb
        if isinstance(st, S.Let):
            v = self.expr(st.value)
            fb.write(self.declare(st.name), self.cur, v)
        elif isinstance(st, S.Assign):
            key = self.resolve(st.name)
            if key is None:
                raise LowerError(f"assignment to undeclared variable {st.name}", st.line, st.col)
            fb.write(key, self.cur, self.expr(st.value))
        elif isinstance(st, S.ReturnStmt):
            v = self.expr(st.value)
            fb.terminate(self.cur, Return((v,)))
            self.cur = None
        elif isinstance(st, S.ExprStmt):
            self.expr(st.value, discard=True)
        elif isinstance(st, S.If):
            self.if_stmt(st)
        elif isinstance(st, S.While):
            self.while_stmt(st)
        else:
            raise LowerError(f"unknown statement {type(st).__name__}", st.line, st.col)

    def if_stmt(self, st):
        fb = self.fb
        c = self.expr(st.cond)
        then = fb.new_block()
        join = fb.new_block()
        other = fb.new_block() if st.orelse is not None else join
        fb.terminate(self.cur, CondBranch(c, then.id, other.id))
        fb.seal(then.id)
        self.cur = then.id
        self.scoped(st.then)
        if self.cur is not None:
            fb.terminate(self.cur, Branch(join.id))
        if st.orelse is not None:
            fb.seal(other.id)
            self.cur = other.id
            self.scoped(st.orelse)
            if self.cur is not None:
                fb.terminate(self.cur, Branch(join.id))
        fb.seal(join.id)
        self.cur = join.id if fb.blocks[join.id].preds else None
        if self.cur is None:
            fb.terminate(join.id, Return((UNIT_LIT,)))

    def while_stmt(self, st):
        fb = self.fb
        header = fb.new_block()
        fb.terminate(self.cur, Branch(header.id))
        self.cur = header.id
        c = self.expr(st.cond)
        cond_end = self.cur
        body = fb.new_block()
        exit_ = fb.new_block()
        fb.terminate(cond_end, CondBranch(c, body.id, exit_.id))
        fb.seal(body.id)
        self.cur = body.id
        self.scoped(st.body)
        if self.cur is not None:
            fb.terminate(self.cur, Branch(header.id))
        fb.seal(header.id)
        fb.seal(exit_.id)
        self.cur = exit_.id

    # expressions

    def call(self, callee, args, discard=False):
        nres = 1
        rs = self.fb.call(self.cur, callee, args, nres)
        return rs[0]

    def expr(self, e, discard=False):
        if isinstance(e, S.Num):
            return Lit(float(e.value))
        if isinstance(e, S.Bool):
            return Lit(e.value)
        if isinstance(e, S.UnitLit):
            return UNIT_LIT
        if isinstance(e, S.Name):
            return self.name_value(e)
        if isinstance(e, S.Unary):
            if e.op == "neg" and isinstance(e.operand, S.Num):
                return Lit(-float(e.operand.value))
            return self.call(FuncRef(e.op), (self.expr(e.operand),))
        if isinstance(e, S.Binary):
            a = self.expr(e.left)
            b = self.expr(e.right)
            return self.call(FuncRef(e.op), (a, b))
        if isinstance(e, S.CallExpr):
            return self.call_expr(e)
        if isinstance(e, S.Lambda):
            return self.lambda_expr(e)
        raise LowerError(f"unknown expression {type(e).__name__}", e.line, e.col)

    def name_value(self, e):
        key = self.resolve(e.id)
        if key is not None:
            return self.fb.read(key, self.cur)
        if e.id in self.module_fns:
            return FuncRef(e.id)
        if e.id in SOURCE_BUILTINS or e.id in VARIADIC_BUILTINS:
            return FuncRef(e.id)
        raise LowerError(f"undefined variable {e.id}", e.line, e.col)

    def call_expr(self, e):
        args_n = len(e.args)
        if isinstance(e.func, S.Name) and self.resolve(e.func.id) is None:
            name = e.func.id
            if name in self.module_fns:
                want = len(self.module_fns[name].params)
                if want != args_n:
                    raise LowerError(f"{name} expects {want} arguments, got {args_n}",
                                     e.line, e.col)
            elif name in SOURCE_BUILTINS:
                want = SOURCE_BUILTINS[name]
                assert PRIMITIVES[name].arity == want
                if want != args_n:
                    raise LowerError(f"{name} expects {want} arguments, got {args_n}",
                                     e.line, e.col)
            elif name in VARIADIC_BUILTINS:
                if args_n < 2:
                    raise LowerError(f"{name} expects a function and at least one argument",
                                     e.line, e.col)
            else:
                raise LowerError(f"undefined function {name}", e.line, e.col)
            callee = FuncRef(name)
        else:
            callee = self.expr(e.func)
        args = tuple(self.expr(a) for a in e.args)
        return self.call(callee, args)

    def lambda_expr(self, e):
        self.lambdas += 1
        lname = f"{self.name}.lambda{self.lambdas}"
        bound = set(e.params)
        free = []
        _free_names(e.body, bound, free)
        visible = self.visible_names()
        caps = [n for n in free if n in visible]
        inner = _FnLowering(lname, e.params, e.body, e, self.module_fns, self.out, tuple(caps))
        self.out.append(inner.run())
        vals = [self.fb.read(self.resolve(n), self.cur) for n in caps]
        if not vals:
            env = UNIT_LIT
        else:
            env = vals[-1]
            for v in reversed(vals[:-1]):
                env = self.call(FuncRef("cons"), (v, env))
        return self.call(FuncRef("closure"), (FuncRef(lname), env))


def _free_names(node, bound: set, out: list):
    """Collect names referenced in ``node`` that are not bound inside it, in
    first-use order."""
    if isinstance(node, list):
        bound = set(bound)
        for st in node:
            _free_names(st, bound, out)
            if isinstance(st, S.Let):
                bound.add(st.name)
        return
    if isinstance(node, S.Name):
        if node.id not in bound and node.id not in out:
            out.append(node.id)
    elif isinstance(node, S.Let):
        _free_names(node.value, bound, out)
    elif isinstance(node, S.Assign):
        if node.name not in bound and node.name not in out:
            out.append(node.name)
        _free_names(node.value, bound, out)
    elif isinstance(node, S.Lambda):
        _free_names(node.body, bound | set(node.params), out)
    elif isinstance(node, S.If):
        _free_names(node.cond, bound, out)
        _free_names(node.then, bound, out)
        if node.orelse is not None:
            _free_names(node.orelse, bound, out)
    elif isinstance(node, S.While):
        _free_names(node.cond, bound, out)
        _free_names(node.body, bound, out)
    elif isinstance(node, (S.ReturnStmt, S.ExprStmt)):
        _free_names(node.value, bound, out)
    elif isinstance(node, S.Binary):
        _free_names(node.left, bound, out)
        _free_names(node.right, bound, out)
    elif isinstance(node, S.Unary):
        _free_names(node.operand, bound, out)
    elif isinstance(node, S.CallExpr):
        _free_names(node.func, bound, out)
        for a in node.args:
            _free_names(a, bound, out)


def lower(module: S.Module) -> list[FunctionIR]:
    """Lower every function of ``module`` (and its closures) to SSA.

    The optional main expression becomes a function named ``main`` with no
    parameters."""
    fns = {f.name: f for f in module.functions}
    for f in module.functions:
        if f.name in PRIMITIVES or f.name in SPECIAL:
            raise LowerError(f"function name {f.name} is reserved for a builtin", f.line, f.col)
    out: list[FunctionIR] = []
    for f in module.functions:
        out.append(_FnLowering(f.name, f.params, f.body, f, fns, out).run())
    if module.main is not None:
        if "main" in fns:
            raise LowerError("main expression conflicts with function main",
                             module.main.line, module.main.col)
        body = [S.ReturnStmt(module.main, line=module.main.line, col=module.main.col)]
        out.append(_FnLowering("main", [], body, module.main, fns, out).run())
    return out


def compile_source(src: str) -> list[FunctionIR]:
    return lower(S.parse(src))
