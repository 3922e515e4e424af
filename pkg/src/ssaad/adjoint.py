"""Adjoint construction: the reversed-CFG program that applies the primal's
pullbacks in reverse and accumulates gradients."""

from __future__ import annotations

from dataclasses import dataclass

from . import analysis
from .builder import (
    FunctionBuilder,
    eliminate_dead,
    remove_trivial_phis,
    substitute,
)
from .ir import (
    ZERO_LIT,
    Alpha,
    Arg,
    Branch,
    Call,
    CondBranch,
    FuncRef,
    FunctionIR,
    Lit,
    Return,
    Var,
    map_operands,
    renumber,
    used_operands,
    validate,
)
from .primal import AdjointMetadata, env_path, instrument
from .runtime.builtins import BUILTIN_NAMES, SPECIAL


class AdjointError(RuntimeError):
    """Internal inconsistency while building an adjoint."""


@dataclass(frozen=True)
class AdjointFunction:
    ir: FunctionIR
    meta: AdjointMetadata
    primal_name: str

    @property
    def name(self) -> str:
        return self.ir.name


def has_hidden_argument(callee) -> bool:
    """Primitive callees return one gradient per argument; everything else
    (IR functions, closures, ``J`` and ``grad``) also returns the gradient of
    itself first."""
    return not (isinstance(callee, FuncRef) and callee.name in BUILTIN_NAMES
                and callee.name not in SPECIAL)


def _key(op):
    if isinstance(op, Var):
        return op.id
    if isinstance(op, Arg):
        return op.name
    return None


def build_adjoint(primal: FunctionIR, meta: AdjointMetadata, name: str | None = None) -> AdjointFunction:
    n = len(primal.blocks)
    g = analysis.cfg(primal)
    if g.exit != n:
        raise AdjointError("primal return block must be last")
    active = meta.active

    def A(b: int) -> int:
        return n + 1 - b

    dys = ("dy",) if meta.n_results == 1 else tuple(f"dy{i + 1}" for i in range(meta.n_results))
    fb = FunctionBuilder(name or primal.name.removesuffix(".primal") + ".adjoint",
                         ("self",) + dys, 1, undefined=ZERO_LIT)
    for _ in range(n):
        fb.new_block()

    # control flow first so that every block's predecessors are known
    edge_src: dict[tuple[int, int], int] = {}  # (adjoint of b, primal pred) -> CFG source block
    dispatch_plan = {}
    for b in range(1, n + 1):
        ps = g.preds[b]
        ab = A(b)
        if not ps:
            continue
        if len(ps) == 1:
            fb.terminate(ab, Branch(A(ps[0])))
            edge_src[(ab, ps[0])] = ab
        elif len(ps) == 2:
            rec = meta.control_records[b]
            fb.terminate(ab, CondBranch(Alpha(rec), A(ps[1]), A(ps[0])))
            edge_src[(ab, ps[0])] = ab
            edge_src[(ab, ps[1])] = ab
        else:
            rec = meta.control_records[b]
            (r,) = fb.call(ab, FuncRef("id"), (Alpha(rec),))
            labels = dict(meta.record_labels[b])
            src = ab
            chain = []
            for i, p in enumerate(ps[:-1]):
                (c,) = fb.call(src, FuncRef("=="), (r, Lit(labels[p])))
                if i == len(ps) - 2:
                    nxt = A(ps[-1])
                else:
                    nxt = fb.new_block().id
                    chain.append(nxt)
                fb.terminate(src, CondBranch(c, A(p), nxt))
                edge_src[(ab, p)] = src
                if i == len(ps) - 2:
                    edge_src[(ab, ps[-1])] = src
                src = nxt
            dispatch_plan[ab] = chain

    # fill blocks in reverse postorder of the adjoint CFG
    succs = {bid: mb.successors() for bid, mb in fb.blocks.items()}
    order = list(reversed(analysis._postorder(succs, A(n))))
    filled: set[int] = set()

    def maybe_seal():
        for bid, mb in fb.blocks.items():
            if not mb.sealed and all(p in filled for p in mb.preds):
                fb.seal(bid)

    def contribute(k, val, blk):
        var = ("g", k)
        cur = fb.read(var, blk)
        if cur == ZERO_LIT:
            fb.write(var, blk, val)
        else:
            (t,) = fb.call(blk, FuncRef("+"), (cur, val))
            fb.write(var, blk, t)

    for ab in order:
        maybe_seal()
        if ab > n:  # dispatch block, nothing to differentiate
            filled.add(ab)
            continue
        b = A(ab)
        blk = primal.block(b)
        if b == n:
            for i, op in enumerate(blk.terminator.operands[: meta.n_results]):
                k = _key(op)
                if k is not None and k in active:
                    contribute(k, Arg(dys[i]), ab)
        for ins in reversed(blk.body):
            if not (isinstance(ins, Call) and ins.j):
                continue
            pb = ins.results[-1]
            outs = ins.results[:-1]
            gys = [fb.read(("g", r), ab) if r is not None and r in active else ZERO_LIT
                   for r in outs]
            targets = ([ins.callee] if has_hidden_argument(ins.callee) else []) + list(ins.args)
            rids = tuple(fb.fresh() if _key(t) is not None and _key(t) in active else None
                         for t in targets)
            fb.emit(ab, Call(rids, Alpha(pb), tuple(gys)))
            for r in outs:
                if r is not None and r in active:
                    fb.write(("g", r), ab, ZERO_LIT)
            for t, rid in zip(targets, rids):
                if rid is not None:
                    contribute(_key(t), Var(rid), ab)
        phis = [p for p in blk.phis if p.result in active]
        grads = []
        for ph in reversed(phis):
            grads.append((ph, fb.read(("g", ph.result), ab)))
            fb.write(("g", ph.result), ab, ZERO_LIT)
        for ph, gv in grads:
            if gv == ZERO_LIT:
                continue
            for p, op in ph.incomings:
                k = _key(op)
                if k is None or k not in active:
                    continue
                var = ("g", k)
                src = edge_src[(ab, p)]
                cur = fb.edge_value(var, src, A(p))
                if cur is None:
                    cur = fb.read(var, ab)
                if cur == ZERO_LIT:
                    new = gv
                else:
                    (new,) = fb.call(ab, FuncRef("+"), (cur, gv))
                fb.write_edge(var, src, A(p), new)
        if b == 1:
            rets = tuple(fb.read(("g", p), ab) if p in active else ZERO_LIT
                         for p in primal.params)
            fb.terminate(ab, Return(rets))
        filled.add(ab)
    maybe_seal()
    fb.seal_all()
    adj = cleanup(fb.freeze())
    if dispatch_plan:
        # dispatch blocks were appended after the return block
        adj = analysis.merge_returns(adj)
    diags = validate(adj)
    if diags:
        raise AdjointError(f"invalid adjoint for {primal.name}: " + "; ".join(map(str, diags)))
    return AdjointFunction(adj, meta, primal.name)


def cleanup(f: FunctionIR) -> FunctionIR:
    """Fold trivial phis and additions of zero, drop unused gradient sums."""
    while True:
        f = remove_trivial_phis(f)
        subst = {}
        for b in f.blocks:
            for ins in b.body:
                if (isinstance(ins, Call) and not ins.j and ins.callee == FuncRef("+")
                        and len(ins.results) == 1):
                    a, c = ins.args
                    if a == ZERO_LIT:
                        subst[ins.results[0]] = c
                    elif c == ZERO_LIT:
                        subst[ins.results[0]] = a
        if not subst:
            break
        f = substitute(f, subst)
        f = eliminate_dead(f, {"+"})
    f = eliminate_dead(f, {"+", "id"})
    return renumber(f)


def expand_alphas(f: FunctionIR, meta: AdjointMetadata) -> FunctionIR:
    """Replace alpha operands with explicit environment reads and pops so the
    adjoint can itself be differentiated."""
    fb = FunctionBuilder.from_function(f)

    def lower(bid, op, out):
        if not isinstance(op, Alpha):
            return op
        (cur,) = _emit(fb, out, FuncRef("env"), (Arg("self"),))
        for step in env_path(meta.layout, op.id):
            (cur,) = _emit(fb, out, FuncRef(step), (cur,))
        if op.id in meta.stacks:
            (cur,) = _emit(fb, out, FuncRef("pop"), (cur,))
        return cur

    for bid, mb in fb.blocks.items():
        body = []
        for ins in mb.body:
            ins = map_operands(ins, lambda op: lower(bid, op, body))
            body.append(ins)
        t = map_operands(mb.term, lambda op: lower(bid, op, body))
        mb.body = body
        mb.term = t
    return fb.freeze()


def _emit(fb, out, callee, args):
    r = fb.fresh()
    out.append(Call((r,), callee, tuple(args)))
    return [Var(r)]


def has_alphas(f: FunctionIR) -> bool:
    return any(isinstance(op, Alpha) for _, ins in f.instructions() for op in used_operands(ins))


def prepare(f: FunctionIR) -> FunctionIR:
    return analysis.merge_returns(analysis.remove_unreachable(f))


def differentiate(f: FunctionIR, meta_of_adjoint: AdjointMetadata | None = None):
    """Transform ``f`` into its primal and adjoint.

    ``meta_of_adjoint`` must be supplied when ``f`` is itself an adjoint that
    still contains alpha operands.
    """
    if has_alphas(f):
        if meta_of_adjoint is None:
            raise AdjointError(f"{f.name} contains alpha references but no layout was given")
        f = expand_alphas(f, meta_of_adjoint)
    g = prepare(f)
    primal, meta = instrument(g)
    adj = build_adjoint(primal, meta, name=f.name + ".adjoint")
    return primal, adj
