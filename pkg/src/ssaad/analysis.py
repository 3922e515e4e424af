"""CFG construction, dominators, return merging, CFG reversal and the
reaching-gradient dataflow used to plan adjoint phi/zero placement."""

from __future__ import annotations

from dataclasses import dataclass, field

from .builder import FunctionBuilder, remove_trivial_phis
from .ir import (
    Arg,
    BasicBlock,
    Branch,
    Call,
    CondBranch,
    FunctionIR,
    Phi,
    Return,
    Var,
    renumber,
)


class CfgError(ValueError):
    pass


@dataclass(frozen=True)
class Cfg:
    succs: dict
    preds: dict
    entry: int
    exit: int | None = None

    @property
    def blocks(self) -> list[int]:
        return sorted(self.succs)

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a, ss in self.succs.items() for b in ss)

    def dump(self) -> str:
        return "\n".join(f"#{a} -> #{b}" for a, b in self.edges())


def cfg(f: FunctionIR) -> Cfg:
    succs = {b.id: list(dict.fromkeys(b.successors())) for b in f.blocks}
    preds: dict[int, list[int]] = {b.id: [] for b in f.blocks}
    for a in sorted(succs):
        for s in succs[a]:
            preds[s].append(a)
    rets = f.return_blocks()
    return Cfg(succs, preds, 1, rets[0] if len(rets) == 1 else None)


def _reachable(succs: dict, entry: int) -> set[int]:
    seen = {entry}
    stack = [entry]
    while stack:
        for s in succs[stack.pop()]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def reachable_blocks(f: FunctionIR) -> set[int]:
    return _reachable(cfg(f).succs, 1)


def _postorder(succs: dict, entry: int) -> list[int]:
    out, seen = [], set()
    stack = [(entry, iter(succs[entry]))]
    seen.add(entry)
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            stack.pop()
            out.append(node)
        elif nxt not in seen:
            seen.add(nxt)
            stack.append((nxt, iter(succs[nxt])))
    return out


def dominator_sets(g: Cfg) -> dict[int, set[int]]:
    """Full dominator sets by iterative dataflow in reverse postorder."""
    reach = _reachable(g.succs, g.entry)
    missing = set(g.succs) - reach
    if missing:
        raise CfgError(f"unreachable blocks: {sorted(missing)}")
    order = list(reversed(_postorder(g.succs, g.entry)))
    dom = {b: set(order) for b in order}
    dom[g.entry] = {g.entry}
    changed = True
    while changed:
        changed = False
        for b in order:
            if b == g.entry:
                continue
            ps = [dom[p] for p in g.preds[b]]
            new = set.intersection(*ps) | {b} if ps else {b}
            if new != dom[b]:
                dom[b] = new
                changed = True
    return dom


def dominators(g: Cfg) -> dict[int, int | None]:
    """Immediate dominator of each block (``None`` for the entry)."""
    dom = dominator_sets(g)
    idom: dict[int, int | None] = {}
    for b, ds in dom.items():
        strict = ds - {b}
        # the immediate dominator is the strict dominator dominated by all others
        idom[b] = next((d for d in strict if all(o in dom[d] for o in strict)), None)
    return idom


def dominators_of(f: FunctionIR) -> dict[int, set[int]]:
    return dominator_sets(cfg(f))


def postdominator_sets(g: Cfg) -> dict[int, set[int]]:
    if g.exit is None:
        raise CfgError("post-dominators need a single return block")
    return dominator_sets(reverse_cfg(g))


def reverse_cfg(g: Cfg) -> Cfg:
    if g.exit is None:
        raise CfgError("CFG reversal requires exactly one return block")
    succs = {b: list(ps) for b, ps in g.preds.items()}
    preds = {b: list(ss) for b, ss in g.succs.items()}
    return Cfg(succs, preds, g.exit, g.entry)


def cyclic_blocks(g: Cfg) -> set[int]:
    """Blocks that lie on some CFG cycle, i.e. may execute more than once."""
    out = set()
    for b in g.succs:
        if b in {x for s in g.succs[b] for x in _reachable(g.succs, s)}:
            out.add(b)
    return out


# ---------------------------------------------------------------------------
# Unreachable-block removal and return merging


def remove_unreachable(f: FunctionIR) -> FunctionIR:
    keep = reachable_blocks(f)
    if len(keep) == len(f.blocks):
        return f
    order = [b.id for b in f.blocks if b.id in keep]
    return _relabel(f, order, drop=set(b.id for b in f.blocks) - keep)


def _relabel(f: FunctionIR, order: list[int], drop=frozenset()) -> FunctionIR:
    new = {old: i for i, old in enumerate(order, 1)}

    def term(t):
        if isinstance(t, Branch):
            return Branch(new[t.target])
        if isinstance(t, CondBranch):
            return CondBranch(t.cond, new[t.then], new[t.else_])
        return t

    by_id = {b.id: b for b in f.blocks}
    blocks = []
    for old in order:
        b = by_id[old]
        phis = tuple(Phi(p.result, tuple(sorted((new[s], op) for s, op in p.incomings
                                               if s not in drop)))
                     for p in b.phis)
        blocks.append(BasicBlock(new[old], phis, b.body, term(b.terminator)))
    return FunctionIR(f.name, f.params, tuple(blocks))


def merge_returns(f: FunctionIR) -> FunctionIR:
    """Route all returns into one exit block, numbered last.

    Blocks that consist of nothing but a ``return`` are folded into the exit:
    their predecessors jump to the exit directly and the returned operands
    become incomings of the exit phis.  A function that already has a single
    return in its last block is returned unchanged.
    """
    rets = f.return_blocks()
    if len(rets) == 1:
        if rets[0] == len(f.blocks):
            return f
        order = [b.id for b in f.blocks if b.id != rets[0]] + [rets[0]]
        return _relabel(f, order)
    if not rets:
        raise CfgError(f"{f.name} has no return")
    arity = {len(f.block(r).terminator.operands) for r in rets}
    if len(arity) != 1:
        raise CfgError(f"{f.name} returns differing numbers of values")
    (k,) = arity

    fb = FunctionBuilder.from_function(f)
    exit_id = max(fb.blocks) + 1
    exit_block = fb.new_block(exit_id)
    incoming: list[tuple[int, tuple]] = []
    folded: set[int] = set()

    for r in rets:
        mb = fb.blocks[r]
        ops = mb.term.operands
        trivial = not mb.phis and not mb.body and r != 1 and mb.preds
        if trivial:
            redirect_ok = all(
                not (isinstance(fb.blocks[p].term, CondBranch)
                     and exit_id in (fb.blocks[p].term.then, fb.blocks[p].term.else_))
                and not isinstance(fb.blocks[p].term, Return)
                for p in mb.preds)
            trivial = redirect_ok
        if trivial:
            for p in list(mb.preds):
                pt = fb.blocks[p].term
                if isinstance(pt, Branch):
                    fb.blocks[p].term = Branch(exit_id)
                else:
                    fb.blocks[p].term = CondBranch(
                        pt.cond,
                        exit_id if pt.then == r else pt.then,
                        exit_id if pt.else_ == r else pt.else_)
                incoming.append((p, ops))
            folded.add(r)
        else:
            mb.term = Branch(exit_id)
            incoming.append((r, ops))

    phis = []
    results = []
    for i in range(k):
        rid = fb.fresh()
        phis.append([rid, {p: ops[i] for p, ops in incoming}])
        results.append(Var(rid))
    exit_block.phis = phis
    exit_block.term = Return(tuple(results))
    for bid in folded:
        del fb.blocks[bid]
    out = fb.freeze()
    order = [b.id for b in out.blocks]
    out = _relabel(out, order)
    out = remove_trivial_phis(out)
    return renumber(out)


# ---------------------------------------------------------------------------
# Reaching gradients

NONE = "none"


@dataclass(frozen=True)
class Reach:
    kind: str  # "none" | "single" | "merged"
    sources: frozenset


@dataclass
class ReachingGradients:
    """Per value and adjoint block: which gradient contributions may arrive.

    Blocks are named by their primal block id (the adjoint block mirrors it).
    ``states[(value, block)]`` describes the gradient entering that block's
    adjoint.  ``phi_blocks`` lists adjoint join points where contributions
    from different paths meet, and ``zero_inits`` lists (value, join, pred)
    where a path without any contribution enters a join and must supply 0.
    """

    states: dict = field(default_factory=dict)
    phi_blocks: set = field(default_factory=set)
    zero_inits: set = field(default_factory=set)
    contributions: dict = field(default_factory=dict)  # value -> set of blocks
    def_block: dict = field(default_factory=dict)

    def at(self, value, block) -> Reach:
        return self.states[(value, block)]


def _classify(s: frozenset) -> Reach:
    srcs = frozenset(x for x in s if x != NONE)
    if not srcs:
        return Reach("none", frozenset())
    if len(srcs) == 1 and NONE not in s:
        return Reach("single", srcs)
    return Reach("merged", srcs)


def _value_key(op):
    if isinstance(op, Var):
        return op.id
    if isinstance(op, Arg):
        return op.name
    return None


def reaching_gradients(f: FunctionIR, differentiable=None) -> ReachingGradients:
    """Reversed dataflow over the primal CFG.

    ``differentiable(call)`` decides whether a call's arguments receive
    gradient contributions (default: every call).  Phi incomings count as a
    contribution at the end of the incoming block.
    """
    g = cfg(f)
    if g.exit is None:
        raise CfgError("reaching gradients need a merged-return function")
    if differentiable is None:
        differentiable = lambda call: True  # noqa: E731

    uses: dict = {}    # block -> set(values) used differentiably in the block
    edge_uses: dict = {}  # (pred, block) -> set(values) via phi incomings
    defs: dict = {}    # value -> block
    for p in f.params:
        defs[p] = 1
    for b in f.blocks:
        uses[b.id] = set()
        for ph in b.phis:
            defs[ph.result] = b.id
            for src, op in ph.incomings:
                k = _value_key(op)
                if k is not None:
                    edge_uses.setdefault((src, b.id), set()).add(k)
        for ins in b.body:
            for r in getattr(ins, "results", ()) or ():
                if r is not None:
                    defs[r] = b.id
            if hasattr(ins, "result"):
                defs[ins.result] = b.id
            if isinstance(ins, Call) and differentiable(ins):
                for a in (ins.callee, *ins.args):
                    k = _value_key(a)
                    if k is not None:
                        uses[b.id].add(k)
        t = b.terminator
        if isinstance(t, Return):
            for op in t.operands:
                k = _value_key(op)
                if k is not None:
                    uses[b.id].add(k)

    rg = ReachingGradients(def_block=dict(defs))
    for v in defs:
        contrib = {b for b, us in uses.items() if v in us}
        contrib |= {p for (p, _), us in edge_uses.items() if v in us}
        rg.contributions[v] = contrib

    order = list(reversed(_postorder(reverse_cfg(g).succs, g.exit)))
    for v, dblock in defs.items():
        if not rg.contributions[v]:
            continue
        in_state = {b: frozenset() for b in g.succs}
        out_state = {b: frozenset() for b in g.succs}
        in_state[g.exit] = frozenset([NONE])
        changed = True
        while changed:
            changed = False
            for b in order:
                if b != g.exit:
                    acc = set()
                    for s in g.succs[b]:
                        st = set(out_state[s])
                        if v in edge_uses.get((b, s), ()):
                            st = (st - {NONE}) | {b}
                        acc |= st
                    new_in = frozenset(acc)
                    if new_in != in_state[b]:
                        in_state[b] = new_in
                        changed = True
                st = set(in_state[b])
                if v in uses[b]:
                    st = (st - {NONE}) | {b}
                if dblock == b:
                    st = {NONE}
                new_out = frozenset(st)
                if new_out != out_state[b]:
                    out_state[b] = new_out
                    changed = True
        for b in g.succs:
            rg.states[(v, b)] = _classify(in_state[b])
            succ = g.succs[b]
            if len(succ) >= 2:
                incoming = []
                for s in succ:
                    st = set(out_state[s])
                    if v in edge_uses.get((b, s), ()):
                        st = (st - {NONE}) | {b}
                    incoming.append((s, frozenset(st)))
                if len({st for _, st in incoming}) > 1 and any(st - {NONE} for _, st in incoming):
                    rg.phi_blocks.add((v, b))
                    for s, st in incoming:
                        if st <= {NONE}:
                            rg.zero_inits.add((v, b, s))
    return rg
