"""Primal instrumentation: wrap calls in ``J``, record control flow, and
capture what the adjoint needs (pullbacks and control records)."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import analysis
from .builder import FunctionBuilder, remove_trivial_phis
from .ir import (
    UNIT_LIT,
    Arg,
    Call,
    FuncRef,
    FunctionIR,
    Lit,
    Phi,
    Return,
    Var,
    predecessors,
    renumber,
)
from .runtime.builtins import PRIMITIVES, SPECIAL


class InstrumentError(ValueError):
    pass


@dataclass
class AdjointMetadata:
    pullback_ids: dict = field(default_factory=dict)     # pullback id -> J-call results
    control_records: dict = field(default_factory=dict)  # block id -> record value id
    alpha_slots: dict = field(default_factory=dict)      # value id -> "stack" | "direct"
    stacks: dict = field(default_factory=dict)           # value id -> stack value id
    layout: tuple = ()                                   # env order of alpha slots
    record_labels: dict = field(default_factory=dict)    # block -> [(pred, label)]
    active: frozenset = frozenset()                      # values that carry gradients
    return_block: int = 0
    n_results: int = 1

    @property
    def has_stacks(self) -> bool:
        return bool(self.stacks)


def callee_kind(call: Call) -> tuple[bool, bool]:
    """(differentiable, effectful) for a call site."""
    c = call.callee
    if isinstance(c, FuncRef):
        if c.name in SPECIAL:
            return True, True
        p = PRIMITIVES.get(c.name)
        if p is not None:
            return p.differentiable, p.effectful
    # user functions and closure values may touch boxes
    return True, True


def is_differentiated(call: Call) -> bool:
    return call.j or callee_kind(call)[0]


def _key(op):
    if isinstance(op, Var):
        return op.id
    if isinstance(op, Arg):
        return op.name
    return None


def active_values(f: FunctionIR) -> set:
    """Values whose gradient can matter: those that flow, through
    differentiable operations, into a returned value or an effectful call."""
    defs = {}
    work = []
    for b in f.blocks:
        for p in b.phis:
            defs[p.result] = p
        for ins in b.body:
            if isinstance(ins, Call):
                for r in ins.results:
                    if r is not None:
                        defs[r] = ins
                if is_differentiated(ins) and (ins.j or callee_kind(ins)[1]):
                    work.extend(_key(a) for a in (ins.callee, *ins.args))
        if isinstance(b.terminator, Return):
            work.extend(_key(op) for op in b.terminator.operands)
    active = set()
    while work:
        k = work.pop()
        if k is None or k in active:
            continue
        active.add(k)
        d = defs.get(k)
        if isinstance(d, Phi):
            work.extend(_key(op) for _, op in d.incomings)
        elif isinstance(d, Call) and is_differentiated(d):
            work.extend(_key(a) for a in (d.callee, *d.args))
    return active


def instrument(f: FunctionIR) -> tuple[FunctionIR, AdjointMetadata]:
    g = analysis.cfg(f)
    if g.exit is None or g.exit != len(f.blocks):
        raise InstrumentError(f"{f.name}: returns must be merged into the last block")
    active = active_values(f)
    preds = predecessors(f)

    # 1. wrap calls, add control records
    fb = FunctionBuilder.from_function(f)
    record_labels = {}
    for bid, mb in fb.blocks.items():
        if len(preds[bid]) >= 2:
            ps = preds[bid]
            if len(ps) == 2:
                labels = [(ps[0], False), (ps[1], True)]
            else:
                labels = [(p, float(p)) for p in ps]
            record_labels[bid] = labels
            mb.phis.insert(0, [fb.fresh(), {p: Lit(v) for p, v in labels}])
        body = []
        for ins in mb.body:
            if isinstance(ins, Call) and not ins.j:
                diff, effectful = callee_kind(ins)
                wanted = effectful or any(r in active for r in ins.results if r is not None)
                if diff and wanted:
                    ins = Call(ins.results + (fb.fresh(),), ins.callee, ins.args, True)
            elif isinstance(ins, Call) and ins.j:
                # a J call being differentiated again becomes J(J, f, ...)
                ins = Call(ins.results + (fb.fresh(),), FuncRef("J"), (ins.callee, *ins.args), True)
            body.append(ins)
        mb.body = body
    wrapped = renumber(remove_trivial_phis(fb.freeze()))
    active = active_values(wrapped)

    meta = AdjointMetadata(record_labels=record_labels, active=frozenset(active),
                           return_block=g.exit,
                           n_results=len(f.block(g.exit).terminator.operands))
    cyclic = analysis.cyclic_blocks(analysis.cfg(wrapped))
    def_block = {}
    for b in wrapped.blocks:
        if b.id in record_labels:
            rec = b.phis[0].result
            meta.control_records[b.id] = rec
            def_block[rec] = b.id
        for ins in b.body:
            if isinstance(ins, Call) and ins.j:
                pb = ins.results[-1]
                meta.pullback_ids[pb] = ins.results[:-1]
                def_block[pb] = b.id
    for v, bid in def_block.items():
        meta.alpha_slots[v] = "stack" if bid in cyclic else "direct"
    meta.layout = tuple(sorted(meta.alpha_slots))

    # 2. stacks, pushes and the captured environment
    fb = FunctionBuilder.from_function(wrapped)
    fb.undefined = UNIT_LIT
    entry = fb.blocks[1]
    new_entry = []
    for v in meta.layout:
        if meta.alpha_slots[v] == "stack":
            s = fb.fresh()
            meta.stacks[v] = s
            new_entry.append(Call((s,), FuncRef("stack"), ()))
    entry.body = new_entry + entry.body
    for bid, mb in fb.blocks.items():
        body = []
        rec = meta.control_records.get(bid)
        if rec in meta.stacks:
            body.append(Call((), FuncRef("push"), (Var(meta.stacks[rec]), Var(rec))))
        for ins in mb.body:
            body.append(ins)
            if isinstance(ins, Call) and ins.j and ins.results[-1] in meta.stacks:
                pb = ins.results[-1]
                body.append(Call((), FuncRef("push"), (Var(meta.stacks[pb]), Var(pb))))
        mb.body = body

    exit_id = g.exit
    slot_values = []
    for v in meta.layout:
        if v in meta.stacks:
            slot_values.append(Var(meta.stacks[v]))
            continue
        d = def_block[v]
        fb.write(("alpha", v), d, Var(v))
        if d != 1:
            fb.write(("alpha", v), 1, UNIT_LIT)
        slot_values.append(fb.read(("alpha", v), exit_id))
    env = _build_env(fb, exit_id, slot_values)
    ret = fb.blocks[exit_id].term
    fb.blocks[exit_id].term = Return(tuple(ret.operands) + (env,))
    primal = remove_trivial_phis(fb.freeze())
    primal = FunctionIR(f.name + ".primal", primal.params, primal.blocks)
    return primal, meta


def _build_env(fb: FunctionBuilder, bid: int, values: list):
    if not values:
        return UNIT_LIT
    acc = values[-1]
    for v in reversed(values[:-1]):
        (acc,) = fb.call(bid, FuncRef("cons"), (v, acc))
    return acc


def env_path(layout: tuple, v: int) -> list[str]:
    """Accessor chain (``first``/``second``) reaching slot ``v`` in the env."""
    k = len(layout)
    i = layout.index(v)
    if k == 1:
        return []
    path = ["second"] * i
    if i < k - 1:
        path.append("first")
    return path
