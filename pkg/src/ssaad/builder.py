"""Mutable function construction with on-the-fly SSA variable resolution.

Variables are resolved per block with phi placement through predecessors, in
the style of single-pass construction over sealed blocks: a block is sealed
once all its predecessors are known, and reads in unsealed blocks create
incomplete phis that are filled in on sealing.  Trivial phis are removed when
the function is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import (
    ZERO_LIT,
    BasicBlock,
    Branch,
    Call,
    CondBranch,
    Const,
    FuncRef,
    FunctionIR,
    Phi,
    Var,
    defined_ids,
    map_operands,
    used_operands,
)


@dataclass
class MBlock:
    id: int
    phis: list = field(default_factory=list)  # [result, {pred: operand}]
    body: list = field(default_factory=list)
    term: object = None
    preds: list = field(default_factory=list)
    sealed: bool = False

    def successors(self) -> list[int]:
        t = self.term
        if isinstance(t, Branch):
            return [t.target]
        if isinstance(t, CondBranch):
            return [t.then, t.else_]
        return []


class FunctionBuilder:
    def __init__(self, name: str, params, first_value: int = 1, undefined=None):
        self.name = name
        self.params = tuple(params)
        self.blocks: dict[int, MBlock] = {}
        self.next_value = first_value
        self.defs: dict[int, dict] = {}  # block -> {var: operand}
        self.edge_defs: dict[tuple[int, int], dict] = {}
        self.incomplete: dict[int, dict] = {}
        self.phi_var: dict[int, object] = {}  # phi result -> variable
        # value used when a variable is read where it was never written
        self.undefined = undefined

    # -- structure ---------------------------------------------------------

    @classmethod
    def from_function(cls, f: FunctionIR) -> "FunctionBuilder":
        fb = cls(f.name, f.params, f.max_value_id() + 1)
        for b in f.blocks:
            mb = fb.new_block(b.id)
            mb.phis = [[p.result, dict(p.incomings)] for p in b.phis]
            mb.body = list(b.body)
            mb.term = b.terminator
        fb.recompute_preds()
        for mb in fb.blocks.values():
            mb.sealed = True
        return fb

    def new_block(self, bid: int | None = None) -> MBlock:
        if bid is None:
            bid = max(self.blocks, default=0) + 1
        mb = MBlock(bid)
        self.blocks[bid] = mb
        self.defs[bid] = {}
        return mb

    def fresh(self) -> int:
        v = self.next_value
        self.next_value += 1
        return v

    def add_edge(self, src: int, dst: int):
        if src not in self.blocks[dst].preds:
            self.blocks[dst].preds.append(src)

    def recompute_preds(self):
        for mb in self.blocks.values():
            mb.preds = []
        for bid in sorted(self.blocks):
            for s in self.blocks[bid].successors():
                self.add_edge(bid, s)

    def emit(self, bid: int, ins):
        self.blocks[bid].body.append(ins)
        return ins

    def call(self, bid: int, callee, args, nres: int = 1, j: bool = False):
        rs = tuple(self.fresh() for _ in range(nres))
        self.emit(bid, Call(rs, callee, tuple(args), j))
        return [Var(r) for r in rs]

    def terminate(self, bid: int, term):
        mb = self.blocks[bid]
        mb.term = term
        if isinstance(term, Branch):
            self.add_edge(bid, term.target)
        elif isinstance(term, CondBranch):
            self.add_edge(bid, term.then)
            self.add_edge(bid, term.else_)

    # -- variables ---------------------------------------------------------

    def write(self, var, bid: int, value):
        self.defs[bid][var] = value

    def write_edge(self, var, src: int, dst: int, value):
        self.edge_defs.setdefault((src, dst), {})[var] = value

    def edge_value(self, var, src: int, dst: int):
        d = self.edge_defs.get((src, dst))
        if d is not None and var in d:
            return d[var]
        return None

    def read(self, var, bid: int):
        d = self.defs[bid]
        if var in d:
            return d[var]
        return self._read_recursive(var, bid)

    def _read_pred(self, var, pred: int, bid: int):
        v = self.edge_value(var, pred, bid)
        return v if v is not None else self.read(var, pred)

    def _new_phi(self, var, bid: int):
        r = self.fresh()
        self.blocks[bid].phis.append([r, {}])
        self.phi_var[r] = var
        return r

    def _read_recursive(self, var, bid: int):
        mb = self.blocks[bid]
        if not mb.sealed:
            r = self._new_phi(var, bid)
            self.incomplete.setdefault(bid, {})[var] = r
            val = Var(r)
        elif not mb.preds:
            val = self.undefined
            if val is None:
                raise KeyError(var)
        elif len(mb.preds) == 1 and self.edge_value(var, mb.preds[0], bid) is None:
            val = self.read(var, mb.preds[0])
        else:
            r = self._new_phi(var, bid)
            self.write(var, bid, Var(r))
            self._fill_phi(var, bid, r)
            val = Var(r)
        self.write(var, bid, val)
        return val

    def _fill_phi(self, var, bid: int, r: int):
        phi = next(p for p in self.blocks[bid].phis if p[0] == r)
        for pred in self.blocks[bid].preds:
            phi[1][pred] = self._read_pred(var, pred, bid)

    def seal(self, bid: int):
        mb = self.blocks[bid]
        if mb.sealed:
            return
        mb.sealed = True
        for var, r in self.incomplete.pop(bid, {}).items():
            self._fill_phi(var, bid, r)

    def seal_all(self):
        for bid in sorted(self.blocks):
            self.seal(bid)

    # -- finishing ---------------------------------------------------------

    def freeze(self) -> FunctionIR:
        blocks = []
        for bid in sorted(self.blocks):
            mb = self.blocks[bid]
            if mb.term is None:
                raise ValueError(f"block #{bid} of {self.name} has no terminator")
            phis = tuple(Phi(r, tuple(sorted(inc.items()))) for r, inc in mb.phis)
            blocks.append(BasicBlock(bid, phis, tuple(mb.body), mb.term))
        return FunctionIR(self.name, self.params, tuple(blocks))


# ---------------------------------------------------------------------------
# Cleanup passes over frozen functions


def substitute(f: FunctionIR, subst: dict) -> FunctionIR:
    """Replace uses of values per ``subst`` (Var id -> operand), transitively."""

    def resolve(op):
        seen = 0
        while isinstance(op, Var) and op.id in subst:
            op = subst[op.id]
            seen += 1
            if seen > 10_000:
                raise RuntimeError("substitution cycle")
        return op

    blocks = tuple(
        BasicBlock(b.id, tuple(map_operands(p, resolve) for p in b.phis),
                   tuple(map_operands(i, resolve) for i in b.body),
                   map_operands(b.terminator, resolve))
        for b in f.blocks)
    return FunctionIR(f.name, f.params, blocks)


def remove_trivial_phis(f: FunctionIR) -> FunctionIR:
    """Drop phis whose incomings, ignoring self references, are all equal."""
    while True:
        subst = {}
        for b in f.blocks:
            for p in b.phis:
                ops = {op for _, op in p.incomings if op != Var(p.result)}
                if len(ops) <= 1:
                    subst[p.result] = ops.pop() if ops else ZERO_LIT
        if not subst:
            return f
        f = substitute(f, subst)
        f = _drop_defs(f, set(subst))


def _drop_defs(f: FunctionIR, dead: set) -> FunctionIR:
    blocks = []
    for b in f.blocks:
        phis = tuple(p for p in b.phis if p.result not in dead)
        body = tuple(i for i in b.body
                     if not (defined_ids(i) and set(defined_ids(i)) <= dead
                             and not any(r is None for r in getattr(i, "results", ()))))
        blocks.append(BasicBlock(b.id, phis, body, b.terminator))
    return FunctionIR(f.name, f.params, tuple(blocks))


def eliminate_dead(f: FunctionIR, pure_callees: set) -> FunctionIR:
    """Remove unused phis, constants and calls to ``pure_callees``."""
    while True:
        used = set()
        for _, ins in f.instructions():
            for op in used_operands(ins):
                if isinstance(op, Var):
                    used.add(op.id)
        dead = set()
        for b in f.blocks:
            for p in b.phis:
                if p.result not in used:
                    dead.add(p.result)
            for ins in b.body:
                if isinstance(ins, Const) and ins.result not in used:
                    dead.add(ins.result)
                if (isinstance(ins, Call) and not ins.j and isinstance(ins.callee, FuncRef)
                        and ins.callee.name in pure_callees and ins.results
                        and all(r is not None and r not in used for r in ins.results)):
                    dead.update(ins.results)
        if not dead:
            return f
        f = _drop_defs(f, dead)
