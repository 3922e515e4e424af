"""SSA program representation, textual format and well-formedness checks.

A function is a list of basic blocks.  Block ``#1`` is the entry block.  Each
block holds phi nodes, a straight-line body of calls/constants and exactly one
terminator.  Values are numbered ``%1, %2, ...`` and defined exactly once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Union


class ZeroType:
    """The structural additive identity used for gradients."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Zero"

    def __reduce__(self):
        return (ZeroType, ())


ZERO = ZeroType()


class Unit:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "unit"


UNIT = Unit()


# ---------------------------------------------------------------------------
# Operands


@dataclass(frozen=True)
class Var:
    id: int


@dataclass(frozen=True, eq=False)
class Lit:
    value: object  # float | bool | UNIT | ZERO

    def _key(self):
        return (type(self.value).__name__, format_literal(self.value))

    def __eq__(self, other):
        return isinstance(other, Lit) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


@dataclass(frozen=True)
class Arg:
    name: str


@dataclass(frozen=True)
class FuncRef:
    name: str


@dataclass(frozen=True)
class Alpha:
    """Adjoint-side reference to a primal value of the matching iteration."""

    id: int


Operand = Union[Var, Lit, Arg, FuncRef, Alpha]

ZERO_LIT = Lit(ZERO)
UNIT_LIT = Lit(UNIT)


# ---------------------------------------------------------------------------
# Instructions


@dataclass(frozen=True)
class Const:
    result: int
    value: object


@dataclass(frozen=True)
class Call:
    results: tuple  # ValueIds; None marks a discarded result
    callee: Operand
    args: tuple
    j: bool = False


@dataclass(frozen=True)
class Phi:
    result: int
    incomings: tuple  # ((block id, operand), ...)


@dataclass(frozen=True)
class Branch:
    target: int


@dataclass(frozen=True)
class CondBranch:
    cond: Operand
    then: int
    else_: int


@dataclass(frozen=True)
class Return:
    operands: tuple


Terminator = Union[Branch, CondBranch, Return]
Instruction = Union[Const, Call, Phi, Branch, CondBranch, Return]


@dataclass(frozen=True)
class BasicBlock:
    id: int
    phis: tuple
    body: tuple
    terminator: Terminator

    def successors(self) -> list[int]:
        t = self.terminator
        if isinstance(t, Branch):
            return [t.target]
        if isinstance(t, CondBranch):
            return [t.then, t.else_]
        return []


@dataclass(frozen=True)
class FunctionIR:
    name: str
    params: tuple  # params[0] is the hidden self/environment slot
    blocks: tuple

    def block(self, bid: int) -> BasicBlock:
        return self.blocks[bid - 1]

    @property
    def entry(self) -> BasicBlock:
        return self.blocks[0]

    def return_blocks(self) -> list[int]:
        return [b.id for b in self.blocks if isinstance(b.terminator, Return)]

    def instructions(self) -> Iterator[tuple[int, Instruction]]:
        for b in self.blocks:
            for p in b.phis:
                yield b.id, p
            for ins in b.body:
                yield b.id, ins
            yield b.id, b.terminator

    def instruction_count(self) -> int:
        return sum(1 for _ in self.instructions())

    def max_value_id(self) -> int:
        top = 0
        for _, ins in self.instructions():
            for r in defined_ids(ins):
                top = max(top, r)
        return top


def defined_ids(ins: Instruction) -> list[int]:
    if isinstance(ins, (Const, Phi)):
        return [ins.result]
    if isinstance(ins, Call):
        return [r for r in ins.results if r is not None]
    return []


def used_operands(ins: Instruction) -> list[Operand]:
    if isinstance(ins, Call):
        return [ins.callee, *ins.args]
    if isinstance(ins, Phi):
        return [op for _, op in ins.incomings]
    if isinstance(ins, CondBranch):
        return [ins.cond]
    if isinstance(ins, Return):
        return list(ins.operands)
    return []


def map_operands(ins: Instruction, fn) -> Instruction:
    """Rebuild ``ins`` with every operand passed through ``fn``."""
    if isinstance(ins, Call):
        return Call(ins.results, fn(ins.callee), tuple(fn(a) for a in ins.args), ins.j)
    if isinstance(ins, Phi):
        return Phi(ins.result, tuple((p, fn(op)) for p, op in ins.incomings))
    if isinstance(ins, CondBranch):
        return CondBranch(fn(ins.cond), ins.then, ins.else_)
    if isinstance(ins, Return):
        return Return(tuple(fn(op) for op in ins.operands))
    return ins


def predecessors(f: FunctionIR) -> dict[int, list[int]]:
    preds: dict[int, list[int]] = {b.id: [] for b in f.blocks}
    for b in f.blocks:
        for s in b.successors():
            if s in preds and b.id not in preds[s]:
                preds[s].append(b.id)
    for v in preds.values():
        v.sort()
    return preds


# ---------------------------------------------------------------------------
# Printing

BUILTIN_SYMBOLS = {"+", "-", "*", "/", "^", ">", "<", "=="}


def format_literal(v) -> str:
    if v is ZERO:
        return "0"
    if v is UNIT:
        return "unit"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    raise TypeError(f"not an IR literal: {v!r}")


def format_operand(op: Operand, builtins: Iterable[str] | None = None) -> str:
    if isinstance(op, Var):
        return f"%{op.id}"
    if isinstance(op, Lit):
        return format_literal(op.value)
    if isinstance(op, Arg):
        return op.name
    if isinstance(op, Alpha):
        return f"alpha(%{op.id})"
    if isinstance(op, FuncRef):
        from .runtime.builtins import BUILTIN_NAMES

        return op.name if op.name in BUILTIN_NAMES else f"@{op.name}"
    raise TypeError(f"bad operand {op!r}")


def _results(rs) -> str:
    return ", ".join("_" if r is None else f"%{r}" for r in rs)


def format_instruction(ins: Instruction, block_id: int) -> list[str]:
    fo = format_operand
    if isinstance(ins, Const):
        return [f"%{ins.result} <- const {format_literal(ins.value)}"]
    if isinstance(ins, Phi):
        inc = ", ".join(f"#{p} -> {fo(op)}" for p, op in ins.incomings)
        return [f"%{ins.result} <- phi({inc})"]
    if isinstance(ins, Call):
        args = ", ".join(fo(a) for a in ins.args)
        if ins.j:
            inner = fo(ins.callee) + (", " + args if args else "")
            text = f"call J({inner})"
        else:
            text = f"call {fo(ins.callee)}({args})"
        if ins.results:
            text = f"{_results(ins.results)} <- {text}"
        return [text]
    if isinstance(ins, Branch):
        return [f"goto #{ins.target}"]
    if isinstance(ins, CondBranch):
        c = fo(ins.cond)
        if ins.else_ == block_id + 1:
            return [f"goto #{ins.then} if {c}"]
        if ins.then == block_id + 1:
            return [f"goto #{ins.else_} if not {c}"]
        return [f"goto #{ins.then} if {c}", f"goto #{ins.else_}"]
    if isinstance(ins, Return):
        return ["return " + ", ".join(fo(op) for op in ins.operands)]
    raise TypeError(ins)


def print_ir(f: FunctionIR, header: bool = False) -> str:
    """Render ``f`` in the block-listing text format.

    With ``header`` the first line carries the name and parameter list, which
    makes the text a complete description of the function.
    """
    lines = []
    if header:
        lines.append(f"function {f.name}({', '.join(f.params)}):")
    for b in f.blocks:
        lines.append(f"block #{b.id}:")
        for ins in (*b.phis, *b.body, b.terminator):
            lines.extend("  " + s for s in format_instruction(ins, b.id))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Parsing


class IRSyntaxError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<arrow><-|->)
  | (?P<num>-?(?:\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|inf)|nan)
  | (?P<zero>0(?![\w.]))
  | (?P<var>%\d+)
  | (?P<block>\#\d+)
  | (?P<fref>@[^\s(),]+)
  | (?P<sym>==|[-+*/^<>])
  | (?P<ident>[A-Za-z_][\w.]*)
  | (?P<punct>[(),:])
    """,
    re.VERBOSE,
)


def _tokenize(line: str, lineno: int) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(line):
        m = _TOKEN.match(line, pos)
        if not m:
            raise IRSyntaxError(f"unexpected character {line[pos]!r}", lineno, pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), pos + 1))
        pos = m.end()
    return toks


class _LineParser:
    def __init__(self, toks, lineno):
        self.toks = toks
        self.i = 0
        self.lineno = lineno

    def peek(self, k=0):
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else ("eol", "", self._endcol())

    def _endcol(self):
        if not self.toks:
            return 1
        kind, text, col = self.toks[-1]
        return col + len(text)

    def next(self):
        t = self.peek()
        self.i += 1
        return t

    def error(self, msg):
        raise IRSyntaxError(msg, self.lineno, self.peek()[2])

    def expect(self, text):
        t = self.next()
        if t[1] != text:
            self.i -= 1
            self.error(f"expected {text!r}, found {t[1] or 'end of line'!r}")
        return t

    def at_end(self):
        return self.i >= len(self.toks)

    def operand(self) -> Operand:
        kind, text, _ = self.peek()
        if kind == "var":
            self.next()
            return Var(int(text[1:]))
        if kind == "num":
            self.next()
            return Lit(float(text))
        if kind == "zero":
            self.next()
            return ZERO_LIT
        if kind == "fref":
            self.next()
            return FuncRef(text[1:])
        if kind == "sym":
            self.next()
            return FuncRef(text)
        if kind == "ident":
            self.next()
            if text == "true":
                return Lit(True)
            if text == "false":
                return Lit(False)
            if text == "unit":
                return UNIT_LIT
            if text == "alpha" and self.peek()[1] == "(":
                self.expect("(")
                k, t, _ = self.next()
                if k != "var":
                    self.i -= 1
                    self.error("alpha expects a value id")
                self.expect(")")
                return Alpha(int(t[1:]))
            from .runtime.builtins import BUILTIN_NAMES

            if text in BUILTIN_NAMES:
                return FuncRef(text)
            return Arg(text)
        self.error(f"expected operand, found {text or 'end of line'!r}")

    def operand_list(self, close=")") -> list[Operand]:
        out = []
        if self.peek()[1] == close:
            return out
        while True:
            out.append(self.operand())
            if self.peek()[1] == ",":
                self.next()
                continue
            return out

    def block_ref(self) -> int:
        kind, text, _ = self.next()
        if kind != "block":
            self.i -= 1
            self.error("expected block reference")
        return int(text[1:])

    def done(self):
        if not self.at_end():
            self.error(f"unexpected {self.peek()[1]!r}")


def parse_ir(text: str, name: str = "f", params: Iterable[str] | None = None) -> FunctionIR:
    """Parse the block-listing format produced by :func:`print_ir`.

    Without a ``function`` header the parameter list is taken from ``params``
    or, failing that, inferred from argument names in order of first use with
    ``self`` prepended.
    """
    blocks: list[dict] = []
    cur = None
    pending_cond = None  # (cond, then, else, negated, lineno)
    defined: set[int] = set()
    header_params = None

    def close_pending(fallthrough: int | None):
        nonlocal pending_cond
        if pending_cond is None:
            return
        cond, target, negated, lineno, col = pending_cond
        if fallthrough is None:
            raise IRSyntaxError("conditional goto needs a following block", lineno, col)
        if negated:
            cur["term"] = CondBranch(cond, fallthrough, target)
        else:
            cur["term"] = CondBranch(cond, target, fallthrough)
        pending_cond = None

    lines = text.splitlines()
    for lineno, raw in enumerate(lines, 1):
        if not raw.strip():
            continue
        toks = _tokenize(raw, lineno)
        p = _LineParser(toks, lineno)
        first = p.peek()
        if first[1] == "function" and not blocks:
            p.next()
            k, fname, _ = p.next()
            name = fname.lstrip("@")
            p.expect("(")
            header_params = []
            while p.peek()[1] != ")":
                k, t, _ = p.next()
                header_params.append(t)
                if p.peek()[1] == ",":
                    p.next()
            p.expect(")")
            p.expect(":")
            p.done()
            continue
        if first[1] == "block":
            p.next()
            bid = p.block_ref()
            p.expect(":")
            p.done()
            if cur is not None:
                close_pending(bid)
                if cur["term"] is None:
                    raise IRSyntaxError(f"block #{cur['id']} has no terminator", lineno, 1)
            if bid != len(blocks) + 1:
                raise IRSyntaxError(f"expected block #{len(blocks) + 1}", lineno, first[2])
            cur = {"id": bid, "phis": [], "body": [], "term": None}
            blocks.append(cur)
            continue
        if cur is None:
            raise IRSyntaxError("instruction outside of a block", lineno, first[2])
        if first[1] == "goto":
            p.next()
            target = p.block_ref()
            if p.peek()[1] == "if":
                if cur["term"] is not None or pending_cond is not None:
                    p.error("block already terminated")
                p.next()
                negated = False
                if p.peek()[1] == "not":
                    p.next()
                    negated = True
                cond = p.operand()
                p.done()
                pending_cond = (cond, target, negated, lineno, first[2])
            else:
                p.done()
                if pending_cond is not None:
                    cond, t0, negated, _, _ = pending_cond
                    cur["term"] = (CondBranch(cond, target, t0) if negated
                                   else CondBranch(cond, t0, target))
                    pending_cond = None
                elif cur["term"] is not None:
                    p.error("block already terminated")
                else:
                    cur["term"] = Branch(target)
            continue
        if pending_cond is not None or cur["term"] is not None:
            p.error("instruction after terminator")
        if first[1] == "return":
            p.next()
            ops = [] if p.at_end() else p.operand_list(close="")
            p.done()
            cur["term"] = Return(tuple(ops))
            continue
        # definitions: results <- rhs, or a bare call
        results: list[int | None] = []
        if first[1] != "call":
            while True:
                k, t, c = p.next()
                if k == "var":
                    rid = int(t[1:])
                    if rid in defined:
                        raise IRSyntaxError(f"%{rid} defined twice", lineno, c)
                    defined.add(rid)
                    results.append(rid)
                elif t == "_":
                    results.append(None)
                else:
                    p.i -= 1
                    p.error("expected result value")
                if p.peek()[1] == ",":
                    p.next()
                    continue
                break
            p.expect("<-")
        kind, word, col = p.peek()
        if word == "phi":
            p.next()
            if len(results) != 1 or results[0] is None:
                p.error("phi defines exactly one value")
            if cur["body"]:
                p.error("phi after non-phi instruction")
            p.expect("(")
            inc = []
            while p.peek()[1] != ")":
                src = p.block_ref()
                p.expect("->")
                inc.append((src, p.operand()))
                if p.peek()[1] == ",":
                    p.next()
            p.expect(")")
            p.done()
            cur["phis"].append(Phi(results[0], tuple(inc)))
        elif word == "const":
            p.next()
            if len(results) != 1 or results[0] is None:
                p.error("const defines exactly one value")
            lit = p.operand()
            if not isinstance(lit, Lit):
                p.error("const expects a literal")
            p.done()
            cur["body"].append(Const(results[0], lit.value))
        elif word == "call":
            p.next()
            j = False
            if p.peek()[1] == "J" and p.peek(1)[1] == "(":
                p.next()
                p.expect("(")
                callee = p.operand()
                args = []
                if p.peek()[1] == ",":
                    p.next()
                    args = p.operand_list()
                p.expect(")")
                j = True
            else:
                callee = p.operand()
                p.expect("(")
                args = p.operand_list()
                p.expect(")")
            p.done()
            cur["body"].append(Call(tuple(results), callee, tuple(args), j))
        else:
            p.error(f"unknown instruction {word!r}")

    if cur is None:
        raise IRSyntaxError("empty function", max(1, len(lines)), 1)
    close_pending(None)
    if cur["term"] is None:
        raise IRSyntaxError(f"block #{cur['id']} has no terminator", len(lines), 1)

    bbs = tuple(BasicBlock(b["id"], tuple(b["phis"]), tuple(b["body"]), b["term"])
                for b in blocks)
    if header_params is not None:
        ps = tuple(header_params)
    elif params is not None:
        ps = tuple(params)
    else:
        seen = ["self"]
        tmp = FunctionIR(name, (), bbs)
        for _, ins in tmp.instructions():
            for op in used_operands(ins):
                if isinstance(op, Arg) and op.name not in seen:
                    seen.append(op.name)
        ps = tuple(seen)
    return FunctionIR(name, ps, bbs)


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    block: int | None
    message: str

    def __str__(self) -> str:
        where = f"#{self.block}: " if self.block is not None else ""
        return f"{self.rule}: {where}{self.message}"


def validate(f: FunctionIR) -> list[Diagnostic]:
    from .analysis import dominators_of, reachable_blocks

    diags: list[Diagnostic] = []

    def bad(rule, block, msg):
        diags.append(Diagnostic(rule, block, msg))

    if not f.blocks:
        return [Diagnostic("empty", None, "function has no blocks")]
    if not f.params:
        bad("params", None, "missing hidden self parameter")
    n = len(f.blocks)
    for i, b in enumerate(f.blocks, 1):
        if b.id != i:
            bad("block-ids", b.id, f"block ids must be dense, expected #{i}")
            return diags
        if not isinstance(b.terminator, (Branch, CondBranch, Return)):
            bad("terminator", b.id, "block does not end in a terminator")
        for ins in b.body:
            if isinstance(ins, (Phi, Branch, CondBranch, Return)):
                bad("terminator" if not isinstance(ins, Phi) else "phi-order", b.id,
                    f"misplaced {type(ins).__name__} in block body")
        for s in b.successors():
            if not 1 <= s <= n:
                bad("target", b.id, f"jump to missing block #{s}")
        if isinstance(b.terminator, CondBranch) and b.terminator.then == b.terminator.else_:
            bad("target", b.id, "conditional branch with identical targets")
    if diags:
        return diags

    preds = predecessors(f)
    if preds[1]:
        bad("entry-preds", 1, "entry block has predecessors")
    if f.entry.phis:
        bad("entry-phi", 1, "entry block has phi nodes")

    defs: dict[int, tuple[int, int]] = {}  # value -> (block, position)
    for b in f.blocks:
        pos = 0
        for ins in (*b.phis, *b.body):
            for r in defined_ids(ins):
                if r in defs:
                    bad("single-assignment", b.id, f"%{r} defined more than once")
                defs[r] = (b.id, pos)
            pos += 1
        for ph in b.phis:
            srcs = [p for p, _ in ph.incomings]
            if sorted(srcs) != sorted(preds[b.id]) or len(set(srcs)) != len(srcs):
                bad("phi-preds", b.id,
                    f"%{ph.result} incomings {srcs} do not match predecessors {preds[b.id]}")

    reach = reachable_blocks(f)
    for b in f.blocks:
        if b.id not in reach:
            bad("unreachable", b.id, "block is unreachable from entry")
    if len(reach) != n:
        return diags
    dom = dominators_of(f)

    params = set(f.params)

    def check_use(op, block, pos, what):
        if isinstance(op, Arg) and op.name not in params:
            bad("undefined", block, f"{op.name} is not a parameter ({what})")
        if not isinstance(op, Var):
            return
        if op.id not in defs:
            bad("undefined", block, f"%{op.id} used but never defined ({what})")
            return
        db, dpos = defs[op.id]
        if db == block:
            if dpos >= pos:
                bad("dominance", block, f"%{op.id} used before its definition ({what})")
        elif db not in dom[block]:
            bad("dominance", block, f"%{op.id} defined in #{db} does not dominate its use ({what})")

    for b in f.blocks:
        npos = len(b.phis)
        for ph in b.phis:
            for src, op in ph.incomings:
                # a phi operand is used at the end of the incoming block
                if src in dom:
                    check_use(op, src, 10**9, f"phi %{ph.result}")
        for k, ins in enumerate(b.body):
            for op in used_operands(ins):
                check_use(op, b.id, npos + k, "call" if isinstance(ins, Call) else "instr")
        for op in used_operands(b.terminator):
            check_use(op, b.id, 10**9, "terminator")
    return diags


# ---------------------------------------------------------------------------
# Renumbering


def renumber(f: FunctionIR, start: int = 1) -> FunctionIR:
    """Renumber values densely in order of definition."""
    mapping: dict[int, int] = {}
    nxt = start
    for _, ins in f.instructions():
        for r in defined_ids(ins):
            mapping[r] = nxt
            nxt += 1

    def op(o):
        if isinstance(o, Var):
            return Var(mapping.get(o.id, o.id))
        return o

    def fix(ins):
        ins = map_operands(ins, op)
        if isinstance(ins, Phi):
            return Phi(mapping[ins.result], ins.incomings)
        if isinstance(ins, Const):
            return Const(mapping[ins.result], ins.value)
        if isinstance(ins, Call):
            return Call(tuple(None if r is None else mapping[r] for r in ins.results),
                        ins.callee, ins.args, ins.j)
        return ins

    blocks = tuple(BasicBlock(b.id, tuple(fix(p) for p in b.phis),
                              tuple(fix(i) for i in b.body), fix(b.terminator))
                   for b in f.blocks)
    return FunctionIR(f.name, f.params, blocks)
