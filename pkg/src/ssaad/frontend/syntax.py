"""Lexer, syntax tree and recursive-descent parser for adlang."""

from __future__ import annotations

import re
from dataclasses import dataclass, field


class FrontendError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class AdlSyntaxError(FrontendError):
    def __init__(self, message: str, line: int, col: int, expected=()):
        self.expected = tuple(sorted(set(expected)))
        if self.expected:
            message = f"{message}; expected one of: {' '.join(self.expected)}"
        super().__init__(message, line, col)


# -- tokens ------------------------------------------------------------------

KEYWORDS = {"fn", "let", "if", "else", "while", "return", "true", "false", "unit", "not"}

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+|//[^\n]*)
  | (?P<nl>\n)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|[-+*/^<>=(){},;])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # num, name, keyword, op, eof
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Token]:
    toks = []
    pos, line, start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise AdlSyntaxError(f"unexpected character {src[pos]!r}", line, pos - start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            start = m.end()
        elif kind != "ws":
            text = m.group()
            if kind == "name" and text in KEYWORDS:
                kind = "keyword"
            toks.append(Token(kind, text, line, m.start() - start + 1))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - start + 1))
    return toks


# -- syntax tree -------------------------------------------------------------


@dataclass
class Node:
    line: int = field(default=0, kw_only=True, compare=False)
    col: int = field(default=0, kw_only=True, compare=False)


@dataclass
class Num(Node):
    value: float


@dataclass
class Bool(Node):
    value: bool


@dataclass
class UnitLit(Node):
    pass


@dataclass
class Name(Node):
    id: str


@dataclass
class Binary(Node):
    op: str
    left: Node
    right: Node


@dataclass
class Unary(Node):
    op: str  # "neg" | "not"
    operand: Node


@dataclass
class CallExpr(Node):
    func: Node
    args: list


@dataclass
class Lambda(Node):
    params: list
    body: list


@dataclass
class Let(Node):
    name: str
    value: Node


@dataclass
class Assign(Node):
    name: str
    value: Node


@dataclass
class If(Node):
    cond: Node
    then: list
    orelse: list | None


@dataclass
class While(Node):
    cond: Node
    body: list


@dataclass
class ReturnStmt(Node):
    value: Node


@dataclass
class ExprStmt(Node):
    value: Node


@dataclass
class FnDef(Node):
    name: str
    params: list
    body: list


@dataclass
class Module:
    functions: list
    main: Node | None = None

    def function(self, name: str) -> FnDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)


# -- parser ------------------------------------------------------------------

_EXPR_START = ("number", "name", "true", "false", "unit", "(", "-", "not", "fn")


class Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def _at(self, *texts) -> bool:
        t = self.tok
        return t.kind in ("op", "keyword") and t.text in texts

    def _advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def _fail(self, expected):
        t = self.tok
        shown = "end of input" if t.kind == "eof" else repr(t.text)
        raise AdlSyntaxError(f"unexpected {shown}", t.line, t.col, expected)

    def _expect(self, text: str) -> Token:
        if self._at(text):
            return self._advance()
        self._fail([text])

    def _name(self) -> Token:
        if self.tok.kind == "name":
            return self._advance()
        self._fail(["name"])

    def _pos(self, t: Token) -> dict:
        return {"line": t.line, "col": t.col}

    # module

    def module(self) -> Module:
        fns, main, seen = [], None, set()
        while self.tok.kind != "eof":
            if self._at("fn") and self.toks[self.i + 1].kind == "name":
                f = self.fndef()
                if f.name in seen:
                    raise FrontendError(f"duplicate function {f.name}", f.line, f.col)
                seen.add(f.name)
                fns.append(f)
            elif main is None:
                main = self.expr(["fn", "end of input"])
                if self._at(";"):
                    self._advance()
                if self.tok.kind != "eof":
                    self._fail(["end of input"])
            else:
                self._fail(["fn", "end of input"])
        return Module(fns, main)

    def fndef(self) -> FnDef:
        t = self._expect("fn")
        name = self._name().text
        params = self.params()
        return FnDef(name, params, self.block(), **self._pos(t))

    def params(self) -> list[str]:
        self._expect("(")
        ps = []
        if not self._at(")"):
            while True:
                p = self._name()
                if p.text in ps:
                    raise FrontendError(f"duplicate parameter {p.text}", p.line, p.col)
                ps.append(p.text)
                if not self._at(","):
                    break
                self._advance()
        self._expect(")")
        return ps

    def block(self) -> list:
        self._expect("{")
        body = []
        while not self._at("}"):
            if self.tok.kind == "eof":
                self._fail(["}"])
            body.append(self.statement())
        self._advance()
        return body

    # statements

    def statement(self):
        t = self.tok
        pos = self._pos(t)
        if self._at("let"):
            self._advance()
            name = self._name().text
            self._expect("=")
            v = self.expr()
            self._expect(";")
            return Let(name, v, **pos)
        if self._at("if"):
            return self.if_stmt()
        if self._at("while"):
            self._advance()
            cond = self.expr(["{"])
            return While(cond, self.block(), **pos)
        if self._at("return"):
            self._advance()
            v = self.expr()
            self._expect(";")
            return ReturnStmt(v, **pos)
        if t.kind == "name" and self.toks[self.i + 1].kind == "op" and self.toks[self.i + 1].text == "=":
            self._advance()
            self._advance()
            v = self.expr()
            self._expect(";")
            return Assign(t.text, v, **pos)
        v = self.expr(["let", "if", "while", "return", "}"])
        self._expect(";")
        return ExprStmt(v, **pos)

    def if_stmt(self):
        t = self._expect("if")
        cond = self.expr(["{"])
        then = self.block()
        orelse = None
        if self._at("else"):
            self._advance()
            orelse = [self.if_stmt()] if self._at("if") else self.block()
        return If(cond, then, orelse, **self._pos(t))

    # expressions, lowest precedence first

    def expr(self, also=()):
        return self.comparison(also)

    def comparison(self, also):
        left = self.additive(also)
        while self._at(">", "<", "=="):
            t = self._advance()
            left = Binary(t.text, left, self.additive(()), **self._pos(t))
        return left

    def additive(self, also):
        left = self.term(also)
        while self._at("+", "-"):
            t = self._advance()
            left = Binary(t.text, left, self.term(()), **self._pos(t))
        return left

    def term(self, also):
        left = self.unary(also)
        while self._at("*", "/"):
            t = self._advance()
            left = Binary(t.text, left, self.unary(()), **self._pos(t))
        return left

    def unary(self, also):
        if self._at("-"):
            t = self._advance()
            return Unary("neg", self.unary(()), **self._pos(t))
        if self._at("not"):
            t = self._advance()
            return Unary("not", self.unary(()), **self._pos(t))
        return self.power(also)

    def power(self, also):
        base = self.postfix(also)
        if self._at("^"):
            t = self._advance()
            # right associative, binds tighter than unary minus on the left
            return Binary("^", base, self.unary(()), **self._pos(t))
        return base

    def postfix(self, also):
        e = self.primary(also)
        while self._at("("):
            self._advance()
            args = []
            if not self._at(")"):
                while True:
                    args.append(self.expr())
                    if not self._at(","):
                        break
                    self._advance()
            self._expect(")")
            e = CallExpr(e, args, line=e.line, col=e.col)
        return e

    def primary(self, also):
        t = self.tok
        pos = self._pos(t)
        if t.kind == "num":
            self._advance()
            return Num(float(t.text), **pos)
        if t.kind == "name":
            self._advance()
            return Name(t.text, **pos)
        if self._at("true", "false"):
            self._advance()
            return Bool(t.text == "true", **pos)
        if self._at("unit"):
            self._advance()
            return UnitLit(**pos)
        if self._at("("):
            self._advance()
            e = self.expr()
            self._expect(")")
            return e
        if self._at("fn"):
            self._advance()
            params = self.params()
            return Lambda(params, self.block(), **pos)
        self._fail(list(_EXPR_START) + list(also))


def parse(src: str) -> Module:
    """Parse adlang source into a :class:`Module`."""
    return Parser(src).module()
