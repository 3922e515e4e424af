"""Number types for the oracle interpreter: plain floats, dual numbers for
forward mode, and traced numbers that record a Wengert list."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..runtime.builtins import ieee_cos, ieee_div, ieee_exp, ieee_log, ieee_pow, ieee_sin


def _div(a, b):
    return ieee_div(a, b)


class Dual:
    """``val + eps·ε`` with ``ε² = 0``."""

    __slots__ = ("val", "eps")

    def __init__(self, val: float, eps: float = 0.0):
        self.val = float(val)
        self.eps = float(eps)

    def __repr__(self) -> str:
        return f"Dual({self.val!r}, {self.eps!r})"

    def __add__(self, o):
        o = _dual(o)
        return Dual(self.val + o.val, self.eps + o.eps)

    __radd__ = __add__

    def __sub__(self, o):
        o = _dual(o)
        return Dual(self.val - o.val, self.eps - o.eps)

    def __rsub__(self, o):
        return _dual(o) - self

    def __mul__(self, o):
        o = _dual(o)
        return Dual(self.val * o.val, self.eps * o.val + self.val * o.eps)

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = _dual(o)
        q = _div(self.val, o.val)
        return Dual(q, _div(self.eps - q * o.eps, o.val))

    def __rtruediv__(self, o):
        return _dual(o) / self

    def __neg__(self):
        return Dual(-self.val, -self.eps)

    def __pow__(self, o):
        o = _dual(o)
        y = ieee_pow(self.val, o.val)
        d = 0.0
        if self.eps != 0.0:
            d += self.eps * o.val * ieee_pow(self.val, o.val - 1.0)
        if o.eps != 0.0:
            d += o.eps * y * ieee_log(self.val)
        return Dual(y, d)

    def __rpow__(self, o):
        return _dual(o) ** self

    def sin(self):
        return Dual(ieee_sin(self.val), self.eps * ieee_cos(self.val))

    def cos(self):
        return Dual(ieee_cos(self.val), -self.eps * ieee_sin(self.val))

    def exp(self):
        y = ieee_exp(self.val)
        return Dual(y, self.eps * y)

    def log(self):
        return Dual(ieee_log(self.val), _div(self.eps, self.val))


def _dual(x) -> Dual:
    return x if isinstance(x, Dual) else Dual(x, 0.0)


# -- Wengert list --------------------------------------------------------------


@dataclass
class Record:
    """One tape entry: ``out = op(inputs...)``."""

    op: str
    inputs: tuple
    out: int
    partials: tuple  # d out / d input, evaluated at record time


@dataclass
class Tape:
    records: list = field(default_factory=list)
    n_vars: int = 0

    def new_var(self) -> int:
        self.n_vars += 1
        return self.n_vars - 1

    def count(self, op: str) -> int:
        return sum(1 for r in self.records if r.op == op)

    def __len__(self) -> int:
        return len(self.records)

    def gradient(self, out: "Traced", inputs) -> list[float]:
        """Reverse sweep over the list, summing every contribution."""
        adj = [0.0] * self.n_vars
        if isinstance(out, Traced) and out.tape is self:
            adj[out.var] = 1.0
        for r in reversed(self.records):
            g = adj[r.out]
            if g == 0.0:
                continue
            for i, p in zip(r.inputs, r.partials):
                if i is not None:
                    adj[i] += g * p
        return [adj[x.var] if isinstance(x, Traced) else 0.0 for x in inputs]


class Traced:
    """A float that appends every operation it takes part in to a tape."""

    __slots__ = ("val", "tape", "var")

    def __init__(self, val: float, tape: Tape, var: int | None = None):
        self.val = float(val)
        self.tape = tape
        self.var = tape.new_var() if var is None else var

    def __repr__(self) -> str:
        return f"Traced({self.val!r}, %{self.var})"

    def _emit(self, op, args, val, partials):
        out = Traced(val, self.tape)
        ins = tuple(a.var if isinstance(a, Traced) else None for a in args)
        self.tape.records.append(Record(op, ins, out.var, tuple(partials)))
        return out

    def __add__(self, o):
        return self._emit("+", (self, o), self.val + _v(o), (1.0, 1.0))

    __radd__ = __add__

    def __sub__(self, o):
        return self._emit("-", (self, o), self.val - _v(o), (1.0, -1.0))

    def __rsub__(self, o):
        return self._emit("-", (o, self), _v(o) - self.val, (1.0, -1.0))

    def __mul__(self, o):
        return self._emit("*", (self, o), self.val * _v(o), (_v(o), self.val))

    def __rmul__(self, o):
        return self._emit("*", (o, self), _v(o) * self.val, (self.val, _v(o)))

    def __truediv__(self, o):
        a, b = self.val, _v(o)
        q = _div(a, b)
        return self._emit("/", (self, o), q, (_div(1.0, b), -_div(q, b)))

    def __rtruediv__(self, o):
        a, b = _v(o), self.val
        q = _div(a, b)
        return self._emit("/", (o, self), q, (_div(1.0, b), -_div(q, b)))

    def __neg__(self):
        return self._emit("neg", (self,), -self.val, (-1.0,))

    def __pow__(self, o):
        b, n = self.val, _v(o)
        y = ieee_pow(b, n)
        return self._emit("^", (self, o), y, (n * ieee_pow(b, n - 1.0), y * ieee_log(b)))

    def __rpow__(self, o):
        b, n = _v(o), self.val
        y = ieee_pow(b, n)
        return self._emit("^", (o, self), y, (n * ieee_pow(b, n - 1.0), y * ieee_log(b)))

    def sin(self):
        return self._emit("sin", (self,), ieee_sin(self.val), (ieee_cos(self.val),))

    def cos(self):
        return self._emit("cos", (self,), ieee_cos(self.val), (-ieee_sin(self.val),))

    def exp(self):
        y = ieee_exp(self.val)
        return self._emit("exp", (self,), y, (y,))

    def log(self):
        return self._emit("log", (self,), ieee_log(self.val), (_div(1.0, self.val),))


def _v(x) -> float:
    return x.val if isinstance(x, (Traced, Dual)) else x


def primal(x) -> float:
    """The ordinary float behind any oracle number."""
    return _v(x)


def is_num(x) -> bool:
    return isinstance(x, (Dual, Traced)) or (isinstance(x, float) and not isinstance(x, bool))


# generic elementary functions

def num_add(a, b):
    return a + b


def num_sub(a, b):
    return a - b


def num_mul(a, b):
    return a * b


def num_div(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return ieee_div(a, b)
    return a / b


def num_pow(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return ieee_pow(a, b)
    return a ** b


def num_neg(a):
    return -a


def _unary(name, fn):
    def go(x):
        if isinstance(x, float):
            return fn(x)
        return getattr(x, name)()
    go.__name__ = f"num_{name}"
    return go


num_sin = _unary("sin", ieee_sin)
num_cos = _unary("cos", ieee_cos)
num_exp = _unary("exp", ieee_exp)
num_log = _unary("log", ieee_log)
