import math
from pathlib import Path

import pytest

from ssaad.frontend.lower import compile_source
from ssaad.runtime import builtins as B
from ssaad.runtime.interp import ContractError, Program
from ssaad.runtime.values import (
    ZERO,
    Box,
    Closure,
    ClosureAdjoint,
    Cons,
    ConsAdjoint,
    EvalError,
    PullbackReuseError,
    Stack,
    accumulate,
    format_value,
)

DATA = Path(__file__).parent / "data"


def program(*names):
    fns = []
    for n in names:
        fns += compile_source((DATA / f"{n}.adl").read_text())
    return Program(fns, track_stacks=True)


def prim(name):
    return B.PRIMITIVES[name]


def j(prog, name, *args):
    *ys, pb = prog.j_apply(prim(name), list(args))
    return ys, pb


def test_eval_examples():
    prog = program("pow", "leaky")
    assert prog.call("pow", 2.0, 3.0) == [8.0]
    assert prog.call("leaky", -3.0) == [pytest.approx(-0.03, rel=1e-15)]


def test_box_set_then_get():
    src = "fn f(x) { let b = box(x); set(b, 4); set(b, x * 2); return get(b); }"
    assert Program(compile_source(src)).call("f", 5.0) == [10.0]


@pytest.mark.parametrize("src,msg", [
    ("fn f(x) { return f(x, x); }", "expects"),
    ("fn f(x) { return pop(stack()); }", "empty"),
    ("fn f(x) { return first(x); }", "cons"),
])
def test_eval_errors(src, msg):
    with pytest.raises((EvalError, Exception), match=msg):
        Program(compile_source(src)).call("f", 1.0)


def test_ieee_division():
    prog = Program(compile_source("fn f(x) { return x / 0; }"))
    assert prog.call("f", 1.0) == [math.inf]
    assert math.isnan(prog.call("f", 0.0)[0])
    assert math.isnan(Program(compile_source("fn f(x) { return log(x); }")).call("f", -1.0)[0])


def test_j_multiply():
    prog = Program()
    ys, pb = j(prog, "*", 3.0, 4.0)
    assert ys == [12.0]
    assert prog.pullback_apply(pb, 1.0) == [4.0, 3.0]


def test_j_sin():
    prog = Program()
    ys, pb = j(prog, "sin", 0.0)
    assert ys == [0.0]
    assert prog.pullback_apply(pb, 1.0) == [1.0]


def test_j_pow_ir():
    prog = program("pow")
    *ys, pb = prog.j_apply(prog.lookup("pow"), [2.0, 3.0])
    assert ys == [8.0]
    assert prog.pullback_apply(pb, 1.0) == [ZERO, 12.0, ZERO]


@pytest.mark.parametrize("name,args,dy,expect", [
    ("+", (1.0, 2.0), 5.0, [5.0, 5.0]),
    ("-", (1.0, 2.0), 5.0, [5.0, -5.0]),
    ("/", (1.0, 4.0), 1.0, [0.25, -0.0625]),
    ("^", (2.0, 3.0), 1.0, [12.0, 8.0 * math.log(2.0)]),
    ("neg", (2.0,), 3.0, [-3.0]),
    ("log", (2.0,), 1.0, [0.5]),
    ("cos", (0.0,), 1.0, [-0.0]),
    ("exp", (1.0,), 2.0, [2.0 * math.e]),
])
def test_primitive_pullbacks(name, args, dy, expect):
    prog = Program()
    _, pb = j(prog, name, *args)
    assert prog.pullback_apply(pb, dy) == expect


def test_pow_at_zero_base():
    # the exponent gradient is y·log(b) = 0·(-inf); only the base gradient is finite
    prog = Program()
    _, pb = j(prog, "^", 0.0, 2.0)
    db, dn = prog.pullback_apply(pb, 1.0)
    assert db == 0.0 and math.isnan(dn)
    src = "fn f(x) { return x ^ 2; }"
    assert Program(compile_source(src)).gradient("f", 0.0) == (0.0,)


@pytest.mark.parametrize("name,args", [(">", (1.0, 0.0)), ("<", (1.0, 0.0)), ("==", (1.0, 1.0))])
def test_comparisons_have_zero_pullbacks(name, args):
    prog = Program()
    _, pb = j(prog, name, *args)
    assert prog.pullback_apply(pb, 7.0) == [ZERO, ZERO]


def test_first_pullback_builds_cons_adjoint():
    prog = Program()
    _, pb = j(prog, "first", Cons(1.0, 2.0))
    assert prog.pullback_apply(pb, 3.0) == [ConsAdjoint(3.0, ZERO)]


def test_accumulate():
    assert accumulate(ZERO, 3.5) == 3.5
    assert accumulate(3.5, ZERO) == 3.5
    assert accumulate(2.0, 3.0) == 5.0
    assert accumulate(ConsAdjoint(1.0, ZERO), ConsAdjoint(2.0, 4.0)) == ConsAdjoint(3.0, 4.0)
    assert accumulate(ClosureAdjoint(1.0), ClosureAdjoint(2.0)) == ClosureAdjoint(3.0)
    with pytest.raises(EvalError):
        accumulate(1.0, ConsAdjoint(1.0, 1.0))


def test_set_pullback_zeroes_the_slot():
    prog = Program()
    b = Box(1.0)
    with prog.gradient_context():
        _, pb = j(prog, "set", b, 3.0)
        slot = prog._gradref(b)
        slot.value = 5.0
        grads = prog.pullback_apply(pb, ZERO)
        assert grads == [ZERO, 5.0]
        assert slot.value == ZERO or slot.value == 0.0


def test_get_pullback_accumulates_into_slot():
    prog = Program()
    b = Box(1.0)
    with prog.gradient_context():
        _, pb1 = j(prog, "get", b)
        _, pb2 = j(prog, "get", b)
        prog.pullback_apply(pb1, 2.0)
        prog.pullback_apply(pb2, 3.0)
        assert prog._gradref(b).value == 5.0


def test_box_gradient_through_set_then_get():
    src = "fn f(x) { let b = box(0); set(b, x); return get(b); }"
    assert Program(compile_source(src)).gradient("f", 2.0) == (1.0,)


def test_gradient_examples():
    prog = program("pow", "leaky", "ratio")
    assert prog.gradient("pow", 2.0, 3.0) == (12.0, 0.0)
    a, b = prog.gradient("f", 1.0, 2.0)
    assert a == pytest.approx(0.16, rel=1e-14) and b == pytest.approx(-0.16, rel=1e-14)
    assert prog.gradient("leaky", -3.0) == (0.01,)


def test_gradient_needs_scalar():
    prog = Program(compile_source("fn f(x) { return cons(x, x); }"))
    with pytest.raises(ContractError):
        prog.gradient("f", 1.0)


def test_cons_gradient_is_structured():
    prog = Program(compile_source("fn f(c) { return first(c) * second(c); }"))
    (g,) = prog.gradient("f", Cons(2.0, 5.0))
    assert g == ConsAdjoint(5.0, 2.0)


def test_one_shot_pullback():
    prog = program("pow")
    (_,), pb = prog.pullback("pow", 2.0, 3.0)
    assert isinstance(pb, Closure) and pb.one_shot
    prog.pullback_apply(pb, 1.0)
    with pytest.raises(PullbackReuseError, match="already consumed"):
        prog.pullback_apply(pb, 1.0)


def test_stack_free_pullback_is_reusable():
    prog = program("ratio")
    (_,), pb = prog.pullback("f", 1.0, 2.0)
    assert prog.pullback_apply(pb, 1.0) == prog.pullback_apply(pb, 1.0)


def test_stacks_balance():
    prog = program("pow")
    prog.gradient("pow", 1.5, 5.0)
    pushes, pops = prog.stack_balance()
    assert pushes == pops > 0
    assert prog.stacks_balanced()


def test_pop_on_empty_stack():
    with pytest.raises(EvalError):
        Stack().pop()


def test_format_value():
    assert format_value(ZERO) == "0"
    assert format_value(Cons(1.0, 2.5)) == "(1 . 2.5)"
    assert format_value(0.1) == "0.1"
