import math
import random
from pathlib import Path

import pytest

from ssaad.frontend import syntax as S
from ssaad.frontend.lower import LowerError, compile_source
from ssaad.gradcheck.ast_interp import AstInterpreter
from ssaad.gradcheck.fuzz import FuzzConfig, random_case
from ssaad.ir import Call, print_ir, validate
from ssaad.runtime.interp import Program
from ssaad.runtime.values import Box, Cons

DATA = Path(__file__).parent / "data"


def fn(src, name):
    return {f.name: f for f in compile_source(src)}[name]


def test_parse_pow():
    m = S.parse((DATA / "pow.adl").read_text())
    (f,) = m.functions
    assert f.name == "pow" and f.params == ["x", "n"]
    assert any(isinstance(st, S.While) for st in f.body)


def test_parse_ratio_tree():
    m = S.parse("fn f(a,b){ return a/(a+b^2); }")
    ret = m.functions[0].body[0]
    e = ret.value
    assert isinstance(e, S.Binary) and e.op == "/"
    assert isinstance(e.right, S.Binary) and e.right.op == "+"
    assert e.right.right.op == "^"


def test_syntax_error_at_semicolon():
    with pytest.raises(S.AdlSyntaxError) as e:
        S.parse("fn f(x){ return ; }")
    err = e.value
    assert (err.line, err.col) == (1, 17)
    assert "number" in err.expected


@pytest.mark.parametrize("src,expect", [
    ("2 - 3 - 4", -5.0),
    ("2 ^ 3 ^ 2", 512.0),
    ("-2 ^ 2", -4.0),
    ("1 + 2 * 3", 7.0),
    ("(1 + 2) * 3", 9.0),
])
def test_precedence(src, expect):
    prog = Program(compile_source(src))
    assert prog.call("main") == [expect]


def test_comments_and_else_if():
    src = """
    // sign
    fn sign(x) {
      if x > 0 { return 1; } else if x < 0 { return -1; } else { return 0; }
    }
    """
    prog = Program(compile_source(src))
    assert [prog.call("sign", v)[0] for v in (3.0, -2.0, 0.0)] == [1.0, -1.0, 0.0]


def test_pow_lowering():
    f = fn((DATA / "pow.adl").read_text(), "pow")
    assert len(f.blocks) == 4
    header = f.blocks[1]
    assert len(header.phis) == 2
    assert validate(f) == []


def test_leaky_lowering_single_return():
    f = fn((DATA / "leaky.adl").read_text(), "leaky")
    assert print_ir(f) == """\
block #1:
  %1 <- call >(x, 0.0)
  goto #3 if %1
block #2:
  %2 <- call *(0.01, x)
  goto #3
block #3:
  %3 <- phi(#1 -> x, #2 -> %2)
  return %3"""


def test_straight_line():
    f = fn("fn g(x){ return sin(x); }", "g")
    assert len(f.blocks) == 1
    assert [type(i) for i in f.blocks[0].body] == [Call]


def test_loop_free_has_only_join_phis():
    f = fn("fn g(x){ let y = x * 2; y = y + 1; return y * y; }", "g")
    assert all(not b.phis for b in f.blocks)


@pytest.mark.parametrize("src,msg", [
    ("fn f(x){ return y; }", "undefined variable y"),
    ("fn f(x){ y = 1; return x; }", "undeclared variable y"),
    ("fn f(x){ return sin(x, x); }", "expects 1 arguments"),
    ("fn f(x){ return nope(x); }", "undefined function nope"),
    ("fn id(x){ return x; }", "reserved"),
    ("fn grad(x){ return x; }", "reserved"),
])
def test_lower_errors(src, msg):
    with pytest.raises(LowerError, match=msg):
        compile_source(src)


def test_block_scoping():
    src = "fn f(x){ let y = 1; if x > 0 { let y = 5; y = y + 1; } return y; }"
    assert Program(compile_source(src)).call("f", 2.0) == [1.0]


def test_closure_captures_by_value_and_boxes_by_reference():
    src = """
    fn f(x) {
      let c = x;
      let b = box(x);
      let g = fn(y) { return c * y + get(b); };
      c = 100;
      set(b, 1);
      return g(2);
    }
    """
    assert Program(compile_source(src)).call("f", 3.0) == [7.0]


def _same(a, b):
    if isinstance(a, float) and isinstance(b, float):
        return a == b or (math.isnan(a) and math.isnan(b))
    if isinstance(a, Cons) and isinstance(b, Cons):
        return _same(a.first, b.first) and _same(a.second, b.second)
    if isinstance(a, Box) and isinstance(b, Box):
        return _same(a.value, b.value)
    return a == b


def test_ir_matches_ast_interpreter_on_fuzzed_programs():
    rng = random.Random(5)
    for seed in range(200):
        src, args = random_case(FuzzConfig(seed=10_000 + seed))
        fns = compile_source(src)
        assert all(validate(f) == [] for f in fns)
        for xs in (args, [round(rng.uniform(-2, 2), 3) for _ in args]):
            (y,) = Program(fns).call("f", *xs)
            ref = AstInterpreter(S.parse(src)).call("f", *xs)
            assert _same(y, ref), (seed, xs)
