"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py`` (the summary prints one line per
criterion) or directly with ``python3 tests/test_acceptance.py``.
"""

import math
import random
import struct
import sys
import time
from pathlib import Path

from ssaad.adjoint import differentiate
from ssaad.frontend.lower import compile_source
from ssaad.gradcheck.fuzz import FuzzConfig, random_case
from ssaad.gradcheck.oracles import check_gradient, dual_eval, finite_diff, reference_function
from ssaad.gradcheck.tracer import trace
from ssaad.ir import print_ir
from ssaad.runtime.interp import Program
from ssaad.runtime.values import (
    ZERO,
    Box,
    ClosureAdjoint,
    PullbackReuseError,
    accumulate,
    is_number,
    scale,
)

DATA = Path(__file__).parent / "data"
GOLDEN = Path(__file__).parent / "golden"

CRITERIA = {
    1: "worked examples match golden adjoints",
    2: "numeric gradients of the worked examples",
    3: "loop adjoint equals the unrolled adjoint bitwise",
    4: "fuzz campaign of 500 programs",
    5: "box mutation matches its pure rewrite",
    6: "second derivative through nested differentiation",
    7: "closure environment gradient",
    8: "tape grows with n while the adjoint does not",
    9: "stack discipline and one-shot pullbacks",
    10: "pullback linearity",
}


def src(name):
    return (DATA / f"{name}.adl").read_text()


def fn(text, name):
    return {f.name: f for f in compile_source(text)}[name]


def close(a, b, rtol, atol=0.0):
    return abs(a - b) <= atol + rtol * max(abs(a), abs(b))


def bits(x):
    return struct.pack("<d", 0.0 if x is ZERO else x)


def instructions(f):
    return sum(len(b.phis) + len(b.body) + 1 for b in f.blocks)


def test_criterion_01_golden_adjoints():
    t0 = time.perf_counter()
    texts = {}
    for name, fname in (("ratio", "f"), ("leaky", "leaky"), ("pow", "pow")):
        _, adj = differentiate(fn(src(name), fname))
        texts[name] = print_ir(adj.ir, header=True) + "\n"
        assert texts[name] == (GOLDEN / f"{name}.adjoint").read_text(), name
    assert time.perf_counter() - t0 < 1.0
    # the features the listings are meant to exhibit
    assert "call +(%1, %3)" in texts["ratio"]
    assert "goto #3 if not alpha(%4)" in texts["leaky"]
    assert "%2 <- phi(#1 -> dy, #2 -> %1)" in texts["leaky"]
    header = [l for l in texts["pow"].split("block #3:")[1].split("block #4:")[0].splitlines() if "phi" in l]
    assert len(header) == 2 and any("#1 -> 0" in l for l in header)
    assert "call +(" in texts["pow"].split("block #2:")[1].split("block #3:")[0]


def test_criterion_02_numeric_gradients():
    t0 = time.perf_counter()
    cases = [
        (src("pow"), "pow", (2.0, 3.0), (12.0, 0.0)),
        (src("ratio"), "f", (1.0, 2.0), (0.16, -0.16)),
        (src("leaky"), "leaky", (-3.0,), (0.01,)),
    ]
    for text, name, args, expect in cases:
        grads = Program(compile_source(text)).gradient(name, *args)
        ref = reference_function(text, name)
        for i, (g, e) in enumerate(zip(grads, expect)):
            assert close(g, e, 1e-10), (name, i, g, e)
            if e != 0.0:
                assert close(g, finite_diff(ref, args, i), 1e-5), (name, i)
    assert time.perf_counter() - t0 < 1.0


def _unrolled(n):
    body = "".join("  r = r * x;\n" for _ in range(n))
    return f"fn u(x) {{\n  let r = 1;\n{body}  return r;\n}}\n"


def test_criterion_03_unroll_equivalence():
    prog = Program(compile_source(src("pow")))
    for x in (2.0, -1.3, 0.7):
        for n in (0, 1, 2, 5):
            (g_loop, _) = prog.gradient("pow", x, float(n))
            (g_flat,) = Program(compile_source(_unrolled(n))).gradient("u", x)
            assert bits(g_loop) == bits(g_flat), (x, n, g_loop, g_flat)


def test_criterion_04_fuzz_campaign():
    t0 = time.perf_counter()
    kinds = {"while": 0, "if": 0, "cons(": 0, "box(": 0}
    failures = []
    for k in range(500):
        text, args = random_case(FuzzConfig(seed=7 * 1_000_003 + k))
        for key in kinds:
            kinds[key] += key in text
        report = check_gradient(text, "f", args, atol=1e-8, rtol=1e-5)
        if not report.passed:
            failures.append((k, str(report)))
    elapsed = time.perf_counter() - t0
    assert not failures, failures[:3]
    assert all(kinds.values()), kinds
    assert elapsed < 60.0


BOXED = """
fn f(x, y) {
  let b = box(x);
  let s = get(b) * y;
  set(b, get(b) * get(b));
  s = s + sin(get(b));
  set(b, s + get(b));
  return get(b) * x;
}
"""

PURE = """
fn f(x, y) {
  let b0 = x;
  let s = b0 * y;
  let b1 = b0 * b0;
  s = s + sin(b1);
  let b2 = s + b1;
  return b2 * x;
}
"""


def test_criterion_05_box_semantics():
    for args in ((0.3, 1.7), (-1.1, 0.4), (2.0, -0.5)):
        boxed = Program(compile_source(BOXED)).value_and_gradient("f", *args)
        pure = Program(compile_source(PURE)).value_and_gradient("f", *args)
        assert boxed == pure, (args, boxed, pure)
    # the pullback of set hands back the slot's gradient and clears it
    prog = Program()
    b = Box(1.0)
    with prog.gradient_context():
        *_, pb = prog.j_apply(prog.lookup("set"), [b, 3.0])
        slot = prog._gradref(b)
        slot.value = 5.0
        assert prog.pullback_apply(pb, ZERO) == [ZERO, 5.0]
        assert slot.value in (ZERO, 0.0)


SECOND = """
fn cube(x) { return x * x * x; }
fn dcube(x) { return grad(cube, x); }
"""


def test_criterion_06_second_derivative():
    prog = Program(compile_source(SECOND))
    (d2,) = prog.gradient("dcube", 2.0)
    assert close(d2, 12.0, 1e-10)
    # the adjoint of cube really was transformed a second time
    assert any(name.startswith("cube.adjoint") and name.endswith(".primal") for name in prog.functions)
    # oracle: finite differences of the forward-mode derivative
    cube = reference_function(SECOND, "cube")
    assert close(finite_diff(lambda x: dual_eval(cube, [x], 0), [2.0], 0), 12.0, 1e-5)


CLOSURE = """
fn scale_by(c) { return fn(x) { return c * x; }; }
"""


def test_criterion_07_closure_gradient():
    prog = Program(compile_source(CLOSURE))
    c, x = 1.5, 0.8
    (clo,) = prog.call("scale_by", c)
    with prog.gradient_context():
        (y,), pb = prog.pullback(clo, x)
        env_grad, dx = prog.pullback_apply(pb, 1.0)
    assert y == c * x
    assert isinstance(env_grad, ClosureAdjoint)
    assert env_grad.env == x and dx == c

    def through_capture(cc):
        (g,) = prog.call("scale_by", cc)
        return prog.apply(g, [x])[0]

    assert close(env_grad.env, finite_diff(through_capture, [c], 0), 1e-5)


def test_criterion_08_trace_size():
    sizes = set()
    for n in (1, 10, 100):
        y, tape, xs = trace(src("pow"), "pow", [1.01, n], traced=[0])
        assert tape.count("*") == n
        assert len(tape) == n
        prog = Program(compile_source(src("pow")))
        _, adj = prog.differentiate("pow")
        sizes.add(instructions(adj))
        (g, _) = prog.gradient("pow", 1.01, float(n))
        assert close(g, tape.gradient(y, xs)[0], 1e-12)
    assert len(sizes) == 1


def test_criterion_09_stack_discipline():
    runs = 0
    for k in range(500):
        text, args = random_case(FuzzConfig(seed=7 * 1_000_003 + k))
        prog = Program(compile_source(text), track_stacks=True)
        prog.gradient("f", *args)
        pushes, pops = prog.stack_balance()
        assert pushes == pops, (k, pushes, pops)
        assert prog.stacks_balanced(), k
        runs += pushes > 0
    assert runs > 0
    prog = Program(compile_source(src("pow")))
    _, pb = prog.pullback("pow", 2.0, 3.0)
    prog.pullback_apply(pb, 1.0)
    try:
        prog.pullback_apply(pb, 1.0)
    except PullbackReuseError as e:
        assert "already consumed" in str(e)
    else:
        raise AssertionError("second invocation of a one-shot pullback did not raise")


def _pullback_at(prog, args, dy):
    with prog.gradient_context():
        _, pb = prog.pullback("f", *args)
        return prog.pullback_apply(pb, dy)


def test_criterion_10_linearity():
    rng = random.Random(10)
    checked, violations = 0, []
    for k in range(100):
        text, args = random_case(FuzzConfig(seed=50_000 + k).straight_line())
        prog = Program(compile_source(text))
        (y,), _ = prog.pullback("f", *args)
        if not math.isfinite(y):
            continue
        g1, g2 = rng.uniform(-2, 2), rng.uniform(-2, 2)
        a, b = rng.uniform(-2, 2), rng.uniform(-2, 2)
        lhs = _pullback_at(prog, args, a * g1 + b * g2)
        r1 = _pullback_at(prog, args, g1)
        r2 = _pullback_at(prog, args, g2)
        for i, (u, v, w) in enumerate(zip(lhs[1:], r1[1:], r2[1:])):
            rhs = accumulate(scale(v, a), scale(w, b))
            u = 0.0 if u is ZERO else u
            rhs = 0.0 if rhs is ZERO else rhs
            assert is_number(u) and is_number(rhs)
            if not close(u, rhs, 1e-12):
                violations.append((50_000 + k, i, u, rhs, abs(u - rhs) / max(abs(u), abs(rhs))))
        checked += 1
    assert checked >= 95
    assert not violations, violations


def _run_standalone():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    ok = True
    for i, t in enumerate(tests, 1):
        try:
            t()
            status = "PASS"
        except Exception as e:  # report and keep going
            status = f"FAIL ({type(e).__name__}: {e})"
            ok = False
        print(f"criterion {i:2d} {CRITERIA[i]}: {status}")
    return ok


if __name__ == "__main__":
    sys.exit(0 if _run_standalone() else 1)
