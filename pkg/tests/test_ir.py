from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from ssaad.adjoint import differentiate
from ssaad.frontend.lower import compile_source
from ssaad.gradcheck.fuzz import FuzzConfig, random_program
from ssaad.ir import IRSyntaxError, parse_ir, print_ir, validate

GOLDEN = Path(__file__).parent / "golden"

POW = """\
block #1:
  goto #2
block #2:
  %1 <- phi(#1 -> n, #3 -> %4)
  %2 <- phi(#1 -> 1.0, #3 -> %5)
  %3 <- call >(%1, 0.0)
  goto #4 if not %3
block #3:
  %4 <- call -(%1, 1.0)
  %5 <- call *(%2, x)
  goto #2
block #4:
  return %2"""


def rules(f):
    return {d.rule for d in validate(f)}


def test_pow_is_valid():
    assert validate(parse_ir(POW, name="pow", params=("self", "x", "n"))) == []


def test_entry_phi_rejected():
    f = parse_ir("""\
block #1:
  %1 <- phi(#2 -> x)
  goto #2
block #2:
  goto #1""", params=("self", "x"))
    assert "entry-phi" in rules(f)


def test_use_not_dominated():
    f = parse_ir("""\
block #1:
  %1 <- call >(x, 0.0)
  goto #3 if %1
block #2:
  %5 <- call sin(x)
  goto #3
block #3:
  %6 <- call cos(%5)
  return %6""", params=("self", "x"))
    f2 = parse_ir("""\
block #1:
  %1 <- call sin(%5)
  goto #2
block #2:
  %5 <- call cos(x)
  return %5""", params=("self", "x"))
    assert rules(f) == {"dominance"}
    assert rules(f2) == {"dominance"}


def test_smallest_print():
    f = parse_ir("block #1:\n  return x", params=("self", "x"))
    assert print_ir(f) == "block #1:\n  return x"


def test_duplicate_definition():
    text = """\
block #1:
  %3 <- call sin(x)
  %3 <- call cos(x)
  return %3"""
    try:
        f = parse_ir(text, params=("self", "x"))
    except IRSyntaxError:
        return
    assert "single-assignment" in rules(f)


def test_syntax_error_position():
    with pytest.raises(IRSyntaxError) as e:
        parse_ir("block #1:\n  %1 <- cal sin(x)\n  return %1", params=("self", "x"))
    assert "2:" in str(e.value)


def test_adjoint_listing_parses():
    text = """\
block #1:
  goto #3
block #2:
  %3, %4 <- call alpha(%7)(%2)
  %5 <- call +(%1, %4)
  goto #3
block #3:
  %1 <- phi(#1 -> 0, #2 -> %5)
  %2 <- phi(#1 -> dy, #2 -> %3)
  goto #2 if alpha(%1)
block #4:
  return 0, %1, 0"""
    f = parse_ir(text, name="pow.adjoint", params=("self", "dy"))
    assert validate(f) == []
    assert print_ir(f) == text


@pytest.mark.parametrize("name", ["pow", "leaky", "ratio"])
def test_golden_round_trip(name):
    for stage in ("ssa", "primal", "adjoint"):
        text = (GOLDEN / f"{name}.{stage}").read_text().rstrip("\n")
        f = parse_ir(text)
        assert print_ir(f, header=True) == text
        assert validate(f) == []


def test_pow_primal_golden():
    f = parse_ir(POW, name="pow", params=("self", "x", "n"))
    primal, _ = differentiate(f)
    assert print_ir(primal, header=True) == (GOLDEN / "pow.primal").read_text().rstrip("\n")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip_on_generated_programs(seed):
    for f in compile_source(random_program(FuzzConfig(seed=seed))):
        for g in (f, *differentiate(f)):
            g = getattr(g, "ir", g)
            text = print_ir(g, header=True)
            back = parse_ir(text)
            assert back == g
            assert print_ir(back, header=True) == text
