import math
from pathlib import Path

import pytest

from ssaad.frontend import syntax as S
from ssaad.frontend.lower import compile_source
from ssaad.gradcheck import numbers as N
from ssaad.gradcheck.fuzz import FuzzConfig, random_case, random_program
from ssaad.gradcheck.oracles import (
    OracleError,
    check_gradient,
    dual_eval,
    dual_probe,
    finite_diff,
    reference_function,
)
from ssaad.gradcheck.tracer import trace
from ssaad.ir import validate
from ssaad.runtime.interp import Program

DATA = Path(__file__).parent / "data"
POW = (DATA / "pow.adl").read_text()
RATIO = (DATA / "ratio.adl").read_text()
LEAKY = (DATA / "leaky.adl").read_text()


def test_finite_diff_sin():
    assert finite_diff(math.sin, [0.0], 0) == pytest.approx(1.0, abs=1e-9)


def test_finite_diff_pow():
    f = reference_function(POW, "pow")
    assert finite_diff(f, [2.0, 3.0], 0) == pytest.approx(12.0, rel=1e-5)


def test_finite_diff_rejects_non_finite():
    with pytest.raises(OracleError):
        finite_diff(lambda x: math.inf, [1.0], 0)
    with pytest.raises(OracleError):
        finite_diff(math.sin, [1.0], 0, h=0.0)


def test_leaky_near_branch():
    _, near = dual_probe(LEAKY, "leaky", [1e-7], 0)
    assert near
    _, far = dual_probe(LEAKY, "leaky", [0.5], 0)
    assert not far


def test_dual_examples():
    assert dual_eval(reference_function(RATIO, "f"), [1.0, 2.0], 1) == pytest.approx(-0.16, rel=1e-14)
    assert dual_eval(reference_function(POW, "pow"), [2.0, 3.0], 0) == 12.0
    assert dual_eval(lambda x: 3.0, [1.0], 0) == 0.0


def test_dual_arithmetic():
    x = N.Dual(2.0, 1.0)
    y = (x * x + 1.0) / x
    assert y.val == 2.5 and y.eps == pytest.approx(0.75)
    assert N.num_exp(N.Dual(0.0, 1.0)).eps == 1.0


def test_check_pow():
    report = check_gradient(POW, "pow", [2.0, 3.0], atol=1e-8, rtol=1e-5)
    assert report.passed
    assert report.entries[0].fd == pytest.approx(12.0, rel=1e-5)


def test_check_leaky_kink():
    report = check_gradient(LEAKY, "leaky", [0.0])
    assert report.passed
    (e,) = report.entries
    assert e.fd is None and e.note == "near branch"
    assert "excluded fd (near branch)" in str(report)


def test_check_reports_wrong_gradient():
    # a deliberately broken program table: the IR computes 3x, the source x²
    src = "fn f(x) { return x * x; }"
    wrong = compile_source("fn f(x) { return 3 * x; }")
    report = check_gradient(src, "f", [1.0], functions=wrong)
    assert not report.passed
    assert not report.value_matches


def test_report_line_format():
    report = check_gradient(RATIO, "f", [1.0, 2.0])
    lines = report.lines()
    assert len(lines) == 4
    fields = lines[0].split()
    assert fields[0] == "0" and fields[-2:] == ["pass", "fd"]
    assert len(fields) == 7


def test_straight_line_seed():
    src = random_program(FuzzConfig(seed=1).straight_line())
    assert "while" not in src and "if" not in src


def test_loops_are_generated():
    cfg = FuzzConfig(seed=2, loop_prob=0.9, branch_prob=0.0)
    src = random_program(cfg)
    assert "while" in src
    k = len(S.parse(src).function("f").params)
    (y,) = Program(compile_source(src)).call("f", *[0.5] * k)
    assert isinstance(y, float)


def test_generator_is_deterministic():
    assert random_case(FuzzConfig(seed=9)) == random_case(FuzzConfig(seed=9))


def test_builtin_restriction():
    for s in range(30):
        src = random_program(FuzzConfig(seed=s, builtins=("sin",)))
        for banned in ("cos(", "exp(", "log(", "box(", "cons(", "^"):
            assert banned not in src


def test_pipeline_accepts_generated_programs():
    for seed in range(1000):
        src = random_program(FuzzConfig(seed=seed))
        S.parse(src)
        assert all(validate(f) == [] for f in compile_source(src))


def _nonkink_cases(n, start):
    for seed in range(start, start + n):
        src, args = random_case(FuzzConfig(seed=seed))
        yield seed, src, args


def test_ad_matches_dual_tightly():
    # away from branch thresholds, AD and forward mode agree within (1e-10, 1e-10)
    for seed, src, args in _nonkink_cases(150, 20_000):
        y, grads = Program(compile_source(src)).value_and_gradient("f", *args)
        if not math.isfinite(y):
            continue
        for i, g in enumerate(grads):
            d, near = dual_probe(src, "f", args, i)
            if near or not math.isfinite(d):
                continue
            assert abs(g - d) <= 1e-10 + 1e-10 * max(abs(g), abs(d)), (seed, i, g, d)


def test_oracles_agree_with_each_other():
    for seed, src, args in _nonkink_cases(150, 30_000):
        f = reference_function(src, "f")
        if not math.isfinite(f(*args)):
            continue
        for i in range(len(args)):
            d, near = dual_probe(src, "f", args, i)
            if near:
                continue
            fd = finite_diff(f, args, i)
            assert abs(fd - d) <= 1e-4 * max(1.0, abs(d)), (seed, i, fd, d)


@pytest.mark.parametrize("n", [1, 10, 100])
def test_tracer_records_one_multiply_per_iteration(n):
    y, tape, xs = trace(POW, "pow", [1.01, n], traced=[0])
    assert tape.count("*") == n
    assert tape.gradient(y, xs)[0] == pytest.approx(n * 1.01 ** (n - 1), rel=1e-12)
