"""Command-line entry point.

Exit codes: 0 success, 1 failed check, 2 input or evaluation error,
3 contract error (for example a non-scalar result passed to ``grad``).
"""

from __future__ import annotations

import argparse
import sys

from . import adjoint as _adjoint
from . import analysis
from .frontend.lower import compile_source
from .frontend.syntax import FrontendError
from .gradcheck.fuzz import FuzzConfig, random_case
from .gradcheck.oracles import check_gradient
from .ir import IRSyntaxError, print_ir
from .primal import InstrumentError
from .runtime.interp import ContractError, Program
from .runtime.values import EvalError, format_number, format_value

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_CONTRACT = 0, 1, 2, 3

STAGES = ("ssa", "cfg", "primal", "adjoint")


class _InputError(Exception):
    pass


def _number(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {s}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssaad", description="Reverse-mode AD on SSA programs.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dump", help="print a pipeline stage of one function")
    d.add_argument("path", help="adlang source file")
    d.add_argument("function")
    g = d.add_mutually_exclusive_group()
    for s in STAGES:
        g.add_argument(f"--dump-{s}", dest="stage", action="store_const", const=s,
                       help=f"print the {s} stage")
    d.set_defaults(stage="ssa")

    for name, text in (("eval", "evaluate a function"), ("grad", "print the gradient")):
        e = sub.add_parser(name, help=text)
        e.add_argument("path")
        e.add_argument("function")
        e.add_argument("args", nargs="*", type=_number)

    c = sub.add_parser("check", help="compare gradients against finite differences and dual numbers")
    c.add_argument("path")
    c.add_argument("function")
    c.add_argument("args", nargs="*", type=_number)
    c.add_argument("--atol", type=float, default=1e-8)
    c.add_argument("--rtol", type=float, default=1e-5)

    f = sub.add_parser("fuzz", help="check gradients of seeded random programs")
    f.add_argument("n", type=int)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--atol", type=float, default=1e-8)
    f.add_argument("--rtol", type=float, default=1e-5)
    f.add_argument("--verbose", action="store_true", help="print every failing program")
    return p


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise _InputError(f"cannot read {path}: {e.strerror}") from None


def _functions(path: str):
    fns = compile_source(_read(path))
    return fns, {f.name: f for f in fns}


def _function(table, name):
    try:
        return table[name]
    except KeyError:
        raise _InputError(f"unknown function {name}") from None


def cmd_dump(path: str, fname: str, stage: str, out) -> int:
    _, table = _functions(path)
    f = _function(table, fname)
    if stage == "ssa":
        text = print_ir(f, header=True)
    elif stage == "cfg":
        text = analysis.cfg(f).dump()
    else:
        primal, adj = _adjoint.differentiate(f)
        text = print_ir(primal if stage == "primal" else adj.ir, header=True)
    print(text, file=out)
    return EXIT_OK


def cmd_eval(path: str, fname: str, args, out) -> int:
    fns, table = _functions(path)
    _function(table, fname)
    res = Program(fns).call(fname, *args)
    print(" ".join(format_value(v) for v in res), file=out)
    return EXIT_OK


def cmd_grad(path: str, fname: str, args, out) -> int:
    fns, table = _functions(path)
    _function(table, fname)
    grads = Program(fns).gradient(fname, *args)
    print(" ".join(format_value(g) for g in grads), file=out)
    return EXIT_OK


def cmd_check(path: str, fname: str, args, atol: float, rtol: float, out) -> int:
    src = _read(path)
    fns = compile_source(src)
    _function({f.name: f for f in fns}, fname)
    report = check_gradient(src, fname, args, atol=atol, rtol=rtol, functions=fns)
    print(report, file=out)
    print("pass" if report.passed else "fail", file=out)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_fuzz(n: int, seed: int, atol: float, rtol: float, out, verbose: bool = False) -> int:
    passed = 0
    for k in range(n):
        case_seed = seed * 1_000_003 + k
        src, args = random_case(FuzzConfig(seed=case_seed))
        report = check_gradient(src, "f", args, atol=atol, rtol=rtol)
        if report.passed:
            passed += 1
            continue
        print(f"case {k} (seed {case_seed}) failed at {' '.join(map(format_number, args))}", file=out)
        if verbose:
            print(src, file=out)
        print(report, file=out)
    print(f"{passed}/{n} pass", file=out)
    return EXIT_OK if passed == n else EXIT_CHECK


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "dump":
            return cmd_dump(ns.path, ns.function, ns.stage, out)
        if ns.command == "eval":
            return cmd_eval(ns.path, ns.function, ns.args, out)
        if ns.command == "grad":
            return cmd_grad(ns.path, ns.function, ns.args, out)
        if ns.command == "check":
            return cmd_check(ns.path, ns.function, ns.args, ns.atol, ns.rtol, out)
        return cmd_fuzz(ns.n, ns.seed, ns.atol, ns.rtol, out, ns.verbose)
    except ContractError as e:
        print(f"error: {e}", file=err)
        return EXIT_CONTRACT
    except FrontendError as e:
        print(f"{ns.path}:{e}", file=err)
        return EXIT_INPUT
    except (_InputError, EvalError, IRSyntaxError, InstrumentError, _adjoint.AdjointError) as e:
        print(f"error: {e}", file=err)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
