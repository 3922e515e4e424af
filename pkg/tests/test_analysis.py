import itertools
import random
from pathlib import Path

import pytest

from ssaad import analysis as A
from ssaad.frontend.lower import compile_source
from ssaad.gradcheck.fuzz import FuzzConfig, random_program
from ssaad.ir import Return, parse_ir, validate
from ssaad.primal import is_differentiated
from ssaad.runtime.interp import Program

DATA = Path(__file__).parent / "data"


def load(name, fname=None):
    fns = compile_source((DATA / f"{name}.adl").read_text())
    return {f.name: f for f in fns}[fname or name]


def make_cfg(n, edges, exit=None):
    succs = {b: [] for b in range(1, n + 1)}
    preds = {b: [] for b in range(1, n + 1)}
    for a, b in edges:
        succs[a].append(b)
        preds[b].append(a)
    return A.Cfg(succs, preds, 1, exit)


def test_pow_cfg():
    assert A.cfg(load("pow")).edges() == [(1, 2), (2, 3), (2, 4), (3, 2)]


def test_single_block_cfg():
    f = parse_ir("block #1:\n  return x", params=("self", "x"))
    assert A.cfg(f).edges() == []


def test_leaky_diamond():
    assert A.cfg(load("leaky")).edges() == [(1, 2), (1, 3), (2, 3)]


def test_three_block_loop_dominators():
    # a loop whose header is the entry block
    g = make_cfg(3, [(1, 2), (1, 3), (2, 1)], exit=3)
    assert A.dominators(g) == {1: None, 2: 1, 3: 1}


def test_chain_and_diamond():
    assert A.dominators(make_cfg(3, [(1, 2), (2, 3)]))[3] == 2
    assert A.dominators(make_cfg(4, [(1, 2), (1, 3), (2, 4), (3, 4)]))[4] == 1


def test_unreachable_block_reported():
    with pytest.raises(A.CfgError):
        A.dominators(make_cfg(3, [(1, 2)]))


def _brute_dominates(g, d, b):
    # d dominates b iff b is unreachable from the entry once d is removed
    if d == b:
        return True
    seen, todo = set(), [g.entry] if g.entry != d else []
    while todo:
        x = todo.pop()
        if x in seen:
            continue
        seen.add(x)
        todo.extend(s for s in g.succs[x] if s != d)
    return b not in seen


def test_dominators_match_brute_force():
    rng = random.Random(1)
    checked = 0
    while checked < 300:
        n = rng.randint(1, 6)
        edges = {(a, b) for a in range(1, n + 1) for b in range(2, n + 1) if rng.random() < 0.35}
        g = make_cfg(n, sorted(edges))
        try:
            sets = A.dominator_sets(g)
        except A.CfgError:
            continue
        checked += 1
        for b, d in itertools.product(g.succs, repeat=2):
            assert (d in sets[b]) == _brute_dominates(g, d, b)


def test_reverse_pow():
    g = make_cfg(3, [(1, 2), (1, 3), (2, 1)], exit=3)
    r = A.reverse_cfg(g)
    assert sorted((a, b) for a, ss in r.succs.items() for b in ss) == [(1, 2), (2, 1), (3, 1)]
    assert (r.entry, r.exit) == (3, 1)


def test_reverse_single_block():
    g = make_cfg(1, [], exit=1)
    r = A.reverse_cfg(g)
    assert r.succs == {1: []} and r.entry == r.exit == 1


def test_reverse_requires_single_exit():
    with pytest.raises(A.CfgError):
        A.reverse_cfg(make_cfg(3, [(1, 2), (1, 3)]))


def test_reverse_is_involution_on_fuzzed_cfgs():
    for seed in range(100):
        for f in compile_source(random_program(FuzzConfig(seed=seed))):
            g = A.cfg(f)
            rr = A.reverse_cfg(A.reverse_cfg(g))
            assert (rr.entry, rr.exit) == (g.entry, g.exit)
            assert {b: sorted(s) for b, s in rr.succs.items()} == {b: sorted(s) for b, s in g.succs.items()}


def test_merge_returns_leaky():
    f = parse_ir("""\
block #1:
  %1 <- call >(x, 0.0)
  goto #3 if %1
block #2:
  %2 <- call *(0.01, x)
  return %2
block #3:
  return x""", name="leaky", params=("self", "x"))
    g = A.merge_returns(f)
    rets = [b for b in g.blocks if isinstance(b.terminator, Return)]
    assert len(rets) == 1 and len(rets[0].phis) == 1
    assert validate(g) == []


def test_merge_returns_identity():
    f = load("ratio", "f")
    assert A.merge_returns(f) is f


def test_merge_returns_three_way():
    text = """\
block #1:
  %1 <- call >(x, 1.0)
  goto #4 if %1
block #2:
  %2 <- call <(x, -1.0)
  goto #5 if %2
block #3:
  %3 <- call sin(x)
  return %3
block #4:
  %4 <- call *(x, x)
  return %4
block #5:
  %5 <- call neg(x)
  return %5"""
    f = parse_ir(text, name="g", params=("self", "x"))
    g = A.merge_returns(f)
    exit_block = g.blocks[A.cfg(g).exit - 1]
    assert len(exit_block.phis) == 1 and len(exit_block.phis[0].incomings) == 3
    p_old, p_new = Program([f]), Program([g])
    rng = random.Random(0)
    for _ in range(100):
        x = rng.uniform(-3, 3)
        assert p_old.call("g", x) == p_new.call("g", x)


def test_reaching_leaky():
    rg = A.reaching_gradients(load("leaky"), is_differentiated)
    # the multiply in #2 and the phi edge from #1 meet at the adjoint of #1
    assert ("x", 1) in rg.phi_blocks
    assert rg.at("x", 1).kind == "merged"
    assert rg.at("x", 1).sources == {1, 2}


def test_reaching_pow():
    rg = A.reaching_gradients(load("pow"), is_differentiated)
    assert rg.contributions["x"] == {3}
    # the path that skips the loop body supplies a zero
    assert ("x", 2, 4) in rg.zero_inits


def test_reaching_single_block():
    f = parse_ir("""\
block #1:
  %1 <- call sin(x)
  %2 <- call cos(%1)
  return %2""", params=("self", "x"))
    rg = A.reaching_gradients(f)
    assert not rg.phi_blocks and not rg.zero_inits
    assert rg.at(1, 1).kind == "none"
