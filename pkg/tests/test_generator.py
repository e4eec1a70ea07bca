import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isofuzz import corpus, generator
from isofuzz.config import parse_config
from isofuzz.generator import (CrossActorWarning, GenerationError, cross_actor_access_pass,
                               expand_random_instructions, generate_inputs, generate_program,
                               observer_actors, victim_actors)
from isofuzz.isa import Opcode, data_va
from isofuzz.template import parse_template

from conftest import VM_TEMPLATE

MASK = 0xFC0


def _units(code, lo, hi):
    """Independent re-parse of a random block into drawn units.  Returns the
    unit count; asserts every memory access and register divisor carries its
    instrumentation."""
    n, i = 0, lo
    while i < hi:
        ins = code[i]
        if (ins.op == Opcode.AND and ins.use_imm and ins.imm == MASK and i + 2 < hi
                and code[i + 1].op == Opcode.ADD and code[i + 1].src2 == 6
                and not code[i + 1].use_imm and code[i + 1].dst == ins.dst
                and code[i + 1].src1 == ins.dst
                and code[i + 2].op in (Opcode.LOAD, Opcode.STORE)
                and code[i + 2].src1 == ins.dst):
            assert code[i + 2].disp in (0, 4096, 8192)
            i += 3
        elif (ins.op == Opcode.OR and ins.use_imm and ins.imm == 1 and ins.dst == ins.src1
              and i + 1 < hi and code[i + 1].op == Opcode.DIV and not code[i + 1].use_imm
              and code[i + 1].src2 == ins.dst):
            i += 2
        else:
            assert ins.op not in (Opcode.LOAD, Opcode.STORE), f"bare memory op at {i}"
            if ins.op == Opcode.DIV:
                assert ins.use_imm and ins.imm & 0xFFFFFFFF != 0, f"unguarded DIV at {i}"
            if ins.op == Opcode.BR:
                assert ins.imm >= 1 and i + ins.imm <= hi
            i += 1
        n += 1
    return n


def _block_bounds(prog, a):
    """Random blocks are the stretches between placeholder NOPs."""
    marks = [m.index for m in prog.macros if m.owner == a]
    edges = [-1] + marks + [len(prog.code[a])]
    return [(x + 1, y) for x, y in zip(edges, edges[1:]) if y > x + 1]


@pytest.mark.parametrize("seed", range(40))
def test_n64_instrumented(vm_template, vm_config, seed):
    prog = generate_program(vm_template, vm_config, seed)
    for a in range(2):
        (lo, hi), = _block_bounds(prog, a)
        assert _units(prog.code[a], lo, hi) == 64
        for ins in prog.code[a][lo:hi]:
            if ins.op not in (Opcode.STORE, Opcode.BR, Opcode.CMP, Opcode.NOP, Opcode.FENCE):
                assert ins.dst < 6  # r6/r7 are never written


def test_n0_is_skeleton(vm_config):
    zero = VM_TEMPLATE.replace("random_instructions.64", "random_instructions.0")
    bare = VM_TEMPLATE.replace("  .macro.random_instructions.64:\n", "")
    a = generate_program(parse_template(zero), vm_config, 1)
    b = generate_program(parse_template(bare), vm_config, 99)
    assert a == b
    assert all(ins.op == Opcode.NOP for c in a.code for ins in c)


def test_deterministic(vm_template, vm_config):
    assert generate_program(vm_template, vm_config, 7) == generate_program(vm_template, vm_config, 7)
    assert generate_program(vm_template, vm_config, 7) != generate_program(vm_template, vm_config, 8)


def test_vm_macro_table(vm_template, vm_config):
    prog = generate_program(vm_template, vm_config, 0)
    assert len(prog.macros) == 8
    set_h2g = next(m for m in prog.macros if m.name == "set_h2g_target")
    assert (set_h2g.arg0, set_h2g.arg1) == (1, 0)
    set_g2h = next(m for m in prog.macros if m.name == "set_g2h_target")
    assert set_g2h.arg0 == 0 and prog.code[0][set_g2h.arg1].op == Opcode.NOP


@given(st.integers(0, 2 ** 32))
@settings(max_examples=200, deadline=None)
def test_macros_address_nops(seed):
    s = corpus.scenario("u2u-mem-a-bit")
    prog = generate_program(parse_template(s.template), s.config, seed)
    for m in prog.macros:
        assert prog.code[m.owner][m.index].op == Opcode.NOP


def test_empty_allowlist(vm_template, vm_config):
    with pytest.raises(GenerationError):
        expand_random_instructions(vm_template, replace(vm_config, instruction_allowlist=()), 0)


def test_observer_div_pass_disabled():
    s = corpus.scenario("k2u-comp-dss")
    obs = observer_actors(s.config)[0]
    bare = 0
    for seed in range(50):
        prog = generate_program(parse_template(s.template), s.config, seed)
        for a, code in enumerate(prog.code):
            for i, ins in enumerate(code):
                if ins.op == Opcode.DIV and not ins.use_imm:
                    guarded = i and code[i - 1].op == Opcode.OR and code[i - 1].dst == ins.src2
                    if a == obs:
                        bare += not guarded
                    else:
                        assert guarded
    assert bare > 0


# ---------------------------------------------------------------------------
# cross-actor access


def _k2u():
    s = corpus.scenario("k2u-mem-u-bit")
    return parse_template(s.template), s.config


def test_cross_actor_range_1000_seeds():
    t, cfg = _k2u()
    user = 1
    lo, hi = data_va(0), data_va(0) + 3 * 4096
    for seed in range(1000):
        base = expand_random_instructions(t, cfg, seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CrossActorWarning)
            prog = cross_actor_access_pass(base, cfg, seed)
        diff = [i for i, (x, y) in enumerate(zip(base.code[user], prog.code[user])) if x != y]
        if not diff:
            assert prog.warnings
            continue
        (i,) = diff
        ins = prog.code[user][i]
        assert ins.op in (Opcode.LOAD, Opcode.STORE)
        # base register holds data_va(user) + (r & mask) after instrumentation
        for off in (0, MASK):
            ea = data_va(user) + off + ins.disp
            assert lo <= ea < hi
        assert prog.code[0] == base.code[0]


def test_cross_actor_no_memory_ops():
    t, cfg = _k2u()
    cfg = replace(cfg, instruction_allowlist=("ADD", "XOR"))
    base = expand_random_instructions(t, cfg, 0)
    with pytest.warns(CrossActorWarning):
        out = cross_actor_access_pass(base, cfg, 0)
    assert out.code == base.code and out.warnings


def test_generate_program_applies_pass():
    t, cfg = _k2u()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        progs = [generate_program(t, cfg, s) for s in range(20)]
    out_of_box = 0
    for p in progs:
        out_of_box += any(ins.op in (Opcode.LOAD, Opcode.STORE) and ins.disp < 0
                          for ins in p.code[1])
    assert out_of_box >= 15


# ---------------------------------------------------------------------------
# inputs


def test_inputs_one_class(vm_config):
    a, b = generate_inputs(vm_config, 1, 2, 0)
    obs = observer_actors(vm_config)
    assert a.actor_bytes(obs[0]) == b.actor_bytes(obs[0])
    assert a.actor_bytes(0) != b.actor_bytes(0)


def test_inputs_same_seed(vm_config):
    assert generate_inputs(vm_config, 3, 4, 5) == generate_inputs(vm_config, 3, 4, 5)


def test_inputs_5x10(vm_config):
    inputs = generate_inputs(vm_config, 5, 10, 11)
    assert len(inputs) == 50
    obs, vic = observer_actors(vm_config), victim_actors(vm_config)
    assert len({i.digest(obs) for i in inputs}) == 5
    assert len({i.digest(vic) for i in inputs}) == 50
    for c in range(5):
        members = [i for i in inputs if i.class_id == c]
        assert len(members) == 10 and len({m.digest(obs) for m in members}) == 1


def test_inputs_shape(vm_config):
    (i, *_) = generate_inputs(vm_config, 2, 1, 0)
    assert i.data.shape == (2, 3 * 512) and i.regs.shape == (2, 6)


@pytest.mark.parametrize("nc,nv", [(1, 1), (0, 5), (3, 0)])
def test_inputs_need_two(vm_config, nc, nv):
    with pytest.raises(GenerationError):
        generate_inputs(vm_config, nc, nv, 0)


def test_random_regs_leave_reserved():
    assert generator.RANDOM_REGS <= 6


def test_multi_observer_classes():
    cfg = parse_config("actors:\n- main:\n  - observer: true\n- u:\n  - privilege_level: user\n"
                       "  - observer: true\n- v:\n  - privilege_level: user\n")
    inputs = generate_inputs(cfg, 2, 3, np.random.default_rng(0))
    assert len({i.digest([0, 1]) for i in inputs}) == 2
