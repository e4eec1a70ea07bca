import numpy as np
import pytest

from isofuzz import corpus
from isofuzz.analyzer import group_inputs
from isofuzz.config import parse_config
from isofuzz.executor import final_state, setup_environment
from isofuzz.generator import generate_inputs, generate_program
from isofuzz.isa import data_va
from isofuzz.model import ContractModel, ContractTrace, Event, ModelBudgetExceeded, run_model
from isofuzz.package import package_from
from isofuzz.template import parse_template

from conftest import build_case

# victim code runs between two halves of the guest's measurement
SPLIT = """\
.section .main
  .macro.set_h2g_target.g0:
  .macro.set_g2h_target.victim:
  .macro.switch_h2g:
.victim:
  LOAD r1, [r0]
  ADD r1, r1, 1
  STORE [r0], r1
  .macro.set_h2g_target.g1:
  .macro.switch_h2g:
.section .guest
.g0:
  .macro.measurement_start:
  .macro.switch_g2h:
.g1:
  .macro.measurement_end:
"""
SPLIT_CONFIG = """\
actors:
  main: {mode: host}
  guest: {mode: guest, observer: true}
"""


def _split(rax_values, text=SPLIT):
    cfg = parse_config(SPLIT_CONFIG)
    prog = generate_program(parse_template(text), cfg, 0)
    inputs = generate_inputs(cfg, 1, len(rax_values), 0)
    for inp, rax in zip(inputs, rax_values):
        inp.regs[0, 0] = data_va(0) + rax
    return package_from(prog, cfg, inputs), prog


def test_split_measurement_traces():
    pkg, prog = _split([0xA, 0xB, 0xB])
    victim = next(i for a, i, n in prog.labels if n == "victim")
    g1 = next(i for a, i, n in prog.labels if n == "g1")
    model = ContractModel(pkg)
    traces = [model.run(inp) for inp in pkg.inputs]
    assert traces[0].events == (Event("PC", 0, victim * 8), Event("LD", 0xA), Event("ST", 0xA),
                                Event("PC", 1, g1 * 8))
    assert traces[0].serialize() == f"PC 0:{victim * 8:x}\nLD a\nST a\nPC 1:{g1 * 8:x}\n"
    assert traces[1] == traces[2] != traces[0]
    classes = group_inputs(traces, [inp.digest(pkg.observers) for inp in pkg.inputs])
    assert sorted(c.members for c in classes) == [(0,), (1, 2)]


def test_straight_line_victim_has_only_pc_events():
    t = SPLIT.replace("  LOAD r1, [r0]\n  ADD r1, r1, 1\n  STORE [r0], r1\n",
                     "  ADD r1, r1, 1\n  XOR r2, r1, r3\n")
    cfg = parse_config(SPLIT_CONFIG)
    prog = generate_program(parse_template(t), cfg, 0)
    pkg = package_from(prog, cfg, generate_inputs(cfg, 1, 2, 0))
    tr = run_model(pkg, pkg.inputs[0])
    assert [e.kind for e in tr.events] == ["PC", "PC"]


def test_observer_accesses_not_recorded():
    t = SPLIT.replace("  .macro.measurement_end:", "  LOAD r1, [r6]\n  .macro.measurement_end:")
    pkg, _ = _split([0xA, 0xA], t)
    assert [e.kind for e in run_model(pkg, pkg.inputs[0]).events] == ["PC", "LD", "ST", "PC"]


def test_unaligned_address_recorded():
    pkg, _ = _split([0x13, 0x13])
    tr = run_model(pkg, pkg.inputs[0])
    assert Event("LD", 0x13) in tr.events


def test_no_tracing_outside_measurement():
    t = SPLIT.replace("  .macro.measurement_start:\n", "").replace(
        "  .macro.measurement_end:", "  .macro.measurement_start:\n  .macro.measurement_end:")
    cfg = parse_config(SPLIT_CONFIG)
    prog = generate_program(parse_template(t), cfg, 0)
    pkg = package_from(prog, cfg, generate_inputs(cfg, 1, 2, 0))
    assert len(run_model(pkg, pkg.inputs[0])) == 0


def test_serialization_round_trip():
    pkg, _ = _split([0xA, 0xB])
    tr = run_model(pkg, pkg.inputs[0])
    assert ContractTrace.parse(tr.serialize()) == tr
    assert ContractTrace.parse(tr.serialize()).hash == tr.hash
    assert run_model(pkg, pkg.inputs[1]).hash != tr.hash
    assert str(Event("LD", -16)) == "LD -10"


@pytest.mark.parametrize("s", [s for s in corpus.scenario_corpus() if "+" not in s.name],
                         ids=lambda s: s.name)
def test_replay_stable(s):
    for seed in range(5):
        _, pkg, cfg = build_case(s.name, seed)
        model = ContractModel(pkg, cfg)
        for inp in pkg.inputs:
            assert model.run(inp).serialize() == model.run(inp).serialize()


@pytest.mark.parametrize("name", ["h2v-mem-a-bit", "v2v-mem-d-bit", "k2u-mem-u-bit",
                                  "u2u-comp-dss", "k2u-reg-register"])
def test_model_matches_simulator_architecturally(name):
    for seed in range(40):
        _, pkg, cfg = build_case(name, seed, clean=True)
        model = ContractModel(pkg, cfg)
        ctx = setup_environment(pkg, cfg)
        for inp in pkg.inputs:
            r1, m1 = model.final_state(inp)
            r2, m2 = final_state(ctx, inp)
            assert np.array_equal(r1, r2), seed
            assert np.array_equal(m1, m2), seed


def test_budget():
    t = ".section .main\n  .macro.measurement_start:\n.l:\n  JMP .l\n"
    cfg = parse_config("actors:\n- main:\n  - observer: true\n")
    prog = generate_program(parse_template(t), cfg, 0)
    pkg = package_from(prog, cfg, generate_inputs(cfg, 1, 2, 0))
    with pytest.raises(ModelBudgetExceeded):
        run_model(pkg, pkg.inputs[0])
