"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed at the end of the
pytest run and also when this file is executed directly.  These runs take
several minutes each and are marked ``slow``.
"""
import time
import warnings

import numpy as np
import pytest

from isofuzz import corpus
from isofuzz.analyzer import chi2_statistic, group_inputs
from isofuzz.campaign import Campaign, CampaignSpec, run_campaign
from isofuzz.config import parse_config
from isofuzz.executor import measure_sample, setup_environment
from isofuzz.generator import generate_inputs, generate_program, observer_actors
from isofuzz.isa import data_va
from isofuzz.model import ContractModel
from isofuzz.package import load_package, package_from
from isofuzz.template import parse_template

from conftest import ACCEPTANCE, build_case

pytestmark = pytest.mark.slow

SEED = 0
PROGRAMS = 1000
CLASSES, VARIANTS = 10, 5


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def campaign(name, n=PROGRAMS, stop=False, cfg=None, schedule=None):
    s = corpus.scenario(name)
    camp = Campaign(parse_template(s.template), cfg or s.config, s.template)
    t = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_campaign(CampaignSpec(name, name, n, CLASSES, VARIANTS, SEED, stop,
                                        schedule=schedule), camp)
    return res, time.perf_counter() - t


# ---------------------------------------------------------------------------
# 1: every injected leak class is found

# each entry is a leak family; a family is found when any of its rows is
DETECT = [("k2u-mem-u-bit",), ("h2v-mem-p-bit",), ("v2v-mem-a-bit", "v2v-mem-d-bit"),
          ("k2u-mem-a-bit", "k2u-mem-d-bit"), ("k2u-comp-dss",), ("k2u-reg-register",),
          ("k2u-reg-umip",)]


def test_c1_detection():
    rows, ok = [], True
    for family in DETECT:
        hit = False
        for name in family:
            res, dt = campaign(name, stop=True)
            found = bool(res.violations)
            hit |= found
            ok &= dt < 300
            rows.append(f"{name}={'found@' + str(res.programs - 1) if found else 'none'}"
                        f"({dt:.0f}s)")
        ok &= hit
    assert record(1, ok, " ".join(rows))


# ---------------------------------------------------------------------------
# 2 and 7: no false positives; the ladder is cheap

_noisy = {}


def _noisy_campaign(schedule=None):
    key = schedule or "ladder"
    if key not in _noisy:
        cfg = corpus.scenario("k2u-mem-u-bit").config.with_bugs().with_executor(
            noise_probability=0.05)
        _noisy[key] = campaign("k2u-mem-u-bit", cfg=cfg, schedule=schedule)
    return _noisy[key]


def test_c2_soundness():
    noisy, t1 = _noisy_campaign()
    quiet = []
    t2 = 0.0
    per = 10000 // len(corpus.TEMPLATES)
    for tmpl in corpus.TEMPLATES:
        name = next(s.name for s in corpus.scenario_corpus() if s.template_name == tmpl)
        cfg = corpus.scenario(name).config.with_bugs()
        res, dt = campaign(name, n=per, cfg=cfg)
        quiet.append(res)
        t2 += dt
    n_quiet = sum(r.programs for r in quiet)
    v_quiet = sum(len(r.violations) for r in quiet)
    ok = not noisy.violations and v_quiet == 0 and n_quiet == 10000 and t1 + t2 < 1800
    assert record(2, ok, f"noise 0.05: {len(noisy.violations)} reports/{noisy.programs}; "
                         f"noise 0: {v_quiet} reports/{n_quiet}; {t1 + t2:.0f}s")


def test_c7_ladder_economy():
    ladder, _ = _noisy_campaign()
    fixed, _ = _noisy_campaign((320,))
    ratio = ladder.measurements / fixed.measurements
    same = sorted((p, r.input_a, r.input_b) for p, r in ladder.violations) == \
        sorted((p, r.input_a, r.input_b) for p, r in fixed.violations)
    ok = ratio <= 0.2 and same
    assert record(7, ok, f"ladder {ladder.measurements} vs fixed-320 {fixed.measurements} "
                         f"({ratio:.1%}); reports {len(ladder.violations)} vs "
                         f"{len(fixed.violations)}")


# ---------------------------------------------------------------------------
# 3: mitigations

MITIGATIONS = [
    ("v2v-a-bit+flush_buffers", False), ("k2u-a-bit+flush_buffers", False),
    ("v2v-a-bit+full_cache_flush", True), ("k2u-a-bit+full_cache_flush", True),
    ("h2v-p-bit+flush_l1d", False),
    ("k2u-comp-dss+dummy_div", False), ("k2u-comp-dss+dummy_div-in-handler", True),
    ("k2u-u-bit+kpti-clear_present", True), ("k2u-u-bit+kpti-unmap+flush_buffers", False),
]


def test_c3_mitigations():
    rows, ok = [], True
    for name, leaks in MITIGATIONS:
        res, dt = campaign(name, stop=leaks)
        n = len({p for p, _ in res.violations})
        good = n >= 1 if leaks else n == 0
        ok &= good
        rows.append(f"{name}={n}{'' if good else '!'}")
    assert record(3, ok, " ".join(rows))


# ---------------------------------------------------------------------------
# 4: chi-squared


def test_c4_chi2():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10000):
        k = int(rng.integers(1, 16))
        n = int(rng.integers(1, 500))
        c1 = rng.multinomial(n, rng.dirichlet(np.ones(k)))
        c2 = rng.multinomial(n, rng.dirichlet(np.ones(k)))
        both = (c1 + c2) > 0
        a, b = c1[both].astype(float), c2[both].astype(float)
        e = (a + b) / 2
        want = (((a - e) ** 2 / e).sum() + ((b - e) ** 2 / e).sum()) / 2
        got = chi2_statistic({i: int(v) for i, v in enumerate(c1) if v},
                             {i: int(v) for i, v in enumerate(c2) if v})
        if want:
            worst = max(worst, abs(got - want) / want)
        else:
            worst = max(worst, abs(got))
    worked = (chi2_statistic({0: 15}, {0: 15}), chi2_statistic({0: 15}, {0: 10, 1: 5}),
              chi2_statistic({0: 15}, {1: 15}))
    ok = worst <= 1e-9 and worked == (0.0, 3.0, 15.0)
    assert record(4, ok, f"max rel err {worst:.2e}; worked values {worked}")


# ---------------------------------------------------------------------------
# 5: contract traces of the three-input example

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


def test_c5_contract_traces():
    cfg = parse_config("actors:\n  main: {mode: host}\n  guest: {mode: guest, observer: true}\n")
    prog = generate_program(parse_template(SPLIT), cfg, 0)
    inputs = generate_inputs(cfg, 1, 3, 0)
    for inp, rax in zip(inputs, (0xA, 0xB, 0xB)):
        inp.regs[0, 0] = data_va(0) + rax
    pkg = package_from(prog, cfg, inputs)
    labels = {n: i * 8 for a, i, n in prog.labels}
    model = ContractModel(pkg, cfg)
    got = [model.run(i).serialize() for i in pkg.inputs]
    want = [f"PC 0:{labels['victim']:x}\nLD {a:x}\nST {a:x}\nPC 1:{labels['g1']:x}\n"
            for a in (0xA, 0xB, 0xB)]
    classes = group_inputs([model.run(i) for i in pkg.inputs],
                           [i.digest(pkg.observers) for i in pkg.inputs])
    members = sorted(tuple(m + 1 for m in c.members) for c in classes)
    ok = got == want and members == [(1,), (2, 3)]
    assert record(5, ok, f"traces {'match' if got == want else 'differ'}; classes {members}")


# ---------------------------------------------------------------------------
# 6: noninterference of the leak-free machine


def test_c6_noninterference():
    rng = np.random.default_rng(6)
    hw_pairs = hw_bad = ct_pairs = ct_bad = 0
    per = 50
    for tmpl in corpus.TEMPLATES:
        s = next(s for s in corpus.scenario_corpus() if s.template_name == tmpl)
        cfg = s.config.with_bugs()
        obs = observer_actors(cfg)
        vic = [a for a in range(len(cfg.actors)) if a not in obs]
        t = parse_template(s.template)
        for seed in range(per):
            prog = generate_program(t, cfg, seed)
            (base,) = generate_inputs(cfg, 1, 2, seed)[:1]
            pkg = package_from(prog, cfg, [base])
            ctx = setup_environment(pkg, cfg)
            model = ContractModel(pkg, cfg)
            hw = int(measure_sample(ctx, base, 1)[0])
            ct = model.run(base)
            for _ in range(per):
                v = base.copy()
                v.data[vic] = rng.integers(-2 ** 63, 2 ** 63 - 1, v.data[vic].shape)
                v.regs[vic] = rng.integers(-2 ** 63, 2 ** 63 - 1, v.regs[vic].shape)
                hw_pairs += 1
                hw_bad += int(measure_sample(ctx, v, 1)[0]) != hw
                o = base.copy()
                o.data[obs] = rng.integers(-2 ** 63, 2 ** 63 - 1, o.data[obs].shape)
                o.regs[obs] = rng.integers(-2 ** 63, 2 ** 63 - 1, o.regs[obs].shape)
                ct_pairs += 1
                ct_bad += model.run(o) != ct
    ok = hw_pairs >= 10000 and ct_pairs >= 10000 and hw_bad == ct_bad == 0
    assert record(6, ok, f"victim mutations {hw_bad}/{hw_pairs} changed the hardware trace; "
                         f"observer mutations {ct_bad}/{ct_pairs} changed the contract trace")


# ---------------------------------------------------------------------------
# 8: throughput


def test_c8_throughput():
    s = corpus.scenario("k2u-mem-u-bit")
    t = parse_template(s.template)
    n, elapsed = 0, 0.0
    for seed in range(40):
        prog = generate_program(t, s.config, seed)
        inputs = generate_inputs(s.config, CLASSES, VARIANTS, seed)
        ctx = setup_environment(package_from(prog, s.config, inputs), s.config, seed)
        measure_sample(ctx, inputs[0], 1)  # compile outside the clock
        t0 = time.perf_counter()
        for inp in inputs:
            measure_sample(ctx, inp, 15)
            n += 15
        elapsed += time.perf_counter() - t0
    rate = n / elapsed
    res, _ = campaign("k2u-mem-u-bit", n=100)
    assert record(8, rate >= 1000, f"simulator {rate:.0f} measurements/s; end-to-end campaign "
                                   f"{res.measurements_per_second:.0f}/s")


# ---------------------------------------------------------------------------
# 9: determinism


def test_c9_determinism(tmp_path):
    s = corpus.scenario("k2u-mem-u-bit")
    (tmp_path / "t.asm").write_text(s.template)
    (tmp_path / "c.yaml").write_text(s.config_text)
    dirs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        run_campaign(CampaignSpec(tmp_path / "t.asm", tmp_path / "c.yaml", 100, CLASSES,
                                  VARIANTS, 7, out_dir=out))
        dirs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = dirs[0] == dirs[1] and len(dirs[0]) > 1
    rng = np.random.default_rng(9)
    names = [s.name for s in corpus.scenario_corpus()]
    bad = 0
    for i in range(10000):
        _, pkg, _ = build_case(names[i % len(names)], int(rng.integers(2 ** 32)),
                               n_classes=int(rng.integers(1, 4)), n_variants=2)
        raw = pkg.to_bytes()
        back = load_package(raw)
        bad += back != pkg or back.to_bytes() != raw
    ok = same and bad == 0
    assert record(9, ok, f"re-run reports {'identical' if same else 'differ'} "
                         f"({len(dirs[0])} files); package round-trip failures {bad}/10000")


if __name__ == "__main__":  # pragma: no cover
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
