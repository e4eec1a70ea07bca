import numpy as np
import pytest

from isofuzz import corpus
from isofuzz.config import parse_config
from isofuzz.generator import generate_inputs, generate_program
from isofuzz.package import package_from
from isofuzz.template import parse_template

VM_TEMPLATE = """\
.section .main
.start:
  .macro.random_instructions.64:
  .macro.flush_buffers:
  .macro.set_h2g_target.vm_start:  # guest entry point
  .macro.set_g2h_target.end:       # where the guest returns
  .macro.switch_h2g:
.end:
.macro.fault_handler:
# falling off the end stops the run

.section .guest
.vm_start:
  .macro.measurement_start:
  .macro.random_instructions.64:
  .macro.measurement_end:
  .macro.switch_g2h:
"""

VM_CONFIG = """\
actors:
- main:
  - mode: "host"
  - privilege_level: "kernel"
- guest:
  - mode: "guest"
  - privilege_level: "kernel"
  - observer: true
  - data_properties:
    - writable: false
instruction_allowlist:
- ...
contract_observation_clause: load+store+pc
contract_execution_clause:
- noninterference
enable_prefetchers: false
"""


@pytest.fixture(scope="session")
def vm_template():
    return parse_template(VM_TEMPLATE)


@pytest.fixture(scope="session")
def vm_config():
    return parse_config(VM_CONFIG)


def build_case(name_or_pair, seed=0, n_classes=2, n_variants=3, clean=False):
    """(program, package, config) for a corpus scenario or (template, config)."""
    if isinstance(name_or_pair, str):
        s = corpus.scenario(name_or_pair)
        template, cfg = parse_template(s.template), s.config
    else:
        template, cfg = name_or_pair
    if clean:
        cfg = cfg.with_bugs()
    rng = np.random.default_rng(seed)
    prog = generate_program(template, cfg, rng)
    inputs = generate_inputs(cfg, n_classes, n_variants, rng)
    return prog, package_from(prog, cfg, inputs), cfg


# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
