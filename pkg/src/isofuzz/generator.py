"""Program and input generation.

Programs come from a template by expanding every ``random_instructions.N``
macro into N random instructions plus the instrumentation that keeps them
inside the owner's sandbox.  All other macros stay behind as NOP
placeholders and are listed in the macro table.
"""
from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels as K
from .config import CampaignConfig
from .isa import (SANDBOX_REG, Cond, Instruction, Opcode, PAGE_SIZE, data_va,
                  format_instruction)
from .template import MACRO_NAMES, MACROS, InstrItem, Label, MacroInvocation, Template

RANDOM_REGS = 4  # operands come from r0..r3; r6/r7 are reserved
SANDBOX_PAGES = 3
IMM_SPECIAL = (0, 1, -1)
IMM_SPECIAL_P = 0.25


class GenerationError(ValueError):
    pass


class CrossActorWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MacroEntry:
    owner: int  # actor index
    index: int  # instruction index of the NOP placeholder
    macro_id: int
    arg0: int = -1  # target actor for set_*_target
    arg1: int = -1  # target instruction index

    @property
    def name(self) -> str:
        return MACRO_NAMES[self.macro_id]


@dataclass(frozen=True)
class Program:
    actor_names: tuple
    code: tuple  # per actor: tuple[Instruction]
    macros: tuple  # MacroEntry, sorted by (owner, index)
    labels: tuple = ()  # (actor, index, name) for listings
    warnings: tuple = field(default=(), compare=False)

    @property
    def entry(self) -> tuple:
        return 0, 0

    def dump(self) -> str:
        """Assembly listing with macros named at their placeholders."""
        at = {(m.owner, m.index): m for m in self.macros}
        labs = {}
        for a, i, name in self.labels:
            labs.setdefault((a, i), []).append(name)
        out = []
        for a, name in enumerate(self.actor_names):
            out.append(f".section .{name}")
            for i, ins in enumerate(self.code[a]):
                for lab in labs.get((a, i), []):
                    out.append(f".{lab}:")
                m = at.get((a, i))
                if m is not None:
                    args = ""
                    if m.arg0 >= 0:
                        args = f".{self.actor_names[m.arg0]}+{m.arg1}"
                    out.append(f"  .macro.{m.name}{args}:")
                else:
                    out.append(f"  {format_instruction(ins)}")
            for lab in labs.get((a, len(self.code[a])), []):
                out.append(f".{lab}:")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# random instruction synthesis


class _Synth:
    def __init__(self, rng: np.random.Generator, config: CampaignConfig, observer: bool):
        self.rng = rng
        self.pool = [Opcode[m] for m in config.instruction_allowlist]
        if not self.pool:
            raise GenerationError("instruction allowlist is empty")
        g = config.generator
        self.mask = g.address_mask
        self.div_guard = g.observer_div_instrumentation or not observer
        self.priv_ids = (0, 1, 2, 3) if g.privileged_registers == "register" else (4, 5, 6, 7)

    def reg(self) -> int:
        return int(self.rng.integers(RANDOM_REGS))

    def imm(self) -> int:
        # boundary values are over-represented
        if self.rng.random() < IMM_SPECIAL_P:
            return IMM_SPECIAL[int(self.rng.integers(len(IMM_SPECIAL)))]
        return int(self.rng.integers(-256, 256))

    def unit(self) -> list:
        """One drawn instruction preceded by its instrumentation.  A BR is
        returned as ``("BR", cond)`` and patched once the block is laid out."""
        op = self.pool[int(self.rng.integers(len(self.pool)))]
        rng = self.rng
        if op in (Opcode.NOP, Opcode.FENCE):
            return [Instruction(op)]
        if op in (Opcode.SHL, Opcode.SHR):
            if rng.integers(2):
                return [Instruction.alu(op, self.reg(), self.reg(), imm=int(rng.integers(64)))]
            return [Instruction.alu(op, self.reg(), self.reg(), src2=self.reg())]
        if op == Opcode.DIV:
            dst, s1 = self.reg(), self.reg()
            if rng.integers(2):
                imm = self.imm()
                if self.div_guard and imm & 0xFFFFFFFF == 0:
                    imm = 1
                return [Instruction.alu(op, dst, s1, imm=imm)]
            s2 = self.reg()
            pre = [Instruction.alu(Opcode.OR, s2, s2, imm=1)] if self.div_guard else []
            return pre + [Instruction.alu(op, dst, s1, src2=s2)]
        if op in (Opcode.ADD, Opcode.SUB, Opcode.AND, Opcode.OR, Opcode.XOR, Opcode.MUL):
            if rng.integers(2):
                return [Instruction.alu(op, self.reg(), self.reg(), imm=self.imm())]
            return [Instruction.alu(op, self.reg(), self.reg(), src2=self.reg())]
        if op == Opcode.CMP:
            if rng.integers(2):
                return [Instruction.cmp(self.reg(), imm=self.imm())]
            return [Instruction.cmp(self.reg(), src2=self.reg())]
        if op == Opcode.CMOV:
            return [Instruction.cmov(Cond(int(rng.integers(K.N_CONDS))), self.reg(), self.reg())]
        if op in (Opcode.LOAD, Opcode.STORE):
            base = self.reg()
            page = int(rng.integers(SANDBOX_PAGES))
            seq = [Instruction.alu(Opcode.AND, base, base, imm=self.mask),
                   Instruction.alu(Opcode.ADD, base, base, src2=SANDBOX_REG)]
            if op == Opcode.LOAD:
                seq.append(Instruction.load(self.reg(), base, page * PAGE_SIZE))
            else:
                seq.append(Instruction.store(base, self.reg(), page * PAGE_SIZE))
            return seq
        if op == Opcode.BR:
            return [("BR", Cond(int(rng.integers(K.N_CONDS))))]
        if op == Opcode.RDPRIV:
            pid = self.priv_ids[int(rng.integers(len(self.priv_ids)))]
            return [Instruction.rdpriv(self.reg(), pid)]
        raise GenerationError(f"cannot synthesize {op.name}")  # pragma: no cover

    def block(self, n: int) -> list:
        units = [self.unit() for _ in range(n)]
        starts = []
        pos = 0
        for u in units:
            starts.append(pos)
            pos += len(u)
        end = pos
        out = []
        for k, u in enumerate(units):
            for ins in u:
                if isinstance(ins, tuple):
                    # forward target: a later unit start or the block end
                    choices = starts[k + 1:] + [end]
                    tgt = choices[int(self.rng.integers(len(choices)))]
                    ins = Instruction.branch(ins[1], tgt - len(out))
                out.append(ins)
        return out


def _seed_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def expand_random_instructions(template: Template, config: CampaignConfig, seed) -> Program:
    """Expand and instrument ``template``; a pure function of its arguments."""
    rng = _seed_rng(seed)
    names = config.actor_names
    index_of = {n: i for i, n in enumerate(names)}
    missing = [s for s in template.actor_names if s not in index_of]
    if missing:
        raise GenerationError(f"sections without config actors: {missing}")
    code: list[list] = [[] for _ in names]
    label_pos = {}
    labels = []
    pending = []
    # generate in config order so actor indices and the RNG stream agree
    for a, name in enumerate(names):
        try:
            sec = template.section(name)
        except KeyError:
            continue
        synth = _Synth(rng, config, config.actors[a].observer)
        out = code[a]
        for it in sec.items:
            if isinstance(it, Label):
                label_pos[it.name] = (a, len(out))
                labels.append((a, len(out), it.name))
            elif isinstance(it, MacroInvocation):
                if it.name == "random_instructions":
                    out.extend(synth.block(it.args[0]))
                else:
                    pending.append((a, len(out), it))
                    out.append(Instruction(Opcode.NOP))
            else:
                assert isinstance(it, InstrItem)
                out.append(it)
    # resolve labels: branches, then macro arguments
    for a, out in enumerate(code):
        for i, ins in enumerate(out):
            if isinstance(ins, InstrItem):
                if ins.target is not None:
                    _, ti = label_pos[ins.target]
                    out[i] = Instruction.branch(ins.instr.cond, ti - i)
                else:
                    out[i] = ins.instr
    entries = []
    for a, i, m in pending:
        mid = MACROS[m.name][0]
        if MACROS[m.name][1] == ("label",):
            ta, ti = label_pos[m.args[0]]
            entries.append(MacroEntry(a, i, mid, ta, ti))
        else:
            entries.append(MacroEntry(a, i, mid))
    entries.sort(key=lambda e: (e.owner, e.index))
    return Program(tuple(names), tuple(tuple(c) for c in code), tuple(entries),
                   tuple(labels))


def _memory_ops(code: Sequence[Instruction]) -> list[int]:
    """Indices of instrumented LOAD/STORE instructions."""
    out = []
    for i, ins in enumerate(code):
        if ins.op in (Opcode.LOAD, Opcode.STORE) and i >= 2:
            mask, add = code[i - 2], code[i - 1]
            if (mask.op == Opcode.AND and mask.use_imm and mask.dst == ins.src1
                    and add.op == Opcode.ADD and add.src2 == SANDBOX_REG and add.dst == ins.src1):
                out.append(i)
    return out


def cross_actor_access_pass(program: Program, config: CampaignConfig, seed,
                            aliasing: Optional[bool] = None) -> Program:
    """Point one random memory access of every host user-mode actor at the
    same offset inside main's data pages."""
    rng = _seed_rng(seed)
    if aliasing is None:
        aliasing = config.executor.memory_aliasing
    code = [list(c) for c in program.code]
    notes = list(program.warnings)
    main_base = data_va(0)
    changed = False
    for a, actor in enumerate(config.actors):
        if actor.mode != "host" or actor.privilege_level != "user":
            continue
        ops = _memory_ops(code[a])
        if not ops:
            notes.append(f"{actor.name}: no memory access to retarget")
            continue
        i = ops[int(rng.integers(len(ops)))]
        ins = code[a][i]
        page = ins.disp // PAGE_SIZE
        disp = main_base - data_va(a) + page * PAGE_SIZE
        if not -0x8000 <= disp <= 0x7FFF:
            notes.append(f"{actor.name}: main's pages are out of displacement range")
            continue
        code[a][i] = Instruction(ins.op, dst=ins.dst, src1=ins.src1, src2=ins.src2, disp=disp)
        changed = True
    for n in notes[len(program.warnings):]:
        warnings.warn(n, CrossActorWarning, stacklevel=2)
    if not changed and not notes:
        return program
    return Program(program.actor_names, tuple(tuple(c) for c in code), program.macros,
                   program.labels, tuple(notes))


def generate_program(template: Template, config: CampaignConfig, seed) -> Program:
    """Expansion followed by the configured instrumentation passes."""
    rng = _seed_rng(seed)
    prog = expand_random_instructions(template, config, rng)
    if config.generator.cross_actor_access:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CrossActorWarning)
            prog = cross_actor_access_pass(prog, config, rng)
    return prog


# ---------------------------------------------------------------------------
# inputs


@dataclass(eq=False)
class InputBundle:
    """Initial data pages and registers r0..r5 for every actor."""

    class_id: int
    regs: np.ndarray  # int64[n_actors, 6]
    data: np.ndarray  # int64[n_actors, 3 * 512]

    def __eq__(self, other) -> bool:
        if not isinstance(other, InputBundle):
            return NotImplemented
        return (self.class_id == other.class_id and np.array_equal(self.regs, other.regs)
                and np.array_equal(self.data, other.data))

    def actor_bytes(self, actor: int) -> bytes:
        return self.data[actor].tobytes() + self.regs[actor].tobytes()

    def digest(self, actors: Sequence[int]) -> str:
        h = hashlib.blake2b(digest_size=8)
        for a in actors:
            h.update(self.actor_bytes(a))
        return h.hexdigest()

    def copy(self) -> "InputBundle":
        return InputBundle(self.class_id, self.regs.copy(), self.data.copy())


def _random_words(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(np.iinfo(np.int64).min, np.iinfo(np.int64).max, size=shape,
                        dtype=np.int64, endpoint=True)


def generate_inputs(config: CampaignConfig, n_classes: int, n_variants: int,
                    seed) -> list[InputBundle]:
    """``n_classes * n_variants`` bundles.

    Within a class the observer pages and registers are identical; victim
    pages and registers are drawn afresh for every variant.
    """
    if n_classes < 1 or n_variants < 1 or n_classes * n_variants < 2:
        raise GenerationError("need at least two inputs")
    rng = _seed_rng(seed)
    n = len(config.actors)
    obs = np.array([a.observer for a in config.actors])
    out = []
    for c in range(n_classes):
        regs = _random_words(rng, (n, 6))
        data = _random_words(rng, (n, K.DATA_WORDS))
        for _ in range(n_variants):
            d, r = data.copy(), regs.copy()
            d[~obs] = _random_words(rng, (n, K.DATA_WORDS))[~obs]
            r[~obs] = _random_words(rng, (n, 6))[~obs]
            out.append(InputBundle(c, r, d))
    return out


def observer_actors(config: CampaignConfig) -> list[int]:
    return [i for i, a in enumerate(config.actors) if a.observer]


def victim_actors(config: CampaignConfig) -> list[int]:
    return [i for i, a in enumerate(config.actors) if not a.observer]
