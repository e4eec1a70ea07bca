"""Toy ISA: instruction encoding, page tables and the architectural step.

Instructions are a fixed 8 bytes, little-endian::

    byte 0     opcode
    byte 1     dst register
    byte 2     src1 register
    byte 3     src2 register | 0x80 for an immediate operand,
               or condition code (CMOV, BR), or register id (RDPRIV)
    bytes 4-5  displacement, signed 16-bit (LOAD, STORE)
    bytes 6-7  immediate, signed 16-bit (ALU immediate form, BR offset)

Fields an opcode does not use must be zero, so ``decode(encode(i)) == i``
and every accepted byte string has exactly one meaning.  Registers are
64-bit and wrap; ``r6`` holds the sandbox base and ``r7`` the probe page
base, by convention.
"""
from __future__ import annotations

import enum
import re
import struct
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels as K
from ._jit import kernel_errstate

INSN_SIZE = 8
N_REGS = 8
SANDBOX_REG = 6
PROBE_REG = 7
MASK64 = (1 << 64) - 1


class DecodeError(ValueError):
    """Bytes that are not a canonical instruction."""


class Opcode(enum.IntEnum):
    NOP = K.OP_NOP
    ADD = K.OP_ADD
    SUB = K.OP_SUB
    AND = K.OP_AND
    OR = K.OP_OR
    XOR = K.OP_XOR
    SHL = K.OP_SHL
    SHR = K.OP_SHR
    CMP = K.OP_CMP
    CMOV = K.OP_CMOV
    MUL = K.OP_MUL
    DIV = K.OP_DIV
    LOAD = K.OP_LOAD
    STORE = K.OP_STORE
    BR = K.OP_BR
    FENCE = K.OP_FENCE
    RDPRIV = K.OP_RDPRIV


class Cond(enum.IntEnum):
    EQ = K.C_EQ
    NE = K.C_NE
    B = K.C_B
    AE = K.C_AE
    S = K.C_S
    NS = K.C_NS
    A = K.C_A
    BE = K.C_BE
    AL = K.C_AL


ALU_OPS = frozenset({Opcode.ADD, Opcode.SUB, Opcode.AND, Opcode.OR, Opcode.XOR,
                     Opcode.SHL, Opcode.SHR, Opcode.MUL, Opcode.DIV})
MEMORY_OPS = frozenset({Opcode.LOAD, Opcode.STORE})


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    ``src2`` and ``imm`` are alternatives for the second ALU/CMP operand;
    ``use_imm`` picks the immediate.  For BR, ``imm`` is the offset in
    instructions relative to the branch itself.
    """

    op: Opcode
    dst: int = 0
    src1: int = 0
    src2: int = 0
    imm: int = 0
    use_imm: bool = False
    disp: int = 0
    cond: Cond = Cond.EQ
    priv: int = 0

    # convenience constructors -------------------------------------------
    @classmethod
    def alu(cls, op, dst, src1, src2=None, imm=None) -> "Instruction":
        if (src2 is None) == (imm is None):
            raise ValueError("give exactly one of src2 / imm")
        if imm is not None:
            return cls(Opcode(op), dst=dst, src1=src1, imm=imm, use_imm=True)
        return cls(Opcode(op), dst=dst, src1=src1, src2=src2)

    @classmethod
    def cmp(cls, src1, src2=None, imm=None) -> "Instruction":
        ins = cls.alu(Opcode.CMP, 0, src1, src2, imm)
        return ins

    @classmethod
    def load(cls, dst, base, disp=0) -> "Instruction":
        return cls(Opcode.LOAD, dst=dst, src1=base, disp=disp)

    @classmethod
    def store(cls, base, src, disp=0) -> "Instruction":
        return cls(Opcode.STORE, src1=base, src2=src, disp=disp)

    @classmethod
    def branch(cls, cond, offset) -> "Instruction":
        return cls(Opcode.BR, cond=Cond(cond), imm=offset)

    @classmethod
    def cmov(cls, cond, dst, src) -> "Instruction":
        return cls(Opcode.CMOV, dst=dst, src1=src, cond=Cond(cond))

    @classmethod
    def rdpriv(cls, dst, reg_id) -> "Instruction":
        return cls(Opcode.RDPRIV, dst=dst, priv=reg_id)

    # ---------------------------------------------------------------------
    def fields(self):
        """(op, dst, src1, byte3, disp, imm) exactly as encoded."""
        op = self.op
        if op in ALU_OPS or op == Opcode.CMP:
            b3 = K.IMM_FLAG if self.use_imm else self.src2
            return op, self.dst, self.src1, b3, 0, self.imm if self.use_imm else 0
        if op == Opcode.CMOV:
            return op, self.dst, self.src1, int(self.cond), 0, 0
        if op == Opcode.LOAD:
            return op, self.dst, self.src1, 0, self.disp, 0
        if op == Opcode.STORE:
            return op, 0, self.src1, self.src2, self.disp, 0
        if op == Opcode.BR:
            return op, 0, 0, int(self.cond), 0, self.imm
        if op == Opcode.RDPRIV:
            return op, self.dst, 0, self.priv, 0, 0
        return op, 0, 0, 0, 0, 0

    def canonical(self) -> "Instruction":
        """Same instruction with every unused field reset to its default."""
        return decode(encode(self))

    def to_row(self) -> np.ndarray:
        return np.array(self.fields(), dtype=np.int64)

    def __str__(self) -> str:
        return format_instruction(self)


def _check_reg(r, what):
    if not 0 <= r < N_REGS:
        raise ValueError(f"{what} register r{r} out of range")


def encode(ins: Instruction) -> bytes:
    op, dst, s1, b3, disp, imm = ins.fields()
    _check_reg(dst, "dst")
    _check_reg(s1, "src1")
    if op in ALU_OPS or op == Opcode.CMP or op == Opcode.STORE:
        if not ins.use_imm or op == Opcode.STORE:
            _check_reg(ins.src2, "src2")
    if op == Opcode.RDPRIV and not 0 <= ins.priv < K.N_PRIV:
        raise ValueError(f"privileged register id {ins.priv} out of range")
    for name, v in (("disp", disp), ("imm", imm)):
        if not -0x8000 <= v <= 0x7FFF:
            raise ValueError(f"{name} {v} does not fit in 16 bits")
    return struct.pack("<BBBBhh", int(op), dst, s1, b3, disp, imm)


def decode(raw: bytes) -> Instruction:
    if len(raw) != INSN_SIZE:
        raise DecodeError(f"expected {INSN_SIZE} bytes, got {len(raw)}")
    opb, dst, s1, b3, disp, imm = struct.unpack("<BBBBhh", bytes(raw))
    try:
        op = Opcode(opb)
    except ValueError:
        raise DecodeError(f"unknown opcode {opb:#x}") from None
    if dst >= N_REGS or s1 >= N_REGS:
        raise DecodeError("register field out of range")
    ins = None
    if op in ALU_OPS or op == Opcode.CMP:
        if b3 == K.IMM_FLAG:
            ins = Instruction(op, dst=dst, src1=s1, imm=imm, use_imm=True)
        elif b3 < N_REGS and imm == 0:
            ins = Instruction(op, dst=dst, src1=s1, src2=b3)
    elif op == Opcode.CMOV:
        if b3 < K.N_CONDS:
            ins = Instruction(op, dst=dst, src1=s1, cond=Cond(b3))
    elif op == Opcode.LOAD:
        if b3 == 0:
            ins = Instruction(op, dst=dst, src1=s1, disp=disp)
    elif op == Opcode.STORE:
        if b3 < N_REGS:
            ins = Instruction(op, src1=s1, src2=b3, disp=disp)
    elif op == Opcode.BR:
        if b3 < K.N_CONDS:
            ins = Instruction(op, cond=Cond(b3), imm=imm)
    elif op == Opcode.RDPRIV:
        if b3 < K.N_PRIV:
            ins = Instruction(op, dst=dst, priv=b3)
    else:
        ins = Instruction(op)
    if ins is None or encode(ins) != bytes(raw):
        raise DecodeError(f"non-canonical encoding {bytes(raw).hex()}")
    return ins


def encode_program(instrs: Sequence[Instruction]) -> bytes:
    return b"".join(encode(i) for i in instrs)


def decode_program(raw: bytes) -> list[Instruction]:
    if len(raw) % INSN_SIZE:
        raise DecodeError("code length is not a multiple of the instruction size")
    return [decode(raw[i:i + INSN_SIZE]) for i in range(0, len(raw), INSN_SIZE)]


def code_rows(instrs: Sequence[Instruction]) -> np.ndarray:
    out = np.zeros((len(instrs), K.N_FIELDS), dtype=np.int64)
    for i, ins in enumerate(instrs):
        out[i] = ins.fields()
    return out


# ---------------------------------------------------------------------------
# assembly text

def _fmt_num(v: int) -> str:
    return str(v) if -16 < v < 16 else (f"-{-v:#x}" if v < 0 else f"{v:#x}")


def _fmt_mem(base: int, disp: int) -> str:
    if disp == 0:
        return f"[r{base}]"
    sign = "-" if disp < 0 else "+"
    return f"[r{base}{sign}{_fmt_num(abs(disp))}]"


def format_instruction(ins: Instruction, target: Optional[str] = None) -> str:
    """Canonical assembly text.  ``target`` replaces a branch offset with a
    label name."""
    op = ins.op
    if op in ALU_OPS:
        rhs = _fmt_num(ins.imm) if ins.use_imm else f"r{ins.src2}"
        return f"{op.name} r{ins.dst}, r{ins.src1}, {rhs}"
    if op == Opcode.CMP:
        rhs = _fmt_num(ins.imm) if ins.use_imm else f"r{ins.src2}"
        return f"CMP r{ins.src1}, {rhs}"
    if op == Opcode.CMOV:
        return f"CMOV{ins.cond.name} r{ins.dst}, r{ins.src1}"
    if op == Opcode.LOAD:
        return f"LOAD r{ins.dst}, {_fmt_mem(ins.src1, ins.disp)}"
    if op == Opcode.STORE:
        return f"STORE {_fmt_mem(ins.src1, ins.disp)}, r{ins.src2}"
    if op == Opcode.BR:
        mnem = "JMP" if ins.cond == Cond.AL else f"BR{ins.cond.name}"
        if target is not None:
            return f"{mnem} {target}"
        return f"{mnem} {ins.imm:+d}"
    if op == Opcode.RDPRIV:
        return f"RDPRIV r{ins.dst}, {ins.priv}"
    return op.name


_REG = r"r([0-7])"
_NUM = r"([+-]?(?:0x[0-9a-fA-F]+|\d+))"
_MEM = rf"\[\s*{_REG}\s*(?:([+-])\s*(0x[0-9a-fA-F]+|\d+))?\s*\]"


def _num(s: str) -> int:
    return int(s, 0)


class AsmError(ValueError):
    """Unparseable assembly line."""


def parse_instruction(text: str) -> tuple[Instruction, Optional[str]]:
    """Parse one instruction.  Returns ``(instruction, label)`` where
    ``label`` is a symbolic branch target still to be resolved (the branch
    offset is then 0)."""
    ins, label = _parse(text)
    try:
        encode(ins)
    except ValueError as exc:
        raise AsmError(f"{exc} in {text!r}") from None
    return ins, label


def _parse(text: str) -> tuple[Instruction, Optional[str]]:
    t = text.strip()
    m = re.match(r"([A-Za-z]+)\s*(.*)$", t)
    if not m:
        raise AsmError(f"cannot parse {text!r}")
    mnem = m.group(1).upper()
    rest = m.group(2).strip()
    ops = [o.strip() for o in rest.split(",")] if rest else []

    def reg(s):
        mm = re.fullmatch(_REG, s.strip())
        if not mm:
            raise AsmError(f"expected register, got {s!r} in {text!r}")
        return int(mm.group(1))

    def reg_or_imm(s):
        mm = re.fullmatch(_REG, s)
        if mm:
            return int(mm.group(1)), None
        mm = re.fullmatch(_NUM, s)
        if not mm:
            raise AsmError(f"expected register or number, got {s!r} in {text!r}")
        return None, _num(mm.group(1))

    def mem(s):
        mm = re.fullmatch(_MEM, s)
        if not mm:
            raise AsmError(f"expected memory operand, got {s!r} in {text!r}")
        d = _num(mm.group(3)) if mm.group(3) else 0
        return int(mm.group(1)), -d if mm.group(2) == "-" else d

    try:
        if mnem in ("NOP", "FENCE"):
            if ops:
                raise AsmError(f"{mnem} takes no operands")
            return Instruction(Opcode[mnem]), None
        if mnem in Opcode.__members__ and Opcode[mnem] in ALU_OPS:
            if len(ops) == 2:
                ops = [ops[0], ops[0], ops[1]]
            if len(ops) != 3:
                raise AsmError(f"{mnem} needs 2 or 3 operands")
            r2, imm = reg_or_imm(ops[2])
            return Instruction.alu(Opcode[mnem], reg(ops[0]), reg(ops[1]), r2, imm), None
        if mnem == "CMP":
            if len(ops) != 2:
                raise AsmError("CMP needs 2 operands")
            r2, imm = reg_or_imm(ops[1])
            return Instruction.cmp(reg(ops[0]), r2, imm), None
        if mnem == "MOV":
            if len(ops) != 2:
                raise AsmError("MOV needs 2 operands")
            return Instruction.cmov(Cond.AL, reg(ops[0]), reg(ops[1])), None
        if mnem.startswith("CMOV"):
            cond = Cond[mnem[4:]]
            if len(ops) != 2:
                raise AsmError("CMOV needs 2 operands")
            return Instruction.cmov(cond, reg(ops[0]), reg(ops[1])), None
        if mnem == "LOAD":
            if len(ops) != 2:
                raise AsmError("LOAD needs 2 operands")
            base, d = mem(ops[1])
            return Instruction.load(reg(ops[0]), base, d), None
        if mnem == "STORE":
            if len(ops) != 2:
                raise AsmError("STORE needs 2 operands")
            base, d = mem(ops[0])
            return Instruction.store(base, reg(ops[1]), d), None
        if mnem == "JMP" or mnem.startswith("BR"):
            cond = Cond.AL if mnem == "JMP" else Cond[mnem[2:]]
            if len(ops) != 1:
                raise AsmError(f"{mnem} needs 1 operand")
            tgt = ops[0]
            mm = re.fullmatch(_NUM, tgt)
            if mm:
                return Instruction.branch(cond, _num(mm.group(1))), None
            if not re.fullmatch(r"\.?[A-Za-z_][\w.]*", tgt):
                raise AsmError(f"bad branch target {tgt!r}")
            return Instruction.branch(cond, 0), tgt
        if mnem == "RDPRIV":
            if len(ops) != 2:
                raise AsmError("RDPRIV needs 2 operands")
            rid = _num(ops[1])
            if not 0 <= rid < K.N_PRIV:
                raise AsmError(f"privileged register id {rid} out of range")
            return Instruction.rdpriv(reg(ops[0]), rid), None
    except KeyError:
        pass
    except ValueError as exc:
        if isinstance(exc, AsmError):
            raise
        raise AsmError(f"{exc} in {text!r}") from None
    raise AsmError(f"unknown mnemonic {mnem!r}")


# ---------------------------------------------------------------------------
# faults


_FAULT_NAMES = {
    K.PF_P: "PF(P)", K.PF_R: "PF(R)", K.PF_U: "PF(U)", K.PF_W: "PF(W)",
    K.VM_P: "VMEXIT(P)", K.VM_R: "VMEXIT(R)", K.VM_W: "VMEXIT(W)",
    K.GP: "GP", K.DE: "DE", K.VM_PRIV: "VMEXIT(priv)",
    K.AS_A: "ASSIST(A)", K.AS_D: "ASSIST(D)", K.AS_NA: "ASSIST(nested-A)",
    K.AS_ND: "ASSIST(nested-D)",
}


@dataclass(frozen=True)
class Fault:
    code: int

    @property
    def name(self) -> str:
        return _FAULT_NAMES[self.code]

    @property
    def is_assist(self) -> bool:
        return self.code >= K.FIRST_ASSIST

    @property
    def is_vm_exit(self) -> bool:
        return self.code in (K.VM_P, K.VM_R, K.VM_W, K.VM_PRIV)

    def __str__(self) -> str:
        return self.name


# ---------------------------------------------------------------------------
# page tables and memory layout


PTE_BITS = {"present": K.B_P, "writable": K.B_W, "user": K.B_U,
            "accessed": K.B_A, "dirty": K.B_D, "reserved": K.B_R}
PAGE_CODE, PAGE_DATA0, PAGE_DATA1, PAGE_DATA2, PAGE_PROBE = range(5)
FAULTY_PAGE = PAGE_DATA2
NESTED_SLOT = 8  # override slot offset for nested-table entries


@dataclass(frozen=True)
class PageTableEntry:
    frame: int
    present: bool = True
    writable: bool = True
    user: bool = False
    accessed: bool = True
    dirty: bool = True
    reserved: bool = False

    @property
    def bits(self) -> int:
        return sum(v for k, v in PTE_BITS.items() if getattr(self, k))

    @classmethod
    def from_bits(cls, frame: int, bits: int) -> "PageTableEntry":
        return cls(frame, **{k: bool(bits & v) for k, v in PTE_BITS.items()})


@dataclass(frozen=True)
class ActorLayout:
    """Per-actor description needed to build address spaces."""

    mode: str = "host"  # "host" | "guest"
    privilege: str = "kernel"  # "kernel" | "user"
    observer: bool = False
    overrides: tuple = (0,) * 16  # u16 per page slot: high byte mask, low byte values


def hframe(actor: int, page: int) -> int:
    return 1 + actor * K.PAGES_PER_ACTOR + page


def code_va(slot: int) -> int:
    return K.CODE_VA + slot * PAGE_SIZE


def data_va(slot: int) -> int:
    return K.DATA_VA + slot * K.ACTOR_DATA_STRIDE


PAGE_SIZE = K.PAGE


def _apply(bits: int, ov: int) -> int:
    mask = (ov >> 8) & 0xFF
    return (bits & ~mask) | (ov & mask)


@dataclass
class MemoryImage:
    """Address spaces for a set of actors, as flat arrays.

    Space 0 is the host kernel view, space 1 the host user view (where
    page-table isolation edits land), spaces 2.. belong to guests.
    """

    actors: np.ndarray  # int64[n, N_ACOLS]
    l1_frame: np.ndarray  # int64[S, NVPN]
    l1_bits: np.ndarray
    nested_frame: np.ndarray  # int64[S, NFRAMES]
    nested_bits: np.ndarray
    space_guest: np.ndarray  # int64[S]
    monitored: np.ndarray  # int64[NFRAMES]
    code_base: np.ndarray  # int64[n] code VA
    mem: np.ndarray = field(default_factory=lambda: np.zeros(K.MEM_WORDS, dtype=np.int64))

    @classmethod
    def build(cls, layout: Sequence[ActorLayout], aliasing: bool = False,
              kpti: str = "none") -> "MemoryImage":
        n = len(layout)
        if not 1 <= n <= K.MAX_ACTORS:
            raise ValueError(f"between 1 and {K.MAX_ACTORS} actors supported, got {n}")
        if layout[0].mode != "host":
            raise ValueError("the main actor must run in host mode")
        guests = [i for i, a in enumerate(layout) if a.mode == "guest"]
        n_spaces = 2 + len(guests)
        actors = np.zeros((n, K.N_ACOLS), dtype=np.int64)
        l1f = np.zeros((n_spaces, K.NVPN), dtype=np.int64)
        l1b = np.zeros((n_spaces, K.NVPN), dtype=np.int64)
        nfr = np.zeros((n_spaces, K.NFRAMES), dtype=np.int64)
        nbt = np.zeros((n_spaces, K.NFRAMES), dtype=np.int64)
        sg = np.zeros(n_spaces, dtype=np.int64)
        monitored = np.zeros(K.NFRAMES, dtype=np.int64)
        code_base = np.zeros(n, dtype=np.int64)
        first_guest = guests[0] if guests else 0
        for i, a in enumerate(layout):
            slot = first_guest if (aliasing and a.mode == "guest") else i
            user = a.privilege == "user"
            actors[i, K.A_MODE] = 1 if a.mode == "guest" else 0
            actors[i, K.A_PRIV] = 1 if user else 0
            actors[i, K.A_OBS] = 1 if a.observer else 0
            actors[i, K.A_BASE] = data_va(slot)
            actors[i, K.A_PROBE] = data_va(slot) + 3 * PAGE_SIZE
            code_base[i] = code_va(slot)
            for j in range(K.PAGES_PER_ACTOR):
                actors[i, K.A_HF + j] = hframe(i, j)
            vpns = [code_va(slot) >> 12] + [(data_va(slot) >> 12) + j for j in range(4)]
            base_bits = K.B_ALL if user else (K.B_ALL & ~K.B_U)
            if a.mode == "host":
                sp = 1 if user else 0
                for j, vpn in enumerate(vpns):
                    bits = _apply(base_bits, a.overrides[j])
                    for s in (0, 1):
                        l1f[s, vpn] = hframe(i, j)
                        l1b[s, vpn] = bits
            else:
                sp = 2 + guests.index(i)
                sg[sp] = 1
                for j, vpn in enumerate(vpns):
                    gfr = hframe(0, j) if aliasing else hframe(i, j)
                    l1f[sp, vpn] = gfr
                    l1b[sp, vpn] = _apply(base_bits, a.overrides[j])
                    nbits = _apply(K.B_ALL, a.overrides[NESTED_SLOT + j])
                    nfr[sp, gfr] = hframe(i, j)
                    nbt[sp, gfr] = nbits
            actors[i, K.A_SPACE] = sp
            if a.observer:
                for j in (1, 2, 3, 4):
                    monitored[hframe(i, j)] = 1
        if kpti != "none":
            # hide every kernel-owned host page from the user view
            for i, a in enumerate(layout):
                if a.mode != "host" or a.privilege == "user":
                    continue
                for vpn in [code_va(i) >> 12] + [(data_va(i) >> 12) + j for j in range(4)]:
                    if kpti == "clear_present":
                        l1b[1, vpn] &= ~K.B_P
                    elif kpti == "unmap":
                        l1b[1, vpn] = 0
                        l1f[1, vpn] = 0
                    else:
                        raise ValueError(f"unknown kpti mode {kpti!r}")
        return cls(actors, l1f, l1b, nfr, nbt, sg, monitored, code_base)

    @property
    def n_actors(self) -> int:
        return self.actors.shape[0]

    def pte(self, actor: int, vaddr: int) -> PageTableEntry:
        sp = int(self.actors[actor, K.A_SPACE])
        vpn = (vaddr >> 12) % K.NVPN
        return PageTableEntry.from_bits(int(self.l1_frame[sp, vpn]), int(self.l1_bits[sp, vpn]))

    def set_pte(self, actor: int, vaddr: int, pte: PageTableEntry) -> None:
        sp = int(self.actors[actor, K.A_SPACE])
        vpn = vaddr >> 12
        self.l1_frame[sp, vpn] = pte.frame
        self.l1_bits[sp, vpn] = pte.bits

    def set_nested(self, actor: int, gframe: int, pte: PageTableEntry) -> None:
        sp = int(self.actors[actor, K.A_SPACE])
        self.nested_frame[sp, gframe] = pte.frame
        self.nested_bits[sp, gframe] = pte.bits

    def copy(self) -> "MemoryImage":
        return MemoryImage(*(getattr(self, f).copy() for f in self.__dataclass_fields__))

    def read_word(self, paddr: int) -> int:
        return int(self.mem[paddr >> 3]) & MASK64

    def write_word(self, paddr: int, value: int) -> None:
        self.mem[paddr >> 3] = np.int64(_signed(value))


def _signed(v: int) -> int:
    v &= MASK64
    return v - (1 << 64) if v >> 63 else v


@dataclass(frozen=True)
class Translation:
    paddr: Optional[int]
    fault: Optional[Fault] = None

    @property
    def ok(self) -> bool:
        return self.paddr is not None and (self.fault is None or self.fault.is_assist)


_ACCESS = {"read": 0, "write": 1, "exec": 2}


def translate(vaddr: int, access: str, actor: int, image: MemoryImage) -> Translation:
    """Walk ``actor``'s page tables for one access.

    Fault priority is not-present, reserved, privilege, write, guest level
    before nested level.  A legal access to a page with a clear accessed
    (or, for writes, dirty) bit yields the physical address together with
    the corresponding assist.
    """
    code, paddr, _raw = K.translate(
        np.int64(vaddr), _ACCESS[access], actor, image.actors, image.l1_frame,
        image.l1_bits, image.nested_frame, image.nested_bits, image.space_guest, False)
    code = int(code)
    if code == K.F_NONE:
        return Translation(int(paddr))
    if code >= K.FIRST_ASSIST:
        return Translation(int(paddr), Fault(code))
    return Translation(None, Fault(code))


# ---------------------------------------------------------------------------
# architectural state and single stepping


@dataclass(frozen=True)
class Flags:
    zero: bool = False
    carry: bool = False
    sign: bool = False


@dataclass(frozen=True)
class ArchState:
    """Architectural state of the running actor.  Registers are unsigned
    64-bit Python ints."""

    gprs: tuple = (0,) * N_REGS
    flags: Flags = Flags()
    pc: int = 0  # instruction index within the actor's code
    actor: int = 0
    privileged: tuple = (0,) * K.N_PRIV

    def with_reg(self, r: int, v: int) -> "ArchState":
        g = list(self.gprs)
        g[r] = v & MASK64
        return replace(self, gprs=tuple(g))


@dataclass(frozen=True)
class StepResult:
    state: ArchState
    fault: Optional[Fault] = None
    assist: Optional[Fault] = None
    mem_addr: Optional[int] = None  # effective address of a LOAD/STORE operand
    taken: bool = False


def arch_step(state: ArchState, ins: Instruction, image: MemoryImage,
              privileged_read_disable: bool = False) -> StepResult:
    """Execute ``ins`` architecturally.  On a fault the returned state is
    unchanged.  Stores write ``image.mem`` in place."""
    r = np.array([_signed(v) for v in state.gprs], dtype=np.int64)
    fl = np.array([state.flags.zero, state.flags.carry, state.flags.sign], dtype=np.int64)
    params = np.zeros(K.N_PARAMS, dtype=np.int64)
    params[K.P_PRIV_DISABLE] = 1 if privileged_read_disable else 0
    priv = np.array([_signed(v) for v in state.privileged], dtype=np.int64)
    assist = None
    if ins.op in MEMORY_OPS:
        va = (_signed(state.gprs[ins.src1]) + ins.disp) & ~7
        t = translate(va, "write" if ins.op == Opcode.STORE else "read", state.actor, image)
        if t.fault is not None and t.fault.is_assist:
            assist = t.fault
    div = np.zeros(2, dtype=np.int64)
    with kernel_errstate():
        status, nxt, code, vaddr, _ = K.step_kernel(
            ins.to_row(), state.pc, state.actor, r, fl, image.mem, image.actors,
            image.l1_frame, image.l1_bits, image.nested_frame, image.nested_bits,
            image.space_guest, priv, params, div)
    mem_addr = int(vaddr) if ins.op in MEMORY_OPS else None
    if status == K.X_FAULT:
        return StepResult(state, Fault(int(code)), mem_addr=mem_addr)
    new = replace(state, gprs=tuple(int(v) & MASK64 for v in r),
                  flags=Flags(bool(fl[0]), bool(fl[1]), bool(fl[2])), pc=int(nxt))
    return StepResult(new, None, assist, mem_addr, status == K.X_TAKEN)


encode_instruction = encode
decode_instruction = decode
