"""Binary test-case packages.

Layout, all little-endian::

    header      "ILK1" u16 version, u16 n_actors, u32 n_macros, u32 n_inputs
    actors      n_actors x (u64 name hash, u8 mode, u8 privilege, u8 observer,
                u8 pad, 16 x u16 page overrides)
    macros      n_macros x (u16 owner, u32 byte offset, u16 macro id,
                i32 arg0, i32 arg1)
    code        per actor: u32 length, bytes
    inputs      per input: u32 class id, then per actor 3 x 4096 data bytes
                and 6 x u64 registers

A page override is ``(mask << 8) | values`` over the page-table bits; slots
0-4 cover the code, data and probe pages of the first-level table and slots
8-12 the same pages in the nested table.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels as K
from .config import CampaignConfig
from .generator import InputBundle, MacroEntry, Program
from .isa import (FAULTY_PAGE, INSN_SIZE, NESTED_SLOT, PTE_BITS, DecodeError, Instruction,
                  Opcode, decode_program, encode_program)
from .template import MACRO_NAMES

MAGIC = b"ILK1"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_ACTOR = struct.Struct("<QBBBB16H")
_MACRO = struct.Struct("<HIHii")
_U32 = struct.Struct("<I")
INPUT_DATA_BYTES = K.DATA_WORDS * 8
INPUT_REG_BYTES = 6 * 8


class PackageError(ValueError):
    pass


def name_hash(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class ActorMeta:
    name_hash: int
    mode: int  # 0 host, 1 guest
    privilege: int  # 0 kernel, 1 user
    observer: bool
    overrides: tuple = (0,) * 16


def overrides_for(props: dict) -> tuple:
    """Encode ``data_properties`` onto the faulty data page."""
    slots = [0] * 16
    for key, value in props.items():
        nested = key.startswith("nested_")
        bit = PTE_BITS[key[len("nested_"):] if nested else key]
        slot = NESTED_SLOT + FAULTY_PAGE if nested else FAULTY_PAGE
        slots[slot] |= bit << 8
        if value:
            slots[slot] |= bit
    return tuple(slots)


@dataclass(frozen=True, eq=False)
class TestCasePackage:
    actors: tuple  # ActorMeta
    macros: tuple  # MacroEntry (instruction indices)
    code: tuple  # bytes per actor
    inputs: tuple  # InputBundle
    version: int = VERSION

    __test__ = False  # not a pytest class

    def __eq__(self, other) -> bool:
        if not isinstance(other, TestCasePackage):
            return NotImplemented
        return (self.version == other.version and self.actors == other.actors
                and self.macros == other.macros and self.code == other.code
                and len(self.inputs) == len(other.inputs)
                and all(a == b for a, b in zip(self.inputs, other.inputs)))

    @property
    def n_actors(self) -> int:
        return len(self.actors)

    def instructions(self, actor: int) -> list[Instruction]:
        return decode_program(self.code[actor])

    @property
    def observers(self) -> list[int]:
        return [i for i, a in enumerate(self.actors) if a.observer]

    @property
    def victims(self) -> list[int]:
        return [i for i, a in enumerate(self.actors) if not a.observer]

    def with_inputs(self, inputs: Sequence[InputBundle]) -> "TestCasePackage":
        return TestCasePackage(self.actors, self.macros, self.code, tuple(inputs), self.version)

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(MAGIC, self.version, len(self.actors), len(self.macros),
                              len(self.inputs))]
        for a in self.actors:
            parts.append(_ACTOR.pack(a.name_hash, a.mode, a.privilege, int(a.observer), 0,
                                     *a.overrides))
        for m in self.macros:
            parts.append(_MACRO.pack(m.owner, m.index * INSN_SIZE, m.macro_id, m.arg0,
                                     m.arg1 * INSN_SIZE if m.arg1 >= 0 else -1))
        for c in self.code:
            parts.append(_U32.pack(len(c)))
            parts.append(c)
        for inp in self.inputs:
            parts.append(_U32.pack(inp.class_id))
            for a in range(len(self.actors)):
                parts.append(inp.data[a].astype("<i8").tobytes())
                parts.append(inp.regs[a].astype("<i8").tobytes())
        return b"".join(parts)


def package_from(program: Program, config: CampaignConfig,
                 inputs: Sequence[InputBundle]) -> TestCasePackage:
    actors = []
    for a in config.actors:
        actors.append(ActorMeta(name_hash(a.name), 1 if a.mode == "guest" else 0,
                                1 if a.privilege_level == "user" else 0, a.observer,
                                overrides_for(a.properties)))
    code = tuple(encode_program(c) for c in program.code)
    return TestCasePackage(tuple(actors), tuple(program.macros), code, tuple(inputs))


def assemble_package(program: Program, config: CampaignConfig,
                     inputs: Sequence[InputBundle]) -> bytes:
    return package_from(program, config, inputs).to_bytes()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = memoryview(raw)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.raw):
            raise PackageError(f"truncated package while reading {what}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct, what: str):
        return st.unpack(self.take(st.size, what))


def load_package(raw: bytes) -> TestCasePackage:
    """Parse and check a package produced by :func:`assemble_package`."""
    r = _Reader(bytes(raw))
    magic, version, n_act, n_mac, n_inp = r.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise PackageError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise PackageError(f"unsupported package version {version}")
    if not 1 <= n_act <= K.MAX_ACTORS:
        raise PackageError(f"actor count {n_act} out of range")
    actors = []
    for i in range(n_act):
        h, mode, priv, obs, pad, *ov = r.unpack(_ACTOR, f"actor row {i}")
        if mode > 1 or priv > 1 or obs > 1 or pad:
            raise PackageError(f"actor row {i} has invalid fields")
        actors.append(ActorMeta(h, mode, priv, bool(obs), tuple(ov)))
    rows = [r.unpack(_MACRO, f"macro row {i}") for i in range(n_mac)]
    code = []
    for i in range(n_act):
        (n,) = r.unpack(_U32, f"code length of actor {i}")
        code.append(bytes(r.take(n, f"code of actor {i}")))
    try:
        instrs = [decode_program(c) for c in code]
    except DecodeError as exc:
        raise PackageError(f"bad code: {exc}") from None
    macros = []
    for i, (owner, off, mid, a0, a1) in enumerate(rows):
        if owner >= n_act or off % INSN_SIZE or off // INSN_SIZE >= len(instrs[owner]):
            raise PackageError(f"macro row {i}: offset out of range")
        if mid not in MACRO_NAMES or mid == K.M_RANDOM:
            raise PackageError(f"macro row {i}: unknown macro id {mid}")
        if instrs[owner][off // INSN_SIZE].op != Opcode.NOP:
            raise PackageError(f"macro row {i}: placeholder is not a NOP")
        if a0 >= 0:
            if a0 >= n_act or a1 < 0 or a1 % INSN_SIZE or a1 // INSN_SIZE > len(instrs[a0]):
                raise PackageError(f"macro row {i}: target out of range")
            a1 //= INSN_SIZE
        elif a0 != -1 or a1 != -1:
            raise PackageError(f"macro row {i}: unexpected arguments")
        macros.append(MacroEntry(owner, off // INSN_SIZE, mid, a0, a1))
    inputs = []
    per_actor = INPUT_DATA_BYTES + INPUT_REG_BYTES
    for j in range(n_inp):
        (cid,) = r.unpack(_U32, f"class id of input {j}")
        blob = r.take(per_actor * n_act, f"input {j}")
        arr = np.frombuffer(blob, dtype="<i8").reshape(n_act, per_actor // 8)
        data = arr[:, :K.DATA_WORDS].astype(np.int64)
        regs = arr[:, K.DATA_WORDS:].astype(np.int64)
        inputs.append(InputBundle(cid, regs, data))
    if r.pos != len(r.raw):
        raise PackageError(f"{len(r.raw) - r.pos} trailing bytes")
    return TestCasePackage(tuple(actors), tuple(macros), tuple(code), tuple(inputs), version)


def program_of(pkg: TestCasePackage, names: Sequence[str]) -> Program:
    """Rebuild a :class:`Program` (for listings) from a loaded package."""
    return Program(tuple(names), tuple(tuple(pkg.instructions(a)) for a in range(pkg.n_actors)),
                   pkg.macros)
