"""Flat arrays describing one package, shared by the simulator and the model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .config import ExecutorConfig
from .generator import InputBundle
from .isa import ActorLayout, Cond, Instruction, MemoryImage, Opcode, code_rows
from .package import NESTED_SLOT, TestCasePackage


class SetupError(ValueError):
    pass


@dataclass
class MachineTables:
    image: MemoryImage
    code: np.ndarray  # int64[n_actors, L, N_FIELDS]
    code_len: np.ndarray  # int64[n_actors]
    macro_at: np.ndarray  # int64[n_actors, L], macro row or -1
    macros: np.ndarray  # int64[n_macros, N_MCOLS]
    params: np.ndarray  # int64[N_PARAMS]

    @property
    def n_actors(self) -> int:
        return self.code.shape[0]


def _exit_row() -> np.ndarray:
    row = np.zeros(K.N_FIELDS, dtype=np.int64)
    row[K.F_OP] = K.OP_EXIT
    return row


def _macro_row(row: int) -> np.ndarray:
    out = np.zeros(K.N_FIELDS, dtype=np.int64)
    out[K.F_OP] = K.OP_MACRO
    out[K.F_DST] = row
    return out


def build_tables(pkg: TestCasePackage, ex: ExecutorConfig, patched: bool) -> MachineTables:
    """Address spaces, code and macro tables for ``pkg``.

    With ``patched`` set every macro placeholder becomes a jump into a
    per-actor routine ``[MACRO, JMP back, FENCE]`` placed after the actor's
    exit sentinel, the way the simulator instantiates macros.  Otherwise the
    code is left as generated and macros are looked up by position.
    """
    layout = []
    for i, a in enumerate(pkg.actors):
        if a.mode == 0 and any(a.overrides[NESTED_SLOT:]):
            raise SetupError(f"actor {i}: nested page overrides on a host actor")
        layout.append(ActorLayout("guest" if a.mode else "host",
                                  "user" if a.privilege else "kernel", a.observer,
                                  tuple(a.overrides)))
    if layout[0].mode != "host" or layout[0].privilege != "kernel":
        raise SetupError("actor 0 must be host kernel")
    image = MemoryImage.build(layout, ex.memory_aliasing, ex.kpti)
    n = pkg.n_actors
    progs = [pkg.instructions(a) for a in range(n)]
    owned = [[j for j, m in enumerate(pkg.macros) if m.owner == a] for a in range(n)]
    lens = [len(p) for p in progs]
    width = max(lens[a] + 1 + (3 * len(owned[a]) if patched else 0) for a in range(n))
    code = np.zeros((n, width, K.N_FIELDS), dtype=np.int64)
    code[:, :, K.F_OP] = K.OP_EXIT
    macro_at = np.full((n, width), -1, dtype=np.int64)
    jmp = Instruction.branch
    for a in range(n):
        if lens[a]:
            code[a, :lens[a]] = code_rows(progs[a])
        code[a, lens[a]] = _exit_row()
        for k, j in enumerate(owned[a]):
            m = pkg.macros[j]
            macro_at[a, m.index] = j
            if patched:
                r = lens[a] + 1 + 3 * k
                code[a, m.index] = jmp(Cond.AL, r - m.index).to_row()
                code[a, r] = _macro_row(j)
                code[a, r + 1] = jmp(Cond.AL, m.index + 1 - (r + 1)).to_row()
                code[a, r + 2] = Instruction(Opcode.FENCE).to_row()
    macros = np.zeros((len(pkg.macros), K.N_MCOLS), dtype=np.int64)
    fh_actor, fh_idx = -1, -1
    for j, m in enumerate(pkg.macros):
        macros[j] = (m.macro_id, m.owner, m.index, m.arg0, m.arg1)
        if m.macro_id == K.M_FAULT_HANDLER and fh_actor < 0:
            fh_actor, fh_idx = m.owner, m.index
    params = np.zeros(K.N_PARAMS, dtype=np.int64)
    params[K.P_TOGGLES] = ex.bugs.mask
    params[K.P_PRIV_DISABLE] = 1 if ex.privileged_read_disable else 0
    params[K.P_WINDOW] = ex.window
    params[K.P_BUDGET] = ex.instruction_budget
    params[K.P_FH_ACTOR] = fh_actor
    params[K.P_FH_IDX] = fh_idx
    params[K.P_PRIV_SRC] = 0
    return MachineTables(image, code, np.array(lens, dtype=np.int64), macro_at, macros, params)


def input_arrays(inp: InputBundle) -> tuple:
    return (np.ascontiguousarray(inp.regs, dtype=np.int64),
            np.ascontiguousarray(inp.data, dtype=np.int64))


def data_words(tables: MachineTables, mem: np.ndarray) -> np.ndarray:
    """The three data pages of every actor out of a physical memory array."""
    n = tables.n_actors
    out = np.empty((n, K.DATA_WORDS), dtype=np.int64)
    for a in range(n):
        base = int(tables.image.actors[a, K.A_HF + 1]) * K.WORDS_PER_PAGE
        out[a] = mem[base:base + K.DATA_WORDS]
    return out
