"""Contract model: what a victim is allowed to leak.

The model executes a package sequentially with no microarchitecture.
Macros are callbacks and transitions are plain jumps.  While measurement is
active it records, for victim actors only, every load and store address
(relative to the data area base) and every control-flow redirection as an
(actor, byte offset) pair.  Two inputs with the same contract trace and the
same observer data must be indistinguishable to the observer.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels as K
from ._jit import kernel_errstate
from .config import CampaignConfig, ExecutorConfig
from .generator import InputBundle
from .machine import build_tables, data_words, input_arrays
from .package import TestCasePackage

OBSERVATION_CLAUSES = ("load+store+pc",)
EXECUTION_CLAUSES = ("noninterference",)


class ModelBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Event:
    kind: str  # "PC" | "LD" | "ST"
    a: int
    b: int = 0

    def __str__(self) -> str:
        if self.kind == "PC":
            return f"PC {self.a:x}:{self.b:x}"
        return f"{self.kind} {self.a:x}" if self.a >= 0 else f"{self.kind} -{-self.a:x}"


@dataclass(frozen=True)
class ContractTrace:
    events: tuple = ()

    def serialize(self) -> str:
        return "".join(f"{e}\n" for e in self.events)

    @property
    def hash(self) -> int:
        d = hashlib.blake2b(self.serialize().encode(), digest_size=8).digest()
        return int.from_bytes(d, "little")

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def parse(cls, text: str) -> "ContractTrace":
        out = []
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, val = line.split()
            if kind == "PC":
                a, o = val.split(":")
                out.append(Event("PC", int(a, 16), int(o, 16)))
            else:
                out.append(Event(kind, int(val, 16)))
        return cls(tuple(out))


_KIND = {K.EV_PC: "PC", K.EV_LD: "LD", K.EV_ST: "ST"}


class ContractModel:
    """Reusable model for one package."""

    def __init__(self, package: TestCasePackage, executor: Optional[ExecutorConfig] = None):
        if isinstance(executor, CampaignConfig):
            executor = executor.executor
        self.package = package
        self.tables = build_tables(package, executor or ExecutorConfig(), patched=False)
        self.events = np.zeros((K.MAX_EVENTS, 3), dtype=np.int64)

    def _run(self, inp: InputBundle):
        t = self.tables
        img = t.image
        regs, data = input_arrays(inp)
        out = np.zeros(3, dtype=np.int64)
        final_regs = np.zeros((t.n_actors, 8), dtype=np.int64)
        final_mem = np.zeros(K.MEM_WORDS, dtype=np.int64)
        with kernel_errstate():
            K.model_kernel(t.code, t.code_len, t.macro_at, t.macros, img.actors, img.l1_frame,
                           img.l1_bits, img.nested_frame, img.nested_bits, img.space_guest,
                           t.params, regs, data, self.events, out, final_regs, final_mem)
        if out[0] == K.R_BUDGET:
            raise ModelBudgetExceeded("instruction budget exceeded in the model")
        return int(out[1]), bool(out[2]), final_regs, final_mem

    def run(self, inp: InputBundle) -> ContractTrace:
        n, overflow, _, _ = self._run(inp)
        if overflow:
            raise ModelBudgetExceeded("contract trace overflow")
        ev = self.events[:n]
        return ContractTrace(tuple(Event(_KIND[int(k)], int(a), int(b)) for k, a, b in ev))

    def final_state(self, inp: InputBundle) -> tuple:
        _, _, regs, mem = self._run(inp)
        return regs, data_words(self.tables, mem)


def run_model(package: TestCasePackage, inp: InputBundle,
              executor: Optional[ExecutorConfig] = None) -> ContractTrace:
    """Contract trace of ``inp`` under ``package``."""
    return ContractModel(package, executor).run(inp)
