"""The simulated CPU under test.

:func:`setup_environment` builds address spaces and instantiates macros by
patching the code; :func:`measure_sample` then runs one input N times,
resetting caches and buffers in between, and returns the observer's
Flush+Reload traces as 64-bit masks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels as K
from ._jit import kernel_errstate
from .config import CampaignConfig, ExecutorConfig
from .generator import InputBundle
from .machine import MachineTables, SetupError, build_tables, data_words, input_arrays
from .package import TestCasePackage

log = logging.getLogger(__name__)

__all__ = ["ExecutionContext", "RunawayExecution", "SetupError", "setup_environment",
           "run_with_input", "measure_sample", "final_state", "run_stats", "RunStats",
           "trace_lines"]


class RunawayExecution(RuntimeError):
    """The instruction budget ran out; the test case is discarded."""


@dataclass
class ExecutionContext:
    package: TestCasePackage
    executor: ExecutorConfig
    tables: MachineTables
    rng_state: np.ndarray  # uint64[1], advances across runs
    seed: int = 0
    measurements: int = field(default=0)

    @property
    def toggles(self) -> int:
        return int(self.tables.params[K.P_TOGGLES])


def setup_environment(package: TestCasePackage, config, seed: int = 0) -> ExecutionContext:
    """Prepare a package for measurement.

    ``config`` is a :class:`CampaignConfig` or just its executor block.
    ``seed`` initialises the transition-noise generator.
    """
    ex = config.executor if isinstance(config, CampaignConfig) else config
    tables = build_tables(package, ex, patched=True)
    rng = np.array([seed & ((1 << 64) - 1)], dtype=np.uint64)
    return ExecutionContext(package, ex, tables, rng, seed)


def _measure(ctx: ExecutionContext, inp: InputBundle, n: int):
    t = ctx.tables
    img = t.image
    regs, data = input_arrays(inp)
    traces = np.zeros(n, dtype=np.int64)
    statuses = np.zeros((n, 4), dtype=np.int64)
    final_regs = np.zeros((t.n_actors, 8), dtype=np.int64)
    final_mem = np.zeros(K.MEM_WORDS, dtype=np.int64)
    with kernel_errstate():
        K.measure_kernel(t.code, t.code_len, t.macro_at, t.macros, img.actors, img.l1_frame,
                         img.l1_bits, img.nested_frame, img.nested_bits, img.space_guest,
                         img.monitored, t.params, float(ctx.executor.noise_probability), regs,
                         data, n, ctx.rng_state, traces, statuses, final_regs, final_mem)
    ctx.measurements += n
    if np.any(statuses[:, 0] == K.R_BUDGET):
        raise RunawayExecution("instruction budget exceeded")
    return traces, final_regs, final_mem, statuses


def measure_sample(ctx: ExecutionContext, inp: InputBundle, n: int,
                   input_id: Optional[int] = None) -> np.ndarray:
    """``n`` hardware traces (uint64) for one input."""
    if n < 1:
        raise ValueError("sample size must be at least 1")
    traces, _, _, _ = _measure(ctx, inp, n)
    out = traces.view(np.uint64)
    if log.isEnabledFor(logging.DEBUG):
        iid = "-" if input_id is None else input_id
        for tr in out:
            log.debug("EXEC %d %s %016x", ctx.seed, iid, int(tr))
    return out


def run_with_input(ctx: ExecutionContext, inp: InputBundle) -> int:
    """One measurement: reset, load ``inp``, execute, return the trace."""
    return int(measure_sample(ctx, inp, 1)[0])


def final_state(ctx: ExecutionContext, inp: InputBundle) -> tuple:
    """Architectural end state of one run: (registers, data pages)."""
    _, regs, mem, _ = _measure(ctx, inp, 1)
    return regs, data_words(ctx.tables, mem)


@dataclass(frozen=True)
class RunStats:
    trace: int
    steps: int
    faults: int
    transitions: int


def run_stats(ctx: ExecutionContext, inp: InputBundle) -> RunStats:
    """One run with its step, fault and transition counters."""
    traces, _, _, st = _measure(ctx, inp, 1)
    return RunStats(int(traces.view(np.uint64)[0]), int(st[0, 1]), int(st[0, 2]), int(st[0, 3]))


def trace_lines(trace: int) -> list[int]:
    """Probe line indices set in a trace."""
    t = int(trace) & ((1 << 64) - 1)
    return [i for i in range(64) if t >> i & 1]
