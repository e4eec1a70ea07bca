"""Grouping inputs and testing trace distributions for equality.

Inputs whose observer data and contract traces coincide form an
equivalence class.  Every pair inside a class is compared with the
averaged two-sample chi-squared statistic; a pair that looks different is
re-measured with larger fresh samples and reported only if it keeps
looking different at every stage of the schedule.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

DEFAULT_SCHEDULE = (15, 40, 160, 320)
DEFAULT_THRESHOLD = 8.0


@dataclass(frozen=True)
class TraceDistribution:
    """Histogram of hardware traces."""

    counts: tuple  # sorted (trace, count) pairs

    @classmethod
    def of(cls, sample: Iterable) -> "TraceDistribution":
        c = Counter(int(t) for t in sample)
        return cls(tuple(sorted(c.items())))

    @classmethod
    def from_counts(cls, counts: Mapping) -> "TraceDistribution":
        return cls(tuple(sorted((k, int(v)) for k, v in counts.items() if v)))

    @property
    def n(self) -> int:
        return sum(c for _, c in self.counts)

    def as_dict(self) -> dict:
        return dict(self.counts)


def _hist(s) -> dict:
    if isinstance(s, TraceDistribution):
        return s.as_dict()
    if isinstance(s, Mapping):
        return dict(s)
    return Counter(int(t) for t in s)


def chi2_statistic(s1, s2) -> float:
    """Average over both samples of sum_t (obs_i(t) - e_t)^2 / e_t with
    e_t = (obs_1(t) + obs_2(t)) / 2.

    Accepts :class:`TraceDistribution`, mappings, or raw samples.
    """
    h1, h2 = _hist(s1), _hist(s2)
    n1, n2 = sum(h1.values()), sum(h2.values())
    if n1 != n2:
        raise ValueError(f"sample sizes differ: {n1} vs {n2}")
    if n1 < 1:
        raise ValueError("empty samples")
    t1, t2 = [], []
    for t in set(h1) | set(h2):
        o1, o2 = h1.get(t, 0), h2.get(t, 0)
        if o1 == o2:
            continue
        e = (o1 + o2) / 2.0
        t1.append((o1 - e) ** 2 / e)
        t2.append((o2 - e) ** 2 / e)
    return (math.fsum(t1) + math.fsum(t2)) / 2.0


def distributions_equal(s1, s2, threshold: float = DEFAULT_THRESHOLD) -> bool:
    return chi2_statistic(s1, s2) < threshold


# ---------------------------------------------------------------------------
# equivalence classes


@dataclass(frozen=True)
class EquivalenceClass:
    members: tuple
    contract_hash: int
    observer_hash: str

    @property
    def checkable(self) -> bool:
        return len(self.members) >= 2


def group_inputs(contract_traces: Sequence, observer_hashes: Sequence) -> list[EquivalenceClass]:
    """Partition input ids by (observer hash, contract trace).

    ``contract_traces`` items may be :class:`~isofuzz.model.ContractTrace`
    objects or anything hashable; full values are compared, never only
    their digests.
    """
    if len(contract_traces) != len(observer_hashes):
        raise ValueError("one contract trace and one observer hash per input")
    groups: dict = {}
    for i, (ct, oh) in enumerate(zip(contract_traces, observer_hashes)):
        groups.setdefault((oh, ct), []).append(i)
    out = []
    for (oh, ct), members in groups.items():
        h = ct.hash if hasattr(ct, "hash") else hash(ct)
        out.append(EquivalenceClass(tuple(members), h, oh))
    out.sort(key=lambda c: c.members[0])
    return out


# ---------------------------------------------------------------------------
# the ladder


@dataclass(frozen=True)
class SamplingPlan:
    schedule: tuple = DEFAULT_SCHEDULE

    def __post_init__(self):
        s = tuple(self.schedule)
        if not s or any(n < 1 for n in s) or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("schedule must be a non-empty increasing list of sizes")
        object.__setattr__(self, "schedule", s)


@dataclass(frozen=True)
class StageRecord:
    n: int
    hist_a: TraceDistribution
    hist_b: TraceDistribution
    chi2: float


@dataclass(frozen=True)
class ViolationReport:
    class_index: int
    input_a: int
    input_b: int
    stages: tuple  # StageRecord per ladder stage
    threshold: float
    verdict: str = "violation"

    def to_dict(self) -> dict:
        def hist(h):
            return {f"{t & (2 ** 64 - 1):016x}": c for t, c in h.counts}
        return {
            "class_index": self.class_index,
            "inputs": [self.input_a, self.input_b],
            "threshold": self.threshold,
            "verdict": self.verdict,
            "stages": [{"n": s.n, "chi2": s.chi2, "hist_a": hist(s.hist_a),
                        "hist_b": hist(s.hist_b)} for s in self.stages],
        }


@dataclass
class LadderStats:
    measurements: int = 0
    pairs_checked: int = 0
    exonerated_at: Counter = field(default_factory=Counter)
    diagnostics: list = field(default_factory=list)


MeasureFn = Callable[[int, int], np.ndarray]


def check_isolation(classes: Sequence[EquivalenceClass], measure: MeasureFn,
                    plan: SamplingPlan = SamplingPlan(), threshold: float = DEFAULT_THRESHOLD,
                    stats: Optional[LadderStats] = None) -> list[ViolationReport]:
    """Compare every pair inside every class along ``plan``.

    ``measure(input_id, n)`` returns ``n`` fresh traces.  At each stage
    every input still involved in a suspicious pair is measured once and
    the sample is shared by all its pairs.  A failing measurement drops
    the whole class and is noted in ``stats.diagnostics``.
    """
    stats = stats if stats is not None else LadderStats()
    pairs = []
    for ci, c in enumerate(classes):
        for a, b in combinations(c.members, 2):
            pairs.append((ci, a, b))
    stats.pairs_checked += len(pairs)
    history: dict = {p: [] for p in pairs}
    suspicious = pairs
    for stage, n in enumerate(plan.schedule):
        if not suspicious:
            break
        needed = sorted({i for _, a, b in suspicious for i in (a, b)})
        owner = {i: ci for ci, a, b in suspicious for i in (a, b)}
        hists = {}
        dead = set()
        for i in needed:
            if owner[i] in dead:
                continue
            try:
                sample = measure(i, n)
            except Exception as exc:  # noqa: BLE001 - reported, not swallowed
                dead.add(owner[i])
                stats.diagnostics.append(f"class {owner[i]}: measuring input {i} failed: {exc}")
                continue
            stats.measurements += n
            hists[i] = TraceDistribution.of(sample)
        still = []
        for p in suspicious:
            ci, a, b = p
            if ci in dead:
                continue
            x = chi2_statistic(hists[a], hists[b])
            history[p].append(StageRecord(n, hists[a], hists[b], x))
            if x >= threshold:
                still.append(p)
            else:
                stats.exonerated_at[stage] += 1
        suspicious = still
    return [ViolationReport(ci, a, b, tuple(history[(ci, a, b)]), threshold)
            for ci, a, b in suspicious]
