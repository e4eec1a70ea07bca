import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isofuzz.analyzer import (DEFAULT_SCHEDULE, EquivalenceClass, LadderStats, SamplingPlan,
                              TraceDistribution, check_isolation, chi2_statistic,
                              distributions_equal, group_inputs)


def oracle(c1, c2):
    """Vectorised re-statement over aligned count vectors."""
    c1, c2 = np.asarray(c1, float), np.asarray(c2, float)
    keep = (c1 + c2) > 0
    c1, c2 = c1[keep], c2[keep]
    e = (c1 + c2) / 2
    return float((((c1 - e) ** 2 / e).sum() + ((c2 - e) ** 2 / e).sum()) / 2)


def random_pair(rng):
    k = int(rng.integers(1, 12))
    n = int(rng.integers(1, 400))
    c1 = rng.multinomial(n, rng.dirichlet(np.ones(k)))
    c2 = rng.multinomial(n, rng.dirichlet(np.ones(k)))
    return c1, c2


def as_map(c):
    return {i * 7919: int(v) for i, v in enumerate(c) if v}


def test_worked_values():
    assert chi2_statistic({1: 15}, {1: 15}) == 0.0
    assert chi2_statistic({1: 15}, {1: 10, 2: 5}) == 3.0
    assert chi2_statistic({1: 15}, {2: 15}) == 15.0
    assert chi2_statistic({1: 15}, {1: 14, 2: 1}) == pytest.approx(15 / 29, rel=1e-12)


def test_equal_examples():
    assert distributions_equal([5] * 15, [5] * 15, 0.1)
    assert not distributions_equal({1: 15}, {2: 15}, 10)
    assert distributions_equal({1: 15}, {1: 14, 2: 1}, 10)
    assert not distributions_equal({1: 15}, {1: 10, 2: 5}, 3.0)  # strict


def test_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(2000):
        c1, c2 = random_pair(rng)
        want = oracle(c1, c2)
        got = chi2_statistic(as_map(c1), as_map(c2))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_input_forms_agree():
    sample1 = [3, 3, 4, 9, 9, 9]
    sample2 = [3, 4, 4, 4, 9, 9]
    x = chi2_statistic(sample1, sample2)
    assert chi2_statistic(TraceDistribution.of(sample1), TraceDistribution.of(sample2)) == x
    assert chi2_statistic(np.array(sample1), {3: 1, 4: 3, 9: 2}) == x


def test_errors():
    with pytest.raises(ValueError):
        chi2_statistic({1: 15}, {1: 14})
    with pytest.raises(ValueError):
        chi2_statistic({}, {})


hist = st.dictionaries(st.integers(-2 ** 63, 2 ** 63 - 1), st.integers(1, 50), min_size=1,
                       max_size=8)


@given(hist, st.data())
@settings(max_examples=300)
def test_symmetry_and_relabeling(h1, data):
    n = sum(h1.values())
    keys = data.draw(st.lists(st.integers(0, 2 ** 40), min_size=1, max_size=8, unique=True))
    h2 = {}
    for _ in range(n):
        k = data.draw(st.sampled_from(keys))
        h2[k] = h2.get(k, 0) + 1
    assert chi2_statistic(h1, h1) == 0.0
    x = chi2_statistic(h1, h2)
    assert x >= 0 and x == chi2_statistic(h2, h1)
    perm = {k: i * 3 + 1 for i, k in enumerate(sorted(set(h1) | set(h2)))}
    y = chi2_statistic({perm[k]: v for k, v in h1.items()}, {perm[k]: v for k, v in h2.items()})
    assert y == pytest.approx(x, rel=1e-12)


def test_distribution_type():
    d = TraceDistribution.of([2, 1, 2])
    assert d.counts == ((1, 1), (2, 2)) and d.n == 3
    assert TraceDistribution.from_counts({2: 2, 1: 1, 5: 0}) == d


# ---------------------------------------------------------------------------
# grouping


def test_group_split_shape():
    classes = group_inputs(["ctA", "ctB", "ctB"], ["o", "o", "o"])
    assert [c.members for c in classes] == [(0,), (1, 2)]
    assert [c.checkable for c in classes] == [False, True]


def test_group_one_class():
    assert [c.members for c in group_inputs(["t"] * 5, ["o"] * 5)] == [(0, 1, 2, 3, 4)]


def test_group_brute_force():
    rng = np.random.default_rng(0)
    traces = [tuple(rng.integers(0, 3, 2)) for _ in range(50)]
    obs = [f"o{i % 5}" for i in range(50)]
    classes = group_inputs(traces, obs)
    assert len(classes) <= 50
    assert sorted(i for c in classes for i in c.members) == list(range(50))
    for c in classes:
        for i in c.members:
            assert traces[i] == traces[c.members[0]] and obs[i] == obs[c.members[0]]
    for c1 in classes:
        for c2 in classes:
            if c1 is not c2:
                a, b = c1.members[0], c2.members[0]
                assert (traces[a], obs[a]) != (traces[b], obs[b])


def test_group_compares_full_values():
    class Colliding:
        hash = 1

        def __init__(self, v):
            self.v = v

        def __eq__(self, other):
            return self.v == other.v

        def __hash__(self):
            return 1

    classes = group_inputs([Colliding(1), Colliding(2)], ["o", "o"])
    assert len(classes) == 2


def test_group_length_mismatch():
    with pytest.raises(ValueError):
        group_inputs(["a"], [])


# ---------------------------------------------------------------------------
# ladder


def fixed(samples):
    """Measurement callback returning constant traces per input."""
    calls = []

    def measure(i, n):
        calls.append((i, n))
        return np.full(n, samples[i], dtype=np.int64)
    return measure, calls


def test_plan_validation():
    assert SamplingPlan().schedule == DEFAULT_SCHEDULE
    for bad in [(), (15, 15), (40, 15), (0, 5)]:
        with pytest.raises(ValueError):
            SamplingPlan(bad)


def test_identical_no_reports_cost():
    measure, calls = fixed({0: 5, 1: 5, 2: 5})
    stats = LadderStats()
    reps = check_isolation([EquivalenceClass((0, 1, 2), 0, "o")], measure, stats=stats)
    assert reps == [] and stats.measurements == 3 * 15 and stats.pairs_checked == 3
    assert stats.exonerated_at[0] == 3


def test_persistent_difference_full_ladder():
    measure, calls = fixed({0: 1, 1: 2})
    stats = LadderStats()
    (rep,) = check_isolation([EquivalenceClass((0, 1), 0, "o")], measure, stats=stats)
    assert [s.n for s in rep.stages] == list(DEFAULT_SCHEDULE)
    assert all(s.chi2 == s.n for s in rep.stages)
    assert stats.measurements == 2 * sum(DEFAULT_SCHEDULE)
    assert (rep.input_a, rep.input_b) == (0, 1)


def test_exonerated_later_stage():
    rng = np.random.default_rng(1)

    def measure(i, n):
        if n == 15:  # first look differs, later ones agree
            return np.full(n, i)
        return rng.integers(0, 2, n)

    stats = LadderStats()
    reps = check_isolation([EquivalenceClass((0, 1), 0, "o")], measure, stats=stats)
    assert reps == [] and stats.exonerated_at[1] == 1
    assert stats.measurements == 2 * (15 + 40)


def test_cost_bound_per_pair():
    rng = np.random.default_rng(2)

    def measure(i, n):
        return rng.integers(0, 3, n)

    for th in (0.5, 2.0, 8.0, 50.0):
        stats = LadderStats()
        check_isolation([EquivalenceClass((0, 1), 0, "o")], measure, threshold=th, stats=stats)
        assert 2 * 15 <= stats.measurements <= 2 * sum(DEFAULT_SCHEDULE)


def test_samples_shared_between_pairs():
    measure, calls = fixed({0: 1, 1: 2, 2: 3})
    check_isolation([EquivalenceClass((0, 1, 2), 0, "o")], measure)
    assert sorted(calls) == sorted((i, n) for n in DEFAULT_SCHEDULE for i in range(3))


def test_verdict_matches_evidence():
    rng = np.random.default_rng(3)
    for trial in range(30):
        bias = rng.uniform(0, 0.3)

        def measure(i, n, bias=bias):
            return (rng.random(n) < (0.5 + bias * i)).astype(np.int64)

        for rep in check_isolation([EquivalenceClass((0, 1), 0, "o")], measure, threshold=4.0):
            last = rep.stages[-1]
            assert not distributions_equal(last.hist_a, last.hist_b, 4.0)
            assert all(s.chi2 >= 4.0 for s in rep.stages)


def test_measure_failure_drops_class():
    def measure(i, n):
        if i == 1:
            raise RuntimeError("boom")
        return np.full(n, i)

    stats = LadderStats()
    classes = [EquivalenceClass((0, 1), 0, "o"), EquivalenceClass((2, 3), 1, "o")]
    reps = check_isolation(classes, measure, stats=stats)
    assert [r.class_index for r in reps] == [1]
    assert len(stats.diagnostics) == 1 and "boom" in stats.diagnostics[0]


def test_report_dict():
    measure, _ = fixed({0: 1, 1: -1})
    (rep,) = check_isolation([EquivalenceClass((0, 1), 0, "o")], measure, SamplingPlan((3, 5)), 2.0)
    d = rep.to_dict()
    assert d["inputs"] == [0, 1] and d["verdict"] == "violation"
    assert d["stages"][0] == {"n": 3, "chi2": 3.0, "hist_a": {"0000000000000001": 3},
                              "hist_b": {"ffffffffffffffff": 3}}
