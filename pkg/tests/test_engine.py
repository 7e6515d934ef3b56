"""Scheduler, parallel-time accounting, adversary events, and run records."""

from fractions import Fraction

import numpy as np
import pytest

from popsim.engine import (
    AdversaryEvent,
    ConfigError,
    ExperimentConfig,
    Population,
    PopulationTooSmall,
    RemovalPolicy,
    ValuePopulation,
    apply_adversary_event,
    run,
    run_batch,
    step,
)
from popsim.protocols import AgentState, ProtocolParams, dsc_update, epidemic_step
from popsim.sampling import SeededStream

EMP = ProtocolParams.empirical()


def test_population_requires_two_agents():
    with pytest.raises(PopulationTooSmall):
        Population([AgentState(1, 1, 6, 0)])


def test_step_pair_uniformity_n2():
    pop = ValuePopulation([0, 0])
    stream = SeededStream(11)
    first = 0
    trials = 10**5
    for _ in range(trials):
        rec = step(pop, epidemic_step, stream)
        first += rec.u == 0
    assert abs(first / trials - 0.5) < 0.01


def test_step_never_draws_self_pair():
    pop = ValuePopulation([0, 0, 0, 0, 0])
    stream = SeededStream(2)
    for _ in range(2000):
        rec = step(pop, epidemic_step, stream)
        assert rec.u != rec.v


def test_parallel_clock_is_exact():
    pop = ValuePopulation([0] * 7)
    stream = SeededStream(0)
    for i in range(1, 100):
        step(pop, epidemic_step, stream)
        assert pop.exact_clock() == Fraction(i, 7)
    assert pop.interaction_count == 99


def test_parallel_clock_exact_across_size_changes():
    # fractions accumulated before a removal keep their old denominator
    pop, stream = _converged_population(n=10)
    base = pop.exact_clock()
    fn = lambda a, b: dsc_update(a, b, EMP, stream)  # noqa: E731
    for _ in range(3):
        step(pop, fn, stream)
    apply_adversary_event(
        pop, AdversaryEvent(0, "remove", 5, RemovalPolicy.UNIFORM_RANDOM), EMP, stream
    )
    assert pop.exact_clock() == base + Fraction(3, 10)
    step(pop, fn, stream)
    assert pop.exact_clock() == base + Fraction(3, 10) + Fraction(1, 5)


def test_step_determinism():
    def final_state(seed):
        pop = Population.initial(30, EMP)
        stream = SeededStream(seed)
        fn = lambda a, b: dsc_update(a, b, EMP, stream)  # noqa: E731
        for _ in range(3000):
            step(pop, fn, stream)
        return pop.maxv.tolist(), pop.timev.tolist()

    assert final_state(123) == final_state(123)
    assert final_state(123) != final_state(124)


def test_population_time_bound_debug_sweep():
    # over a default-initialized run, no countdown exceeds tau1 * global estimate
    pop = Population.initial(50, EMP)
    stream = SeededStream(6)
    fn = lambda a, b: dsc_update(a, b, EMP, stream)  # noqa: E731
    for _ in range(20000):
        step(pop, fn, stream)
        m_global = int(pop.effective_max().max())
        assert np.all(pop.timev <= EMP.tau1 * m_global)


# ---------------------------------------------------------------------------
# adversary events


def _converged_population(n=50, seed=9):
    pop = Population.initial(n, EMP)
    stream = SeededStream(seed)
    fn = lambda a, b: dsc_update(a, b, EMP, stream)  # noqa: E731
    for _ in range(50 * n):
        step(pop, fn, stream)
    return pop, stream


def test_add_agents_use_initial_state():
    pop, stream = _converged_population()
    apply_adversary_event(pop, AdversaryEvent(0, "add", 5), EMP, stream)
    assert pop.n == 55
    assert pop.maxv[-5:].tolist() == [1] * 5
    assert pop.timev[-5:].tolist() == [EMP.tau1] * 5
    assert len(set(pop.ids.tolist())) == 55


def test_add_zero_agents_is_noop():
    pop, stream = _converged_population()
    before = pop.maxv.copy()
    apply_adversary_event(pop, AdversaryEvent(0, "add", 0), EMP, stream)
    assert pop.n == 50
    np.testing.assert_array_equal(pop.maxv, before)


def test_uniform_removal():
    pop, stream = _converged_population()
    apply_adversary_event(
        pop, AdversaryEvent(0, "remove", 45, RemovalPolicy.UNIFORM_RANDOM), EMP, stream
    )
    assert pop.n == 5


def test_removal_below_two_agents_errors():
    pop, stream = _converged_population()
    with pytest.raises(PopulationTooSmall):
        apply_adversary_event(
            pop,
            AdversaryEvent(0, "remove", 49, RemovalPolicy.UNIFORM_RANDOM),
            EMP,
            stream,
        )


def test_targeted_removal_policies():
    pop, stream = _converged_population()
    est = np.maximum(pop.maxv, pop.lastmax)
    top = sorted(est.tolist(), reverse=True)
    apply_adversary_event(
        pop,
        AdversaryEvent(0, "remove", 10, RemovalPolicy.LARGEST_ESTIMATE_FIRST),
        EMP,
        stream,
    )
    survivors = np.maximum(pop.maxv, pop.lastmax)
    assert survivors.max() <= max(top[10:])

    pop2, stream2 = _converged_population(seed=10)
    low = sorted(np.maximum(pop2.maxv, pop2.lastmax).tolist())
    apply_adversary_event(
        pop2,
        AdversaryEvent(0, "remove", 10, RemovalPolicy.SMALLEST_ESTIMATE_FIRST),
        EMP,
        stream2,
    )
    assert np.maximum(pop2.maxv, pop2.lastmax).min() >= min(low[10:])


def test_stable_ids_survive_removal():
    pop, stream = _converged_population()
    removed_before = set(pop.ids.tolist())
    apply_adversary_event(
        pop, AdversaryEvent(0, "remove", 20, RemovalPolicy.UNIFORM_RANDOM), EMP, stream
    )
    assert set(pop.ids.tolist()) < removed_before
    assert len(set(pop.ids.tolist())) == 30


# ---------------------------------------------------------------------------
# full runs


def test_run_snapshot_cadence():
    cfg = ExperimentConfig(n0=100, duration=10.0, runs=1, master_seed=1)
    rec = run(cfg)
    times = [s.parallel_time for s in rec.snapshots]
    assert times == [float(t) for t in range(11)]  # t=0 plus one per unit
    for s in rec.snapshots:
        assert s.phase_exchange + s.phase_hold + s.phase_reset == s.n
        assert s.est_min <= s.est_median <= s.est_max


def test_run_snapshots_strictly_increasing_and_deterministic():
    cfg = ExperimentConfig(n0=64, duration=20.0, runs=1, master_seed=5)
    a, b = run(cfg), run(cfg)
    assert a.snapshots == b.snapshots
    assert a.seed == b.seed
    times = [s.parallel_time for s in a.snapshots]
    assert all(t2 > t1 for t1, t2 in zip(times, times[1:]))


def test_run_adversary_removal_applies_at_grain_boundary():
    ev = AdversaryEvent(5.0, "remove", 950, RemovalPolicy.UNIFORM_RANDOM)
    cfg = ExperimentConfig(
        n0=1000, duration=8.0, runs=1, master_seed=2, adversary_schedule=[ev]
    )
    rec = run(cfg)
    by_time = {s.parallel_time: s for s in rec.snapshots}
    assert by_time[5.0].n == 1000  # snapshot first, then the event fires
    assert by_time[6.0].n == 50
    assert rec.final_n == 50


def test_run_adversary_add_agents():
    ev = AdversaryEvent(3.0, "add", 25)
    cfg = ExperimentConfig(
        n0=50, duration=6.0, runs=1, master_seed=3, adversary_schedule=[ev]
    )
    rec = run(cfg)
    by_time = {s.parallel_time: s for s in rec.snapshots}
    assert by_time[3.0].n == 50
    assert by_time[4.0].n == 75


def test_run_value_protocols():
    for protocol in ("epidemic", "chvp", "clvp"):
        cfg = ExperimentConfig(
            n0=64,
            duration=30.0,
            runs=1,
            master_seed=4,
            protocol=protocol,
            initial_estimate=40 if protocol != "epidemic" else None,
        )
        rec = run(cfg)
        assert len(rec.snapshots) == 31
        last = rec.snapshots[-1]
        assert last.phase_exchange == last.n
    # epidemic saturates at the informed value
    cfg = ExperimentConfig(n0=64, duration=60.0, runs=1, master_seed=4, protocol="epidemic")
    rec = run(cfg)
    assert rec.snapshots[-1].est_min == 1.0
    assert rec.snapshots[0].est_min == 0.0


def test_epidemic_completes_within_logarithmic_budget():
    # n=1024, k=2: all informed within 4(k+1) n log2 n interactions in >=99/100 runs
    from popsim.analysis import check_epidemic_time

    check = check_epidemic_time(n=1024, k=2, runs=100, master_seed=13)
    assert check.verdict, check.summary()


def test_reset_log_collection():
    cfg = ExperimentConfig(
        n0=64, duration=200.0, runs=1, master_seed=5, collect_reset_log=True
    )
    rec = run(cfg)
    assert rec.reset_ids is not None and rec.reset_ids.size > 0
    assert np.all(np.diff(rec.reset_times) >= 0)
    assert set(rec.reset_ids.tolist()) <= set(range(64))
    total_reset_column = sum(s.resets for s in rec.snapshots)
    assert total_reset_column == rec.reset_ids.size


def test_run_batch_ordering_and_thread_determinism():
    cfg = ExperimentConfig(n0=50, duration=20.0, runs=4, master_seed=99)
    seq = run_batch(cfg, jobs=1)
    par = run_batch(cfg, jobs=3)
    assert [r.run_index for r in seq] == [0, 1, 2, 3]
    for a, b in zip(seq, par):
        assert a.seed == b.seed
        assert a.snapshots == b.snapshots


def test_config_validation_errors():
    with pytest.raises(ConfigError, match="n0"):
        ExperimentConfig(n0=1, duration=5.0).validate()
    with pytest.raises(ConfigError, match="durationParallelTime"):
        ExperimentConfig(n0=10, duration=0.0).validate()
    with pytest.raises(ConfigError, match="runs"):
        ExperimentConfig(n0=10, duration=5.0, runs=0).validate()
    with pytest.raises(ConfigError, match="protocol"):
        ExperimentConfig(n0=10, duration=5.0, protocol="nope").validate()
    with pytest.raises(ConfigError, match="adversarySchedule"):
        ExperimentConfig(
            n0=10,
            duration=5.0,
            adversary_schedule=[AdversaryEvent(1.0, "remove", 9)],
        ).validate()
    with pytest.raises(ConfigError, match="adversarySchedule"):
        ExperimentConfig(
            n0=10,
            duration=5.0,
            protocol="epidemic",
            adversary_schedule=[AdversaryEvent(1.0, "add", 1)],
        ).validate()


def test_participation_bound():
    # n=10^4, c=20, k=4: initiation counts within the two-sided interval
    from popsim.analysis import check_participation

    check = check_participation(n=10**4, c=20, k=4, runs=20, master_seed=21)
    assert check.verdict, check.summary()
