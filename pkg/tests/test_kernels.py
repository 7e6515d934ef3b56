"""Compiled kernels agree bit-for-bit with the pure-Python reference path."""

import numpy as np
import pytest

from popsim import _kernels
from popsim.engine import Population, step
from popsim.protocols import ProtocolParams, dsc_update, simplified_update
from popsim.sampling import SeededStream, geometric_sample


def test_kernel_u64_stream_matches_pure():
    state = SeededStream(42).export_state()
    pure = SeededStream(42)
    assert [int(_kernels.rng_next_u64(state)) for _ in range(2000)] == [
        pure.next_u64() for _ in range(2000)
    ]


@pytest.mark.parametrize("bound", [1, 2, 3, 7, 100, 2**33])
def test_kernel_randbelow_matches_pure(bound):
    state = SeededStream(9).export_state()
    pure = SeededStream(9)
    assert [int(_kernels.rng_randbelow(state, bound)) for _ in range(300)] == [
        pure.randbelow(bound) for _ in range(300)
    ]


def test_kernel_geometric_matches_pure():
    state = SeededStream(5).export_state()
    out = np.empty(3000, dtype=np.int64)
    _kernels.geometric_fill(state, out)
    pure = SeededStream(5)
    assert out.tolist() == [geometric_sample(pure) for _ in range(3000)]


def _run_kernel(protocol, params, n, grains, seed):
    pop = Population.initial(n, params)
    rng = SeededStream(seed).export_state()
    buf_i = np.empty(n, dtype=np.int64)
    buf_t = np.empty(n, dtype=np.float64)
    for unit in range(grains):
        if protocol == "dsc":
            _kernels.dsc_grain(
                pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids, rng,
                n, float(unit),
                params.tau1, params.tau2, params.tau3, params.tau_prime,
                params.k, params.overestimation_factor,
                buf_i, buf_t, False,
            )
        else:
            _kernels.simplified_grain(
                pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids, rng,
                n, float(unit),
                params.tau1, params.tau2, params.tau3,
                buf_i, buf_t, False,
            )
    return pop


def _run_pure(update, params, n, grains, seed):
    pop = Population.initial(n, params)
    stream = SeededStream(seed)
    fn = lambda a, b: update(a, b, params, stream)  # noqa: E731
    for _ in range(n * grains):
        step(pop, fn, stream)
    return pop


@pytest.mark.parametrize("protocol,update", [("dsc", dsc_update), ("simplified", simplified_update)])
@pytest.mark.parametrize("params", [ProtocolParams.empirical(), ProtocolParams.theory(2)])
def test_grain_kernels_match_pure_reference(protocol, update, params):
    n, grains, seed = 40, 400, 20240517
    kern = _run_kernel(protocol, params, n, grains, seed)
    pure = _run_pure(update, params, n, grains, seed)
    np.testing.assert_array_equal(kern.maxv, pure.maxv)
    np.testing.assert_array_equal(kern.lastmax, pure.lastmax)
    np.testing.assert_array_equal(kern.timev, pure.timev)
    np.testing.assert_array_equal(kern.inter, pure.inter)


def test_dsc_grain_reset_count_matches_pure_events():
    from popsim.protocols import RESET_EVENTS

    n, grains, seed = 30, 200, 77
    params = ProtocolParams.empirical()
    pop = Population.initial(n, params)
    rng = SeededStream(seed).export_state()
    buf_i = np.empty(n, dtype=np.int64)
    buf_t = np.empty(n, dtype=np.float64)
    kernel_resets = 0
    for unit in range(grains):
        r, nlog = _kernels.dsc_grain(
            pop.maxv, pop.lastmax, pop.timev, pop.inter, pop.ids, rng,
            n, float(unit),
            params.tau1, params.tau2, params.tau3, params.tau_prime,
            params.k, params.overestimation_factor,
            buf_i, buf_t, True,
        )
        assert r == nlog
        kernel_resets += r

    pop2 = Population.initial(n, params)
    stream = SeededStream(seed)
    fn = lambda a, b: dsc_update(a, b, params, stream)  # noqa: E731
    pure_resets = sum(
        bool(step(pop2, fn, stream).events & RESET_EVENTS) for _ in range(n * grains)
    )
    assert kernel_resets == pure_resets


def test_value_grain_rules():
    state = SeededStream(3).export_state()
    values = np.array([0, 1, 0, 0, 0], dtype=np.int64)
    _kernels.value_grain(values, state, 500, _kernels.RULE_EPIDEMIC)
    assert values.max() == 1 and values.min() == 1  # epidemic saturates

    state = SeededStream(3).export_state()
    values = np.full(6, 10, dtype=np.int64)
    _kernels.value_grain(values, state, 100, _kernels.RULE_CHVP)
    assert values.max() <= 10

    state = SeededStream(3).export_state()
    values = np.zeros(6, dtype=np.int64)
    _kernels.value_grain(values, state, 100, _kernels.RULE_CLVP)
    assert values.min() >= 0


def test_epidemic_until_informed_counts_interactions():
    state = SeededStream(1).export_state()
    values = np.zeros(64, dtype=np.int64)
    values[0] = 1
    took = int(_kernels.epidemic_until_informed(values, state, 10**6))
    assert took > 0
    assert np.all(values == 1)
    # already uniform populations finish instantly
    state = SeededStream(1).export_state()
    values = np.ones(64, dtype=np.int64)
    assert int(_kernels.epidemic_until_informed(values, state, 100)) == 0


def test_epidemic_until_informed_budget_exhaustion():
    state = SeededStream(1).export_state()
    values = np.zeros(256, dtype=np.int64)
    values[0] = 1
    assert int(_kernels.epidemic_until_informed(values, state, 10)) == -1


def test_participation_counts_total():
    state = SeededStream(4).export_state()
    counts = np.zeros(20, dtype=np.int64)
    _kernels.participation_counts(state, 20, 5000, counts)
    assert counts.sum() == 5000
    assert counts.min() > 0
