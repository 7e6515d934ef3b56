"""Compiled inner loops for large simulations.

Every function here mirrors the pure-Python semantics in `sampling` and
`protocols` word-for-word on the randomness stream: one xoshiro256** output
per coin flip (low bit) and per bounded-integer rejection draw.  A seeded
pure-Python run and a kernel run started from the same state therefore produce
byte-identical populations; `tests/test_kernels.py` holds that equivalence.

Kernels are nogil so independent runs can share a process, and cached so the
JIT cost is paid once per machine.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U0 = np.uint64(0)
U1 = np.uint64(1)
U5 = np.uint64(5)
U7 = np.uint64(7)
U9 = np.uint64(9)
U17 = np.uint64(17)
U45 = np.uint64(45)
U64 = np.uint64(64)

RULE_EPIDEMIC = 0
RULE_CHVP = 1
RULE_CLVP = 2


@njit(cache=True, inline="always")
def _rotl64(x, k):
    return (x << k) | (x >> (U64 - k))


@njit(cache=True, inline="always")
def _next_u64(s):
    s0 = s[0]
    s1 = s[1]
    s2 = s[2]
    s3 = s[3]
    result = _rotl64(s1 * U5, U7) * U9
    t = s1 << U17
    s2 = s2 ^ s0
    s3 = s3 ^ s1
    s1 = s1 ^ s2
    s0 = s0 ^ s3
    s2 = s2 ^ t
    s3 = _rotl64(s3, U45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    return result


@njit(cache=True, inline="always")
def _randbelow(s, m):
    # (0 - m) wraps to 2**64 - m, so threshold == 2**64 mod m: exact uniformity.
    threshold = (U0 - m) % m
    while True:
        x = _next_u64(s)
        if x >= threshold:
            return x % m


@njit(cache=True, inline="always")
def _geom(s):
    g = 1
    while (_next_u64(s) & U1) == U1:
        g += 1
    return g


@njit(cache=True, inline="always")
def _grv_max(s, k):
    best = 1
    for _ in range(k):
        g = _geom(s)
        if g > best:
            best = g
    return best


@njit(cache=True)
def rng_next_u64(s):
    """Python-callable wrapper (kernel-state variant of SeededStream.next_u64)."""
    return _next_u64(s)


@njit(cache=True)
def rng_randbelow(s, m):
    return _randbelow(s, np.uint64(m))


@njit(cache=True)
def geometric_fill(s, out):
    for i in range(out.shape[0]):
        out[i] = _geom(s)


@njit(cache=True)
def grv_max_of(s, count):
    """Maximum of `count` geometric draws from one stream."""
    return _grv_max(s, count)


@njit(cache=True, nogil=True)
def dsc_grain(
    maxv,
    lastmax,
    timev,
    inter,
    ids,
    rng,
    n_steps,
    base_units,
    tau1,
    tau2,
    tau3,
    taup,
    k,
    f,
    log_ids,
    log_times,
    want_log,
):
    """Run n_steps interactions of the full protocol; returns (resets, logged)."""
    n = maxv.shape[0]
    un = np.uint64(n)
    un1 = np.uint64(n - 1)
    resets = 0
    nlog = 0
    for j in range(n_steps):
        u = np.int64(_randbelow(rng, un))
        vr = np.int64(_randbelow(rng, un1))
        v = vr + 1 if vr >= u else vr

        mu = maxv[u]
        lu = lastmax[u]
        tu = timev[u]
        iu = inter[u]
        mv = maxv[v]
        lv = lastmax[v]
        tv = timev[v]

        ev = mv if mv >= lv else lv
        v_exchange = tv >= tau2 * ev
        v_reset = tv < tau3 * ev
        eu = mu if mu >= lu else lu
        u_exchange = tu >= tau2 * eu
        u_reset = tu < tau3 * eu

        did_reset = False
        if tu <= 0 or (u_reset and v_exchange) or ((not u_exchange) and mu != mv):
            g = f * _grv_max(rng, k)
            tu = tau1 * (mu if mu >= g else g)
            iu = 0
            lu = mu
            mu = g
            did_reset = True

        if iu > taup * (mu if mu >= lu else lu):
            iu = 0
            g = _grv_max(rng, k)
            if g > mu:
                mu = f * g
                tu = tau1 * mu
                did_reset = True

        eu = mu if mu >= lu else lu
        if tu >= tau2 * eu and v_exchange and mu < mv:
            tu = tau1 * mv
            mu = mv
            lu = lv

        if mu == mv:
            eu = mu if mu >= lu else lu
            if not (tu >= tau2 * eu and v_reset):
                if lv > lu:
                    lu = lv

        tu = (tu if tu >= tv else tv) - 1
        iu += 1

        maxv[u] = mu
        lastmax[u] = lu
        timev[u] = tu
        inter[u] = iu

        if did_reset:
            resets += 1
            if want_log:
                log_ids[nlog] = ids[u]
                log_times[nlog] = base_units + (j + 1) / n
                nlog += 1
    return resets, nlog


@njit(cache=True, nogil=True)
def simplified_grain(
    maxv,
    lastmax,
    timev,
    inter,
    ids,
    rng,
    n_steps,
    base_units,
    tau1,
    tau2,
    tau3,
    log_ids,
    log_times,
    want_log,
):
    """Run n_steps interactions of the simplified protocol; lastMax mirrors max."""
    n = maxv.shape[0]
    un = np.uint64(n)
    un1 = np.uint64(n - 1)
    resets = 0
    nlog = 0
    for j in range(n_steps):
        u = np.int64(_randbelow(rng, un))
        vr = np.int64(_randbelow(rng, un1))
        v = vr + 1 if vr >= u else vr

        mu = maxv[u]
        tu = timev[u]
        mv = maxv[v]
        tv = timev[v]

        v_exchange = tv >= tau2 * mv
        u_exchange = tu >= tau2 * mu
        u_reset = tu < tau3 * mu

        did_reset = False
        if tu <= 0 or (u_reset and v_exchange) or ((not u_exchange) and mu != mv):
            g = _geom(rng)
            tu = tau1 * (mu if mu >= g else g)
            mu = g
            did_reset = True

        if tu >= tau2 * mu and v_exchange and mu < mv:
            tu = tau1 * mv
            mu = mv

        tu = (tu if tu >= tv else tv) - 1

        maxv[u] = mu
        lastmax[u] = mu
        timev[u] = tu

        if did_reset:
            resets += 1
            if want_log:
                log_ids[nlog] = ids[u]
                log_times[nlog] = base_units + (j + 1) / n
                nlog += 1
    return resets, nlog


@njit(cache=True, nogil=True)
def value_grain(values, rng, n_steps, rule):
    """Run n_steps interactions of a one-sided value primitive."""
    n = values.shape[0]
    un = np.uint64(n)
    un1 = np.uint64(n - 1)
    for _ in range(n_steps):
        u = np.int64(_randbelow(rng, un))
        vr = np.int64(_randbelow(rng, un1))
        v = vr + 1 if vr >= u else vr
        a = values[u]
        b = values[v]
        if rule == RULE_EPIDEMIC:
            values[u] = a if a >= b else b
        elif rule == RULE_CHVP:
            values[u] = (a if a >= b else b) - 1
        else:
            values[u] = (a if a <= b else b) + 1


@njit(cache=True, nogil=True)
def epidemic_until_informed(values, rng, budget):
    """Interactions until every agent holds the initial maximum, or -1 if over budget."""
    n = values.shape[0]
    un = np.uint64(n)
    un1 = np.uint64(n - 1)
    target = values[0]
    for i in range(n):
        if values[i] > target:
            target = values[i]
    informed = 0
    for i in range(n):
        if values[i] == target:
            informed += 1
    if informed == n:
        return 0
    for j in range(budget):
        u = np.int64(_randbelow(rng, un))
        vr = np.int64(_randbelow(rng, un1))
        v = vr + 1 if vr >= u else vr
        a = values[u]
        b = values[v]
        newv = a if a >= b else b
        values[u] = newv
        if newv == target and a != target:
            informed += 1
            if informed == n:
                return j + 1
    return -1


@njit(cache=True, nogil=True)
def participation_counts(rng, n, n_steps, counts):
    """Tally how often each agent is drawn as the initiator."""
    un = np.uint64(n)
    un1 = np.uint64(n - 1)
    for _ in range(n_steps):
        u = np.int64(_randbelow(rng, un))
        vr = np.int64(_randbelow(rng, un1))
        counts[u] += 1
