import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrstream.phy import (CapacityError, SchedulerInstance, brute_force_schedule, compositions,
                          global_objective, initial_allocation, per_user_cost,
                          proportional_fair_order, proportional_fair_schedule, random_allocation,
                          schedule, violations)

MBPS = 1e6
WORKED = SchedulerInstance((10 * MBPS, 9 * MBPS, 10 * MBPS), (2 * MBPS,) * 3, 7, 10)


def inst(users=3, slots=7, tb=10, lam=0.0, rates=None, afer=None):
    rates = rates or tuple(10 * MBPS for _ in range(users))
    afer = afer or tuple(2 * MBPS for _ in range(users))
    return SchedulerInstance(rates, afer, slots, tb, lam)


def test_initial_allocation_examples():
    assert initial_allocation(inst(3, 7)) == [2, 2, 3]
    assert initial_allocation(inst(3, 6)) == [2, 2, 2]
    assert initial_allocation(inst(3, 0)) == [0, 0, 0]


def test_instance_validation():
    with pytest.raises(ValueError):
        SchedulerInstance((), (), 1, 1)
    with pytest.raises(ValueError):
        SchedulerInstance((0.0,), (1.0,), 1, 1)
    with pytest.raises(ValueError):
        SchedulerInstance((1.0,), (1.0,), 3, 2)
    with pytest.raises(ValueError):
        SchedulerInstance((1.0,), (1.0,), 1, 1, lam=1.0)


def test_per_user_cost_examples():
    i = SchedulerInstance((10 * MBPS,), (2.2 * MBPS,), 2, 10)
    assert per_user_cost(i, [2], 0) == pytest.approx(0.2e6)
    assert per_user_cost(inst(), [3, 2, 2], 0) == 0.0
    j = SchedulerInstance((10 * MBPS,), (0.0,), 3, 10, lam=0.01)
    assert per_user_cost(j, [3], 0) == pytest.approx(-0.03 * math.log(1e7))


def test_global_objective_examples():
    assert global_objective(WORKED, [2, 3, 2]) == 0.0
    assert global_objective(WORKED, [4, 2, 1]) == pytest.approx(max(violations(WORKED, [4, 2, 1])))
    lam = SchedulerInstance(WORKED.rates, WORKED.afer, 7, 10, lam=0.5)
    # unscheduled users drop out of the log sum
    expected = -0.5 * (7 * math.log(10e6)) + 0.5 * 2e6
    assert global_objective(lam, [7, 0, 0]) == pytest.approx(expected)


def test_worked_instance_trace():
    res = schedule(WORKED, initial=[4, 2, 1])
    assert res.max_violation == 0.0 and res.converged
    assert [s["allocation"] for s in res.trace] == [[4, 2, 1], [3, 2, 2], [2, 3, 2]]
    assert [s["objective"] for s in res.trace] == pytest.approx([1e6, 2e5, 0.0])
    assert brute_force_schedule(WORKED).objective == 0.0


def test_single_user_and_zero_targets():
    one = SchedulerInstance((5 * MBPS,), (50 * MBPS,), 6, 10)
    res = schedule(one)
    assert res.allocation == [6] and res.iterations == 0
    zero = inst(afer=(0.0, 0.0, 0.0))
    assert schedule(zero).allocation == initial_allocation(zero)


def test_brute_force_examples():
    sym = SchedulerInstance((1.0, 1.0), (10.0, 10.0), 2, 2)
    res = brute_force_schedule(sym)
    assert res.allocation == [1, 1] and res.max_violation == pytest.approx(9.5)
    empty = inst(slots=0)
    assert brute_force_schedule(empty).allocation == [0, 0, 0]


def test_brute_force_capacity_guard():
    big = SchedulerInstance(tuple([1.0] * 8), tuple([1.0] * 8), 60, 60)
    with pytest.raises(CapacityError):
        brute_force_schedule(big)


def test_compositions_count_and_sum():
    for total, parts in [(0, 1), (5, 1), (7, 3), (4, 4)]:
        comps = list(compositions(total, parts))
        assert len(comps) == math.comb(total + parts - 1, parts - 1)
        assert len(set(comps)) == len(comps)
        assert all(sum(c) == total and min(c) >= 0 for c in comps)
    # independent enumeration of the same set
    direct = {c for c in product(range(8), repeat=3) if sum(c) == 7}
    assert set(compositions(7, 3)) == direct


instances = st.builds(
    lambda u, t, seed: _random(u, t, seed),
    st.integers(2, 4), st.integers(0, 12), st.integers(0, 2**32 - 1))


def _random(users, slots, seed, lam=0.0):
    rng = np.random.default_rng(seed)
    return SchedulerInstance(tuple(rng.uniform(1, 20, users) * MBPS),
                             tuple(rng.uniform(0.5, 5, users) * MBPS), slots, slots + 2, lam)


@settings(max_examples=150, deadline=None)
@given(instances)
def test_optimal_and_monotone_at_zero_lambda(i):
    res = schedule(i)
    assert res.max_violation == brute_force_schedule(i).max_violation
    objs = [s["objective"] for s in res.trace]
    assert all(b <= a for a, b in zip(objs, objs[1:]))
    assert res.iterations <= i.slots
    for s in res.trace:
        assert sum(s["allocation"]) == i.slots and min(s["allocation"]) >= 0


@settings(max_examples=60, deadline=None)
@given(instances, st.integers(0, 1000))
def test_optimal_from_random_start(i, seed):
    start = random_allocation(i, np.random.default_rng(seed))
    assert sum(start) == i.slots
    res = schedule(i, initial=start)
    assert res.max_violation == brute_force_schedule(i).max_violation


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(0.001, 0.5))
def test_positive_lambda_respects_cap(users, slots, seed, lam):
    i = _random(users, slots, seed, lam)
    res = schedule(i)
    assert res.iterations <= i.iteration_cap
    assert sum(res.allocation) == slots


def test_cost_evaluations_linear_in_users():
    for users in (2, 5, 9):
        res = schedule(_random(users, 30, users))
        assert max(res.cost_evaluations) <= users


def test_initial_allocation_validation():
    with pytest.raises(ValueError):
        schedule(WORKED, initial=[1, 1, 1])


def pf_by_hand(rates, slots, window):
    """Step-through of argmax r/A with exponential smoothing, written independently."""
    avg = np.zeros(len(rates))
    counts = np.zeros(len(rates), dtype=int)
    for _ in range(slots):
        metric = np.array([np.inf if a == 0 else r / a for r, a in zip(rates, avg)])
        u = int(np.flatnonzero(metric == metric.max())[0])
        counts[u] += 1
        served = np.zeros(len(rates))
        served[u] = rates[u]
        avg = (1 - 1 / window) * avg + served / window
    return counts.tolist()


def test_proportional_fair_examples():
    equal = proportional_fair_schedule([5.0, 5.0], 11)
    assert abs(equal[0] - equal[1]) <= 1
    assert proportional_fair_schedule([3.0], 9) == [9]
    assert proportional_fair_schedule([2.0, 1.0], 12, 100) == pf_by_hand([2.0, 1.0], 12, 100)
    # unserved users first, then 2/0.0198 beats 1/0.01
    assert proportional_fair_order([2.0, 1.0], 3) == [0, 1, 0]


@given(st.lists(st.floats(0.5, 30), min_size=1, max_size=5), st.integers(0, 40), st.integers(2, 200))
def test_proportional_fair_matches_hand_simulation(rates, slots, window):
    assert proportional_fair_schedule(rates, slots, window) == pf_by_hand(rates, slots, window)


def test_result_json():
    doc = schedule(WORKED).to_json()
    assert set(doc) == {"allocation", "max_violation_bps", "objective", "iterations", "converged", "trace"}
    assert doc["max_violation_bps"] == 0.0
