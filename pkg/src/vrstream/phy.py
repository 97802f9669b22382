"""Time-slot scheduling inside one beam-coherence block.

``schedule`` is the slot-swap descent that minimises the worst AFER violation
(plus an optional log-rate fairness term weighted by ``lam``).
``brute_force_schedule`` enumerates every composition of the slot budget and
serves as the optimality oracle; ``proportional_fair_schedule`` is the
comparison baseline.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

MAX_ENUMERATION = 10**6


class CapacityError(RuntimeError):
    """Raised when exhaustive enumeration would be too large."""


@dataclass(frozen=True)
class SchedulerInstance:
    rates: tuple[float, ...]
    afer: tuple[float, ...]
    slots: int
    coherence_slots: int
    lam: float = 0.0
    max_iters: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "afer", tuple(float(r) for r in self.afer))
        if len(self.rates) != len(self.afer):
            raise ValueError("rates and afer must have one entry per user")
        if not self.rates:
            raise ValueError("need at least one user")
        if any(r <= 0 for r in self.rates):
            raise ValueError("per-slot rates must be positive")
        if any(a < 0 for a in self.afer):
            raise ValueError("AFER targets must be non-negative")
        if not 0 <= self.slots <= self.coherence_slots:
            raise ValueError("need 0 <= T <= T_B")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must lie in [0, 1)")

    @property
    def users(self) -> int:
        return len(self.rates)

    @property
    def iteration_cap(self) -> int:
        return self.max_iters if self.max_iters is not None else self.users * self.slots


@dataclass
class ScheduleResult:
    allocation: list[int]
    objective: float
    max_violation: float
    iterations: int
    converged: bool
    trace: list[dict] = field(default_factory=list)
    cost_evaluations: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "allocation": list(self.allocation),
            "max_violation_bps": self.max_violation,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": self.trace,
        }


def violation(inst: SchedulerInstance, slots: int, u: int) -> float:
    served = slots / inst.coherence_slots * inst.rates[u]
    return max(inst.afer[u] - served, 0.0)


def violations(inst: SchedulerInstance, alloc) -> list[float]:
    return [violation(inst, t, u) for u, t in enumerate(alloc)]


def per_user_cost(inst: SchedulerInstance, alloc, u: int) -> float:
    return _cost(inst, alloc[u], u)


def _cost(inst, slots, u):
    w = violation(inst, slots, u)
    if inst.lam == 0.0:
        return w
    return -inst.lam * slots * math.log(inst.rates[u]) + (1.0 - inst.lam) * w


def global_objective(inst: SchedulerInstance, alloc) -> float:
    """Weighted log-rate reward (negated) plus the worst violation.

    Unscheduled users add nothing to the log term.
    """
    worst = max(violations(inst, alloc))
    if inst.lam == 0.0:
        return worst
    log_term = sum(t * math.log(r) for t, r in zip(alloc, inst.rates) if t > 0)
    return -inst.lam * log_term + (1.0 - inst.lam) * worst


def initial_allocation(inst: SchedulerInstance) -> list[int]:
    """Floor split of the slot budget with the remainder going to the last user."""
    users = inst.users
    if users == 0:
        raise ValueError("need at least one user")
    share = inst.slots // users
    alloc = [share] * users
    alloc[-1] = inst.slots - (users - 1) * share
    return alloc


def random_allocation(inst: SchedulerInstance, rng: np.random.Generator) -> list[int]:
    picks = rng.integers(0, inst.users, size=inst.slots)
    return np.bincount(picks, minlength=inst.users).astype(int).tolist()


def schedule(inst: SchedulerInstance, initial=None, record_trace: bool = True) -> ScheduleResult:
    """Move single slots from a cheaper user to the costliest one until no move helps.

    Each iteration picks ``u1 = argmax cost`` and, among the users that can
    spare a slot and would stay strictly below ``u1``'s current cost after losing
    it, the one with the smallest post-decrement cost. ``record_trace=False``
    skips the per-iteration objective log (the result is the same).
    """
    alloc = list(initial) if initial is not None else initial_allocation(inst)
    if len(alloc) != inst.users or sum(alloc) != inst.slots or min(alloc) < 0:
        raise ValueError(f"initial allocation {alloc} is not a composition of {inst.slots}")

    costs = [_cost(inst, t, u) for u, t in enumerate(alloc)]
    trace = [{"iteration": 0, "allocation": list(alloc),
              "objective": global_objective(inst, alloc)}]
    evals = []
    k = 0
    converged = False
    cap = inst.iteration_cap
    while True:
        if k >= cap:
            break
        n_eval = 0
        u1 = max(range(inst.users), key=lambda u: (costs[u], -u))
        best_u2, best_cost = None, None
        for u2 in range(inst.users):
            if u2 == u1 or alloc[u2] < 1:
                continue
            c2 = _cost(inst, alloc[u2] - 1, u2)
            n_eval += 1
            if c2 < costs[u1] and (best_cost is None or c2 < best_cost):
                best_u2, best_cost = u2, c2
        if best_u2 is None:
            evals.append(n_eval)
            converged = True
            break
        alloc[best_u2] -= 1
        alloc[u1] += 1
        costs[best_u2] = best_cost
        costs[u1] = _cost(inst, alloc[u1], u1)
        n_eval += 1
        evals.append(n_eval)
        k += 1
        if record_trace:
            trace.append({"iteration": k, "allocation": list(alloc),
                          "objective": global_objective(inst, alloc),
                          "from_user": best_u2, "to_user": u1})

    return ScheduleResult(
        allocation=alloc,
        objective=global_objective(inst, alloc),
        max_violation=max(violations(inst, alloc)),
        iterations=k,
        converged=converged,
        trace=trace,
        cost_evaluations=evals,
    )


def compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total`` (stars and bars)."""
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def brute_force_schedule(inst: SchedulerInstance) -> ScheduleResult:
    count = math.comb(inst.slots + inst.users - 1, inst.users - 1)
    if count > MAX_ENUMERATION:
        raise CapacityError(f"{count} compositions exceed the {MAX_ENUMERATION} limit")
    best, best_obj = None, math.inf
    for alloc in compositions(inst.slots, inst.users):
        obj = global_objective(inst, alloc)
        if obj < best_obj:
            best, best_obj = alloc, obj
    best = list(best)
    return ScheduleResult(best, best_obj, max(violations(inst, best)), 0, True)


def proportional_fair_order(rates, slots: int, window: int = 100) -> list[int]:
    """User served in each slot under the PF rule ``argmax r_u / A_u``.

    ``A_u`` is the served rate smoothed with weight ``1/window``, starting at 0; a
    user never served yet has an infinite metric. Ties go to the lowest index.
    """
    rates = [float(r) for r in rates]
    if any(r <= 0 for r in rates):
        raise ValueError("PF needs positive rates")
    b = 1.0 / window
    a = 1.0 - b
    avg = [0.0] * len(rates)
    order = []
    for _ in range(slots):
        best, best_metric = 0, -1.0
        for u, r in enumerate(rates):
            metric = math.inf if avg[u] == 0.0 else r / avg[u]
            if metric > best_metric:
                best, best_metric = u, metric
        order.append(best)
        for u, r in enumerate(rates):
            avg[u] = a * avg[u] + (b * r if u == best else 0.0)
    return order


def proportional_fair_schedule(rates, slots: int, window: int = 100) -> list[int]:
    order = proportional_fair_order(rates, slots, window)
    counts = [0] * len(rates)
    for u in order:
        counts[u] += 1
    return counts
